//! Stage 1: clustering-based pretraining of the tokenizers and encoder, and the
//! resulting per-table pseudo-labels.
//!
//! Every epoch encodes all tables, runs the encoder over the full graph and
//! minimizes the cross-entropy of a per-table linear head against the current
//! cluster assignments. Assignments are refreshed every `recluster_period` epochs:
//! plain k-means on the embeddings for ordinary tables, task-aware clustering on
//! the training rows of the target table.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hgnn::{forward_on_tape, HgnnParams, Linear, DEFAULT_HIDDEN};
use crate::kmeans::{kmeans, nearest};
use crate::numcore::{apply_gradients, Mat, Optimizer as _, Rng64, Sgd, Tape, Var};
use crate::rdb::{Labels, RdbInstance, Split, Task};
use crate::reg::Reg;
use crate::tokenizer::{encode_on_tape, TokenizerBank, DEFAULT_D_TOKEN};

pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub recluster_period: usize,
    pub seed: u64,
    /// Compression ratio r = N'/N.
    pub ratio: f64,
    pub d_token: usize,
    pub hidden: usize,
    /// Encoder depth; `None` means one layer per table.
    pub layers: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.1,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            recluster_period: 10,
            seed: 0,
            ratio: 0.01,
            d_token: DEFAULT_D_TOKEN,
            hidden: DEFAULT_HIDDEN,
            layers: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("pretraining needs at least one epoch".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("ratio {} outside (0, 1)", self.ratio)));
        }
        if self.recluster_period == 0 || self.d_token == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("period and widths must be positive".into()));
        }
        Ok(())
    }

    pub fn depth(&self, num_tables: usize) -> usize {
        self.layers.unwrap_or(num_tables).max(1)
    }
}

/// Synthetic entity budget per table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub counts: Vec<usize>,
    pub total: usize,
    /// Every table ended up at the floor of one entity.
    pub all_floored: bool,
}

/// `n'_T = max(1, round(r · n_T))` with `n_T` the training rows for the target
/// table and all rows elsewhere. A classification target gets at least one
/// synthetic entity per class seen in training.
pub fn allocate_counts(rdb: &RdbInstance, ratio: f64) -> Result<Allocation> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} outside (0, 1)")));
    }
    let tgt = rdb.target_index();
    let mut all_floored = true;
    let counts: Vec<usize> = (0..rdb.tables.len())
        .map(|t| {
            let n = rdb.visible_rows(t).len();
            let raw = libm::round(ratio * n as f64) as usize;
            if raw >= 1 {
                all_floored = false;
            }
            let mut k = raw.max(1);
            if t == tgt {
                if let Labels::Classification(_) = rdb.labels {
                    k = k.max(train_class_sizes(rdb).iter().filter(|&&s| s > 0).count());
                }
            }
            k.min(n.max(1))
        })
        .collect();
    let total = counts.iter().sum();
    Ok(Allocation {
        counts,
        total,
        all_floored,
    })
}

fn train_class_sizes(rdb: &RdbInstance) -> Vec<usize> {
    match (&rdb.labels, rdb.task()) {
        (Labels::Classification(v), Task::Classification { num_classes }) => {
            let mut s = vec![0; num_classes];
            for r in rdb.split_rows(Split::Train) {
                s[v[r]] += 1;
            }
            s
        }
        _ => Vec::new(),
    }
}

/// Splits `k` clusters across classes proportionally to class size (largest
/// remainder), with at least one and at most `size` clusters per class.
pub fn class_budgets(sizes: &[usize], k: usize) -> Result<Vec<usize>> {
    let c = sizes.len();
    if c == 0 || k < c {
        return Err(Error::InvalidArgument(format!("{k} clusters cannot cover {c} classes")));
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!("class {i} has no training rows")));
    }
    let n: usize = sizes.iter().sum();
    let quotas: Vec<f64> = sizes.iter().map(|&s| k as f64 * s as f64 / n as f64).collect();
    let mut budgets: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let mut left = k - budgets.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - libm::floor(quotas[a]);
        let fb = quotas[b] - libm::floor(quotas[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(c * 2) {
        if left == 0 {
            break;
        }
        budgets[i] += 1;
        left -= 1;
    }
    for i in 0..c {
        if budgets[i] == 0 {
            let donor = (0..c)
                .filter(|&j| budgets[j] > 1)
                .max_by(|&a, &b| budgets[a].cmp(&budgets[b]).then(b.cmp(&a)))
                .expect("k >= classes leaves a donor");
            budgets[donor] -= 1;
            budgets[i] = 1;
        }
    }
    for (b, &s) in budgets.iter_mut().zip(sizes) {
        *b = (*b).min(s);
    }
    Ok(budgets)
}

/// Task-aware clustering of the target training rows.
///
/// Classification: k-means inside each class with [`class_budgets`], cluster ids
/// offset per class so that no cluster mixes classes. Regression: 1-D k-means over
/// the label values. `embeddings` and `labels` are aligned with the training rows.
pub fn target_pseudo_labels(
    embeddings: &Mat,
    labels: &Labels,
    num_classes: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    match labels {
        Labels::Regression(y) => {
            let pts = Mat::from_fn(y.len(), 1, |i, _| y[i]);
            Ok(kmeans(&pts, k, seed)?.assignments)
        }
        Labels::Classification(y) => {
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
            for (i, &c) in y.iter().enumerate() {
                members[c].push(i);
            }
            let present: Vec<usize> = (0..num_classes).filter(|&c| !members[c].is_empty()).collect();
            let sizes: Vec<usize> = present.iter().map(|&c| members[c].len()).collect();
            let budgets = class_budgets(&sizes, k)?;
            let mut out = vec![0; y.len()];
            let mut offset = 0;
            for (&c, &b) in present.iter().zip(&budgets) {
                let pts = embeddings.select_rows(&members[c]);
                let cl = kmeans(&pts, b, seed ^ ((c as u64 + 1) << 32))?;
                for (&row, &a) in members[c].iter().zip(&cl.assignments) {
                    out[row] = offset + a;
                }
                offset += b;
            }
            Ok(out)
        }
    }
}

/// Cluster assignments for every row of every table.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub assignments: Vec<Vec<usize>>,
    /// Per table, clusters × hidden, mean embedding of each cluster.
    pub centroids: Vec<Mat>,
    pub counts: Vec<Vec<usize>>,
}

impl PseudoLabels {
    pub fn num_clusters(&self, table: usize) -> usize {
        self.counts[table].len()
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub bank: TokenizerBank,
    pub encoder: HgnnParams,
    pub pseudo: PseudoLabels,
    pub allocation: Allocation,
    /// Training loss per epoch.
    pub losses: Vec<f64>,
}

fn encode_and_forward(
    tape: &mut Tape,
    rdb: &RdbInstance,
    reg: &Reg,
    bank: &TokenizerBank,
    encoder: &HgnnParams,
    trainable: bool,
) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>)> {
    let bank_vars = bank.on_tape(tape, trainable)?;
    let enc_vars = encoder.on_tape(tape, trainable)?;
    let feats = (0..rdb.tables.len())
        .map(|t| encode_on_tape(tape, &bank_vars.tables[t], &bank.tables[t], &rdb.tables[t]))
        .collect::<Result<Vec<_>>>()?;
    let z = forward_on_tape(tape, encoder, &enc_vars, reg, &feats)?;
    Ok((z, bank_vars.flat(), enc_vars.flat()))
}

struct Clusterer<'a> {
    rdb: &'a RdbInstance,
    counts: &'a [usize],
    train_rows: Vec<usize>,
    train_labels: Labels,
    num_classes: usize,
}

impl<'a> Clusterer<'a> {
    fn new(rdb: &'a RdbInstance, counts: &'a [usize]) -> Self {
        let train_rows = rdb.split_rows(Split::Train);
        let train_labels = match &rdb.labels {
            Labels::Regression(v) => Labels::Regression(train_rows.iter().map(|&r| v[r]).collect()),
            Labels::Classification(v) => {
                Labels::Classification(train_rows.iter().map(|&r| v[r]).collect())
            }
        };
        let num_classes = match rdb.task() {
            Task::Classification { num_classes } => num_classes,
            Task::Regression => 0,
        };
        Self {
            rdb,
            counts,
            train_rows,
            train_labels,
            num_classes,
        }
    }

    /// Per table: labelled rows and their cluster ids.
    fn assign(&self, z: &[Mat], seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        let tgt = self.rdb.target_index();
        (0..z.len())
            .map(|t| {
                let s = seed.wrapping_add(t as u64 * 0x9e37_79b9);
                if t == tgt {
                    let emb = z[t].select_rows(&self.train_rows);
                    let a = target_pseudo_labels(&emb, &self.train_labels, self.num_classes, self.counts[t], s)?;
                    Ok((self.train_rows.clone(), a))
                } else if z[t].rows() == 0 {
                    Ok((Vec::new(), Vec::new()))
                } else {
                    let k = self.counts[t].min(z[t].rows());
                    let a = kmeans(&z[t], k, s)?.assignments;
                    Ok(((0..z[t].rows()).collect(), a))
                }
            })
            .collect()
    }
}

fn one_hot(ids: &[usize], width: usize) -> Mat {
    Mat::from_fn(ids.len(), width, |i, j| if ids[i] == j { 1.0 } else { 0.0 })
}

/// Runs clustering-based pretraining and returns tokenizers, encoder and the final
/// pseudo-labels for every table.
pub fn pretrain(rdb: &RdbInstance, reg: &Reg, config: &PretrainConfig) -> Result<PretrainOutput> {
    config.validate()?;
    let allocation = allocate_counts(rdb, config.ratio)?;
    let mut rng = Rng64::new(config.seed);
    let mut bank = TokenizerBank::init(rdb, config.d_token, &mut rng);
    let mut encoder = HgnnParams::for_graph(
        rng.next_u64(),
        reg,
        config.depth(reg.num_tables()),
        config.d_token,
        config.hidden,
    )?;
    let clusterer = Clusterer::new(rdb, &allocation.counts);
    let mut opt = Sgd {
        lr: config.lr,
        weight_decay: config.weight_decay,
    };
    let mut heads: Vec<Linear> = Vec::new();
    let mut targets: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let (z, bank_flat, enc_flat) = encode_and_forward(&mut tape, rdb, reg, &bank, &encoder, true)?;
        if epoch % config.recluster_period == 0 {
            let zs: Vec<Mat> = z.iter().map(|&v| tape.value(v).clone()).collect();
            targets = clusterer.assign(&zs, config.seed.wrapping_add(epoch as u64))?;
            heads = targets
                .iter()
                .zip(&allocation.counts)
                .map(|((_, a), &k)| {
                    let width = a.iter().copied().max().map_or(k, |m| (m + 1).max(k));
                    Linear::init(config.hidden, width, &mut rng)
                })
                .collect();
        }
        let mut loss: Option<Var> = None;
        let mut head_vars = Vec::with_capacity(heads.len());
        for (t, head) in heads.iter().enumerate() {
            let hv = head.on_tape(&mut tape)?;
            head_vars.push(hv);
            let (rows, ids) = &targets[t];
            if rows.is_empty() {
                continue;
            }
            let zt = tape.row_gather(z[t], rows)?;
            let logits = Linear::apply(&mut tape, hv, zt)?;
            let xent = tape.softmax_xent(logits, one_hot(ids, head.w.cols()))?;
            loss = Some(match loss {
                Some(l) => tape.add(l, xent)?,
                None => xent,
            });
        }
        let Some(loss) = loss else {
            return Err(Error::Empty("pretraining loss"));
        };
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged(format!("pretraining loss {value} at epoch {epoch}")));
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let mut slot = 0;
        apply_gradients(&mut opt, &mut bank, &bank_flat, &grads, slot);
        slot += bank_flat.len();
        apply_gradients(&mut opt, &mut encoder, &enc_flat, &grads, slot);
        slot += enc_flat.len();
        for (head, hv) in heads.iter_mut().zip(&head_vars) {
            apply_gradients(&mut opt, head, hv, &grads, slot);
            slot += 2;
        }
        opt.finish_step();
    }

    let z = encoder.forward(reg, &bank.encode_all(rdb)?)?;
    let pseudo = final_pseudo_labels(rdb, &clusterer, &z, config.seed)?;
    Ok(PretrainOutput {
        bank,
        encoder,
        pseudo,
        allocation,
        losses,
    })
}

/// Assignments for all rows; held-out target rows join the cluster with the
/// nearest mean embedding.
fn final_pseudo_labels(
    rdb: &RdbInstance,
    clusterer: &Clusterer<'_>,
    z: &[Mat],
    seed: u64,
) -> Result<PseudoLabels> {
    let assigned = clusterer.assign(z, seed.wrapping_add(u64::MAX / 2))?;
    let mut assignments = Vec::with_capacity(z.len());
    let mut centroids = Vec::with_capacity(z.len());
    let mut counts = Vec::with_capacity(z.len());
    for (t, (rows, ids)) in assigned.into_iter().enumerate() {
        let k = ids.iter().copied().max().map_or(0, |m| m + 1);
        let mut cent = Mat::zeros(k, z[t].cols());
        let mut cnt = vec![0usize; k];
        for (&r, &a) in rows.iter().zip(&ids) {
            cnt[a] += 1;
            for (c, x) in cent.row_mut(a).iter_mut().zip(z[t].row(r)) {
                *c += x;
            }
        }
        for a in 0..k {
            let inv = 1.0 / cnt[a].max(1) as f64;
            cent.row_mut(a).iter_mut().for_each(|c| *c *= inv);
        }
        let mut full = vec![usize::MAX; rdb.tables[t].row_count()];
        for (&r, &a) in rows.iter().zip(&ids) {
            full[r] = a;
        }
        let missing: Vec<usize> = (0..full.len()).filter(|&r| full[r] == usize::MAX).collect();
        if !missing.is_empty() && k > 0 {
            let near = nearest(&z[t].select_rows(&missing), &cent);
            for (&r, a) in missing.iter().zip(near) {
                full[r] = a;
                cnt[a] += 1;
            }
        }
        assignments.push(full);
        centroids.push(cent);
        counts.push(cnt);
    }
    Ok(PseudoLabels {
        assignments,
        centroids,
        counts,
    })
}

/// Tokenizers and encoder trained directly on the task labels of the training
/// rows, as used by the selection baselines.
pub fn supervised_pretrain(
    rdb: &RdbInstance,
    reg: &Reg,
    config: &PretrainConfig,
) -> Result<(TokenizerBank, HgnnParams)> {
    config.validate()?;
    let mut rng = Rng64::new(config.seed ^ 0x5eed_5eed);
    let mut bank = TokenizerBank::init(rdb, config.d_token, &mut rng);
    let mut encoder = HgnnParams::for_graph(
        rng.next_u64(),
        reg,
        config.depth(reg.num_tables()),
        config.d_token,
        config.hidden,
    )?;
    let width = rdb.task().label_width();
    let mut head = Linear::init(config.hidden, width, &mut rng);
    let rows = rdb.split_rows(Split::Train);
    if rows.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let targets = rdb.label_matrix(&rows, &rdb.label_scaler());
    let tgt = rdb.target_index();
    let mut opt = Sgd {
        lr: config.lr,
        weight_decay: config.weight_decay,
    };
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let (z, bank_flat, enc_flat) = encode_and_forward(&mut tape, rdb, reg, &bank, &encoder, true)?;
        let hv = head.on_tape(&mut tape)?;
        let zt = tape.row_gather(z[tgt], &rows)?;
        let out = Linear::apply(&mut tape, hv, zt)?;
        let loss = task_loss(&mut tape, rdb.task(), out, &targets)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged(format!("supervised loss {value} at epoch {epoch}")));
        }
        let grads = tape.backward(loss)?;
        apply_gradients(&mut opt, &mut bank, &bank_flat, &grads, 0);
        apply_gradients(&mut opt, &mut encoder, &enc_flat, &grads, bank_flat.len());
        apply_gradients(&mut opt, &mut head, &hv, &grads, bank_flat.len() + enc_flat.len());
        opt.finish_step();
    }
    Ok((bank, encoder))
}

/// Mean squared error (regression) or soft-target cross-entropy (classification).
pub fn task_loss(tape: &mut Tape, task: Task, out: Var, targets: &Mat) -> Result<Var> {
    match task {
        Task::Regression => {
            let y = tape.constant(targets.clone())?;
            let diff = tape.sub(out, y)?;
            let sq = tape.frob_sq(diff)?;
            Ok(tape.scale(sq, 1.0 / targets.rows().max(1) as f64))
        }
        Task::Classification { .. } => tape.softmax_xent(out, targets.clone()),
    }
}


#[cfg(test)]
mod training_tests {
    use super::*;
    use crate::minirdb::{generate, MiniRdbConfig};

    fn toy(rows: usize, parents: usize, classification: bool) -> (RdbInstance, Reg) {
        let m = generate(&MiniRdbConfig {
            rows,
            parents,
            classification,
            ..Default::default()
        })
        .unwrap();
        let rdb = RdbInstance::from_raw(m.schema, m.tables).unwrap().normalize();
        let reg = Reg::build(&rdb);
        (rdb, reg)
    }

    #[test]
    fn allocation_rule() {
        let (rdb, _) = toy(200, 20, false);
        let n_train = rdb.split_rows(Split::Train).len();
        let a = allocate_counts(&rdb, 0.1).unwrap();
        assert_eq!(a.counts, vec![2, libm::round(0.1 * n_train as f64) as usize]);
        let a = allocate_counts(&rdb, 0.001).unwrap();
        assert_eq!(a.counts, vec![1, 1]);
        assert!(a.all_floored);
        let (rdb, _) = toy(200, 20, true);
        assert_eq!(allocate_counts(&rdb, 0.001).unwrap().counts[1], 2);
    }

    fn single_table(rows: usize) -> (RdbInstance, Reg) {
        use crate::rdb::{ColumnKind, ColumnSpec, RawTable, Schema, TableSpec};
        let schema = Schema::new(
            vec![TableSpec {
                name: "t".into(),
                columns: vec![
                    ColumnSpec::new("id", ColumnKind::PrimaryKey),
                    ColumnSpec::new("a", ColumnKind::Numerical),
                    ColumnSpec::new("b", ColumnKind::Numerical),
                ],
            }],
            "t",
            Task::Regression,
            None,
            None,
        )
        .unwrap();
        let mut rng = Rng64::new(9);
        let raw = RawTable {
            name: "t".into(),
            keys: (0..rows).map(|i| format!("r{i}")).collect(),
            numeric: (0..2).map(|_| (0..rows).map(|_| Some(rng.normal())).collect()).collect(),
            labels: Some((0..rows).map(|_| Some(format!("{}", rng.normal()))).collect()),
            ..Default::default()
        };
        let rdb = RdbInstance::from_raw(schema, vec![raw]).unwrap().normalize();
        let reg = Reg::build(&rdb);
        (rdb, reg)
    }

    #[test]
    fn one_cluster_per_row_overfits() {
        let (rdb, reg) = single_table(50);
        let n = rdb.split_rows(Split::Train).len();
        let cfg = PretrainConfig {
            epochs: 2000,
            recluster_period: 5000,
            ratio: 0.999,
            layers: Some(2),
            ..Default::default()
        };
        let out = pretrain(&rdb, &reg, &cfg).unwrap();
        assert_eq!(out.pseudo.num_clusters(0), n);
        let last = *out.losses.last().unwrap();
        assert!(last < 0.1, "final loss {last}");
    }

    #[test]
    fn fixed_labels_loss_decreases_and_is_deterministic() {
        let (rdb, reg) = toy(120, 12, true);
        let cfg = PretrainConfig {
            epochs: 30,
            recluster_period: 100,
            ratio: 0.1,
            hidden: 16,
            ..Default::default()
        };
        let a = pretrain(&rdb, &reg, &cfg).unwrap();
        let median = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(median(&a.losses[25..]) < median(&a.losses[..5]));
        let b = pretrain(&rdb, &reg, &cfg).unwrap();
        assert_eq!(a.pseudo, b.pseudo);
        assert_eq!(a.losses, b.losses);

        let Labels::Classification(y) = &rdb.labels else { unreachable!() };
        let tgt = rdb.target_index();
        let mut class_of = vec![None; a.pseudo.num_clusters(tgt)];
        for r in rdb.split_rows(Split::Train) {
            let c = a.pseudo.assignments[tgt][r];
            assert_eq!(*class_of[c].get_or_insert(y[r]), y[r]);
        }
        for t in 0..2 {
            assert!(a.pseudo.counts[t].iter().all(|&c| c > 0));
            assert_eq!(a.pseudo.assignments[t].len(), rdb.tables[t].row_count());
        }
    }
}
