//! Stage 3: synthetic features and target labels optimized through a
//! closed-form kernel ridge regressor.
//!
//! Each iteration samples fresh encoder weights θ, embeds the original graph
//! (`Z`, training target rows) and the synthetic graph (`Z'`), fits ridge weights
//! on the synthetic side and scores them on the original side:
//!
//! ```text
//! W*   = Z'ᵀ (Z'Z'ᵀ + λI)⁻¹ Y'
//! L    = ‖Y − Z W*‖² / n  +  β ‖Ỹ − Z W*_pseudo‖² / n
//! ```
//!
//! where `W*_pseudo` uses the identity as synthetic labels and `Ỹ` one-hot
//! encodes the pretraining clusters of the training rows.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hgnn::{forward_on_tape, HgnnParams, DEFAULT_HIDDEN};
use crate::numcore::{spd_solve, Adam, Mat, Optimizer, Rng64, Tape, Var};
use crate::pretrain::PseudoLabels;
use crate::rdb::{LabelScaler, Labels, RdbInstance, Split};
use crate::reg::Reg;
use crate::sbm::SyntheticStructure;
use crate::tokenizer::TokenizerBank;

pub const DEFAULT_LAMBDA: f64 = 1e-2;

/// Closed-form ridge weights `Z'ᵀ (Z'Z'ᵀ + λI)⁻¹ Y'` (d × D).
pub fn krr_solve(z: &Mat, y: &Mat, lambda: f64) -> Result<Mat> {
    check_lambda(lambda)?;
    if z.rows() != y.rows() {
        return Err(Error::Shape {
            op: "krr_solve",
            lhs: z.shape(),
            rhs: y.shape(),
        });
    }
    let mut k = z.matmul_t(z)?;
    for i in 0..k.rows() {
        k.set(i, i, k.get(i, i) + lambda);
    }
    let (alpha, _) = spd_solve(&k, y)?;
    z.t_matmul(&alpha)
}

/// [`krr_solve`] recorded on the tape, differentiable in `z` and `y`.
pub fn krr_on_tape(tape: &mut Tape, z: Var, y: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let zt = tape.transpose(z);
    let k = tape.matmul(z, zt)?;
    let k = tape.add_diag(k, lambda)?;
    let alpha = tape.spd_solve(k, y)?;
    tape.matmul(zt, alpha)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("ridge coefficient {lambda} must be positive")))
    }
}

/// The distilled database: structure, per-table synthetic features and target labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGraph {
    pub table_names: Vec<String>,
    pub target: usize,
    pub structure: SyntheticStructure,
    /// Per table, `n'_T × d_token`.
    pub features: Vec<Mat>,
    /// `n'_target × D`, standardized for regression.
    pub labels: Mat,
    pub scaler: LabelScaler,
}

impl SyntheticGraph {
    pub fn reg(&self) -> Result<Reg> {
        self.structure.to_reg(self.table_names.clone())
    }

    pub fn rows(&self) -> usize {
        self.structure.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lambda: f64,
    pub beta: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Encoder depth; `None` means one layer per table.
    pub layers: Option<usize>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            lr: 0.01,
            lambda: DEFAULT_LAMBDA,
            beta: 1.0,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            layers: None,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta {} must be non-negative", self.beta)));
        }
        if !(self.lr > 0.0) || self.hidden == 0 {
            return Err(Error::InvalidArgument("learning rate and width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub task: f64,
    pub pseudo: f64,
    pub total: f64,
}

/// Everything about the original database that the distillation loss needs.
#[derive(Clone, Debug)]
pub struct DistillProblem {
    reg: Reg,
    syn_reg: Reg,
    features: Vec<Mat>,
    train_rows: Vec<usize>,
    targets: Mat,
    cluster_targets: Mat,
    target: usize,
    lambda: f64,
    beta: f64,
    layers: usize,
    hidden: usize,
    d_token: usize,
}

impl DistillProblem {
    pub fn new(
        rdb: &RdbInstance,
        reg: &Reg,
        bank: &TokenizerBank,
        pseudo: &PseudoLabels,
        structure: &SyntheticStructure,
        config: &DistillConfig,
    ) -> Result<Self> {
        config.validate()?;
        let target = rdb.target_index();
        let train_rows = rdb.split_rows(Split::Train);
        if train_rows.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let n_syn = structure.counts[target];
        let cluster_targets = Mat::from_fn(train_rows.len(), n_syn, |i, j| {
            if pseudo.assignments[target][train_rows[i]] == j {
                1.0
            } else {
                0.0
            }
        });
        let syn_reg = structure.to_reg(reg.table_names.clone())?;
        Ok(Self {
            reg: reg.clone(),
            syn_reg,
            features: bank.encode_all(rdb)?,
            targets: rdb.label_matrix(&train_rows, &rdb.label_scaler()),
            train_rows,
            cluster_targets,
            target,
            lambda: config.lambda,
            beta: config.beta,
            layers: config.layers.unwrap_or(reg.num_tables()).max(1),
            hidden: config.hidden,
            d_token: bank.d_token,
        })
    }

    pub fn synthetic_reg(&self) -> &Reg {
        &self.syn_reg
    }

    pub fn train_targets(&self) -> &Mat {
        &self.targets
    }

    pub fn sample_theta(&self, seed: u64) -> Result<HgnnParams> {
        HgnnParams::for_graph(seed, &self.reg, self.layers, self.d_token, self.hidden)
    }

    /// Original-graph embeddings of the training target rows under `theta`.
    pub fn original_embeddings(&self, theta: &HgnnParams) -> Result<Mat> {
        let z = theta.forward(&self.reg, &self.features)?;
        Ok(z[self.target].select_rows(&self.train_rows))
    }

    /// Loss values, and gradients for the synthetic features and labels when
    /// `with_grads` is set. With `β = 0` the pseudo branch is evaluated off the tape.
    pub fn evaluate(
        &self,
        theta: &HgnnParams,
        z_orig: &Mat,
        features: &[Mat],
        labels: &Mat,
        with_grads: bool,
    ) -> Result<(Losses, Option<(Vec<Mat>, Mat)>)> {
        let n = self.train_rows.len() as f64;
        let mut tape = Tape::new();
        let enc = theta.on_tape(&mut tape, false)?;
        let h = features
            .iter()
            .map(|f| tape.leaf(f.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = tape.leaf(labels.clone())?;
        let zs = forward_on_tape(&mut tape, theta, &enc, &self.syn_reg, &h)?;
        let z_syn = zs[self.target];
        let z = tape.constant(z_orig.clone())?;

        let w = krr_on_tape(&mut tape, z_syn, y, self.lambda)?;
        let task = self.residual(&mut tape, z, w, &self.targets, n)?;

        let (pseudo_value, total) = if self.beta > 0.0 {
            let eye = tape.constant(Mat::identity(labels.rows()))?;
            let wp = krr_on_tape(&mut tape, z_syn, eye, self.lambda)?;
            let pseudo = self.residual(&mut tape, z, wp, &self.cluster_targets, n)?;
            let weighted = tape.scale(pseudo, self.beta);
            let total = tape.add(task, weighted)?;
            (tape.scalar(pseudo), total)
        } else {
            let z_val = tape.value(z_syn).clone();
            let wp = krr_solve(&z_val, &Mat::identity(labels.rows()), self.lambda)?;
            let pred = z_orig.matmul(&wp)?;
            (self.cluster_targets.sub(&pred)?.frob_sq() / n, task)
        };
        let losses = Losses {
            task: tape.scalar(task),
            pseudo: pseudo_value,
            total: tape.scalar(total),
        };
        if !(losses.total.is_finite() && losses.pseudo.is_finite()) {
            return Err(Error::NonFinite("distillation loss"));
        }
        if !with_grads {
            return Ok((losses, None));
        }
        let mut grads = tape.backward(total)?;
        let gh = h
            .iter()
            .zip(features)
            .map(|(&v, f)| grads.take(v).unwrap_or_else(|| Mat::zeros(f.rows(), f.cols())))
            .collect();
        let gy = grads.take(y).unwrap_or_else(|| Mat::zeros(labels.rows(), labels.cols()));
        Ok((losses, Some((gh, gy))))
    }

    fn residual(&self, tape: &mut Tape, z: Var, w: Var, targets: &Mat, n: f64) -> Result<Var> {
        let pred = tape.matmul(z, w)?;
        let t = tape.constant(targets.clone())?;
        let diff = tape.sub(t, pred)?;
        let sq = tape.frob_sq(diff)?;
        Ok(tape.scale(sq, 1.0 / n))
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub losses: Losses,
}

impl LossRecord {
    pub fn line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.iter, self.losses.task, self.losses.pseudo, self.losses.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct DistillOutput {
    pub graph: SyntheticGraph,
    pub log: Vec<LossRecord>,
}

/// Initial synthetic target labels: the class of each (single-class) cluster, or
/// the mean standardized label of its training members.
pub fn initial_labels(rdb: &RdbInstance, pseudo: &PseudoLabels, n_syn: usize) -> Mat {
    let target = rdb.target_index();
    let scaler = rdb.label_scaler();
    let width = rdb.task().label_width();
    let mut sums = Mat::zeros(n_syn, width);
    let mut counts = vec![0usize; n_syn];
    let rows = rdb.split_rows(Split::Train);
    let y = rdb.label_matrix(&rows, &scaler);
    for (i, &r) in rows.iter().enumerate() {
        let c = pseudo.assignments[target][r];
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(y.row(i)) {
            *s += v;
        }
    }
    let classification = matches!(rdb.labels, Labels::Classification(_));
    for c in 0..n_syn {
        let k = counts[c].max(1) as f64;
        let row = sums.row_mut(c);
        if classification && counts[c] > 0 {
            let best = (0..width).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0);
            row.iter_mut().enumerate().for_each(|(j, v)| *v = if j == best { 1.0 } else { 0.0 });
        } else {
            row.iter_mut().for_each(|v| *v /= k);
        }
    }
    sums
}

/// Optimizes synthetic features and labels for `config.iterations` steps.
pub fn run_distillation(
    rdb: &RdbInstance,
    reg: &Reg,
    bank: &TokenizerBank,
    pseudo: &PseudoLabels,
    structure: &SyntheticStructure,
    config: &DistillConfig,
) -> Result<DistillOutput> {
    let problem = DistillProblem::new(rdb, reg, bank, pseudo, structure, config)?;
    let mut rng = Rng64::derived(config.seed, 0xd157);
    let mut features: Vec<Mat> = structure
        .counts
        .iter()
        .map(|&n| Mat::from_fn(n, bank.d_token, |_, _| 0.1 * rng.normal()))
        .collect();
    let target = rdb.target_index();
    let mut labels = initial_labels(rdb, pseudo, structure.counts[target]);
    let mut opt = Adam::new(config.lr, 0.0);
    let mut log = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let theta = problem.sample_theta(rng.next_u64())?;
        let z = problem.original_embeddings(&theta)?;
        let (losses, grads) = problem.evaluate(&theta, &z, &features, &labels, true)?;
        let (gh, gy) = grads.expect("gradients requested");
        if !losses.total.is_finite() {
            return Err(Error::Diverged(format!("distillation loss at iteration {iter}")));
        }
        for (slot, (f, g)) in features.iter_mut().zip(&gh).enumerate() {
            opt.step(slot, f, g);
        }
        opt.step(features.len(), &mut labels, &gy);
        opt.finish_step();
        log.push(LossRecord { iter, losses });
    }
    Ok(DistillOutput {
        graph: SyntheticGraph {
            table_names: reg.table_names.clone(),
            target,
            structure: structure.clone(),
            features,
            labels,
            scaler: rdb.label_scaler(),
        },
        log,
    })
}
