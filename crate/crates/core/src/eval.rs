//! Downstream training on a (synthetic or sampled) graph, inference on the
//! original database and the scores reported for it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::distill::SyntheticGraph;
use crate::error::{Error, Result};
use crate::hgnn::{forward_on_tape, HgnnParams, Linear, DEFAULT_HIDDEN};
use crate::numcore::{apply_gradients, mean, population_std, Adam, Mat, Optimizer, Rng64, Tape, Var};
use crate::pretrain::task_loss;
use crate::rdb::{LabelScaler, Labels, RdbInstance, Split, Task};
use crate::reg::Reg;
use crate::tokenizer::TokenizerBank;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Hgnn,
    Mlp,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hgnn" => Some(Self::Hgnn),
            "mlp" => Some(Self::Mlp),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hgnn => "hgnn",
            Self::Mlp => "mlp",
        }
    }
}

/// A graph with input features and labels on some target rows.
#[derive(Clone, Debug)]
pub struct TrainingGraph {
    pub reg: Reg,
    pub features: Vec<Mat>,
    pub target: usize,
    pub rows: Vec<usize>,
    /// One row per entry of `rows`; soft labels allowed.
    pub labels: Mat,
    pub task: Task,
}

impl TrainingGraph {
    pub fn from_synthetic(graph: &SyntheticGraph, task: Task) -> Result<Self> {
        Ok(Self {
            reg: graph.reg()?,
            features: graph.features.clone(),
            target: graph.target,
            rows: (0..graph.labels.rows()).collect(),
            labels: graph.labels.clone(),
            task,
        })
    }

    /// Full original graph with the training rows labelled.
    pub fn full(rdb: &RdbInstance, reg: &Reg, bank: &TokenizerBank) -> Result<Self> {
        let rows = rdb.split_rows(Split::Train);
        Ok(Self {
            reg: reg.clone(),
            features: bank.encode_all(rdb)?,
            target: rdb.target_index(),
            labels: rdb.label_matrix(&rows, &rdb.label_scaler()),
            rows,
            task: rdb.task(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.reg.node_counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DownstreamConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub layers: Option<usize>,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Hgnn,
            epochs: 100,
            lr: 0.01,
            weight_decay: 5e-4,
            hidden: DEFAULT_HIDDEN,
            layers: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DownstreamModel {
    Hgnn { encoder: HgnnParams, head: Linear },
    Mlp { hidden: Linear, out: Linear },
}

fn forward(tape: &mut Tape, model: &DownstreamModel, reg: &Reg, features: &[Mat], target: usize) -> Result<(Var, Vec<Var>)> {
    match model {
        DownstreamModel::Hgnn { encoder, head } => {
            let ev = encoder.on_tape(tape, true)?;
            let feats = features
                .iter()
                .map(|f| tape.constant(f.clone()))
                .collect::<Result<Vec<_>>>()?;
            let z = forward_on_tape(tape, encoder, &ev, reg, &feats)?;
            let hv = head.on_tape(tape)?;
            let out = Linear::apply(tape, hv, z[target])?;
            let mut vars = ev.flat();
            vars.extend(hv);
            Ok((out, vars))
        }
        DownstreamModel::Mlp { hidden, out } => {
            let x = tape.constant(features[target].clone())?;
            let hv = hidden.on_tape(tape)?;
            let ov = out.on_tape(tape)?;
            let h = Linear::apply(tape, hv, x)?;
            let h = tape.relu(h);
            let y = Linear::apply(tape, ov, h)?;
            Ok((y, vec![hv[0], hv[1], ov[0], ov[1]]))
        }
    }
}

impl DownstreamModel {
    /// Raw outputs for every row of the target table.
    pub fn predict(&self, reg: &Reg, features: &[Mat], target: usize) -> Result<Mat> {
        let mut tape = Tape::new();
        let (out, _) = forward(&mut tape, self, reg, features, target)?;
        Ok(tape.value(out).clone())
    }

    fn apply_step(&mut self, opt: &mut dyn Optimizer, vars: &[Var], grads: &crate::numcore::Gradients) {
        match self {
            DownstreamModel::Hgnn { encoder, head } => {
                let n = vars.len() - 2;
                apply_gradients(opt, encoder, &vars[..n], grads, 0);
                apply_gradients(opt, head, &vars[n..], grads, n);
            }
            DownstreamModel::Mlp { hidden, out } => {
                apply_gradients(opt, hidden, &vars[..2], grads, 0);
                apply_gradients(opt, out, &vars[2..], grads, 2);
            }
        }
        opt.finish_step();
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: DownstreamModel,
    pub losses: Vec<f64>,
}

/// Full-batch training with Adam against the graph's labels.
pub fn train_downstream(graph: &TrainingGraph, config: &DownstreamConfig) -> Result<Trained> {
    if graph.rows.is_empty() || graph.rows.len() != graph.labels.rows() {
        return Err(Error::InvalidArgument("labels must cover a non-empty set of target rows".into()));
    }
    let d_in = graph.features[graph.target].cols();
    let d_out = graph.labels.cols();
    let mut rng = Rng64::derived(config.seed, 0xe7a1);
    let mut model = match config.model {
        ModelKind::Hgnn => {
            let layers = config.layers.unwrap_or(graph.reg.num_tables()).max(1);
            let encoder = HgnnParams::for_graph(rng.next_u64(), &graph.reg, layers, d_in, config.hidden)?;
            DownstreamModel::Hgnn {
                encoder,
                head: Linear::init(config.hidden, d_out, &mut rng),
            }
        }
        ModelKind::Mlp => DownstreamModel::Mlp {
            hidden: Linear::init(d_in, config.hidden, &mut rng),
            out: Linear::init(config.hidden, d_out, &mut rng),
        },
    };
    let mut opt = Adam::new(config.lr, config.weight_decay);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let (out, vars) = forward(&mut tape, &model, &graph.reg, &graph.features, graph.target)?;
        let sel = tape.row_gather(out, &graph.rows)?;
        let loss = task_loss(&mut tape, graph.task, sel, &graph.labels)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged(format!("downstream loss {value} at epoch {epoch}")));
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        model.apply_step(&mut opt, &vars, &grads);
    }
    Ok(Trained { model, losses })
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidArgument("MAE needs equally long, non-empty inputs".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| libm::fabs(p - t)).sum::<f64>() / pred.len() as f64)
}

/// ROC-AUC × 100 from the rank-sum statistic; tied scores count one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::InvalidArgument("AUC needs one label per score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(100.0 * u / (n_pos as f64 * n_neg as f64))
}

/// Unweighted mean of one-vs-rest AUCs over classes present on both sides.
pub fn macro_auc(scores: &Mat, classes: &[usize]) -> Result<f64> {
    let mut aucs = Vec::new();
    for c in 0..scores.cols() {
        let pos: Vec<bool> = classes.iter().map(|&y| y == c).collect();
        if pos.iter().all(|&p| p) || !pos.iter().any(|&p| p) {
            continue;
        }
        let s: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, c)).collect();
        aucs.push(auc(&s, &pos)?);
    }
    if aucs.is_empty() {
        return Err(Error::InvalidArgument("no class has both positives and negatives".into()));
    }
    Ok(mean(&aucs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Mae,
    Auc,
}

impl Metric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Metric::Mae,
            Task::Classification { .. } => Metric::Auc,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Auc => "AUC",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Auc
    }
}

/// Scores a trained model on one split of the original database, with features
/// produced by `bank`.
pub fn evaluate(
    model: &DownstreamModel,
    rdb: &RdbInstance,
    reg: &Reg,
    bank: &TokenizerBank,
    scaler: &LabelScaler,
    split: Split,
) -> Result<f64> {
    let rows = rdb.split_rows(split);
    if rows.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let features = bank.encode_all(rdb)?;
    let out = model.predict(reg, &features, rdb.target_index())?.select_rows(&rows);
    score(&out, rdb, &rows, scaler)
}

/// MAE in original label units, or AUC × 100 (macro one-vs-rest beyond two classes).
pub fn score(out: &Mat, rdb: &RdbInstance, rows: &[usize], scaler: &LabelScaler) -> Result<f64> {
    match &rdb.labels {
        Labels::Regression(y) => {
            let pred: Vec<f64> = (0..out.rows()).map(|i| scaler.unscale(out.get(i, 0))).collect();
            let truth: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
            mae(&pred, &truth)
        }
        Labels::Classification(y) => {
            let classes: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            if out.cols() == 2 {
                let s: Vec<f64> = (0..out.rows()).map(|i| out.get(i, 1) - out.get(i, 0)).collect();
                let pos: Vec<bool> = classes.iter().map(|&c| c == 1).collect();
                auc(&s, &pos)
            } else {
                macro_auc(out, &classes)
            }
        }
    }
}

/// Uniform sample of `⌈r · n⌉` rows per table (training rows for the target),
/// the induced subgraph, `bank` features and hard labels.
pub fn random_baseline(
    rdb: &RdbInstance,
    reg: &Reg,
    bank: &TokenizerBank,
    ratio: f64,
    seed: u64,
) -> Result<TrainingGraph> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} outside (0, 1)")));
    }
    let mut rng = Rng64::derived(seed, 0xba5e);
    let target = rdb.target_index();
    let keep: Vec<Vec<usize>> = (0..rdb.tables.len())
        .map(|t| {
            let pool = rdb.visible_rows(t);
            let k = libm::ceil(ratio * pool.len() as f64 - 1e-9).max(1.0) as usize;
            let mut picked: Vec<usize> = rng.sample_indices(pool.len(), k).into_iter().map(|i| pool[i]).collect();
            picked.sort_unstable();
            picked
        })
        .collect();
    let features = bank
        .encode_all(rdb)?
        .iter()
        .zip(&keep)
        .map(|(f, k)| f.select_rows(k))
        .collect();
    Ok(TrainingGraph {
        reg: reg.induced(&keep)?,
        features,
        target,
        rows: (0..keep[target].len()).collect(),
        labels: rdb.label_matrix(&keep[target], &rdb.label_scaler()),
        task: rdb.task(),
    })
}

/// One row of the report table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub config: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub ratio: f64,
    pub train_seconds: f64,
    pub rows_synthetic: usize,
    pub rows_original: usize,
}

pub const REPORT_HEADER: &str = "config,metric,mean,std,r,train_seconds,rows_synthetic,rows_original";

impl EvalReport {
    pub fn from_values(
        config: String,
        metric: Metric,
        values: &[f64],
        ratio: f64,
        train_seconds: f64,
        rows_synthetic: usize,
        rows_original: usize,
    ) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::InvalidArgument("a report needs at least 3 repeats".into()));
        }
        Ok(Self {
            config,
            metric,
            mean: mean(values),
            std: population_std(values),
            ratio,
            train_seconds,
            rows_synthetic,
            rows_original,
        })
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{},{:.3},{},{}",
            self.config,
            self.metric.as_str(),
            self.mean,
            self.std,
            self.ratio,
            self.train_seconds,
            self.rows_synthetic,
            self.rows_original
        )
    }
}
