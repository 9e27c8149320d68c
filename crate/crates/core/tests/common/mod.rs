//! Independent oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use t2g_core::distill::{krr_solve, DistillConfig, DistillProblem};
use t2g_core::hgnn::HgnnParams;
use t2g_core::minirdb::{generate, MiniRdbConfig};
use t2g_core::pretrain::{pretrain, PretrainConfig, PretrainOutput};
use t2g_core::rdb::RdbInstance;
use t2g_core::reg::Reg;
use t2g_core::sbm::{estimate_connectivity, generate_structure, SbmModel, SyntheticStructure};
use t2g_core::{Mat, Rng64};

pub fn rel_frob(a: &Mat, b: &Mat) -> f64 {
    let diff = a.sub(b).unwrap().frob();
    diff / b.frob().max(1e-300)
}

/// Minimizes `‖Y − ZW‖² + λ‖W‖²` from `W = 0` with Nesterov-accelerated gradient
/// descent, step `1/L` with `L = 2(‖Z‖²_F + λ)`.
pub fn ridge_gd(z: &Mat, y: &Mat, lambda: f64, steps: usize) -> Mat {
    let l = 2.0 * (z.frob_sq() + lambda);
    let mu = 2.0 * lambda;
    let kappa = (l / mu).sqrt();
    let momentum = (kappa - 1.0) / (kappa + 1.0);
    let mut w = Mat::zeros(z.cols(), y.cols());
    let mut prev = w.clone();
    for _ in 0..steps {
        let mut look = w.clone();
        look.axpy(momentum, &w.sub(&prev).unwrap()).unwrap();
        let resid = z.matmul(&look).unwrap().sub(y).unwrap();
        let mut grad = z.t_matmul(&resid).unwrap();
        grad.axpy(lambda, &look).unwrap();
        let grad = grad.scale(2.0);
        prev = w;
        w = look;
        w.axpy(-1.0 / l, &grad).unwrap();
    }
    w
}

pub fn ridge_objective(z: &Mat, y: &Mat, w: &Mat, lambda: f64) -> f64 {
    y.sub(&z.matmul(w).unwrap()).unwrap().frob_sq() + lambda * w.frob_sq()
}

/// Relative errors of the closed form against gradient descent on random
/// problems with `n' ≤ 20`, `d ≤ 8`, `D ≤ 3`, `λ ∈ {1e-2, 1}`.
pub fn krr_oracle_errors(problems: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng64::new(seed);
    (0..problems)
        .map(|i| {
            let n = 1 + rng.below(20);
            let d = 1 + rng.below(8);
            let out = 1 + rng.below(3);
            let lambda = if i % 2 == 0 { 1e-2 } else { 1.0 };
            let z = Mat::from_fn(n, d, |_, _| rng.normal());
            let y = Mat::from_fn(n, out, |_, _| rng.normal());
            let closed = krr_solve(&z, &y, lambda).unwrap();
            rel_frob(&closed, &ridge_gd(&z, &y, lambda, 10_000))
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|)`, or the absolute gap when both are below `floor`.
pub fn grad_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn mini_rdb(rows: usize, parents: usize, classification: bool, seed: u64) -> (RdbInstance, Reg) {
    let m = generate(&MiniRdbConfig {
        rows,
        parents,
        classification,
        seed,
        ..Default::default()
    })
    .unwrap();
    let rdb = RdbInstance::from_raw(m.schema, m.tables).unwrap().normalize();
    let reg = Reg::build(&rdb);
    (rdb, reg)
}

/// A small two-table distillation problem with everything it depends on.
pub struct Toy {
    pub rdb: RdbInstance,
    pub reg: Reg,
    pub pre: PretrainOutput,
    pub structure: SyntheticStructure,
    pub config: DistillConfig,
}

impl Toy {
    pub fn new(classification: bool, seed: u64) -> Self {
        let (rdb, reg) = mini_rdb(80, 16, classification, seed);
        let pre = pretrain(
            &rdb,
            &reg,
            &PretrainConfig {
                epochs: 3,
                ratio: 0.1,
                hidden: 12,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let structure = generate_structure(&SbmModel::from_pseudo(&reg, &pre.pseudo).unwrap(), 0.5).unwrap();
        let config = DistillConfig {
            iterations: 30,
            hidden: 12,
            seed,
            ..Default::default()
        };
        Self {
            rdb,
            reg,
            pre,
            structure,
            config,
        }
    }

    pub fn problem(&self) -> DistillProblem {
        DistillProblem::new(&self.rdb, &self.reg, &self.pre.bank, &self.pre.pseudo, &self.structure, &self.config)
            .unwrap()
    }
}

/// Central-difference check of the total distillation loss at `entries` random
/// coordinates of H′ and Y′; returns one error per coordinate.
pub fn distill_fd_errors(entries: usize, seed: u64) -> Vec<f64> {
    let toy = Toy::new(true, seed);
    let problem = toy.problem();
    let mut rng = Rng64::new(seed ^ 0xfd);
    let theta: HgnnParams = problem.sample_theta(rng.next_u64()).unwrap();
    let z = problem.original_embeddings(&theta).unwrap();
    let d = toy.pre.bank.d_token;
    let features: Vec<Mat> = toy
        .structure
        .counts
        .iter()
        .map(|&n| Mat::from_fn(n, d, |_, _| 0.5 * rng.normal()))
        .collect();
    let n_syn = toy.structure.counts[toy.rdb.target_index()];
    let labels = Mat::from_fn(n_syn, 2, |_, _| rng.normal());
    let (_, grads) = problem.evaluate(&theta, &z, &features, &labels, true).unwrap();
    let (gh, gy) = grads.unwrap();
    let loss = |f: &[Mat], y: &Mat| problem.evaluate(&theta, &z, f, y, false).unwrap().0.total;

    let sizes: Vec<usize> = features.iter().map(|f| f.data().len()).chain([labels.data().len()]).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-6;
    (0..entries)
        .map(|_| {
            let mut flat = rng.below(total);
            let mut slot = 0;
            while flat >= sizes[slot] {
                flat -= sizes[slot];
                slot += 1;
            }
            let (mut fp, mut fm) = (features.clone(), features.clone());
            let (mut yp, mut ym) = (labels.clone(), labels.clone());
            let analytic = if slot < features.len() {
                fp[slot].data_mut()[flat] += h;
                fm[slot].data_mut()[flat] -= h;
                gh[slot].data()[flat]
            } else {
                yp.data_mut()[flat] += h;
                ym.data_mut()[flat] -= h;
                gy.data()[flat]
            };
            let numeric = (loss(&fp, &yp) - loss(&fm, &ym)) / (2.0 * h);
            grad_error(analytic, numeric, 1e-8)
        })
        .collect()
}

/// Planted two-table graph with ground-truth blocks; returns how many of the
/// `k × k` block-adjacency entries generated at `ρ = 3/9` match the plant.
pub fn sbm_recovery(rows: usize, seed: u64) -> (usize, usize) {
    let cfg = MiniRdbConfig {
        rows,
        parents: rows,
        seed,
        ..Default::default()
    };
    let m = generate(&cfg).unwrap();
    let k = cfg.clusters;
    let rdb = RdbInstance::from_raw(m.schema.clone(), m.tables.clone()).unwrap();
    let reg = Reg::build(&rdb);
    let parent = rdb.schema.table_index(t2g_core::minirdb::PARENT).unwrap();
    let mut assignments = vec![Vec::new(); 2];
    assignments[parent] = m.parent_blocks.clone();
    assignments[1 - parent] = m.child_blocks.clone();
    let model = estimate_connectivity(&reg, &assignments, &[k, k]).unwrap();
    let st = generate_structure(&model, 3.0 / 9.0).unwrap();
    let adj = &st.relations[0].adjacency;
    let mut matches = 0;
    for a in 0..k {
        for b in 0..k {
            let planted = a == b;
            if adj.get(a, b) == planted {
                matches += 1;
            }
        }
    }
    (matches, k * k)
}
