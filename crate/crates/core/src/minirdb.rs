//! Planted two-table database generator.
//!
//! A `parent` table and a `child` target table, each partitioned into the same
//! number of blocks. A child in block `a` links to a parent in block `b` with
//! probability proportional to `density(a, b) · |b|`, so the realized
//! block-pair edge densities are proportional to the requested ones. Numeric
//! features are noisy block centroids; the label is a weighted sum of the linked
//! parent's numeric features plus Gaussian noise (thresholded at zero for
//! classification).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::Rng64;
use crate::rdb::{ColumnKind, ColumnSpec, RawTable, Schema, TableSpec, Task};

pub const PARENT: &str = "parent";
pub const CHILD: &str = "child";

#[derive(Clone, Debug, PartialEq)]
pub struct MiniRdbConfig {
    /// Rows of the target (child) table.
    pub rows: usize,
    /// Rows of the parent table.
    pub parents: usize,
    pub clusters: usize,
    pub intra: f64,
    pub inter: f64,
    pub classification: bool,
    pub noise: f64,
    pub seed: u64,
}

impl Default for MiniRdbConfig {
    fn default() -> Self {
        Self {
            rows: 30_000,
            parents: 3_000,
            clusters: 3,
            intra: 0.3,
            inter: 0.01,
            classification: true,
            noise: 1.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiniRdb {
    pub schema: Schema,
    /// `[parent, child]`.
    pub tables: Vec<RawTable>,
    pub parent_blocks: Vec<usize>,
    pub child_blocks: Vec<usize>,
}

pub const PARENT_WEIGHTS: [f64; 2] = [1.0, 0.5];

pub fn schema(classification: bool) -> Schema {
    let num = |n: &str| ColumnSpec::new(n, ColumnKind::Numerical);
    let task = if classification {
        Task::Classification { num_classes: 2 }
    } else {
        Task::Regression
    };
    Schema::new(
        vec![
            TableSpec {
                name: PARENT.into(),
                columns: vec![
                    ColumnSpec::new("parent_id", ColumnKind::PrimaryKey),
                    num("p0"),
                    num("p1"),
                    ColumnSpec::new("kind", ColumnKind::Categorical),
                ],
            },
            TableSpec {
                name: CHILD.into(),
                columns: vec![
                    ColumnSpec::new("child_id", ColumnKind::PrimaryKey),
                    ColumnSpec::new(
                        "parent_id",
                        ColumnKind::ForeignKey {
                            target: PARENT.into(),
                        },
                    ),
                    num("x0"),
                    num("x1"),
                ],
            },
        ],
        CHILD,
        task,
        None,
        None,
    )
    .expect("static schema is valid")
}

fn centre(block: usize, k: usize, radius: f64) -> [f64; 2] {
    let angle = 2.0 * core::f64::consts::PI * block as f64 / k as f64;
    [radius * libm::cos(angle), radius * libm::sin(angle)]
}

pub fn generate(cfg: &MiniRdbConfig) -> Result<MiniRdb> {
    let k = cfg.clusters;
    if k == 0 || cfg.rows < k || cfg.parents < k {
        return Err(Error::InvalidArgument(format!(
            "need at least {k} rows per table and one cluster"
        )));
    }
    if !(cfg.intra > 0.0 && cfg.inter >= 0.0 && cfg.noise >= 0.0) {
        return Err(Error::InvalidArgument("densities and noise must be non-negative".into()));
    }
    let mut rng = Rng64::new(cfg.seed);

    let parent_blocks: Vec<usize> = (0..cfg.parents).map(|i| i % k).collect();
    let mut members = vec![Vec::new(); k];
    for (i, &b) in parent_blocks.iter().enumerate() {
        members[b].push(i);
    }
    let mut p_feats = Vec::with_capacity(cfg.parents);
    let mut kind = Vec::with_capacity(cfg.parents);
    for &b in &parent_blocks {
        let c = centre(b, k, 1.5);
        p_feats.push([c[0] + 0.5 * rng.normal(), c[1] + 0.5 * rng.normal()]);
        let level = if rng.unit() < 0.8 { b } else { rng.below(k) };
        kind.push(Some(format!("k{level}")));
    }

    let child_blocks: Vec<usize> = (0..cfg.rows).map(|i| i % k).collect();
    let mut fks = Vec::with_capacity(cfg.rows);
    let mut xs = [Vec::with_capacity(cfg.rows), Vec::with_capacity(cfg.rows)];
    let mut labels = Vec::with_capacity(cfg.rows);
    for &a in &child_blocks {
        let weights: Vec<f64> = (0..k)
            .map(|b| {
                let d = if a == b { cfg.intra } else { cfg.inter };
                d * members[b].len() as f64
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.unit() * total;
        let mut b = k - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                b = i;
                break;
            }
            u -= w;
        }
        let parent = members[b][rng.below(members[b].len())];
        fks.push(Some(format!("p{parent}")));
        let c = centre(a, k, 1.5);
        xs[0].push(Some(c[0] + 0.5 * rng.normal()));
        xs[1].push(Some(c[1] + 0.5 * rng.normal()));
        let pf = p_feats[parent];
        let score = PARENT_WEIGHTS[0] * pf[0] + PARENT_WEIGHTS[1] * pf[1] + cfg.noise * rng.normal();
        labels.push(Some(if cfg.classification {
            String::from(if score > 0.0 { "1" } else { "0" })
        } else {
            format!("{score}")
        }));
    }

    let parent = RawTable {
        name: PARENT.into(),
        keys: (0..cfg.parents).map(|i| format!("p{i}")).collect(),
        foreign_keys: Vec::new(),
        numeric: vec![
            p_feats.iter().map(|f| Some(f[0])).collect(),
            p_feats.iter().map(|f| Some(f[1])).collect(),
        ],
        categorical: vec![kind],
        labels: None,
        splits: None,
    };
    let [x0, x1] = xs;
    let child = RawTable {
        name: CHILD.into(),
        keys: (0..cfg.rows).map(|i| format!("c{i}")).collect(),
        foreign_keys: vec![fks],
        numeric: vec![x0, x1],
        categorical: Vec::new(),
        labels: Some(labels),
        splits: None,
    };
    Ok(MiniRdb {
        schema: schema(cfg.classification),
        tables: vec![parent, child],
        parent_blocks,
        child_blocks,
    })
}
