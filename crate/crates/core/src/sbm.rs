//! Block connectivity between clusters and the synthetic graph structure derived
//! from it by quantile thresholding.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::{quantile, Mat};
use crate::pretrain::PseudoLabels;
use crate::reg::{ForwardEdges, Reg};

/// Edge density between every cluster pair of one forward relation.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDensity {
    pub src: usize,
    pub dst: usize,
    pub column: String,
    /// `src clusters × dst clusters`, entries in `[0, 1]`.
    pub p: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SbmModel {
    pub counts: Vec<usize>,
    /// One entry per forward relation of the source graph, in relation order.
    pub relations: Vec<BlockDensity>,
}

/// `P(a, b) = edges(a → b) / (|a| · |b|)` over forward relations, 0 where a
/// cluster is empty.
pub fn estimate_connectivity(reg: &Reg, assignments: &[Vec<usize>], counts: &[usize]) -> Result<SbmModel> {
    if assignments.len() != reg.num_tables() || counts.len() != reg.num_tables() {
        return Err(Error::InvalidArgument("pseudo-labels do not cover every table".into()));
    }
    let mut sizes = Vec::with_capacity(counts.len());
    for (t, (a, &k)) in assignments.iter().zip(counts).enumerate() {
        if a.len() != reg.node_counts[t] {
            return Err(Error::InvalidArgument(format!(
                "table {t}: {} assignments for {} nodes",
                a.len(),
                reg.node_counts[t]
            )));
        }
        let mut s = vec![0usize; k];
        for &c in a {
            *s.get_mut(c).ok_or_else(|| {
                Error::InvalidArgument(format!("table {t}: cluster {c} outside [0, {k})"))
            })? += 1;
        }
        sizes.push(s);
    }
    let relations = reg
        .forward_relations()
        .map(|rel| {
            let (s, d) = (rel.ty.src, rel.ty.dst);
            let mut p = Mat::zeros(counts[s], counts[d]);
            for (v, w) in rel.edges() {
                let (a, b) = (assignments[s][v], assignments[d][w]);
                p.set(a, b, p.get(a, b) + 1.0);
            }
            for a in 0..counts[s] {
                for b in 0..counts[d] {
                    let denom = sizes[s][a] * sizes[d][b];
                    let v = if denom == 0 { 0.0 } else { p.get(a, b) / denom as f64 };
                    p.set(a, b, v);
                }
            }
            BlockDensity {
                src: s,
                dst: d,
                column: rel.ty.column.clone(),
                p,
            }
        })
        .collect();
    Ok(SbmModel {
        counts: counts.to_vec(),
        relations,
    })
}

impl SbmModel {
    pub fn from_pseudo(reg: &Reg, pseudo: &PseudoLabels) -> Result<Self> {
        let counts: Vec<usize> = (0..pseudo.counts.len()).map(|t| pseudo.num_clusters(t)).collect();
        estimate_connectivity(reg, &pseudo.assignments, &counts)
    }
}

/// `τ`: the nearest-rank `(1 - ρ)`-quantile of all entries of `p`.
pub fn threshold_relation(p: &Mat, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("sparsity ratio {rho} outside (0, 1)")));
    }
    quantile(p.data(), 1.0 - rho)
}

/// Dense row-major bit matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![0; (rows * cols).div_ceil(64)],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        let i = r * self.cols + c;
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        assert!(r < self.rows && c < self.cols, "bit ({r}, {c}) out of range");
        let i = r * self.cols + c;
        if on {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::new(self.cols, self.rows);
        for (r, c) in self.ones() {
            t.set(c, r, true);
        }
        t
    }

    /// Set positions in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).filter(move |&c| self.get(r, c)).map(move |c| (r, c)))
    }

    /// Row-major bit-packed bytes, least significant bit first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = (self.rows * self.cols).div_ceil(8);
        self.bits.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let n = rows * cols;
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::Data(format!(
                "bit matrix {rows}x{cols} needs {} bytes, got {}",
                n.div_ceil(8),
                bytes.len()
            )));
        }
        let mut m = Self::new(rows, cols);
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            m.bits[i] = u64::from_le_bytes(w);
        }
        if !n.is_multiple_of(64) && m.bits.last().is_some_and(|w| w >> (n % 64) != 0) {
            return Err(Error::Data("bit matrix has stray trailing bits".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticRelation {
    pub src: usize,
    pub dst: usize,
    pub column: String,
    /// Forward adjacency, `src clusters × dst clusters`; the inverse is its transpose.
    pub adjacency: BitMatrix,
    pub tau: f64,
    /// True when thresholding removed every entry and the largest one was kept.
    pub fallback: bool,
}

impl SyntheticRelation {
    pub fn density(&self) -> f64 {
        let total = self.adjacency.rows() * self.adjacency.cols();
        if total == 0 {
            0.0
        } else {
            self.adjacency.count_ones() as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticStructure {
    pub counts: Vec<usize>,
    pub relations: Vec<SyntheticRelation>,
}

impl SyntheticStructure {
    /// Materializes the structure as a graph with inverse relations.
    pub fn to_reg(&self, table_names: Vec<String>) -> Result<Reg> {
        let forward = self
            .relations
            .iter()
            .map(|r| ForwardEdges {
                src: r.src,
                dst: r.dst,
                column: r.column.clone(),
                edges: r.adjacency.ones().collect(),
            })
            .collect();
        Reg::from_forward_edges(table_names, self.counts.clone(), forward)
    }

    pub fn edge_count(&self) -> usize {
        self.relations.iter().map(|r| r.adjacency.count_ones()).sum()
    }
}

/// `A'(a, b) = 1` iff `P(a, b) > τ`. A relation left empty keeps its largest entry
/// (lowest `(a, b)` on ties).
pub fn generate_structure(model: &SbmModel, rho: f64) -> Result<SyntheticStructure> {
    let relations = model
        .relations
        .iter()
        .map(|rel| {
            let tau = threshold_relation(&rel.p, rho)?;
            let (n, m) = rel.p.shape();
            let mut adjacency = BitMatrix::new(n, m);
            for a in 0..n {
                for b in 0..m {
                    if rel.p.get(a, b) > tau {
                        adjacency.set(a, b, true);
                    }
                }
            }
            let fallback = adjacency.count_ones() == 0;
            if fallback {
                let mut best = (0, 0);
                for a in 0..n {
                    for b in 0..m {
                        if rel.p.get(a, b) > rel.p.get(best.0, best.1) {
                            best = (a, b);
                        }
                    }
                }
                adjacency.set(best.0, best.1, true);
            }
            Ok(SyntheticRelation {
                src: rel.src,
                dst: rel.dst,
                column: rel.column.clone(),
                adjacency,
                tau,
                fallback,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticStructure {
        counts: model.counts.clone(),
        relations,
    })
}
