//! Heterogeneous GraphSAGE-style encoder.
//!
//! Per layer and node `v` of table `T`:
//!
//! ```text
//! h_v ← ReLU( h_v·F_T + b_T + Σ_{R = (S, T)} mean_{w ∈ N_R(v)} h_w · G_R )
//! ```
//!
//! Empty neighborhoods contribute zero, and the last layer has no ReLU.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::{Mat, ParamSet, Rng64, Tape, Var};
use crate::reg::Reg;

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct HgnnLayer {
    /// Per table, d_in × d.
    pub self_w: Vec<Mat>,
    /// Per table, 1 × d.
    pub bias: Vec<Mat>,
    /// Per relation, d_in × d.
    pub rel_w: Vec<Mat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HgnnParams {
    pub layers: Vec<HgnnLayer>,
    /// `(src, dst)` table of every relation, in relation-id order.
    pub relations: Vec<(usize, usize)>,
    pub num_tables: usize,
}

/// Relation endpoints of a graph, which is all the encoder needs to know about it.
pub fn signature(reg: &Reg) -> Vec<(usize, usize)> {
    reg.relations.iter().map(|r| (r.ty.src, r.ty.dst)).collect()
}

impl HgnnParams {
    /// Samples every matrix uniformly in ±1/√fan_in.
    pub fn init(
        seed: u64,
        num_tables: usize,
        relations: Vec<(usize, usize)>,
        layers: usize,
        d_in: usize,
        hidden: usize,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidArgument("HGNN needs at least one layer".into()));
        }
        let mut rng = Rng64::new(seed);
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let fan_in = if l == 0 { d_in } else { hidden };
            let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
            let mut draw = |r, c| Mat::from_fn(r, c, |_, _| rng.uniform(-bound, bound));
            let self_w = (0..num_tables).map(|_| draw(fan_in, hidden)).collect();
            let bias = (0..num_tables).map(|_| draw(1, hidden)).collect();
            let rel_w = relations.iter().map(|_| draw(fan_in, hidden)).collect();
            out.push(HgnnLayer {
                self_w,
                bias,
                rel_w,
            });
        }
        Ok(Self {
            layers: out,
            relations,
            num_tables,
        })
    }

    /// Same as [`HgnnParams::init`] with the graph's own relation layout.
    pub fn for_graph(seed: u64, reg: &Reg, layers: usize, d_in: usize, hidden: usize) -> Result<Self> {
        Self::init(seed, reg.num_tables(), signature(reg), layers, d_in, hidden)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].self_w.first().map_or(0, |m| m.rows())
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].self_w.first().map_or(0, |m| m.cols())
    }

    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> Result<HgnnVars> {
        let mut reg = |m: &Mat| {
            if trainable {
                tape.leaf(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(LayerVars {
                    self_w: l.self_w.iter().map(&mut reg).collect::<Result<_>>()?,
                    bias: l.bias.iter().map(&mut reg).collect::<Result<_>>()?,
                    rel_w: l.rel_w.iter().map(&mut reg).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HgnnVars { layers })
    }

    /// Untracked forward pass.
    pub fn forward(&self, reg: &Reg, features: &[Mat]) -> Result<Vec<Mat>> {
        let mut tape = Tape::new();
        let vars = self.on_tape(&mut tape, false)?;
        let feats = features
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = forward_on_tape(&mut tape, self, &vars, reg, &feats)?;
        Ok(out.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

impl ParamSet for HgnnParams {
    fn params(&self) -> Vec<&Mat> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.self_w.iter());
            out.extend(l.bias.iter());
            out.extend(l.rel_w.iter());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.self_w.iter_mut());
            out.extend(l.bias.iter_mut());
            out.extend(l.rel_w.iter_mut());
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub self_w: Vec<Var>,
    pub bias: Vec<Var>,
    pub rel_w: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct HgnnVars {
    pub layers: Vec<LayerVars>,
}

impl HgnnVars {
    /// Same order as [`ParamSet::params`] on [`HgnnParams`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(&l.self_w);
            out.extend(&l.bias);
            out.extend(&l.rel_w);
        }
        out
    }
}

/// Records the encoder on `tape`; returns one embedding matrix per table.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &HgnnParams,
    vars: &HgnnVars,
    reg: &Reg,
    features: &[Var],
) -> Result<Vec<Var>> {
    if reg.num_tables() != params.num_tables || features.len() != params.num_tables {
        return Err(Error::InvalidArgument(format!(
            "encoder expects {} tables, graph has {} and {} feature matrices were given",
            params.num_tables,
            reg.num_tables(),
            features.len()
        )));
    }
    if signature(reg) != params.relations {
        return Err(Error::InvalidArgument("graph relations do not match the encoder".into()));
    }
    let d_in = params.input_width();
    for (t, &f) in features.iter().enumerate() {
        let (r, c) = tape.value(f).shape();
        if c != d_in || r != reg.node_counts[t] {
            return Err(Error::Shape {
                op: "hgnn_forward",
                lhs: (reg.node_counts[t], d_in),
                rhs: (r, c),
            });
        }
    }

    let mut h: Vec<Var> = features.to_vec();
    let last = vars.layers.len() - 1;
    for (li, lv) in vars.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(h.len());
        for t in 0..params.num_tables {
            let own = tape.matmul(h[t], lv.self_w[t])?;
            let mut acc = tape.add_row(own, lv.bias[t])?;
            for rel in reg.incoming_relations(t) {
                let (src, w) = (rel.ty.src, lv.rel_w[rel.ty.id]);
                // mean and projection commute; project whichever side has fewer rows
                let msg = if reg.node_counts[src] < reg.node_counts[t] {
                    let proj = tape.matmul(h[src], w)?;
                    tape.scatter_mean(proj, rel.incoming.clone())?
                } else {
                    let agg = tape.scatter_mean(h[src], rel.incoming.clone())?;
                    tape.matmul(agg, w)?
                };
                acc = tape.add(acc, msg)?;
            }
            next.push(if li == last { acc } else { tape.relu(acc) });
        }
        h = next;
    }
    Ok(h)
}

/// Affine map `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

impl Linear {
    pub fn init(d_in: usize, d_out: usize, rng: &mut Rng64) -> Self {
        let bound = 1.0 / libm::sqrt(d_in.max(1) as f64);
        Self {
            w: Mat::from_fn(d_in, d_out, |_, _| rng.uniform(-bound, bound)),
            b: Mat::from_fn(1, d_out, |_, _| rng.uniform(-bound, bound)),
        }
    }

    pub fn on_tape(&self, tape: &mut Tape) -> Result<[Var; 2]> {
        Ok([tape.leaf(self.w.clone())?, tape.leaf(self.b.clone())?])
    }

    pub fn apply(tape: &mut Tape, vars: [Var; 2], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[0])?;
        tape.add_row(y, vars[1])
    }
}

impl ParamSet for Linear {
    fn params(&self) -> Vec<&Mat> {
        alloc::vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        alloc::vec![&mut self.w, &mut self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reg::ForwardEdges;
    use alloc::vec;

    fn graph() -> Reg {
        Reg::from_forward_edges(
            vec!["p".into(), "c".into()],
            vec![2, 3],
            vec![ForwardEdges {
                src: 1,
                dst: 0,
                column: "p".into(),
                edges: vec![(0, 0), (1, 0), (2, 1)],
            }],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_init() {
        let g = graph();
        let a = HgnnParams::for_graph(1, &g, 2, 4, 8).unwrap();
        let b = HgnnParams::for_graph(1, &g, 2, 4, 8).unwrap();
        let c = HgnnParams::for_graph(2, &g, 2, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (l, layer) in a.layers.iter().enumerate() {
            let fan = if l == 0 { 4.0 } else { 8.0 };
            let bound = 1.0 / libm::sqrt(fan);
            for m in layer.self_w.iter().chain(&layer.bias).chain(&layer.rel_w) {
                assert!(m.max_abs() <= bound);
            }
        }
        assert!(HgnnParams::for_graph(1, &g, 0, 4, 8).is_err());
    }

    #[test]
    fn zero_weights_zero_output() {
        let g = graph();
        let mut p = HgnnParams::for_graph(1, &g, 2, 3, 4).unwrap();
        for m in p.params_mut() {
            *m = Mat::zeros(m.rows(), m.cols());
        }
        let feats = vec![Mat::filled(2, 3, 1.0), Mat::filled(3, 3, -2.0)];
        let out = p.forward(&g, &feats).unwrap();
        assert!(out.iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn isolated_node_copies_input() {
        let g = Reg::from_forward_edges(vec!["solo".into()], vec![1], vec![]).unwrap();
        let mut p = HgnnParams::for_graph(1, &g, 1, 3, 3).unwrap();
        p.layers[0].self_w[0] = Mat::identity(3);
        p.layers[0].bias[0] = Mat::zeros(1, 3);
        let x = Mat::from_rows(&[&[-1.0, 2.0, 0.5]]);
        assert_eq!(p.forward(&g, core::slice::from_ref(&x)).unwrap()[0], x);
    }

    #[test]
    fn width_mismatch_rejected() {
        let g = graph();
        let p = HgnnParams::for_graph(1, &g, 1, 3, 4).unwrap();
        let feats = vec![Mat::zeros(2, 5), Mat::zeros(3, 3)];
        assert!(matches!(p.forward(&g, &feats), Err(Error::Shape { .. })));
    }
}
