//! Reverse-mode differentiation over dense matrices.
//!
//! Every primitive evaluates eagerly and appends a node holding its value and the
//! ids of its operands, so node ids are a topological order by construction.
//! [`Tape::backward`] walks the nodes in reverse and accumulates adjoints into the
//! operands that require gradients.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::linalg::{cholesky_solve, spd_factor};
use super::mat::{Mat, Segments};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddDiag(Var),
    Relu(Var),
    Transpose(Var),
    Gather {
        src: Var,
        segments: Arc<Segments>,
        mean: bool,
    },
    VStack(Vec<Var>),
    SpdSolve {
        a: Var,
        b: Var,
        lower: Mat,
    },
    FrobSq(Var),
    SoftmaxXent {
        logits: Var,
        targets: Mat,
        probs: Mat,
    },
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, lhs: &Mat, rhs: &Mat) -> Error {
    Error::Shape {
        op,
        lhs: lhs.shape(),
        rhs: rhs.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    /// Trainable input.
    pub fn leaf(&mut self, m: Mat) -> Result<Var> {
        if !m.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push(m, Op::Leaf, true))
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, m: Mat) -> Result<Var> {
        if !m.is_finite() {
            return Err(Error::NonFinite("constant"));
        }
        Ok(self.push(m, Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Adds the 1×c row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(bias));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(shape_err("add_row", am, bm));
        }
        let mut v = am.clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(bm.data()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(v, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// `a + s·I` for square `a`.
    pub fn add_diag(&mut self, a: Var, s: f64) -> Result<Var> {
        let am = self.value(a);
        if am.rows() != am.cols() {
            return Err(shape_err("add_diag", am, am));
        }
        let mut v = am.clone();
        for i in 0..v.rows() {
            v.set(i, i, v.get(i, i) + s);
        }
        let rg = self.rg(a);
        Ok(self.push(v, Op::AddDiag(a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    /// Output row `r` is the sum (or mean) of the `src` rows listed in segment `r`.
    /// Empty segments give a zero row.
    pub fn gather(&mut self, src: Var, segments: Arc<Segments>, mean: bool) -> Result<Var> {
        let sm = self.value(src);
        if let Some(m) = segments.max_index() {
            if m >= sm.rows() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "gather index {m} out of range for {} rows",
                    sm.rows()
                )));
            }
        }
        let cols = sm.cols();
        let mut v = Mat::zeros(segments.len(), cols);
        for r in 0..segments.len() {
            let seg = segments.segment(r);
            if seg.is_empty() {
                continue;
            }
            let out = v.row_mut(r);
            for &i in seg {
                for (o, x) in out.iter_mut().zip(sm.row(i)) {
                    *o += x;
                }
            }
            if mean {
                let inv = 1.0 / seg.len() as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
        }
        let rg = self.rg(src);
        Ok(self.push(v, Op::Gather { src, segments, mean }, rg))
    }

    /// Rows `idx` of `src` (a gather with singleton segments).
    pub fn row_gather(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let segs = Segments::from_fixed(1, idx.to_vec());
        self.gather(src, Arc::new(segs), false)
    }

    /// Mean over each segment of `src` rows.
    pub fn scatter_mean(&mut self, src: Var, segments: Arc<Segments>) -> Result<Var> {
        self.gather(src, segments, true)
    }

    /// Row-wise concatenation.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut v = Mat::zeros(0, 0);
        for &p in parts {
            v = v.vstack(self.value(p))?;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::VStack(parts.to_vec()), rg))
    }

    /// `A⁻¹ B` for symmetric positive-definite `A`; the adjoint reuses the factor.
    pub fn spd_solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let f = spd_factor(self.value(a))?;
        let x = cholesky_solve(&f.lower, self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(x, Op::SpdSolve { a, b, lower: f.lower }, rg))
    }

    /// `‖a‖²_F` as a 1×1 node.
    pub fn frob_sq(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).frob_sq();
        if !s.is_finite() {
            return Err(Error::NonFinite("frob_sq"));
        }
        let rg = self.rg(a);
        Ok(self.push(Mat::filled(1, 1, s), Op::FrobSq(a), rg))
    }

    /// Mean over rows of `-Σ_c t_c log softmax(logits)_c` for (soft) targets `t`.
    pub fn softmax_xent(&mut self, logits: Var, targets: Mat) -> Result<Var> {
        let lm = self.value(logits);
        if lm.shape() != targets.shape() {
            return Err(shape_err("softmax_xent", lm, &targets));
        }
        let n = lm.rows().max(1) as f64;
        let mut probs = Mat::zeros(lm.rows(), lm.cols());
        let mut loss = 0.0;
        for i in 0..lm.rows() {
            let row = lm.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| libm::exp(x - m)).sum();
            let lz = libm::log(z) + m;
            for (j, &x) in row.iter().enumerate() {
                probs.set(i, j, libm::exp(x - lz));
                loss -= targets.get(i, j) * (x - lz);
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("softmax_xent"));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Mat::filled(1, 1, loss),
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            },
            rg,
        ))
    }

    /// Gradients of the 1×1 node `loss` with respect to every node requiring one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NotScalar(lv.rows(), lv.cols()));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.matmul_t(self.value(*b))?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t_matmul(&g)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        let mut gb = Mat::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (o, x) in gb.data_mut().iter_mut().zip(g.row(i)) {
                                *o += x;
                            }
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::AddDiag(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Gather {
                    src,
                    segments,
                    mean,
                } => {
                    let sv = self.value(*src);
                    let mut gs = Mat::zeros(sv.rows(), sv.cols());
                    for r in 0..segments.len() {
                        let seg = segments.segment(r);
                        if seg.is_empty() {
                            continue;
                        }
                        let w = if *mean { 1.0 / seg.len() as f64 } else { 1.0 };
                        let gr = g.row(r);
                        for &i in seg {
                            for (o, x) in gs.row_mut(i).iter_mut().zip(gr) {
                                *o += w * x;
                            }
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::VStack(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if self.rg(p) {
                            let idx: Vec<usize> = (start..start + rows).collect();
                            let mut gp = g.select_rows(&idx);
                            if rows == 0 {
                                gp = Mat::zeros(0, self.value(p).cols());
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        start += rows;
                    }
                }
                Op::SpdSolve { a, b, lower } => {
                    // X = A⁻¹B:  G_B = A⁻¹ G_X,  G_A = -G_B Xᵀ
                    let gb = cholesky_solve(lower, &g)?;
                    if self.rg(*a) {
                        let ga = gb.matmul_t(&node.value)?.scale(-1.0);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::FrobSq(a) => {
                    let s = g.get(0, 0);
                    accumulate(&mut grads, *a, self.value(*a).scale(2.0 * s));
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = g.get(0, 0) / probs.rows().max(1) as f64;
                    let mut gl = Mat::zeros(probs.rows(), probs.cols());
                    for i in 0..probs.rows() {
                        let tsum: f64 = targets.row(i).iter().sum();
                        for j in 0..probs.cols() {
                            gl.set(i, j, s * (probs.get(i, j) * tsum - targets.get(i, j)));
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        // interior adjoints were consumed above; keep only leaves
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng64;

    #[test]
    fn frob_sq_gradient_is_twice_input() {
        let a = Mat::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let mut t = Tape::new();
        let x = t.leaf(a.clone()).unwrap();
        let l = t.frob_sq(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &a.scale(2.0));
    }

    #[test]
    fn scatter_mean_of_two() {
        let mut t = Tape::new();
        let x = t.constant(Mat::from_rows(&[&[2.0], &[4.0]])).unwrap();
        let segs = Arc::new(Segments::from_pairs(1, [(0, 0), (0, 1)]));
        let m = t.scatter_mean(x, segs).unwrap();
        assert_eq!(t.value(m), &Mat::from_rows(&[&[3.0]]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::zeros(2, 2)).unwrap();
        assert_eq!(t.backward(x).unwrap_err(), Error::NotScalar(2, 2));
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut t = Tape::new();
        assert!(t.leaf(Mat::filled(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut rng = Rng64::new(2);
        let mut t = Tape::new();
        let a = t.constant(Mat::from_fn(3, 3, |_, _| rng.normal())).unwrap();
        let b = t.leaf(Mat::from_fn(3, 1, |_, _| rng.normal())).unwrap();
        let p = t.matmul(a, b).unwrap();
        let l = t.frob_sq(p).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(a).is_none());
        assert!(g.get(b).is_some());
    }

    #[test]
    fn xent_matches_hand_value() {
        let mut t = Tape::new();
        let z = t.leaf(Mat::from_rows(&[&[0.0, 0.0]])).unwrap();
        let l = t.softmax_xent(z, Mat::from_rows(&[&[1.0, 0.0]])).unwrap();
        assert!((t.scalar(l) - core::f64::consts::LN_2).abs() < 1e-15);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(z).unwrap(), &Mat::from_rows(&[&[-0.5, 0.5]]));
    }
}
