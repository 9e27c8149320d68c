use alloc::vec::Vec;

use super::mat::Mat;

/// First-order update rule; `slot` identifies a parameter across steps.
pub trait Optimizer {
    fn step(&mut self, slot: usize, param: &mut Mat, grad: &Mat);

    /// Marks the end of one optimization step over all slots.
    fn finish_step(&mut self) {}
}

/// Plain gradient descent with L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, _slot: usize, param: &mut Mat, grad: &Mat) {
        let (lr, wd) = (self.lr, self.weight_decay);
        for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * (g + wd * *p);
        }
    }
}

/// Adam with coupled L2 weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: Vec<Option<(Mat, Mat)>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, slot: usize, param: &mut Mat, grad: &Mat) {
        if self.moments.len() <= slot {
            self.moments.resize(slot + 1, None);
        }
        let (r, c) = param.shape();
        let (m, v) = self.moments[slot].get_or_insert_with(|| (Mat::zeros(r, c), Mat::zeros(r, c)));
        let t = self.t + 1;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((p, g), mi), vi) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g + self.weight_decay * *p;
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
        }
    }

    fn finish_step(&mut self) {
        self.t += 1;
    }
}

/// A model whose trainable matrices can be enumerated in a fixed order.
pub trait ParamSet {
    fn params(&self) -> Vec<&Mat>;
    fn params_mut(&mut self) -> Vec<&mut Mat>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.rows() * m.cols()).sum()
    }
}

/// Applies one optimizer update to every parameter of `set`. `vars` must follow the
/// order of [`ParamSet::params`]; `slot_base` keeps slots distinct when several sets
/// share one optimizer.
pub fn apply_gradients<P: ParamSet + ?Sized>(
    opt: &mut dyn Optimizer,
    set: &mut P,
    vars: &[super::Var],
    grads: &super::Gradients,
    slot_base: usize,
) {
    for (i, (p, &v)) in set.params_mut().into_iter().zip(vars).enumerate() {
        if let Some(g) = grads.get(v) {
            opt.step(slot_base + i, p, g);
        } else {
            let zero = Mat::zeros(p.rows(), p.cols());
            opt.step(slot_base + i, p, &zero);
        }
    }
}
