//! Dense matrices, Cholesky solves, a reverse-mode gradient tape, seeded randomness
//! and order statistics.

mod linalg;
mod mat;
mod optim;
mod rng;
mod stats;
mod tape;

pub use linalg::{cholesky, cholesky_solve, spd_solve, SpdFactor};
pub use mat::{Mat, Segments};
pub use optim::{apply_gradients, Adam, Optimizer, ParamSet, Sgd};
pub use rng::Rng64;
pub use stats::{mean, population_std, quantile};
pub use tape::{Gradients, Tape, Var};
