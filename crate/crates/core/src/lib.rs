//! Relational database distillation into a condensed heterogeneous graph.
//!
//! The pipeline has three stages:
//!
//! 1. [`pretrain`]: column tokenizers and a heterogeneous message-passing
//!    encoder are trained against online cluster assignments, yielding one
//!    pseudo-label per entity and one cluster per synthetic entity.
//! 2. [`sbm`]: per-relation block connectivity is estimated from the pseudo-labels
//!    and thresholded into a small synthetic entity graph.
//! 3. [`distill`]: synthetic features and labels are optimized so that a closed-form
//!    kernel ridge regressor fit on the synthetic graph predicts the original
//!    training labels.
//!
//! [`eval`] trains downstream models on the result and scores them on the
//! original database.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, CSV loading and the
//! command-line driver live in the companion `t2g` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod distill;
pub mod error;
pub mod eval;
pub mod hgnn;
pub mod kmeans;
pub mod minirdb;
pub mod numcore;
pub mod pretrain;
pub mod rdb;
pub mod reg;
pub mod sbm;
pub mod tokenizer;

pub use error::{Error, Result};
pub use numcore::{Mat, Rng64, Tape, Var};
