//! File formats, workspace pipeline and command-line driver for relational
//! database distillation. The numerical work lives in [`t2g_core`].

pub mod artifact;
pub mod codec;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod pipeline;
pub mod schema;
pub mod state;

pub use error::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
