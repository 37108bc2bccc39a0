//! Inexact cyclic block proximal gradient (I-CBPG) for block-separable
//! composite problems, specialized to LASSO, with verification tooling for
//! its inexact prox maps and convergence bounds.

pub mod bench;
pub mod cputime;
pub mod error;
pub mod linalg;
pub mod metric;
pub mod mmio;
pub mod problem;
pub mod prox;
pub mod solver;
pub mod subsolver;
pub mod theory;
pub mod verify;

pub use error::{Error, Result};
