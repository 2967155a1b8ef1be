//! Online LQR with spectrally decaying process noise.
//!
//! Dense Riccati and Lyapunov solvers, seeded simulation, closed-form
//! identification with a safe-set projection, the WarmStart / OnlineCE
//! explore-then-commit learners, and numerical checks of the structural
//! inequalities behind their analysis.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod bench;
pub mod error;
pub mod estimate;
pub mod lyapunov;
pub mod operator;
pub mod plot;
pub mod riccati;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod systems;
pub mod verify;

pub use error::{Error, Result};
pub use operator::DenseOperator;
