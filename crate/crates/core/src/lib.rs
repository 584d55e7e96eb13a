//! Energy-conserving quadratic SDEs dx = B(x,x) dt − A x dt + σ dW with
//! degenerate damping: structural checks, model constructors, spectral
//! classification of kernel equilibria, ensemble simulation and Monte Carlo
//! verification of coercivity, exit-time and drift estimates.

// `!(x > 0.0)` style guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coercivity;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod spectral;
pub mod stats;
pub mod system;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use system::{DampingOperator, KernelDecomposition, NoiseOperator, SdeSystem};
pub use tensor::{BilinearTensor, Check};
