//! Numerical toolkit for the quadratic pencil
//! `y'' + [lambda^2 - 2 lambda p(x) - q(x)] y = 0` on `(0, pi)`:
//! eigenvalues and nodes (forward), reconstruction of `q`, `h` and `q^(m)`
//! from nodes (inverse), and nodal stability metrics.

// `!(a > b)` comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cache;
pub mod error;
pub mod function;
pub mod inverse;
pub mod metrics;
pub mod nodal;
pub mod phase;
pub mod problem;
pub mod quadrature;
pub mod spectrum;
pub mod volterra;

pub use error::{CoreError, Result};
pub use function::RealFunction;
pub use nodal::{NodalCase, NodalSet, NodalSource};
pub use problem::{BoundaryCase, PencilProblem};
pub use spectrum::{Spectrum, SpectrumEntry};

/// Version stamped into every serialized table and report.
pub const FORMAT_VERSION: u32 = 1;
