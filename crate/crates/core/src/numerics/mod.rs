//! Dense linear algebra and small numerical utilities.

pub mod convolve;
pub mod matrix;
pub mod poly;
pub mod rng;
pub mod solve;
pub mod svd;

pub use convolve::{box_convolve, Boundary, GridShape};
pub use matrix::{dot, norm2, Matrix};
pub use poly::{poly_fit, ChebyshevFit};
pub use solve::{condition_estimate, lstsq, solve_square, Lu};
pub use svd::{thin_svd, SvdResult};
