//! Low rank neural representations of hyperbolic wave data.
//!
//! A time-conditioned hypernetwork produces the coefficient vector of an LRNR;
//! training, hypermode analysis and FastLRNR compression build on top of it.

pub mod analytic;
pub mod dataio;
pub mod error;
pub mod fastlrnr;
pub mod hypermodes;
pub mod hypernet;
pub mod lrnr;
pub mod numerics;
pub mod training;

pub use error::{LrnrError, Result};
