//! H2(x)L2-optimal reduced-order modeling of parametric LTI systems.
//!
//! The library computes H2(x)L2 errors between a parametric full-order model
//! and a diagonal reduced-order model, minimizes that error over a structured
//! real parameterization with BFGS, and certifies candidate optima against
//! interpolatory first-order optimality conditions in three forms: a general
//! quadrature form, a closed form for models with parameters entering only
//! through the input and output maps, and a logarithmic-kernel closed form
//! for a scalar parameter entering the dynamics.

pub mod bench;
pub mod cli;
pub mod conditions;
pub mod error;
pub mod model;
pub mod norms;
pub mod optimize;
pub mod schema;

pub use error::{Error, Result};
