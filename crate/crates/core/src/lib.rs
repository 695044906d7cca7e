//! Moment-based estimation of systems of ordered-response equations.
//!
//! The estimator treats each ordered response as a coarsened latent normal
//! variable and matches generalized residuals (conditional means of the latent
//! error over the observed interval) instead of maximizing a joint likelihood.

pub mod cutpoints;
pub mod datagen;
pub mod error;
pub mod gauss;
pub mod gmm;
pub mod io;
pub mod latent_cov;
pub mod model;
pub mod oracle;
pub mod par;
pub mod post;
pub mod residuals;
pub mod rng;
pub mod roots;

pub use error::{Error, Result};
pub use gmm::{fit, FitOptions, FitResult};
pub use model::{Dataset, EquationSpec, ModelSpec, ParamSet, Problem};
pub use par::Execution;
