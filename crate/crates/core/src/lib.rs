//! Gradient-based semantic controls in a generative model's latent space.
//!
//! The toolkit discovers per-point control directions by differentiating
//! small attribute classifiers trained directly on latent codes, then
//! disentangles attributes by masking direction channels that are salient
//! for non-target attributes. A synthetic latent world with known
//! attribute supports and planted confounds stands in for the generator
//! and image classifiers, so every claim is testable without a GAN.
//!
//! Modules:
//! - [`numeric`]: dense vector/matrix kernel, seeded RNG, summary stats.
//! - [`classifier`]: latent-semantic scoring networks with analytic
//!   input-Jacobians.
//! - [`control`]: saliency, channel exclusion, and iterative latent
//!   interpolation.
//! - [`synthworld`]: the analytic oracle world used for data and truth.
//! - [`eval`]: manipulation accuracy and attribute-dependency metrics.

pub mod classifier;
pub mod control;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod synthworld;

pub use error::{Error, Result};
