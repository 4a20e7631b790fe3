//! Normalized latent measure factor models.
//!
//! Group-specific random probability measures are built from a shared
//! truncated completely random vector of latent measures and a matrix of
//! positive loadings. The crate provides a blocked Gibbs sampler, the
//! SL(H) post-processing that makes the latent factors interpretable,
//! label alignment across draws and posterior summaries.

pub mod alignment;
pub mod analytics;
pub mod error;
pub mod io;
pub mod measures;
pub mod numeric;
pub mod priors;
pub mod sampler;
pub mod slopt;
pub mod summaries;

pub use error::{Error, Result};
