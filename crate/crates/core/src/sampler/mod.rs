//! Blocked Gibbs sampler for the truncated model.
//!
//! Each sweep updates, in order: atoms (conjugate), jumps (logit random
//! walk), scores `M` and loadings `Λ` (HMC on the log scale), cluster
//! labels and the auxiliary `u_j ~ Gamma(n_j, T_j)`. Under the
//! multiplicative gamma process the number of latent measures is adapted
//! every 50 iterations within the first 1000.

mod chain;
mod data;
mod hmc;
mod state;
mod steps;

pub use chain::{initial_state, run_chain, AdaptSettings, ChainRecord, ChainStats, Draw, SamplerConfig};
pub use data::GroupedData;
pub use hmc::{hmc_step, DualAveraging, HmcOutcome, HmcSettings};
pub use state::{jump_log_target, loadings_log_target, log_joint, scores_log_target, BlockContext, GibbsState, LoadingsPrior};
pub use steps::{
    adapt_h, empty_columns, tempered_posterior, update_atoms, update_aux, update_clusters, update_jumps,
    update_loadings_hmc, update_scores_hmc, AdaptOutcome, JumpTuner, JUMP_TARGET_ACCEPT,
};
