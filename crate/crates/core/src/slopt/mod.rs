//! Post-processing of draws: a unimodular `Q` per draw that separates the
//! latent measures while keeping `ΛQ⁻¹` and `QM` nonnegative.

mod alm;
mod lie;
mod loss;
mod rattle;
mod transforms;

pub use alm::{alm_solve, unconstrained_start, AlmConfig, AlmProblem, AlmState, PenaltyForm, TransformResult};
pub use lie::{expm, project_sl, project_sl_orthogonal};
pub use loss::{interp_loss, LossProblem};
pub use rattle::{rattle_minimize, Projection, RattleConfig, RattleOutcome, Tangent};
pub use transforms::{postprocess_chain, TransformTable};
