//! Configuration, synthetic data and artifact plumbing.

mod config;
pub mod pipeline;
mod synthetic;

pub use config::{
    AlignConfig, AnalyticsConfig, FitConfig, Paths, PostprocessConfig, PriorConfig, PriorKind, RunConfig, SimulateConfig,
    SummaryConfig,
};
pub use synthetic::{generate_dirichlet_mix, generate_spatial_lattice, lattice_weights, Scenario, SyntheticData, TrueDensity};
