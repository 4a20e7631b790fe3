//! Run configuration: one TOML file with a section per stage, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::Scenario;
use crate::alignment::Metric;
use crate::error::{Error, Result};
use crate::priors::{CarSettings, MgpHyper};
use crate::sampler::SamplerConfig;
use crate::slopt::AlmConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Mgp,
    Car,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub mgp: MgpHyper,
    pub car: CarSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// `group,value` CSV.
    pub data: PathBuf,
    /// `i,j` edge list; required by the CAR prior.
    pub adjacency: Option<PathBuf>,
    /// Chain directory; transforms and summaries are written inside it.
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data: "data.csv".into(), adjacency: None, run_dir: "run".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Replace `base.mu0` by the mean of the data.
    pub empirical_mean: bool,
    /// Standard deviation of Gaussian noise added to discrete data before fitting.
    pub jitter: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { empirical_mean: true, jitter: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Draws per warm-started block.
    pub chunk: usize,
    pub alm: AlmConfig,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { chunk: 25, alm: AlmConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub metric: Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    pub grid_points: usize,
    /// Grid limits; derived from the data when absent.
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    /// Number of clusters cut from the loadings dendrogram.
    pub clusters: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self { grid_points: crate::measures::DEFAULT_GRID_POINTS, grid_lo: None, grid_hi: None, clusters: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    /// Number of groups for the mixture scenario.
    pub groups: usize,
    /// Lattice side; `(q+1)²` sites.
    pub lattice: usize,
    pub per_group: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { scenario: Scenario::DirichletMix, groups: 100, lattice: 4, per_group: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    pub draws: usize,
    /// Truncation level of the simulated CoRM.
    pub n_atoms: usize,
    pub alpha: f64,
    pub jump_ratio_draws: usize,
    pub out_dir: PathBuf,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self { draws: 1_000_000, n_atoms: 2000, alpha: 0.5, jump_ratio_draws: 100_000, out_dir: "analytics".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub simulate: SimulateConfig,
    pub fit: FitConfig,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub postprocess: PostprocessConfig,
    pub align: AlignConfig,
    pub summary: SummaryConfig,
    pub analytics: AnalyticsConfig,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampler.iterations == 0 || self.sampler.burn_in >= self.sampler.iterations {
            return Err(Error::Config(format!(
                "need 0 <= burn_in < iterations, got {} and {}",
                self.sampler.burn_in, self.sampler.iterations
            )));
        }
        if self.postprocess.chunk == 0 || self.summary.grid_points < 2 || self.summary.clusters == 0 {
            return Err(Error::Config("postprocess.chunk and summary.clusters must be positive, grid_points >= 2".into()));
        }
        if let (Some(lo), Some(hi)) = (self.summary.grid_lo, self.summary.grid_hi) {
            if !(lo < hi) {
                return Err(Error::Config(format!("grid_lo {lo} must be below grid_hi {hi}")));
            }
        }
        if self.simulate.groups == 0 || self.simulate.per_group == 0 || self.simulate.lattice == 0 {
            return Err(Error::Config("simulate sizes must be positive".into()));
        }
        if let Some(sd) = self.fit.jitter {
            if !(sd > 0.0) {
                return Err(Error::Config(format!("jitter sd must be positive, got {sd}")));
            }
        }
        if self.prior.kind == PriorKind::Car && self.paths.adjacency.is_none() {
            return Err(Error::Config("the CAR prior needs paths.adjacency".into()));
        }
        self.postprocess.alm.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let cfg = RunConfig::load(
            None,
            &["seed=9".into(), "sampler.iterations=50".into(), "sampler.burn_in=10".into(), "align.metric=lsw".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sampler.iterations, 50);
        assert_eq!(cfg.align.metric, Metric::Lsw);
        assert_eq!(cfg.prior.mgp, MgpHyper::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["sampler.iteratons=5".into()]).is_err());
        assert!(RunConfig::load(None, &["bogus".into()]).is_err());
        assert!(RunConfig::load(None, &["sampler.burn_in=20000".into()]).is_err());
    }
}
