//! The stages behind the command-line tool. Each reads the artifacts of the
//! previous stage from `paths.run_dir` and fails with a hint naming the
//! missing stage.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{PriorKind, RunConfig};
use super::synthetic::{generate_dirichlet_mix, generate_spatial_lattice, Scenario};
use crate::alignment::align_chain;
use crate::analytics::{
    corm_moments, corr_iid_scores, corr_iid_scores_derived, expectation_mc, jump_ratio_study, mc_correlation,
    mc_correlation_conditional, mc_cross_moment, mgp_cov_terms, mgp_cov_terms_derived, truncated_latent_moments,
    write_comparisons, write_jump_ratio, Comparison, LoadingsSpec, PriorSpec,
};
use crate::error::{Error, Result};
use crate::measures::{default_grid_points, evaluate_on_grid, DensityGrid};
use crate::numeric::linspace;
use crate::priors::CarPrior;
use crate::sampler::{run_chain, ChainRecord, GroupedData, LoadingsPrior};
use crate::slopt::{postprocess_chain, TransformTable};
use crate::summaries::{aligned_means, cluster_loadings, waic, write_outputs};

pub const TRANSFORMS_FILE: &str = "transforms.csv";
pub const SUMMARY_DIR: &str = "summary";

fn write_meta(dir: &Path, cfg: &RunConfig, stage: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = serde_json::json!({ "stage": stage, "config": cfg.to_json()? });
    let path = dir.join("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))
}

fn write_edges(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let mut text = String::from("i,j\n");
    for (i, j) in edges {
        text.push_str(&format!("{i},{j}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the data CSV, the true densities next to it and, for lattices, the adjacency list.
pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = &cfg.simulate;
    let synth = match s.scenario {
        Scenario::DirichletMix => generate_dirichlet_mix(s.groups, s.per_group, &mut rng)?,
        Scenario::SpatialLattice => generate_spatial_lattice(s.lattice, s.per_group, &mut rng)?,
    };
    let data_path = &cfg.paths.data;
    if let Some(parent) = data_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    synth.data.save(data_path)?;
    let mut written = vec![data_path.clone()];

    let values: Vec<f64> = synth.data.values().collect();
    let mut grid = DensityGrid::default_for(&values)?;
    for (j, t) in synth.truth.iter().enumerate() {
        grid.push(format!("group_{j}"), evaluate_on_grid(&t.weights, &t.atoms, &grid.points.clone())?)?;
    }
    let truth_path = data_path.with_file_name("truth.csv");
    grid.save(&truth_path)?;
    written.push(truth_path);

    if let Some(edges) = &synth.edges {
        let path = cfg.paths.adjacency.clone().unwrap_or_else(|| data_path.with_file_name("adjacency.csv"));
        write_edges(&path, edges)?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_data(cfg: &RunConfig) -> Result<GroupedData> {
    if !cfg.paths.data.exists() {
        return Err(Error::MissingArtifact {
            path: cfg.paths.data.clone(),
            hint: "set paths.data or run `simulate` first".into(),
        });
    }
    let mut data = GroupedData::read_csv(&cfg.paths.data)?;
    if let Some(sd) = cfg.fit.jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a17);
        data.jitter(sd, &mut rng)?;
    }
    Ok(data)
}

pub fn loadings_prior(cfg: &RunConfig, n_groups: usize) -> Result<LoadingsPrior> {
    match cfg.prior.kind {
        PriorKind::Mgp => Ok(LoadingsPrior::Mgp(cfg.prior.mgp)),
        PriorKind::Car => {
            let path = cfg.paths.adjacency.as_ref().ok_or_else(|| Error::Config("the CAR prior needs paths.adjacency".into()))?;
            let edges = CarPrior::read_edges(path)?;
            let w = CarPrior::adjacency_from_edges(n_groups, &edges)?;
            Ok(LoadingsPrior::Car(CarPrior::with_uniform_mean(w, cfg.prior.car, cfg.sampler.n_latent)?))
        }
    }
}

/// Runs the sampler and writes the chain directory.
pub fn fit(cfg: &RunConfig) -> Result<ChainRecord> {
    let data = load_data(cfg)?;
    let prior = loadings_prior(cfg, data.n_groups())?;
    let mut sampler = cfg.sampler.clone();
    if cfg.fit.empirical_mean {
        sampler.base.mu0 = data.mean();
    }
    let chain = run_chain(&data, &sampler, &prior, cfg.seed)?;
    let mut meta = cfg.to_json()?;
    meta["resolved_mu0"] = serde_json::json!(sampler.base.mu0);
    chain.save(&cfg.paths.run_dir, &meta)?;
    Ok(chain)
}

pub fn load_chain(cfg: &RunConfig) -> Result<ChainRecord> {
    ChainRecord::load(&cfg.paths.run_dir)
}

pub fn transforms_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.run_dir.join(TRANSFORMS_FILE)
}

pub fn postprocess(cfg: &RunConfig) -> Result<TransformTable> {
    let chain = load_chain(cfg)?;
    let table = postprocess_chain(&chain, &cfg.postprocess.alm, cfg.postprocess.chunk)?;
    let failed = table.results.iter().filter(|r| !r.success).count();
    if failed > 0 {
        log::warn!("{failed} of {} draws did not reach a feasible stationary point; best iterates kept", table.len());
    }
    table.save(&transforms_path(cfg))?;
    Ok(table)
}

pub fn align(cfg: &RunConfig) -> Result<TransformTable> {
    let chain = load_chain(cfg)?;
    let mut table = TransformTable::load(&transforms_path(cfg))?;
    if table.len() != chain.len() {
        return Err(Error::Input(format!("{} transforms for {} draws; rerun `postprocess`", table.len(), chain.len())));
    }
    table.permutations = Some(align_chain(&chain, &table, cfg.align.metric)?);
    table.save(&transforms_path(cfg))?;
    Ok(table)
}

pub fn summary_grid(cfg: &RunConfig, data: &GroupedData) -> Result<Vec<f64>> {
    let s = &cfg.summary;
    match (s.grid_lo, s.grid_hi) {
        (Some(lo), Some(hi)) => Ok(linspace(lo, hi, s.grid_points)),
        _ => {
            let values: Vec<f64> = data.values().collect();
            default_grid_points(&values, s.grid_points)
        }
    }
}

pub fn summarize(cfg: &RunConfig) -> Result<PathBuf> {
    let chain = load_chain(cfg)?;
    let table = TransformTable::load(&transforms_path(cfg))?;
    let data = load_data(cfg)?;
    let grid = summary_grid(cfg, &data)?;
    let summary = aligned_means(&chain, &table, &grid)?;
    let clusters = cluster_loadings(&summary.lambda_prime, cfg.summary.clusters.min(data.n_groups()))?;
    let w = waic(&chain, &data)?;
    let dir = cfg.paths.run_dir.join(SUMMARY_DIR);
    write_outputs(&dir, &summary, &clusters, &w)?;
    write_meta(&dir, cfg, "summarize")?;
    Ok(dir)
}

/// Every closed-form quantity next to its simulation estimate, plus the jump-ratio tables.
pub fn prior_analyze(cfg: &RunConfig) -> Result<Vec<Comparison>> {
    let a = &cfg.analytics;
    let (k, alpha, n, seed) = (a.n_atoms, a.alpha, a.draws, cfg.seed);
    let mut rows = Vec::new();

    let (_, written) = corm_moments(1.0, alpha)?;
    let m1 = truncated_latent_moments(1.0, k, alpha)?;
    let cross = mc_cross_moment(1.0, k, alpha, n, seed)?;
    rows.push(Comparison::new("cross_moment_as_written", written, cross));
    rows.push(Comparison::new("cross_moment_truncated", m1.cross, cross));

    let iid = PriorSpec { n_latent: 4, n_atoms: k, phi: 1.0, loadings: LoadingsSpec::IidGamma { psi: 1.0 } };
    let est = mc_correlation(&iid, alpha, n, seed.wrapping_add(1))?;
    rows.push(Comparison::new("corr_iid_as_written", corr_iid_scores(4, 1.0, m1.mean, m1.var(), m1.cov())?, est));
    rows.push(Comparison::new("corr_iid_derived", corr_iid_scores_derived(4, 1.0, m1.mean, m1.var(), m1.cov())?, est));

    let m2 = truncated_latent_moments(2.0, k, alpha)?;
    let (a1, a2, nu) = (2.5, 3.0, 6.0);
    let mgp = PriorSpec { n_latent: 4, n_atoms: k, phi: 2.0, loadings: LoadingsSpec::Mgp { a1, a2, nu } };
    let est = mc_correlation_conditional(&mgp, alpha, n, seed.wrapping_add(2))?;
    rows.push(Comparison::new("corr_mgp_as_written", mgp_cov_terms(a1, a2, nu, 4, &m2)?.corr(), est));
    rows.push(Comparison::new("corr_mgp_derived", mgp_cov_terms_derived(a1, a2, nu, 4, &m2)?.corr(), est));

    let sym = expectation_mc(&iid, 0.5, n / 10, seed.wrapping_add(3))?;
    rows.push(Comparison::new("expectation_symmetric", 0.5, sym));

    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_comparisons(&a.out_dir.join("comparisons.csv"), &rows)?;
    let hs = [1, 2, 4, 8, 16, 32];
    for (name, loadings) in [
        ("iid", LoadingsSpec::IidGamma { psi: 1.0 }),
        ("mgp", LoadingsSpec::Mgp { a1, a2, nu }),
    ] {
        let spec = PriorSpec { n_latent: 1, n_atoms: k, phi: 1.0, loadings };
        let table = jump_ratio_study(&spec, &hs, a.jump_ratio_draws, seed.wrapping_add(4))?;
        write_jump_ratio(&a.out_dir.join(format!("jump_ratio_{name}.csv")), name, &table)?;
    }
    write_meta(&a.out_dir, cfg, "prior-analyze")?;
    Ok(rows)
}
