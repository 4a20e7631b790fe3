use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::GroupedData;
use super::hmc::{DualAveraging, HmcSettings};
use super::state::{log_joint, GibbsState, LoadingsPrior};
use super::steps::{
    adapt_h, update_atoms, update_aux, update_clusters, update_jumps, update_loadings_hmc, update_scores_hmc,
    AdaptOutcome, JumpTuner,
};
use crate::error::{Error, Result};
use crate::measures::{Atom, LoadingsMatrix, TruncatedCoRM};
use crate::numeric::variance;
use crate::priors::{sample_mgp_lambda, GammaSampler, NigBase};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSettings {
    pub enabled: bool,
    pub eps: f64,
    /// Adaptation happens only at iterations `1..=window`.
    pub window: usize,
    pub every: usize,
    pub max_latent: usize,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            eps: 0.05,
            window: 1000,
            every: 50,
            max_latent: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_atoms: usize,
    pub n_latent: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Shape of the scores and concentration of the jumps.
    pub phi: f64,
    pub base: NigBase,
    pub hmc: HmcSettings,
    pub adapt: AdaptSettings,
    /// Multiplies every likelihood term; 0 samples the prior.
    pub temper: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_atoms: 20,
            n_latent: 20,
            iterations: 11_000,
            burn_in: 6_000,
            thin: 1,
            phi: 1.0,
            base: NigBase::default(),
            hmc: HmcSettings::default(),
            adapt: AdaptSettings::default(),
            temper: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, prior: &LoadingsPrior) -> Result<()> {
        if self.n_atoms == 0 || self.n_latent == 0 || self.thin == 0 || self.hmc.n_leapfrog == 0 {
            return Err(Error::Config("n_atoms, n_latent, thin and n_leapfrog must be positive".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!(
                "burn_in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.phi > 0.0) || !(self.temper >= 0.0) || !(self.hmc.initial_step > 0.0) {
            return Err(Error::Config("phi and initial_step must be positive, temper nonnegative".into()));
        }
        self.base.validate()?;
        if self.adaptive(prior) && self.burn_in < self.adapt.window {
            return Err(Error::Config(format!(
                "burn_in {} must cover the adaptation window {} so kept draws share H",
                self.burn_in, self.adapt.window
            )));
        }
        Ok(())
    }

    pub fn adaptive(&self, prior: &LoadingsPrior) -> bool {
        matches!(prior, LoadingsPrior::Mgp(_)) && self.adapt.enabled
    }
}

/// One stored posterior draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub atoms: Vec<Atom>,
    pub jumps: Vec<f64>,
    pub scores: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

impl Draw {
    pub fn corm(&self) -> Result<TruncatedCoRM> {
        TruncatedCoRM::new(self.atoms.clone(), self.jumps.clone(), self.scores.clone())
    }

    pub fn loadings(&self) -> Result<LoadingsMatrix> {
        LoadingsMatrix::new(self.lambda.clone())
    }

    pub fn n_latent(&self) -> usize {
        self.scores.nrows()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub jump_accept_rate: f64,
    pub scores_accept_rate: f64,
    pub loadings_accept_rate: f64,
    pub scores_step: f64,
    pub loadings_step: f64,
    /// `(iteration, H)` after every adaptation.
    pub latent_trace: Vec<(usize, usize)>,
    pub final_latent: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainRecord {
    pub draws: Vec<Draw>,
    pub log_joint: Vec<f64>,
    pub stats: ChainStats,
}

impl ChainRecord {
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    /// Writes `meta.json`, `draws.csv` and `logjoint.csv` under `dir`.
    pub fn save(&self, dir: &Path, meta: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::json!({ "config": meta, "stats": self.stats, "draws": self.len() });
        write_text(&dir.join("meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;

        let path = dir.join("draws.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        if let Some(first) = self.draws.first() {
            let (h, k) = first.scores.shape();
            let g = first.lambda.nrows();
            let mut header = vec!["draw".to_string()];
            header.extend((0..k).map(|c| format!("mu_{c}")));
            header.extend((0..k).map(|c| format!("sigma2_{c}")));
            header.extend((0..k).map(|c| format!("jump_{c}")));
            for r in 0..h {
                header.extend((0..k).map(|c| format!("m_{r}_{c}")));
            }
            for j in 0..g {
                header.extend((0..h).map(|c| format!("lambda_{j}_{c}")));
            }
            writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(&path, e))?;
            for (d, draw) in self.draws.iter().enumerate() {
                if draw.scores.shape() != (h, k) || draw.lambda.nrows() != g {
                    return Err(Error::Dimension(format!("draw {d} changes shape")));
                }
                let mut row = vec![d.to_string()];
                row.extend(draw.atoms.iter().map(|a| a.mu.to_string()));
                row.extend(draw.atoms.iter().map(|a| a.sigma2.to_string()));
                row.extend(draw.jumps.iter().map(f64::to_string));
                for r in 0..h {
                    row.extend((0..k).map(|c| draw.scores[(r, c)].to_string()));
                }
                for j in 0..g {
                    row.extend((0..h).map(|c| draw.lambda[(j, c)].to_string()));
                }
                writeln!(out, "{}", row.join(",")).map_err(|e| Error::io(&path, e))?;
            }
        } else {
            writeln!(out, "draw").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;

        let mut text = String::from("draw,log_joint\n");
        for (d, v) in self.log_joint.iter().enumerate() {
            text.push_str(&format!("{d},{v}\n"));
        }
        write_text(&dir.join("logjoint.csv"), &text)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let draws_path = dir.join("draws.csv");
        let lj_path = dir.join("logjoint.csv");
        for p in [&meta_path, &draws_path, &lj_path] {
            if !p.exists() {
                return Err(Error::MissingArtifact {
                    path: p.clone(),
                    hint: "run `fit` first to produce the chain directory".into(),
                });
            }
        }
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
        let stats: ChainStats = serde_json::from_value(meta["stats"].clone())?;

        let file = std::fs::File::open(&draws_path).map_err(|e| Error::io(&draws_path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Input(format!("{} is empty", draws_path.display())))?
            .map_err(|e| Error::io(&draws_path, e))?;
        let names: Vec<&str> = header.split(',').collect();
        let k = names.iter().filter(|n| n.starts_with("mu_")).count();
        let h = names.iter().filter(|n| n.starts_with("m_")).count() / k.max(1);
        let g = names.iter().filter(|n| n.starts_with("lambda_")).count() / h.max(1);
        let width = 1 + 3 * k + h * k + g * h;
        if names.len() != width {
            return Err(Error::Input(format!("{} header has unexpected layout", draws_path.display())));
        }
        let mut draws = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(&draws_path, e))?;
            let vals: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Input(format!("{} row {} is not numeric", draws_path.display(), row + 2)))?;
            if vals.len() != width - 1 {
                return Err(Error::Input(format!("{} row {} has wrong width", draws_path.display(), row + 2)));
            }
            let atoms = (0..k).map(|c| Atom::new(vals[c], vals[k + c])).collect::<Result<Vec<_>>>()?;
            let jumps = vals[2 * k..3 * k].to_vec();
            let scores = DMatrix::from_row_slice(h, k, &vals[3 * k..3 * k + h * k]);
            let lambda = DMatrix::from_row_slice(g, h, &vals[3 * k + h * k..]);
            draws.push(Draw {
                atoms,
                jumps,
                scores,
                lambda,
            });
        }

        let mut reader = csv::Reader::from_path(&lj_path)?;
        let mut log_joint = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            log_joint.push(
                rec[1]
                    .parse::<f64>()
                    .map_err(|_| Error::Input(format!("bad value in {}", lj_path.display())))?,
            );
        }
        if log_joint.len() != draws.len() {
            return Err(Error::Input(format!(
                "{} draws but {} log-joint values",
                draws.len(),
                log_joint.len()
            )));
        }
        Ok(Self {
            draws,
            log_joint,
            stats,
        })
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Initial state: atom means at random observations, jumps at their prior
/// mean, scores and loadings from the prior.
pub fn initial_state<R: Rng + ?Sized>(
    data: &GroupedData,
    cfg: &SamplerConfig,
    prior: &LoadingsPrior,
    rng: &mut R,
) -> Result<GibbsState> {
    let values: Vec<f64> = data.values().collect();
    let spread = if values.len() > 1 { variance(&values).max(1e-6) } else { 1.0 };
    let k = cfg.n_atoms;
    let g = data.n_groups();
    let atoms = (0..k)
        .map(|_| Atom::new(values[rng.random_range(0..values.len())], spread / 4.0))
        .collect::<Result<Vec<_>>>()?;
    let jumps = vec![1.0 / (1.0 + k as f64); k];
    let scores = DMatrix::from_fn(cfg.n_latent, k, |_, _| rng.gamma(cfg.phi, 1.0).max(1e-12));
    let (lambda, mgp) = match prior {
        LoadingsPrior::Mgp(hyper) => {
            let (l, s) = sample_mgp_lambda(hyper, g, cfg.n_latent, rng)?;
            (l.into_inner(), Some(s))
        }
        LoadingsPrior::Car(car) => {
            if car.n_nodes() != g {
                return Err(Error::Dimension(format!("adjacency has {} nodes, data {g} groups", car.n_nodes())));
            }
            let base = 1.0 / cfg.n_latent as f64;
            let l = DMatrix::from_fn(g, cfg.n_latent, |_, _| base * (0.1 * (rng.random::<f64>() - 0.5)).exp());
            (l, None)
        }
    };
    let mut state = GibbsState {
        atoms,
        jumps,
        scores,
        lambda,
        clusters: data.groups().iter().map(|ys| vec![0; ys.len()]).collect(),
        aux_u: vec![1.0; g],
        mgp,
        iteration: 0,
    };
    update_clusters(&mut state, data, rng)?;
    update_aux(&mut state, data, rng)?;
    Ok(state)
}

/// Runs one chain with its own `ChaCha8` stream seeded from `seed`.
pub fn run_chain(data: &GroupedData, cfg: &SamplerConfig, prior: &LoadingsPrior, seed: u64) -> Result<ChainRecord> {
    cfg.validate(prior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = initial_state(data, cfg, prior, &mut rng)?;
    let mut jump_tuner = JumpTuner::new(cfg.n_atoms);
    let mut scores_da = DualAveraging::new(cfg.hmc.initial_step, cfg.hmc.target_accept);
    let mut loadings_da = DualAveraging::new(cfg.hmc.initial_step, cfg.hmc.target_accept);
    let (mut scores_step, mut loadings_step) = (cfg.hmc.initial_step, cfg.hmc.initial_step);
    let adaptive = cfg.adaptive(prior);
    let mut record = ChainRecord::default();
    let (mut jump_acc, mut scores_acc, mut loadings_acc, mut kept_iters) = (0usize, 0usize, 0usize, 0usize);

    for it in 1..=cfg.iterations {
        state.iteration = it;
        let burning = it <= cfg.burn_in;
        if burning {
            scores_step = scores_da.step();
            loadings_step = loadings_da.step();
        } else if it == cfg.burn_in + 1 {
            jump_tuner.adapting = false;
            scores_step = scores_da.final_step();
            loadings_step = loadings_da.final_step();
        }

        update_atoms(&mut state, data, &cfg.base, cfg.temper, &mut rng);
        let ja = update_jumps(&mut state, cfg.phi, cfg.temper, &mut jump_tuner, &mut rng);
        let so = update_scores_hmc(&mut state, cfg.phi, cfg.temper, scores_step, cfg.hmc.n_leapfrog, &mut rng);
        let lo = update_loadings_hmc(&mut state, prior, cfg.temper, loadings_step, cfg.hmc.n_leapfrog, &mut rng);
        update_clusters(&mut state, data, &mut rng).map_err(|e| chain_error(e, &state))?;
        update_aux(&mut state, data, &mut rng).map_err(|e| chain_error(e, &state))?;

        if burning {
            scores_da.update(so.accept_prob);
            loadings_da.update(lo.accept_prob);
        } else {
            kept_iters += 1;
            jump_acc += ja;
            scores_acc += so.accepted as usize;
            loadings_acc += lo.accepted as usize;
        }

        if adaptive && it <= cfg.adapt.window && it % cfg.adapt.every == 0 {
            if let LoadingsPrior::Mgp(hyper) = prior {
                let outcome = adapt_h(&mut state, hyper, cfg.adapt.eps, cfg.adapt.max_latent, cfg.phi, &mut rng)?;
                if outcome != AdaptOutcome::Unchanged {
                    log::debug!("iteration {it}: {outcome:?}, H = {}", state.n_latent());
                }
                record.stats.latent_trace.push((it, state.n_latent()));
            }
        }

        if !burning && (it - cfg.burn_in) % cfg.thin == 0 {
            record.log_joint.push(log_joint(&state, data, &cfg.base, cfg.phi, prior)?);
            record.draws.push(Draw {
                atoms: state.atoms.clone(),
                jumps: state.jumps.clone(),
                scores: state.scores.clone(),
                lambda: state.lambda.clone(),
            });
        }
    }
    if cfg!(debug_assertions) {
        state.validate(data)?;
    }
    let rate = |a: usize, per: usize| if kept_iters == 0 { 0.0 } else { a as f64 / (kept_iters * per) as f64 };
    record.stats.jump_accept_rate = rate(jump_acc, cfg.n_atoms);
    record.stats.scores_accept_rate = rate(scores_acc, 1);
    record.stats.loadings_accept_rate = rate(loadings_acc, 1);
    record.stats.scores_step = scores_step;
    record.stats.loadings_step = loadings_step;
    record.stats.final_latent = state.n_latent();
    Ok(record)
}

fn chain_error(e: Error, state: &GibbsState) -> Error {
    log::error!(
        "chain aborted at iteration {}: jumps {:?}, u {:?}",
        state.iteration,
        state.jumps,
        state.aux_u
    );
    e
}
