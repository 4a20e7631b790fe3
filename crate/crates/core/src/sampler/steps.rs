//! The six conditional updates and the adaptive choice of `H`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::data::GroupedData;
use super::hmc::{hmc_step, HmcOutcome};
use super::state::{jump_log_target, loadings_log_target, logit, scores_log_target, totals, BlockContext, GibbsState, LoadingsPrior};
use crate::error::{Error, Result};
use crate::priors::{GammaSampler, MgpHyper, NigBase};

/// Target acceptance rate of the jump random walk.
pub const JUMP_TARGET_ACCEPT: f64 = 0.44;

/// NIG update with sufficient statistics scaled by `temper`.
pub fn tempered_posterior(base: &NigBase, ys: &[f64], temper: f64) -> NigBase {
    if temper == 1.0 {
        return base.posterior(ys);
    }
    if ys.is_empty() || temper == 0.0 {
        return *base;
    }
    let n_raw = ys.len() as f64;
    let ybar = ys.iter().sum::<f64>() / n_raw;
    let ss: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let n = temper * n_raw;
    let lambda = base.lambda0 + n;
    NigBase {
        mu0: (base.lambda0 * base.mu0 + n * ybar) / lambda,
        lambda0: lambda,
        a: base.a + 0.5 * n,
        b: base.b + 0.5 * temper * ss + base.lambda0 * n * (ybar - base.mu0).powi(2) / (2.0 * lambda),
    }
}

/// Step 1: atoms from their conjugate NIG posteriors; empty atoms from the base.
pub fn update_atoms<R: Rng + ?Sized>(state: &mut GibbsState, data: &GroupedData, base: &NigBase, temper: f64, rng: &mut R) {
    let mut by_atom: Vec<Vec<f64>> = vec![Vec::new(); state.n_atoms()];
    for (j, ys) in data.groups().iter().enumerate() {
        for (i, &y) in ys.iter().enumerate() {
            by_atom[state.clusters[j][i]].push(y);
        }
    }
    for (k, ys) in by_atom.iter().enumerate() {
        state.atoms[k] = tempered_posterior(base, ys, temper).sample(rng);
    }
}

/// Per-jump random-walk scales, adapted by Robbins–Monro.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpTuner {
    pub log_steps: Vec<f64>,
    pub adapting: bool,
    t: usize,
}

impl JumpTuner {
    pub fn new(n_atoms: usize) -> Self {
        Self {
            log_steps: vec![0.0; n_atoms],
            adapting: true,
            t: 0,
        }
    }
}

/// Step 2: logit-scale Metropolis–Hastings on each `J_ℓ`. Returns the number accepted.
pub fn update_jumps<R: Rng + ?Sized>(
    state: &mut GibbsState,
    phi: f64,
    temper: f64,
    tuner: &mut JumpTuner,
    rng: &mut R,
) -> usize {
    let k = state.n_atoms();
    let gamma = state.gamma();
    let counts = state.counts();
    let gain = if tuner.adapting {
        tuner.t += 1;
        (tuner.t as f64).powf(-0.6)
    } else {
        0.0
    };
    let mut accepted = 0;
    for l in 0..k {
        let q: f64 = counts.column(l).sum();
        let c: f64 = (0..state.n_groups()).map(|j| state.aux_u[j] * gamma[(j, l)]).sum();
        let x = logit(state.jumps[l]);
        let step = tuner.log_steps[l].exp();
        let x_new = x + step * rng.sample::<f64, _>(StandardNormal);
        let j_new = 1.0 / (1.0 + (-x_new).exp());
        let log_ratio = if j_new > 0.0 && j_new < 1.0 {
            jump_log_target(x_new, q, c, phi, k, temper) - jump_log_target(x, q, c, phi, k, temper)
        } else {
            f64::NEG_INFINITY
        };
        let alpha = log_ratio.min(0.0).exp();
        if rng.random::<f64>() < alpha {
            state.jumps[l] = j_new;
            accepted += 1;
        }
        if tuner.adapting {
            tuner.log_steps[l] = (tuner.log_steps[l] + gain * (alpha - JUMP_TARGET_ACCEPT)).clamp(-10.0, 5.0);
        }
    }
    accepted
}

/// Step 3: one HMC transition on `log M`.
pub fn update_scores_hmc<R: Rng + ?Sized>(
    state: &mut GibbsState,
    phi: f64,
    temper: f64,
    step: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> HmcOutcome {
    let counts = state.counts();
    let ctx = BlockContext {
        counts: &counts,
        aux_u: &state.aux_u,
        jumps: &state.jumps,
        temper,
    };
    let (h, k) = state.scores.shape();
    let lambda = &state.lambda;
    let target = |x: &[f64]| {
        let (v, g) = scores_log_target(&DMatrix::from_column_slice(h, k, x), lambda, &ctx, phi);
        (v, g.as_slice().to_vec())
    };
    let mut x: Vec<f64> = state.scores.iter().map(|m| m.ln()).collect();
    let out = hmc_step(&mut x, target, step, n_leapfrog, rng);
    if out.accepted {
        let m = DMatrix::from_iterator(h, k, x.iter().map(|v| v.exp()));
        if m.iter().all(|v| *v > 0.0 && v.is_finite()) {
            state.scores = m;
        } else {
            log::warn!("score proposal under/overflowed; kept previous M");
            return HmcOutcome { accepted: false, ..out };
        }
    }
    out
}

/// Step 4: one HMC transition on `log Λ`, then the MGP hyperstate when present.
pub fn update_loadings_hmc<R: Rng + ?Sized>(
    state: &mut GibbsState,
    prior: &LoadingsPrior,
    temper: f64,
    step: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> HmcOutcome {
    let counts = state.counts();
    let out = {
        let ctx = BlockContext {
            counts: &counts,
            aux_u: &state.aux_u,
            jumps: &state.jumps,
            temper,
        };
        let (g, h) = state.lambda.shape();
        let scores = &state.scores;
        let mgp = state.mgp.as_ref();
        let target = |x: &[f64]| {
            let (v, gr) = loadings_log_target(&DMatrix::from_column_slice(g, h, x), scores, &ctx, prior, mgp);
            (v, gr.as_slice().to_vec())
        };
        let mut x: Vec<f64> = state.lambda.iter().map(|l| l.ln()).collect();
        let out = hmc_step(&mut x, target, step, n_leapfrog, rng);
        if out.accepted {
            let l = DMatrix::from_iterator(g, h, x.iter().map(|v| v.exp()));
            if l.iter().all(|v| *v > 0.0 && v.is_finite()) {
                state.lambda = l;
                out
            } else {
                log::warn!("loadings proposal under/overflowed; kept previous Λ");
                HmcOutcome { accepted: false, ..out }
            }
        } else {
            out
        }
    };
    if let (LoadingsPrior::Mgp(hyper), Some(mgp)) = (prior, state.mgp.as_mut()) {
        hyper.update_state(mgp, &state.lambda, rng);
    }
    out
}

/// Step 5: cluster labels from their categorical full conditionals.
pub fn update_clusters<R: Rng + ?Sized>(state: &mut GibbsState, data: &GroupedData, rng: &mut R) -> Result<()> {
    let k = state.n_atoms();
    let gamma = state.gamma();
    let norm: Vec<f64> = state.atoms.iter().map(|a| -0.5 * (2.0 * std::f64::consts::PI * a.sigma2).ln()).collect();
    let prec: Vec<f64> = state.atoms.iter().map(|a| 0.5 / a.sigma2).collect();
    let mut logp = vec![0.0; k];
    for (j, ys) in data.groups().iter().enumerate() {
        let logw: Vec<f64> = (0..k).map(|c| (gamma[(j, c)] * state.jumps[c]).ln() + norm[c]).collect();
        for (i, &y) in ys.iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                let d = y - state.atoms[c].mu;
                logp[c] = logw[c] - prec[c] * d * d;
                max = max.max(logp[c]);
            }
            if !max.is_finite() {
                return Err(Error::Input(format!(
                    "all allocation probabilities vanish for y = {y} in group {j} (weights {:?})",
                    &logw
                )));
            }
            let mut total = 0.0;
            for v in logp.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = k - 1;
            for (c, &p) in logp.iter().enumerate() {
                if u < p {
                    pick = c;
                    break;
                }
                u -= p;
            }
            state.clusters[j][i] = pick;
        }
    }
    Ok(())
}

/// Step 6: `u_j ~ Gamma(n_j, T_j)`.
pub fn update_aux<R: Rng + ?Sized>(state: &mut GibbsState, data: &GroupedData, rng: &mut R) -> Result<()> {
    let t = totals(&state.gamma(), &state.jumps);
    for (j, &tj) in t.iter().enumerate() {
        if !(tj > 0.0 && tj.is_finite()) {
            return Err(Error::State(format!("group {j} has total mass {tj}")));
        }
        let u = rng.gamma(data.group(j).len() as f64, tj);
        if !(u > 0.0) {
            return Err(Error::State(format!("auxiliary draw for group {j} underflowed")));
        }
        state.aux_u[j] = u;
    }
    Ok(())
}

/// What [`adapt_h`] did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AdaptOutcome {
    Removed(Vec<usize>),
    Added,
    Unchanged,
}

/// Indices of columns whose normalized mass `Σ_j λ_jh / Σ_k λ_jk` falls below `eps·λ̄`.
pub fn empty_columns(lambda: &DMatrix<f64>, eps: f64) -> Vec<usize> {
    let (g, h) = lambda.shape();
    let mut mass = vec![0.0; h];
    for j in 0..g {
        let row: f64 = lambda.row(j).sum();
        for (c, m) in mass.iter_mut().enumerate() {
            *m += lambda[(j, c)] / row;
        }
    }
    let bar = mass.iter().sum::<f64>() / h as f64;
    (0..h).filter(|&c| mass[c] < eps * bar).collect()
}

/// Drops empty columns of `Λ` (and rows of `M`), or appends one prior draw when none is empty.
pub fn adapt_h<R: Rng + ?Sized>(
    state: &mut GibbsState,
    hyper: &MgpHyper,
    eps: f64,
    max_latent: usize,
    phi: f64,
    rng: &mut R,
) -> Result<AdaptOutcome> {
    let mgp = state
        .mgp
        .as_mut()
        .ok_or_else(|| Error::State("adaptive H requires the MGP prior".into()))?;
    let h = state.lambda.ncols();
    let mut empty = empty_columns(&state.lambda, eps);
    if empty.len() == h {
        log::warn!("every column of Λ looks empty; keeping one");
        empty.remove(0);
    }
    if !empty.is_empty() {
        let keep: Vec<usize> = (0..h).filter(|c| !empty.contains(c)).collect();
        state.lambda = state.lambda.select_columns(&keep);
        state.scores = state.scores.select_rows(&keep);
        hyper.retain_columns(mgp, &keep);
        return Ok(AdaptOutcome::Removed(empty));
    }
    if h >= max_latent {
        return Ok(AdaptOutcome::Unchanged);
    }
    let g = state.lambda.nrows();
    let col = hyper.draw_column(mgp, g, rng);
    let k = state.scores.ncols();
    let row: Vec<f64> = (0..k).map(|_| rng.gamma(phi, 1.0)).collect();
    state.lambda = state.lambda.clone().insert_column(h, 0.0);
    for (j, v) in col.into_iter().enumerate() {
        state.lambda[(j, h)] = v;
    }
    state.scores = state.scores.clone().insert_row(h, 0.0);
    for (c, v) in row.into_iter().enumerate() {
        state.scores[(h, c)] = v;
    }
    Ok(AdaptOutcome::Added)
}
