use nalgebra::DMatrix;

use super::data::GroupedData;
use crate::error::{Error, Result};
use crate::measures::{Atom, LoadingsMatrix, TruncatedCoRM};
use crate::numeric::{compensated_sum, gamma_log_pdf, ln_gamma, normal_log_pdf};
use crate::priors::{jump_log_normalizer, log_prior_jumps, CarPrior, MgpHyper, MgpState, NigBase};

/// Prior on the loadings matrix.
#[derive(Clone, Debug)]
pub enum LoadingsPrior {
    Mgp(MgpHyper),
    Car(CarPrior),
}

/// Full state of the truncated Gibbs sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub atoms: Vec<Atom>,
    pub jumps: Vec<f64>,
    /// `H×K` scores `m_hk`.
    pub scores: DMatrix<f64>,
    /// `g×H` loadings `λ_jh`.
    pub lambda: DMatrix<f64>,
    /// `clusters[j][i]` is the atom index of `y_ji`.
    pub clusters: Vec<Vec<usize>>,
    pub aux_u: Vec<f64>,
    pub mgp: Option<MgpState>,
    pub iteration: usize,
}

impl GibbsState {
    pub fn n_groups(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn n_latent(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// `Γ = ΛM`, `g×K`.
    pub fn gamma(&self) -> DMatrix<f64> {
        &self.lambda * &self.scores
    }

    /// `T_j = Σ_k Γ_jk J_k`.
    pub fn totals(&self) -> Vec<f64> {
        totals(&self.gamma(), &self.jumps)
    }

    /// Per-group allocation counts `n_jk`.
    pub fn counts(&self) -> DMatrix<f64> {
        let mut n = DMatrix::zeros(self.n_groups(), self.n_atoms());
        for (j, cs) in self.clusters.iter().enumerate() {
            for &c in cs {
                n[(j, c)] += 1.0;
            }
        }
        n
    }

    pub fn corm(&self) -> Result<TruncatedCoRM> {
        TruncatedCoRM::new(self.atoms.clone(), self.jumps.clone(), self.scores.clone())
    }

    pub fn loadings(&self) -> Result<LoadingsMatrix> {
        LoadingsMatrix::new(self.lambda.clone())
    }

    /// Checks every range and dimension invariant.
    pub fn validate(&self, data: &GroupedData) -> Result<()> {
        let (g, h, k) = (self.n_groups(), self.n_latent(), self.n_atoms());
        if data.n_groups() != g || self.clusters.len() != g || self.aux_u.len() != g {
            return Err(Error::State(format!("group count drift: data {}, Λ {g}", data.n_groups())));
        }
        if self.scores.nrows() != h || self.scores.ncols() != k || self.jumps.len() != k {
            return Err(Error::State(format!(
                "M is {}x{}, expected {h}x{k}",
                self.scores.nrows(),
                self.scores.ncols()
            )));
        }
        if let Some(mgp) = &self.mgp {
            if mgp.n_latent() != h || mgp.phi.ncols() != h || mgp.phi.nrows() != g {
                return Err(Error::State("MGP hyperstate does not match Λ".into()));
            }
        }
        for (j, cs) in self.clusters.iter().enumerate() {
            if cs.len() != data.group(j).len() || cs.iter().any(|&c| c >= k) {
                return Err(Error::State(format!("cluster labels of group {j} are invalid")));
            }
        }
        if self.aux_u.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
            return Err(Error::State("auxiliary u must be positive".into()));
        }
        self.corm()
            .and_then(|_| self.loadings())
            .map_err(|e| Error::State(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn totals(gamma: &DMatrix<f64>, jumps: &[f64]) -> Vec<f64> {
    (0..gamma.nrows())
        .map(|j| compensated_sum((0..gamma.ncols()).map(|k| gamma[(j, k)] * jumps[k])))
        .collect()
}

/// `A_jk = n_jk/Γ_jk − u_j J_k`, the derivative of the data term in `Γ_jk`.
fn data_sensitivity(gamma: &DMatrix<f64>, counts: &DMatrix<f64>, u: &[f64], jumps: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(gamma.nrows(), gamma.ncols(), |j, k| {
        let n = counts[(j, k)];
        let a = if n > 0.0 { n / gamma[(j, k)] } else { 0.0 };
        a - u[j] * jumps[k]
    })
}

/// `Σ_jk [n_jk log Γ_jk − u_j Γ_jk J_k]`.
fn data_term(gamma: &DMatrix<f64>, counts: &DMatrix<f64>, u: &[f64], jumps: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..gamma.ncols() {
        for j in 0..gamma.nrows() {
            let n = counts[(j, k)];
            let gk = gamma[(j, k)];
            if n > 0.0 {
                acc += n * gk.ln();
            }
            acc -= u[j] * gk * jumps[k];
        }
    }
    acc
}

/// Quantities held fixed while `M` or `Λ` moves.
pub struct BlockContext<'a> {
    pub counts: &'a DMatrix<f64>,
    pub aux_u: &'a [f64],
    pub jumps: &'a [f64],
    pub temper: f64,
}

/// Log full conditional of `log M` (Jacobian included, up to a constant) and its gradient.
pub fn scores_log_target(
    log_m: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    ctx: &BlockContext,
    phi: f64,
) -> (f64, DMatrix<f64>) {
    let m = log_m.map(f64::exp);
    let gamma = lambda * &m;
    let sens = data_sensitivity(&gamma, ctx.counts, ctx.aux_u, ctx.jumps);
    let lik = data_term(&gamma, ctx.counts, ctx.aux_u, ctx.jumps);
    let grad_m = lambda.transpose() * sens;
    let mut value = ctx.temper * lik;
    let mut grad = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.len() {
        value += phi * log_m[i] - m[i];
        grad[i] = ctx.temper * m[i] * grad_m[i] + phi - m[i];
    }
    (value, grad)
}

/// Log full conditional of `log Λ` (Jacobian included, up to a constant) and its gradient.
pub fn loadings_log_target(
    log_lambda: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    ctx: &BlockContext,
    prior: &LoadingsPrior,
    mgp: Option<&MgpState>,
) -> (f64, DMatrix<f64>) {
    let lambda = log_lambda.map(f64::exp);
    let gamma = &lambda * scores;
    let sens = data_sensitivity(&gamma, ctx.counts, ctx.aux_u, ctx.jumps);
    let lik = data_term(&gamma, ctx.counts, ctx.aux_u, ctx.jumps);
    let grad_l = sens * scores.transpose();
    let (prior_value, prior_grad) = match prior {
        LoadingsPrior::Mgp(hyper) => {
            hyper.log_prior_log_scale(&lambda, mgp.expect("MGP prior requires its hyperstate"))
        }
        LoadingsPrior::Car(car) => car.log_density_columns(log_lambda),
    };
    let grad = DMatrix::from_fn(lambda.nrows(), lambda.ncols(), |j, h| {
        ctx.temper * lambda[(j, h)] * grad_l[(j, h)] + prior_grad[(j, h)]
    });
    (ctx.temper * lik + prior_value, grad)
}

/// Log full conditional of `x = logit J_ℓ` (Jacobian included, up to a constant).
///
/// `q` is the number of observations allocated to atom `ℓ` and
/// `c = Σ_j u_j Γ_jℓ`.
pub fn jump_log_target(x: f64, q: f64, c: f64, phi: f64, n_atoms: usize, temper: f64) -> f64 {
    let log_j = -softplus(-x);
    let log_1mj = -softplus(x);
    (temper * q + phi / n_atoms as f64) * log_j + phi * log_1mj - temper * c * log_j.exp()
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Log density of the augmented joint `p(y, c, Λ, M, J, θ*, u)` with every
/// prior normalized, plus the MGP column multipliers when present.
pub fn log_joint(
    state: &GibbsState,
    data: &GroupedData,
    base: &NigBase,
    phi: f64,
    prior: &LoadingsPrior,
) -> Result<f64> {
    let k = state.n_atoms();
    let gamma = state.gamma();
    let totals = totals(&gamma, &state.jumps);
    let mut acc = crate::numeric::CompensatedSum::new();
    for (j, ys) in data.groups().iter().enumerate() {
        let n = ys.len() as f64;
        let u = state.aux_u[j];
        acc.add(-ln_gamma(n) + (n - 1.0) * u.ln() - u * totals[j]);
        for (i, &y) in ys.iter().enumerate() {
            let c = state.clusters[j][i];
            let atom = state.atoms[c];
            acc.add(normal_log_pdf(y, atom.mu, atom.sigma2) + (gamma[(j, c)] * state.jumps[c]).ln());
        }
    }
    for atom in &state.atoms {
        acc.add(base.log_density(atom));
    }
    acc.add(log_prior_jumps(&state.jumps, phi, k)? - k as f64 * jump_log_normalizer(phi, k));
    for &m in state.scores.iter() {
        acc.add(gamma_log_pdf(m, phi, 1.0));
    }
    match prior {
        LoadingsPrior::Mgp(hyper) => {
            let mgp = state
                .mgp
                .as_ref()
                .ok_or_else(|| Error::State("MGP prior without hyperstate".into()))?;
            acc.add(hyper.log_prior(&state.lambda, mgp));
            for (h, &t) in mgp.theta.iter().enumerate() {
                let shape = if h == 0 { hyper.a1 } else { hyper.a2 };
                acc.add(gamma_log_pdf(t, shape, 1.0));
            }
        }
        LoadingsPrior::Car(car) => {
            let (v, _) = car.log_density_columns(&state.lambda.map(f64::ln));
            // Density of Λ itself: subtract the log-scale Jacobian.
            acc.add(v - state.lambda.iter().map(|l| l.ln()).sum::<f64>());
        }
    }
    let value = acc.value();
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "log joint is {value} at iteration {}",
            state.iteration
        )));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((logit(0.25) - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn jump_target_ratio_matches_kernel() {
        // Kernel J^q exp(−cJ) Beta(φ/K, φ) with the logit Jacobian J(1−J).
        let (q, c, phi, k) = (3.0, 2.5, 1.5, 4);
        let kernel = |j: f64| {
            q * j.ln() - c * j + (phi / k as f64 - 1.0) * j.ln() + (phi - 1.0) * (1.0 - j).ln() + j.ln() + (1.0 - j).ln()
        };
        let (a, b) = (0.2, 0.7);
        let direct = kernel(a) - kernel(b);
        let ours = jump_log_target(logit(a), q, c, phi, k, 1.0) - jump_log_target(logit(b), q, c, phi, k, 1.0);
        assert!((direct - ours).abs() < 1e-12);
    }
}
