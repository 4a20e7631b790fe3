//! Multiplicative gamma process on the loadings:
//! `λ_jh = (φ_jh τ_h)^{-1}`, `τ_h = Π_{l≤h} θ_l`, `θ_1 ~ Ga(a1)`,
//! `θ_l ~ Ga(a2)` for `l ≥ 2`, `φ_jh ~ Ga(ν/2, ν/2)`.
//!
//! Integrating `φ_jh` out gives `λ_jh | τ ~ IG(ν/2, ν/(2τ_h))`, which is the
//! density the loadings HMC step targets. Given `Λ`, the full conditional of
//! `θ_h` is generalized inverse Gaussian and `φ_jh = 1/(λ_jh τ_h)` is fixed.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gig::sample_gig;
use super::GammaSampler;
use crate::error::{Error, Result};
use crate::measures::LoadingsMatrix;
use crate::numeric::inv_gamma_log_pdf;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgpHyper {
    pub a1: f64,
    pub a2: f64,
    pub nu: f64,
}

/// Column multipliers `θ_h` and local scales `φ_jh`.
#[derive(Clone, Debug, PartialEq)]
pub struct MgpState {
    pub theta: Vec<f64>,
    pub phi: DMatrix<f64>,
}

impl MgpState {
    /// `τ_h = Π_{l≤h} θ_l`, accumulated in log space.
    pub fn tau(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.theta
            .iter()
            .map(|t| {
                acc += t.ln();
                acc.exp()
            })
            .collect()
    }

    pub fn n_latent(&self) -> usize {
        self.theta.len()
    }

    fn refresh_phi(&mut self, lambda: &DMatrix<f64>) {
        let tau = self.tau();
        self.phi = DMatrix::from_fn(lambda.nrows(), lambda.ncols(), |j, h| 1.0 / (lambda[(j, h)] * tau[h]));
    }
}

impl Default for MgpHyper {
    fn default() -> Self {
        Self {
            a1: 2.5,
            a2: 6.0,
            nu: 6.0,
        }
    }
}

impl MgpHyper {
    pub fn new(a1: f64, a2: f64, nu: f64) -> Result<Self> {
        if !(a1 > 0.0 && a2 > 0.0 && nu > 0.0) {
            return Err(Error::Domain(format!("MGP needs a1, a2, nu > 0, got ({a1}, {a2}, {nu})")));
        }
        Ok(Self { a1, a2, nu })
    }

    fn theta_shape(&self, h: usize) -> f64 {
        if h == 0 {
            self.a1
        } else {
            self.a2
        }
    }

    /// Analytic prior mean `E[λ_jh] = (a1−1)^{-1} (a2−1)^{-(h−1)} ν/(ν−2)` for 1-based `h`.
    pub fn expected_lambda(&self, h: usize) -> Result<f64> {
        if !(self.a1 > 1.0 && self.a2 > 1.0 && self.nu > 2.0) || h == 0 {
            return Err(Error::Domain("E[λ] needs a1 > 1, a2 > 1, nu > 2 and h >= 1".into()));
        }
        Ok((self.a1 - 1.0).recip() * (self.a2 - 1.0).powi(-(h as i32 - 1)) * self.nu / (self.nu - 2.0))
    }

    /// `log π(Λ | θ)` with `φ` integrated out.
    pub fn log_prior(&self, lambda: &DMatrix<f64>, state: &MgpState) -> f64 {
        let tau = state.tau();
        let shape = 0.5 * self.nu;
        let mut total = 0.0;
        for h in 0..lambda.ncols() {
            let scale = 0.5 * self.nu / tau[h];
            for j in 0..lambda.nrows() {
                total += inv_gamma_log_pdf(lambda[(j, h)], shape, scale);
            }
        }
        total
    }

    /// Log prior density of `log Λ` (Jacobian included) and its gradient.
    pub fn log_prior_log_scale(&self, lambda: &DMatrix<f64>, state: &MgpState) -> (f64, DMatrix<f64>) {
        let tau = state.tau();
        let shape = 0.5 * self.nu;
        let mut value = 0.0;
        let mut grad = DMatrix::zeros(lambda.nrows(), lambda.ncols());
        for h in 0..lambda.ncols() {
            let scale = 0.5 * self.nu / tau[h];
            for j in 0..lambda.nrows() {
                let l = lambda[(j, h)];
                value += inv_gamma_log_pdf(l, shape, scale) + l.ln();
                grad[(j, h)] = -shape + scale / l;
            }
        }
        (value, grad)
    }

    /// Gibbs sweep over `θ_1..θ_H` from their GIG full conditionals, then `φ`.
    pub fn update_state<R: Rng + ?Sized>(&self, state: &mut MgpState, lambda: &DMatrix<f64>, rng: &mut R) {
        let n_latent = lambda.ncols();
        let g = lambda.nrows() as f64;
        let half_nu = 0.5 * self.nu;
        for h in 0..n_latent {
            let tau = state.tau();
            let theta_h = state.theta[h];
            let mut b = 0.0;
            for l in h..n_latent {
                let rest = tau[l] / theta_h;
                for j in 0..lambda.nrows() {
                    b += self.nu / (rest * lambda[(j, l)]);
                }
            }
            let p = self.theta_shape(h) - half_nu * g * (n_latent - h) as f64;
            state.theta[h] = sample_gig(rng, p, 2.0, b);
        }
        state.refresh_phi(lambda);
    }

    /// Append a prior-drawn column to `Λ`, returning it.
    pub fn draw_column<G: GammaSampler + ?Sized>(&self, state: &mut MgpState, g: usize, rng: &mut G) -> Vec<f64> {
        let h = state.theta.len();
        state.theta.push(rng.gamma(self.theta_shape(h), 1.0));
        let tau = *state.tau().last().expect("non-empty after push");
        let col: Vec<f64> = (0..g)
            .map(|_| 1.0 / (rng.gamma(0.5 * self.nu, 0.5 * self.nu) * tau))
            .collect();
        let mut phi = state.phi.clone().insert_column(h, 0.0);
        for (j, l) in col.iter().enumerate() {
            phi[(j, h)] = 1.0 / (l * tau);
        }
        state.phi = phi;
        col
    }

    /// Keep only the listed columns (in order).
    pub fn retain_columns(&self, state: &mut MgpState, keep: &[usize]) {
        state.theta = keep.iter().map(|&h| state.theta[h]).collect();
        state.phi = state.phi.select_columns(keep);
    }
}

/// Draw `Λ` (`g×H`) and the hyperstate from the MGP prior.
pub fn sample_mgp_lambda<G: GammaSampler + ?Sized>(
    hyper: &MgpHyper,
    g: usize,
    n_latent: usize,
    rng: &mut G,
) -> Result<(LoadingsMatrix, MgpState)> {
    if g == 0 || n_latent == 0 {
        return Err(Error::Input("MGP draw needs g >= 1 and H >= 1".into()));
    }
    let theta: Vec<f64> = (0..n_latent).map(|h| rng.gamma(hyper.theta_shape(h), 1.0)).collect();
    let phi = DMatrix::from_fn(g, n_latent, |_, _| rng.gamma(0.5 * hyper.nu, 0.5 * hyper.nu));
    let state = MgpState { theta, phi };
    let tau = state.tau();
    let lambda = DMatrix::from_fn(g, n_latent, |j, h| 1.0 / (state.phi[(j, h)] * tau[h]));
    Ok((LoadingsMatrix::new(lambda)?, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Ones;

    impl GammaSampler for Ones {
        fn gamma(&mut self, _shape: f64, _rate: f64) -> f64 {
            1.0
        }
    }

    #[test]
    fn stub_rng_gives_unit_loadings() {
        let (lambda, state) = sample_mgp_lambda(&MgpHyper::default(), 4, 3, &mut Ones).unwrap();
        assert!(lambda.as_matrix().iter().all(|&v| v == 1.0));
        assert_eq!(state.tau(), vec![1.0; 3]);
    }

    #[test]
    fn tau_is_finite_for_64_columns() {
        let state = MgpState {
            theta: vec![50.0; 64],
            phi: DMatrix::zeros(1, 64),
        };
        assert!(state.tau().iter().all(|t| t.is_finite() && *t > 0.0));
    }

    #[test]
    fn monte_carlo_mean_matches_inverse_gamma_moments() {
        let hyper = MgpHyper::new(2.5, 3.0, 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let h_max = 3;
        let mut draws = vec![Vec::with_capacity(n); h_max];
        for _ in 0..n {
            let (l, _) = sample_mgp_lambda(&hyper, 1, h_max, &mut rng).unwrap();
            for h in 0..h_max {
                draws[h].push(l.as_matrix()[(0, h)]);
            }
        }
        let means: Vec<f64> = draws.iter().map(|d| crate::numeric::mean(d)).collect();
        for h in 0..h_max {
            let se = (crate::numeric::variance(&draws[h]) / n as f64).sqrt();
            let expected = hyper.expected_lambda(h + 1).unwrap();
            assert!((means[h] - expected).abs() < 3.0 * se, "h={h}: {} vs {expected} (se {se})", means[h]);
        }
        assert!(means[1] < means[0] && means[2] < means[1]);
    }

    #[test]
    fn draws_are_strictly_positive() {
        let hyper = MgpHyper::new(2.0, 3.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut count = 0;
        while count < 1_000_000 {
            let (l, _) = sample_mgp_lambda(&hyper, 50, 20, &mut rng).unwrap();
            count += 1000;
            assert!(l.as_matrix().iter().all(|&v| v > 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn log_scale_gradient_matches_finite_differences() {
        let hyper = MgpHyper::new(2.0, 3.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lambda, state) = sample_mgp_lambda(&hyper, 3, 2, &mut rng).unwrap();
        let x = lambda.as_matrix().map(f64::ln);
        let (_, grad) = hyper.log_prior_log_scale(lambda.as_matrix(), &state);
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += eps;
            dn[i] -= eps;
            let f = |m: &DMatrix<f64>| hyper.log_prior_log_scale(&m.map(f64::exp), &state).0;
            let fd = (f(&up) - f(&dn)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-2), "{fd} vs {}", grad[i]);
        }
    }

    /// The GIG update must leave `p(θ | Λ)` invariant. Oracle: a long
    /// random-walk Metropolis chain on `log θ_1` targeting the same joint
    /// density `Ga(θ_1 | a1) Π IG(λ | ν/2, ν/(2τ))` with Λ held fixed.
    #[test]
    fn theta_update_agrees_with_metropolis_oracle() {
        let hyper = MgpHyper::new(2.5, 3.0, 4.0).unwrap();
        let lambda = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 1.3, 0.15]);
        let base = MgpState {
            theta: vec![1.0, 3.0],
            phi: DMatrix::zeros(2, 2),
        };
        let log_target = |t1: f64| {
            let s = MgpState {
                theta: vec![t1, base.theta[1]],
                phi: DMatrix::zeros(2, 2),
            };
            crate::numeric::gamma_log_pdf(t1, hyper.a1, 1.0) + hyper.log_prior(&lambda, &s)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x: f64 = 0.0;
        let mut mh = Vec::new();
        for it in 0..400_000 {
            let prop = x + 0.8 * (rng.random::<f64>() - 0.5) * 2.0;
            let log_a = log_target(prop.exp()) + prop - log_target(x.exp()) - x;
            if rng.random::<f64>().ln() < log_a {
                x = prop;
            }
            if it % 4 == 0 {
                mh.push(x.exp());
            }
        }
        let mut gibbs = Vec::new();
        for _ in 0..100_000 {
            // θ_1 is drawn first, conditional on the fixed θ_2.
            let mut s = base.clone();
            hyper.update_state(&mut s, &lambda, &mut rng);
            gibbs.push(s.theta[0]);
        }
        let m_mh = crate::numeric::mean(&mh);
        let m_g = crate::numeric::mean(&gibbs);
        let se = (crate::numeric::variance(&gibbs) / gibbs.len() as f64).sqrt() * 3.0;
        assert!((m_mh - m_g).abs() < 3.0 * se, "mh {m_mh} vs gibbs {m_g}");
    }
}
