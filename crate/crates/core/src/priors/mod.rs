//! Prior distributions for the truncated model.
//!
//! - scores `m_hk ~ Ga(φ)` (shape φ, rate 1)
//! - jumps `J_k ~ Beta(φ/K, φ)`
//! - atoms from a Normal-inverse-Gamma base measure
//! - loadings under a multiplicative gamma process or a log-CAR field

mod car;
mod gig;
mod mgp;
mod nig;

pub use car::{CarPrior, CarSettings};
pub use gig::{sample_gig, sample_log_concave};
pub use mgp::{sample_mgp_lambda, MgpHyper, MgpState};
pub use nig::NigBase;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::numeric::ln_beta;

/// Source of gamma variates. Every `rand::Rng` is one; tests swap in stubs.
pub trait GammaSampler {
    /// Draw from Ga(shape, rate).
    fn gamma(&mut self, shape: f64, rate: f64) -> f64;
}

impl<R: Rng + ?Sized> GammaSampler for R {
    fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        // Marsaglia-Tsang squeeze rejection inside rand_distr.
        Gamma::new(shape, 1.0 / rate)
            .expect("gamma parameters validated by caller")
            .sample(self)
    }
}

/// Unnormalized `Σ_hk [(φ−1) log m_hk − m_hk]` and its gradient in `m`.
pub fn log_prior_scores(m: &DMatrix<f64>, phi: f64) -> Result<(f64, DMatrix<f64>)> {
    if !(phi > 0.0) {
        return Err(Error::Domain(format!("score shape phi must be positive, got {phi}")));
    }
    if let Some(v) = m.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("score {v} is not positive")));
    }
    let value = m.iter().map(|&v| (phi - 1.0) * v.ln() - v).sum();
    let grad = m.map(|v| (phi - 1.0) / v - 1.0);
    Ok((value, grad))
}

/// Unnormalized Beta(φ/K, φ) log density summed over the jumps.
pub fn log_prior_jumps(jumps: &[f64], phi: f64, k: usize) -> Result<f64> {
    if !(phi > 0.0) || k == 0 {
        return Err(Error::Domain(format!("need phi > 0 and K >= 1, got ({phi}, {k})")));
    }
    let a = phi / k as f64;
    let mut total = 0.0;
    for &j in jumps {
        if !(j > 0.0 && j < 1.0) {
            return Err(Error::Domain(format!("jump {j} outside (0, 1)")));
        }
        total += (a - 1.0) * j.ln() + (phi - 1.0) * (-j).ln_1p();
    }
    Ok(total)
}

/// `log B(φ/K, φ)`, the per-jump normalizer omitted by [`log_prior_jumps`].
pub fn jump_log_normalizer(phi: f64, k: usize) -> f64 {
    ln_beta(phi / k as f64, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{linspace, trapezoid};

    #[test]
    fn exponential_scores() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 1.5, 2.0, 0.1]);
        let (v, _) = log_prior_scores(&m, 1.0).unwrap();
        assert!((v + 4.1).abs() < 1e-14);
        let (v, g) = log_prior_scores(&DMatrix::from_element(1, 1, 1.0), 2.0).unwrap();
        assert_eq!(v, -1.0);
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let m = DMatrix::from_row_slice(2, 3, &[0.3, 1.7, 2.2, 0.9, 0.05, 4.0]);
        let phi = 1.7;
        let (_, g) = log_prior_scores(&m, phi).unwrap();
        let h = 1e-6;
        for i in 0..m.len() {
            let mut up = m.clone();
            let mut dn = m.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (log_prior_scores(&up, phi).unwrap().0 - log_prior_scores(&dn, phi).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn nonpositive_score_rejected() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(matches!(log_prior_scores(&m, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn jumps_reduce_to_beta_one_phi() {
        let j = [0.1, 0.4, 0.75];
        let phi = 3.0;
        let v = log_prior_jumps(&j, phi, 3).unwrap();
        let expected: f64 = j.iter().map(|x| (phi - 1.0) * (1.0 - x).ln()).sum();
        assert!((v - expected).abs() < 1e-13);
    }

    #[test]
    fn jump_density_vanishes_at_one() {
        let near = log_prior_jumps(&[1.0 - 1e-15], 2.0, 4).unwrap();
        assert!(near < -30.0);
        assert!(log_prior_jumps(&[1.0], 2.0, 4).is_err());
        assert!(log_prior_jumps(&[0.0], 2.0, 4).is_err());
    }

    #[test]
    fn jump_density_integrates_to_one() {
        let xs = linspace(1e-9, 1.0 - 1e-9, 100_001);
        let norm = jump_log_normalizer(2.0, 1);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| (log_prior_jumps(&[x], 2.0, 1).unwrap() - norm).exp())
            .collect();
        assert!((trapezoid(&xs, &ys) - 1.0).abs() < 1e-6);
    }
}
