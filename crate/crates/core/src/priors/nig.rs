//! Normal-inverse-Gamma base measure for the Gaussian atoms:
//! `σ² ~ IG(a, b)`, `μ | σ² ~ N(μ0, σ²/λ0)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::GammaSampler;
use crate::error::{Error, Result};
use crate::measures::Atom;
use crate::numeric::{inv_gamma_log_pdf, normal_log_pdf};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NigBase {
    pub mu0: f64,
    pub lambda0: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for NigBase {
    fn default() -> Self {
        Self {
            mu0: 0.0,
            lambda0: 0.01,
            a: 2.0,
            b: 2.0,
        }
    }
}

impl NigBase {
    pub fn new(mu0: f64, lambda0: f64, a: f64, b: f64) -> Result<Self> {
        let base = Self { mu0, lambda0, a, b };
        base.validate()?;
        Ok(base)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() || !(self.lambda0 > 0.0) || !(self.a > 0.0) || !(self.b > 0.0) {
            return Err(Error::Domain(format!(
                "NIG needs finite mu0 and positive lambda0, a, b; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Conjugate update given the observations currently allocated to an atom.
    pub fn posterior(&self, ys: &[f64]) -> NigBase {
        let n = ys.len() as f64;
        if ys.is_empty() {
            return *self;
        }
        let ybar = ys.iter().sum::<f64>() / n;
        let ss: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
        let lambda = self.lambda0 + n;
        NigBase {
            mu0: (self.lambda0 * self.mu0 + n * ybar) / lambda,
            lambda0: lambda,
            a: self.a + 0.5 * n,
            b: self.b + 0.5 * ss + self.lambda0 * n * (ybar - self.mu0).powi(2) / (2.0 * lambda),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Atom {
        let prec = rng.gamma(self.a, self.b);
        let sigma2 = 1.0 / prec;
        let mu = Normal::new(self.mu0, (sigma2 / self.lambda0).sqrt())
            .expect("finite NIG parameters")
            .sample(rng);
        Atom { mu, sigma2 }
    }

    pub fn log_density(&self, atom: &Atom) -> f64 {
        inv_gamma_log_pdf(atom.sigma2, self.a, self.b)
            + normal_log_pdf(atom.mu, self.mu0, atom.sigma2 / self.lambda0)
    }
}
