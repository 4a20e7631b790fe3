//! Hamiltonian Monte Carlo with an identity mass matrix and
//! dual-averaging step-size adaptation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcSettings {
    pub n_leapfrog: usize,
    pub target_accept: f64,
    pub initial_step: f64,
}

impl Default for HmcSettings {
    fn default() -> Self {
        Self {
            n_leapfrog: 10,
            target_accept: 0.75,
            initial_step: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HmcOutcome {
    pub accepted: bool,
    pub accept_prob: f64,
    /// `H(end) − H(start)`; `NaN` when the trajectory diverged.
    pub energy_error: f64,
}

/// One HMC transition on `x` targeting `exp(f)`, where `target(x)` returns
/// `(f(x), ∇f(x))`. Non-finite values along the trajectory reject the move.
pub fn hmc_step<R, F>(x: &mut [f64], target: F, step: f64, n_leapfrog: usize, rng: &mut R) -> HmcOutcome
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x.len();
    let p0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let (f0, g0) = target(x);
    let kinetic0: f64 = 0.5 * p0.iter().map(|p| p * p).sum::<f64>();
    let rejected = HmcOutcome {
        accepted: false,
        accept_prob: 0.0,
        energy_error: f64::NAN,
    };
    if !f0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        log::warn!("HMC started from a non-finite log target; move rejected");
        return rejected;
    }
    let mut q = x.to_vec();
    let mut p = p0;
    let mut grad = g0;
    let mut f = f0;
    for _ in 0..n_leapfrog {
        for i in 0..n {
            p[i] += 0.5 * step * grad[i];
            q[i] += step * p[i];
        }
        let (fv, gv) = target(&q);
        if !fv.is_finite() || gv.iter().any(|g| !g.is_finite()) {
            log::debug!("HMC trajectory diverged; move rejected");
            return rejected;
        }
        f = fv;
        grad = gv;
        for i in 0..n {
            p[i] += 0.5 * step * grad[i];
        }
    }
    let kinetic: f64 = 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let energy_error = (-f + kinetic) - (-f0 + kinetic0);
    let accept_prob = (-energy_error).exp().min(1.0);
    let accepted = rng.random::<f64>() < accept_prob;
    if accepted {
        x.copy_from_slice(&q);
    }
    HmcOutcome {
        accepted,
        accept_prob: if accept_prob.is_nan() { 0.0 } else { accept_prob },
        energy_error,
    }
}

/// Nesterov dual averaging of `log step` toward a target acceptance rate.
#[derive(Clone, Debug, PartialEq)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    log_step: f64,
    log_step_bar: f64,
    h_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            target,
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
            h_bar: 0.0,
            t: 0.0,
        }
    }

    /// Step size for the next adaptive transition.
    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step size, used once adaptation stops.
    pub fn final_step(&self) -> f64 {
        if self.t == 0.0 {
            self.step()
        } else {
            self.log_step_bar.exp()
        }
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_step = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(x: &[f64]) -> (f64, Vec<f64>) {
        let v = -0.5 * (x[0] * x[0] + x[1] * x[1] / 4.0);
        (v, vec![-x[0], -x[1] / 4.0])
    }

    #[test]
    fn samples_a_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![0.0, 0.0];
        let mut da = DualAveraging::new(0.1, 0.75);
        for _ in 0..1000 {
            let out = hmc_step(&mut x, gauss, da.step(), 10, &mut rng);
            da.update(out.accept_prob);
        }
        let step = da.final_step();
        let n = 40_000;
        let (mut s0, mut s1, mut acc) = (0.0, 0.0, 0);
        for _ in 0..n {
            let out = hmc_step(&mut x, gauss, step, 10, &mut rng);
            acc += out.accepted as usize;
            s0 += x[0] * x[0];
            s1 += x[1] * x[1];
        }
        let rate = acc as f64 / n as f64;
        assert!(rate > 0.6 && rate < 0.95, "acceptance {rate}");
        assert!((s0 / n as f64 - 1.0).abs() < 0.05);
        assert!((s1 / n as f64 - 4.0).abs() < 0.25);
    }

    #[test]
    fn divergent_target_rejects() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = vec![1.0];
        let out = hmc_step(&mut x, |q| (if q[0] == 1.0 { 0.0 } else { f64::NAN }, vec![1.0]), 0.1, 3, &mut rng);
        assert!(!out.accepted);
        assert_eq!(x, [1.0]);
    }
}
