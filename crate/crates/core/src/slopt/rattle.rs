//! Momentum descent on `SL(H)` with an exponential retraction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lie::{expm, project_sl, project_sl_orthogonal};
use crate::error::{Error, Result};

/// Accepted steps between step-size increases once the step has settled.
const GROW_EVERY: usize = 10;

/// Which matrix is fed to the algebra map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tangent {
    /// `Π(∇ᵀ Q)`: the left-trivialized gradient, a descent direction for `Q exp(X)` at every `Q`.
    #[default]
    LeftTranslated,
    /// `Π(∇ᵀ)`, exactly as written; a descent direction only near `Q = I`.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    #[default]
    GeneratorSum,
    Orthogonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RattleConfig {
    /// Initial step size `s`.
    pub step: f64,
    /// Momentum `τ`.
    pub momentum: f64,
    pub max_iters: usize,
    /// Ceiling for the adaptive step.
    pub max_step: f64,
    /// Grow `s` on accepted steps and cut it on loss increases. Off means the fixed-step rule.
    pub adaptive: bool,
    pub tangent: Tangent,
    pub projection: Projection,
}

impl Default for RattleConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            momentum: 0.9,
            max_iters: 5000,
            max_step: 0.05,
            adaptive: true,
            tangent: Tangent::default(),
            projection: Projection::default(),
        }
    }
}

impl RattleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("rattle step must be positive, got {}", self.step)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!("rattle momentum must lie in (0, 1), got {}", self.momentum)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("rattle max_iters must be at least 1".into()));
        }
        if self.adaptive && !(self.max_step >= self.step) {
            return Err(Error::Config(format!(
                "rattle max_step {} is below the initial step {}",
                self.max_step, self.step
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RattleOutcome {
    pub q: DMatrix<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `|det Q − 1|` seen over the iterates, before the determinant correction.
    pub max_det_dev: f64,
}

fn direction(q: &DMatrix<f64>, grad: &DMatrix<f64>, cfg: &RattleConfig) -> DMatrix<f64> {
    let x = match cfg.tangent {
        Tangent::LeftTranslated => grad.transpose() * q,
        Tangent::Literal => grad.transpose(),
    };
    match cfg.projection {
        Projection::GeneratorSum => project_sl(&x),
        Projection::Orthogonal => project_sl_orthogonal(&x),
    }
}

/// Retraction `Q exp(χP)` followed by a rescale that pins `det = 1`.
fn retract(q: &DMatrix<f64>, p: &DMatrix<f64>, chi: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut next = q * expm(&(p * chi))?;
    let det = next.determinant();
    if !(det > 0.0 && det.is_finite()) {
        return Err(Error::Numerical(format!("retraction produced det {det}")));
    }
    let dev = (det - 1.0).abs();
    if dev > 0.0 {
        next *= det.powf(-1.0 / q.nrows() as f64);
    }
    Ok((next, dev))
}

/// Minimizes `f` over `SL(H)` from `q0`, stopping when successive iterates are `eps` apart.
pub fn rattle_minimize<F>(f: F, q0: &DMatrix<f64>, cfg: &RattleConfig, eps: f64) -> Result<RattleOutcome>
where
    F: Fn(&DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>,
{
    cfg.validate()?;
    let det0 = q0.determinant();
    if !((det0 - 1.0).abs() <= 1e-6) {
        return Err(Error::Domain(format!("starting point has det {det0}, not on SL(H)")));
    }
    let h = q0.nrows();
    let tau = cfg.momentum;
    let chi = (-tau.ln()).cosh();
    let mut q = q0.clone();
    let (mut value, grad) = f(&q)?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("objective is {value} at the starting point")));
    }
    let mut d = direction(&q, &grad, cfg);
    let mut p = DMatrix::zeros(h, h);
    let mut s = cfg.step;
    let mut settled = !cfg.adaptive;
    let mut rejections = 0usize;
    let mut streak = 0usize;
    let mut max_det_dev = (det0 - 1.0).abs();

    for it in 1..=cfg.max_iters {
        let p_half = (&p - &d * s) * tau;
        let trial = retract(&q, &p_half, chi).and_then(|(qn, dev)| {
            let (v, g) = f(&qn)?;
            Ok((qn, dev, v, g))
        });
        let (q_new, dev, v_new, g_new) = match trial {
            Ok(t) if t.2.is_finite() && !(cfg.adaptive && t.2 > value) => t,
            Ok(_) | Err(Error::Numerical(_)) if cfg.adaptive => {
                // Drop the momentum first; shrink the step only if a plain gradient step also fails.
                if p.iter().any(|v| *v != 0.0) {
                    p.fill(0.0);
                } else {
                    s *= 0.5;
                    settled = true;
                }
                rejections += 1;
                streak = 0;
                if s < 1e-300 {
                    return Ok(RattleOutcome { q, value, iterations: it, converged: true, max_det_dev });
                }
                continue;
            }
            Ok(t) => {
                return Err(Error::Numerical(format!("objective became {} at iteration {it}", t.2)));
            }
            Err(e) => return Err(e),
        };
        max_det_dev = max_det_dev.max(dev);
        let d_new = direction(&q_new, &g_new, cfg);
        p = (&p_half - &d_new * s) * tau;
        let moved = (&q_new - &q).norm();
        q = q_new;
        value = v_new;
        d = d_new;
        if cfg.adaptive {
            if !settled {
                s = (2.0 * s).min(cfg.max_step);
                settled = s >= cfg.max_step;
            } else {
                streak += 1;
                if streak % GROW_EVERY == 0 {
                    s = (1.5 * s).min(cfg.max_step);
                }
            }
        }
        let scaled = if cfg.adaptive { moved * (cfg.max_step / s) } else { moved };
        if p.iter().all(|v| *v == 0.0) || (settled && scaled <= eps) {
            log::trace!("rattle converged at {it}: value {value:.6e}, step {s:.3e}, {rejections} rejections");
            return Ok(RattleOutcome { q, value, iterations: it, converged: true, max_det_dev });
        }
    }
    log::trace!("rattle hit max_iters: value {value:.6e}, step {s:.3e}, |P| {:.3e}, |d| {:.3e}, {rejections} rejections", p.norm(), d.norm());
    Ok(RattleOutcome { q, value, iterations: cfg.max_iters, converged: false, max_det_dev })
}
