//! Positivity-constrained loss minimization by an augmented Lagrangian outer loop.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::loss::LossProblem;
use super::rattle::{rattle_minimize, RattleConfig};
use crate::error::{Error, Result};
use crate::measures::{LoadingsMatrix, TruncatedCoRM};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// `(ρ/2) Σ max(0, γ/ρ + c)²`
    #[default]
    Hinge,
    /// `(ρ/2) Σ max(0, (γ/ρ) c)`.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmConfig {
    pub rho: f64,
    pub gamma: f64,
    pub eps: f64,
    pub eps_star: f64,
    /// Multiplier applied to `ρ` after every outer iteration.
    pub rho_factor: f64,
    /// Upper bound on `ρ` when `rho_factor > 1`.
    pub rho_max: Option<f64>,
    pub max_outer: usize,
    /// Feasibility tolerance used for the success flag.
    pub tol: f64,
    pub penalty: PenaltyForm,
    pub rattle: RattleConfig,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            rho: 10.0,
            gamma: 10.0,
            eps: 1e-2,
            eps_star: 1e-6,
            rho_factor: 0.9,
            rho_max: None,
            max_outer: 200,
            tol: 1e-6,
            penalty: PenaltyForm::Hinge,
            rattle: RattleConfig::default(),
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.gamma >= 0.0 && self.rho_factor > 0.0) {
            return Err(Error::Config(format!(
                "ALM needs rho > 0, gamma >= 0, rho_factor > 0 (got {}, {}, {})",
                self.rho, self.gamma, self.rho_factor
            )));
        }
        if !(self.eps >= self.eps_star && self.eps_star > 0.0) {
            return Err(Error::Config(format!("ALM needs eps >= eps_star > 0 (got {}, {})", self.eps, self.eps_star)));
        }
        if self.max_outer == 0 {
            return Err(Error::Config("ALM max_outer must be at least 1".into()));
        }
        self.rattle.validate()
    }
}

/// Penalty parameter, multipliers and thresholds of the outer loop.
#[derive(Clone, Debug, PartialEq)]
pub struct AlmState {
    pub rho: f64,
    /// One multiplier per scalar constraint: `c¹` column-major, then `c²` column-major.
    pub gamma: Vec<f64>,
    pub eps: f64,
    pub eps_star: f64,
}

impl AlmState {
    pub fn new(cfg: &AlmConfig, n_constraints: usize) -> Self {
        Self {
            rho: cfg.rho,
            gamma: vec![cfg.gamma; n_constraints],
            eps: cfg.eps,
            eps_star: cfg.eps_star,
        }
    }
}

/// Loss plus the constraints `−Λ̃Q⁻¹ ≤ 0` and `−QM̃ ≤ 0`.
///
/// `Λ̃` has rows scaled to sum 1 and `M̃` has columns scaled to sum 1; positive
/// rescaling leaves the feasible set unchanged and keeps the penalty on the
/// same scale as the normalized loss.
#[derive(Clone, Debug)]
pub struct AlmProblem {
    loss: LossProblem,
    lambda: DMatrix<f64>,
    scores: DMatrix<f64>,
    penalty: PenaltyForm,
}

fn normalize_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    out
}

impl AlmProblem {
    pub fn new(corm: &TruncatedCoRM, lambda: &LoadingsMatrix, penalty: PenaltyForm) -> Result<Self> {
        if lambda.n_latent() != corm.n_latent() {
            return Err(Error::Dimension(format!(
                "Λ has {} columns but the CoRM has {} latent measures",
                lambda.n_latent(),
                corm.n_latent()
            )));
        }
        Ok(Self {
            loss: LossProblem::normalized(corm),
            lambda: normalize_rows(lambda.as_matrix()),
            scores: normalize_rows(&corm.scores().transpose()).transpose(),
            penalty,
        })
    }

    pub fn loss_problem(&self) -> &LossProblem {
        &self.loss
    }

    pub fn n_constraints(&self) -> usize {
        self.lambda.len() + self.scores.len()
    }

    /// `(c¹, c², Q⁻¹)`.
    pub fn constraints(&self, q: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let qinv = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("Q is singular".into()))?;
        let c1 = -(&self.lambda * &qinv);
        let c2 = -(q * &self.scores);
        Ok((c1, c2, qinv))
    }

    /// Largest positive constraint value, 0 when feasible.
    pub fn max_violation(&self, q: &DMatrix<f64>) -> Result<f64> {
        let (c1, c2, _) = self.constraints(q)?;
        Ok(c1.iter().chain(c2.iter()).fold(0.0f64, |m, &c| m.max(c)))
    }

    /// Augmented loss and its Euclidean gradient.
    pub fn augmented(&self, q: &DMatrix<f64>, state: &AlmState) -> Result<(f64, DMatrix<f64>)> {
        if state.gamma.len() != self.n_constraints() {
            return Err(Error::Dimension(format!(
                "{} multipliers for {} constraints",
                state.gamma.len(),
                self.n_constraints()
            )));
        }
        let (mut value, mut grad) = self.loss.loss_and_grad(q);
        let (c1, c2, qinv) = self.constraints(q)?;
        let rho = state.rho;
        let n1 = c1.len();
        // w_j = ∂penalty/∂c_j
        let mut w1 = DMatrix::zeros(c1.nrows(), c1.ncols());
        let mut w2 = DMatrix::zeros(c2.nrows(), c2.ncols());
        let mut pen = 0.0;
        for (i, (&c, &g)) in c1.iter().chain(c2.iter()).zip(&state.gamma).enumerate() {
            let w = match self.penalty {
                PenaltyForm::Hinge => {
                    let a = (g + rho * c).max(0.0);
                    pen += a * a / (2.0 * rho);
                    a
                }
                PenaltyForm::Literal => {
                    if g * c > 0.0 {
                        pen += 0.5 * g * c;
                        0.5 * g
                    } else {
                        0.0
                    }
                }
            };
            if i < n1 {
                w1[i] = w;
            } else {
                w2[i - n1] = w;
            }
        }
        value += pen;
        // c¹ = −Λ̃Q⁻¹ and d(Q⁻¹) = −Q⁻¹ dQ Q⁻¹
        let qinv_t = qinv.transpose();
        grad += &qinv_t * self.lambda.transpose() * &w1 * &qinv_t;
        grad -= &w2 * self.scores.transpose();
        Ok((value, grad))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformResult {
    pub q: DMatrix<f64>,
    /// `L(Q)` on the raw scale.
    pub loss: f64,
    pub loss_identity: f64,
    pub max_violation: f64,
    pub max_det_dev: f64,
    pub converged: bool,
    /// Converged, feasible within tolerance, and no worse than the identity.
    pub success: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

/// Unconstrained minimization of the normalized loss from `Q = I`.
pub fn unconstrained_start(corm: &TruncatedCoRM, cfg: &AlmConfig) -> Result<DMatrix<f64>> {
    let loss = LossProblem::normalized(corm);
    let h = corm.n_latent();
    let out = rattle_minimize(|q| Ok(loss.loss_and_grad(q)), &DMatrix::identity(h, h), &cfg.rattle, cfg.eps_star)?;
    Ok(out.q)
}

/// Runs the outer loop from `q0` (the unconstrained minimizer when `None`).
pub fn alm_solve(
    corm: &TruncatedCoRM,
    lambda: &LoadingsMatrix,
    cfg: &AlmConfig,
    q0: Option<&DMatrix<f64>>,
) -> Result<TransformResult> {
    cfg.validate()?;
    let problem = AlmProblem::new(corm, lambda, cfg.penalty)?;
    let h = corm.n_latent();
    let raw = LossProblem::new(corm);
    let identity = DMatrix::identity(h, h);
    let loss_identity = raw.loss(&identity);

    let mut q = match q0 {
        Some(q) if q.shape() == (h, h) => q.clone(),
        Some(q) => {
            return Err(Error::Dimension(format!("warm start is {}x{}, expected {h}x{h}", q.nrows(), q.ncols())));
        }
        None => unconstrained_start(corm, cfg)?,
    };

    let mut state = AlmState::new(cfg, problem.n_constraints());
    let mut best = (loss_identity, identity.clone(), 0.0);
    let mut max_det_dev = 0.0f64;
    let mut inner = 0;
    let mut outer = 0;
    let mut converged = false;

    while outer < cfg.max_outer {
        outer += 1;
        let out = rattle_minimize(|x| problem.augmented(x, &state), &q, &cfg.rattle, state.eps)?;
        inner += out.iterations;
        max_det_dev = max_det_dev.max(out.max_det_dev);
        let q_new = out.q;
        let (c1, c2, _) = problem.constraints(&q_new)?;
        for (g, &c) in state.gamma.iter_mut().zip(c1.iter().chain(c2.iter())) {
            *g = (*g + state.rho * c).max(0.0);
        }
        state.rho *= cfg.rho_factor;
        if let Some(cap) = cfg.rho_max {
            state.rho = state.rho.min(cap);
        }
        state.eps = (0.9 * state.eps).max(state.eps_star);
        let moved = (&q_new - &q).norm();
        q = q_new;
        let viol = c1.iter().chain(c2.iter()).fold(0.0f64, |m, &c| m.max(c));
        log::trace!("outer {outer} rho {:.3e} eps {:.3e} viol {viol:.3e} moved {moved:.3e} inner {} loss {:.3e}", state.rho, state.eps, out.iterations, raw.loss(&q));
        if viol <= cfg.tol {
            let l = raw.loss(&q);
            if l < best.0 {
                best = (l, q.clone(), viol);
            }
        }
        if state.eps <= state.eps_star && moved <= state.eps {
            converged = true;
            break;
        }
    }

    let loss = raw.loss(&q);
    let max_violation = problem.max_violation(&q)?;
    let success = converged && max_violation <= cfg.tol && loss <= loss_identity;
    if success {
        return Ok(TransformResult {
            q,
            loss,
            loss_identity,
            max_violation,
            max_det_dev,
            converged,
            success,
            outer_iterations: outer,
            inner_iterations: inner,
        });
    }
    log::debug!(
        "ALM did not succeed (converged {converged}, violation {max_violation:.3e}, loss {loss:.3e} vs {loss_identity:.3e}); returning best feasible iterate"
    );
    let (loss, q, max_violation) = best;
    Ok(TransformResult {
        q,
        loss,
        loss_identity,
        max_violation,
        max_det_dev,
        converged,
        success: false,
        outer_iterations: outer,
        inner_iterations: inner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Atom;

    fn instance() -> (TruncatedCoRM, LoadingsMatrix) {
        let atoms = vec![
            Atom::new(-2.0, 1.0).unwrap(),
            Atom::new(0.0, 1.0).unwrap(),
            Atom::new(2.0, 1.0).unwrap(),
        ];
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.6, 0.2, 0.2, 0.7, 1.1]);
        let corm = TruncatedCoRM::new(atoms, vec![0.4, 0.5, 0.3], m).unwrap();
        let lambda = LoadingsMatrix::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.3, 1.2, 0.8, 0.8])).unwrap();
        (corm, lambda)
    }

    fn fd_check(problem: &AlmProblem, state: &AlmState, q: &DMatrix<f64>) {
        let (_, grad) = problem.augmented(q, state).unwrap();
        let h = 1e-6;
        for i in 0..q.len() {
            let mut up = q.clone();
            let mut dn = q.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (problem.augmented(&up, state).unwrap().0 - problem.augmented(&dn, state).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-4), "entry {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn augmented_gradient_matches_fd_with_active_constraints() {
        let (corm, lambda) = instance();
        let problem = AlmProblem::new(&corm, &lambda, PenaltyForm::Hinge).unwrap();
        let mut state = AlmState::new(&AlmConfig::default(), problem.n_constraints());
        state.gamma.iter_mut().enumerate().for_each(|(i, g)| *g = 0.1 * i as f64);
        let q = DMatrix::from_row_slice(2, 2, &[1.3, -0.6, -0.2, 0.7]);
        assert!(problem.max_violation(&q).unwrap() > 0.0);
        fd_check(&problem, &state, &q);
    }

    #[test]
    fn literal_penalty_gradient_matches_fd() {
        let (corm, lambda) = instance();
        let problem = AlmProblem::new(&corm, &lambda, PenaltyForm::Literal).unwrap();
        let state = AlmState::new(&AlmConfig::default(), problem.n_constraints());
        fd_check(&problem, &state, &DMatrix::from_row_slice(2, 2, &[1.3, -0.6, -0.2, 0.7]));
    }

    #[test]
    fn slack_constraints_add_nothing() {
        let (corm, lambda) = instance();
        let problem = AlmProblem::new(&corm, &lambda, PenaltyForm::Hinge).unwrap();
        let mut state = AlmState::new(&AlmConfig::default(), problem.n_constraints());
        state.gamma.fill(0.0);
        let q = DMatrix::identity(2, 2);
        let (v, _) = problem.augmented(&q, &state).unwrap();
        assert_eq!(v, problem.loss_problem().loss(&q));
    }

    #[test]
    fn penalty_is_quadratic_in_violation() {
        let (corm, lambda) = instance();
        let problem = AlmProblem::new(&corm, &lambda, PenaltyForm::Hinge).unwrap();
        let mut state = AlmState::new(&AlmConfig::default(), problem.n_constraints());
        state.gamma.fill(0.0);
        // Q = diag(a, 1/a) with a < 0 flips the sign of row 0 of QM.
        let pen = |a: f64| {
            let q = DMatrix::from_row_slice(2, 2, &[-a, 0.0, 0.0, -1.0 / a]);
            problem.augmented(&q, &state).unwrap().0 - problem.loss_problem().loss(&q)
        };
        assert!(pen(1.0) > 0.0);
        let q2 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let (c1, c2, _) = problem.constraints(&q2).unwrap();
        let expected: f64 = c1.iter().chain(c2.iter()).map(|c| 0.5 * 10.0 * c.max(0.0).powi(2)).sum();
        assert!((pen(1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn separated_measures_keep_identity() {
        let atoms = vec![Atom::new(-50.0, 1.0).unwrap(), Atom::new(50.0, 1.0).unwrap()];
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1e-9, 1e-9, 1.0]);
        let corm = TruncatedCoRM::new(atoms, vec![0.5, 0.5], m).unwrap();
        let lambda = LoadingsMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.4, 1.0])).unwrap();
        assert!(LossProblem::new(&corm).loss(&DMatrix::identity(2, 2)) < 1e-10);
        let res = alm_solve(&corm, &lambda, &AlmConfig::default(), None).unwrap();
        assert!(res.max_violation <= 1e-6);
        assert!((res.q - DMatrix::identity(2, 2)).norm() < 1e-2);
    }

    #[test]
    fn mixed_measures_are_unmixed() {
        // Mix two separated latent measures with a positive R, det R = 1.
        let atoms = vec![Atom::new(-6.0, 1.0).unwrap(), Atom::new(6.0, 1.0).unwrap()];
        let m0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mut r: DMatrix<f64> = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.2, 1.0]);
        r /= r.determinant().sqrt();
        let m = &r * &m0 + DMatrix::from_element(2, 2, 1e-12);
        let corm = TruncatedCoRM::new(atoms, vec![0.5, 0.5], m).unwrap();
        let lambda = LoadingsMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let rinv = r.clone().try_inverse().unwrap();
        let oracle = LossProblem::new(&corm).loss(&rinv);
        let res = alm_solve(&corm, &lambda, &AlmConfig::default(), None).unwrap();
        assert!(res.success, "{res:?}");
        assert!(res.loss <= oracle + 1e-6, "{} vs {oracle}", res.loss);
        assert!(res.loss < res.loss_identity);
    }
}
