//! Log-Gaussian Markov random field on loadings columns:
//! `log λ^h ~ N_g(μ, (τ(F − ρW))^{-1})` with `F = diag(rowsums(W))`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CAR_TAU: f64 = 2.5;
pub const DEFAULT_CAR_RHO: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarSettings {
    pub tau: f64,
    pub rho: f64,
}

impl Default for CarSettings {
    fn default() -> Self {
        Self {
            tau: DEFAULT_CAR_TAU,
            rho: DEFAULT_CAR_RHO,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CarPrior {
    w: DMatrix<f64>,
    rho: f64,
    tau: f64,
    mu: DVector<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl CarPrior {
    /// Builds the prior and caches `½ log det P − (g/2) log 2π`.
    pub fn new(w: DMatrix<f64>, rho: f64, tau: f64, mu: DVector<f64>) -> Result<Self> {
        let g = w.nrows();
        if g == 0 || w.ncols() != g || mu.len() != g {
            return Err(Error::Dimension(format!(
                "adjacency {}x{} with mean of length {}",
                w.nrows(),
                w.ncols(),
                mu.len()
            )));
        }
        if !(rho > 0.0 && rho < 1.0) || !(tau > 0.0) {
            return Err(Error::Domain(format!("need rho in (0,1) and tau > 0, got ({rho}, {tau})")));
        }
        for i in 0..g {
            if w[(i, i)] != 0.0 {
                return Err(Error::Input(format!("adjacency has a self-loop at {i}")));
            }
            for j in 0..g {
                let v = w[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Input(format!("adjacency entry ({i},{j}) = {v} is not 0/1")));
                }
                if v != w[(j, i)] {
                    return Err(Error::Input(format!("adjacency is not symmetric at ({i},{j})")));
                }
            }
        }
        let mut precision = -rho * &w;
        for i in 0..g {
            precision[(i, i)] = w.row(i).sum();
        }
        precision *= tau;
        let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
            Error::Numerical("CAR precision τ(F − ρW) is not positive definite (isolated node?)".into())
        })?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_norm = 0.5 * log_det - 0.5 * g as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(Self {
            w,
            rho,
            tau,
            mu,
            precision,
            log_norm,
        })
    }

    /// Mean `log(1/H)` in every coordinate.
    pub fn with_uniform_mean(w: DMatrix<f64>, settings: CarSettings, n_latent: usize) -> Result<Self> {
        let g = w.nrows();
        let mu = DVector::from_element(g, (1.0 / n_latent as f64).ln());
        Self::new(w, settings.rho, settings.tau, mu)
    }

    /// Adjacency from 0-indexed `(i, j)` pairs; both directions must be listed.
    pub fn adjacency_from_edges(g: usize, edges: &[(usize, usize)]) -> Result<DMatrix<f64>> {
        let mut w = DMatrix::zeros(g, g);
        for &(i, j) in edges {
            if i >= g || j >= g {
                return Err(Error::Input(format!("edge ({i},{j}) out of range for {g} nodes")));
            }
            if i == j {
                return Err(Error::Input(format!("self-loop ({i},{i}) in edge list")));
            }
            w[(i, j)] = 1.0;
        }
        for i in 0..g {
            for j in 0..g {
                if w[(i, j)] != w[(j, i)] {
                    return Err(Error::Input(format!(
                        "edge list is asymmetric: ({i},{j}) present without ({j},{i})"
                    )));
                }
            }
        }
        Ok(w)
    }

    /// Reads an `i,j` edge-list CSV (header optional).
    pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut edges = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Input(format!("edge rows need two columns in {}", path.display())));
            }
            match (rec[0].trim().parse::<usize>(), rec[1].trim().parse::<usize>()) {
                (Ok(i), Ok(j)) => edges.push((i, j)),
                _ if edges.is_empty() => continue,
                _ => {
                    return Err(Error::Input(format!(
                        "bad edge row '{},{}' in {}",
                        &rec[0],
                        &rec[1],
                        path.display()
                    )))
                }
            }
        }
        Ok(edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.w.nrows()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    /// `−½ (x − μ)ᵀ P (x − μ)`.
    pub fn quadratic_term(&self, logcol: &DVector<f64>) -> f64 {
        let d = logcol - &self.mu;
        -0.5 * d.dot(&(&self.precision * &d))
    }

    /// Normalized log density of one log-loadings column and its gradient `−P(x − μ)`.
    pub fn log_density(&self, logcol: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        if logcol.len() != self.n_nodes() {
            return Err(Error::Dimension(format!(
                "column of length {} for {} nodes",
                logcol.len(),
                self.n_nodes()
            )));
        }
        let d = logcol - &self.mu;
        let pd = &self.precision * &d;
        Ok((self.log_norm - 0.5 * d.dot(&pd), -pd))
    }

    /// Sum over the columns of `log Λ` and the gradient matrix.
    pub fn log_density_columns(&self, log_lambda: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let d = log_lambda - DMatrix::from_fn(log_lambda.nrows(), log_lambda.ncols(), |j, _| self.mu[j]);
        let pd = &self.precision * &d;
        let value = log_lambda.ncols() as f64 * self.log_norm - 0.5 * d.component_mul(&pd).sum();
        (value, -pd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn two_node_precision_and_quadratic_form() {
        let car = CarPrior::new(path2(), 0.5, 1.0, DVector::zeros(2)).unwrap();
        assert_eq!(car.precision(), &DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]));
        assert_eq!(car.quadratic_term(&DVector::from_vec(vec![1.0, 0.0])), -0.5);
    }

    #[test]
    fn gradient_vanishes_at_mean() {
        let mu = DVector::from_vec(vec![0.3, -1.2]);
        let car = CarPrior::new(path2(), 0.95, 2.5, mu.clone()).unwrap();
        let (_, grad) = car.log_density(&mu).unwrap();
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let car = CarPrior::new(w, 0.9, 2.5, DVector::from_element(3, (0.25f64).ln())).unwrap();
        let x = DVector::from_vec(vec![0.4, -2.0, 1.1]);
        let (_, grad) = car.log_density(&x).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (car.log_density(&up).unwrap().0 - car.log_density(&dn).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-3));
        }
    }

    #[test]
    fn normalizer_matches_two_dim_closed_form() {
        let car = CarPrior::new(path2(), 0.5, 1.0, DVector::zeros(2)).unwrap();
        let det: f64 = 1.0 - 0.25;
        let expected = 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
        assert!((car.log_normalizer() - expected).abs() < 1e-14);
    }

    #[test]
    fn translation_invariance() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let mu = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let shift = DVector::from_vec(vec![5.0, -1.0, 2.0]);
        let a = CarPrior::new(w.clone(), 0.9, 2.5, mu.clone()).unwrap();
        let b = CarPrior::new(w, 0.9, 2.5, &mu + &shift).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let va = a.log_density(&x).unwrap().0;
        let vb = b.log_density(&(&x + &shift)).unwrap().0;
        assert!((va - vb).abs() < 1e-12);
    }

    #[test]
    fn edge_list_validation() {
        assert!(CarPrior::adjacency_from_edges(2, &[(0, 1), (1, 0)]).is_ok());
        assert!(CarPrior::adjacency_from_edges(2, &[(0, 1)]).is_err());
        assert!(CarPrior::adjacency_from_edges(2, &[(1, 1)]).is_err());
        assert!(CarPrior::adjacency_from_edges(2, &[(0, 2), (2, 0)]).is_err());
    }

    #[test]
    fn isolated_node_is_not_positive_definite() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            CarPrior::new(w, 0.9, 2.5, DVector::zeros(3)),
            Err(Error::Numerical(_))
        ));
    }
}
