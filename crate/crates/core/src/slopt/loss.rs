use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measures::{atom_gram, symmetrize, TruncatedCoRM};

/// Interpretability loss `L(Q) = Σ_{i<j} G_ij²` with `G = Q C Qᵀ`, where
/// `C = (M diag J) A (M diag J)ᵀ` and `A` holds the atom inner products.
#[derive(Clone, Debug, PartialEq)]
pub struct LossProblem {
    core: DMatrix<f64>,
}

impl LossProblem {
    pub fn new(corm: &TruncatedCoRM) -> Self {
        let b = corm.latent_weights();
        let core = symmetrize(&b * atom_gram(corm.atoms()) * b.transpose());
        Self { core }
    }

    /// Rescaled so the diagonal of `G(I)` averages 1. Minimizers are unchanged.
    pub fn normalized(corm: &TruncatedCoRM) -> Self {
        let mut p = Self::new(corm);
        let mean_diag = p.core.trace() / p.core.nrows() as f64;
        if mean_diag > 0.0 && mean_diag.is_finite() {
            p.core /= mean_diag;
        }
        p
    }

    pub fn n_latent(&self) -> usize {
        self.core.nrows()
    }

    pub fn gram(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(q * &self.core * q.transpose())
    }

    pub fn loss(&self, q: &DMatrix<f64>) -> f64 {
        let g = self.gram(q);
        let h = g.nrows();
        let mut acc = 0.0;
        for j in 0..h {
            for i in 0..j {
                acc += g[(i, j)] * g[(i, j)];
            }
        }
        acc
    }

    /// Loss and Euclidean gradient `2 G_off Q C`.
    pub fn loss_and_grad(&self, q: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let mut g = self.gram(q);
        let h = g.nrows();
        for i in 0..h {
            g[(i, i)] = 0.0;
        }
        let value = 0.25 * g.iter().map(|v| v * v).sum::<f64>() * 2.0;
        let grad = 2.0 * &g * q * &self.core;
        (value, grad)
    }
}

/// `L(Q)` on the raw scale and its Euclidean gradient.
pub fn interp_loss(q: &DMatrix<f64>, corm: &TruncatedCoRM) -> Result<(f64, DMatrix<f64>)> {
    let h = corm.n_latent();
    if q.shape() != (h, h) {
        return Err(Error::Dimension(format!("Q is {}x{}, expected {h}x{h}", q.nrows(), q.ncols())));
    }
    Ok(LossProblem::new(corm).loss_and_grad(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{gram_matrix, Atom};

    fn corm() -> TruncatedCoRM {
        let atoms = vec![Atom::new(-1.0, 1.0).unwrap(), Atom::new(0.5, 0.3).unwrap(), Atom::new(2.0, 2.0).unwrap()];
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.4, 0.2, 0.3, 1.2, 0.9]);
        TruncatedCoRM::new(atoms, vec![0.5, 0.3, 0.7], m).unwrap()
    }

    #[test]
    fn gram_agrees_with_measures_module() {
        let c = corm();
        let q = DMatrix::from_row_slice(2, 2, &[1.2, -0.3, 0.4, 0.9]);
        let a = LossProblem::new(&c).gram(&q);
        let b = gram_matrix(&c, &q).unwrap();
        assert!((a - b).abs().max() < 1e-14);
    }

    #[test]
    fn loss_matches_pair_sum_and_gradient_matches_fd() {
        let c = corm();
        let q = DMatrix::from_row_slice(2, 2, &[1.2, -0.3, 0.4, 0.9]);
        let p = LossProblem::new(&c);
        let g = p.gram(&q);
        let (v, grad) = p.loss_and_grad(&q);
        assert!((v - g[(0, 1)].powi(2)).abs() < 1e-15);
        assert!((p.loss(&q) - v).abs() < 1e-15);
        let h = 1e-6;
        for i in 0..4 {
            let mut up = q.clone();
            let mut dn = q.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (p.loss(&up) - p.loss(&dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-6), "{fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn single_latent_measure_has_zero_loss() {
        let atoms = vec![Atom::new(0.0, 1.0).unwrap()];
        let c = TruncatedCoRM::new(atoms, vec![0.5], DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(interp_loss(&DMatrix::identity(1, 1), &c).unwrap().0, 0.0);
    }
}
