//! The Lie algebra `sl(H)` of traceless matrices and the exponential map onto `SL(H)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Generator-sum map onto `sl(H)`:
/// `(X − diag X)ᵀ + Σ_ℓ (X_ℓℓ − X_{ℓ+1,ℓ+1}) E_ℓ` with `E_ℓ = e_ℓe_ℓᵀ − e_{ℓ+1}e_{ℓ+1}ᵀ`.
///
/// The diagonal generators are not orthonormal, so this is not the
/// orthogonal projection; see [`project_sl_orthogonal`].
pub fn project_sl(x: &DMatrix<f64>) -> DMatrix<f64> {
    let h = x.nrows();
    debug_assert_eq!(h, x.ncols());
    let mut out = x.transpose();
    for i in 0..h {
        out[(i, i)] = 0.0;
    }
    for l in 0..h.saturating_sub(1) {
        let t = x[(l, l)] - x[(l + 1, l + 1)];
        out[(l, l)] += t;
        out[(l + 1, l + 1)] -= t;
    }
    if h > 0 {
        // Force an exactly zero trace through the last entry.
        let mut acc = CompensatedSum::new();
        for i in 0..h - 1 {
            acc.add(out[(i, i)]);
        }
        out[(h - 1, h - 1)] = -acc.value();
    }
    out
}

/// Orthogonal projection `Xᵀ − (tr X / H) I`, transposed to match [`project_sl`].
pub fn project_sl_orthogonal(x: &DMatrix<f64>) -> DMatrix<f64> {
    let h = x.nrows();
    let mean = x.trace() / h as f64;
    let mut out = x.transpose();
    for i in 0..h {
        out[(i, i)] -= mean;
    }
    out
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("expm of a {}x{} matrix", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("expm argument is not finite".into()));
    }
    // exp overflows once ‖A‖₁ exceeds ~709.
    let norm1 = (0..a.ncols()).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    if norm1 > 700.0 {
        return Err(Error::Numerical(format!("expm argument norm {norm1:.3e} overflows")));
    }
    let e = a.exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("expm overflowed".into()));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_sum_hand_example() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, -1.0]);
        assert_eq!(project_sl(&x), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 2.0, -2.0]));
        assert_eq!(project_sl(&DMatrix::identity(4, 4)), DMatrix::zeros(4, 4));
    }

    #[test]
    fn orthogonal_variant_removes_mean_trace() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        assert_eq!(project_sl_orthogonal(&x), DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 2.0, 1.0]));
    }

    #[test]
    fn expm_diagonal_and_zero() {
        let e = expm(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]))).unwrap();
        assert!((e[(0, 0)] - std::f64::consts::E).abs() < 1e-14);
        assert!((e[(1, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert!((e.determinant() - 1.0).abs() < 1e-14);
        assert_eq!(expm(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::identity(3, 3));
        assert!(expm(&DMatrix::from_element(2, 2, 1e3)).is_err());
    }
}
