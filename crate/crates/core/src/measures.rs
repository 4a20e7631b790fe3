//! Atomic measures, Gaussian mixture densities and their closed-form L2 geometry.
//!
//! A truncated compound random measure holds `K` shared atoms `θ*_k`, `K`
//! shared jumps `J_k` and an `H×K` score matrix `M`. Latent measure `h` is
//!
//! ```text
//! μ*_h = Σ_k m_hk J_k δ_{θ*_k}
//! ```
//!
//! and group `j` mixes the latent measures through a positive loadings matrix
//! `Λ`, giving weights `(ΛM)_jk J_k` on the same atoms. Every density here
//! uses the univariate Gaussian kernel, so the L2 inner product of two kernel
//! components has the closed form `∫N(y|a)N(y|b)dy = N(μ_a | μ_b, σ²_a + σ²_b)`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, linspace, normal_pdf};

/// Number of points in the default evaluation grid.
pub const DEFAULT_GRID_POINTS: usize = 500;

/// Gaussian kernel parameters `(μ, σ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mu: f64,
    pub sigma2: f64,
}

impl Atom {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma2.is_finite() || sigma2 <= 0.0 {
            return Err(Error::Domain(format!(
                "atom requires finite mu and sigma2 > 0, got ({mu}, {sigma2})"
            )));
        }
        Ok(Self { mu, sigma2 })
    }

    pub fn density(&self, y: f64) -> f64 {
        normal_pdf(y, self.mu, self.sigma2)
    }
}

/// Truncated CoRM: `K` atoms and jumps shared by `H` latent measures.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedCoRM {
    atoms: Vec<Atom>,
    jumps: Vec<f64>,
    scores: DMatrix<f64>,
}

impl TruncatedCoRM {
    pub fn new(atoms: Vec<Atom>, jumps: Vec<f64>, scores: DMatrix<f64>) -> Result<Self> {
        let k = atoms.len();
        if k == 0 || scores.nrows() == 0 {
            return Err(Error::Input("CoRM needs K >= 1 and H >= 1".into()));
        }
        if jumps.len() != k || scores.ncols() != k {
            return Err(Error::Dimension(format!(
                "{} atoms, {} jumps, scores {}x{}",
                k,
                jumps.len(),
                scores.nrows(),
                scores.ncols()
            )));
        }
        if let Some(j) = jumps.iter().find(|&&j| !(j > 0.0 && j < 1.0)) {
            return Err(Error::Domain(format!("jump {j} outside (0, 1)")));
        }
        if let Some(m) = scores.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Domain(format!("score {m} is not strictly positive")));
        }
        Ok(Self {
            atoms,
            jumps,
            scores,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn n_latent(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// `M · diag(J)`: the atom weights of each latent measure.
    pub fn latent_weights(&self) -> DMatrix<f64> {
        scale_columns(&self.scores, &self.jumps)
    }

    /// Total masses `μ*_h(Θ) = Σ_k m_hk J_k`.
    pub fn latent_masses(&self) -> Vec<f64> {
        (0..self.n_latent())
            .map(|h| compensated_sum((0..self.n_atoms()).map(|k| self.scores[(h, k)] * self.jumps[k])))
            .collect()
    }
}

/// Strictly positive `g×H` loadings matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadingsMatrix(DMatrix<f64>);

impl LoadingsMatrix {
    pub fn new(lambda: DMatrix<f64>) -> Result<Self> {
        if lambda.nrows() == 0 || lambda.ncols() == 0 {
            return Err(Error::Input("loadings matrix must be non-empty".into()));
        }
        if let Some(v) = lambda.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("loading {v} is not strictly positive")));
        }
        Ok(Self(lambda))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn n_groups(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_latent(&self) -> usize {
        self.0.ncols()
    }
}

/// Group measures `μ̃_j = Σ_k (ΛM)_jk J_k δ_{θ*_k}` over the shared atoms.
#[derive(Clone, Debug)]
pub struct GroupMeasureView<'a> {
    pub weights: DMatrix<f64>,
    pub atoms: &'a [Atom],
}

impl<'a> GroupMeasureView<'a> {
    pub fn new(corm: &'a TruncatedCoRM, lambda: &LoadingsMatrix) -> Result<Self> {
        if lambda.n_latent() != corm.n_latent() {
            return Err(Error::Dimension(format!(
                "loadings have {} columns, CoRM has {} latent measures",
                lambda.n_latent(),
                corm.n_latent()
            )));
        }
        let gamma = lambda.as_matrix() * corm.scores();
        Ok(Self {
            weights: scale_columns(&gamma, corm.jumps()),
            atoms: corm.atoms(),
        })
    }

    /// Row totals `T_j = Σ_k (ΛM)_jk J_k`.
    pub fn totals(&self) -> Vec<f64> {
        self.weights
            .row_iter()
            .map(|r| compensated_sum(r.iter().copied()))
            .collect()
    }

    /// Normalized mixture density of group `j` at `y`.
    pub fn group_density(&self, j: usize, y: f64) -> f64 {
        let row: Vec<f64> = self.weights.row(j).iter().copied().collect();
        let total = compensated_sum(row.iter().copied());
        signed_mixture_density(&row, self.atoms, y) / total
    }
}

/// Densities tabulated on a shared increasing grid, one row per density.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub points: Vec<f64>,
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DensityGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        check_grid(&points)?;
        Ok(Self {
            points,
            labels: Vec::new(),
            values: Vec::new(),
        })
    }

    /// Default grid: 500 equispaced points over `[min − 3sd, max + 3sd]`.
    pub fn default_for(data: &[f64]) -> Result<Self> {
        Self::new(default_grid_points(data, DEFAULT_GRID_POINTS)?)
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.points.len() {
            return Err(Error::Dimension(format!(
                "row has {} values for {} grid points",
                values.len(),
                self.points.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite density values in row {}", self.labels.len())));
        }
        self.labels.push(label.into());
        self.values.push(values);
        Ok(())
    }

    pub fn row(&self, label: &str) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.values[i].as_slice())
    }

    /// CSV with a `y` column followed by one column per density.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header = vec!["y".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (i, y) in self.points.iter().enumerate() {
            let mut rec = vec![y.to_string()];
            rec.extend(self.values.iter().map(|row| row[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut points = Vec::new();
        let mut values = vec![Vec::new(); labels.len()];
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Input(format!("bad number '{s}' in {}", path.display())))
            };
            points.push(parse(&rec[0])?);
            for (i, col) in values.iter_mut().enumerate() {
                col.push(parse(&rec[i + 1])?);
            }
        }
        check_grid(&points)?;
        Ok(Self {
            points,
            labels,
            values,
        })
    }
}

fn check_grid(points: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Input("grid must be non-empty".into()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Input("grid points must be finite".into()));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("grid points must be strictly increasing".into()));
    }
    Ok(())
}

pub fn default_grid_points(data: &[f64], n: usize) -> Result<Vec<f64>> {
    if data.is_empty() || data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("grid needs finite, non-empty data".into()));
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sd = crate::numeric::variance(data).sqrt();
    let pad = if sd > 0.0 { 3.0 * sd } else { 1.0 };
    Ok(linspace(lo - pad, hi + pad, n))
}

/// `Σ_k w_k N(y | μ_k, σ²_k)` for nonnegative weights with positive total.
pub fn mixture_density(weights: &[f64], atoms: &[Atom], y: f64) -> Result<f64> {
    check_weights(weights, atoms)?;
    if !y.is_finite() {
        return Err(Error::Input(format!("non-finite evaluation point {y}")));
    }
    Ok(signed_mixture_density(weights, atoms, y))
}

/// Mixture density without sign checks; used for signed measures.
pub fn signed_mixture_density(weights: &[f64], atoms: &[Atom], y: f64) -> f64 {
    compensated_sum(
        weights
            .iter()
            .zip(atoms)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, a)| w * a.density(y)),
    )
}

fn check_weights(weights: &[f64], atoms: &[Atom]) -> Result<()> {
    if weights.len() != atoms.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} atoms",
            weights.len(),
            atoms.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Input("non-finite mixture weight".into()));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Input("negative mixture weight".into()));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::Input("mixture has zero total weight".into()));
    }
    Ok(())
}

/// Mixture density at every grid point.
pub fn evaluate_on_grid(weights: &[f64], atoms: &[Atom], points: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights, atoms)?;
    check_grid(points)?;
    Ok(points
        .iter()
        .map(|&y| signed_mixture_density(weights, atoms, y))
        .collect())
}

/// `∫ N(y|μ_a,σ²_a) N(y|μ_b,σ²_b) dy = N(μ_a | μ_b, σ²_a + σ²_b)`.
pub fn gaussian_l2_inner(a: &Atom, b: &Atom) -> f64 {
    normal_pdf(a.mu, b.mu, a.sigma2 + b.sigma2)
}

/// `A_kl = ⟨N(·|θ_k), N(·|θ_l)⟩` for all atom pairs.
pub fn atom_gram(atoms: &[Atom]) -> DMatrix<f64> {
    let k = atoms.len();
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = gaussian_l2_inner(&atoms[i], &atoms[j]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Gram matrix `G = B A Bᵀ` with `B = Q M diag(J)`: the pairwise L2 inner
/// products of the mixed densities of the transformed latent measures.
pub fn gram_matrix(corm: &TruncatedCoRM, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let h = corm.n_latent();
    if q.nrows() != h || q.ncols() != h {
        return Err(Error::Dimension(format!(
            "Q is {}x{}, expected {h}x{h}",
            q.nrows(),
            q.ncols()
        )));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("Q has non-finite entries".into()));
    }
    let b = q * corm.latent_weights();
    let a = atom_gram(corm.atoms());
    Ok(symmetrize(&b * a * b.transpose()))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `X · diag(d)`.
pub fn scale_columns(x: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut col, &s) in out.column_iter_mut().zip(d) {
        col *= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::trapezoid;
    use proptest::prelude::*;

    fn quad_inner(a: &Atom, b: &Atom) -> f64 {
        let lo = a.mu.min(b.mu) - 12.0 * a.sigma2.max(b.sigma2).sqrt();
        let hi = a.mu.max(b.mu) + 12.0 * a.sigma2.max(b.sigma2).sqrt();
        let xs = linspace(lo, hi, 200_001);
        let ys: Vec<f64> = xs.iter().map(|&y| a.density(y) * b.density(y)).collect();
        trapezoid(&xs, &ys)
    }

    #[test]
    fn standard_normal_at_mode() {
        let atoms = [Atom::new(0.0, 1.0).unwrap()];
        let v = mixture_density(&[1.0], &atoms, 0.0).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn single_component_reduction() {
        let atoms = [
            Atom::new(-1.0, 1.0).unwrap(),
            Atom::new(5.0, 0.3).unwrap(),
            Atom::new(2.0, 4.0).unwrap(),
        ];
        let v = mixture_density(&[0.0, 0.0, 1.0], &atoms, 2.0).unwrap();
        assert!((v - 1.0 / (8.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_component_matches_quadrature_oracle() {
        // Oracle: the mixture density at 0 equals the derivative of its CDF,
        // recovered by trapezoid integration of the pdf over [0 - d, 0 + d]
        // with step 1e-4, then divided by the window width.
        let atoms = [Atom::new(-1.0, 1.0).unwrap(), Atom::new(1.0, 1.0).unwrap()];
        let w = [0.5, 0.5];
        let xs = linspace(-0.01, 0.01, 201);
        let ys: Vec<f64> = xs.iter().map(|&y| 0.5 * atoms[0].density(y) + 0.5 * atoms[1].density(y)).collect();
        let oracle = trapezoid(&xs, &ys) / 0.02;
        let v = mixture_density(&w, &atoms, 0.0).unwrap();
        assert!((v - oracle).abs() < 1e-5, "{v} vs {oracle}");
        // Frozen: 0.5·N(0|-1,1) + 0.5·N(0|1,1) = N(1|0,1).
        assert!((v - 0.241_970_724_519_143_37).abs() < 1e-15);
    }

    #[test]
    fn mixture_rejects_bad_inputs() {
        let atoms = [Atom::new(0.0, 1.0).unwrap()];
        assert!(mixture_density(&[f64::NAN], &atoms, 0.0).is_err());
        assert!(mixture_density(&[1.0], &atoms, f64::INFINITY).is_err());
        assert!(mixture_density(&[0.0], &atoms, 0.0).is_err());
        assert!(Atom::new(0.0, 0.0).is_err());
    }

    #[test]
    fn l2_inner_known_values() {
        let a = Atom::new(0.0, 1.0).unwrap();
        let b = Atom::new(3.0, 1.0).unwrap();
        let same = gaussian_l2_inner(&a, &a);
        assert!((same - 1.0 / (2.0 * std::f64::consts::PI.sqrt())).abs() < 1e-15);
        let cross = gaussian_l2_inner(&a, &b);
        let oracle = quad_inner(&a, &b);
        assert!((cross - oracle).abs() < 1e-8);
        assert!((cross - 0.029_732_572_305_907_347).abs() < 1e-12);
    }

    #[test]
    fn gram_trivial_case() {
        let corm = TruncatedCoRM::new(
            vec![Atom::new(0.0, 1.0).unwrap()],
            vec![0.999_999_999_999],
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let g = gram_matrix(&corm, &DMatrix::identity(1, 1)).unwrap();
        let expected = 0.999_999_999_999f64.powi(2) / (2.0 * std::f64::consts::PI.sqrt());
        assert!((g[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn grid_evaluation_and_errors() {
        let atoms = [Atom::new(0.0, 1.0).unwrap()];
        let v = evaluate_on_grid(&[1.0], &atoms, &[-1.0, 0.0, 1.0]).unwrap();
        let expected = [0.241_970_724_519_143_4, 0.398_942_280_401_432_7, 0.241_970_724_519_143_4];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(evaluate_on_grid(&[0.0], &atoms, &[0.0]).is_err());
        assert!(evaluate_on_grid(&[1.0], &atoms, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn riemann_sum_recovers_total_mass() {
        let atoms = [Atom::new(-2.0, 0.5).unwrap(), Atom::new(3.0, 2.0).unwrap()];
        let w = [0.7, 1.9];
        let pts = linspace(-20.0, 25.0, 4501);
        let v = evaluate_on_grid(&w, &atoms, &pts).unwrap();
        let dy = pts[1] - pts[0];
        let mass: f64 = v.iter().sum::<f64>() * dy;
        assert!((mass - 2.6).abs() < 1e-3);
    }

    #[test]
    fn density_grid_csv_layout() {
        let mut g = DensityGrid::new(vec![0.0, 0.5]).unwrap();
        g.push("a", vec![1.0, 2.0]).unwrap();
        g.push("b", vec![0.25, -1.5]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "y,a,b\n0,1,0.25\n0.5,2,-1.5\n");
        assert!(DensityGrid::new(vec![0.0, 0.0]).is_err());
    }

    fn arb_atom() -> impl Strategy<Value = Atom> {
        (-5.0f64..5.0, 0.1f64..4.0).prop_map(|(m, s)| Atom::new(m, s).unwrap())
    }

    proptest! {
        #[test]
        fn l2_inner_is_symmetric(a in arb_atom(), b in arb_atom()) {
            prop_assert!((gaussian_l2_inner(&a, &b) - gaussian_l2_inner(&b, &a)).abs() < 1e-15);
        }

        #[test]
        fn mixture_is_linear_in_weights(
            atoms in proptest::collection::vec(arb_atom(), 1..6),
            scale in 0.01f64..100.0,
            y in -8.0f64..8.0,
        ) {
            let w: Vec<f64> = (0..atoms.len()).map(|i| 0.3 + i as f64).collect();
            let ws: Vec<f64> = w.iter().map(|v| v * scale).collect();
            let a = mixture_density(&w, &atoms, y).unwrap();
            let b = mixture_density(&ws, &atoms, y).unwrap();
            prop_assert!((b - scale * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }

        #[test]
        fn group_totals_positive(
            lam in proptest::collection::vec(0.01f64..5.0, 6),
            m in proptest::collection::vec(0.01f64..5.0, 6),
            j in proptest::collection::vec(0.001f64..0.999, 3),
        ) {
            let atoms = vec![Atom::new(0.0, 1.0).unwrap(); 3];
            let corm = TruncatedCoRM::new(atoms, j, DMatrix::from_vec(2, 3, m)).unwrap();
            let lambda = LoadingsMatrix::new(DMatrix::from_vec(3, 2, lam)).unwrap();
            let view = GroupMeasureView::new(&corm, &lambda).unwrap();
            prop_assert!(view.totals().iter().all(|&t| t > 0.0));
        }
    }
}
