//! Label alignment of transformed latent measures against a template draw.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{gaussian_l2_inner, Atom};
use crate::sampler::ChainRecord;
use crate::slopt::TransformTable;

/// A latent measure rescaled to unit total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMeasure {
    weights: Vec<f64>,
    atoms: Vec<Atom>,
}

impl NormalizedMeasure {
    /// Divides `weights` by their sum. Small negative weights (left by a
    /// transform that is feasible only to tolerance) are kept as they are.
    pub fn new(weights: &[f64], atoms: &[Atom]) -> Result<Self> {
        if weights.len() != atoms.len() {
            return Err(Error::Dimension(format!("{} weights for {} atoms", weights.len(), atoms.len())));
        }
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Domain(format!("measure has total mass {mass}")));
        }
        Ok(Self {
            weights: weights.iter().map(|w| w / mass).collect(),
            atoms: atoms.to_vec(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    fn inner(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (wa, a) in self.weights.iter().zip(&self.atoms) {
            for (wb, b) in other.weights.iter().zip(&other.atoms) {
                acc += wa * wb * gaussian_l2_inner(a, b);
            }
        }
        acc
    }
}

/// Rows of `weights` (H × K) as normalized measures over shared atoms.
pub fn measures_from_rows(weights: &DMatrix<f64>, atoms: &[Atom]) -> Result<Vec<NormalizedMeasure>> {
    (0..weights.nrows())
        .map(|h| {
            let row: Vec<f64> = weights.row(h).iter().copied().collect();
            NormalizedMeasure::new(&row, atoms)
        })
        .collect()
}

/// L2 distance between the mixed densities of two normalized measures.
pub fn l2_dissimilarity(a: &NormalizedMeasure, b: &NormalizedMeasure) -> f64 {
    (a.inner(a) - 2.0 * a.inner(b) + b.inner(b)).max(0.0).sqrt()
}

/// Optimal transport cost between the atom weights under the ground cost
/// `(μ_a − μ_b)² + (σ_a − σ_b)²`, the squared 2-Wasserstein distance between
/// univariate Gaussians.
pub fn ls_wasserstein_dissimilarity(a: &NormalizedMeasure, b: &NormalizedMeasure) -> Result<f64> {
    if a.weights.iter().chain(&b.weights).any(|w| *w < 0.0) {
        return Err(Error::Domain("transport needs nonnegative weights".into()));
    }
    let cost = DMatrix::from_fn(a.atoms.len(), b.atoms.len(), |i, j| {
        let (x, y) = (&a.atoms[i], &b.atoms[j]);
        (x.mu - y.mu).powi(2) + (x.sigma2.sqrt() - y.sigma2.sqrt()).powi(2)
    });
    Ok(transport_cost(&a.weights, &b.weights, &cost))
}

/// Exact balanced transport as a min-cost flow: successive shortest paths with
/// Dijkstra on reduced costs. Ground costs must be nonnegative.
fn transport_cost(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let scale = supply.iter().sum::<f64>() / demand.iter().sum::<f64>();
    // Nodes: source 0, supplies 1..=m, demands m+1..=m+n, sink m+n+1.
    let nn = m + n + 2;
    let sink = nn - 1;
    let mut cap = DMatrix::<f64>::zeros(nn, nn);
    let mut w = DMatrix::<f64>::zeros(nn, nn);
    for i in 0..m {
        cap[(0, 1 + i)] = supply[i];
        for j in 0..n {
            cap[(1 + i, 1 + m + j)] = f64::INFINITY;
            w[(1 + i, 1 + m + j)] = cost[(i, j)];
            w[(1 + m + j, 1 + i)] = -cost[(i, j)];
        }
    }
    for j in 0..n {
        cap[(1 + m + j, sink)] = demand[j] * scale;
    }
    let total: f64 = supply.iter().sum();
    let tol = 1e-14 * total.max(1.0);
    let mut potential = vec![0.0; nn];
    let mut sent = 0.0;
    let mut acc = 0.0;
    for _ in 0..4 * nn * nn {
        if total - sent <= tol {
            break;
        }
        let mut dist = vec![f64::INFINITY; nn];
        let mut prev = vec![usize::MAX; nn];
        let mut done = vec![false; nn];
        dist[0] = 0.0;
        loop {
            let Some(u) = (0..nn).filter(|&v| !done[v] && dist[v].is_finite()).min_by(|&x, &y| dist[x].total_cmp(&dist[y])) else {
                break;
            };
            done[u] = true;
            for v in 0..nn {
                if cap[(u, v)] > tol && !done[v] {
                    let nd = dist[u] + (w[(u, v)] + potential[u] - potential[v]).max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = u;
                    }
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        for v in 0..nn {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut amount = f64::INFINITY;
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            amount = amount.min(cap[(u, v)]);
            v = u;
        }
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            cap[(u, v)] -= amount;
            cap[(v, u)] += amount;
            acc += amount * w[(u, v)];
            v = u;
        }
        sent += amount;
    }
    acc
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    L2,
    Lsw,
}

pub fn dissimilarity(a: &NormalizedMeasure, b: &NormalizedMeasure, metric: Metric) -> Result<f64> {
    match metric {
        Metric::L2 => Ok(l2_dissimilarity(a, b)),
        Metric::Lsw => ls_wasserstein_dissimilarity(a, b),
    }
}

/// Minimum-cost perfect matching of rows to columns; `out[r]` is the column of row `r`.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Dimension(format!("assignment needs a square matrix, got {}x{}", n, cost.ncols())));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("assignment cost is not finite".into()));
    }
    // Shortest augmenting path with potentials, 1-based with a dummy column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    Ok(out)
}

/// 0/1 matrix with `P[perm[h], h] = 1`, so row `perm[h]` of `P X` is row `h` of `X`.
pub fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    let mut p = DMatrix::zeros(n, n);
    for (h, &k) in perm.iter().enumerate() {
        p[(k, h)] = 1.0;
    }
    p
}

/// Transformed latent weights `Q M diag J` of one draw.
pub fn transformed_weights(q: &DMatrix<f64>, scores: &DMatrix<f64>, jumps: &[f64]) -> DMatrix<f64> {
    let mut w = q * scores;
    for (mut col, j) in w.column_iter_mut().zip(jumps) {
        col *= *j;
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub draw: usize,
    pub measures: Vec<NormalizedMeasure>,
}

/// Index of the largest log joint; ties go to the earliest draw.
pub fn select_template_index(log_joint: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in log_joint.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *v > log_joint[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::Input("chain has no draws with a finite log joint".into()))
}

/// Transformed latent measures of the draw with the highest log joint.
pub fn select_template(chain: &ChainRecord, transforms: &TransformTable) -> Result<Template> {
    if chain.is_empty() {
        return Err(Error::Input("chain has no draws".into()));
    }
    if transforms.len() != chain.len() {
        return Err(Error::Dimension(format!(
            "{} transforms for {} draws",
            transforms.len(),
            chain.len()
        )));
    }
    let draw = select_template_index(&chain.log_joint)?;
    let d = &chain.draws[draw];
    let w = transformed_weights(&transforms.results[draw].q, &d.scores, &d.jumps);
    Ok(Template {
        draw,
        measures: measures_from_rows(&w, &d.atoms)?,
    })
}

/// Permutation mapping each draw measure to its template label.
pub fn align_draw(draw: &[NormalizedMeasure], template: &Template, metric: Metric) -> Result<Vec<usize>> {
    let h = template.measures.len();
    if draw.len() != h {
        return Err(Error::Dimension(format!("draw has {} measures, template {h}", draw.len())));
    }
    let mut cost = DMatrix::zeros(h, h);
    for (i, a) in draw.iter().enumerate() {
        for (k, b) in template.measures.iter().enumerate() {
            cost[(i, k)] = dissimilarity(a, b, metric)?;
        }
    }
    hungarian(&cost)
}

/// Aligns every draw to the template and returns one permutation per draw.
pub fn align_chain(chain: &ChainRecord, transforms: &TransformTable, metric: Metric) -> Result<Vec<Vec<usize>>> {
    let template = select_template(chain, transforms)?;
    chain
        .draws
        .par_iter()
        .zip(transforms.results.par_iter())
        .map(|(d, t)| {
            let w = transformed_weights(&t.q, &d.scores, &d.jumps);
            align_draw(&measures_from_rows(&w, &d.atoms)?, &template, metric)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(mu: f64, s2: f64) -> Atom {
        Atom::new(mu, s2).unwrap()
    }

    #[test]
    fn l2_between_unit_atoms() {
        let a = NormalizedMeasure::new(&[1.0], &[atom(0.0, 1.0)]).unwrap();
        let b = NormalizedMeasure::new(&[1.0], &[atom(3.0, 1.0)]).unwrap();
        assert_eq!(l2_dissimilarity(&a, &a), 0.0);
        assert!((l2_dissimilarity(&a, &b) - 0.7104396096333183).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_single_atoms() {
        let a = NormalizedMeasure::new(&[2.0], &[atom(0.0, 1.0)]).unwrap();
        let b = NormalizedMeasure::new(&[1.0], &[atom(3.0, 4.0)]).unwrap();
        assert!((ls_wasserstein_dissimilarity(&a, &b).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(ls_wasserstein_dissimilarity(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn transport_needs_a_back_edge() {
        // Filling the cheapest cell first costs 5; the optimum is the anti-diagonal plan.
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 10.0]);
        let c = transport_cost(&[0.5, 0.5], &[0.5, 0.5], &cost);
        assert!((c - 1.0).abs() < 1e-14, "{c}");
    }

    #[test]
    fn hungarian_small_cases() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        assert_eq!(hungarian(&c).unwrap(), vec![1, 0, 2]);
        assert_eq!(hungarian(&DMatrix::zeros(0, 0)).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn template_argmax_breaks_ties_low() {
        assert_eq!(select_template_index(&[1.0, 3.0, 3.0, 2.0]).unwrap(), 1);
        assert_eq!(select_template_index(&[-5.0]).unwrap(), 0);
        assert!(select_template_index(&[]).is_err());
    }

    #[test]
    fn permutation_matrix_moves_rows() {
        let x = DMatrix::from_row_slice(3, 1, &[10.0, 20.0, 30.0]);
        let p = permutation_matrix(&[2, 0, 1]);
        assert_eq!(p * x, DMatrix::from_row_slice(3, 1, &[20.0, 30.0, 10.0]));
    }
}
