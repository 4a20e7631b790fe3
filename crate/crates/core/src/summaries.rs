//! Posterior summaries computed from aligned, transformed draws.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{permutation_matrix, transformed_weights};
use crate::error::{Error, Result};
use crate::measures::{signed_mixture_density, Atom, DensityGrid};
use crate::numeric::{log_sum_exp, normal_log_pdf, std_normal_cdf, trapezoid};
use crate::sampler::{ChainRecord, Draw, GroupedData};
use crate::slopt::TransformTable;

/// Condition number above which inverting a draw's `Q` is logged.
const COND_WARN: f64 = 1e10;

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub grid: Vec<f64>,
    /// `H` rows of mean unnormalized latent densities on the grid.
    pub mu_prime: Vec<Vec<f64>>,
    /// Mean total mass of each aligned latent measure.
    pub masses: Vec<f64>,
    pub lambda_prime: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub importance: Vec<f64>,
}

struct DrawTerms {
    densities: Vec<Vec<f64>>,
    masses: Vec<f64>,
    lambda: DMatrix<f64>,
}

fn draw_terms(d: &Draw, q: &DMatrix<f64>, perm: &[usize], grid: &[f64], index: usize) -> Result<DrawTerms> {
    let p = permutation_matrix(perm);
    let w = &p * transformed_weights(q, &d.scores, &d.jumps);
    let lu = q.clone().lu();
    let qinv = lu
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("Q of draw {index} is singular")))?;
    let sv = q.singular_values();
    let cond = sv.max() / sv.min();
    if cond > COND_WARN {
        log::warn!("Q of draw {index} has condition number {cond:.3e}");
    }
    let lambda = &d.lambda * qinv * p.transpose();
    let densities = w
        .row_iter()
        .map(|row| {
            let row: Vec<f64> = row.iter().copied().collect();
            grid.iter().map(|&y| signed_mixture_density(&row, &d.atoms, y)).collect()
        })
        .collect();
    Ok(DrawTerms {
        densities,
        masses: w.row_iter().map(|r| r.sum()).collect(),
        lambda,
    })
}

/// Averages the transformed, relabelled latent measures and loadings over draws.
pub fn aligned_means(chain: &ChainRecord, transforms: &TransformTable, grid: &[f64]) -> Result<PosteriorSummary> {
    if chain.is_empty() {
        return Err(Error::Input("chain has no draws".into()));
    }
    let perms = transforms.permutations.as_ref().ok_or_else(|| Error::MissingArtifact {
        path: "transforms.csv".into(),
        hint: "run `align` first to add permutations".into(),
    })?;
    if transforms.len() != chain.len() || perms.len() != chain.len() {
        return Err(Error::Dimension(format!(
            "{} draws, {} transforms, {} permutations",
            chain.len(),
            transforms.len(),
            perms.len()
        )));
    }
    let h = chain.draws[0].n_latent();
    let g = chain.draws[0].lambda.nrows();
    if let Some(i) = chain.draws.iter().position(|d| d.n_latent() != h || d.lambda.nrows() != g) {
        return Err(Error::Dimension(format!("draw {i} changes the number of latent measures or groups")));
    }
    let terms: Vec<DrawTerms> = chain
        .draws
        .par_iter()
        .zip(transforms.results.par_iter())
        .zip(perms.par_iter())
        .enumerate()
        .map(|(i, ((d, t), p))| draw_terms(d, &t.q, p, grid, i))
        .collect::<Result<_>>()?;

    let n = terms.len() as f64;
    let mut mu_prime = vec![vec![0.0; grid.len()]; h];
    let mut masses = vec![0.0; h];
    let mut lambda_prime = DMatrix::zeros(g, h);
    for t in &terms {
        for (acc, row) in mu_prime.iter_mut().zip(&t.densities) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v / n);
        }
        masses.iter_mut().zip(&t.masses).for_each(|(a, v)| *a += v / n);
        lambda_prime += &t.lambda / n;
    }
    let s = convex_scores(&lambda_prime, &masses)?;
    let importance = importance_scores(&s);
    Ok(PosteriorSummary {
        grid: grid.to_vec(),
        mu_prime,
        masses,
        lambda_prime,
        s,
        importance,
    })
}

/// `s_jh = λ_jh m_h / Σ_k λ_jk m_k`.
pub fn convex_scores(lambda: &DMatrix<f64>, masses: &[f64]) -> Result<DMatrix<f64>> {
    if lambda.ncols() != masses.len() {
        return Err(Error::Dimension(format!("{} loading columns, {} masses", lambda.ncols(), masses.len())));
    }
    let mut s = lambda.clone();
    for (mut col, m) in s.column_iter_mut().zip(masses) {
        col *= *m;
    }
    for (j, mut row) in s.row_iter_mut().enumerate() {
        let total = row.sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain(format!("group {j} has weighted loading total {total}")));
        }
        row /= total;
    }
    Ok(s)
}

/// Column sums of `s`.
pub fn importance_scores(s: &DMatrix<f64>) -> Vec<f64> {
    s.column_iter().map(|c| c.sum()).collect()
}

impl PosteriorSummary {
    pub fn n_latent(&self) -> usize {
        self.masses.len()
    }

    /// Normalized factor densities `p′_h`.
    pub fn factor_densities(&self) -> Vec<Vec<f64>> {
        self.mu_prime
            .iter()
            .zip(&self.masses)
            .map(|(row, m)| row.iter().map(|v| v / m).collect())
            .collect()
    }

    /// Group densities `Σ_h λ′_jh μ′_h / Σ_h λ′_jh μ′_h(Θ)` on the grid.
    pub fn group_densities(&self) -> Vec<Vec<f64>> {
        (0..self.lambda_prime.nrows())
            .map(|j| {
                let l = self.lambda_prime.row(j);
                let total: f64 = l.iter().zip(&self.masses).map(|(a, m)| a * m).sum();
                (0..self.grid.len())
                    .map(|i| l.iter().zip(&self.mu_prime).map(|(a, row)| a * row[i]).sum::<f64>() / total)
                    .collect()
            })
            .collect()
    }
}

/// Unweighted mean of the group densities.
pub fn mean_density(groups: &[Vec<f64>]) -> Vec<f64> {
    let n = groups.len() as f64;
    let mut out = vec![0.0; groups.first().map_or(0, Vec::len)];
    for row in groups {
        out.iter_mut().zip(row).for_each(|(a, v)| *a += v / n);
    }
    out
}

/// Grid table with `factor_h`, `residual_h`, `group_j` and `group_mean` rows.
pub fn residual_densities(summary: &PosteriorSummary) -> Result<DensityGrid> {
    let factors = summary.factor_densities();
    let groups = summary.group_densities();
    let pbar = mean_density(&groups);
    let mut out = DensityGrid::new(summary.grid.clone())?;
    for (h, f) in factors.iter().enumerate() {
        out.push(format!("factor_{h}"), f.clone())?;
    }
    for (h, f) in factors.iter().enumerate() {
        out.push(format!("residual_{h}"), f.iter().zip(&pbar).map(|(a, b)| a - b).collect())?;
    }
    for (j, p) in groups.into_iter().enumerate() {
        out.push(format!("group_{j}"), p)?;
    }
    out.push("group_mean", pbar)?;
    Ok(out)
}

/// Mass of each bin `[e_i, e_{i+1})` under the normalized mixture.
pub fn discretize_density(weights: &[f64], atoms: &[Atom], edges: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != atoms.len() {
        return Err(Error::Dimension(format!("{} weights for {} atoms", weights.len(), atoms.len())));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| e.is_nan()) {
        return Err(Error::Input("bin edges must be increasing, at least two".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Domain(format!("measure has total mass {total}")));
    }
    Ok(edges
        .windows(2)
        .map(|e| {
            weights
                .iter()
                .zip(atoms)
                .map(|(w, a)| {
                    let sd = a.sigma2.sqrt();
                    w * (std_normal_cdf((e[1] - a.mu) / sd) - std_normal_cdf((e[0] - a.mu) / sd))
                })
                .sum::<f64>()
                / total
        })
        .collect())
}

/// `log p(y_ji | draw)` for every observation, groups concatenated.
pub fn draw_log_likelihood(d: &Draw, data: &GroupedData) -> Result<Vec<f64>> {
    let g = data.n_groups();
    if d.lambda.nrows() != g {
        return Err(Error::Dimension(format!("draw has {} groups, data {g}", d.lambda.nrows())));
    }
    let w = &d.lambda * &d.scores;
    let mut out = Vec::with_capacity(data.n_obs());
    let mut terms = vec![0.0; d.atoms.len()];
    for j in 0..g {
        let logw: Vec<f64> = (0..d.atoms.len()).map(|k| (w[(j, k)] * d.jumps[k]).ln()).collect();
        let norm = log_sum_exp(&logw);
        for &y in data.group(j) {
            for (k, a) in d.atoms.iter().enumerate() {
                terms[k] = logw[k] + normal_log_pdf(y, a.mu, a.sigma2);
            }
            out.push(log_sum_exp(&terms) - norm);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
}

/// WAIC from a draws × observations log-likelihood table.
pub fn waic_from_loglik(loglik: &[Vec<f64>]) -> Result<Waic> {
    let s = loglik.len();
    if s < 2 {
        return Err(Error::Input(format!("WAIC needs at least two draws, got {s}")));
    }
    let n = loglik[0].len();
    if loglik.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("draws disagree on the number of observations".into()));
    }
    let (mut lppd, mut p_waic) = (0.0, 0.0);
    let mut col = vec![0.0; s];
    for i in 0..n {
        for (c, row) in col.iter_mut().zip(loglik) {
            *c = row[i];
        }
        lppd += log_sum_exp(&col) - (s as f64).ln();
        p_waic += crate::numeric::variance(&col);
    }
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
    })
}

pub fn waic(chain: &ChainRecord, data: &GroupedData) -> Result<Waic> {
    let loglik: Vec<Vec<f64>> = chain
        .draws
        .par_iter()
        .map(|d| draw_log_likelihood(d, data))
        .collect::<Result<_>>()?;
    waic_from_loglik(&loglik)
}

/// Posterior mean of each group's density on the grid.
pub fn posterior_group_densities(chain: &ChainRecord, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    if chain.is_empty() {
        return Err(Error::Input("chain has no draws".into()));
    }
    let per_draw: Vec<Vec<Vec<f64>>> = chain
        .draws
        .par_iter()
        .map(|d| {
            let w = &d.lambda * &d.scores;
            (0..w.nrows())
                .map(|j| {
                    let row: Vec<f64> = (0..d.atoms.len()).map(|k| w[(j, k)] * d.jumps[k]).collect();
                    let total: f64 = row.iter().sum();
                    grid.iter().map(|&y| signed_mixture_density(&row, &d.atoms, y) / total).collect()
                })
                .collect()
        })
        .collect();
    let g = per_draw[0].len();
    if per_draw.iter().any(|d| d.len() != g) {
        return Err(Error::Dimension("draws disagree on the number of groups".into()));
    }
    let n = per_draw.len() as f64;
    let mut out = vec![vec![0.0; grid.len()]; g];
    for d in &per_draw {
        for (acc, row) in out.iter_mut().zip(d) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v / n);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kl {
    pub value: f64,
    /// An estimate was clamped where the truth is positive.
    pub clamped: bool,
}

/// Trapezoid-rule `∫ p log(p / q)` on the grid.
pub fn kl_to_truth(grid: &[f64], estimate: &[f64], truth: &[f64]) -> Result<Kl> {
    if estimate.len() != grid.len() || truth.len() != grid.len() {
        return Err(Error::Dimension("densities do not match the grid".into()));
    }
    let mut clamped = false;
    let integrand: Vec<f64> = truth
        .iter()
        .zip(estimate)
        .map(|(&p, &q)| {
            if p <= 0.0 {
                return 0.0;
            }
            let q = if q > 1e-300 {
                q
            } else {
                clamped = true;
                1e-300
            };
            p * (p / q).ln()
        })
        .collect();
    if clamped {
        log::warn!("density estimate is not positive where the truth is; clamped at 1e-300");
    }
    Ok(Kl {
        value: trapezoid(grid, &integrand),
        clamped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Labels in `0..k`, numbered by first appearance.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Linkage distance of every merge, in merge order.
    pub heights: Vec<f64>,
}

/// Agglomerative complete-linkage clustering of the rows of `x` into `k` clusters.
pub fn cluster_loadings(x: &DMatrix<f64>, k: usize) -> Result<Clustering> {
    let g = x.nrows();
    if k == 0 || k > g {
        return Err(Error::Input(format!("cannot form {k} clusters from {g} rows")));
    }
    let dist = DMatrix::from_fn(g, g, |i, j| (x.row(i) - x.row(j)).norm());
    let mut members: Vec<Vec<usize>> = (0..g).map(|i| vec![i]).collect();
    let mut link = dist.clone();
    let mut alive: Vec<bool> = vec![true; g];
    let mut heights = Vec::new();
    for _ in 0..g - k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..g {
            if !alive[a] {
                continue;
            }
            for b in a + 1..g {
                if alive[b] && link[(a, b)] < best.0 {
                    best = (link[(a, b)], a, b);
                }
            }
        }
        let (hgt, a, b) = best;
        heights.push(hgt);
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        alive[b] = false;
        for c in 0..g {
            if alive[c] && c != a {
                let v = link[(a, c)].max(link[(b, c)]);
                link[(a, c)] = v;
                link[(c, a)] = v;
            }
        }
    }
    let mut labels = vec![usize::MAX; g];
    let mut centers = Vec::new();
    for i in 0..g {
        if labels[i] != usize::MAX {
            continue;
        }
        let cluster = members.iter().find(|m| m.contains(&i)).expect("every row belongs to a cluster");
        let label = centers.len();
        let mut center = vec![0.0; x.ncols()];
        for &r in cluster {
            labels[r] = label;
            center.iter_mut().zip(x.row(r).iter()).for_each(|(c, v)| *c += v / cluster.len() as f64);
        }
        centers.push(center);
    }
    Ok(Clustering { labels, centers, heights })
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    lambda_prime: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    importance: &'a [f64],
    masses: &'a [f64],
    clusters: &'a Clustering,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Writes `summary.json`, `densities.csv` and `waic.txt` into `dir`.
pub fn write_outputs(dir: &Path, summary: &PosteriorSummary, clusters: &Clustering, waic: &Waic) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = SummaryJson {
        lambda_prime: rows(&summary.lambda_prime),
        s: rows(&summary.s),
        importance: &summary.importance,
        masses: &summary.masses,
        clusters,
    };
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json)? + "\n").map_err(|e| Error::io(&path, e))?;
    residual_densities(summary)?.save(&dir.join("densities.csv"))?;
    let path = dir.join("waic.txt");
    let text = format!("waic {}\nlppd {}\np_waic {}\n", waic.waic, waic.lppd, waic.p_waic);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
