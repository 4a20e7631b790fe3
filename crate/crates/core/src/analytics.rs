//! Prior moments of the latent factor model in closed form, each with a Monte
//! Carlo counterpart drawn from the truncated prior.

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ln_beta;
use crate::priors::{CarPrior, GammaSampler};

/// Independent RNG streams; results do not depend on the thread count.
const CHUNKS: usize = 64;

#[derive(Clone, Debug)]
pub enum LoadingsSpec {
    /// `λ_jh ~ Ga(ψ, 1)` i.i.d.
    IidGamma { psi: f64 },
    Mgp { a1: f64, a2: f64, nu: f64 },
    /// Log-CAR columns; `j` and `l` pick the two groups compared.
    Car { prior: CarPrior, j: usize, l: usize },
}

#[derive(Clone, Debug)]
pub struct PriorSpec {
    pub n_latent: usize,
    /// Truncation level of the CoRM.
    pub n_atoms: usize,
    /// Score shape and jump concentration.
    pub phi: f64,
    pub loadings: LoadingsSpec,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_latent == 0 || self.n_atoms == 0 || !(self.phi > 0.0) {
            return Err(Error::Domain("prior spec needs H >= 1, K >= 1 and phi > 0".into()));
        }
        match &self.loadings {
            LoadingsSpec::IidGamma { psi } if !(*psi > 0.0) => Err(Error::Domain(format!("psi must be positive, got {psi}"))),
            LoadingsSpec::Mgp { a1, a2, nu } if !(*a1 > 0.0 && *a2 > 0.0 && *nu > 0.0) => {
                Err(Error::Domain("MGP needs a1, a2, nu > 0".into()))
            }
            LoadingsSpec::Car { prior, j, l } if *j >= prior.n_nodes() || *l >= prior.n_nodes() || j == l => {
                Err(Error::Input(format!("CAR groups ({j}, {l}) must be distinct nodes")))
            }
            _ => Ok(()),
        }
    }
}

/// Monte Carlo estimate and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn z(&self, reference: f64) -> f64 {
        (self.value - reference) / self.se
    }
}

/// `(E[μ*_h(A)], E[μ*_h(A) μ*_k(A)])` for gamma-process marginals:
/// `α(A)` and `(α(A) + α(A)²) φ² B(1, φ)² · 3/2`.
pub fn corm_moments(phi: f64, alpha: f64) -> Result<(f64, f64)> {
    check_phi_alpha(phi, alpha)?;
    let b = ln_beta(1.0, phi).exp();
    Ok((alpha, (alpha + alpha * alpha) * phi * phi * b * b * 1.5))
}

fn check_phi_alpha(phi: f64, alpha: f64) -> Result<()> {
    if !(phi > 0.0) || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("need phi > 0 and alpha in [0, 1], got ({phi}, {alpha})")));
    }
    Ok(())
}

/// Exact moments of `μ*_h(A) = Σ_k m_hk J_k 1[θ_k ∈ A]` under the truncated prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMoments {
    /// `m_A`
    pub mean: f64,
    /// `E[μ*_h(A)²]`
    pub second: f64,
    /// `E[μ*_h(A) μ*_k(A)]`, `h ≠ k`
    pub cross: f64,
}

impl LatentMoments {
    pub fn var(&self) -> f64 {
        self.second - self.mean * self.mean
    }

    /// `c_A = Cov(μ*_h(A), μ*_k(A))`
    pub fn cov(&self) -> f64 {
        self.cross - self.mean * self.mean
    }
}

/// Moments with `K` atoms, `m ~ Ga(φ, 1)`, `J ~ Beta(φ/K, φ)` and `P(θ ∈ A) = α`.
pub fn truncated_latent_moments(phi: f64, n_atoms: usize, alpha: f64) -> Result<LatentMoments> {
    check_phi_alpha(phi, alpha)?;
    let k = n_atoms as f64;
    let (a, b) = (phi / k, phi);
    let ej = a / (a + b);
    let ej2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0));
    let pairs = k * (k - 1.0) * alpha * alpha * phi * phi * ej * ej;
    Ok(LatentMoments {
        mean: k * alpha * phi * ej,
        second: k * alpha * phi * (phi + 1.0) * ej2 + pairs,
        cross: k * alpha * phi * phi * ej2 + pairs,
    })
}

/// Correlation of `μ̃_j(A)` and `μ̃_ℓ(A)` under i.i.d. Ga(ψ) loadings:
/// `(1 + m_A / ((Var[μ*₁(A)] + c_A (H−1)) ψ))^{-1}`.
pub fn corr_iid_scores(h: usize, psi: f64, m_a: f64, var_a: f64, c_a: f64) -> Result<f64> {
    corr_iid(h, psi, m_a, var_a, c_a)
}

/// The same correlation with `E[μ*₁(A)²] = Var + m_A²` in the numerator, which
/// is what the covariance and variance expressions it is derived from give.
pub fn corr_iid_scores_derived(h: usize, psi: f64, m_a: f64, var_a: f64, c_a: f64) -> Result<f64> {
    corr_iid(h, psi, var_a + m_a * m_a, var_a, c_a)
}

fn corr_iid(h: usize, psi: f64, num: f64, var_a: f64, c_a: f64) -> Result<f64> {
    if h == 0 || !(psi > 0.0) || !(num > 0.0) {
        return Err(Error::Domain(format!("need H >= 1, psi > 0 and a positive moment, got ({h}, {psi}, {num})")));
    }
    let denom = (var_a + c_a * (h as f64 - 1.0)) * psi;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!("Var + c_A (H−1) must be positive, got {}", denom / psi)));
    }
    Ok(1.0 / (1.0 + num / denom))
}

/// `(Cov[μ̃_j(A), μ̃_ℓ(A)], Var[μ̃_j(A)])` under MGP loadings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovTerms {
    pub cov: f64,
    pub var: f64,
}

impl CovTerms {
    pub fn corr(&self) -> f64 {
        self.cov / self.var
    }
}

/// Covariance and variance, evaluated term by term.
pub fn mgp_cov_terms(a1: f64, a2: f64, nu: f64, h: usize, m: &LatentMoments) -> Result<CovTerms> {
    mgp_terms(a1, a2, nu, h, m, 1)
}

/// As [`mgp_cov_terms`] but with `(a₂−1)^{−h−k+2}` in the last row: the product
/// of the means `E[λ_jh] E[λ_ℓk]` carries `(a₂−1)^{−(h−1)−(k−1)}`.
pub fn mgp_cov_terms_derived(a1: f64, a2: f64, nu: f64, h: usize, m: &LatentMoments) -> Result<CovTerms> {
    mgp_terms(a1, a2, nu, h, m, 2)
}

fn mgp_terms(a1: f64, a2: f64, nu: f64, h: usize, m: &LatentMoments, offset: i32) -> Result<CovTerms> {
    if !(a1 > 2.0 && a2 > 2.0 && nu > 4.0) || h == 0 {
        return Err(Error::Domain(format!(
            "second moments need a1 > 2, a2 > 2, nu > 4 and H >= 1, got ({a1}, {a2}, {nu}, {h})"
        )));
    }
    let hh = h as i32;
    let diag: f64 = (1..=hh).map(|i| ((a2 - 1.0) * (a2 - 2.0)).powi(1 - i)).sum();
    let mut off = 0.0;
    for k in 1..=hh {
        for i in 1..k {
            off += (a2 - 1.0).powi(1 - k) * (a2 - 2.0).powi(1 - i);
        }
    }
    let mut means = 0.0;
    for k in 1..=hh {
        for i in 1..=hh {
            means += (a2 - 1.0).powi(-i - k + offset);
        }
    }
    let c1 = 1.0 / ((a1 - 1.0) * (a1 - 2.0));
    let r = nu / (nu - 2.0);
    let shared = (m.cov() + m.mean * m.mean) * 2.0 * off * c1 * r * r - m.mean * m.mean * means * (a1 - 1.0).powi(-2) * r * r;
    Ok(CovTerms {
        cov: m.second * diag * c1 * r * r + shared,
        var: m.second * diag * c1 * nu * nu / ((nu - 2.0) * (nu - 4.0)) + shared,
    })
}

/// `Ga(shape, 1)` on the log scale, safe for tiny shapes.
fn log_gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        return rng.gamma(shape, 1.0).ln();
    }
    let u: f64 = rng.random::<f64>();
    rng.gamma(shape + 1.0, 1.0).ln() + (1.0 - u).ln() / shape
}

fn beta_draw<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let (x, y) = (log_gamma_draw(rng, a), log_gamma_draw(rng, b));
    1.0 / (1.0 + (y - x).exp())
}

/// One prior draw of `(μ*_h(A))_h` and `(μ*_h(Θ))_h`.
fn latent_masses<R: Rng + ?Sized>(rng: &mut R, h: usize, k: usize, phi: f64, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut in_a = vec![0.0; h];
    let mut total = vec![0.0; h];
    for _ in 0..k {
        let j = beta_draw(rng, phi / k as f64, phi);
        let inside = rng.random::<f64>() < alpha;
        for r in 0..h {
            let w = rng.gamma(phi, 1.0) * j;
            total[r] += w;
            if inside {
                in_a[r] += w;
            }
        }
    }
    (in_a, total)
}

/// Only the masses in `A`, sampling just the atoms that land there.
fn latent_masses_in<R: Rng + ?Sized>(rng: &mut R, h: usize, k: usize, phi: f64, alpha: f64) -> Vec<f64> {
    let n_in = Binomial::new(k as u64, alpha).expect("alpha checked").sample(rng) as usize;
    let mut in_a = vec![0.0; h];
    for _ in 0..n_in {
        let j = beta_draw(rng, phi / k as f64, phi);
        for v in in_a.iter_mut() {
            *v += rng.gamma(phi, 1.0) * j;
        }
    }
    in_a
}

/// Loadings of the two compared groups, `2 × H`.
fn two_rows<R: Rng + ?Sized>(rng: &mut R, spec: &PriorSpec, car_chol: Option<&DMatrix<f64>>) -> [Vec<f64>; 2] {
    let h = spec.n_latent;
    match &spec.loadings {
        LoadingsSpec::IidGamma { psi } => [(0..h).map(|_| rng.gamma(*psi, 1.0)).collect(), (0..h).map(|_| rng.gamma(*psi, 1.0)).collect()],
        LoadingsSpec::Mgp { a1, a2, nu } => {
            let mut tau = 1.0;
            let mut rows = [vec![0.0; h], vec![0.0; h]];
            for c in 0..h {
                tau *= rng.gamma(if c == 0 { *a1 } else { *a2 }, 1.0);
                for row in rows.iter_mut() {
                    row[c] = 1.0 / (rng.gamma(0.5 * nu, 0.5 * nu) * tau);
                }
            }
            rows
        }
        LoadingsSpec::Car { prior, j, l } => {
            // x = μ + L^{-T} z has precision L Lᵀ.
            let lt = car_chol.expect("CAR factor precomputed");
            let mut rows = [vec![0.0; h], vec![0.0; h]];
            for c in 0..h {
                let z = DVector::from_fn(prior.n_nodes(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = lt.solve_upper_triangular(&z).expect("Cholesky factor is invertible") + prior.mean();
                rows[0][c] = x[*j].exp();
                rows[1][c] = x[*l].exp();
            }
            rows
        }
    }
}

fn car_factor(spec: &PriorSpec) -> Result<Option<DMatrix<f64>>> {
    match &spec.loadings {
        LoadingsSpec::Car { prior, .. } => {
            let chol = Cholesky::new(prior.precision().clone())
                .ok_or_else(|| Error::Numerical("CAR precision is not positive definite".into()))?;
            Ok(Some(chol.l().transpose()))
        }
        _ => Ok(None),
    }
}

fn chunk_sizes(n: usize) -> Vec<usize> {
    (0..CHUNKS).map(|c| n / CHUNKS + usize::from(c < n % CHUNKS)).collect()
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Runs `draw` `n` times in independent streams and returns the per-chunk sums of its outputs.
fn mc_sums<F>(n: usize, seed: u64, width: usize, draw: F) -> Vec<Vec<f64>>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    chunk_sizes(n)
        .into_par_iter()
        .enumerate()
        .map(|(c, size)| {
            let mut rng = chunk_rng(seed, c);
            let mut acc = vec![0.0; width + 1];
            let mut out = vec![0.0; width];
            for _ in 0..size {
                draw(&mut rng, &mut out);
                acc.iter_mut().zip(&out).for_each(|(a, v)| *a += v);
            }
            acc[width] = size as f64;
            acc
        })
        .collect()
}

fn mean_estimate(chunks: &[Vec<f64>], value: usize, square: usize) -> Estimate {
    let n: f64 = chunks.iter().map(|c| *c.last().expect("count column")).sum();
    let s: f64 = chunks.iter().map(|c| c[value]).sum();
    let s2: f64 = chunks.iter().map(|c| c[square]).sum();
    let mean = s / n;
    let var = (s2 / n - mean * mean) * n / (n - 1.0);
    Estimate { value: mean, se: (var.max(0.0) / n).sqrt() }
}

/// MC estimate of `E[μ*_1(A) μ*_2(A)]` from the truncated prior.
pub fn mc_cross_moment(phi: f64, n_atoms: usize, alpha: f64, n: usize, seed: u64) -> Result<Estimate> {
    check_phi_alpha(phi, alpha)?;
    if n < 2 || n_atoms == 0 {
        return Err(Error::Input("need at least two draws and one atom".into()));
    }
    let sums = mc_sums(n, seed, 2, |rng, out| {
        let m = latent_masses_in(rng, 2, n_atoms, phi, alpha);
        out[0] = m[0] * m[1];
        out[1] = out[0] * out[0];
    });
    Ok(mean_estimate(&sums, 0, 1))
}

/// MC correlation of `μ̃_j(A)` and `μ̃_ℓ(A)` from joint prior draws.
pub fn mc_correlation(spec: &PriorSpec, alpha: f64, n: usize, seed: u64) -> Result<Estimate> {
    spec.validate()?;
    check_phi_alpha(spec.phi, alpha)?;
    if n < 2 * CHUNKS {
        return Err(Error::Input(format!("need at least {} draws", 2 * CHUNKS)));
    }
    let chol = car_factor(spec)?;
    let sums = mc_sums(n, seed, 5, |rng, out| {
        let m = latent_masses_in(rng, spec.n_latent, spec.n_atoms, spec.phi, alpha);
        let [lj, ll] = two_rows(rng, spec, chol.as_ref());
        let x: f64 = lj.iter().zip(&m).map(|(a, b)| a * b).sum();
        let y: f64 = ll.iter().zip(&m).map(|(a, b)| a * b).sum();
        out.copy_from_slice(&[x, y, x * x, y * y, x * y]);
    });
    Ok(correlation_from_sums(&sums))
}

/// Columns: `E x, E y, E x², E y², E xy`, then the count. The standard error
/// comes from the spread of the per-stream correlations.
fn correlation_from_sums(sums: &[Vec<f64>]) -> Estimate {
    let corr = |s: &[f64]| {
        let n = s[5];
        let (mx, my) = (s[0] / n, s[1] / n);
        (s[4] / n - mx * my) / ((s[2] / n - mx * mx) * (s[3] / n - my * my)).sqrt()
    };
    let per_chunk: Vec<f64> = sums.iter().map(|s| corr(s)).collect();
    let mut total = vec![0.0; 6];
    for s in sums {
        total.iter_mut().zip(s).for_each(|(a, v)| *a += v);
    }
    let spread = crate::numeric::variance(&per_chunk);
    Estimate { value: corr(&total), se: (spread / sums.len() as f64).sqrt() }
}

/// As [`mc_correlation`] but with the latent masses integrated out exactly:
/// each draw contributes `λ_jᵀ M λ_ℓ`, `λ_jᵀ M λ_j`, `λ_ℓᵀ M λ_ℓ` and `m_A Σλ`, where
/// `M` holds the truncated second moments. Only the loadings are simulated.
pub fn mc_correlation_conditional(spec: &PriorSpec, alpha: f64, n: usize, seed: u64) -> Result<Estimate> {
    spec.validate()?;
    if n < 2 * CHUNKS {
        return Err(Error::Input(format!("need at least {} draws", 2 * CHUNKS)));
    }
    let mom = truncated_latent_moments(spec.phi, spec.n_atoms, alpha)?;
    let chol = car_factor(spec)?;
    let quad = |a: &[f64], b: &[f64]| {
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let diag: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        mom.second * diag + mom.cross * (sa * sb - diag)
    };
    let sums = mc_sums(n, seed, 5, |rng, out| {
        let [lj, ll] = two_rows(rng, spec, chol.as_ref());
        out[0] = mom.mean * lj.iter().sum::<f64>();
        out[1] = mom.mean * ll.iter().sum::<f64>();
        out[2] = quad(&lj, &lj);
        out[3] = quad(&ll, &ll);
        out[4] = quad(&lj, &ll);
    });
    Ok(correlation_from_sums(&sums))
}

/// MC mean of `μ̃_j(A)/μ̃_j(Θ)` over prior draws.
pub fn expectation_mc(spec: &PriorSpec, alpha: f64, n: usize, seed: u64) -> Result<Estimate> {
    spec.validate()?;
    check_phi_alpha(spec.phi, alpha)?;
    if n < 2 {
        return Err(Error::Input("need at least two draws".into()));
    }
    if alpha == 0.0 {
        return Ok(Estimate { value: 0.0, se: 0.0 });
    }
    let chol = car_factor(spec)?;
    let sums = mc_sums(n, seed, 2, |rng, out| {
        let (in_a, total) = latent_masses(rng, spec.n_latent, spec.n_atoms, spec.phi, alpha);
        let [lj, _] = two_rows(rng, spec, chol.as_ref());
        let num: f64 = lj.iter().zip(&in_a).map(|(a, b)| a * b).sum();
        let den: f64 = lj.iter().zip(&total).map(|(a, b)| a * b).sum();
        let p = if den > 0.0 { num / den } else { 0.0 };
        out[0] = p;
        out[1] = p * p;
    });
    Ok(mean_estimate(&sums, 0, 1))
}

/// `log r^k_{jℓ} = log(Σ_h λ_jh m_hk) − log(Σ_h λ_ℓh m_hk)`.
pub fn log_jump_ratio(lj: &[f64], ll: &[f64], m: &[f64]) -> f64 {
    let a: f64 = lj.iter().zip(m).map(|(x, y)| x * y).sum();
    let b: f64 = ll.iter().zip(m).map(|(x, y)| x * y).sum();
    a.ln() - b.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRatioRow {
    pub n_latent: usize,
    pub mean: f64,
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub var: f64,
    pub var_lo: f64,
    pub var_hi: f64,
}

/// Mean and variance of `log r` for each `H`, with normal-theory 95% intervals
/// (the variance interval uses the sample fourth central moment).
pub fn jump_ratio_study(spec: &PriorSpec, hs: &[usize], n: usize, seed: u64) -> Result<Vec<JumpRatioRow>> {
    hs.iter()
        .enumerate()
        .map(|(i, &h)| {
            let s = PriorSpec { n_latent: h, ..spec.clone() };
            s.validate()?;
            if n < 2 {
                return Err(Error::Input("need at least two draws".into()));
            }
            let chol = car_factor(&s)?;
            let sums = mc_sums(n, seed.wrapping_add(i as u64), 4, |rng, out| {
                let [lj, ll] = two_rows(rng, &s, chol.as_ref());
                let m: Vec<f64> = (0..h).map(|_| rng.gamma(s.phi, 1.0)).collect();
                let x = log_jump_ratio(&lj, &ll, &m);
                out.copy_from_slice(&[x, x * x, x * x * x, x * x * x * x]);
            });
            let mut t = [0.0; 5];
            for c in &sums {
                t.iter_mut().zip(c).for_each(|(a, v)| *a += v);
            }
            let nn = t[4];
            let (m1, m2, m3, m4) = (t[0] / nn, t[1] / nn, t[2] / nn, t[3] / nn);
            let var = m2 - m1 * m1;
            let mu4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
            let se_mean = (var / nn).sqrt();
            let se_var = ((mu4 - var * var).max(0.0) / nn).sqrt();
            Ok(JumpRatioRow {
                n_latent: h,
                mean: m1,
                mean_lo: m1 - 1.96 * se_mean,
                mean_hi: m1 + 1.96 * se_mean,
                var,
                var_lo: var - 1.96 * se_var,
                var_hi: var + 1.96 * se_var,
            })
        })
        .collect()
}

/// One row of a formula-versus-simulation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub experiment: String,
    pub formula: f64,
    pub mc: f64,
    pub se: f64,
}

impl Comparison {
    pub fn new(experiment: impl Into<String>, formula: f64, mc: Estimate) -> Self {
        Self { experiment: experiment.into(), formula, mc: mc.value, se: mc.se }
    }

    pub fn z(&self) -> f64 {
        (self.mc - self.formula) / self.se
    }

    pub fn within(&self, k: f64) -> bool {
        self.z().abs() <= k
    }
}

pub fn write_comparisons(path: &Path, rows: &[Comparison]) -> Result<()> {
    let mut out = String::from("experiment,formula,mc,se,z\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.experiment, r.formula, r.mc, r.se, r.z()));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_jump_ratio(path: &Path, prior: &str, rows: &[JumpRatioRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "prior,h,mean,mean_lo,mean_hi,var,var_lo,var_hi").map_err(io)?;
    for r in rows {
        writeln!(w, "{prior},{},{},{},{},{},{},{}", r.n_latent, r.mean, r.mean_lo, r.mean_hi, r.var, r.var_lo, r.var_hi)
            .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid(h: usize, psi: f64) -> PriorSpec {
        PriorSpec { n_latent: h, n_atoms: 50, phi: 1.0, loadings: LoadingsSpec::IidGamma { psi } }
    }

    #[test]
    fn corm_moment_values() {
        let (m, c) = corm_moments(1.0, 0.5).unwrap();
        assert_eq!(m, 0.5);
        assert!((c - 1.125).abs() < 1e-12, "{c}");
    }

    #[test]
    fn truncated_moments_at_k_one() {
        // K = 1: J ~ Beta(φ, φ) and μ*(A) = m J 1[θ ∈ A].
        let phi = 2.0;
        let m = truncated_latent_moments(phi, 1, 0.3).unwrap();
        assert!((m.mean - 0.3 * phi * 0.5).abs() < 1e-15);
        let ej2 = phi * (phi + 1.0) / (2.0 * phi * (2.0 * phi + 1.0));
        assert!((m.second - 0.3 * phi * (phi + 1.0) * ej2).abs() < 1e-15);
        assert!((m.cross - 0.3 * phi * phi * ej2).abs() < 1e-15);
    }

    #[test]
    fn corr_limits_and_monotonicity() {
        let v = corr_iid_scores(4, 1e9, 0.5, 0.3, 0.1).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        assert!(corr_iid_scores(8, 1.0, 0.5, 0.3, 0.1).unwrap() > corr_iid_scores(4, 1.0, 0.5, 0.3, 0.1).unwrap());
        assert!(corr_iid_scores(4, 2.0, 0.5, 0.3, 0.1).unwrap() > corr_iid_scores(4, 1.0, 0.5, 0.3, 0.1).unwrap());
        let d = corr_iid_scores_derived(4, 1.0, 0.5, 0.3, 0.1).unwrap();
        assert!(d > 0.0 && d < 1.0);
    }

    #[test]
    fn mgp_cov_below_var() {
        let m = truncated_latent_moments(2.0, 2000, 0.5).unwrap();
        for h in [1, 4, 8, 16] {
            let t = mgp_cov_terms(2.5, 3.0, 6.0, h, &m).unwrap();
            assert!(t.cov < t.var);
            let d = mgp_cov_terms_derived(2.5, 3.0, 6.0, h, &m).unwrap();
            assert!(d.cov < d.var);
        }
        assert!(mgp_cov_terms(2.0, 3.0, 6.0, 4, &m).is_err());
        // Larger a2 weakens the correlation.
        let lo = mgp_cov_terms_derived(2.5, 3.0, 6.0, 8, &m).unwrap().corr();
        let hi = mgp_cov_terms_derived(2.5, 8.0, 6.0, 8, &m).unwrap().corr();
        assert!(hi < lo);
    }

    #[test]
    fn identical_rows_give_zero_log_ratio() {
        assert_eq!(log_jump_ratio(&[0.3, 2.0], &[0.3, 2.0], &[1.5, 0.1]), 0.0);
    }

    #[test]
    fn expectation_edge_cases() {
        let s = iid(2, 1.0);
        assert_eq!(expectation_mc(&s, 0.0, 100, 1).unwrap().value, 0.0);
        let half = expectation_mc(&s, 0.5, 4000, 2).unwrap();
        assert!(half.z(0.5).abs() < 3.0, "{half:?}");
    }

    #[test]
    fn beta_draws_have_the_right_mean() {
        let mut rng = chunk_rng(5, 0);
        let n = 200_000;
        let (a, b) = (0.01, 1.0);
        let mean: f64 = (0..n).map(|_| beta_draw(&mut rng, a, b)).sum::<f64>() / n as f64;
        assert!((mean - a / (a + b)).abs() < 5e-4, "{mean}");
    }
}
