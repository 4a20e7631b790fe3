//! Exact sampling from univariate log-concave densities by the
//! ratio-of-uniforms method with mode shift, and the generalized inverse
//! Gaussian built on it.
//!
//! For a log-concave `f` with mode `m`, the set
//! `{(u, v) : 0 < u ≤ sqrt(f(m + v/u) / f(m))}` is convex and contained in
//! `[0, 1] × [v−, v+]` where `v± = extremum of (t − m) sqrt(f(t) / f(m))`.
//! Uniform points in the rectangle that land in the set give `m + v/u ~ f`.

use rand::Rng;

/// Draw from the density proportional to `exp(logf(x))`.
///
/// `logf` returns the log density and its derivative; it must be concave
/// with a finite mode at `mode`.
pub fn sample_log_concave<R, F>(rng: &mut R, logf: F, mode: f64) -> f64
where
    R: Rng + ?Sized,
    F: Fn(f64) -> (f64, f64),
{
    let top = logf(mode).0;
    let v_plus = extreme_offset(&logf, mode, top, 1.0);
    let v_minus = -extreme_offset(&logf, mode, top, -1.0);
    loop {
        let u: f64 = rng.random();
        if u == 0.0 {
            continue;
        }
        let v = v_minus + (v_plus - v_minus) * rng.random::<f64>();
        let x = mode + v / u;
        let lx = logf(x).0;
        if lx.is_finite() && 2.0 * u.ln() <= lx - top {
            return x;
        }
    }
}

/// `max_{s>0} s · exp((logf(m + dir·s) − top)/2)`, inflated slightly.
fn extreme_offset<F: Fn(f64) -> (f64, f64)>(logf: &F, mode: f64, top: f64, dir: f64) -> f64 {
    // ψ(s) = ln s + (logf(m + dir s) − top)/2 is concave; find ψ'(s) = 0.
    let dpsi = |s: f64| 1.0 / s + 0.5 * dir * logf(mode + dir * s).1;
    let mut lo = 0.0;
    let mut hi = 1e-3_f64.max(1e-6 * mode.abs());
    let mut guard = 0;
    while dpsi(hi) > 0.0 && guard < 2000 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dpsi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    let val = s * (0.5 * (logf(mode + dir * s).0 - top)).exp();
    val * (1.0 + 1e-7)
}

/// Draw from GIG(p, a, b) with density `∝ x^{p−1} exp(−(a x + b/x)/2)`, `a, b > 0`.
///
/// Sampled on the log scale, where the density `exp(p t − (a e^t + b e^{−t})/2)`
/// is log-concave.
pub fn sample_gig<R: Rng + ?Sized>(rng: &mut R, p: f64, a: f64, b: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    // Mode of t: a e^{2t} − 2p e^t − b = 0.
    let disc = (p * p + a * b).sqrt();
    let et = if p >= 0.0 { (p + disc) / a } else { b / (disc - p) };
    let mode = et.ln();
    let logf = |t: f64| {
        let e = t.exp();
        let ei = (-t).exp();
        (p * t - 0.5 * (a * e + b * ei), p - 0.5 * (a * e - b * ei))
    };
    sample_log_concave(rng, logf, mode).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::linspace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Kolmogorov–Smirnov statistic against a CDF tabulated by trapezoid
    /// quadrature of the unnormalized density.
    fn ks_against_quadrature(samples: &mut [f64], logpdf: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let xs = linspace(lo, hi, 200_001);
        let ys: Vec<f64> = xs.iter().map(|&x| logpdf(x).exp()).collect();
        let mut cdf = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]);
        }
        let z = *cdf.last().unwrap();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &s) in samples.iter().enumerate() {
            let idx = xs.partition_point(|&x| x < s).min(xs.len() - 1);
            let f = cdf[idx] / z;
            d = d.max((f - i as f64 / n).abs()).max((f - (i + 1) as f64 / n).abs());
        }
        d
    }

    #[test]
    fn gig_matches_quadrature_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(p, a, b) in &[(2.5, 2.0, 1.0), (-40.0, 2.0, 90.0), (0.3, 0.5, 0.2), (-0.5, 2.0, 3.0)] {
            let mut s: Vec<f64> = (0..20_000).map(|_| sample_gig(&mut rng, p, a, b)).collect();
            let logpdf = |x: f64| if x <= 0.0 { f64::NEG_INFINITY } else { (p - 1.0) * x.ln() - 0.5 * (a * x + b / x) };
            let hi = s.iter().copied().fold(0.0, f64::max) * 1.5;
            let d = ks_against_quadrature(&mut s, logpdf, 1e-12, hi);
            // 1.63/sqrt(n) is the 1% critical value.
            assert!(d < 1.63 / (20_000f64).sqrt(), "p={p} a={a} b={b} D={d}");
        }
    }

    #[test]
    fn log_concave_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..50_000)
            .map(|_| sample_log_concave(&mut rng, |x| (-0.5 * (x - 3.0) * (x - 3.0) / 4.0, -(x - 3.0) / 4.0), 3.0))
            .collect();
        let m = crate::numeric::mean(&xs);
        let v = crate::numeric::variance(&xs);
        assert!((m - 3.0).abs() < 3.0 * (4.0f64 / 50_000.0).sqrt());
        assert!((v - 4.0).abs() < 0.1);
    }
}
