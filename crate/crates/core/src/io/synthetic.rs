//! Synthetic grouped data with known generating densities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{mixture_density, Atom};
use crate::priors::GammaSampler;
use crate::sampler::GroupedData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DirichletMix,
    SpatialLattice,
}

/// Generating mixture of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueDensity {
    pub weights: Vec<f64>,
    pub atoms: Vec<Atom>,
}

impl TrueDensity {
    pub fn density(&self, y: f64) -> f64 {
        mixture_density(&self.weights, &self.atoms, y).expect("true weights are valid")
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub data: GroupedData,
    pub truth: Vec<TrueDensity>,
    /// Rook-adjacency edges, both directions, for lattice data.
    pub edges: Option<Vec<(usize, usize)>>,
}

fn sample_mixture<R: Rng + ?Sized>(truth: &TrueDensity, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = truth.weights.len() - 1;
            for (c, w) in truth.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = c;
                    break;
                }
            }
            let a = truth.atoms[pick];
            a.mu + a.sigma2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
        })
        .collect()
}

/// `g` groups of `n` draws from `w1 N(−2,2) + w2 N(0,2) + w3 N(2,2)`, `w ~ Dirichlet(1,1,1)`.
pub fn generate_dirichlet_mix<R: Rng + ?Sized>(g: usize, n: usize, rng: &mut R) -> Result<SyntheticData> {
    if g == 0 || n == 0 {
        return Err(Error::Input("need g >= 1 and n >= 1".into()));
    }
    let atoms = vec![Atom::new(-2.0, 2.0)?, Atom::new(0.0, 2.0)?, Atom::new(2.0, 2.0)?];
    let mut truth = Vec::with_capacity(g);
    let mut groups = Vec::with_capacity(g);
    for _ in 0..g {
        let e: Vec<f64> = (0..3).map(|_| rng.gamma(1.0, 1.0)).collect();
        let s: f64 = e.iter().sum();
        let t = TrueDensity {
            weights: e.iter().map(|v| v / s).collect(),
            atoms: atoms.clone(),
        };
        groups.push(sample_mixture(&t, n, rng));
        truth.push(t);
    }
    Ok(SyntheticData {
        data: GroupedData::from_groups(groups)?,
        truth,
        edges: None,
    })
}

/// Mixture weights at lattice site `(x, y)` with centre `(cx, cy)`.
pub fn lattice_weights(x: f64, y: f64, cx: f64, cy: f64) -> [f64; 3] {
    let w1 = 3.0 * (x - cx) + 3.0 * (y - cy);
    let w2 = -w1;
    let m = w1.max(w2).max(0.0);
    let (e1, e2, e3) = ((w1 - m).exp(), (w2 - m).exp(), (-m).exp());
    let s = e1 + e2 + e3;
    [e1 / s, e2 / s, e3 / s]
}

/// Sites `{0..q}²` (row-major, `x` fastest), `n` draws each from
/// `w1 N(−5,1) + w2 N(0,1) + w3 N(5,1)` with weights from [`lattice_weights`].
pub fn generate_spatial_lattice<R: Rng + ?Sized>(q: usize, n: usize, rng: &mut R) -> Result<SyntheticData> {
    if q == 0 || n == 0 {
        return Err(Error::Input("need q >= 1 and n >= 1".into()));
    }
    let side = q + 1;
    let centre = q as f64 / 2.0;
    let atoms = vec![Atom::new(-5.0, 1.0)?, Atom::new(0.0, 1.0)?, Atom::new(5.0, 1.0)?];
    let mut truth = Vec::new();
    let mut groups = Vec::new();
    let mut edges = Vec::new();
    for yi in 0..side {
        for xi in 0..side {
            let t = TrueDensity {
                weights: lattice_weights(xi as f64, yi as f64, centre, centre).to_vec(),
                atoms: atoms.clone(),
            };
            groups.push(sample_mixture(&t, n, rng));
            truth.push(t);
            let id = yi * side + xi;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (xi as i64 + dx, yi as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < side && (ny as usize) < side {
                    edges.push((id, ny as usize * side + nx as usize));
                }
            }
        }
    }
    Ok(SyntheticData {
        data: GroupedData::from_groups(groups)?,
        truth,
        edges: Some(edges),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lattice_weights_at_centre_and_corner() {
        let w = lattice_weights(2.0, 2.0, 2.0, 2.0);
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        // w̃ = (−12, 12): weights e^{−12}/(1+e^{−12}+e^{12}), …
        let w = lattice_weights(0.0, 0.0, 2.0, 2.0);
        let z = 1.0 + (-12f64).exp() + 12f64.exp();
        let expected = [(-12f64).exp() / z, 12f64.exp() / z, 1.0 / z];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-15 * b.max(1e-300) + 1e-30, "{a} vs {b}");
        }
        assert!((w[0] - 3.775e-11).abs() < 1e-13 && (w[2] - 6.144e-6).abs() < 1e-9);
    }

    #[test]
    fn lattice_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = generate_spatial_lattice(4, 2, &mut rng).unwrap();
        assert_eq!(s.data.n_groups(), 25);
        let edges = s.edges.unwrap();
        let deg = |v: usize| edges.iter().filter(|e| e.0 == v).count();
        assert_eq!(deg(0), 2);
        assert_eq!(deg(24), 2);
        assert_eq!(deg(1), 3);
        assert_eq!(deg(12), 4);
        assert!(edges.iter().all(|&(a, b)| edges.contains(&(b, a))));
    }

    #[test]
    fn dirichlet_mix_is_seeded() {
        let a = generate_dirichlet_mix(5, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_dirichlet_mix(5, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.data.sizes(), vec![10; 5]);
    }
}
