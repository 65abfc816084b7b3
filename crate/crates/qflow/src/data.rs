//! Seeded synthetic data generators.
//!
//! Every generator is a pure function of (spec, n, seed); see [`crate::rng`]
//! for the exact stream so runs reproduce byte for byte. Parallel generation
//! should derive per-shard streams with [`Rng::shard`].
//!
//! Geometry of the toy 2-D shapes (fixed here so figures are reproducible):
//!
//! - **two moons**: upper arc `(cos θ, sin θ)` and lower arc
//!   `(1 − cos θ, ½ − sin θ)` for `θ ∈ [0, π]`, both of radius 1 and
//!   interlocking, with isotropic Gaussian noise of the given scale added.
//! - **checkerboard**: uniform over the 8 dark cells of a 4×4 board on
//!   `[−2, 2]²`, where cell `(i, j)` (unit cells indexed from the corner) is
//!   dark iff `i + j` is even.

use crate::array::Array;
use crate::error::Error;
use crate::oracle;
use crate::rng::Rng;

/// Covariance of one mixture component.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    /// `σ²·I` with the given variance.
    Isotropic(f64),
    /// Full SPD matrix.
    Full(Array),
}

/// Gaussian mixture with arbitrary means, covariances, and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmSpec {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Covariance>,
    pub weights: Vec<f64>,
}

impl GmmSpec {
    pub fn new(means: Vec<Vec<f64>>, covariances: Vec<Covariance>, weights: Vec<f64>) -> Result<GmmSpec, Error> {
        if means.is_empty() || means.len() != covariances.len() || means.len() != weights.len() {
            return Err(Error::invalid("GMM components, covariances, and weights must align and be non-empty"));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("GMM means must share one dimension"));
        }
        for c in &covariances {
            match c {
                Covariance::Isotropic(v) if *v <= 0.0 => {
                    return Err(Error::invalid("isotropic covariance scalar must be positive"))
                }
                Covariance::Full(m) if m.shape() != (dim, dim) => {
                    return Err(Error::invalid("full covariance must be d×d"))
                }
                _ => {}
            }
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("GMM weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("GMM weights must sum to 1, got {total}")));
        }
        Ok(GmmSpec { means, covariances, weights })
    }

    /// Single Gaussian as a one-component mixture.
    pub fn single(mean: Vec<f64>, covariance: Covariance) -> GmmSpec {
        GmmSpec { means: vec![mean], covariances: vec![covariance], weights: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }
}

/// Zero-mean Gaussian built from 2×2 blocks `[[1, ρ], [ρ, 1]]` — the pair
/// construction whose mutual information has the closed form in
/// [`oracle::true_mi`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockGaussianSpec {
    pub dim: usize,
    pub rho: f64,
}

impl BlockGaussianSpec {
    pub fn new(dim: usize, rho: f64) -> Result<BlockGaussianSpec, Error> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::invalid(format!("block Gaussian dimension must be even and positive, got {dim}")));
        }
        if !(rho.abs() < 1.0) {
            return Err(Error::invalid(format!("block correlation must satisfy |rho| < 1, got {rho}")));
        }
        Ok(BlockGaussianSpec { dim, rho })
    }
}

/// `n` i.i.d. draws from the mixture; deterministic per seed.
pub fn sample_gmm(spec: &GmmSpec, n: usize, seed: u64) -> Array {
    let mut rng = Rng::seed_from_u64(seed);
    let d = spec.dim();
    // pre-factor any full covariances once
    let factors: Vec<Option<Array>> = spec
        .covariances
        .iter()
        .map(|c| match c {
            Covariance::Isotropic(_) => None,
            Covariance::Full(m) => Some(oracle::cholesky(m).expect("GMM covariance must be SPD")),
        })
        .collect();
    let mut out = Array::zeros(n, d);
    for i in 0..n {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut comp = spec.components() - 1;
        for (c, &w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = c;
                break;
            }
        }
        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let row = &mut out.data_mut()[i * d..(i + 1) * d];
        match (&spec.covariances[comp], &factors[comp]) {
            (Covariance::Isotropic(var), _) => {
                let s = var.sqrt();
                for j in 0..d {
                    row[j] = spec.means[comp][j] + s * z[j];
                }
            }
            (Covariance::Full(_), Some(l)) => {
                for j in 0..d {
                    let mut v = spec.means[comp][j];
                    for k in 0..=j {
                        v += l.get(j, k) * z[k];
                    }
                    row[j] = v;
                }
            }
            _ => unreachable!(),
        }
    }
    out
}

/// Two interlocking half-circle arcs with Gaussian noise.
pub fn sample_two_moon(n: usize, noise: f64, seed: u64) -> Array {
    assert!(n >= 1, "sample_two_moon: n must be positive");
    let mut rng = Rng::seed_from_u64(seed);
    let mut out = Array::zeros(n, 2);
    for i in 0..n {
        let theta = rng.uniform() * std::f64::consts::PI;
        let upper = rng.uniform() < 0.5;
        let (mut x, mut y) = if upper {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        x += noise * rng.normal();
        y += noise * rng.normal();
        out.set(i, 0, x);
        out.set(i, 1, y);
    }
    out
}

/// Uniform over the 8 dark unit cells of a 4×4 board on `[−2, 2]²`.
pub fn sample_checkerboard(n: usize, seed: u64) -> Array {
    assert!(n >= 1, "sample_checkerboard: n must be positive");
    let mut rng = Rng::seed_from_u64(seed);
    let dark: Vec<(usize, usize)> = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .filter(|(i, j)| (i + j) % 2 == 0)
        .collect();
    debug_assert_eq!(dark.len(), 8);
    let mut out = Array::zeros(n, 2);
    for i in 0..n {
        let (ci, cj) = dark[rng.below(8)];
        out.set(i, 0, -2.0 + ci as f64 + rng.uniform());
        out.set(i, 1, -2.0 + cj as f64 + rng.uniform());
    }
    out
}

/// Draws from `N(0, Σ)` with Σ block-diagonal of `[[1, ρ], [ρ, 1]]` blocks,
/// via the per-block Cholesky factor `x₂ = ρz₁ + √(1−ρ²)z₂`.
pub fn sample_block_gaussian(spec: &BlockGaussianSpec, n: usize, seed: u64) -> Array {
    let mut rng = Rng::seed_from_u64(seed);
    let d = spec.dim;
    let tail = (1.0 - spec.rho * spec.rho).sqrt();
    let mut out = Array::zeros(n, d);
    for i in 0..n {
        for b in 0..d / 2 {
            let z1 = rng.normal();
            let z2 = rng.normal();
            out.set(i, 2 * b, z1);
            out.set(i, 2 * b + 1, spec.rho * z1 + tail * z2);
        }
    }
    out
}

/// The built-in 2-D mixture playing the source role in the GMM ratio task:
/// three components along the diagonal of the second quadrant.
pub fn gmm_task_p() -> GmmSpec {
    GmmSpec::new(
        vec![vec![-2.0, 2.0], vec![-1.5, 1.5], vec![-1.0, 1.0]],
        vec![Covariance::Isotropic(0.75), Covariance::Isotropic(0.25), Covariance::Isotropic(0.75)],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    )
    .unwrap()
}

/// The target mixture of the GMM ratio task: two components in the lower
/// half-plane, supports barely overlapping those of [`gmm_task_p`].
pub fn gmm_task_q() -> GmmSpec {
    GmmSpec::new(
        vec![vec![0.75, -1.5], vec![-2.0, -3.0]],
        vec![Covariance::Isotropic(0.5), Covariance::Isotropic(0.5)],
        vec![0.5, 0.5],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmm_single_component_moments() {
        let spec = GmmSpec::single(vec![2.0, -1.0], Covariance::Isotropic(0.49));
        let n = 100_000;
        let x = sample_gmm(&spec, n, 123);
        let sigma = 0.7;
        let bound = 4.0 * sigma / (n as f64).sqrt();
        for j in 0..2 {
            let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            assert!((mean - spec.means[0][j]).abs() < bound, "dim {j} mean {mean}");
        }
    }

    #[test]
    fn gmm_degenerate_weights_select_one_component() {
        let spec = GmmSpec::new(
            vec![vec![5.0], vec![-5.0], vec![0.0]],
            vec![Covariance::Isotropic(0.01); 3],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let x = sample_gmm(&spec, 500, 7);
        assert!(x.data().iter().all(|&v| v > 4.0));
    }

    #[test]
    fn gmm_seed_determinism() {
        let spec = gmm_task_p();
        assert_eq!(sample_gmm(&spec, 64, 9).data(), sample_gmm(&spec, 64, 9).data());
        assert_ne!(sample_gmm(&spec, 64, 9).data(), sample_gmm(&spec, 64, 10).data());
    }

    #[test]
    fn gmm_full_covariance_matches_target() {
        let cov = Array::from_vec(2, 2, vec![1.0, 0.6, 0.6, 1.0]);
        let spec = GmmSpec::single(vec![0.0, 0.0], Covariance::Full(cov));
        let n = 100_000;
        let x = sample_gmm(&spec, n, 5);
        let mut cross = 0.0;
        for i in 0..n {
            cross += x.get(i, 0) * x.get(i, 1);
        }
        cross /= n as f64;
        assert!((cross - 0.6).abs() < 0.02, "cross {cross}");
    }

    #[test]
    fn gmm_spec_validation() {
        assert!(GmmSpec::new(vec![], vec![], vec![]).is_err());
        assert!(GmmSpec::new(vec![vec![0.0]], vec![Covariance::Isotropic(0.0)], vec![1.0]).is_err());
        assert!(GmmSpec::new(vec![vec![0.0]], vec![Covariance::Isotropic(1.0)], vec![0.7]).is_err());
    }

    #[test]
    fn two_moon_noiseless_points_lie_on_arcs() {
        let x = sample_two_moon(2_000, 0.0, 3);
        for i in 0..x.rows() {
            let (a, b) = (x.get(i, 0), x.get(i, 1));
            let on_upper = (a * a + b * b - 1.0).abs() < 1e-12 && b >= -1e-12;
            let du = (a - 1.0) * (a - 1.0) + (b - 0.5) * (b - 0.5);
            let on_lower = (du - 1.0).abs() < 1e-12 && b <= 0.5 + 1e-12;
            assert!(on_upper || on_lower, "point {a},{b} off both arcs");
        }
    }

    #[test]
    fn checkerboard_floor_parity_holds() {
        let x = sample_checkerboard(5_000, 11);
        for i in 0..x.rows() {
            let (a, b) = (x.get(i, 0), x.get(i, 1));
            assert!((-2.0..2.0).contains(&a) && (-2.0..2.0).contains(&b));
            let (ci, cj) = ((a + 2.0).floor() as i64, (b + 2.0).floor() as i64);
            assert_eq!((ci + cj) % 2, 0, "light cell hit at {a},{b}");
        }
    }

    #[test]
    fn two_moon_and_checkerboard_determinism() {
        assert_eq!(sample_two_moon(50, 0.05, 1).data(), sample_two_moon(50, 0.05, 1).data());
        assert_eq!(sample_checkerboard(50, 1).data(), sample_checkerboard(50, 1).data());
    }

    #[test]
    fn block_gaussian_correlations() {
        let spec = BlockGaussianSpec::new(4, 0.8).unwrap();
        let n = 100_000;
        let x = sample_block_gaussian(&spec, n, 21);
        let corr = |a: usize, b: usize| {
            let mut num = 0.0;
            let (mut va, mut vb) = (0.0, 0.0);
            for i in 0..n {
                num += x.get(i, a) * x.get(i, b);
                va += x.get(i, a) * x.get(i, a);
                vb += x.get(i, b) * x.get(i, b);
            }
            num / (va.sqrt() * vb.sqrt())
        };
        let within = corr(0, 1);
        assert!((0.78..=0.82).contains(&within), "within-block corr {within}");
        let across = corr(1, 2);
        assert!(across.abs() < 4.0 / (n as f64).sqrt() * 1.5, "cross-block corr {across}");
    }

    #[test]
    fn block_gaussian_rho_zero_is_isotropic() {
        let spec = BlockGaussianSpec::new(2, 0.0).unwrap();
        let n = 100_000;
        let x = sample_block_gaussian(&spec, n, 2);
        let mut cross = 0.0;
        for i in 0..n {
            cross += x.get(i, 0) * x.get(i, 1);
        }
        cross /= n as f64;
        assert!(cross.abs() < 4.0 / (n as f64).sqrt(), "corr {cross}");
    }

    #[test]
    fn block_gaussian_spec_validation() {
        assert!(BlockGaussianSpec::new(3, 0.5).is_err());
        assert!(BlockGaussianSpec::new(0, 0.5).is_err());
        assert!(BlockGaussianSpec::new(2, 1.0).is_err());
    }
}
