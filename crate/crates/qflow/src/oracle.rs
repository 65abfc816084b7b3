//! Independent ground truths the evaluation suite compares against:
//! closed-form Gaussian transport maps and W2 costs, analytic mixture
//! log-densities and log-ratios, exact optimal assignment on small samples,
//! and the closed-form mutual information of the block-Gaussian pair.
//!
//! Nothing here touches the learned models — that independence is the point.

use std::f64::consts::PI;

use crate::array::Array;
use crate::data::{BlockGaussianSpec, Covariance, GmmSpec};
use crate::error::Error;

/// Eigenvalues below `EIG_CLAMP_TOL · λ_max` in magnitude are treated as
/// zero when taking matrix square roots.
const EIG_CLAMP_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of an SPD matrix.
pub fn cholesky(a: &Array) -> Result<Array, Error> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::NotSpd { context: format!("cholesky of non-square {:?}", a.shape()) });
    }
    let mut l = Array::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotSpd { context: format!("non-positive pivot {sum} at {i}") });
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations: returns
/// `(eigenvalues, V)` with `a = V·diag(λ)·Vᵀ` and V's columns orthonormal.
/// Intended for the small dimensions used here (d ≤ 32).
pub fn sym_eigen(a: &Array) -> Result<(Vec<f64>, Array), Error> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::NotSpd { context: format!("eigen of non-square {:?}", a.shape()) });
    }
    let sym_err: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (a.get(i, j) - a.get(j, i)).abs())
        .fold(0.0, f64::max);
    if sym_err > 1e-9 {
        return Err(Error::NotSpd { context: format!("matrix is not symmetric (max asymmetry {sym_err})") });
    }
    let mut m = a.clone();
    let mut v = Array::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Ok(((0..n).map(|i| m.get(i, i)).collect(), v))
}

/// `Σ^{power}` for a symmetric PSD matrix through its eigendecomposition,
/// clamping tiny negative eigenvalues at zero. `power = 0.5` is the matrix
/// square root, `−0.5` the inverse square root.
fn spd_power(a: &Array, power: f64) -> Result<Array, Error> {
    let (mut vals, v) = sym_eigen(a)?;
    let max = vals.iter().cloned().fold(0.0, f64::max);
    for lam in &mut vals {
        if *lam < -EIG_CLAMP_TOL * max.max(1.0) {
            return Err(Error::NotSpd { context: format!("negative eigenvalue {lam}") });
        }
        *lam = lam.max(0.0);
        if power < 0.0 && *lam == 0.0 {
            return Err(Error::NotSpd { context: "singular matrix under negative power".into() });
        }
    }
    let n = a.rows();
    let mut scaled = v.clone();
    for j in 0..n {
        let f = vals[j].powf(power);
        for i in 0..n {
            scaled.set(i, j, scaled.get(i, j) * f);
        }
    }
    Ok(scaled.matmul_bt(&v))
}

pub fn sqrt_spd(a: &Array) -> Result<Array, Error> {
    spd_power(a, 0.5)
}

/// Affine transport map `x ↦ A·x + b`, applied rowwise to batches.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub matrix: Array,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> AffineMap {
        AffineMap { matrix: Array::identity(d), offset: vec![0.0; d] }
    }

    pub fn apply(&self, x: &Array) -> Array {
        x.matmul_bt(&self.matrix).add_row_broadcast(&Array::from_row(&self.offset))
    }
}

/// Closed-form optimal transport between Gaussians:
/// `A = Σ₁^{−1/2}(Σ₁^{1/2}Σ₂Σ₁^{1/2})^{1/2}Σ₁^{−1/2}`, `b = μ₂ − Aμ₁`, and
/// `W₂² = ‖μ₁−μ₂‖² + tr(Σ₁+Σ₂−2(Σ₁^{1/2}Σ₂Σ₁^{1/2})^{1/2})`.
pub fn gaussian_ot_map(
    mu1: &[f64],
    sigma1: &Array,
    mu2: &[f64],
    sigma2: &Array,
) -> Result<(AffineMap, f64), Error> {
    let d = mu1.len();
    if mu2.len() != d || sigma1.shape() != (d, d) || sigma2.shape() != (d, d) {
        return Err(Error::invalid("gaussian_ot_map: dimension mismatch"));
    }
    let s1_half = spd_power(sigma1, 0.5)?;
    let s1_half_inv = spd_power(sigma1, -0.5)?;
    let mid = s1_half.matmul(sigma2).matmul(&s1_half);
    // symmetrize against rounding before the square root
    let mid = mid.add(&mid.transpose()).scale(0.5);
    let mid_half = sqrt_spd(&mid)?;
    let matrix = s1_half_inv.matmul(&mid_half).matmul(&s1_half_inv);
    let matrix = matrix.add(&matrix.transpose()).scale(0.5);
    let offset: Vec<f64> = (0..d)
        .map(|i| mu2[i] - (0..d).map(|j| matrix.get(i, j) * mu1[j]).sum::<f64>())
        .collect();
    let mean_sq: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let trace: f64 = (0..d).map(|i| sigma1.get(i, i) + sigma2.get(i, i) - 2.0 * mid_half.get(i, i)).sum();
    Ok((AffineMap { matrix, offset }, mean_sq + trace))
}

fn log_gaussian_density(mean: &[f64], cov: &Covariance, x: &[f64]) -> f64 {
    let d = mean.len() as f64;
    match cov {
        Covariance::Isotropic(var) => {
            let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
            -0.5 * (d * (2.0 * PI * var).ln() + sq / var)
        }
        Covariance::Full(sigma) => {
            let l = cholesky(sigma).expect("full covariance must be SPD");
            let n = mean.len();
            // solve L y = x − μ by forward substitution
            let mut y = vec![0.0; n];
            for i in 0..n {
                let mut v = x[i] - mean[i];
                for k in 0..i {
                    v -= l.get(i, k) * y[k];
                }
                y[i] = v / l.get(i, i);
            }
            let quad: f64 = y.iter().map(|v| v * v).sum();
            let logdet: f64 = (0..n).map(|i| 2.0 * l.get(i, i).ln()).sum();
            -0.5 * (d * (2.0 * PI).ln() + logdet + quad)
        }
    }
}

/// Log density of a Gaussian mixture at one point, via log-sum-exp.
pub fn gmm_log_density(spec: &GmmSpec, x: &[f64]) -> f64 {
    assert_eq!(x.len(), spec.dim(), "gmm_log_density: point dim {} vs spec {}", x.len(), spec.dim());
    let terms: Vec<f64> = spec
        .means
        .iter()
        .zip(&spec.covariances)
        .zip(&spec.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|((m, c), &w)| w.ln() + log_gaussian_density(m, c, x))
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `log q(x) − log p(x)` between two mixtures.
pub fn true_log_ratio(spec_p: &GmmSpec, spec_q: &GmmSpec, x: &[f64]) -> f64 {
    gmm_log_density(spec_q, x) - gmm_log_density(spec_p, x)
}

/// Full covariance matrix of a [`BlockGaussianSpec`].
pub fn block_covariance(spec: &BlockGaussianSpec) -> Array {
    let mut sigma = Array::identity(spec.dim);
    for b in 0..spec.dim / 2 {
        sigma.set(2 * b, 2 * b + 1, spec.rho);
        sigma.set(2 * b + 1, 2 * b, spec.rho);
    }
    sigma
}

/// Exact minimum-mean-squared-cost assignment between two equal-size point
/// sets (Hungarian algorithm with potentials, O(n³)). Returns the optimal
/// permutation π (row i of `a` pairs with row π(i) of `b`) and the mean
/// squared cost `(1/n) Σ‖aᵢ − b_{π(i)}‖²`.
pub fn discrete_ot(a: &Array, b: &Array) -> Result<(Vec<usize>, f64), Error> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::LengthMismatch { context: "discrete_ot batches".into(), left: a.rows(), right: b.rows() });
    }
    let n = a.rows();
    if n == 0 || n > 1024 {
        return Err(Error::invalid(format!("discrete_ot supports 1 ≤ n ≤ 1024, got {n}")));
    }
    let cost = |i: usize, j: usize| -> f64 {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    // shortest augmenting path with row/column potentials (1-indexed)
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // column j -> row
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < min_slack[j] {
                        min_slack[j] = cur;
                        way[j] = j0;
                    }
                    if min_slack[j] < delta {
                        delta = min_slack[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    Ok((perm, total / n as f64))
}

/// Closed-form mutual information of the block-Gaussian pair:
/// `−(d/4)·ln(1−ρ²)` nats (d/2 independent blocks, each `−½ln(1−ρ²)`).
pub fn true_mi(d: usize, rho: f64) -> Result<f64, Error> {
    let spec = BlockGaussianSpec::new(d, rho)?;
    Ok(-(spec.dim as f64 / 4.0) * (1.0 - rho * rho).ln())
}
