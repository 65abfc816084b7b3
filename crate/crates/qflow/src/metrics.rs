//! Evaluation metrics, computed against the closed forms in [`crate::oracle`].
//!
//! `Var(Q)` in the unexplained-variance percentage is the *total* variance of
//! the target samples (trace of their empirical covariance). The cosine
//! metric keeps expectations of norms — not norms of expectations — in the
//! denominator, implemented verbatim from its defining formula.

use crate::array::Array;
use crate::error::Error;
use crate::oracle::AffineMap;
use crate::ratio::{log_ratio, RatioModel};

/// One metric evaluation, tagged with enough metadata to reproduce it.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub samples: usize,
    pub seed: u64,
    pub config_digest: String,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64, samples: usize, seed: u64, config_digest: impl Into<String>) -> EvalReport {
        let samples_count = samples;
        assert!(samples_count > 0, "EvalReport: sample count must be positive");
        EvalReport { metric: metric.into(), value, samples: samples_count, seed, config_digest: config_digest.into() }
    }
}

/// Trace of the empirical covariance — the total variance used to normalize
/// the unexplained-variance percentage.
pub fn total_variance(samples: &Array) -> f64 {
    let n = samples.rows() as f64;
    let mut means = vec![0.0; samples.cols()];
    for i in 0..samples.rows() {
        for (j, m) in means.iter_mut().enumerate() {
            *m += samples.get(i, j);
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut trace = 0.0;
    for i in 0..samples.rows() {
        for (j, m) in means.iter().enumerate() {
            let d = samples.get(i, j) - m;
            trace += d * d;
        }
    }
    trace / n
}

/// Unexplained variance percentage:
/// `100 · mean‖T̂(x) − T*(x)‖² / Var(Q)`.
pub fn l2_uvp<F>(t_hat: F, t_star: &AffineMap, samples: &Array, var_q: f64) -> Result<f64, Error>
where
    F: Fn(&Array) -> Array,
{
    if var_q <= 0.0 {
        return Err(Error::invalid(format!("l2_uvp: Var(Q) must be positive, got {var_q}")));
    }
    let got = t_hat(samples);
    let want = t_star.apply(samples);
    Ok(100.0 * got.sub(&want).mean_row_sq_norm() / var_q)
}

/// Cosine similarity of displacement fields:
/// `E⟨T̂(x)−x, T*(x)−x⟩ / (E‖T̂(x)−x‖ · E‖T*(x)−x‖)`.
pub fn cos_metric<F, G>(t_hat: F, t_star: G, samples: &Array) -> Result<f64, Error>
where
    F: Fn(&Array) -> Array,
    G: Fn(&Array) -> Array,
{
    let d_hat = t_hat(samples).sub(samples);
    let d_star = t_star(samples).sub(samples);
    let n = samples.rows();
    let mut inner = 0.0;
    let mut norm_hat = 0.0;
    let mut norm_star = 0.0;
    for i in 0..n {
        let (a, b) = (d_hat.row(i), d_star.row(i));
        inner += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        norm_hat += a.iter().map(|x| x * x).sum::<f64>().sqrt();
        norm_star += b.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let nf = n as f64;
    let denom = (norm_hat / nf) * (norm_star / nf);
    if denom == 0.0 {
        return Err(Error::invalid("cos_metric: degenerate displacements (both maps are the identity)"));
    }
    Ok((inner / nf) / denom)
}

/// Density-ratio mean absolute error, summed over the two test sets:
/// `(1/N′) Σ|r−r̂|` over P-test plus `(1/M′) Σ|r−r̂|` over Q-test.
pub fn dre_mae(
    estimate_p: &[f64],
    truth_p: &[f64],
    estimate_q: &[f64],
    truth_q: &[f64],
) -> Result<f64, Error> {
    if estimate_p.len() != truth_p.len() {
        return Err(Error::LengthMismatch { context: "dre_mae P points".into(), left: estimate_p.len(), right: truth_p.len() });
    }
    if estimate_q.len() != truth_q.len() {
        return Err(Error::LengthMismatch { context: "dre_mae Q points".into(), left: estimate_q.len(), right: truth_q.len() });
    }
    let mae = |est: &[f64], truth: &[f64]| -> f64 {
        if est.is_empty() {
            return 0.0;
        }
        est.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / est.len() as f64
    };
    Ok(mae(estimate_p, truth_p) + mae(estimate_q, truth_q))
}

/// Mutual information estimate `−mean log_ratio(x)` over samples of the
/// correlated distribution, valid when the ratio model was trained with the
/// isotropic Gaussian as the target.
pub fn mi_estimate(model: &RatioModel, samples_p: &Array) -> f64 {
    let ratios = log_ratio(model, samples_p);
    -ratios.iter().sum::<f64>() / ratios.len() as f64
}
