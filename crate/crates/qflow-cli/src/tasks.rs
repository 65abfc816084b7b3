//! Task presets: sampling the source/target pair of each built-in task and
//! the analytic references available for it.

use qflow::array::Array;
use qflow::data::{
    gmm_task_p, gmm_task_q, sample_block_gaussian, sample_checkerboard, sample_gmm, sample_two_moon,
    BlockGaussianSpec, Covariance, GmmSpec,
};
use qflow::oracle::{self, AffineMap};

use crate::config::{RunConfig, Task};
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    P,
    Q,
}

impl std::str::FromStr for Side {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Side, CliError> {
        match s {
            "p" | "P" => Ok(Side::P),
            "q" | "Q" => Ok(Side::Q),
            other => Err(CliError::Config(format!("side must be 'p' or 'q', got '{other}'"))),
        }
    }
}

/// Mixture specs of the endpoints, for tasks where both are mixtures.
pub fn task_gmm_specs(cfg: &RunConfig) -> Option<(GmmSpec, GmmSpec)> {
    match cfg.task {
        Task::GaussianShift => {
            let d = cfg.data.dim;
            Some((
                GmmSpec::single(vec![0.0; d], Covariance::Isotropic(1.0)),
                GmmSpec::single(cfg.data.shift.clone(), Covariance::Isotropic(1.0)),
            ))
        }
        Task::Gmm2d => Some((gmm_task_p(), gmm_task_q())),
        Task::MiGaussian => {
            let spec = BlockGaussianSpec::new(cfg.data.dim, cfg.data.rho).ok()?;
            Some((
                GmmSpec::single(vec![0.0; cfg.data.dim], Covariance::Full(oracle::block_covariance(&spec))),
                GmmSpec::single(vec![0.0; cfg.data.dim], Covariance::Isotropic(1.0)),
            ))
        }
        Task::MoonCheckerboard | Task::Custom => None,
    }
}

/// Draw `n` samples from one side of the task pair.
pub fn sample_side(cfg: &RunConfig, side: Side, n: usize, seed: u64) -> Result<Array, CliError> {
    match cfg.task {
        Task::Custom => Err(CliError::Config(
            "task 'custom' has no built-in distributions; supply data CSVs instead".into(),
        )),
        Task::MoonCheckerboard => Ok(match side {
            Side::P => sample_two_moon(n, cfg.data.noise, seed),
            Side::Q => sample_checkerboard(n, seed),
        }),
        Task::MiGaussian => {
            let spec = BlockGaussianSpec::new(cfg.data.dim, cfg.data.rho)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(match side {
                Side::P => sample_block_gaussian(&spec, n, seed),
                Side::Q => {
                    let q = GmmSpec::single(vec![0.0; cfg.data.dim], Covariance::Isotropic(1.0));
                    sample_gmm(&q, n, seed)
                }
            })
        }
        Task::GaussianShift | Task::Gmm2d => {
            let (p, q) = task_gmm_specs(cfg).expect("mixture specs exist");
            Ok(match side {
                Side::P => sample_gmm(&p, n, seed),
                Side::Q => sample_gmm(&q, n, seed),
            })
        }
    }
}

/// Analytic `log(q/p)` where both endpoints have closed-form densities.
pub fn analytic_log_ratio(cfg: &RunConfig) -> Option<impl Fn(&[f64]) -> f64> {
    let (p, q) = task_gmm_specs(cfg)?;
    Some(move |x: &[f64]| oracle::true_log_ratio(&p, &q, x))
}

/// Closed-form optimal map and squared transport cost (gaussian-shift only).
pub fn analytic_ot(cfg: &RunConfig) -> Option<(AffineMap, f64)> {
    match cfg.task {
        Task::GaussianShift => {
            let d = cfg.data.dim;
            let eye = Array::identity(d);
            oracle::gaussian_ot_map(&vec![0.0; d], &eye, &cfg.data.shift, &eye).ok()
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_side_samples_have_configured_dim() {
        for task in [Task::GaussianShift, Task::Gmm2d, Task::MoonCheckerboard, Task::MiGaussian] {
            let cfg = RunConfig::preset(task);
            for side in [Side::P, Side::Q] {
                let batch = sample_side(&cfg, side, 16, 3).unwrap();
                assert_eq!(batch.cols(), cfg.data.dim, "task {task}");
                assert_eq!(batch.rows(), 16);
            }
        }
    }

    #[test]
    fn custom_task_has_no_builtin_data() {
        let cfg = RunConfig::preset(Task::Custom);
        assert!(sample_side(&cfg, Side::P, 4, 0).is_err());
    }

    #[test]
    fn gaussian_shift_analytic_map_is_translation() {
        let cfg = RunConfig::preset(Task::GaussianShift);
        let (map, w2) = analytic_ot(&cfg).unwrap();
        assert!((w2 - 25.0).abs() < 1e-9);
        let x = Array::from_vec(1, 2, vec![1.0, -1.0]);
        let y = map.apply(&x);
        assert!((y.get(0, 0) - 6.0).abs() < 1e-9);
        assert!((y.get(0, 1) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn mi_task_ratio_matches_closed_form_mi() {
        let mut cfg = RunConfig::preset(Task::MiGaussian);
        cfg.data.dim = 4;
        let ratio = analytic_log_ratio(&cfg).unwrap();
        let x = sample_side(&cfg, Side::P, 20000, 5).unwrap();
        let mean: f64 = (0..x.rows()).map(|i| ratio(x.row(i))).sum::<f64>() / x.rows() as f64;
        let mi = qflow::oracle::true_mi(4, cfg.data.rho).unwrap();
        assert!((-mean - mi).abs() < 0.1, "MC {} vs {}", -mean, mi);
    }
}
