//! Run configuration: TOML files layered over built-in task presets, with
//! environment and flag overrides on top (flags win).
//!
//! A config file only needs the keys it changes; everything else comes from
//! the preset selected by its `task`. The resolved config is serialized
//! back to canonical TOML and hashed (FNV-1a 64) into the `config_digest`
//! stamped on every checkpoint and CSV this tool writes: two outputs with
//! equal digests and seeds came from identical settings.

use serde::{Deserialize, Serialize};

use qflow::nn::Activation;
use qflow::ode::TimeGrid;
use qflow::ratio::GridSchedule;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GaussianShift,
    #[serde(rename = "gmm-2d")]
    Gmm2d,
    MoonCheckerboard,
    MiGaussian,
    Custom,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Task::GaussianShift => "gaussian-shift",
            Task::Gmm2d => "gmm-2d",
            Task::MoonCheckerboard => "moon-checkerboard",
            Task::MiGaussian => "mi-gaussian",
            Task::Custom => "custom",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Task {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Task, CliError> {
        match s {
            "gaussian-shift" => Ok(Task::GaussianShift),
            "gmm-2d" => Ok(Task::Gmm2d),
            "moon-checkerboard" => Ok(Task::MoonCheckerboard),
            "mi-gaussian" => Ok(Task::MiGaussian),
            "custom" => Ok(Task::Custom),
            other => Err(CliError::Config(format!(
                "unknown task '{other}' (expected gaussian-shift | gmm-2d | moon-checkerboard | mi-gaussian | custom)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_p: usize,
    pub n_q: usize,
    pub dim: usize,
    /// Two-moon noise scale (moon-checkerboard only).
    pub noise: f64,
    /// Within-block correlation (mi-gaussian only).
    pub rho: f64,
    /// Target mean (gaussian-shift only); length must equal `dim`.
    pub shift: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridConfig {
    pub knots: usize,
    pub subdivisions: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowNetConfig {
    pub hidden: Vec<usize>,
    /// "softplus" or "relu".
    pub activation: String,
    pub beta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefineSection {
    pub gamma: f64,
    pub outer_iters: usize,
    pub epochs: usize,
    pub initial_classifier_epochs: usize,
    pub inner_classifier_epochs: usize,
    pub flow_batch: usize,
    pub classifier_batch: usize,
    pub flow_lr: f64,
    pub classifier_lr: f64,
    pub classifier_hidden: Vec<usize>,
    pub classifier_cadence: usize,
    pub unidirectional: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioSection {
    pub segments: usize,
    /// "uniform", "quadratic", or "sqrt".
    pub schedule: String,
    pub substeps: usize,
    pub hidden: Vec<usize>,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub substitute_endpoints: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSection {
    pub samples: usize,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub threads: usize,
    pub data: DataConfig,
    pub grid: GridConfig,
    pub flow: FlowNetConfig,
    pub init: InitSection,
    pub refine: RefineSection,
    pub ratio: RatioSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Built-in preset for a task, desk-scale budgets included.
    pub fn preset(task: Task) -> RunConfig {
        let base = RunConfig {
            task,
            seed: 0,
            threads: 1,
            data: DataConfig { n_p: 4000, n_q: 4000, dim: 2, noise: 0.05, rho: 0.8, shift: vec![5.0, 0.0] },
            grid: GridConfig { knots: 5, subdivisions: 4 },
            flow: FlowNetConfig { hidden: vec![64, 64], activation: "softplus".into(), beta: 20.0 },
            init: InitSection { steps: 3000, batch: 256, lr: 1e-3 },
            refine: RefineSection {
                gamma: 0.5,
                outer_iters: 2,
                epochs: 50,
                initial_classifier_epochs: 300,
                inner_classifier_epochs: 4,
                flow_batch: 512,
                classifier_batch: 200,
                flow_lr: 1e-3,
                classifier_lr: 1e-3,
                classifier_hidden: vec![64, 64, 64],
                classifier_cadence: 1,
                unidirectional: false,
            },
            ratio: RatioSection {
                segments: 6,
                schedule: "uniform".into(),
                substeps: 1,
                hidden: vec![64, 64, 64],
                iters: 3000,
                batch: 256,
                lr: 1e-3,
                substitute_endpoints: true,
            },
            eval: EvalSection { samples: 16384 },
        };
        match task {
            Task::GaussianShift | Task::Custom => base,
            Task::Gmm2d => RunConfig {
                data: DataConfig { n_p: 20000, n_q: 20000, ..base.data },
                ratio: RatioSection { segments: 6, iters: 4000, ..base.ratio },
                ..base
            },
            Task::MoonCheckerboard => RunConfig {
                data: DataConfig { n_p: 20000, n_q: 20000, ..base.data },
                grid: GridConfig { knots: 5, subdivisions: 4 },
                refine: RefineSection { epochs: 50, ..base.refine },
                ratio: RatioSection { segments: 8, ..base.ratio },
                ..base
            },
            Task::MiGaussian => RunConfig {
                data: DataConfig { n_p: 20000, n_q: 20000, dim: 16, ..base.data },
                grid: GridConfig { knots: 4, subdivisions: 4 },
                refine: RefineSection {
                    epochs: 100,
                    initial_classifier_epochs: 500,
                    inner_classifier_epochs: 2,
                    ..base.refine
                },
                ratio: RatioSection { segments: 6, iters: 4000, ..base.ratio },
                ..base
            },
        }
    }

    /// Layer a TOML file over its task's preset, then apply env overrides
    /// (`QFLOW_SEED`, `QFLOW_THREADS`). Flag overrides are applied by the
    /// caller afterwards — flags win.
    pub fn from_file(path: &str) -> Result<RunConfig, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading config {path}"), e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig, CliError> {
        let partial: PartialConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("parsing config: {e}")))?;
        let task = partial.task.unwrap_or(Task::GaussianShift);
        let mut cfg = RunConfig::preset(task);
        partial.apply(&mut cfg);
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Ok(seed) = std::env::var("QFLOW_SEED") {
            if let Ok(v) = seed.parse() {
                self.seed = v;
            }
        }
        if let Ok(threads) = std::env::var("QFLOW_THREADS") {
            if let Ok(v) = threads.parse() {
                self.threads = v;
            }
        }
    }

    /// Validate every module precondition before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.data.n_p == 0 || self.data.n_q == 0 {
            return bad("sample counts must be positive".into());
        }
        if self.data.dim == 0 {
            return bad("data dimension must be positive".into());
        }
        match self.task {
            Task::GaussianShift => {
                if self.data.shift.len() != self.data.dim {
                    return bad(format!(
                        "shift vector length {} must equal dim {}",
                        self.data.shift.len(),
                        self.data.dim
                    ));
                }
            }
            Task::MiGaussian => {
                if self.data.dim % 2 != 0 {
                    return bad("mi-gaussian dimension must be even".into());
                }
                if !(self.data.rho.abs() < 1.0) {
                    return bad(format!("rho must satisfy |rho| < 1, got {}", self.data.rho));
                }
            }
            Task::Gmm2d | Task::MoonCheckerboard => {
                if self.data.dim != 2 {
                    return bad(format!("{} is a 2-D task, got dim {}", self.task, self.data.dim));
                }
            }
            Task::Custom => {}
        }
        if self.grid.knots == 0 || self.grid.subdivisions == 0 {
            return bad("grid knots and subdivisions must be positive".into());
        }
        self.activation().map_err(|e| CliError::Config(e.to_string())).and(Ok(()))?;
        self.grid_schedule()?;
        if self.init.batch == 0 || self.ratio.batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.ratio.segments == 0 || self.ratio.substeps == 0 {
            return bad("ratio segments and substeps must be positive".into());
        }
        if self.eval.samples == 0 {
            return bad("eval sample count must be positive".into());
        }
        self.refine_config().validate().map_err(CliError::from)
    }

    pub fn activation(&self) -> Result<Activation, CliError> {
        match self.flow.activation.as_str() {
            "softplus" => {
                if !(self.flow.beta > 0.0) {
                    return Err(CliError::Config(format!("softplus beta must be positive, got {}", self.flow.beta)));
                }
                Ok(Activation::Softplus { beta: self.flow.beta })
            }
            "relu" => Ok(Activation::Relu),
            other => Err(CliError::Config(format!("unknown activation '{other}' (softplus | relu)"))),
        }
    }

    pub fn grid_schedule(&self) -> Result<GridSchedule, CliError> {
        match self.ratio.schedule.as_str() {
            "uniform" => Ok(GridSchedule::Uniform),
            "quadratic" => Ok(GridSchedule::Quadratic),
            "sqrt" => Ok(GridSchedule::Sqrt),
            other => Err(CliError::Config(format!("unknown ratio schedule '{other}' (uniform | quadratic | sqrt)"))),
        }
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::uniform(self.grid.knots, self.grid.subdivisions)
    }

    pub fn flow_spec_widths(&self) -> Vec<usize> {
        let mut widths = vec![self.data.dim + 1];
        widths.extend_from_slice(&self.flow.hidden);
        widths.push(self.data.dim);
        widths
    }

    pub fn ratio_spec_widths(&self) -> Vec<usize> {
        let mut widths = vec![self.data.dim + 1];
        widths.extend_from_slice(&self.ratio.hidden);
        widths.push(1);
        widths
    }

    pub fn refine_config(&self) -> qflow::flow::RefineConfig {
        qflow::flow::RefineConfig {
            gamma: self.refine.gamma,
            outer_iters: self.refine.outer_iters,
            epochs: self.refine.epochs,
            initial_classifier_epochs: self.refine.initial_classifier_epochs,
            inner_classifier_epochs: self.refine.inner_classifier_epochs,
            flow_batch: self.refine.flow_batch,
            classifier_batch: self.refine.classifier_batch,
            flow_lr: self.refine.flow_lr,
            classifier_lr: self.refine.classifier_lr,
            classifier_hidden: self.refine.classifier_hidden.clone(),
            classifier_activation: self.activation().expect("validated"),
            seed: stage_seed(self.seed, stages::REFINE),
            unidirectional: self.refine.unidirectional,
            classifier_cadence: self.refine.classifier_cadence,
        }
    }

    /// FNV-1a 64 digest of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

/// Every stage of the pipeline draws its seed from the run seed through a
/// fixed derivation, so stages stay decoupled but reproducible.
pub mod stages {
    pub const DATA_P: u64 = 1;
    pub const DATA_Q: u64 = 2;
    pub const INIT: u64 = 3;
    pub const REFINE: u64 = 4;
    pub const RATIO: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const EXPORT: u64 = 7;
}

pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    qflow::rng::derive_seed(seed, stage)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ── partial file layering ───────────────────────────────────────────────

macro_rules! overlay {
    ($dst:expr, $src:expr, [$($field:ident),+ $(,)?]) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    task: Option<Task>,
    seed: Option<u64>,
    threads: Option<usize>,
    #[serde(default)]
    data: PartialData,
    #[serde(default)]
    grid: PartialGrid,
    #[serde(default)]
    flow: PartialFlow,
    #[serde(default)]
    init: PartialInit,
    #[serde(default)]
    refine: PartialRefine,
    #[serde(default)]
    ratio: PartialRatio,
    #[serde(default)]
    eval: PartialEval,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialData {
    n_p: Option<usize>,
    n_q: Option<usize>,
    dim: Option<usize>,
    noise: Option<f64>,
    rho: Option<f64>,
    shift: Option<Vec<f64>>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialGrid {
    knots: Option<usize>,
    subdivisions: Option<usize>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialFlow {
    hidden: Option<Vec<usize>>,
    activation: Option<String>,
    beta: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialInit {
    steps: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialRefine {
    gamma: Option<f64>,
    outer_iters: Option<usize>,
    epochs: Option<usize>,
    initial_classifier_epochs: Option<usize>,
    inner_classifier_epochs: Option<usize>,
    flow_batch: Option<usize>,
    classifier_batch: Option<usize>,
    flow_lr: Option<f64>,
    classifier_lr: Option<f64>,
    classifier_hidden: Option<Vec<usize>>,
    classifier_cadence: Option<usize>,
    unidirectional: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialRatio {
    segments: Option<usize>,
    schedule: Option<String>,
    substeps: Option<usize>,
    hidden: Option<Vec<usize>>,
    iters: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    substitute_endpoints: Option<bool>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialEval {
    samples: Option<usize>,
}

impl PartialConfig {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        overlay!(cfg.data, self.data, [n_p, n_q, dim, noise, rho, shift]);
        overlay!(cfg.grid, self.grid, [knots, subdivisions]);
        overlay!(cfg.flow, self.flow, [hidden, activation, beta]);
        overlay!(cfg.init, self.init, [steps, batch, lr]);
        overlay!(
            cfg.refine,
            self.refine,
            [
                gamma,
                outer_iters,
                epochs,
                initial_classifier_epochs,
                inner_classifier_epochs,
                flow_batch,
                classifier_batch,
                flow_lr,
                classifier_lr,
                classifier_hidden,
                classifier_cadence,
                unidirectional,
            ]
        );
        overlay!(cfg.ratio, self.ratio, [segments, schedule, substeps, hidden, iters, batch, lr, substitute_endpoints]);
        overlay!(cfg.eval, self.eval, [samples]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for task in [Task::GaussianShift, Task::Gmm2d, Task::MoonCheckerboard, Task::MiGaussian] {
            RunConfig::preset(task).validate().unwrap();
        }
    }

    #[test]
    fn file_overlays_preset() {
        let cfg = RunConfig::from_toml_str(
            "task = \"mi-gaussian\"\nseed = 7\n[data]\ndim = 8\n[refine]\ngamma = 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.task, Task::MiGaussian);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data.dim, 8);
        assert_eq!(cfg.refine.gamma, 0.25);
        // untouched fields keep the mi-gaussian preset values
        assert_eq!(cfg.refine.epochs, 100);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("task = \"gmm-2d\"\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[refine]\ngama = 0.5\n").is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = RunConfig::preset(Task::Gmm2d);
        let b = RunConfig::preset(Task::Gmm2d);
        assert_eq!(a.digest(), b.digest());
        let mut c = RunConfig::preset(Task::Gmm2d);
        c.refine.gamma = 0.51;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn validation_catches_task_specific_errors() {
        let mut cfg = RunConfig::preset(Task::GaussianShift);
        cfg.data.shift = vec![1.0, 2.0, 3.0];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::preset(Task::MiGaussian);
        cfg.data.dim = 7;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::preset(Task::Gmm2d);
        cfg.data.dim = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::preset(Task::GaussianShift);
        cfg.flow.activation = "tanh".into();
        assert!(cfg.validate().is_err());
    }
}
