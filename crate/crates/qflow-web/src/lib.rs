//! Interactive browser demo over the core crate, exposed through
//! wasm-bindgen. Three operations drive the page:
//!
//! 1. construct a [`Demo`] for a task and seed (samples the two point
//!    clouds),
//! 2. [`Demo::train`] — advance training; the demo moves itself through the
//!    interpolant-matching warm start and into bi-directional refinement,
//! 3. read views: transported samples, fine-grid trajectories, and (after
//!    [`Demo::train_ratio`]) the estimated log-density-ratio field on a
//!    raster grid.
//!
//! Everything returns flat `f64` buffers or tiny JSON strings so the page
//! needs no framework. The same code paths compile and run natively, which
//! is how the tests below exercise them.

use wasm_bindgen::prelude::wasm_bindgen;

use qflow::array::Array;
use qflow::data::{sample_checkerboard, sample_gmm, sample_two_moon};
use qflow::flow::{FlowModel, InitConfig, InitSession, RefineConfig, RefineSession};
use qflow::losses::Phase;
use qflow::nn::{Activation, Mlp, MlpSpec};
use qflow::ode::{integrate, TimeGrid};
use qflow::ratio::{log_ratio, ratio_knots, GridSchedule, RatioModel, RatioSession, RatioTrainConfig};

const SAMPLES_PER_SIDE: usize = 1200;
const INIT_STEPS: usize = 600;
const REFINE_BLOCK: usize = 20;
const WARMUP_CLASSIFIER_EPOCHS: usize = 120;
const RATIO_SEGMENTS: usize = 4;

fn demo_grid() -> TimeGrid {
    TimeGrid::uniform(4, 3)
}

fn softplus() -> Activation {
    Activation::Softplus { beta: 20.0 }
}

enum Stage {
    Init(InitSession),
    Refine(RefineSession),
}

struct DemoState {
    p: Array,
    q: Array,
    seed: u64,
    stage: Stage,
    last_loss: f64,
    flow_epochs: usize,
    ratio: Option<RatioSession>,
    ratio_loss: f64,
}

fn sample_task(task: &str, n: usize, seed: u64) -> Result<(Array, Array), String> {
    let seed_p = qflow::rng::derive_seed(seed, 1);
    let seed_q = qflow::rng::derive_seed(seed, 2);
    match task {
        "moon-checkerboard" => {
            // scale the moons up toward the checkerboard's [-2,2]² extent
            let moons = sample_two_moon(n, 0.05, seed_p);
            let spread = moons.map(|v| v * 1.6).add_row_broadcast(&Array::from_row(&[-0.8, -0.4]));
            Ok((spread, sample_checkerboard(n, seed_q)))
        }
        "gmm-2d" => Ok((
            sample_gmm(&qflow::data::gmm_task_p(), n, seed_p),
            sample_gmm(&qflow::data::gmm_task_q(), n, seed_q),
        )),
        "gaussian-shift" => {
            let p = qflow::data::GmmSpec::single(vec![-2.0, 0.0], qflow::data::Covariance::Isotropic(0.5));
            let q = qflow::data::GmmSpec::single(vec![2.0, 0.5], qflow::data::Covariance::Isotropic(0.5));
            Ok((sample_gmm(&p, n, seed_p), sample_gmm(&q, n, seed_q)))
        }
        other => Err(format!("unknown task '{other}' (moon-checkerboard | gmm-2d | gaussian-shift)")),
    }
}

impl DemoState {
    fn create(task: &str, seed: u64) -> Result<DemoState, String> {
        let (p, q) = sample_task(task, SAMPLES_PER_SIDE, seed)?;
        let spec = MlpSpec::new(vec![3, 32, 32, 2], softplus()).map_err(|e| e.to_string())?;
        let icfg = InitConfig {
            steps: INIT_STEPS,
            batch_size: 192,
            learning_rate: 1e-3,
            seed: qflow::rng::derive_seed(seed, 3),
        };
        let init = InitSession::new(p.clone(), q.clone(), &spec, demo_grid(), &icfg)
            .map_err(|e| e.to_string())?;
        Ok(DemoState {
            p,
            q,
            seed,
            stage: Stage::Init(init),
            last_loss: f64::NAN,
            flow_epochs: 0,
            ratio: None,
            ratio_loss: f64::NAN,
        })
    }

    fn flow(&self) -> &FlowModel {
        match &self.stage {
            Stage::Init(s) => s.flow(),
            Stage::Refine(s) => s.flow(),
        }
    }

    fn phase_name(&self) -> &'static str {
        match &self.stage {
            Stage::Init(_) => "init",
            Stage::Refine(_) => "refine",
        }
    }

    fn begin_refinement(&mut self, init: InitSession) -> Result<(), String> {
        let cfg = RefineConfig {
            gamma: 0.5,
            outer_iters: 1,
            epochs: REFINE_BLOCK,
            initial_classifier_epochs: WARMUP_CLASSIFIER_EPOCHS,
            inner_classifier_epochs: 2,
            flow_batch: 192,
            classifier_batch: 192,
            flow_lr: 1e-3,
            classifier_lr: 1e-3,
            classifier_hidden: vec![32, 32],
            classifier_activation: softplus(),
            seed: qflow::rng::derive_seed(self.seed, 4),
            unidirectional: false,
            classifier_cadence: 1,
        };
        let mut session = RefineSession::new(init.into_flow(), self.p.clone(), self.q.clone(), cfg)
            .map_err(|e| e.to_string())?;
        for phase in [Phase::Forward, Phase::Reverse] {
            for _ in 0..WARMUP_CLASSIFIER_EPOCHS {
                session.classifier_epoch(phase).map_err(|e| e.to_string())?;
            }
        }
        self.stage = Stage::Refine(session);
        Ok(())
    }

    /// Advance training: interpolant matching first, then alternating
    /// refinement blocks of [`REFINE_BLOCK`] flow epochs per direction.
    fn train(&mut self, steps: usize) -> Result<(), String> {
        let mut remaining = steps;
        while remaining > 0 {
            match &mut self.stage {
                Stage::Init(session) => {
                    self.last_loss = session.step().map_err(|e| e.to_string())?;
                    remaining -= 1;
                    if session.steps_done() >= INIT_STEPS {
                        let Stage::Init(done) = std::mem::replace(
                            &mut self.stage,
                            Stage::Refine(placeholder_session()),
                        ) else {
                            unreachable!()
                        };
                        self.begin_refinement(done)?;
                    }
                }
                Stage::Refine(session) => {
                    let phase = if (self.flow_epochs / REFINE_BLOCK) % 2 == 0 {
                        Phase::Forward
                    } else {
                        Phase::Reverse
                    };
                    let report = session.flow_epoch(phase).map_err(|e| e.to_string())?;
                    for _ in 0..2 {
                        session.classifier_epoch(phase).map_err(|e| e.to_string())?;
                    }
                    self.last_loss = report.total;
                    self.flow_epochs += 1;
                    remaining -= 1;
                }
            }
        }
        Ok(())
    }

    fn status_json(&self) -> String {
        let init_steps = match &self.stage {
            Stage::Init(s) => s.steps_done(),
            Stage::Refine(_) => INIT_STEPS,
        };
        format!(
            "{{\"phase\":\"{}\",\"init_steps\":{},\"refine_epochs\":{},\"loss\":{},\"ratio_iters\":{},\"ratio_loss\":{}}}",
            self.phase_name(),
            init_steps,
            self.flow_epochs,
            json_f64(self.last_loss),
            self.ratio.as_ref().map_or(0, |r| r.iters_done()),
            json_f64(self.ratio_loss),
        )
    }

    fn pushed_p(&self, count: usize) -> Result<Vec<f64>, String> {
        let rows: Vec<usize> = (0..count.min(self.p.rows())).collect();
        let subset = self.p.select_rows(&rows);
        let flow = self.flow();
        let pushed = qflow::flow::push(flow, &subset, qflow::ode::Direction::Forward)
            .map_err(|e| e.to_string())?;
        Ok(pushed.into_vec())
    }

    fn trajectories(&self, count: usize) -> Result<Vec<f64>, String> {
        let rows: Vec<usize> = (0..count.min(self.p.rows())).collect();
        let subset = self.p.select_rows(&rows);
        let flow = self.flow();
        let traj = integrate(&flow.field, &subset, 0.0, 1.0, &flow.grid).map_err(|e| e.to_string())?;
        let steps = traj.states.len();
        let mut out = Vec::with_capacity(rows.len() * steps * 2);
        for sample in 0..rows.len() {
            for state in &traj.states {
                out.extend_from_slice(state.row(sample));
            }
        }
        Ok(out)
    }

    fn train_ratio(&mut self, iters: usize) -> Result<(), String> {
        if self.ratio.is_none() {
            let spec = MlpSpec::new(vec![3, 32, 32, 1], softplus()).map_err(|e| e.to_string())?;
            let net = Mlp::init(spec, qflow::rng::derive_seed(self.seed, 5));
            let model = RatioModel::new(net, ratio_knots(RATIO_SEGMENTS, GridSchedule::Uniform), 1)
                .map_err(|e| e.to_string())?;
            let cfg = RatioTrainConfig {
                iters: 0,
                batch_size: 192,
                learning_rate: 1e-3,
                seed: qflow::rng::derive_seed(self.seed, 6),
                substitute_endpoints: true,
            };
            let session =
                RatioSession::new(self.flow(), &self.p, &self.q, model, &cfg).map_err(|e| e.to_string())?;
            self.ratio = Some(session);
        }
        let session = self.ratio.as_mut().expect("just created");
        for _ in 0..iters {
            self.ratio_loss = session.step().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn ratio_field(&self, res: usize, xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Vec<f64> {
        let Some(session) = &self.ratio else { return Vec::new() };
        if res == 0 || !(xmax > xmin) || !(ymax > ymin) {
            return Vec::new();
        }
        let mut points = Array::zeros(res * res, 2);
        for row in 0..res {
            let y = ymin + (ymax - ymin) * (row as f64 + 0.5) / res as f64;
            for col in 0..res {
                let x = xmin + (xmax - xmin) * (col as f64 + 0.5) / res as f64;
                points.set(row * res + col, 0, x);
                points.set(row * res + col, 1, y);
            }
        }
        log_ratio(session.model(), &points)
    }
}

fn json_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "null".to_string()
    }
}

// a throwaway session used only as a swap placeholder during the
// init→refine transition
fn placeholder_session() -> RefineSession {
    let spec = MlpSpec::new(vec![3, 2, 2], Activation::Relu).unwrap();
    let flow = FlowModel::new(Mlp::zeroed(spec), demo_grid(), 2).unwrap();
    let cfg = RefineConfig {
        classifier_hidden: vec![2],
        classifier_activation: Activation::Relu,
        ..Default::default()
    };
    RefineSession::new(flow, Array::zeros(2, 2), Array::zeros(2, 2), cfg).unwrap()
}

/// Interactive training state for one task, driven from JavaScript.
#[wasm_bindgen]
pub struct Demo {
    state: DemoState,
}

#[wasm_bindgen]
impl Demo {
    /// Sample the task's point clouds and set up the warm-start trainer.
    /// Tasks: `moon-checkerboard`, `gmm-2d`, `gaussian-shift`.
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str, seed: u32) -> Result<Demo, wasm_bindgen::JsError> {
        DemoState::create(task, seed as u64)
            .map(|state| Demo { state })
            .map_err(|e| wasm_bindgen::JsError::new(&e))
    }

    /// Source samples, flattened `[x0, y0, x1, y1, …]`.
    pub fn points_p(&self) -> Vec<f64> {
        self.state.p.data().to_vec()
    }

    /// Target samples, same layout.
    pub fn points_q(&self) -> Vec<f64> {
        self.state.q.data().to_vec()
    }

    /// Advance training by `steps` updates and report progress as JSON:
    /// `{"phase", "init_steps", "refine_epochs", "loss", …}`.
    pub fn train(&mut self, steps: u32) -> Result<String, wasm_bindgen::JsError> {
        self.state.train(steps as usize).map_err(|e| wasm_bindgen::JsError::new(&e))?;
        Ok(self.state.status_json())
    }

    pub fn status(&self) -> String {
        self.state.status_json()
    }

    /// Current push-forward of the first `count` source samples.
    pub fn pushed_p(&self, count: u32) -> Result<Vec<f64>, wasm_bindgen::JsError> {
        self.state.pushed_p(count as usize).map_err(|e| wasm_bindgen::JsError::new(&e))
    }

    /// Fine-grid paths of the first `count` source samples, flattened
    /// sample-major: each path holds `trajectory_steps()` (x, y) pairs.
    pub fn trajectories(&self, count: u32) -> Result<Vec<f64>, wasm_bindgen::JsError> {
        self.state.trajectories(count as usize).map_err(|e| wasm_bindgen::JsError::new(&e))
    }

    /// States per path in [`Demo::trajectories`].
    pub fn trajectory_steps(&self) -> u32 {
        let grid = demo_grid();
        (grid.intervals() * grid.subdivisions() + 1) as u32
    }

    /// Train the ratio net on the current (frozen) flow for `iters`
    /// minibatches; the bridge is built on the first call.
    pub fn train_ratio(&mut self, iters: u32) -> Result<String, wasm_bindgen::JsError> {
        self.state.train_ratio(iters as usize).map_err(|e| wasm_bindgen::JsError::new(&e))?;
        Ok(self.state.status_json())
    }

    /// Estimated log(q/p) on a `res × res` raster over the given window,
    /// row-major bottom-up; empty until `train_ratio` has run.
    pub fn ratio_field(&self, res: u32, xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Vec<f64> {
        self.state.ratio_field(res as usize, xmin, xmax, ymin, ymax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_walks_through_all_stages() {
        let mut state = DemoState::create("gaussian-shift", 3).unwrap();
        assert_eq!(state.phase_name(), "init");
        assert_eq!(state.p.rows(), SAMPLES_PER_SIDE);

        state.train(40).unwrap();
        assert_eq!(state.phase_name(), "init");
        assert!(state.last_loss.is_finite());

        // push through the init→refine transition and a few refine epochs
        state.train(INIT_STEPS - 40 + 3).unwrap();
        assert_eq!(state.phase_name(), "refine");
        assert_eq!(state.flow_epochs, 3);

        let status = state.status_json();
        assert!(status.contains("\"phase\":\"refine\""), "{status}");
        assert!(status.contains("\"refine_epochs\":3"), "{status}");

        let pushed = state.pushed_p(32).unwrap();
        assert_eq!(pushed.len(), 64);
        assert!(pushed.iter().all(|v| v.is_finite()));

        let paths = state.trajectories(5).unwrap();
        let steps = demo_grid().intervals() * demo_grid().subdivisions() + 1;
        assert_eq!(paths.len(), 5 * steps * 2);

        state.train_ratio(30).unwrap();
        assert!(state.ratio_loss.is_finite());
        let field = state.ratio_field(8, -3.0, 3.0, -3.0, 3.0);
        assert_eq!(field.len(), 64);
        assert!(field.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn all_tasks_construct() {
        for task in ["moon-checkerboard", "gmm-2d", "gaussian-shift"] {
            let state = DemoState::create(task, 1).unwrap();
            assert_eq!(state.p.cols(), 2);
        }
        assert!(DemoState::create("bogus", 1).is_err());
    }

    #[test]
    fn ratio_field_is_empty_before_training() {
        let state = DemoState::create("gmm-2d", 2).unwrap();
        assert!(state.ratio_field(8, -2.0, 2.0, -2.0, 2.0).is_empty());
    }
}
