//! The end-to-end transport pipeline: interpolant-based initialization of
//! the velocity field, bi-directional refinement with inner-loop classifier
//! training, and push-forward evaluation.
//!
//! Refinement alternates directions per outer iteration. In the forward
//! block the flow minimizes `KL(pushed‖Q) + γ·W2` where the KL is estimated
//! by a frozen discriminator; after every flow update the discriminator is
//! retrained for a few inner epochs on freshly transported samples, because
//! each flow change moves the push-forward distribution it must classify.
//! The reverse block mirrors this with the second discriminator and
//! reverse-time transport. An "epoch" is one minibatch update throughout.
//!
//! A single RNG seeded from the config drives every sampling decision in a
//! fixed order, so identical configs reproduce identical parameters.

use crate::array::Array;
use crate::autodiff::{Tape, ValueId};
use crate::error::Error;
use crate::losses::{
    classifier_loss_forward, classifier_loss_reverse, init_matching_loss, kl_loss, straight_line_cost, w2_loss,
    w2_loss_plain, LossReport, Phase,
};
use crate::nn::{Activation, Adam, Mlp, MlpSpec};
use crate::ode::{integrate, integrate_tape, knot_states, Direction, TimeGrid};
use crate::rng::Rng;

/// A velocity field together with the time grid it is trained on.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub field: Mlp,
    pub grid: TimeGrid,
    pub dim: usize,
}

impl FlowModel {
    pub fn new(field: Mlp, grid: TimeGrid, dim: usize) -> Result<FlowModel, Error> {
        if field.spec.input_width() != dim + 1 || field.spec.output_width() != dim {
            return Err(Error::invalid(format!(
                "velocity field must map {}→{} for dim {dim}, got {}→{}",
                dim + 1,
                dim,
                field.spec.input_width(),
                field.spec.output_width()
            )));
        }
        Ok(FlowModel { field, grid, dim })
    }
}

/// Hyperparameters of [`init_flow`].
#[derive(Clone, Debug)]
pub struct InitConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { steps: 3000, batch_size: 256, learning_rate: 1e-3, seed: 0 }
    }
}

/// Resumable interpolant-matching trainer: one [`InitSession::step`] per
/// minibatch. [`init_flow`] drives it for a fixed step budget.
pub struct InitSession {
    flow: FlowModel,
    samples_p: Array,
    samples_q: Array,
    adam: Adam,
    rng: Rng,
    batch: usize,
    steps_done: usize,
}

impl InitSession {
    pub fn new(
        samples_p: Array,
        samples_q: Array,
        spec: &MlpSpec,
        grid: TimeGrid,
        cfg: &InitConfig,
    ) -> Result<InitSession, Error> {
        if samples_p.rows() == 0 || samples_q.rows() == 0 {
            return Err(Error::invalid("init_flow: empty sample sets"));
        }
        if samples_p.cols() != samples_q.cols() {
            return Err(Error::LengthMismatch {
                context: "init_flow sample dimensions".into(),
                left: samples_p.cols(),
                right: samples_q.cols(),
            });
        }
        let dim = samples_p.cols();
        let flow = FlowModel::new(Mlp::init(spec.clone(), cfg.seed), grid, dim)?;
        let adam = Adam::new(&flow.field, cfg.learning_rate);
        let batch = cfg.batch_size.min(samples_p.rows()).min(samples_q.rows());
        Ok(InitSession {
            flow,
            samples_p,
            samples_q,
            adam,
            rng: Rng::seed_from_u64(cfg.seed),
            batch,
            steps_done: 0,
        })
    }

    /// One matching step on an independently paired minibatch; returns the
    /// loss value.
    pub fn step(&mut self) -> Result<f64, Error> {
        let x0 = self.samples_p.select_rows(&self.rng.indices(self.samples_p.rows(), self.batch));
        let x1 = self.samples_q.select_rows(&self.rng.indices(self.samples_q.rows(), self.batch));
        let times: Vec<f64> = (0..self.batch).map(|_| self.rng.uniform()).collect();
        let tape = Tape::new();
        let binding = self.flow.field.bind(&tape);
        let loss = init_matching_loss(&tape, &self.flow.field, &binding, &x0, &x1, &times);
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::non_finite(format!("interpolant matching loss at step {}", self.steps_done)));
        }
        tape.backward(loss)?;
        let grads = collect_grads(&tape, &binding);
        self.adam.step(&mut self.flow.field, &grads)?;
        self.steps_done += 1;
        Ok(value)
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn flow(&self) -> &FlowModel {
        &self.flow
    }

    pub fn into_flow(self) -> FlowModel {
        self.flow
    }
}

/// Train a fresh velocity field to match the trigonometric interpolant
/// between independently paired P and Q samples at uniformly drawn times.
pub fn init_flow(
    samples_p: &Array,
    samples_q: &Array,
    spec: &MlpSpec,
    grid: TimeGrid,
    cfg: &InitConfig,
) -> Result<FlowModel, Error> {
    let mut session = InitSession::new(samples_p.clone(), samples_q.clone(), spec, grid, cfg)?;
    for _ in 0..cfg.steps {
        session.step()?;
    }
    Ok(session.into_flow())
}

/// Hyperparameters of [`refine`]. Counts follow the refinement loop's
/// structure: `outer_iters` alternating direction blocks, `epochs` flow
/// updates per block, `initial_classifier_epochs` discriminator warm-up
/// steps before the first block of each direction, and
/// `inner_classifier_epochs` discriminator steps after every flow update.
#[derive(Clone, Debug)]
pub struct RefineConfig {
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
    pub classifier_activation: Activation,
    pub seed: u64,
    /// Train only the forward direction (ablation; default off).
    pub unidirectional: bool,
    /// Run the inner classifier epochs only every this many flow updates.
    pub classifier_cadence: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
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
            classifier_activation: Activation::Softplus { beta: 20.0 },
            seed: 0,
            unidirectional: false,
            classifier_cadence: 1,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.epochs == 0 && self.outer_iters > 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.flow_batch == 0 || self.classifier_batch == 0 {
            return Err(Error::invalid("batch sizes must be at least 1"));
        }
        if self.inner_classifier_epochs == 0 || self.initial_classifier_epochs == 0 {
            return Err(Error::invalid("classifier epoch counts must be at least 1"));
        }
        if self.classifier_cadence == 0 {
            return Err(Error::invalid("classifier cadence must be at least 1"));
        }
        Ok(())
    }
}

fn collect_grads(tape: &Tape, binding: &crate::nn::MlpBinding) -> Vec<Array> {
    binding
        .weights
        .iter()
        .zip(&binding.biases)
        .flat_map(|(&w, &b)| [tape.grad(w), tape.grad(b)])
        .collect()
}

/// Resumable refinement trainer owning the flow, both discriminators, and
/// their optimizer states. [`refine`] drives it through the alternating
/// schedule; callers wanting finer control (progress reporting, custom
/// cadences) can step it directly.
pub struct RefineSession {
    flow: FlowModel,
    samples_p: Array,
    samples_q: Array,
    cfg: RefineConfig,
    c_forward: Mlp,
    c_reverse: Mlp,
    adam_flow: Adam,
    adam_forward: Adam,
    adam_reverse: Adam,
    rng: Rng,
    hs_forward: Vec<f64>,
    hs_reverse: Vec<f64>,
    flow_epochs_done: usize,
}

impl RefineSession {
    pub fn new(
        flow: FlowModel,
        samples_p: Array,
        samples_q: Array,
        cfg: RefineConfig,
    ) -> Result<RefineSession, Error> {
        cfg.validate()?;
        if samples_p.rows() == 0 || samples_q.rows() == 0 {
            return Err(Error::invalid("refine: empty sample sets"));
        }
        if samples_p.rows() == 1 || samples_q.rows() == 1 {
            eprintln!(
                "warning: refining with a single sample on one side; KL estimates are meaningless at that size"
            );
        }
        let dim = flow.dim;
        let mut rng = Rng::seed_from_u64(cfg.seed);
        let mut classifier_widths = vec![dim];
        classifier_widths.extend_from_slice(&cfg.classifier_hidden);
        classifier_widths.push(1);
        let cspec = MlpSpec::new(classifier_widths, cfg.classifier_activation)?;
        let c_forward = Mlp::init(cspec.clone(), rng.next_u64());
        let c_reverse = Mlp::init(cspec, rng.next_u64());
        let adam_flow = Adam::new(&flow.field, cfg.flow_lr);
        let adam_forward = Adam::new(&c_forward, cfg.classifier_lr);
        let adam_reverse = Adam::new(&c_reverse, cfg.classifier_lr);
        let hs_forward = flow.grid.interval_lengths();
        let hs_reverse: Vec<f64> = hs_forward.iter().rev().cloned().collect();
        Ok(RefineSession {
            flow,
            samples_p,
            samples_q,
            cfg,
            c_forward,
            c_reverse,
            adam_flow,
            adam_forward,
            adam_reverse,
            rng,
            hs_forward,
            hs_reverse,
            flow_epochs_done: 0,
        })
    }

    fn sample(&mut self, which: Phase, count: usize) -> Array {
        let data = match which {
            Phase::Forward => &self.samples_p,
            Phase::Reverse => &self.samples_q,
        };
        let n = data.rows();
        let rows = self.rng.indices(n, count.min(n));
        data.select_rows(&rows)
    }

    /// One discriminator step: transport a fresh minibatch with the frozen
    /// flow (off the tape), then a logistic update against raw targets.
    pub fn classifier_epoch(&mut self, phase: Phase) -> Result<f64, Error> {
        let batch = self.cfg.classifier_batch;
        let (moved, targets, (s, t)) = match phase {
            Phase::Forward => (self.sample(Phase::Forward, batch), self.sample(Phase::Reverse, batch), (0.0, 1.0)),
            Phase::Reverse => (self.sample(Phase::Reverse, batch), self.sample(Phase::Forward, batch), (1.0, 0.0)),
        };
        let transported = integrate(&self.flow.field, &moved, s, t, &self.flow.grid)?.terminal().clone();
        let tape = Tape::new();
        let (classifier, adam) = match phase {
            Phase::Forward => (&mut self.c_forward, &mut self.adam_forward),
            Phase::Reverse => (&mut self.c_reverse, &mut self.adam_reverse),
        };
        let binding = classifier.bind(&tape);
        let loss = match phase {
            Phase::Forward => classifier_loss_forward(&tape, classifier, &binding, &transported, &targets),
            Phase::Reverse => classifier_loss_reverse(&tape, classifier, &binding, &transported, &targets),
        };
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::non_finite(format!("{phase} classifier loss")));
        }
        tape.backward(loss)?;
        let grads = collect_grads(&tape, &binding);
        adam.step(classifier, &grads)?;
        Ok(value)
    }

    /// One flow step on the per-direction objective `KL + γ·W2`, with the
    /// transport-cost lower bound asserted on the way through.
    pub fn flow_epoch(&mut self, phase: Phase) -> Result<LossReport, Error> {
        let batch = self.sample(phase, self.cfg.flow_batch);
        let (s, t, hs, frozen) = match phase {
            Phase::Forward => (0.0, 1.0, &self.hs_forward, &self.c_forward),
            Phase::Reverse => (1.0, 0.0, &self.hs_reverse, &self.c_reverse),
        };
        let tape = Tape::new();
        let binding = self.flow.field.bind(&tape);
        let x0 = tape.leaf(batch);
        let knots: Vec<ValueId> = integrate_tape(&tape, &self.flow.field, &binding, x0, s, t, &self.flow.grid)?;
        let kl = kl_loss(&tape, frozen, *knots.last().unwrap());
        let w2 = w2_loss(&tape, &knots, hs);
        let total = tape.add(kl, tape.scale(w2, self.cfg.gamma));

        let kl_value = tape.scalar_value(kl);
        let w2_value = tape.scalar_value(w2);
        let total_value = tape.scalar_value(total);
        if !total_value.is_finite() {
            return Err(Error::non_finite(format!(
                "flow loss at {phase} epoch {} (kl {kl_value}, w2 {w2_value})",
                self.flow_epochs_done + 1
            )));
        }
        let knot_values: Vec<Array> = knots.iter().map(|&k| tape.value(k)).collect();
        let bound = straight_line_cost(&knot_values);
        debug_assert!((w2_loss_plain(&knot_values, hs) - w2_value).abs() < 1e-9 * w2_value.abs().max(1.0));
        assert!(
            w2_value >= bound - 1e-9 * bound.max(1.0),
            "transport cost {w2_value} fell below its straight-line bound {bound}"
        );

        tape.backward(total)?;
        let grads = collect_grads(&tape, &binding);
        self.adam_flow.step(&mut self.flow.field, &grads)?;
        self.flow_epochs_done += 1;
        Ok(LossReport::new(phase, kl_value, w2_value, self.cfg.gamma))
    }

    pub fn flow_epochs_done(&self) -> usize {
        self.flow_epochs_done
    }

    pub fn flow(&self) -> &FlowModel {
        &self.flow
    }

    pub fn into_flow(self) -> FlowModel {
        self.flow
    }
}

/// Bi-directional refinement of an initialized flow. Returns the refined
/// model and one [`LossReport`] per flow epoch.
pub fn refine(
    flow: FlowModel,
    samples_p: &Array,
    samples_q: &Array,
    cfg: &RefineConfig,
) -> Result<(FlowModel, Vec<LossReport>), Error> {
    cfg.validate()?;
    if samples_p.rows() == 0 || samples_q.rows() == 0 {
        return Err(Error::invalid("refine: empty sample sets"));
    }
    if cfg.outer_iters == 0 {
        return Ok((flow, Vec::new()));
    }
    let mut session = RefineSession::new(flow, samples_p.clone(), samples_q.clone(), cfg.clone())?;
    let mut log = Vec::new();
    let phases: &[Phase] =
        if cfg.unidirectional { &[Phase::Forward] } else { &[Phase::Forward, Phase::Reverse] };
    for iter in 1..=cfg.outer_iters {
        for &phase in phases {
            if iter == 1 {
                for _ in 0..cfg.initial_classifier_epochs {
                    session.classifier_epoch(phase)?;
                }
            }
            for epoch in 1..=cfg.epochs {
                log.push(session.flow_epoch(phase)?);
                if epoch % cfg.classifier_cadence == 0 {
                    for _ in 0..cfg.inner_classifier_epochs {
                        session.classifier_epoch(phase)?;
                    }
                }
            }
        }
    }
    Ok((session.into_flow(), log))
}

/// Terminal state of transporting a batch across the whole time interval.
pub fn push(flow: &FlowModel, x: &Array, direction: Direction) -> Result<Array, Error> {
    let (s, t) = match direction {
        Direction::Forward => (0.0, 1.0),
        Direction::Reverse => (1.0, 0.0),
    };
    Ok(integrate(&flow.field, x, s, t, &flow.grid)?.terminal().clone())
}

/// Knot states of the transported batch plus the matching interval lengths,
/// for transport-cost evaluation outside training.
pub fn transport_knots(flow: &FlowModel, x: &Array, direction: Direction) -> Result<(Vec<Array>, Vec<f64>), Error> {
    let (s, t) = match direction {
        Direction::Forward => (0.0, 1.0),
        Direction::Reverse => (1.0, 0.0),
    };
    let traj = integrate(&flow.field, x, s, t, &flow.grid)?;
    let knots = knot_states(&traj, &flow.grid)?;
    let mut hs = flow.grid.interval_lengths();
    if direction == Direction::Reverse {
        hs.reverse();
    }
    Ok((knots, hs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_gmm, Covariance, GmmSpec};
    use crate::ode::fields;

    fn field_spec(d: usize, hidden: usize) -> MlpSpec {
        MlpSpec::new(vec![d + 1, hidden, hidden, d], Activation::Softplus { beta: 20.0 }).unwrap()
    }

    #[test]
    fn init_flow_degenerate_point_mass_stays_put() {
        let p = Array::zeros(64, 2);
        let q = Array::zeros(64, 2);
        let cfg = InitConfig { steps: 400, batch_size: 64, learning_rate: 1e-3, seed: 1 };
        let flow = init_flow(&p, &q, &field_spec(2, 16), TimeGrid::uniform(2, 2), &cfg).unwrap();
        let pushed = push(&flow, &Array::zeros(8, 2), Direction::Forward).unwrap();
        let displacement = pushed.mean_row_sq_norm().sqrt();
        assert!(displacement < 1e-3, "terminal displacement {displacement}");
    }

    #[test]
    fn init_flow_is_deterministic_per_seed() {
        let p_spec = GmmSpec::single(vec![0.0, 0.0], Covariance::Isotropic(1.0));
        let q_spec = GmmSpec::single(vec![2.0, 0.0], Covariance::Isotropic(1.0));
        let p = sample_gmm(&p_spec, 256, 1);
        let q = sample_gmm(&q_spec, 256, 2);
        let cfg = InitConfig { steps: 50, batch_size: 64, learning_rate: 1e-3, seed: 9 };
        let a = init_flow(&p, &q, &field_spec(2, 8), TimeGrid::uniform(2, 2), &cfg).unwrap();
        let b = init_flow(&p, &q, &field_spec(2, 8), TimeGrid::uniform(2, 2), &cfg).unwrap();
        assert_eq!(a.field.params_flat(), b.field.params_flat());
    }

    #[test]
    fn init_flow_rejects_bad_inputs() {
        let cfg = InitConfig::default();
        let empty = Array::zeros(1, 2).select_rows(&[]);
        let p = Array::zeros(4, 2);
        assert!(init_flow(&empty, &p, &field_spec(2, 4), TimeGrid::uniform(2, 2), &cfg).is_err());
        let q3 = Array::zeros(4, 3);
        assert!(init_flow(&p, &q3, &field_spec(2, 4), TimeGrid::uniform(2, 2), &cfg).is_err());
    }

    #[test]
    fn init_flow_learns_gaussian_shift_direction() {
        let p_spec = GmmSpec::single(vec![0.0, 0.0], Covariance::Isotropic(1.0));
        let q_spec = GmmSpec::single(vec![5.0, 0.0], Covariance::Isotropic(1.0));
        let p = sample_gmm(&p_spec, 2000, 11);
        let q = sample_gmm(&q_spec, 2000, 12);
        let cfg = InitConfig { steps: 1500, batch_size: 128, learning_rate: 1e-3, seed: 3 };
        let flow = init_flow(&p, &q, &field_spec(2, 32), TimeGrid::uniform(4, 3), &cfg).unwrap();
        let test = sample_gmm(&p_spec, 512, 99);
        let pushed = push(&flow, &test, Direction::Forward).unwrap();
        let mean_x = (0..pushed.rows()).map(|i| pushed.get(i, 0)).sum::<f64>() / pushed.rows() as f64;
        let mean_y = (0..pushed.rows()).map(|i| pushed.get(i, 1)).sum::<f64>() / pushed.rows() as f64;
        assert!((mean_x - 5.0).abs() < 0.3, "pushed mean x {mean_x}");
        assert!(mean_y.abs() < 0.3, "pushed mean y {mean_y}");
    }

    #[test]
    fn refine_with_zero_iters_is_a_no_op() {
        let flow = FlowModel::new(Mlp::init(field_spec(2, 8), 4), TimeGrid::uniform(2, 2), 2).unwrap();
        let before = flow.field.params_flat();
        let p = Array::from_vec(8, 2, (0..16).map(|i| i as f64 * 0.1).collect());
        let q = p.clone();
        let cfg = RefineConfig { outer_iters: 0, ..Default::default() };
        let (out, log) = refine(flow, &p, &q, &cfg).unwrap();
        assert_eq!(out.field.params_flat(), before);
        assert!(log.is_empty());
    }

    #[test]
    fn refine_validates_config() {
        let bad = RefineConfig { gamma: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RefineConfig { flow_batch: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RefineConfig { classifier_cadence: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn push_with_zero_field_is_identity_both_ways() {
        let flow = FlowModel::new(Mlp::zeroed(field_spec(2, 4)), TimeGrid::uniform(3, 3), 2).unwrap();
        let x = Array::from_vec(5, 2, (0..10).map(|i| i as f64 * 0.31 - 1.0).collect());
        // a zeroed MLP still has nonzero hidden softplus outputs but zero
        // output weights, so the field is exactly zero
        assert_eq!(push(&flow, &x, Direction::Forward).unwrap(), x);
        assert_eq!(push(&flow, &x, Direction::Reverse).unwrap(), x);
    }

    #[test]
    fn refined_self_transport_stays_near_identity() {
        // P = Q: the optimal transport is the identity; with the cost term
        // weighted up (the classifier sees no real signal, only sampling
        // noise) refinement drives the transport cost under 1e-2.
        let spec = GmmSpec::new(
            vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            vec![Covariance::Isotropic(0.3), Covariance::Isotropic(0.3)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let p = sample_gmm(&spec, 4000, 5);
        let q = sample_gmm(&spec, 4000, 6);
        let icfg = InitConfig { steps: 800, batch_size: 128, learning_rate: 1e-3, seed: 7 };
        let grid = TimeGrid::uniform(3, 3);
        let flow = init_flow(&p, &q, &field_spec(2, 24), grid, &icfg).unwrap();
        let rcfg = RefineConfig {
            gamma: 5.0,
            outer_iters: 1,
            epochs: 120,
            initial_classifier_epochs: 150,
            inner_classifier_epochs: 2,
            flow_batch: 256,
            classifier_batch: 512,
            flow_lr: 5e-4,
            classifier_hidden: vec![32, 32],
            seed: 8,
            ..Default::default()
        };
        let (refined, log) = refine(flow, &p, &q, &rcfg).unwrap();
        assert_eq!(log.len(), 240);
        let test = sample_gmm(&spec, 400, 99);
        let (knots, hs) = transport_knots(&refined, &test, Direction::Forward).unwrap();
        let w2 = w2_loss_plain(&knots, &hs);
        assert!(w2 < 1e-2, "self-transport cost {w2}");
        let displacement = knots.last().unwrap().sub(&knots[0]).mean_row_sq_norm().sqrt();
        // small relative to the data scale (cluster separation 2)
        assert!(displacement < 0.15, "mean terminal displacement {displacement}");
    }

    #[test]
    fn refine_is_deterministic_per_seed() {
        let p_spec = GmmSpec::single(vec![0.0, 0.0], Covariance::Isotropic(1.0));
        let q_spec = GmmSpec::single(vec![1.0, 0.0], Covariance::Isotropic(1.0));
        let p = sample_gmm(&p_spec, 300, 1);
        let q = sample_gmm(&q_spec, 300, 2);
        let icfg = InitConfig { steps: 60, batch_size: 64, learning_rate: 1e-3, seed: 5 };
        let grid = TimeGrid::uniform(2, 2);
        let run = || {
            let flow = init_flow(&p, &q, &field_spec(2, 8), grid.clone(), &icfg).unwrap();
            let rcfg = RefineConfig {
                outer_iters: 1,
                epochs: 5,
                initial_classifier_epochs: 10,
                inner_classifier_epochs: 2,
                flow_batch: 64,
                classifier_batch: 64,
                classifier_hidden: vec![16],
                seed: 77,
                ..Default::default()
            };
            let (refined, log) = refine(flow, &p, &q, &rcfg).unwrap();
            (refined.field.params_flat(), log.len())
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn frozen_zero_classifiers_leave_only_the_transport_gradient() {
        // with c ≡ 0 the KL term is flat, so one forward update must reduce
        // the W2 term alone
        let mut field = Mlp::init(field_spec(2, 8), 3);
        // inflate the field so there is transport cost to shed
        for w in &mut field.weights {
            *w = w.scale(3.0);
        }
        let grid = TimeGrid::uniform(2, 2);
        let flow = FlowModel::new(field, grid.clone(), 2).unwrap();
        let p = Array::from_vec(64, 2, (0..128).map(|i| (i as f64 * 0.37).sin()).collect());

        let zero_classifier = Mlp::zeroed(MlpSpec::new(vec![2, 1], Activation::Relu).unwrap());
        let tape = Tape::new();
        let binding = flow.field.bind(&tape);
        let x0 = tape.leaf(p.clone());
        let knots = integrate_tape(&tape, &flow.field, &binding, x0, 0.0, 1.0, &grid).unwrap();
        let kl = kl_loss(&tape, &zero_classifier, *knots.last().unwrap());
        assert_eq!(tape.scalar_value(kl), 0.0);
        let w2 = w2_loss(&tape, &knots, &grid.interval_lengths());
        let total = tape.add(kl, tape.scale(w2, 0.5));
        tape.backward(total).unwrap();
        let kl_grad_mass: f64 = collect_grads(&tape, &binding).iter().map(|g| g.sq_norm()).sum();
        assert!(kl_grad_mass > 0.0);

        // apply the step; W2 must drop
        let w2_before = tape.scalar_value(w2);
        let mut updated = flow.clone();
        let mut adam = Adam::new(&updated.field, 1e-2);
        let grads = collect_grads(&tape, &binding);
        adam.step(&mut updated.field, &grads).unwrap();
        let (knots_after, hs) = transport_knots(&updated, &p, Direction::Forward).unwrap();
        let w2_after = w2_loss_plain(&knots_after, &hs);
        assert!(w2_after < w2_before, "w2 {w2_before} -> {w2_after}");
    }

    #[test]
    fn forward_and_reverse_fields_see_matched_interval_lengths() {
        let knots = vec![0.0, 0.1, 0.3, 0.6, 1.0];
        let grid = TimeGrid::from_knots(knots, 2).unwrap();
        let flow = FlowModel::new(Mlp::zeroed(field_spec(2, 4)), grid, 2).unwrap();
        let x = Array::from_vec(3, 2, (0..6).map(|i| i as f64).collect());
        let (knots_f, hs_f) = transport_knots(&flow, &x, Direction::Forward).unwrap();
        let (knots_r, hs_r) = transport_knots(&flow, &x, Direction::Reverse).unwrap();
        for (got, want) in hs_f.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in hs_r.iter().zip([0.4, 0.3, 0.2, 0.1]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(knots_f.len(), 5);
        assert_eq!(knots_r.len(), 5);
    }

    #[test]
    fn constant_field_transport_cost_is_exact() {
        let grid = TimeGrid::uniform(4, 2);
        let x = Array::zeros(16, 2);
        let traj = integrate(&fields::Constant(vec![3.0, -4.0]), &x, 0.0, 1.0, &grid).unwrap();
        let knots = knot_states(&traj, &grid).unwrap();
        let w2 = w2_loss_plain(&knots, &grid.interval_lengths());
        assert!((w2 - 25.0).abs() < 1e-9, "w2 {w2}");
        assert!((straight_line_cost(&knots) - 25.0).abs() < 1e-9);
    }
}
