//! The flow-ratio network: a time-augmented MLP `r(x, t)` estimating the
//! time score `∂ₜ log p(x, t)` along a trained flow.
//!
//! Integrating `r` over a time segment gives the log-ratio between the
//! bridge densities at the segment's endpoints; those per-segment ratios
//! are learned by logistic classification between transported sample
//! batches at neighboring knots, and the integral over all of `[0, 1]`
//! telescopes into the full `log(q/p)`.
//!
//! The integrand is state-independent (x is held fixed inside each
//! integral), so the fixed-grid four-stage Runge–Kutta quadrature reduces
//! to Simpson's rule per substep — exact for polynomials in `t` of degree
//! ≤ 3. [`log_ratio`] evaluates the `[0, 1]` integral segment by segment on
//! the model's own grid, which makes the telescoping identity
//! `Σₖ Rₖ(x) = ∫₀¹ r(x, t) dt` hold bit-exactly.

use crate::array::Array;
use crate::autodiff::{Tape, ValueId};
use crate::error::Error;
use crate::flow::FlowModel;
use crate::losses::Phase;
use crate::nn::{Adam, Mlp, MlpBinding};
use crate::ode::{integrate, knot_states, TimeGrid};
use crate::rng::Rng;

/// Knot schedules for the ratio grid `t₀ … t_L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridSchedule {
    /// `tₖ = k/L` (the default in every built-in task).
    Uniform,
    /// `tₖ = (k/L)²`, denser near 0.
    Quadratic,
    /// `tₖ = √(k/L)`, denser near 1.
    Sqrt,
}

/// Knots for `l` segments under the given schedule.
pub fn ratio_knots(l: usize, schedule: GridSchedule) -> Vec<f64> {
    assert!(l >= 1, "ratio grid needs at least one segment");
    (0..=l)
        .map(|k| {
            let u = k as f64 / l as f64;
            match schedule {
                GridSchedule::Uniform => u,
                GridSchedule::Quadratic => u * u,
                GridSchedule::Sqrt => u.sqrt(),
            }
        })
        .collect()
}

/// Time-score network with its ratio grid and per-segment quadrature
/// substep count.
#[derive(Clone, Debug)]
pub struct RatioModel {
    pub net: Mlp,
    pub knots: Vec<f64>,
    pub substeps: usize,
}

impl RatioModel {
    pub fn new(net: Mlp, knots: Vec<f64>, substeps: usize) -> Result<RatioModel, Error> {
        if net.spec.output_width() != 1 {
            return Err(Error::invalid("ratio net must have a single output"));
        }
        if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::invalid("ratio grid must run from exactly 0 to exactly 1"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("ratio grid knots must be strictly increasing"));
        }
        if substeps == 0 {
            return Err(Error::invalid("quadrature substep count must be positive"));
        }
        Ok(RatioModel { net, knots, substeps })
    }

    /// Number of segments `L`.
    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    /// Data dimension `d` (net input is `d+1`).
    pub fn dim(&self) -> usize {
        self.net.spec.input_width() - 1
    }
}

/// Simpson nodes and weights over `[a, b]` split into `substeps` equal
/// pieces: per piece `(h/6)·[f(a) + 4f(m) + f(b)]`. This *is* the quadrature
/// rule applied by [`r_quadrature`]; it is exposed so exactness can be
/// checked against arbitrary integrands.
pub fn quadrature_nodes(a: f64, b: f64, substeps: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / substeps as f64;
    let mut nodes = Vec::with_capacity(3 * substeps);
    for s in 0..substeps {
        let lo = a + h * s as f64;
        let hi = if s + 1 == substeps { b } else { a + h * (s + 1) as f64 };
        let mid = 0.5 * (lo + hi);
        let w = (hi - lo) / 6.0;
        nodes.push((lo, w));
        nodes.push((mid, 4.0 * w));
        nodes.push((hi, w));
    }
    nodes
}

/// `∫ₐᵇ r(x, t) dt` per sample, with `x` held fixed inside the integral.
pub fn r_quadrature(model: &RatioModel, x: &Array, a: f64, b: f64) -> Result<Vec<f64>, Error> {
    if !(0.0 <= a && a < b && b <= 1.0) {
        return Err(Error::invalid(format!("r_quadrature needs 0 ≤ a < b ≤ 1, got [{a}, {b}]")));
    }
    let mut acc = vec![0.0; x.rows()];
    for (t, w) in quadrature_nodes(a, b, model.substeps) {
        let r = model.net.forward_time(x, t);
        for (ai, ri) in acc.iter_mut().zip(r.data()) {
            *ai += w * ri;
        }
    }
    Ok(acc)
}

/// Differentiable [`r_quadrature`]: the batch enters as a constant, the net
/// parameters through `binding`. Returns an `(n, 1)` value of per-sample
/// integrals.
pub fn r_quadrature_tape(
    tape: &Tape,
    net: &Mlp,
    binding: &MlpBinding,
    x: &Array,
    a: f64,
    b: f64,
    substeps: usize,
) -> ValueId {
    let xid = tape.leaf(x.clone());
    let mut acc: Option<ValueId> = None;
    for (t, w) in quadrature_nodes(a, b, substeps) {
        let r = net.forward_time_tape(tape, binding, xid, t);
        let term = tape.scale(r, w);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term),
            None => term,
        });
    }
    acc.unwrap()
}

/// Transported sample batches at every ratio knot: `p_states[k]` holds the P
/// samples pushed forward to `tₖ`, `q_states[k]` the Q samples pulled back
/// to `tₖ` (so `p_states[0]` and `q_states[L]` are the raw inputs).
#[derive(Clone, Debug)]
pub struct BridgeSamples {
    pub p_states: Vec<Array>,
    pub q_states: Vec<Array>,
}

impl BridgeSamples {
    pub fn segments(&self) -> usize {
        self.p_states.len() - 1
    }

    /// Sub-bridge holding the selected P rows and Q rows at every knot.
    pub fn select(&self, p_rows: &[usize], q_rows: &[usize]) -> BridgeSamples {
        BridgeSamples {
            p_states: self.p_states.iter().map(|s| s.select_rows(p_rows)).collect(),
            q_states: self.q_states.iter().map(|s| s.select_rows(q_rows)).collect(),
        }
    }
}

/// Transport all samples to every ratio knot with the frozen flow
/// (trajectories are computed once; ratio training never moves them).
pub fn build_bridge(
    flow: &FlowModel,
    samples_p: &Array,
    samples_q: &Array,
    knots: &[f64],
    subdivisions: usize,
) -> Result<BridgeSamples, Error> {
    let grid = TimeGrid::from_knots(knots.to_vec(), subdivisions)?;
    let p_traj = integrate(&flow.field, samples_p, 0.0, 1.0, &grid)?;
    let p_states = knot_states(&p_traj, &grid)?;
    let q_traj = integrate(&flow.field, samples_q, 1.0, 0.0, &grid)?;
    let mut q_states = knot_states(&q_traj, &grid)?;
    q_states.reverse(); // traversal order was t_L … t₀; index by knot instead
    Ok(BridgeSamples { p_states, q_states })
}

/// Logistic segment loss with the integrated ratio as logit. For segment
/// `k` (1-based) in the forward direction, samples at `tₖ₋₁` take the
/// positive logit and samples at `tₖ` the negative; the reverse direction
/// plays the same game on the pulled-back Q batches.
///
/// With `substitute_endpoints` on, the forward `k = L` negative batch is
/// the raw Q sample set and the reverse `k = 1` positive batch is the raw P
/// sample set, sidestepping any terminal mismatch of the flow.
pub fn segment_loss(
    tape: &Tape,
    model: &RatioModel,
    binding: &MlpBinding,
    bridge: &BridgeSamples,
    k: usize,
    direction: Phase,
    substitute_endpoints: bool,
) -> ValueId {
    let l = bridge.segments();
    assert!((1..=l).contains(&k), "segment_loss: k = {k} outside 1..={l}");
    assert_eq!(l + 1, model.knots.len() - 1 + 1, "segment_loss: bridge/model grid mismatch");
    let (a, b) = (model.knots[k - 1], model.knots[k]);
    let (prev_batch, next_batch) = match direction {
        Phase::Forward => {
            let next = if substitute_endpoints && k == l { &bridge.q_states[l] } else { &bridge.p_states[k] };
            (&bridge.p_states[k - 1], next)
        }
        Phase::Reverse => {
            let prev = if substitute_endpoints && k == 1 { &bridge.p_states[0] } else { &bridge.q_states[k - 1] };
            (prev, &bridge.q_states[k])
        }
    };
    let r_prev = r_quadrature_tape(tape, &model.net, binding, prev_batch, a, b, model.substeps);
    let r_next = r_quadrature_tape(tape, &model.net, binding, next_batch, a, b, model.substeps);
    let pos = tape.mean(tape.log1p_exp(r_prev));
    let neg = tape.mean(tape.log1p_exp(tape.neg(r_next)));
    tape.add(pos, neg)
}

/// Hyperparameters of [`train_ratio`].
#[derive(Clone, Debug)]
pub struct RatioTrainConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Replace the forward `k = L` / reverse `k = 1` endpoint batches with
    /// raw samples (on by default).
    pub substitute_endpoints: bool,
}

impl Default for RatioTrainConfig {
    fn default() -> Self {
        RatioTrainConfig { iters: 2000, batch_size: 256, learning_rate: 1e-3, seed: 0, substitute_endpoints: true }
    }
}

/// Resumable ratio trainer: holds the model, the frozen-flow bridge, and
/// the optimizer state. [`train_ratio`] drives it for a fixed budget.
pub struct RatioSession {
    model: RatioModel,
    bridge: BridgeSamples,
    adam: Adam,
    rng: Rng,
    batch_size: usize,
    substitute_endpoints: bool,
    iters_done: usize,
}

impl RatioSession {
    pub fn new(
        flow: &FlowModel,
        samples_p: &Array,
        samples_q: &Array,
        model: RatioModel,
        cfg: &RatioTrainConfig,
    ) -> Result<RatioSession, Error> {
        if samples_p.rows() == 0 || samples_q.rows() == 0 {
            return Err(Error::invalid("train_ratio: empty sample sets"));
        }
        let bridge = build_bridge(flow, samples_p, samples_q, &model.knots, flow.grid.subdivisions())?;
        let adam = Adam::new(&model.net, cfg.learning_rate);
        Ok(RatioSession {
            model,
            bridge,
            adam,
            rng: Rng::seed_from_u64(cfg.seed),
            batch_size: cfg.batch_size,
            substitute_endpoints: cfg.substitute_endpoints,
            iters_done: 0,
        })
    }

    /// One minibatch update of the summed forward and reverse segment
    /// losses; returns the loss value.
    pub fn step(&mut self) -> Result<f64, Error> {
        let n_p = self.bridge.p_states[0].rows();
        let n_q = self.bridge.q_states[0].rows();
        let p_rows = self.rng.indices(n_p, self.batch_size.min(n_p));
        let q_rows = self.rng.indices(n_q, self.batch_size.min(n_q));
        let sub = self.bridge.select(&p_rows, &q_rows);
        let tape = Tape::new();
        let binding = self.model.net.bind(&tape);
        let mut total: Option<ValueId> = None;
        for k in 1..=self.model.segments() {
            let fwd = segment_loss(&tape, &self.model, &binding, &sub, k, Phase::Forward, self.substitute_endpoints);
            let rev = segment_loss(&tape, &self.model, &binding, &sub, k, Phase::Reverse, self.substitute_endpoints);
            let pair = tape.add(fwd, rev);
            total = Some(match total {
                Some(acc) => tape.add(acc, pair),
                None => pair,
            });
        }
        let loss = total.expect("at least one segment");
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::non_finite(format!("ratio training loss at iter {}", self.iters_done)));
        }
        tape.backward(loss)?;
        let grads: Vec<Array> = binding
            .weights
            .iter()
            .zip(&binding.biases)
            .flat_map(|(&w, &b)| [tape.grad(w), tape.grad(b)])
            .collect();
        self.adam.step(&mut self.model.net, &grads)?;
        self.iters_done += 1;
        Ok(value)
    }

    pub fn iters_done(&self) -> usize {
        self.iters_done
    }

    pub fn model(&self) -> &RatioModel {
        &self.model
    }

    pub fn into_model(self) -> RatioModel {
        self.model
    }
}

/// Train the ratio net on a frozen flow: precompute the bridge once, then
/// minimize the summed forward and reverse segment losses over minibatches.
pub fn train_ratio(
    flow: &FlowModel,
    samples_p: &Array,
    samples_q: &Array,
    model: RatioModel,
    cfg: &RatioTrainConfig,
) -> Result<RatioModel, Error> {
    let mut session = RatioSession::new(flow, samples_p, samples_q, model, cfg)?;
    for _ in 0..cfg.iters {
        session.step()?;
    }
    Ok(session.into_model())
}

/// `log(q/p)` estimate per sample: the quadrature of `r` over `[0, 1]`,
/// evaluated segment by segment on the model grid so it telescopes exactly
/// into the per-segment ratios.
pub fn log_ratio(model: &RatioModel, x: &Array) -> Vec<f64> {
    let mut acc = vec![0.0; x.rows()];
    for k in 1..=model.segments() {
        let seg = r_quadrature(model, x, model.knots[k - 1], model.knots[k]).expect("model knots are valid");
        for (a, s) in acc.iter_mut().zip(&seg) {
            *a += s;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LOGISTIC_LOSS_AT_ZERO;
    use crate::nn::{Activation, MlpSpec};
    use crate::ode::DEFAULT_SUBDIVISIONS;

    fn linear_ratio_net(w_x: f64, w_t: f64, bias: f64) -> Mlp {
        // r(x, t) = w_x·x + w_t·t + bias on d = 1
        let mut net = Mlp::zeroed(MlpSpec::new(vec![2, 1], Activation::Relu).unwrap());
        net.weights[0] = Array::from_row(&[w_x, w_t]);
        net.biases[0] = Array::scalar(bias);
        net
    }

    fn constant_velocity_flow(c: f64) -> FlowModel {
        // f(x, t) ≡ c on d = 1: transports N(0,1) at t=0 to N(c,1) at t=1
        let mut field = Mlp::zeroed(MlpSpec::new(vec![2, 1], Activation::Relu).unwrap());
        field.biases[0] = Array::scalar(c);
        FlowModel::new(field, TimeGrid::uniform(4, DEFAULT_SUBDIVISIONS), 1).unwrap()
    }

    #[test]
    fn constant_integrand_is_exact() {
        let model = RatioModel::new(linear_ratio_net(0.0, 0.0, 2.5), ratio_knots(3, GridSchedule::Uniform), 2).unwrap();
        let x = Array::from_vec(4, 1, vec![0.0, 1.0, -1.0, 7.0]);
        let v = r_quadrature(&model, &x, 0.25, 0.75).unwrap();
        for vi in v {
            assert!((vi - 2.5 * 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_in_time_is_exact_with_one_substep() {
        // r(x, t) = t over [0, 1]: integral ½ from a single Simpson step
        let model = RatioModel::new(linear_ratio_net(0.0, 1.0, 0.0), vec![0.0, 1.0], 1).unwrap();
        let x = Array::from_vec(2, 1, vec![3.0, -3.0]);
        let v = r_quadrature(&model, &x, 0.0, 1.0).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);
    }

    #[test]
    fn simpson_rule_exact_through_cubics() {
        // the rule applied by r_quadrature, checked on monomials up to t³
        for substeps in [1usize, 2, 3] {
            for (deg, exact) in [(0, 1.0), (1, 0.5), (2, 1.0 / 3.0), (3, 0.25)] {
                let num: f64 =
                    quadrature_nodes(0.0, 1.0, substeps).iter().map(|(t, w)| w * t.powi(deg)).sum();
                assert!((num - exact).abs() <= 1e-12, "deg {deg} substeps {substeps}: {num}");
            }
            // degree 4 must NOT be exact with one substep (sanity on the rule)
            if substeps == 1 {
                let num: f64 = quadrature_nodes(0.0, 1.0, 1).iter().map(|(t, w)| w * t.powi(4)).sum();
                assert!((num - 0.2).abs() > 1e-4);
            }
        }
    }

    #[test]
    fn quadrature_rejects_bad_interval() {
        let model = RatioModel::new(linear_ratio_net(0.0, 0.0, 1.0), vec![0.0, 1.0], 1).unwrap();
        let x = Array::zeros(1, 1);
        assert!(r_quadrature(&model, &x, 0.5, 0.5).is_err());
        assert!(r_quadrature(&model, &x, 0.8, 0.2).is_err());
    }

    #[test]
    fn telescoping_is_bit_exact() {
        let net = Mlp::init(MlpSpec::new(vec![3, 16, 1], Activation::Softplus { beta: 20.0 }).unwrap(), 3);
        let model = RatioModel::new(net, vec![0.0, 0.2, 0.45, 0.8, 1.0], 2).unwrap();
        let mut rng = Rng::seed_from_u64(4);
        let x = Array::from_vec(6, 2, (0..12).map(|_| rng.normal()).collect());
        let total = log_ratio(&model, &x);
        let mut summed = vec![0.0; 6];
        for k in 1..=model.segments() {
            let seg = r_quadrature(&model, &x, model.knots[k - 1], model.knots[k]).unwrap();
            for (s, v) in summed.iter_mut().zip(&seg) {
                *s += v;
            }
        }
        assert_eq!(total, summed, "telescoping must be bit-exact");
    }

    #[test]
    fn zero_net_log_ratio_is_zero_and_segment_loss_is_two_ln_two() {
        let net = Mlp::zeroed(MlpSpec::new(vec![2, 4, 1], Activation::Relu).unwrap());
        let model = RatioModel::new(net, ratio_knots(3, GridSchedule::Uniform), 1).unwrap();
        let x = Array::from_vec(5, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!(log_ratio(&model, &x).iter().all(|&v| v == 0.0));

        let bridge = BridgeSamples {
            p_states: (0..4).map(|_| x.clone()).collect(),
            q_states: (0..4).map(|_| x.clone()).collect(),
        };
        let tape = Tape::new();
        let binding = model.net.bind(&tape);
        for k in 1..=3 {
            for dir in [Phase::Forward, Phase::Reverse] {
                let loss = segment_loss(&tape, &model, &binding, &bridge, k, dir, true);
                assert!((tape.scalar_value(loss) - LOGISTIC_LOSS_AT_ZERO).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ideal_gaussian_segment_loss_matches_quadrature_oracle() {
        // p(·,t₀) = N(0,1), p(·,t₁) = N(1,1), ideal R₁(x) = x − ½ (one
        // segment): population loss = E_{N(0,1)} softplus(x−½) +
        // E_{N(1,1)} softplus(−x+½) = 2·0.581726 ≈ 1.16345, computed here
        // by quadrature against the standard normal.
        let normal_expectation = |f: &dyn Fn(f64) -> f64| -> f64 {
            let (lo, hi, steps) = (-12.0, 12.0, 48_000);
            let h = (hi - lo) / steps as f64;
            let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            (0..steps)
                .map(|i| {
                    let z = lo + h * (i as f64 + 0.5);
                    f(z) * density(z) * h
                })
                .sum()
        };
        let softplus = |v: f64| crate::autodiff::log1p_exp(v);
        let term_p = normal_expectation(&|z| softplus(z - 0.5));
        let term_q = normal_expectation(&|z| softplus(-(z + 1.0) + 0.5));
        let oracle = term_p + term_q;
        assert!((oracle - 1.16345).abs() < 2e-4, "quadrature oracle {oracle}");
        assert!((term_p - term_q).abs() < 1e-9, "symmetry of the two terms");

        // Monte Carlo through the actual segment_loss with the ideal net
        let model = RatioModel::new(linear_ratio_net(1.0, 0.0, -0.5), vec![0.0, 1.0], 1).unwrap();
        let mut rng = Rng::seed_from_u64(9);
        let n = 60_000;
        let p0 = Array::from_vec(n, 1, (0..n).map(|_| rng.normal()).collect());
        let p1 = Array::from_vec(n, 1, (0..n).map(|_| rng.normal() + 1.0).collect());
        let bridge = BridgeSamples { p_states: vec![p0, p1.clone()], q_states: vec![Array::zeros(n, 1), p1] };
        let tape = Tape::new();
        let binding = model.net.bind(&tape);
        let loss = segment_loss(&tape, &model, &binding, &bridge, 1, Phase::Forward, true);
        let v = tape.scalar_value(loss);
        assert!((v - oracle).abs() < 0.02, "MC segment loss {v} vs oracle {oracle}");
    }

    #[test]
    fn bridge_endpoints_are_raw_samples() {
        let flow = constant_velocity_flow(1.0);
        let mut rng = Rng::seed_from_u64(2);
        let p = Array::from_vec(32, 1, (0..32).map(|_| rng.normal()).collect());
        let q = Array::from_vec(40, 1, (0..40).map(|_| rng.normal() + 1.0).collect());
        let knots = ratio_knots(4, GridSchedule::Uniform);
        let bridge = build_bridge(&flow, &p, &q, &knots, 4).unwrap();
        assert_eq!(bridge.p_states[0], p);
        assert_eq!(bridge.q_states[4], q);
        // constant velocity: pushed P at knot k is p + tₖ (exactly, RK4 on a
        // constant field)
        for (k, state) in bridge.p_states.iter().enumerate() {
            let expected = p.map(|v| v + knots[k]);
            assert!(state.sub(&expected).sq_norm() < 1e-24);
        }
        for (k, state) in bridge.q_states.iter().enumerate() {
            let expected = q.map(|v| v - (1.0 - knots[k]));
            assert!(state.sub(&expected).sq_norm() < 1e-24);
        }
    }

    #[test]
    fn trained_ratio_recovers_gaussian_shift_log_ratio() {
        // P = N(0,1), Q = N(1,1) bridged by the exact constant-velocity
        // flow: the true time score is x − t, so log_ratio(x) = x − ½.
        let flow = constant_velocity_flow(1.0);
        let mut rng = Rng::seed_from_u64(5);
        let n = 4000;
        let p = Array::from_vec(n, 1, (0..n).map(|_| rng.normal()).collect());
        let q = Array::from_vec(n, 1, (0..n).map(|_| rng.normal() + 1.0).collect());
        let net = Mlp::init(MlpSpec::new(vec![2, 32, 32, 1], Activation::Softplus { beta: 20.0 }).unwrap(), 7);
        let model = RatioModel::new(net, ratio_knots(4, GridSchedule::Uniform), 1).unwrap();
        let cfg = RatioTrainConfig { iters: 800, batch_size: 192, learning_rate: 1e-3, seed: 11, ..Default::default() };
        let trained = train_ratio(&flow, &p, &q, model, &cfg).unwrap();

        let grid: Vec<f64> = (0..=50).map(|i| -2.0 + 5.0 * i as f64 / 50.0).collect();
        let points = Array::from_vec(grid.len(), 1, grid.clone());
        let est = log_ratio(&trained, &points);
        let mae: f64 =
            est.iter().zip(&grid).map(|(e, x)| (e - (x - 0.5)).abs()).sum::<f64>() / grid.len() as f64;
        assert!(mae < 0.15, "MAE {mae} on [−2, 3]");

        // trained segment losses sit at or below the zero-logit level
        let bridge = build_bridge(&flow, &p, &q, &trained.knots, flow.grid.subdivisions()).unwrap();
        let tape = Tape::new();
        let binding = trained.net.bind(&tape);
        for k in 1..=trained.segments() {
            for dir in [Phase::Forward, Phase::Reverse] {
                let loss = segment_loss(&tape, &trained, &binding, &bridge, k, dir, true);
                assert!(tape.scalar_value(loss) <= LOGISTIC_LOSS_AT_ZERO + 1e-6);
            }
        }
    }

    #[test]
    fn self_ratio_is_near_zero_and_training_is_deterministic() {
        // P = Q with the identity flow: true ratio ≡ 0
        let flow = constant_velocity_flow(0.0);
        let mut rng = Rng::seed_from_u64(8);
        let n = 2000;
        let p = Array::from_vec(n, 1, (0..n).map(|_| rng.normal()).collect());
        let q = Array::from_vec(n, 1, (0..n).map(|_| rng.normal()).collect());
        let run = |seed: u64| {
            let net = Mlp::init(MlpSpec::new(vec![2, 16, 1], Activation::Softplus { beta: 20.0 }).unwrap(), 3);
            let model = RatioModel::new(net, ratio_knots(3, GridSchedule::Uniform), 1).unwrap();
            let cfg = RatioTrainConfig { iters: 400, batch_size: 128, learning_rate: 1e-3, seed, ..Default::default() };
            train_ratio(&flow, &p, &q, model, &cfg).unwrap()
        };
        let trained = run(21);
        let test = Array::from_vec(200, 1, (0..200).map(|i| -2.0 + 4.0 * i as f64 / 200.0).collect());
        let est = log_ratio(&trained, &test);
        let mean_abs: f64 = est.iter().map(|v| v.abs()).sum::<f64>() / est.len() as f64;
        assert!(mean_abs < 0.1, "self-ratio mean |log r| = {mean_abs}");

        let again = run(21);
        assert_eq!(trained.net.params_flat(), again.net.params_flat());
        let different = run(22);
        assert_ne!(trained.net.params_flat(), different.net.params_flat());
    }

    #[test]
    fn swapped_data_negates_the_ratio() {
        // exchanging P and Q (with the reversed exact flow) should flip the
        // sign of the estimate on common test points
        let mut rng = Rng::seed_from_u64(14);
        let n = 4000;
        let p = Array::from_vec(n, 1, (0..n).map(|_| rng.normal()).collect());
        let q = Array::from_vec(n, 1, (0..n).map(|_| rng.normal() + 1.0).collect());
        let train = |a: &Array, b: &Array, c: f64, seed: u64| {
            let flow = constant_velocity_flow(c);
            let net = Mlp::init(MlpSpec::new(vec![2, 32, 32, 1], Activation::Softplus { beta: 20.0 }).unwrap(), 7);
            let model = RatioModel::new(net, ratio_knots(4, GridSchedule::Uniform), 1).unwrap();
            let cfg = RatioTrainConfig { iters: 700, batch_size: 192, learning_rate: 1e-3, seed, ..Default::default() };
            train_ratio(&flow, a, b, model, &cfg).unwrap()
        };
        let pq = train(&p, &q, 1.0, 31);
        let qp = train(&q, &p, -1.0, 32);
        let test = Array::from_vec(41, 1, (0..41).map(|i| -1.0 + 3.0 * i as f64 / 40.0).collect());
        let est_pq = log_ratio(&pq, &test);
        let est_qp = log_ratio(&qp, &test);
        let max_dev = est_pq
            .iter()
            .zip(&est_qp)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 0.2, "anti-symmetry deviation {max_dev}");
    }

    #[test]
    fn ratio_model_validation() {
        let net = Mlp::zeroed(MlpSpec::new(vec![2, 1], Activation::Relu).unwrap());
        assert!(RatioModel::new(net.clone(), vec![0.0, 0.5], 1).is_err());
        assert!(RatioModel::new(net.clone(), vec![0.0, 0.6, 0.4, 1.0], 1).is_err());
        assert!(RatioModel::new(net.clone(), vec![0.0, 1.0], 0).is_err());
        let wide = Mlp::zeroed(MlpSpec::new(vec![2, 3], Activation::Relu).unwrap());
        assert!(RatioModel::new(wide, vec![0.0, 1.0], 1).is_err());
        assert!(RatioModel::new(net, vec![0.0, 1.0], 1).is_ok());
    }
}
