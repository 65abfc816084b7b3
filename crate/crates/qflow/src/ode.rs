//! Fixed-grid four-stage Runge–Kutta integration of a velocity field.
//!
//! A [`TimeGrid`] carries the coarse knots `0 = t₀ < … < t_K = 1` that the
//! transport losses see, plus a uniform per-interval subdivision count `S`;
//! integration always runs on the fine grid (`K·S` RK4 steps across
//! `[0, 1]`) for numerical accuracy and invertibility. Reverse transport
//! reuses the same field with negative steps — there is no separately
//! learned reverse field.
//!
//! Two integration paths exist on purpose: [`integrate`] works on plain
//! arrays for evaluation and data export, while [`integrate_tape`] records
//! every stage of every fine step on a [`Tape`] so training losses
//! differentiate through the whole discrete solver
//! (discretize-then-optimize; the grids are small enough that tape memory
//! is irrelevant and the gradients are exact for the discrete objective).

use crate::array::Array;
use crate::autodiff::{Tape, ValueId};
use crate::error::Error;
use crate::nn::{Mlp, MlpBinding};

/// Coarse knots on `[0, 1]` with a uniform fine subdivision per interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
    subdivisions: usize,
}

pub const DEFAULT_SUBDIVISIONS: usize = 4;

impl TimeGrid {
    /// `k` equal intervals on `[0, 1]`.
    pub fn uniform(k: usize, subdivisions: usize) -> TimeGrid {
        assert!(k >= 1 && subdivisions >= 1, "uniform grid needs k ≥ 1, S ≥ 1");
        let knots = (0..=k).map(|i| i as f64 / k as f64).collect();
        TimeGrid { knots, subdivisions }
    }

    pub fn from_knots(knots: Vec<f64>, subdivisions: usize) -> Result<TimeGrid, Error> {
        if knots.len() < 2 {
            return Err(Error::invalid("grid needs at least 2 knots"));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::invalid("grid endpoints must be exactly 0 and 1"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid knots must be strictly increasing"));
        }
        if subdivisions == 0 {
            return Err(Error::invalid("subdivision count must be positive"));
        }
        Ok(TimeGrid { knots, subdivisions })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    /// Number of coarse intervals `K`.
    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Interval lengths `h_k = t_k − t_{k−1}`.
    pub fn interval_lengths(&self) -> Vec<f64> {
        self.knots.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn knot_index(&self, t: f64) -> Result<usize, Error> {
        self.knots.iter().position(|&k| k == t).ok_or(Error::OffGrid { t })
    }

    /// Fine states recorded by integrating between two knots (inclusive).
    pub fn fine_state_count(&self, from: usize, to: usize) -> usize {
        from.abs_diff(to) * self.subdivisions + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// The states of one batch along the fine grid, in traversal order.
/// `states[0]` is the supplied initial batch; `times` are strictly monotone
/// in the stated direction.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array>,
    pub direction: Direction,
}

impl Trajectory {
    pub fn terminal(&self) -> &Array {
        self.states.last().unwrap()
    }
}

/// Anything that can be integrated: maps a batch and a time to velocities.
pub trait VelocityField {
    fn velocity(&self, x: &Array, t: f64) -> Array;
}

impl VelocityField for Mlp {
    fn velocity(&self, x: &Array, t: f64) -> Array {
        self.forward_time(x, t)
    }
}

impl<F: Fn(&Array, f64) -> Array> VelocityField for F {
    fn velocity(&self, x: &Array, t: f64) -> Array {
        self(x, t)
    }
}

/// Simple fields used by tests, demos, and `inspect`.
pub mod fields {
    use super::*;

    pub struct Zero;

    impl VelocityField for Zero {
        fn velocity(&self, x: &Array, _t: f64) -> Array {
            Array::zeros(x.rows(), x.cols())
        }
    }

    /// Constant velocity `c`, the same for every sample and time.
    pub struct Constant(pub Vec<f64>);

    impl VelocityField for Constant {
        fn velocity(&self, x: &Array, _t: f64) -> Array {
            let mut out = Array::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                for j in 0..x.cols() {
                    out.set(i, j, self.0[j]);
                }
            }
            out
        }
    }

    /// `f(x, t) = x`, whose exact flow is `x·e^{t−s}`.
    pub struct Identity;

    impl VelocityField for Identity {
        fn velocity(&self, x: &Array, _t: f64) -> Array {
            x.clone()
        }
    }
}

/// One classical RK4 update `x + (h/6)(k₁ + 2k₂ + 2k₃ + k₄)` with stages at
/// `t`, `t + h/2`, `t + h/2`, `t + h`. Negative `h` integrates backwards.
pub fn rk4_step<F: VelocityField>(field: &F, x: &Array, t: f64, h: f64) -> Result<Array, Error> {
    assert!(h != 0.0, "rk4_step: h must be nonzero");
    let k1 = field.velocity(x, t);
    let k2 = field.velocity(&x.add(&k1.scale(h / 2.0)), t + h / 2.0);
    let k3 = field.velocity(&x.add(&k2.scale(h / 2.0)), t + h / 2.0);
    let k4 = field.velocity(&x.add(&k3.scale(h)), t + h);
    let out = x.add(
        &k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4).scale(h / 6.0),
    );
    if !out.is_finite() {
        return Err(Error::non_finite(format!("state blew up in RK4 step at t = {t}")));
    }
    Ok(out)
}

/// Integrate a batch from knot time `s` to knot time `t` (either order),
/// recording the state at every fine step. The terminal state realizes the
/// solution map from `s` to `t`.
pub fn integrate<F: VelocityField>(
    field: &F,
    x0: &Array,
    s: f64,
    t: f64,
    grid: &TimeGrid,
) -> Result<Trajectory, Error> {
    let si = grid.knot_index(s)?;
    let ti = grid.knot_index(t)?;
    if si == ti {
        return Err(Error::invalid(format!("integration endpoints coincide (s = t = {s})")));
    }
    let direction = if ti > si { Direction::Forward } else { Direction::Reverse };
    let sub = grid.subdivisions();
    let mut times = Vec::with_capacity(grid.fine_state_count(si, ti));
    let mut states = Vec::with_capacity(grid.fine_state_count(si, ti));
    times.push(s);
    states.push(x0.clone());
    let mut x = x0.clone();
    let knot_range: Vec<(f64, f64)> = if ti > si {
        (si..ti).map(|k| (grid.knots[k], grid.knots[k + 1])).collect()
    } else {
        (ti..si).rev().map(|k| (grid.knots[k + 1], grid.knots[k])).collect()
    };
    for (from, to) in knot_range {
        let h = (to - from) / sub as f64;
        for step in 0..sub {
            let t_now = from + h * step as f64;
            x = rk4_step(field, &x, t_now, h)?;
            times.push(if step + 1 == sub { to } else { from + h * (step + 1) as f64 });
            states.push(x.clone());
        }
    }
    Ok(Trajectory { times, states, direction })
}

/// States at the coarse knots of the grid, in traversal order (so a reverse
/// trajectory yields `t_K, …, t₀`).
pub fn knot_states(traj: &Trajectory, grid: &TimeGrid) -> Result<Vec<Array>, Error> {
    let sub = grid.subdivisions();
    if (traj.states.len() - 1) % sub != 0 {
        return Err(Error::GridMismatch { expected: sub, got: traj.states.len() });
    }
    let spanned = (traj.states.len() - 1) / sub;
    // every recorded knot time must actually be a grid knot
    for i in 0..=spanned {
        let t = traj.times[i * sub];
        grid.knot_index(t).map_err(|_| Error::GridMismatch { expected: grid.knots.len(), got: traj.times.len() })?;
    }
    Ok((0..=spanned).map(|i| traj.states[i * sub].clone()).collect())
}

/// Summed mean squared round-trip error of forward-then-reverse transport on
/// P samples plus reverse-then-forward transport on Q samples.
pub fn inversion_error<F: VelocityField>(
    field: &F,
    grid: &TimeGrid,
    samples_p: &Array,
    samples_q: &Array,
) -> Result<f64, Error> {
    assert!(samples_p.rows() > 0 && samples_q.rows() > 0, "inversion_error: empty batch");
    let pushed = integrate(field, samples_p, 0.0, 1.0, grid)?;
    let returned = integrate(field, pushed.terminal(), 1.0, 0.0, grid)?;
    let err_p = returned.terminal().sub(samples_p).mean_row_sq_norm();
    let pulled = integrate(field, samples_q, 1.0, 0.0, grid)?;
    let restored = integrate(field, pulled.terminal(), 0.0, 1.0, grid)?;
    let err_q = restored.terminal().sub(samples_q).mean_row_sq_norm();
    Ok(err_p + err_q)
}

/// Differentiable RK4 step for an MLP velocity field bound on `tape`.
pub fn rk4_step_tape(
    tape: &Tape,
    field: &Mlp,
    binding: &MlpBinding,
    x: ValueId,
    t: f64,
    h: f64,
) -> ValueId {
    let k1 = field.forward_time_tape(tape, binding, x, t);
    let x2 = tape.add(x, tape.scale(k1, h / 2.0));
    let k2 = field.forward_time_tape(tape, binding, x2, t + h / 2.0);
    let x3 = tape.add(x, tape.scale(k2, h / 2.0));
    let k3 = field.forward_time_tape(tape, binding, x3, t + h / 2.0);
    let x4 = tape.add(x, tape.scale(k3, h));
    let k4 = field.forward_time_tape(tape, binding, x4, t + h);
    let sum = tape.add(tape.add(k1, tape.scale(k2, 2.0)), tape.add(tape.scale(k3, 2.0), k4));
    tape.add(x, tape.scale(sum, h / 6.0))
}

/// Differentiable integration between knots; returns the state at every
/// **coarse** knot in traversal order (the fine steps stay on the tape, so
/// gradients flow through all of them).
pub fn integrate_tape(
    tape: &Tape,
    field: &Mlp,
    binding: &MlpBinding,
    x0: ValueId,
    s: f64,
    t: f64,
    grid: &TimeGrid,
) -> Result<Vec<ValueId>, Error> {
    let si = grid.knot_index(s)?;
    let ti = grid.knot_index(t)?;
    if si == ti {
        return Err(Error::invalid(format!("integration endpoints coincide (s = t = {s})")));
    }
    let sub = grid.subdivisions();
    let mut knots = Vec::with_capacity(si.abs_diff(ti) + 1);
    knots.push(x0);
    let mut x = x0;
    let knot_range: Vec<(f64, f64)> = if ti > si {
        (si..ti).map(|k| (grid.knots[k], grid.knots[k + 1])).collect()
    } else {
        (ti..si).rev().map(|k| (grid.knots[k + 1], grid.knots[k])).collect()
    };
    for (from, to) in knot_range {
        let h = (to - from) / sub as f64;
        for step in 0..sub {
            x = rk4_step_tape(tape, field, binding, x, from + h * step as f64, h);
        }
        knots.push(x);
    }
    Ok(knots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};

    #[test]
    fn zero_field_is_identity() {
        let x = Array::from_vec(2, 2, vec![1.0, 2.0, -3.0, 0.5]);
        let y = rk4_step(&fields::Zero, &x, 0.0, 0.25).unwrap();
        assert_eq!(x, y);
        let grid = TimeGrid::uniform(3, 2);
        let traj = integrate(&fields::Zero, &x, 0.0, 1.0, &grid).unwrap();
        assert_eq!(traj.terminal(), &x);
        assert_eq!(traj.states.len(), 7);
    }

    #[test]
    fn constant_field_is_exact_linear_motion() {
        let x = Array::from_vec(2, 2, vec![0.0, 0.0, 1.0, -1.0]);
        let c = fields::Constant(vec![3.0, -2.0]);
        let y = rk4_step(&c, &x, 0.0, 0.5).unwrap();
        assert_eq!(y.row(0), &[1.5, -1.0]);
        let grid = TimeGrid::uniform(4, 3);
        let traj = integrate(&c, &x, 0.0, 1.0, &grid).unwrap();
        let knots = knot_states(&traj, &grid).unwrap();
        for (k, state) in knots.iter().enumerate() {
            let t = grid.knots()[k];
            assert!((state.get(0, 0) - 3.0 * t).abs() < 1e-12);
            assert!((state.get(1, 1) - (-1.0 - 2.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_growth_single_step() {
        // f(x,t) = x from x = 1: one RK4 step of h = 0.1 gives the degree-4
        // Taylor truncation of e^0.1.
        let y = rk4_step(&fields::Identity, &Array::scalar(1.0), 0.0, 0.1).unwrap();
        let expected = 1.0 + 0.1 + 0.01 / 2.0 + 0.001 / 6.0 + 0.0001 / 24.0;
        assert!((y.data()[0] - expected).abs() < 1e-15);
        assert!((y.data()[0] - 0.1_f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn exponential_growth_full_interval() {
        let grid = TimeGrid::uniform(5, 2); // K·S = 10 fine steps
        let traj = integrate(&fields::Identity, &Array::scalar(1.0), 0.0, 1.0, &grid).unwrap();
        let rel = (traj.terminal().data()[0] - std::f64::consts::E).abs() / std::f64::consts::E;
        assert!(rel < 1e-5, "rel err {rel}");
    }

    #[test]
    fn rk4_empirical_order_at_least_3_8() {
        // global error on f(x,t) = x over [0,1] vs fine-step count
        let mut errs = Vec::new();
        for &steps in &[5usize, 10, 20, 40] {
            let grid = TimeGrid::uniform(1, steps);
            let traj = integrate(&fields::Identity, &Array::scalar(1.0), 0.0, 1.0, &grid).unwrap();
            errs.push((steps as f64, (traj.terminal().data()[0] - std::f64::consts::E).abs()));
        }
        for w in errs.windows(2) {
            let slope = (w[0].1 / w[1].1).ln() / (w[1].0 / w[0].0).ln();
            assert!(slope >= 3.8, "order {slope} between n={} and n={}", w[0].0, w[1].0);
        }
    }

    #[test]
    fn reverse_integration_returns_home() {
        let spec = MlpSpec::new(vec![3, 16, 2], Activation::Softplus { beta: 20.0 }).unwrap();
        let field = Mlp::init(spec, 3);
        let grid = TimeGrid::uniform(4, 4);
        let x = Array::from_vec(5, 2, (0..10).map(|i| (i as f64) * 0.3 - 1.5).collect());
        let fwd = integrate(&field, &x, 0.0, 1.0, &grid).unwrap();
        assert_eq!(fwd.direction, Direction::Forward);
        let back = integrate(&field, fwd.terminal(), 1.0, 0.0, &grid).unwrap();
        assert_eq!(back.direction, Direction::Reverse);
        let err = back.terminal().sub(&x).mean_row_sq_norm();
        assert!(err < 1e-9, "round trip err {err}");
    }

    #[test]
    fn off_grid_times_are_rejected() {
        let grid = TimeGrid::uniform(4, 2);
        let x = Array::zeros(1, 2);
        assert!(matches!(integrate(&fields::Zero, &x, 0.0, 0.3, &grid), Err(Error::OffGrid { .. })));
        assert!(integrate(&fields::Zero, &x, 0.5, 0.5, &grid).is_err());
    }

    #[test]
    fn knot_states_k1_is_initial_and_terminal() {
        let grid = TimeGrid::uniform(1, 6);
        let x = Array::from_vec(1, 2, vec![0.5, -0.5]);
        let traj = integrate(&fields::Constant(vec![1.0, 1.0]), &x, 0.0, 1.0, &grid).unwrap();
        let knots = knot_states(&traj, &grid).unwrap();
        assert_eq!(knots.len(), 2);
        assert_eq!(&knots[0], &x);
        assert_eq!(knots[1], *traj.terminal());
    }

    #[test]
    fn knot_states_rejects_wrong_grid() {
        let grid = TimeGrid::uniform(2, 3);
        let other = TimeGrid::uniform(2, 4);
        let x = Array::zeros(1, 2);
        let traj = integrate(&fields::Zero, &x, 0.0, 1.0, &grid).unwrap();
        assert!(knot_states(&traj, &other).is_err());
    }

    #[test]
    fn inversion_error_zero_and_constant_fields() {
        let grid = TimeGrid::uniform(3, 3);
        let p = Array::from_vec(4, 2, (0..8).map(|i| i as f64 * 0.25).collect());
        let q = Array::from_vec(3, 2, (0..6).map(|i| 1.0 - i as f64 * 0.5).collect());
        assert_eq!(inversion_error(&fields::Zero, &grid, &p, &q).unwrap(), 0.0);
        let c = fields::Constant(vec![2.0, -1.0]);
        assert!(inversion_error(&c, &grid, &p, &q).unwrap() < 1e-24);
    }

    #[test]
    fn inversion_error_shrinks_with_subdivisions() {
        let spec = MlpSpec::new(vec![3, 24, 2], Activation::Softplus { beta: 20.0 }).unwrap();
        let field = Mlp::init(spec, 9);
        let p = Array::from_vec(6, 2, (0..12).map(|i| (i as f64) * 0.2 - 1.0).collect());
        let q = p.scale(-0.5);
        let mut prev = f64::INFINITY;
        for s in [1usize, 2, 4, 8] {
            let grid = TimeGrid::uniform(3, s);
            let e = inversion_error(&field, &grid, &p, &q).unwrap();
            assert!(e <= prev * 1.05, "S={s}: {e} vs prev {prev}");
            prev = e;
        }
    }

    #[test]
    fn knot_states_converge_as_subdivisions_double() {
        // halving the fine step changes knot states by O(h⁴)
        let spec = MlpSpec::new(vec![3, 12, 2], Activation::Softplus { beta: 20.0 }).unwrap();
        let field = Mlp::init(spec, 4);
        let x = Array::from_vec(3, 2, vec![0.1, -0.4, 0.8, 0.0, -0.9, 0.4]);
        let terminal = |s: usize| {
            let grid = TimeGrid::uniform(2, s);
            integrate(&field, &x, 0.0, 1.0, &grid).unwrap().terminal().clone()
        };
        let d1 = terminal(2).sub(&terminal(4)).sq_norm().sqrt();
        let d2 = terminal(4).sub(&terminal(8)).sq_norm().sqrt();
        assert!(d2 < d1 / 8.0, "d1 {d1}, d2 {d2}");
    }

    #[test]
    fn tape_integration_matches_plain() {
        let spec = MlpSpec::new(vec![3, 10, 2], Activation::Softplus { beta: 20.0 }).unwrap();
        let field = Mlp::init(spec, 21);
        let grid = TimeGrid::uniform(3, 2);
        let x = Array::from_vec(4, 2, (0..8).map(|i| (i as f64) * 0.17 - 0.5).collect());

        let traj = integrate(&field, &x, 0.0, 1.0, &grid).unwrap();
        let plain_knots = knot_states(&traj, &grid).unwrap();

        let tape = Tape::new();
        let binding = field.bind(&tape);
        let x0 = tape.leaf(x.clone());
        let tape_knots = integrate_tape(&tape, &field, &binding, x0, 0.0, 1.0, &grid).unwrap();
        assert_eq!(tape_knots.len(), plain_knots.len());
        for (tk, pk) in tape_knots.iter().zip(&plain_knots) {
            let diff = tape.value(*tk).sub(pk).sq_norm();
            assert!(diff < 1e-28, "tape/plain divergence {diff}");
        }

        // reverse direction too
        let rtraj = integrate(&field, &x, 1.0, 0.0, &grid).unwrap();
        let rplain = knot_states(&rtraj, &grid).unwrap();
        let rx0 = tape.leaf(x.clone());
        let rtape = integrate_tape(&tape, &field, &binding, rx0, 1.0, 0.0, &grid).unwrap();
        for (tk, pk) in rtape.iter().zip(&rplain) {
            assert!(tape.value(*tk).sub(pk).sq_norm() < 1e-28);
        }
    }
}
