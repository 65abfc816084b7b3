//! Training objectives.
//!
//! - Logistic classifier losses for the two density-ratio discriminators
//!   (forward: pushed P samples vs raw Q samples; reverse: pulled Q samples
//!   vs raw P samples). The population minimizer of the two-sided logistic
//!   loss is the log density ratio of the negative-logit class over the
//!   positive-logit class.
//! - The classifier-based KL estimate: minus the mean frozen-classifier
//!   logit over the transported batch.
//! - The discrete kinetic-energy transport cost
//!   `(1/N) Σᵢ Σₖ ‖xᵢ(tₖ) − xᵢ(tₖ₋₁)‖² / hₖ`.
//! - The trigonometric interpolant target and its velocity-matching loss
//!   used to initialize the flow.
//!
//! Freeze discipline: when the flow is updated the classifier parameters
//! enter the tape as constants whose gradients are discarded; when a
//! classifier is updated the transported samples are integrated *off* the
//! tape and enter as constants, so no gradient reaches the flow.

use std::f64::consts::{FRAC_PI_2, LN_2};

use crate::array::Array;
use crate::autodiff::{Tape, ValueId};
use crate::nn::{Mlp, MlpBinding};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Forward,
    Reverse,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Forward => write!(f, "forward"),
            Phase::Reverse => write!(f, "reverse"),
        }
    }
}

/// Per-epoch loss record. Only the fields of the active phase are populated;
/// the opposite direction holds NaN. `total = kl + γ·w2` of the active pair.
#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub phase: Phase,
    pub kl_forward: f64,
    pub kl_reverse: f64,
    pub w2_forward: f64,
    pub w2_reverse: f64,
    pub total: f64,
    pub gamma: f64,
}

impl LossReport {
    pub fn new(phase: Phase, kl: f64, w2: f64, gamma: f64) -> LossReport {
        let (kl_forward, kl_reverse, w2_forward, w2_reverse) = match phase {
            Phase::Forward => (kl, f64::NAN, w2, f64::NAN),
            Phase::Reverse => (f64::NAN, kl, f64::NAN, w2),
        };
        LossReport { phase, kl_forward, kl_reverse, w2_forward, w2_reverse, total: kl + gamma * w2, gamma }
    }

    /// KL term of the active phase.
    pub fn kl(&self) -> f64 {
        match self.phase {
            Phase::Forward => self.kl_forward,
            Phase::Reverse => self.kl_reverse,
        }
    }

    /// Transport term of the active phase.
    pub fn w2(&self) -> f64 {
        match self.phase {
            Phase::Forward => self.w2_forward,
            Phase::Reverse => self.w2_reverse,
        }
    }
}

/// Two-sided logistic loss: `mean log(1+e^{c(pos)}) + mean log(1+e^{−c(neg)})`.
/// Both batches enter as constants; only the classifier parameters in
/// `binding` receive gradients.
fn logistic_pair_loss(
    tape: &Tape,
    classifier: &Mlp,
    binding: &MlpBinding,
    positive_logit_batch: &Array,
    negative_logit_batch: &Array,
) -> ValueId {
    let pos = tape.leaf(positive_logit_batch.clone());
    let neg = tape.leaf(negative_logit_batch.clone());
    let c_pos = classifier.forward_tape(tape, binding, pos);
    let c_neg = classifier.forward_tape(tape, binding, neg);
    let l_pos = tape.mean(tape.log1p_exp(c_pos));
    let l_neg = tape.mean(tape.log1p_exp(tape.neg(c_neg)));
    tape.add(l_pos, l_neg)
}

/// Classifier loss for the forward discriminator: transported P samples get
/// the positive logit, raw Q samples the negative. Minimized over the
/// classifier only — `pushed` must already be detached from the flow.
pub fn classifier_loss_forward(
    tape: &Tape,
    classifier: &Mlp,
    binding: &MlpBinding,
    pushed: &Array,
    targets: &Array,
) -> ValueId {
    assert!(pushed.rows() > 0 && targets.rows() > 0, "classifier_loss_forward: empty batch");
    logistic_pair_loss(tape, classifier, binding, pushed, targets)
}

/// Mirror image for the reverse discriminator: pulled-back Q samples get the
/// positive logit, raw P samples the negative.
pub fn classifier_loss_reverse(
    tape: &Tape,
    classifier: &Mlp,
    binding: &MlpBinding,
    pulled: &Array,
    targets: &Array,
) -> ValueId {
    assert!(pulled.rows() > 0 && targets.rows() > 0, "classifier_loss_reverse: empty batch");
    logistic_pair_loss(tape, classifier, binding, pulled, targets)
}

/// KL estimate through a *frozen* classifier: −mean logit over the
/// transported batch. `pushed` is a live tape value (gradient flows to the
/// flow through it); the classifier parameters enter as fresh constant
/// leaves so none of its parameters are touched.
pub fn kl_loss(tape: &Tape, frozen_classifier: &Mlp, pushed: ValueId) -> ValueId {
    let binding = frozen_classifier.bind(tape);
    let logits = frozen_classifier.forward_tape(tape, &binding, pushed);
    tape.neg(tape.mean(logits))
}

/// Discrete transport cost over consecutive knot states:
/// `(1/N) Σᵢ Σₖ ‖xᵢ(tₖ) − xᵢ(tₖ₋₁)‖² / hₖ`.
///
/// `interval_lengths` must match the traversal order of `knots` (for a
/// reverse trajectory, pass the reversed grid lengths).
pub fn w2_loss(tape: &Tape, knots: &[ValueId], interval_lengths: &[f64]) -> ValueId {
    assert!(knots.len() >= 2, "w2_loss: need at least 2 knot states");
    assert_eq!(
        knots.len() - 1,
        interval_lengths.len(),
        "w2_loss: {} knots vs {} intervals",
        knots.len(),
        interval_lengths.len()
    );
    let n = tape.shape(knots[0]).0 as f64;
    let mut acc: Option<ValueId> = None;
    for (k, &h) in interval_lengths.iter().enumerate() {
        let diff = tape.sub(knots[k + 1], knots[k]);
        let term = tape.scale(tape.sq_l2_norm(diff), 1.0 / (n * h));
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    acc.unwrap()
}

/// [`w2_loss`] on plain arrays, for evaluation and reporting.
pub fn w2_loss_plain(knots: &[Array], interval_lengths: &[f64]) -> f64 {
    assert!(knots.len() >= 2, "w2_loss_plain: need at least 2 knot states");
    assert_eq!(knots.len() - 1, interval_lengths.len());
    let n = knots[0].rows() as f64;
    interval_lengths
        .iter()
        .enumerate()
        .map(|(k, &h)| knots[k + 1].sub(&knots[k]).sq_norm() / (n * h))
        .sum()
}

/// Mean squared straight-line displacement `(1/N) Σᵢ ‖xᵢ(end) − xᵢ(start)‖²`,
/// the Cauchy–Schwarz lower bound of [`w2_loss`] when Σhₖ = 1.
pub fn straight_line_cost(knots: &[Array]) -> f64 {
    knots.last().unwrap().sub(&knots[0]).mean_row_sq_norm()
}

/// Point and velocity of the trigonometric interpolant
/// `x(t) = cos(πt/2)·x₀ + sin(πt/2)·x₁` between one sample pair.
///
/// The schedule keeps the target velocity bounded on all of `[0, 1]` and
/// satisfies cos² + sin² = 1, so independent Gaussian endpoints keep a
/// constant marginal scale along the path.
pub fn interpolant_target(x0: &[f64], x1: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    assert!((0.0..=1.0).contains(&t), "interpolant_target: t = {t} outside [0, 1]");
    assert_eq!(x0.len(), x1.len(), "interpolant_target: dim mismatch {} vs {}", x0.len(), x1.len());
    let (s, c) = (FRAC_PI_2 * t).sin_cos();
    let point = x0.iter().zip(x1).map(|(&a, &b)| c * a + s * b).collect();
    let velocity = x0.iter().zip(x1).map(|(&a, &b)| FRAC_PI_2 * (-s * a + c * b)).collect();
    (point, velocity)
}

/// Interpolant pairs assembled into batches: row i of the outputs is the
/// interpolant point and velocity of pair i at `times[i]`.
pub fn interpolant_batch(x0: &Array, x1: &Array, times: &[f64]) -> (Array, Array) {
    assert_eq!(x0.shape(), x1.shape(), "interpolant_batch: shape mismatch");
    assert_eq!(x0.rows(), times.len(), "interpolant_batch: {} pairs vs {} times", x0.rows(), times.len());
    let mut points = Array::zeros(x0.rows(), x0.cols());
    let mut velocities = Array::zeros(x0.rows(), x0.cols());
    for (i, &t) in times.iter().enumerate() {
        let (p, v) = interpolant_target(x0.row(i), x1.row(i), t);
        points.data_mut()[i * x0.cols()..(i + 1) * x0.cols()].copy_from_slice(&p);
        velocities.data_mut()[i * x0.cols()..(i + 1) * x0.cols()].copy_from_slice(&v);
    }
    (points, velocities)
}

/// Velocity-matching loss `(1/n) Σᵢ ‖f(xᵢ(tᵢ), tᵢ) − vᵢ(tᵢ)‖²` over a batch
/// of interpolant pairs, differentiable in the field parameters.
pub fn init_matching_loss(
    tape: &Tape,
    field: &Mlp,
    binding: &MlpBinding,
    x0: &Array,
    x1: &Array,
    times: &[f64],
) -> ValueId {
    let (points, velocities) = interpolant_batch(x0, x1, times);
    let n = points.rows() as f64;
    let t_col = Array::from_vec(times.len(), 1, times.to_vec());
    let input = tape.leaf(points.concat_cols(&t_col));
    let predicted = field.forward_tape(tape, binding, input);
    let target = tape.leaf(velocities);
    tape.scale(tape.sq_l2_norm(tape.sub(predicted, target)), 1.0 / n)
}

/// `2·ln 2`, the two-sided logistic loss at identically zero logits.
pub const LOGISTIC_LOSS_AT_ZERO: f64 = 2.0 * LN_2;
