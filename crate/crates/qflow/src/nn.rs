//! Time-augmented multilayer perceptrons and the Adam optimizer.
//!
//! Parameters live *outside* any tape as plain arrays; each optimizer step
//! binds them onto a fresh [`Tape`] as leaves, builds the loss, runs
//! backward, and feeds the leaf gradients to [`Adam`]. The tape is dropped
//! afterwards, so memory stays bounded across epochs.
//!
//! Time augmentation convention: the scalar `t` is appended as the **last**
//! input coordinate, so a velocity field on ℝᵈ is an MLP with `d+1` inputs
//! and `d` outputs. This is fixed so checkpoints are portable.

use crate::array::Array;
use crate::autodiff::{Tape, ValueId};
use crate::error::Error;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// `(1/β)·log(1 + e^{βx})`.
    Softplus { beta: f64 },
    Relu,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Softplus { beta: 20.0 }
    }
}

/// Layer widths (input first, output last) plus the hidden activation.
/// The final layer is always linear: velocity fields and logits are
/// unconstrained reals.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self, Error> {
        if widths.len() < 2 {
            return Err(Error::invalid(format!("MLP needs at least 2 widths, got {}", widths.len())));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("MLP widths must all be positive"));
        }
        if let Activation::Softplus { beta } = activation {
            if !(beta > 0.0) {
                return Err(Error::invalid(format!("softplus beta must be positive, got {beta}")));
            }
        }
        Ok(MlpSpec { widths, activation })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// An MLP with its parameters: per layer a weight matrix stored `(out, in)`
/// and a `(1, out)` bias row.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<Array>,
    pub biases: Vec<Array>,
}

/// Tape leaves for one [`Mlp`], aligned with its layers.
pub struct MlpBinding {
    pub weights: Vec<ValueId>,
    pub biases: Vec<ValueId>,
}

impl Mlp {
    /// Fan-in-scaled uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero
    /// biases. Deterministic per seed.
    pub fn init(spec: MlpSpec, seed: u64) -> Mlp {
        let mut rng = Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(spec.layer_count());
        let mut biases = Vec::with_capacity(spec.layer_count());
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_out * fan_in).map(|_| rng.uniform_range(-bound, bound)).collect();
            weights.push(Array::from_vec(fan_out, fan_in, data));
            biases.push(Array::zeros(1, fan_out));
        }
        Mlp { spec, weights, biases }
    }

    pub fn zeroed(spec: MlpSpec) -> Mlp {
        let mut mlp = Mlp::init(spec, 0);
        for w in &mut mlp.weights {
            *w = Array::zeros(w.rows(), w.cols());
        }
        mlp
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// All parameters flattened in layer order (weights row-major, then
    /// bias), the layout used by checkpoints.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    pub fn from_flat(spec: MlpSpec, flat: &[f64]) -> Result<Mlp, Error> {
        if flat.len() != spec.param_count() {
            return Err(Error::LengthMismatch {
                context: "mlp parameter vector".into(),
                left: flat.len(),
                right: spec.param_count(),
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut pos = 0;
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            weights.push(Array::from_vec(fan_out, fan_in, flat[pos..pos + fan_out * fan_in].to_vec()));
            pos += fan_out * fan_in;
            biases.push(Array::from_vec(1, fan_out, flat[pos..pos + fan_out].to_vec()));
            pos += fan_out;
        }
        Ok(Mlp { spec, weights, biases })
    }

    fn activate_plain(&self, x: Array) -> Array {
        match self.spec.activation {
            Activation::Softplus { beta } => x.map(|v| crate::autodiff::log1p_exp(beta * v) / beta),
            Activation::Relu => x.map(|v| v.max(0.0)),
        }
    }

    /// Forward pass on plain arrays (no gradients recorded).
    pub fn forward(&self, input: &Array) -> Array {
        assert_eq!(
            input.cols(),
            self.spec.input_width(),
            "mlp forward: input width {} vs spec {}",
            input.cols(),
            self.spec.input_width()
        );
        let last = self.spec.layer_count() - 1;
        let mut x = input.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = x.matmul_bt(w).add_row_broadcast(b);
            if i < last {
                x = self.activate_plain(x);
            }
        }
        x
    }

    /// Forward with the scalar time appended as the last input column.
    pub fn forward_time(&self, x: &Array, t: f64) -> Array {
        self.forward(&x.concat_cols(&Array::filled(x.rows(), 1, t)))
    }

    /// Record the parameters as leaves on `tape`.
    pub fn bind(&self, tape: &Tape) -> MlpBinding {
        MlpBinding {
            weights: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    fn activate_tape(&self, tape: &Tape, x: ValueId) -> ValueId {
        match self.spec.activation {
            Activation::Softplus { beta } => tape.softplus(x, beta),
            Activation::Relu => tape.relu(x),
        }
    }

    /// Differentiable forward pass against previously bound parameters.
    pub fn forward_tape(&self, tape: &Tape, binding: &MlpBinding, input: ValueId) -> ValueId {
        assert_eq!(
            tape.shape(input).1,
            self.spec.input_width(),
            "mlp forward_tape: input width {} vs spec {}",
            tape.shape(input).1,
            self.spec.input_width()
        );
        let last = self.spec.layer_count() - 1;
        let mut x = input;
        for i in 0..self.spec.layer_count() {
            x = tape.add(tape.matmul_bt(x, binding.weights[i]), binding.biases[i]);
            if i < last {
                x = self.activate_tape(tape, x);
            }
        }
        x
    }

    /// Differentiable [`Mlp::forward_time`]: `t` enters as a constant leaf.
    pub fn forward_time_tape(&self, tape: &Tape, binding: &MlpBinding, x: ValueId, t: f64) -> ValueId {
        let rows = tape.shape(x).0;
        let t_col = tape.leaf(Array::filled(rows, 1, t));
        self.forward_tape(tape, binding, tape.concat_cols(x, t_col))
    }
}

/// Adam with bias correction. Moment buffers are kept per layer, aligned
/// with the owning [`Mlp`]'s weight/bias layout.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(mlp: &Mlp, learning_rate: f64) -> Adam {
        let shapes: Vec<Array> = mlp
            .weights
            .iter()
            .zip(&mlp.biases)
            .flat_map(|(w, b)| [Array::zeros(w.rows(), w.cols()), Array::zeros(b.rows(), b.cols())])
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from gradients in `[w0, b0, w1, b1, …]` order.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &[Array]) -> Result<(), Error> {
        assert_eq!(grads.len(), 2 * mlp.spec.layer_count(), "adam: gradient count mismatch");
        for (li, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                let name = if li % 2 == 0 { format!("w{}", li / 2) } else { format!("b{}", li / 2) };
                return Err(Error::non_finite(format!("gradient of parameter {name}")));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (li, g) in grads.iter().enumerate() {
            let param = if li % 2 == 0 { &mut mlp.weights[li / 2] } else { &mut mlp.biases[li / 2] };
            let m = &mut self.m[li];
            let v = &mut self.v[li];
            for j in 0..g.len() {
                let gj = g.data()[j];
                let mj = self.beta1 * m.data()[j] + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v.data()[j] + (1.0 - self.beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let update = self.learning_rate * (mj / bc1) / ((vj / bc2).sqrt() + self.epsilon);
                param.data_mut()[j] -= update;
            }
        }
        Ok(())
    }
}

/// Build a loss on a fresh tape, backprop, and apply one Adam update.
/// Returns the loss value. Errors if the loss or any gradient is non-finite.
pub fn optimize_step<F>(mlp: &mut Mlp, adam: &mut Adam, loss_builder: F) -> Result<f64, Error>
where
    F: FnOnce(&Tape, &MlpBinding) -> ValueId,
{
    let tape = Tape::new();
    let binding = mlp.bind(&tape);
    let loss = loss_builder(&tape, &binding);
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::non_finite(format!("training loss = {value}")));
    }
    tape.backward(loss)?;
    let grads: Vec<Array> = binding
        .weights
        .iter()
        .zip(&binding.biases)
        .flat_map(|(&w, &b)| [tape.grad(w), tape.grad(b)])
        .collect();
    adam.step(mlp, &grads)?;
    Ok(value)
}
