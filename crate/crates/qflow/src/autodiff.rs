//! Reverse-mode automatic differentiation over dense [`Array`] values.
//!
//! A [`Tape`] records every operation in creation order (which is therefore a
//! topological order: parents always precede children). [`Tape::backward`]
//! walks the record once in reverse, accumulating adjoints, and *adds* the
//! result into each node's `grad` — repeated backward calls without
//! [`Tape::zero_grads`] accumulate, matching the usual deep-learning
//! convention for gradient accumulation across micro-batches.
//!
//! Tapes are deliberately cheap and short-lived: build one per optimizer
//! step, read the leaf gradients, drop it.

use std::cell::RefCell;

use crate::array::Array;
use crate::error::Error;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

type GradFn = Box<dyn Fn(&Array) -> Array>;

struct Node {
    data: Array,
    grad: Array,
    /// Upstream nodes with the local gradient of this node w.r.t. each:
    /// given this node's adjoint, produce the contribution to the parent's.
    parents: Vec<(ValueId, GradFn)>,
}

/// Wengert list of [`Node`]s in creation order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, data: Array, parents: Vec<(ValueId, GradFn)>) -> ValueId {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        for (p, _) in &parents {
            debug_assert!(p.0 < id, "tape order violated: parent {} of node {id}", p.0);
        }
        let grad = Array::zeros(data.rows(), data.cols());
        nodes.push(Node { data, grad, parents });
        ValueId(id)
    }

    /// Record an input with no parents (parameter, data batch, or constant).
    pub fn leaf(&self, data: Array) -> ValueId {
        self.push(data, Vec::new())
    }

    pub fn value(&self, id: ValueId) -> Array {
        self.nodes.borrow()[id.0].data.clone()
    }

    pub fn shape(&self, id: ValueId) -> (usize, usize) {
        self.nodes.borrow()[id.0].data.shape()
    }

    /// Scalar payload of a `(1,1)` value.
    pub fn scalar_value(&self, id: ValueId) -> f64 {
        let nodes = self.nodes.borrow();
        let d = &nodes[id.0].data;
        assert!(d.is_scalar(), "scalar_value: shape {:?}", d.shape());
        d.data()[0]
    }

    pub fn grad(&self, id: ValueId) -> Array {
        self.nodes.borrow()[id.0].grad.clone()
    }

    pub fn zero_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = Array::zeros(node.data.rows(), node.data.cols());
        }
    }

    fn with_data<R>(&self, id: ValueId, f: impl FnOnce(&Array) -> R) -> R {
        f(&self.nodes.borrow()[id.0].data)
    }

    // ── op library ──────────────────────────────────────────────────────

    /// `a + b`; `b` may be a `(1, c)` row broadcast over the rows of `a`.
    pub fn add(&self, a: ValueId, b: ValueId) -> ValueId {
        let (data, broadcast) = {
            let nodes = self.nodes.borrow();
            let (da, db) = (&nodes[a.0].data, &nodes[b.0].data);
            if db.rows() == 1 && da.rows() > 1 {
                (da.add_row_broadcast(db), true)
            } else {
                (da.add(db), false)
            }
        };
        let gb: GradFn = if broadcast {
            Box::new(|g: &Array| g.col_sums())
        } else {
            Box::new(|g: &Array| g.clone())
        };
        self.push(data, vec![(a, Box::new(|g: &Array| g.clone())), (b, gb)])
    }

    pub fn sub(&self, a: ValueId, b: ValueId) -> ValueId {
        let data = {
            let nodes = self.nodes.borrow();
            nodes[a.0].data.sub(&nodes[b.0].data)
        };
        self.push(
            data,
            vec![(a, Box::new(|g: &Array| g.clone())), (b, Box::new(|g: &Array| g.scale(-1.0)))],
        )
    }

    pub fn neg(&self, a: ValueId) -> ValueId {
        let data = self.with_data(a, |d| d.scale(-1.0));
        self.push(data, vec![(a, Box::new(|g: &Array| g.scale(-1.0)))])
    }

    /// Elementwise product.
    pub fn mul(&self, a: ValueId, b: ValueId) -> ValueId {
        let (data, da, db) = {
            let nodes = self.nodes.borrow();
            let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
            (xa.hadamard(xb), xa.clone(), xb.clone())
        };
        self.push(
            data,
            vec![
                (a, Box::new(move |g: &Array| g.hadamard(&db))),
                (b, Box::new(move |g: &Array| g.hadamard(&da))),
            ],
        )
    }

    /// Multiplication by a plain constant.
    pub fn scale(&self, a: ValueId, k: f64) -> ValueId {
        let data = self.with_data(a, |d| d.scale(k));
        self.push(data, vec![(a, Box::new(move |g: &Array| g.scale(k)))])
    }

    /// `a · b` with shapes `(n, k) · (k, m)`.
    pub fn matmul(&self, a: ValueId, b: ValueId) -> ValueId {
        let (data, da, db) = {
            let nodes = self.nodes.borrow();
            let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
            (xa.matmul(xb), xa.clone(), xb.clone())
        };
        self.push(
            data,
            vec![
                (a, Box::new(move |g: &Array| g.matmul_bt(&db))),
                (b, Box::new(move |g: &Array| da.matmul_at(g))),
            ],
        )
    }

    /// `a · bᵀ` with shapes `(n, k) · (m, k)ᵀ` — the natural layout for
    /// weight matrices stored as `(out, in)`.
    pub fn matmul_bt(&self, a: ValueId, b: ValueId) -> ValueId {
        let (data, da, db) = {
            let nodes = self.nodes.borrow();
            let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
            (xa.matmul_bt(xb), xa.clone(), xb.clone())
        };
        self.push(
            data,
            vec![
                (a, Box::new(move |g: &Array| g.matmul(&db))),
                (b, Box::new(move |g: &Array| g.matmul_at(&da))),
            ],
        )
    }

    pub fn sum(&self, a: ValueId) -> ValueId {
        let (data, shape) = self.with_data(a, |d| (Array::scalar(d.sum()), d.shape()));
        self.push(
            data,
            vec![(a, Box::new(move |g: &Array| Array::filled(shape.0, shape.1, g.data()[0])))],
        )
    }

    /// Mean over all entries.
    pub fn mean(&self, a: ValueId) -> ValueId {
        let (data, shape, n) = self.with_data(a, |d| (Array::scalar(d.mean()), d.shape(), d.len() as f64));
        self.push(
            data,
            vec![(a, Box::new(move |g: &Array| Array::filled(shape.0, shape.1, g.data()[0] / n)))],
        )
    }

    /// Squared L2 norm over all entries: Σ aᵢⱼ².
    pub fn sq_l2_norm(&self, a: ValueId) -> ValueId {
        let (data, da) = self.with_data(a, |d| (Array::scalar(d.sq_norm()), d.clone()));
        self.push(data, vec![(a, Box::new(move |g: &Array| da.scale(2.0 * g.data()[0])))])
    }

    pub fn exp(&self, a: ValueId) -> ValueId {
        let out = self.with_data(a, |d| d.map(f64::exp));
        let captured = out.clone();
        self.push(out, vec![(a, Box::new(move |g: &Array| g.hadamard(&captured)))])
    }

    pub fn ln(&self, a: ValueId) -> ValueId {
        let (out, da) = self.with_data(a, |d| (d.map(f64::ln), d.clone()));
        self.push(out, vec![(a, Box::new(move |g: &Array| g.zip_map(&da, "ln'", |gv, xv| gv / xv)))])
    }

    /// Numerically stable `x ↦ log(1 + eˣ)`.
    pub fn log1p_exp(&self, a: ValueId) -> ValueId {
        let (out, da) = self.with_data(a, |d| (d.map(log1p_exp), d.clone()));
        self.push(
            out,
            vec![(a, Box::new(move |g: &Array| g.zip_map(&da, "log1p_exp'", |gv, xv| gv * sigmoid(xv))))],
        )
    }

    /// Softplus with sharpness β: `x ↦ (1/β) log(1 + e^{βx})`.
    pub fn softplus(&self, a: ValueId, beta: f64) -> ValueId {
        assert!(beta > 0.0, "softplus: beta must be positive, got {beta}");
        let (out, da) = self.with_data(a, |d| (d.map(|x| log1p_exp(beta * x) / beta), d.clone()));
        self.push(
            out,
            vec![(
                a,
                Box::new(move |g: &Array| g.zip_map(&da, "softplus'", |gv, xv| gv * sigmoid(beta * xv))),
            )],
        )
    }

    pub fn sigmoid(&self, a: ValueId) -> ValueId {
        let out = self.with_data(a, |d| d.map(sigmoid));
        let captured = out.clone();
        self.push(
            out,
            vec![(a, Box::new(move |g: &Array| g.zip_map(&captured, "sigmoid'", |gv, sv| gv * sv * (1.0 - sv))))],
        )
    }

    pub fn relu(&self, a: ValueId) -> ValueId {
        let (out, da) = self.with_data(a, |d| (d.map(|x| x.max(0.0)), d.clone()));
        self.push(
            out,
            vec![(a, Box::new(move |g: &Array| g.zip_map(&da, "relu'", |gv, xv| if xv > 0.0 { gv } else { 0.0 })))],
        )
    }

    /// Concatenation along the feature (column) axis.
    pub fn concat_cols(&self, a: ValueId, b: ValueId) -> ValueId {
        let (data, ca, cb) = {
            let nodes = self.nodes.borrow();
            let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
            (xa.concat_cols(xb), xa.cols(), xb.cols())
        };
        self.push(
            data,
            vec![
                (a, Box::new(move |g: &Array| g.slice_cols(0, ca))),
                (b, Box::new(move |g: &Array| g.slice_cols(ca, ca + cb))),
            ],
        )
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar output. Each node is visited exactly once
    /// in reverse creation order; the computed adjoints are added into the
    /// stored grads (call [`Tape::zero_grads`] between independent passes).
    pub fn backward(&self, out: ValueId) -> Result<(), Error> {
        let mut nodes = self.nodes.borrow_mut();
        let node_count = nodes.len();
        assert!(out.0 < node_count, "backward: id out of range");
        if !nodes[out.0].data.is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar output, got shape {:?}",
                nodes[out.0].data.shape()
            )));
        }
        let mut adjoint: Vec<Option<Array>> = (0..node_count).map(|_| None).collect();
        adjoint[out.0] = Some(Array::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            let node = &mut nodes[i];
            for (pid, grad_fn) in &node.parents {
                let contribution = grad_fn(&g);
                match &mut adjoint[pid.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            node.grad.add_assign(&g);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max relative error between the tape gradient of `f` and central finite
/// differences, over every coordinate of every array in `point`.
///
/// `f` must build a scalar from the leaves it is handed; the analytic side
/// runs once through [`Tape::backward`], the reference side re-evaluates `f`
/// on fresh tapes at perturbed points, so the two paths share no state.
pub fn grad_check<F>(f: F, point: &[Array], eps: f64) -> Result<f64, Error>
where
    F: Fn(&Tape, &[ValueId]) -> ValueId,
{
    assert!((1e-7..=1e-4).contains(&eps), "grad_check: eps {eps} outside [1e-7, 1e-4]");
    let eval = |arrays: &[Array]| -> Result<f64, Error> {
        let tape = Tape::new();
        let leaves: Vec<ValueId> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        let out = f(&tape, &leaves);
        let v = tape.scalar_value(out);
        if !v.is_finite() {
            return Err(Error::non_finite("grad_check evaluation"));
        }
        Ok(v)
    };

    let tape = Tape::new();
    let leaves: Vec<ValueId> = point.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&tape, &leaves);
    if !tape.value(out).is_finite() {
        return Err(Error::non_finite("grad_check evaluation at base point"));
    }
    tape.backward(out)?;
    let analytic: Vec<Array> = leaves.iter().map(|&id| tape.grad(id)).collect();

    let mut worst: f64 = 0.0;
    let mut perturbed: Vec<Array> = point.to_vec();
    for (ai, arr) in point.iter().enumerate() {
        for j in 0..arr.len() {
            let orig = arr.data()[j];
            perturbed[ai].data_mut()[j] = orig + eps;
            let up = eval(&perturbed)?;
            perturbed[ai].data_mut()[j] = orig - eps;
            let down = eval(&perturbed)?;
            perturbed[ai].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic[ai].data()[j];
            if !numeric.is_finite() || !exact.is_finite() {
                return Err(Error::non_finite("grad_check gradient"));
            }
            let rel = (exact - numeric).abs() / exact.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
