//! Shaped `f64` tensors with reverse-mode differentiation.
//!
//! Tensors form an implicit tape: each operation records its parents and a
//! backward closure. [`Tensor::backward`] runs reverse accumulation from a
//! scalar root, summing contributions into every `requires_grad` leaf.
//! [`grad_check`] verifies any scalar-valued tensor function against
//! central differences.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use thiserror::Error;

mod conv;
mod ops;

pub use conv::UpsampleMode;
pub use ops::OFFSETS;

/// Fault-injection hooks for exercising gradient-check failure paths.
/// Not for production use.
#[doc(hidden)]
pub mod fault {
    use std::cell::Cell;

    thread_local! {
        static BROKEN_TANH: Cell<bool> = const { Cell::new(false) };
    }

    /// When enabled, the tanh backward pass is deliberately scaled wrong.
    pub fn set_broken_tanh(enabled: bool) {
        BROKEN_TANH.with(|f| f.set(enabled));
    }

    pub(crate) fn tanh_broken() -> bool {
        BROKEN_TANH.with(Cell::get)
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({lhs:?} vs {rhs:?})")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

fn next_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(1);
    COUNTER.fetch_add(1, Ordering::Relaxed)
}

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Run a closure without recording any compute graph; forwards inside are
/// value-identical to recorded ones.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    NO_GRAD.with(|flag| {
        let prev = flag.replace(true);
        let out = f();
        flag.set(prev);
        out
    })
}

pub(crate) type BackwardFn = Box<dyn Fn(&Inner, &[f64])>;

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward_fn: Option<BackwardFn>,
    /// Smallest |preactivation| seen at any kinked op (relu, abs) in the
    /// subgraph; +inf when the graph is kink-free. Used by gradient-check
    /// harnesses to resample points too close to a non-differentiability.
    kink_margin: f64,
}

/// A shaped 64-bit tensor participating in reverse-mode differentiation.
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn from_parts(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward_fn: Option<BackwardFn>,
        own_kink: f64,
    ) -> Tensor {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        let parent_kink = parents
            .iter()
            .map(|p| p.inner.kink_margin)
            .fold(f64::INFINITY, f64::min);
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                values: RefCell::new(values),
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward_fn,
                kink_margin: parent_kink.min(own_kink),
            }),
        }
    }

    /// A constant (non-trainable) tensor.
    pub fn constant(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "value count must equal the product of the shape"
        );
        Tensor::from_parts(shape.to_vec(), values, false, Vec::new(), None, f64::INFINITY)
    }

    /// A trainable leaf: participates in gradient accumulation.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        Tensor::from_parts(shape.to_vec(), values, true, Vec::new(), None, f64::INFINITY)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(&[], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(shape, vec![0.0; shape.iter().product()])
    }

    /// Record a new graph node. Falls back to a constant when gradients are
    /// disabled or no parent participates in differentiation.
    pub(crate) fn new_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward_fn: BackwardFn,
        own_kink: f64,
    ) -> Tensor {
        let record =
            !NO_GRAD.with(Cell::get) && parents.iter().any(|p| p.participates_in_grad());
        if record {
            Tensor::from_parts(shape, values, false, parents, Some(backward_fn), own_kink)
        } else {
            let parent_kink = parents
                .iter()
                .map(|p| p.inner.kink_margin)
                .fold(f64::INFINITY, f64::min);
            Tensor::from_parts(shape, values, false, Vec::new(), None, parent_kink.min(own_kink))
        }
    }

    fn participates_in_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.backward_fn.is_some()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Copy of the current values.
    pub fn values(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// Borrow values without copying.
    pub fn with_values<T>(&self, f: impl FnOnce(&[f64]) -> T) -> T {
        f(&self.inner.values.borrow())
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        let v = self.inner.values.borrow();
        assert_eq!(v.len(), 1, "item() requires a scalar tensor");
        v[0]
    }

    /// Overwrite values in place (same length). Used by the optimizer and by
    /// finite-difference probes; only leaves should be mutated.
    pub fn set_values(&self, new: &[f64]) {
        let mut v = self.inner.values.borrow_mut();
        assert_eq!(v.len(), new.len());
        v.copy_from_slice(new);
    }

    pub fn nudge_value(&self, index: usize, delta: f64) {
        self.inner.values.borrow_mut()[index] += delta;
    }

    /// Accumulated gradient of a `requires_grad` leaf, if any backward pass
    /// has reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place SGD update `w -= lr * (g + wd * w)`; gradient is cleared.
    pub fn apply_sgd(&self, lr: f64, weight_decay: f64) {
        let grad = self.inner.grad.borrow_mut().take();
        if let Some(g) = grad {
            let mut v = self.inner.values.borrow_mut();
            for (w, gi) in v.iter_mut().zip(&g) {
                *w -= lr * (gi + weight_decay * *w);
            }
        }
    }

    /// A leaf sharing this tensor's current values but cut off from the
    /// graph (no gradient flows through it).
    pub fn detach(&self) -> Tensor {
        Tensor::constant(&self.inner.shape, self.values())
    }

    /// Smallest |preactivation| at any relu/abs in the subgraph.
    pub fn kink_margin(&self) -> f64 {
        self.inner.kink_margin
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        if !self.participates_in_grad() {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse accumulation from a scalar root. Every `requires_grad` leaf
    /// reachable from the root receives (accumulates) its gradient.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarRoot(self.inner.shape.clone()));
        }
        let order = topo_order(self);
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            if node.inner.backward_fn.is_none() {
                continue;
            }
            // take the gradient: interior buffers are transient
            let grad = node.inner.grad.borrow_mut().take();
            if let Some(g) = grad {
                let bw = node.inner.backward_fn.as_ref().unwrap();
                bw(&node.inner, &g);
            }
        }
        Ok(())
    }
}

/// Post-order over the sub-DAG that participates in differentiation;
/// iterating it in reverse visits every node before its parents.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    visited.insert(root.inner.id);
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    while let Some((node, next_parent)) = stack.pop() {
        if next_parent < node.inner.parents.len() {
            let parent = node.inner.parents[next_parent].clone();
            stack.push((node, next_parent + 1));
            if parent.participates_in_grad() && visited.insert(parent.inner.id) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

/// Max relative error between analytic and central-difference gradients of
/// a scalar function, over every coordinate of `inputs`.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for t in inputs {
        assert!(t.requires_grad(), "grad_check inputs must require gradients");
        t.zero_grad();
    }
    let out = f(inputs)?;
    if out.len() != 1 {
        return Err(TensorError::NonScalarRoot(out.shape().to_vec()));
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut max_rel: f64 = 0.0;
    for (ti, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            t.nudge_value(i, eps);
            let plus = no_grad(|| f(inputs))?.item();
            t.nudge_value(i, -2.0 * eps);
            let minus = no_grad(|| f(inputs))?.item();
            t.nudge_value(i, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (analytic[ti][i] - numeric).abs() / numeric.abs().max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        t.zero_grad();
    }
    Ok(max_rel)
}

pub const GRAD_CHECK_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_all_ones() {
        let x = Tensor::param(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let s = x.sum();
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_of_square_at_three_is_six() {
        let x = Tensor::param(&[], vec![3.0]);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn reused_leaf_accumulates_contributions() {
        let x = Tensor::param(&[], vec![5.0]);
        let y = x.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = x.relu();
        assert!(matches!(y.backward(), Err(TensorError::NonScalarRoot(_))));
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let x = Tensor::param(&[], vec![2.0]);
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_graph_recording() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]);
        let y = no_grad(|| x.relu().sum());
        assert!(y.backward().is_err() || x.grad().is_none());
    }

    #[test]
    fn grad_check_on_square_is_tight() {
        let x = Tensor::param(&[], vec![1.0]);
        let err = grad_check(|xs| xs[0].mul(&xs[0]), &[x], GRAD_CHECK_EPS).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn grad_check_on_linear_map_is_machine_precision() {
        let x = Tensor::param(&[4], vec![0.3, -0.7, 1.9, 0.1]);
        let err = grad_check(|xs| Ok(xs[0].mul_scalar(3.5).sum()), &[x], 1e-3).unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let x = Tensor::param(&[], vec![2.0]);
        let d = x.mul(&x).unwrap().detach();
        let y = d.mul_scalar(3.0).sum();
        y.backward().unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn sgd_update_matches_hand_values() {
        let w = Tensor::param(&[], vec![1.0]);
        w.accumulate_grad(&[1.0]);
        w.apply_sgd(0.1, 0.0);
        assert!((w.item() - 0.9).abs() < 1e-15);

        let w2 = Tensor::param(&[], vec![1.0]);
        w2.accumulate_grad(&[0.0]);
        w2.apply_sgd(0.1, 0.5);
        assert!((w2.item() - 0.95).abs() < 1e-15);
    }
}
