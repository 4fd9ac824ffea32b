//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every backward rule is itself written in terms of graph operations, so
//! calling [`grad`] with `create_graph = true` yields gradients that can be
//! differentiated again. The discriminator's gradient penalty relies on this.
//!
//! Node ids grow monotonically with creation, so parents always carry smaller
//! ids than their children and sorting by id is a topological order.

mod ops;
mod tensor;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use tensor::{broadcast_shape, numel, ConvGeom, Real, Tensor};

use ops::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    op: Option<Op<T>>,
    requires_grad: bool,
}

/// A tensor participating in the graph.
pub struct Var<T: Real>(Arc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Arc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    fn make(value: Tensor<T>, op: Option<Op<T>>, requires_grad: bool) -> Self {
        Var(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            op,
            requires_grad,
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, None, false)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::make(value, None, true)
    }

    pub fn scalar(value: T) -> Self {
        Self::constant(Tensor::scalar(value))
    }

    pub(crate) fn from_op(value: Tensor<T>, op: Op<T>) -> Self {
        let rg = grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        if rg {
            Self::make(value, Some(op), true)
        } else {
            Self::make(value, None, false)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> T {
        self.0.value.item()
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// Variables that `output` does not depend on get a zero gradient. With
/// `create_graph`, the returned gradients are themselves differentiable.
pub fn grad<T: Real>(output: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Vec<Var<T>> {
    assert_eq!(output.value().numel(), 1, "grad() needs a scalar output");
    let _guard = if create_graph { None } else { Some(no_grad()) };

    // Collect the subgraph reachable from `output` through differentiable nodes.
    let mut nodes: Vec<Var<T>> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || !seen.insert(v.id()) {
            continue;
        }
        if let Some(op) = &v.0.op {
            for p in op.parents() {
                stack.push(p.clone());
            }
        }
        nodes.push(v);
    }
    nodes.sort_by_key(|v| v.id());

    // A node is relevant when some requested variable lies beneath it.
    let targets: HashSet<u64> = wrt.iter().map(|v| v.id()).collect();
    let mut relevant: HashSet<u64> = HashSet::new();
    for v in &nodes {
        let hit = targets.contains(&v.id())
            || v.0
                .op
                .as_ref()
                .is_some_and(|op| op.parents().iter().any(|p| relevant.contains(&p.id())));
        if hit {
            relevant.insert(v.id());
        }
    }

    let mut grads: HashMap<u64, Var<T>> = HashMap::new();
    if relevant.contains(&output.id()) {
        grads.insert(
            output.id(),
            Var::constant(Tensor::full(output.shape().to_vec(), T::one())),
        );
    }
    for v in nodes.iter().rev() {
        if !relevant.contains(&v.id()) {
            continue;
        }
        let Some(g) = grads.get(&v.id()).cloned() else {
            continue;
        };
        let Some(op) = &v.0.op else {
            continue;
        };
        let needs = |p: &Var<T>| relevant.contains(&p.id());
        for (parent, pg) in op.backward(v, &g, &needs) {
            debug_assert_eq!(parent.shape(), pg.shape(), "gradient shape mismatch");
            let acc = match grads.remove(&parent.id()) {
                Some(prev) => prev.add(&pg),
                None => pg,
            };
            grads.insert(parent.id(), acc);
        }
        if !targets.contains(&v.id()) {
            grads.remove(&v.id());
        }
    }

    wrt.iter()
        .map(|v| {
            grads
                .get(&v.id())
                .cloned()
                .unwrap_or_else(|| Var::constant(Tensor::zeros(v.shape().to_vec())))
        })
        .collect()
}
