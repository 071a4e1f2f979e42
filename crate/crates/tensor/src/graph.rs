//! Dynamic computation graph and reverse-mode differentiation.
//!
//! Every op's backward rule is written in terms of other [`Var`] ops, so
//! calling [`grad`] with `create_graph = true` records the backward pass
//! itself and gradients of gradients (needed by the critic's gradient
//! penalty) come out of a second call.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Restores the previous recording state on drop.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Disables graph recording on this thread until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

fn enable_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(true));
    NoGradGuard { prev }
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded op.
pub trait Backward {
    fn name(&self) -> &'static str;

    /// Gradient contributions for each parent given the gradient of the output.
    /// `None` means "no gradient flows to this parent".
    fn backward(&self, out: &Var, grad: &Var, parents: &[Var]) -> Vec<Option<Var>>;
}

struct GradFn {
    parents: Vec<Var>,
    op: Box<dyn Backward>,
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// A tensor value participating in the graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op.name()))
            .field("value", &self.0.value)
            .finish()
    }
}

impl Var {
    fn make(value: Tensor, requires_grad: bool, grad_fn: Option<GradFn>) -> Var {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad_fn,
        }))
    }

    /// Leaf that gradients are never taken with respect to.
    pub fn constant(value: Tensor) -> Var {
        Var::make(value, false, None)
    }

    /// Trainable leaf.
    pub fn leaf(value: Tensor) -> Var {
        Var::make(value, true, None)
    }

    /// Records the result of an op when recording is enabled and any parent
    /// needs a gradient; otherwise returns a constant.
    pub fn from_op(value: Tensor, parents: Vec<Var>, op: impl Backward + 'static) -> Var {
        let track = is_grad_enabled() && parents.iter().any(Var::requires_grad);
        if track {
            Var::make(
                value,
                true,
                Some(GradFn {
                    parents,
                    op: Box::new(op),
                }),
            )
        } else {
            Var::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn item(&self) -> f32 {
        self.0.value.item()
    }

    fn parents(&self) -> &[Var] {
        self.0.grad_fn.as_ref().map(|g| g.parents.as_slice()).unwrap_or(&[])
    }
}

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients are themselves differentiable.
/// Entries are `None` where `output` does not depend on the variable.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Option<Var>> {
    assert_eq!(
        output.value().numel(),
        1,
        "grad() needs a single-element output, got shape {:?}",
        output.shape()
    );
    let wrt_ids: HashSet<u64> = wrt.iter().map(|v| v.id()).collect();

    // Collect the part of the graph that requires gradients.
    let mut nodes: HashMap<u64, Var> = HashMap::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || nodes.contains_key(&v.id()) {
            continue;
        }
        for p in v.parents() {
            stack.push(p.clone());
        }
        nodes.insert(v.id(), v);
    }
    // Ids increase with creation time, so ascending id order is topological.
    let mut order: Vec<Var> = nodes.into_values().collect();
    order.sort_unstable_by_key(Var::id);

    let mut relevant: HashSet<u64> = HashSet::new();
    for v in &order {
        if wrt_ids.contains(&v.id()) || v.parents().iter().any(|p| relevant.contains(&p.id())) {
            relevant.insert(v.id());
        }
    }

    let _mode = if create_graph { enable_grad() } else { no_grad() };
    let mut grads: HashMap<u64, Var> = HashMap::new();
    let mut found: HashMap<u64, Var> = HashMap::new();
    if relevant.contains(&output.id()) {
        grads.insert(output.id(), Var::constant(Tensor::ones(output.shape())));
    }
    for v in order.iter().rev() {
        if !relevant.contains(&v.id()) {
            continue;
        }
        let Some(g) = grads.remove(&v.id()) else {
            continue;
        };
        if wrt_ids.contains(&v.id()) {
            found.insert(v.id(), g.clone());
        }
        let Some(gf) = v.0.grad_fn.as_ref() else {
            continue;
        };
        let contributions = gf.op.backward(v, &g, &gf.parents);
        debug_assert_eq!(contributions.len(), gf.parents.len(), "{}", gf.op.name());
        for (p, c) in gf.parents.iter().zip(contributions) {
            let Some(c) = c else { continue };
            if !relevant.contains(&p.id()) {
                continue;
            }
            debug_assert_eq!(c.shape(), p.shape(), "gradient shape from {}", gf.op.name());
            let acc = match grads.remove(&p.id()) {
                Some(prev) => prev.add(&c),
                None => c,
            };
            grads.insert(p.id(), acc);
        }
    }
    wrt.iter().map(|v| found.remove(&v.id())).collect()
}

/// First-order gradients as plain tensors.
pub fn grad_tensors(output: &Var, wrt: &[&Var]) -> Vec<Option<Tensor>> {
    grad(output, wrt, false)
        .into_iter()
        .map(|g| g.map(|g| g.value().clone()))
        .collect()
}
