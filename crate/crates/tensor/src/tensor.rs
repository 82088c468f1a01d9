//! The [`Tensor`] value type and the reverse-mode gradient tape.
//!
//! A tensor is an immutable, reference-counted node. Ops that consume tensors
//! requiring gradients record a backward closure and their inputs on the
//! output node, so the graph hanging off a loss is the tape. [`Tape`]
//! linearises it into topological order and [`Tensor::backward`] walks it in
//! reverse, accumulating into the `grad` slot of every leaf that requires one.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Maps the gradient of an op's output to gradients of its inputs.
///
/// The second argument flags which inputs need a gradient; the closure may
/// return `None` for the others.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static>;

struct GradFn {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Dense row-major `f64` tensor participating in the gradient tape.
#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool, grad_fn: Option<GradFn>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    /// Creates a constant leaf. Fails unless `product(shape) == data.len()`
    /// and every dimension is positive.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(TensorError::invalid("new", shape, "zero-sized dimension"));
        }
        if numel(shape) != data.len() {
            return Err(TensorError::invalid(
                "new",
                shape,
                format!("expected {} elements, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Tensor::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Creates a leaf that accumulates gradients.
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::new(data, shape)?.into_leaf(true))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(Vec::new(), Arc::new(vec![value]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(shape.to_vec(), Arc::new(vec![value; numel(shape)]), false, None)
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Tensor {
        let data = (0..numel(shape)).map(f).collect();
        Tensor::build(shape.to_vec(), Arc::new(data), false, None)
    }

    /// A fresh leaf sharing this tensor's storage, detached from any graph.
    pub fn into_leaf(self, requires_grad: bool) -> Tensor {
        Tensor::build(
            self.node.shape.clone(),
            self.node.data.clone(),
            requires_grad,
            None,
        )
    }

    pub fn detach(&self) -> Tensor {
        self.clone().into_leaf(false)
    }

    /// Output of a differentiable op. Recording happens only when grad mode
    /// is on and some input requires a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Tensor {
        Tensor::from_op_shared(op, shape, Arc::new(data), inputs, backward)
    }

    pub(crate) fn from_op_shared(
        op: &'static str,
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        inputs: Vec<Tensor>,
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Tensor {
        let track = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if !track {
            return Tensor::build(shape, data, false, None);
        }
        let grad_fn = GradFn {
            op,
            inputs,
            backward: Box::new(backward),
        };
        Tensor::build(shape, data, true, Some(grad_fn))
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        self.node.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(TensorError::invalid("item", self.shape(), "expected one element"));
        }
        Ok(self.node.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.op)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.node.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar into every `requires_grad` leaf.
    ///
    /// Gradients add onto whatever the leaves already hold, so calling twice
    /// without [`Tensor::zero_grad`] doubles them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::Contract(
                "backward on a tensor that is not on the tape".into(),
            ));
        }
        let tape = Tape::from_root(self);
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);

        for t in tape.nodes.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let Some(grad_fn) = t.node.grad_fn.as_ref() else {
                t.accumulate_grad(&g);
                continue;
            };
            let mask: Vec<bool> = grad_fn.inputs.iter().map(Tensor::requires_grad).collect();
            let input_grads = (grad_fn.backward)(&g, &mask);
            debug_assert_eq!(input_grads.len(), grad_fn.inputs.len(), "{}", grad_fn.op);
            for ((input, needed), ig) in grad_fn.inputs.iter().zip(&mask).zip(input_grads) {
                let (true, Some(ig)) = (*needed, ig) else {
                    continue;
                };
                debug_assert_eq!(ig.len(), input.numel(), "{}", grad_fn.op);
                match grads.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(input.id(), ig);
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

/// The recorded operations reachable from a root, in topological order:
/// every node appears after all of its inputs.
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    pub fn from_root(root: &Tensor) -> Tape {
        let mut nodes = Vec::new();
        let mut visited = HashSet::new();
        // (tensor, children already pushed)
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                nodes.push(t);
                continue;
            }
            if !t.requires_grad() || !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = t.node.grad_fn.as_ref() {
                for input in gf.inputs.iter().rev() {
                    if !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }

    /// Ids of the direct inputs of `t` as recorded on the tape.
    pub fn inputs_of(t: &Tensor) -> Vec<u64> {
        t.node
            .grad_fn
            .as_ref()
            .map(|g| g.inputs.iter().map(Tensor::id).collect())
            .unwrap_or_default()
    }
}
