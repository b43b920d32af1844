//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every op that consumes a tensor requiring gradients records a node holding
//! its inputs and a backward closure. [`Tensor::backward`] walks the graph in
//! reverse topological order and deposits gradients on the leaves created
//! with [`Tensor::param`].

mod conv;
mod nn;
mod ops;
mod spectral;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{shape_err, Result};

pub use conv::PadMode;
pub use nn::{grouped_attention, AttentionGroups};
pub use spectral::SpectralState;

/// Backward closure: receives the output gradient, the op inputs and the op
/// output values; returns one optional gradient per input.
pub(crate) type BackwardFn =
    dyn Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync;

struct Node {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording backward nodes on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(shape_err!("non-positive extent in shape {shape:?}"));
    }
    if numel_of(shape) != len {
        return Err(shape_err!(
            "shape {shape:?} implies {} values, got {len}",
            numel_of(shape)
        ));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant tensor (never receives gradients).
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape, data.len())?;
        Ok(Self::build(shape, data, false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape, data.len())?;
        Ok(Self::build(shape, data, true, None))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel_of(&shape);
        assert!(n > 0, "non-positive extent in shape {shape:?}");
        Self::build(shape, vec![value; n], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Records an op output. Falls back to a constant when no input needs
    /// gradients or recording is disabled.
    pub(crate) fn from_op<F>(
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        name: &'static str,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        debug_assert_eq!(numel_of(&shape), data.len(), "{name}: shape/data mismatch");
        if grad_enabled() && inputs.iter().any(Tensor::requires_grad) {
            let node = Node {
                name,
                inputs,
                backward: Box::new(backward),
            };
            Self::build(shape, data, true, Some(node))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.name)
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Constant copy of the values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Inner {
        Arc::as_ptr(&self.0)
    }

    /// Nodes reachable from `self`, inputs before consumers.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for inp in node.inputs.iter().rev() {
                    if inp.requires_grad() && !seen.contains(&inp.key()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Back-propagates from a scalar loss, accumulating into leaf gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Inner, Vec<f64>> = HashMap::with_capacity(order.len());
        pending.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let input_grads = (node.backward)(&g, &node.inputs, &t.0.data);
                    debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.name);
                    for (inp, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), inp.numel(), "{}: grad size", node.name);
                        match pending.get_mut(&inp.key()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(inp.key(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data[..8]", &preview)
            .finish()
    }
}

/// Splits a shape into (batch, c, h, w) for ops over the trailing three axes.
pub(crate) fn split_chw(shape: &[usize], op: &str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(shape_err!("{op}: expected [..., C, H, W], got {shape:?}"));
    }
    let n = shape.len();
    let batch = numel_of(&shape[..n - 3]);
    Ok((batch, shape[n - 3], shape[n - 2], shape[n - 1]))
}

/// Splits a shape into (outer, h, w) for ops over the trailing two axes.
pub(crate) fn split_hw(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err!("{op}: expected [..., H, W], got {shape:?}"));
    }
    let n = shape.len();
    Ok((numel_of(&shape[..n - 2]), shape[n - 2], shape[n - 1]))
}

pub mod gradcheck;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let x = Tensor::param(vec![3], vec![1.0, -2.0, 5.0]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        x.square().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(x.scale(2.0).backward().is_err());
    }

    #[test]
    fn shared_subexpression_visited_once() {
        // y = x*x used twice: d/dx (y + y) = 4x
        let x = Tensor::param(vec![1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.add(&y).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }
}
