//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Tape`] owns every intermediate value of a forward pass. Operations
//! (in [`crate::ops`]) push a value plus a backward closure; [`Tape::backward`]
//! replays the closures in reverse, accumulating into a [`GradStore`].
//! Iterated algorithms (Newton-Schulz, the excitation chains) get their
//! gradients purely by this replay; no op has a hand-derived composite rule.
//!
//! A tape is confined to one logical thread and is rebuilt per training step.

use std::cell::RefCell;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

/// Closure contract: `(values, grad_of_output, grads)`; must only add into
/// grads of this node's parents, and should skip parents `grads` does not
/// want.
pub(crate) type BackFn = Box<dyn Fn(&[Tensor], &Tensor, &mut GradStore)>;

#[derive(Clone, Copy)]
struct Meta {
    needs_grad: bool,
    is_leaf: bool,
}

#[derive(Default)]
struct TapeInner {
    values: Vec<Tensor>,
    metas: Vec<Meta>,
    backs: Vec<Option<BackFn>>,
}

#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Differentiable leaf (a parameter or a gradcheck input).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_node(value, Meta { needs_grad: true, is_leaf: true }, None)
    }

    /// Non-differentiable input (images, targets, fixed constants).
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_node(value, Meta { needs_grad: false, is_leaf: true }, None)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub(crate) fn push(&self, value: Tensor, needs_grad: bool, back: BackFn) -> Var {
        // A node with no gradient path needs no backward closure.
        let back = if needs_grad { Some(back) } else { None };
        self.push_node(value, Meta { needs_grad, is_leaf: false }, back)
    }

    fn push_node(&self, value: Tensor, meta: Meta, back: Option<BackFn>) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.metas.push(meta);
        inner.backs.push(back);
        Var { id: inner.values.len() - 1 }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().values[v.id].dims().to_vec()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.inner.borrow().metas[v.id].needs_grad
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.inner.borrow().values[v.id].clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.inner.borrow().values[v.id])
    }

    pub(crate) fn with_two<R>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let inner = self.inner.borrow();
        f(&inner.values[a.id], &inner.values[b.id])
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// `needs_grad` leaf; leaves the loss never touched get zero tensors.
    pub fn backward(&self, loss: Var) -> Result<GradStore> {
        let inner = self.inner.borrow();
        if inner.values[loss.id].len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got dims {:?}", inner.values[loss.id].dims()),
            ));
        }
        let mut store = GradStore {
            grads: (0..inner.values.len()).map(|_| None).collect(),
            wants: inner.metas.iter().map(|m| m.needs_grad).collect(),
        };
        if inner.metas[loss.id].needs_grad {
            store.grads[loss.id] = Some(Tensor::full(inner.values[loss.id].dims(), 1.0));
            for id in (0..=loss.id).rev() {
                let Some(back) = &inner.backs[id] else { continue };
                let Some(grad) = store.grads[id].take() else { continue };
                back(&inner.values, &grad, &mut store);
            }
        }
        // Untouched differentiable leaves report zeros.
        for (id, meta) in inner.metas.iter().enumerate() {
            if meta.is_leaf && meta.needs_grad && store.grads[id].is_none() {
                store.grads[id] = Some(Tensor::zeros(inner.values[id].dims()));
            }
        }
        Ok(store)
    }
}

pub struct GradStore {
    grads: Vec<Option<Tensor>>,
    wants: Vec<bool>,
}

impl GradStore {
    /// Whether anything downstream consumes this var's gradient; backward
    /// closures use it to skip dead branches.
    pub fn wants(&self, v: Var) -> bool {
        self.wants[v.id]
    }

    pub(crate) fn wants_id(&self, id: usize) -> bool {
        self.wants[id]
    }

    /// Accumulation buffer for a parent, zero-initialized on first touch.
    pub(crate) fn accum(&mut self, id: usize, dims: &[usize]) -> &mut Tensor {
        self.grads[id].get_or_insert_with(|| Tensor::zeros(dims))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }
}
