//! Reverse-mode automatic differentiation over 2D arrays.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s; calling
//! [`Tape::backward`] on a 1x1 loss node replays the tape in reverse and
//! accumulates gradients. Leaves created with [`Tape::param`] are
//! deduplicated by data pointer so a parameter used several times in one
//! forward pass receives a single accumulated gradient, retrievable with
//! [`Grads::wrt`].
//!
//! The op set is deliberately small; anything differentiable is composed
//! from it. Matrix products dispatch to `ndarray`'s fast kernels for
//! `f32`/`f64`. Tapes are single-threaded (`Rc` internally); parallel code
//! builds one tape per work item.

pub mod check;
mod ops;

pub use ops::{gelu, kl_standard_normal, l1, mse};

#[cfg(test)]
mod tests;

use crate::scalar::Scalar;
use ndarray::Array2;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

type BackFn<S> = Box<dyn Fn(&Array2<S>) -> Array2<S>>;

struct Node<S: Scalar> {
    value: Rc<Array2<S>>,
    /// (parent index, gradient router): maps the output gradient to this
    /// parent's gradient contribution.
    parents: Vec<(usize, BackFn<S>)>,
}

struct TapeInner<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    /// Data pointer of a parameter array -> node index.
    params: RefCell<HashMap<usize, usize>>,
}

/// A recording tape. Cheap to clone (shared handle).
pub struct Tape<S: Scalar> {
    inner: Rc<TapeInner<S>>,
}

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
                params: RefCell::new(HashMap::new()),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<S>, parents: Vec<(usize, BackFn<S>)>) -> Var<S> {
        let mut nodes = self.inner.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
        });
        Var {
            tape: self.clone(),
            idx,
        }
    }

    /// A leaf that never needs a gradient.
    pub fn constant(&self, value: Array2<S>) -> Var<S> {
        self.push(value, Vec::new())
    }

    /// A 1x1 constant.
    pub fn scalar(&self, v: S) -> Var<S> {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// A leaf registered as a parameter. Calls with the same array (same
    /// allocation) return the same node, so gradients accumulate.
    pub fn param(&self, value: &Array2<S>) -> Var<S> {
        let key = value.as_ptr() as usize;
        if let Some(&idx) = self.inner.params.borrow().get(&key) {
            return Var {
                tape: self.clone(),
                idx,
            };
        }
        let var = self.push(value.clone(), Vec::new());
        self.inner.params.borrow_mut().insert(key, var.idx);
        var
    }

    /// Reverse sweep from a 1x1 loss node. Panics if `loss` is not 1x1 or
    /// belongs to a different tape.
    pub fn backward(&self, loss: &Var<S>) -> Grads<S> {
        assert!(
            Rc::ptr_eq(&self.inner, &loss.tape.inner),
            "loss var belongs to a different tape"
        );
        let nodes = self.inner.nodes.borrow();
        let loss_node = &nodes[loss.idx];
        assert_eq!(loss_node.value.dim(), (1, 1), "backward needs a 1x1 loss");

        let mut grads: Vec<Option<Array2<S>>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(Array2::from_elem((1, 1), S::one()));

        for idx in (0..=loss.idx).rev() {
            let grad = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            for (parent, back) in &nodes[idx].parents {
                let contribution = back(&grad);
                match &mut grads[*parent] {
                    Some(acc) => *acc += &contribution,
                    slot => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(grad);
        }

        Grads {
            node_grads: grads,
            params: self.inner.params.borrow().clone(),
        }
    }
}

/// Gradients produced by one backward sweep.
pub struct Grads<S: Scalar> {
    node_grads: Vec<Option<Array2<S>>>,
    params: HashMap<usize, usize>,
}

impl<S: Scalar> Grads<S> {
    /// Gradient with respect to a parameter array lifted via [`Tape::param`].
    /// Returns `None` if the parameter did not influence the loss.
    pub fn wrt(&self, param: &Array2<S>) -> Option<&Array2<S>> {
        let key = param.as_ptr() as usize;
        let idx = *self.params.get(&key)?;
        self.node_grads[idx].as_ref()
    }

    /// Gradient of an arbitrary tape node.
    pub fn of(&self, var: &Var<S>) -> Option<&Array2<S>> {
        self.node_grads[var.idx].as_ref()
    }
}

/// A value on the tape.
pub struct Var<S: Scalar> {
    tape: Tape<S>,
    idx: usize,
}

impl<S: Scalar> Clone for Var<S> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            idx: self.idx,
        }
    }
}

impl<S: Scalar> Var<S> {
    pub fn tape(&self) -> &Tape<S> {
        &self.tape
    }

    pub fn value(&self) -> Rc<Array2<S>> {
        Rc::clone(&self.tape.inner.nodes.borrow()[self.idx].value)
    }

    pub fn rows(&self) -> usize {
        self.value().nrows()
    }

    pub fn cols(&self) -> usize {
        self.value().ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.value().dim()
    }

    /// The single element of a 1x1 var.
    pub fn item(&self) -> S {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() needs a 1x1 var");
        v[(0, 0)]
    }

    pub(crate) fn push_unary(
        &self,
        value: Array2<S>,
        back: impl Fn(&Array2<S>) -> Array2<S> + 'static,
    ) -> Var<S> {
        self.tape
            .push(value, vec![(self.idx, Box::new(back) as BackFn<S>)])
    }

    pub(crate) fn push_binary(
        &self,
        other: &Var<S>,
        value: Array2<S>,
        back_a: impl Fn(&Array2<S>) -> Array2<S> + 'static,
        back_b: impl Fn(&Array2<S>) -> Array2<S> + 'static,
    ) -> Var<S> {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars belong to different tapes"
        );
        self.tape.push(
            value,
            vec![
                (self.idx, Box::new(back_a) as BackFn<S>),
                (other.idx, Box::new(back_b) as BackFn<S>),
            ],
        )
    }

    pub(crate) fn push_nary(
        &self,
        parents: Vec<(usize, BackFn<S>)>,
        value: Array2<S>,
    ) -> Var<S> {
        self.tape.push(value, parents)
    }

    pub(crate) fn index(&self) -> usize {
        self.idx
    }
}
