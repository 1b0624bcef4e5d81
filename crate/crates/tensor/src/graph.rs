//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every differentiable operation whose inputs depend on
//! a leaf created with [`Graph::leaf`]. Values live in [`Var`]s; the tape only
//! holds what backward closures capture. With recording disabled nothing is
//! stored and intermediate values are freed as soon as their `Var` drops.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

type Backward<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    parents: Vec<Option<usize>>,
    backward: Option<Backward<T>>,
}

/// A value flowing through the graph.
#[derive(Clone)]
pub struct Var<T: Real = f32> {
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    /// Untracked value; gradients never flow into it.
    pub fn constant(t: Tensor<T>) -> Self {
        Self {
            id: None,
            value: Rc::new(t),
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn id(&self) -> Option<usize> {
        self.id
    }

    /// Copy of the value, detached from the tape.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({:?}, {:?})", self.id, self.value)
    }
}

pub struct Graph<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// A graph that records nothing; every op returns a constant.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub(crate) fn checks_finite(&self) -> bool {
        self.check_finite
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input. Untracked when the graph is not recording.
    pub fn leaf(&self, t: Tensor<T>) -> Var<T> {
        if !self.recording {
            return Var::constant(t);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            id: Some(nodes.len() - 1),
            value: Rc::new(t),
        }
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<T> {
        Var::constant(t)
    }

    /// Register an op output. `backward` maps the output gradient to one
    /// optional gradient per entry of `parents`, in order.
    pub(crate) fn record<F>(
        &self,
        op: &'static str,
        value: Rc<Tensor<T>>,
        parents: &[&Var<T>],
        backward: F,
    ) -> Result<Var<T>>
    where
        F: Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if self.check_finite && !value.all_finite() && parents.iter().all(|p| p.value.all_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        if !self.recording || parents.iter().all(|p| p.id.is_none()) {
            return Ok(Var { id: None, value });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: parents.iter().map(|p| p.id).collect(),
            backward: Some(Box::new(backward)),
        });
        Ok(Var {
            id: Some(nodes.len() - 1),
            value,
        })
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                detail: format!("loss must have one element, got shape {:?}", loss.shape()),
            });
        }
        let mut out = Gradients {
            grads: HashMap::new(),
        };
        let Some(root) = loss.id else {
            return Ok(out);
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(loss.shape()));
        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                if let Some(g) = grads[id].take() {
                    out.grads.insert(id, g);
                }
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = bw(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (pid, pg) in node.parents.iter().zip(parent_grads) {
                let (Some(pid), Some(pg)) = (pid, pg) else {
                    continue;
                };
                match &mut grads[*pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(out)
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.id.and_then(|id| self.grads.get(&id))
    }

    /// Gradient of `v`, zeros when it did not influence the loss.
    pub fn get_or_zero(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        v.id.and_then(|id| self.grads.remove(&id))
    }
}
