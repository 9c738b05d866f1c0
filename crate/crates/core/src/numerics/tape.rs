//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Tape`] records every operation applied to [`Var`]s. Parameters enter
//! the tape through [`Tape::param`]; frozen parameters become constant leaves
//! and never receive a gradient; their values are captured on first use, so
//! a tape records exactly one forward pass. [`Tape::backward`] walks the tape in reverse
//! and returns a [`Gradients`] table.
//!
//! Determinism: all kernels are single-threaded and visit elements in a fixed
//! order, so a forward/backward pass is bit-reproducible for fixed inputs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{Array, ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Gradient rule of one recorded operation: given the output gradient, the
/// parent values and the output value, return one optional gradient per
/// parent. `None` means "no contribution".
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Array<T>, &[Rc<Array<T>>], &Array<T>) -> Vec<Option<Array<T>>>>;

struct Node<T> {
    value: Rc<Array<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// A leaf that gradients flow into when `requires_grad` is set.
    pub fn leaf(&self, value: Array<T>, requires_grad: bool) -> Var<'_, T> {
        let id = self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Array::scalar(v))
    }

    /// Brings a parameter onto the tape. Repeated calls for the same id
    /// return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let var = self.leaf(p.value.clone(), p.trainable);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    pub(crate) fn op(&self, value: Array<T>, parents: &[Var<'_, T>], backward: BackwardFn<T>) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let id = self.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Array<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward called on non-scalar of shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Array::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_vals: Vec<Rc<Array<T>>> = node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
            let contributions = backward(&g, &parent_vals, &node.value);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (&p, contrib) in node.parents.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(c.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
            // Keep gradients of leaves only; intermediate buffers are
            // dropped as soon as they are consumed.
            if !node.parents.is_empty() {
                grads[id] = None;
            } else {
                grads[id] = Some(g);
            }
        }
        let params = self
            .params
            .borrow()
            .iter()
            .filter(|(_, &node)| nodes[node].requires_grad)
            .map(|(&pid, &node)| (pid, node))
            .collect();
        Ok(Gradients { by_node: grads, params })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    by_node: Vec<Option<Array<T>>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf variable (parameters and `leaf(.., true)` inputs).
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Array<T>> {
        self.by_node.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Array<T>> {
        self.params
            .get(&id)
            .and_then(|&node| self.by_node.get(node))
            .and_then(|g| g.as_ref())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    /// Writes gradients into the parameters' grad buffers. Trainable
    /// parameters that did not take part in the pass get a zero buffer;
    /// frozen ones keep `None`.
    pub fn store_into(&self, store: &mut ParamStore<T>) {
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            p.grad = if p.trainable {
                Some(self.param(id).cloned().unwrap_or_else(|| Array::zeros(p.value.shape())))
            } else {
                None
            };
        }
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> Rc<Array<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}
