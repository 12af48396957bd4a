//! Recorded-operation graph and the reverse sweep.
//!
//! Every forward op appends one node holding its output value and enough
//! saved state for its backward rule. Node ids are assigned in creation
//! order, so the node list is already a topological order and the reverse
//! sweep is a single backwards pass over it.

use std::cell::{Ref, RefCell};

use crate::{AutodiffError, Real, Tensor};

pub(crate) enum Op<T> {
    Leaf,
    /// `a: [.., k]` flattened to rows, `b: [k, n]`.
    MatMul {
        a: usize,
        b: usize,
    },
    /// `a: [g, m, k]`, `b: [g, k, n]` (or `[g, n, k]` when `trans_b`).
    BatchMatMul {
        a: usize,
        b: usize,
        trans_b: bool,
    },
    Transpose {
        a: usize,
    },
    /// `b`'s shape is a suffix of `a`'s shape.
    AddBroadcast {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: T,
    },
    Reshape {
        a: usize,
    },
    Concat {
        parts: Vec<usize>,
    },
    Softmax {
        a: usize,
    },
    Normalize(NormState<T>),
    Gelu {
        a: usize,
    },
    Mean {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum {
        a: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
}

pub(crate) struct NormState<T> {
    pub x: usize,
    pub gain: Option<usize>,
    pub bias: Option<usize>,
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
    pub param: bool,
}

/// Records forward operations so gradients can be pulled back from a scalar.
///
/// A tape is built for one forward/backward pass and then dropped.
pub struct Tape<T: Real> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    /// Trainable leaf: receives a gradient from [`Var::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Node { value, op: Op::Leaf, needs_grad: true, param: true })
    }

    /// Non-trainable leaf (inputs, fixed tables).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Node { value, op: Op::Leaf, needs_grad: false, param: false })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenates along the last axis.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>, AutodiffError> {
        let Some(first) = parts.first() else {
            return Err(AutodiffError::ShapeMismatch { op: "concat", detail: "no inputs".into() });
        };
        let nodes = self.nodes.borrow();
        let lead = {
            let s = nodes[first.id].value.shape();
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = nodes[p.id].value.shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    detail: format!("leading dims {:?} vs {:?}", lead, s),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&nodes[p.id].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = parts.iter().any(|p| nodes[p.id].needs_grad);
        drop(nodes);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push_op(value, Op::Concat { parts: parts.iter().map(|p| p.id).collect() }, needs))
    }

    pub(crate) fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn push_op(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        self.push_node(Node { value, op, needs_grad, param: false })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Borrow of the node's value. Do not hold it across further ops.
    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Pulls gradients back from this scalar to every parameter leaf.
    pub fn backward(&self) -> Result<Gradients<T>, AutodiffError> {
        let nodes = self.tape.nodes.borrow();
        let loss_shape = nodes[self.id].value.shape();
        if nodes[self.id].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: loss_shape.to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(Tensor::ones(loss_shape));
        let mut kept: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();

        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            if node.param {
                kept[id] = Some(grad);
                continue;
            }
            crate::ops::backprop(&nodes, id, &grad, &mut grads);
        }
        Ok(Gradients { grads: kept })
    }
}

/// Accumulated gradients for the parameter leaves of one tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the leaf is not a parameter or the loss does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }

    /// Number of leaves holding a gradient.
    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
