//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its output value and enough state to propagate gradients backward.
//! Parameters are borrowed from a [`ParamStore`] rather than copied, so a
//! frozen store can serve many read-only inference tapes at once.
//!
//! ```
//! use numkit::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(&[2], vec![3.0, -1.0]).unwrap(), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.grad(x).unwrap(), &[6.0, -2.0]);
//! ```

use std::collections::HashMap;

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) enum Value {
    Owned(Tensor),
    Param(ParamId),
}

pub(crate) struct Node {
    pub(crate) value: Value,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

pub(crate) enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Concat {
        parts: Vec<(Var, usize)>,
    },
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    Attention(Box<crate::ops::AttentionCache>),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    RowSum(Var),
    Bce {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        total: f64,
    },
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    pub(crate) nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape with no parameter store; only leaves and constants.
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    /// Inference tape: values are computed but no backward state is kept.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push_raw(Value::Owned(value), Op::Leaf, rg)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Registers a parameter of the borrowed store; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        assert!(id.0 < store.len(), "parameter id out of range");
        let v = self.push_raw(Value::Param(id), Op::Param, self.grad_enabled);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Value, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op output; rejects non-finite values.
    pub(crate) fn push(
        &mut self,
        name: &'static str,
        out: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if !out.is_finite() {
            return Err(NumError::NonFiniteValue { op: name });
        }
        let rg = self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v));
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push_raw(Value::Owned(out), op, rg))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(NumError::NonScalarLoss(n));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(Var(i), &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = self
            .param_vars
            .iter()
            .filter(|(_, v)| self.requires_grad(**v))
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        params.sort();
        for &(_, v) in &params {
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![0.0; self.value(v).len()]);
            }
        }
        Ok(Gradients { grads, params })
    }

    /// Runs `f` on the gradient buffer of `v`, allocating zeros on first use.
    pub(crate) fn acc<F: FnOnce(&mut [f64])>(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: F) {
        if !self.requires_grad(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.value(v).len()]);
        }
        f(slot.as_mut().expect("just filled"));
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a node, if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for every parameter registered on the tape (zeros if unreached).
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .map(move |&(id, v)| (id, self.grads[v.0].as_deref().expect("filled in backward")))
    }
}
