//! The recording tape and the `Var` handle.
//!
//! Every op appends one node holding its forward value, the ids of its
//! parents and a closure that maps the output gradient onto parent gradients.
//! The tape is append-only, so several backward passes can be run from
//! different roots over the same recording (the trainer relies on this to
//! share one generator forward between the discriminator and generator
//! phases).

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

pub type Tensor = ArrayD<f64>;

/// Inputs handed to a node's backward closure.
pub struct BackwardCtx<'a> {
    pub grad: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: &'a [Rc<Tensor>],
    /// Which parents actually need a gradient.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that receives a gradient (a trainable parameter or an input
    /// being differentiated).
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub(crate) fn op<'t>(
        &'t self,
        parents: &[Var<'t>],
        value: Tensor,
        backward: BackwardFn,
    ) -> Var<'t> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(backward) } else { None },
        })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Grads {
        let nodes = self.nodes.borrow();
        assert!(
            nodes[root.id].value.len() == 1,
            "backward root must be a scalar, got shape {:?}",
            nodes[root.id].value.shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(ArrayD::from_elem(nodes[root.id].value.raw_dim(), 1.0));
        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let inputs: Vec<Rc<Tensor>> =
                    node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let ctx = BackwardCtx {
                    grad: &grad,
                    output: &node.value,
                    inputs: &inputs,
                    needs: &needs,
                };
                let parent_grads = backward(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.shape(), nodes[p].value.shape(), "grad shape for node {p}");
                    match &mut grads[p] {
                        Some(acc) => *acc += &g,
                        slot => *slot = Some(g),
                    }
                }
            }
            // leaves keep their gradient
            if node.parents.is_empty() && node.requires_grad {
                grads[id] = Some(grad);
            }
        }
        Grads { grads }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on non-scalar of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        let value = (*self.value()).clone();
        self.tape.constant(value)
    }
}

/// Gradients of one backward pass, indexed by `Var`.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(var.value().raw_dim()),
        }
    }
}
