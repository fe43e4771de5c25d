//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tensor`] is a cheap handle to a graph node holding row-major data.
//! Operations record their inputs and a backward rule as they run
//! (define-by-run); [`Tensor::backward`] on a scalar loss replays the
//! recorded graph in reverse topological order and accumulates gradients
//! into every reachable leaf that was created with `requires_grad`.
//!
//! Two element types are supported: `f32` for training and serving, and
//! `f64` for finite-difference gradient checking, where 32-bit rounding
//! would drown the comparison.
//!
//! Graphs are confined to one thread (handles are `Rc`-based and not
//! `Send`); independent threads build independent graphs.

mod ops;
pub mod serial;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type of a tensor: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64c(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("float cast")
    }

    fn to_f64c(self) -> f64 {
        self.to_f64().expect("float cast")
    }
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;
}

/// On-disk element type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

pub(crate) type BackwardFn<F> = Box<dyn Fn(&[F], &[Tensor<F>])>;

pub(crate) struct Node<F: Real> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: bool,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

thread_local! {
    static NEXT_ID: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

fn fresh_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Handle to a node of the recorded computation graph.
pub struct Tensor<F: Real>(Rc<Node<F>>);

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<F: Real> Tensor<F> {
    fn from_node(node: Node<F>) -> Self {
        Tensor(Rc::new(node))
    }

    /// Leaf tensor. `product(shape)` must equal `data.len()`.
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Leaf tensor that will receive a gradient on `backward`.
    pub fn param(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn leaf(shape: Vec<usize>, data: Vec<F>, requires_grad: bool) -> Result<Self> {
        if shape_len(&shape) != data.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {:?} implies {} values, got {}", shape, shape_len(&shape), data.len()),
            ));
        }
        Ok(Tensor::from_node(Node {
            id: fresh_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: F) -> Self {
        Tensor::leaf(vec![], vec![v], false).expect("scalar")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape_len(&shape);
        Tensor::leaf(shape, vec![F::zero(); n], false).expect("zeros")
    }

    /// Internal constructor for op outputs. The backward rule is dropped
    /// when no parent needs gradients, so evaluation-only forwards carry
    /// no closures.
    pub(crate) fn op(
        shape: Vec<usize>,
        data: Vec<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        debug_assert_eq!(shape_len(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor::from_node(Node {
            id: fresh_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
        })
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        shape_len(&self.0.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.0.shape.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none() && self.0.parents.is_empty()
    }

    pub fn data(&self) -> Ref<'_, [F]> {
        Ref::map(self.0.data.borrow(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    /// Value of a rank-0 tensor.
    pub fn item(&self) -> Result<F> {
        if !self.is_scalar() {
            return Err(Error::contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data.borrow()[0])
    }

    /// Replace the stored values. Only meaningful on leaves (optimizer
    /// updates between forward passes).
    pub fn set_data(&self, values: &[F]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::shape(
                "set_data",
                format!("tensor holds {} values, got {}", self.len(), values.len()),
            ));
        }
        self.0.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Mutate the stored values in place (optimizer updates).
    pub fn update_data(&self, f: impl FnOnce(&mut [F])) {
        f(self.0.data.borrow_mut().as_mut_slice());
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn take_grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow_mut().take()
    }

    /// Accumulate `delta` into the gradient slot. No-op on tensors that
    /// do not require gradients.
    pub(crate) fn accum_grad(&self, delta: &[F]) {
        if !self.0.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.len());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Accumulate into the gradient through a writer callback, allocating
    /// zeros on first touch. Used by scatter-style backward rules.
    pub(crate) fn accum_grad_with(&self, f: impl FnOnce(&mut [F])) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![F::zero(); self.len()]);
        }
        f(slot.as_mut().unwrap());
    }

    /// Same values, no graph history: gradients do not flow past this.
    pub fn detach(&self) -> Tensor<F> {
        Tensor::leaf(self.0.shape.clone(), self.to_vec(), false).expect("detach")
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// reachable `requires_grad` leaf; calling again without clearing
    /// accumulates again.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(Error::contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let tape = Tape::trace(self);
        tape.run(self);
        Ok(())
    }
}

/// The recorded operations reachable from a root, in topological order
/// (every node appears after all of its inputs).
pub struct Tape<F: Real> {
    order: Vec<Tensor<F>>,
}

impl<F: Real> Tape<F> {
    /// Collect the gradient-relevant subgraph under `root` by iterative
    /// depth-first post-order. Each node is visited exactly once.
    pub fn trace(root: &Tensor<F>) -> Tape<F> {
        let mut order: Vec<Tensor<F>> = Vec::new();
        if !root.requires_grad() {
            return Tape { order };
        }
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<F>, usize)> = Vec::new();
        visited.insert(root.id());
        stack.push((root.clone(), 0));
        while let Some((node, next_parent)) = stack.last_mut() {
            let parents = &node.0.parents;
            if *next_parent < parents.len() {
                let child = parents[*next_parent].clone();
                *next_parent += 1;
                if child.requires_grad() && visited.insert(child.id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node.clone());
                stack.pop();
            }
        }
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Node ids in tape order, for checking the topological invariant.
    pub fn node_ids(&self) -> Vec<usize> {
        self.order.iter().map(|t| t.id()).collect()
    }

    /// True when every node's inputs appear before the node itself.
    pub fn is_topologically_ordered(&self) -> bool {
        let pos: std::collections::HashMap<usize, usize> = self
            .order
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id(), i))
            .collect();
        self.order.iter().enumerate().all(|(i, t)| {
            t.0.parents
                .iter()
                .filter(|p| p.requires_grad())
                .all(|p| pos.get(&p.id()).is_some_and(|&j| j < i))
        })
    }

    fn run(&self, root: &Tensor<F>) {
        if self.order.is_empty() {
            return;
        }
        root.accum_grad(&vec![F::one(); root.len()]);
        for node in self.order.iter().rev() {
            let Some(g) = node.take_grad() else { continue };
            match &node.0.backward {
                Some(rule) => rule(&g, &node.0.parents),
                // Leaves keep their accumulated gradient.
                None => node.accum_grad(&g),
            }
        }
    }
}
