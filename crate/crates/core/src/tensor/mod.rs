//! Dense f64 arrays with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap handle to a graph node. Operations on tensors
//! that require gradients record a backward closure; [`Tensor::backward`]
//! walks the graph once in reverse topological order and accumulates
//! gradients into every reachable node. Broadcasting is limited to a
//! scalar (one-element) operand.

mod gradcheck;
mod nn;
mod ops;
mod optim;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use optim::Adam;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Maps the output gradient to one optional gradient per parent.
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(TensorError::Invalid(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor(Rc::new(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// A constant: gradients stop here.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape, false)
    }

    /// A trainable leaf that collects gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape, true)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![v], &[], false).expect("scalar shape")
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(vec![0.0; numel(shape)], shape, false).expect("matching length")
    }

    /// Output of an operation. The backward closure is kept only when some
    /// parent needs gradients.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, parents: Vec<Tensor>, backward: BackwardFn) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if requires_grad { (parents, Some(backward)) } else { (Vec::new(), None) };
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrites the values in place. Meant for leaves (parameter updates
    /// and finite-difference probes).
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut d = self.0.data.borrow_mut();
        if d.len() != values.len() {
            return Err(TensorError::Invalid(format!("set_data: {} values for {}", values.len(), d.len())));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.to_vec(), self.shape(), false).expect("same shape")
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn accumulate(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients add to whatever is
    /// already stored, so call `zero_grad` on parameters between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        // Gradients of interior nodes live only for the sweep; leaves keep theirs.
        let mut interior: std::collections::HashMap<*const Node, Vec<f64>> = std::collections::HashMap::new();
        interior.insert(Rc::as_ptr(&self.0), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = interior.remove(&Rc::as_ptr(&node.0)) else { continue };
            let Some(backward) = node.0.backward.as_ref() else {
                node.accumulate(g);
                continue;
            };
            let grads = backward(&g);
            for (parent, pg) in node.0.parents.iter().zip(grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                match interior.get_mut(&Rc::as_ptr(&parent.0)) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        interior.insert(Rc::as_ptr(&parent.0), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes needing gradients, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        // Iterative post-order DFS; deep graphs would overflow recursion.
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Rc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.parents.iter().rev() {
                if p.requires_grad() && !seen.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
