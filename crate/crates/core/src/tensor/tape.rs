use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::{self, OpKind};
use super::{Result, Tensor, TensorError};

struct Node {
    /// `None` for leaves.
    op: Option<OpKind>,
    inputs: Vec<usize>,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Records are stored in creation order, so every record's inputs precede it
/// and a reverse sweep is a valid topological traversal.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
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

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(None, Vec::new(), value, requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf that collects a gradient.
    pub fn var(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&self, op: Option<OpKind>, inputs: Vec<usize>, value: Tensor, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            value: Rc::new(value),
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Applies `kind` to `inputs`, recording it on the tape.
    pub fn apply(&self, kind: OpKind, inputs: &[&Var]) -> Result<Var> {
        for v in inputs {
            if !self.same(&v.tape) {
                return Err(TensorError::InvalidArgument {
                    op: kind.name(),
                    msg: "inputs live on different tapes".into(),
                });
            }
        }
        let (values, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| nodes[v.id].value.clone()).collect();
            let rg = !matches!(kind, OpKind::StopGradient)
                && inputs.iter().any(|v| nodes[v.id].requires_grad);
            (values, rg)
        };
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = ops::forward(&kind, &refs)?;
        Ok(self.push(
            Some(kind),
            inputs.iter().map(|v| v.id).collect(),
            out,
            requires_grad,
        ))
    }

    fn backward_from(&self, loss: &Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = ops::backward(op, &inputs, &node.value, &g, &needs);
            for ((&input, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(gi), true) = (gi, *need) else { continue };
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value().shape())
    }
}

/// Gradients keyed by tape node id.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it is reachable and differentiable.
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but returns zeros for unreachable vars.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Reverse sweep from this scalar. The tape is left untouched, so calling it
    /// again yields identical gradients.
    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward_from(self)
    }

    fn unary(&self, kind: OpKind) -> Result<Var> {
        self.tape.apply(kind, &[self])
    }

    fn binary(&self, kind: OpKind, other: &Var) -> Result<Var> {
        self.tape.apply(kind, &[self, other])
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.binary(OpKind::MatMul, other)
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(OpKind::Add, other)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(OpKind::Sub, other)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(OpKind::Mul, other)
    }

    pub fn scale(&self, c: f64) -> Result<Var> {
        self.unary(OpKind::Scale(c))
    }

    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        first.tape.apply(OpKind::Concat { axis }, parts)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.unary(OpKind::Narrow { axis, start, len })
    }

    /// Row `r` as a `1 × cols` tensor.
    pub fn row(&self, r: usize) -> Result<Var> {
        self.narrow(0, r, 1)
    }

    pub fn transpose(&self) -> Result<Var> {
        self.unary(OpKind::Transpose)
    }

    pub fn sigmoid(&self) -> Result<Var> {
        self.unary(OpKind::Sigmoid)
    }

    pub fn tanh(&self) -> Result<Var> {
        self.unary(OpKind::Tanh)
    }

    pub fn ln(&self) -> Result<Var> {
        self.unary(OpKind::Ln)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var> {
        self.unary(OpKind::LeakyRelu { slope })
    }

    pub fn softmax(&self, axis: usize, mask: Option<Vec<bool>>) -> Result<Var> {
        self.unary(OpKind::Softmax { axis, mask })
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var> {
        self.unary(OpKind::LogSoftmax { axis })
    }

    /// Treats `self` as a table and gathers the given rows.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Var> {
        self.unary(OpKind::EmbeddingLookup { ids: ids.to_vec() })
    }

    pub fn sum(&self, axis: Option<usize>) -> Result<Var> {
        self.unary(OpKind::Sum { axis })
    }

    pub fn mean(&self) -> Result<Var> {
        self.unary(OpKind::Mean)
    }

    pub fn mse(&self, other: &Var) -> Result<Var> {
        self.binary(OpKind::Mse, other)
    }

    pub fn nll(&self, targets: &[Option<usize>]) -> Result<Var> {
        self.unary(OpKind::Nll {
            targets: targets.to_vec(),
        })
    }

    pub fn bce_with_logits(&self, targets: &[f64]) -> Result<Var> {
        self.unary(OpKind::BceWithLogits {
            targets: targets.to_vec(),
        })
    }

    pub fn dropout(&self, rate: f64, train: bool, seed: u64) -> Result<Var> {
        self.unary(OpKind::Dropout { rate, train, seed })
    }

    /// Same value, but gradients stop here.
    pub fn detach(&self) -> Result<Var> {
        self.unary(OpKind::StopGradient)
    }
}

/// Applies an op by kind; thin wrapper over [`Tape::apply`] for callers that
/// pick the kind at runtime.
pub fn tensor_op(kind: OpKind, inputs: &[&Var]) -> Result<Var> {
    let first = inputs.first().ok_or(TensorError::InvalidArgument {
        op: kind.name(),
        msg: "no inputs".into(),
    })?;
    first.tape.apply(kind, inputs)
}
