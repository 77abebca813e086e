//! Dense N-d `f32` tensors with reverse-mode automatic differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute. Calling
//! [`Tensor::backward`] on a scalar replays the tape in reverse and returns a
//! [`GradStore`] with a gradient for every reachable tensor that requires one.
//! The tape is built eagerly per forward pass and dropped afterwards; tensors
//! are immutable once constructed.
//!
//! ```
//! use pvfi_tensor::Tape;
//!
//! let tape = Tape::new();
//! let w = tape.leaf(vec![3.0], &[1], true).unwrap();
//! let loss = w.square().unwrap().sum_all().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&w).unwrap(), &[6.0]);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

mod conv;
mod elementwise;
pub mod fastmath;
mod gemm;
pub mod io;
mod linalg;
mod norm;
mod op;
mod reduce;
mod shape;

pub use conv::{ConvCtx, ConvDims};
pub use norm::LayerNormCtx;
pub use op::{BinaryKind, MatmulDims, Op, UnaryKind};

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    LengthMismatch {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("backward requires a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: operands belong to different tapes")]
    TapeMismatch { op: &'static str },
}

fn config_err(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Config {
        op,
        msg: msg.into(),
    }
}

/// One recorded operation and its output buffer.
pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub data: Rc<Vec<f32>>,
    pub requires_grad: bool,
}

#[derive(Default)]
pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
}

/// Shared recording tape. Cloning the handle is cheap; all clones append to
/// the same node list. Single-threaded by design.
#[derive(Clone, Default)]
pub struct Tape(Rc<RefCell<TapeInner>>);

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a leaf tensor. `requires_grad` marks it as a gradient target.
    pub fn leaf(&self, data: Vec<f32>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::LengthMismatch {
                op: "leaf",
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), data, requires_grad))
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        self.leaf(vec![0.0; numel], shape, false).expect("length matches")
    }

    pub fn full(&self, shape: &[usize], value: f32) -> Tensor {
        let numel = shape.iter().product();
        self.leaf(vec![value; numel], shape, false).expect("length matches")
    }

    pub fn scalar(&self, value: f32) -> Tensor {
        self.leaf(vec![value], &[1], false).expect("length matches")
    }

    /// Leaf sharing an existing buffer without copying (cached constants).
    pub fn leaf_shared(&self, data: Rc<Vec<f32>>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::LengthMismatch {
                op: "leaf_shared",
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(self.push_shared(Op::Leaf, shape.to_vec(), data, requires_grad))
    }

    pub(crate) fn push(
        &self,
        op: Op,
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
    ) -> Tensor {
        let data = Rc::new(data);
        let mut inner = self.0.borrow_mut();
        let node = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape: shape.clone(),
            data: Rc::clone(&data),
            requires_grad,
        });
        Tensor {
            tape: self.clone(),
            node,
            shape,
            data,
        }
    }

    /// Like `push` but sharing the data buffer of an existing node (reshape).
    pub(crate) fn push_shared(
        &self,
        op: Op,
        shape: Vec<usize>,
        data: Rc<Vec<f32>>,
        requires_grad: bool,
    ) -> Tensor {
        let mut inner = self.0.borrow_mut();
        let node = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape: shape.clone(),
            data: Rc::clone(&data),
            requires_grad,
        });
        Tensor {
            tape: self.clone(),
            node,
            shape,
            data,
        }
    }

    pub(crate) fn node_requires_grad(&self, id: usize) -> bool {
        self.0.borrow().nodes[id].requires_grad
    }
}

/// An immutable N-d array of `f32` recorded on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Tape,
    pub(crate) node: usize,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f32>>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.to_vec()
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.node_requires_grad(self.node)
    }

    /// True if any stored scalar is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    pub(crate) fn same_tape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.tape.0, &other.tape.0) {
            Ok(())
        } else {
            Err(TensorError::TapeMismatch { op })
        }
    }

    /// Reverse-mode sweep from a scalar. Visits every recorded node at most
    /// once, in reverse insertion order (a valid reverse topological order).
    /// Gradients are retained for leaf tensors; interior gradients are
    /// dropped as soon as they have been propagated.
    pub fn backward(&self) -> Result<GradStore> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        let inner = self.tape.0.borrow();
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = (0..n).map(|_| None).collect();
        grads[self.node] = Some(vec![1.0]);
        let profile = std::env::var_os("PVFI_PROF_BACKWARD").is_some();
        let mut prof: std::collections::HashMap<&'static str, (f64, usize)> = Default::default();
        for id in (0..=self.node).rev() {
            if !inner.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(inner.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            if profile {
                let t0 = std::time::Instant::now();
                let name = op_name(&inner.nodes[id].op);
                op::backward_into(&inner, id, gout, &mut grads);
                let e = prof.entry(name).or_insert((0.0, 0));
                e.0 += t0.elapsed().as_secs_f64();
                e.1 += 1;
            } else {
                op::backward_into(&inner, id, gout, &mut grads);
            }
        }
        if profile {
            let mut rows: Vec<_> = prof.into_iter().collect();
            rows.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0));
            for (name, (secs, count)) in rows {
                eprintln!("backward {name:18} {count:5} calls {:9.2} ms", secs * 1000.0);
            }
        }
        Ok(GradStore { grads })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Unary { .. } => "unary",
        Op::Binary { .. } => "binary",
        Op::MulBroadcast { .. } => "mul_broadcast",
        Op::Matmul { .. } => "matmul",
        Op::Conv3d(_) => "conv3d",
        Op::ConvTranspose3d(_) => "conv_transpose3d",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm(_) => "layer_norm",
        Op::Reshape { .. } => "reshape",
        Op::Permute { .. } => "permute",
        Op::Slice { .. } => "slice",
        Op::Pad { .. } => "pad",
        Op::Concat { .. } => "concat",
        Op::Roll { .. } => "roll",
        Op::SumAll { .. } => "sum_all",
        Op::MeanAll { .. } => "mean_all",
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("node", &self.node)
            .field("shape", &self.shape)
            .finish()
    }
}

/// Gradients produced by one backward sweep, indexed by tape node.
pub struct GradStore {
    grads: Vec<Option<Vec<f32>>>,
}

impl GradStore {
    /// Gradient of the loss w.r.t. `t`, if one was produced.
    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        self.grads.get(t.node).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, t: &Tensor) -> Option<Vec<f32>> {
        self.grads.get_mut(t.node).and_then(|g| g.take())
    }
}

pub(crate) fn accumulate(dst: &mut Option<Vec<f32>>, src: &[f32]) {
    match dst {
        Some(buf) => {
            debug_assert_eq!(buf.len(), src.len());
            for (d, s) in buf.iter_mut().zip(src) {
                *d += s;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

/// Accumulate taking ownership, avoiding a copy when the slot is empty.
pub(crate) fn accumulate_owned(dst: &mut Option<Vec<f32>>, src: Vec<f32>) {
    match dst {
        Some(buf) => {
            debug_assert_eq!(buf.len(), src.len());
            for (d, s) in buf.iter_mut().zip(&src) {
                *d += s;
            }
        }
        None => *dst = Some(src),
    }
}
