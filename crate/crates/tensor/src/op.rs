//! Recorded operations and the backward dispatch.

use crate::conv::ConvCtx;
use crate::norm::LayerNormCtx;
use crate::{accumulate, accumulate_owned, TapeInner};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Abs,
    Square,
    Sqrt,
    Recip,
    Gelu,
    Scale(f32),
    AddScalar(f32),
    Clamp(f32, f32),
    /// Adds pi where the input is negative; used to wrap angles into [0, pi).
    WrapHalfTurn,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    /// `self.atan2(rhs)`: self is the y argument, rhs the x argument.
    Atan2,
}

/// Batched matmul geometry. Batch dims were validated at record time; a
/// stride of zero broadcasts the operand across the batch.
#[derive(Clone, Debug)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_stride: usize,
    pub b_stride: usize,
}

pub enum Op {
    Leaf,
    Unary {
        x: usize,
        kind: UnaryKind,
    },
    Binary {
        a: usize,
        b: usize,
        kind: BinaryKind,
    },
    /// Elementwise multiply by a one-element tensor broadcast over `x`.
    MulBroadcast {
        x: usize,
        s: usize,
    },
    Matmul {
        a: usize,
        b: usize,
        bias: Option<usize>,
        transpose_b: bool,
        dims: MatmulDims,
    },
    Conv3d(Box<ConvCtx>),
    ConvTranspose3d(Box<ConvCtx>),
    Softmax {
        x: usize,
        axis: usize,
        /// Additive attention mask applied inside the op; never receives
        /// gradient.
        mask: Option<usize>,
    },
    LayerNorm(Box<LayerNormCtx>),
    Reshape {
        x: usize,
    },
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Slice {
        x: usize,
        ranges: Vec<(usize, usize)>,
    },
    Pad {
        x: usize,
        pad: Vec<(usize, usize)>,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Roll {
        x: usize,
        shifts: Vec<isize>,
    },
    SumAll {
        x: usize,
    },
    MeanAll {
        x: usize,
    },
}

/// Propagate `gout` (gradient at node `id`, consumed) into the gradients of
/// its inputs. Pass-through ops move the buffer instead of copying it.
pub(crate) fn backward_into(
    inner: &TapeInner,
    id: usize,
    mut gout: Vec<f32>,
    grads: &mut [Option<Vec<f32>>],
) {
    let node = &inner.nodes[id];
    let needs = |nid: usize| inner.nodes[nid].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Unary { x, kind } => {
            if needs(*x) {
                // scale gout in place by the local derivative, then move it
                crate::elementwise::unary_backward_inplace(
                    *kind,
                    &inner.nodes[*x].data,
                    &node.data,
                    &mut gout,
                );
                accumulate_owned(&mut grads[*x], gout);
            }
        }
        Op::Binary { a, b, kind } => {
            let gb = crate::elementwise::binary_backward_inplace(
                *kind,
                &inner.nodes[*a].data,
                &inner.nodes[*b].data,
                &node.data,
                &mut gout,
                needs(*a),
                needs(*b),
            );
            if let Some(gb) = gb {
                accumulate_owned(&mut grads[*b], gb);
            }
            if needs(*a) {
                accumulate_owned(&mut grads[*a], gout);
            }
        }
        Op::MulBroadcast { x, s } => {
            let sv = inner.nodes[*s].data[0];
            if needs(*s) {
                let xd = &inner.nodes[*x].data;
                let gs: f64 = gout
                    .iter()
                    .zip(xd.iter())
                    .map(|(g, x)| (*g as f64) * (*x as f64))
                    .sum();
                accumulate(&mut grads[*s], &[gs as f32]);
            }
            if needs(*x) {
                for g in &mut gout {
                    *g *= sv;
                }
                accumulate_owned(&mut grads[*x], gout);
            }
        }
        Op::Matmul {
            a,
            b,
            bias,
            transpose_b,
            dims,
        } => {
            crate::linalg::matmul_backward(inner, *a, *b, *bias, *transpose_b, dims, &gout, grads);
        }
        Op::Conv3d(ctx) => crate::conv::conv3d_backward(inner, ctx, &gout, grads),
        Op::ConvTranspose3d(ctx) => crate::conv::conv_transpose3d_backward(inner, ctx, &gout, grads),
        Op::Softmax { x, axis, mask: _ } => {
            if needs(*x) {
                crate::norm::softmax_backward_inplace(&node.data, &node.shape, *axis, &mut gout);
                accumulate_owned(&mut grads[*x], gout);
            }
        }
        Op::LayerNorm(ctx) => crate::norm::layer_norm_backward(inner, ctx, &gout, grads),
        Op::Reshape { x } => {
            if needs(*x) {
                accumulate_owned(&mut grads[*x], gout);
            }
        }
        Op::Permute { x, perm } => {
            if needs(*x) {
                let gx = crate::shape::permute_backward(&inner.nodes[*x].shape, perm, &gout);
                accumulate_owned(&mut grads[*x], gx);
            }
        }
        Op::Slice { x, ranges } => {
            if needs(*x) {
                let gx = crate::shape::slice_backward(&inner.nodes[*x].shape, ranges, &gout);
                accumulate_owned(&mut grads[*x], gx);
            }
        }
        Op::Pad { x, pad } => {
            if needs(*x) {
                let gx = crate::shape::pad_backward(&inner.nodes[*x].shape, pad, &gout);
                accumulate_owned(&mut grads[*x], gx);
            }
        }
        Op::Concat { parts, axis } => {
            crate::shape::concat_backward(inner, parts, *axis, &node.shape, &gout, grads);
        }
        Op::Roll { x, shifts } => {
            if needs(*x) {
                let inv: Vec<isize> = shifts.iter().map(|s| -s).collect();
                let gx = crate::shape::roll_forward(&node.shape, &gout, &inv);
                accumulate_owned(&mut grads[*x], gx);
            }
        }
        Op::SumAll { x } => {
            if needs(*x) {
                let n = inner.nodes[*x].data.len();
                accumulate_owned(&mut grads[*x], vec![gout[0]; n]);
            }
        }
        Op::MeanAll { x } => {
            if needs(*x) {
                let n = inner.nodes[*x].data.len();
                let g = gout[0] / n as f32;
                accumulate_owned(&mut grads[*x], vec![g; n]);
            }
        }
    }
}
