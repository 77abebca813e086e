//! Batched matrix multiplication and the affine (linear) variant.

use crate::gemm::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::op::{MatmulDims, Op};
use crate::{accumulate_owned, Result, TapeInner, Tensor, TensorError};

/// Validate shapes for `a[.., m, k] x b[.., k, n]` (or `b[.., n, k]` when
/// `transpose_b`). Batch dims must match elementwise, or one operand may be
/// rank 2 and is then broadcast across the other's batch.
fn matmul_dims(
    a_shape: &[usize],
    b_shape: &[usize],
    transpose_b: bool,
) -> Result<(MatmulDims, Vec<usize>)> {
    let op = if transpose_b { "matmul_nt" } else { "matmul" };
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a_shape.to_vec(),
        rhs: b_shape.to_vec(),
    };
    if a_shape.len() < 2 || b_shape.len() < 2 {
        return Err(mismatch());
    }
    let (m, ka) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
    let (kb, n) = if transpose_b {
        (b_shape[b_shape.len() - 1], b_shape[b_shape.len() - 2])
    } else {
        (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1])
    };
    if ka != kb {
        return Err(mismatch());
    }
    let a_batch: usize = a_shape[..a_shape.len() - 2].iter().product();
    let b_batch: usize = b_shape[..b_shape.len() - 2].iter().product();
    let (batch, a_stride, b_stride, lead): (usize, usize, usize, Vec<usize>) =
        if a_shape.len() == b_shape.len() {
            if a_shape[..a_shape.len() - 2] != b_shape[..b_shape.len() - 2] {
                return Err(mismatch());
            }
            (a_batch, m * ka, kb * n, a_shape[..a_shape.len() - 2].to_vec())
        } else if b_shape.len() == 2 {
            (a_batch, m * ka, 0, a_shape[..a_shape.len() - 2].to_vec())
        } else if a_shape.len() == 2 {
            (b_batch, 0, kb * n, b_shape[..b_shape.len() - 2].to_vec())
        } else {
            return Err(mismatch());
        };
    let mut out_shape = lead;
    out_shape.push(m);
    out_shape.push(n);
    let mut dims = MatmulDims {
        batch,
        m,
        k: ka,
        n,
        a_stride,
        b_stride,
    };
    // a broadcast rhs lets the whole batch collapse into one tall GEMM
    if dims.b_stride == 0 && dims.batch > 1 {
        dims.m *= dims.batch;
        dims.a_stride *= dims.batch;
        dims.batch = 1;
    }
    Ok((dims, out_shape))
}

impl Tensor {
    /// Batched contraction `a[.., m, k] x b[.., k, n] -> [.., m, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.matmul_impl(rhs, None, false)
    }

    /// `a[.., m, k] x b[.., n, k]^T -> [.., m, n]` without materializing the
    /// transpose.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        self.matmul_impl(rhs, None, true)
    }

    /// Affine map `x[.., m, k] * w[k, n] + bias[n]`.
    pub fn linear(&self, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        self.matmul_impl(w, bias, false)
    }

    fn matmul_impl(
        &self,
        rhs: &Tensor,
        bias: Option<&Tensor>,
        transpose_b: bool,
    ) -> Result<Tensor> {
        self.same_tape(rhs, "matmul")?;
        let (dims, out_shape) = matmul_dims(&self.shape, &rhs.shape, transpose_b)?;
        if let Some(b) = bias {
            self.same_tape(b, "matmul")?;
            if b.shape != [dims.n] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    lhs: out_shape,
                    rhs: b.shape.clone(),
                });
            }
        }
        let mut out = vec![0.0f32; dims.batch * dims.m * dims.n];
        let (m, k, n) = (dims.m, dims.k, dims.n);
        for batch in 0..dims.batch {
            let a = &self.data[batch * dims.a_stride..batch * dims.a_stride + m * k];
            let b = &rhs.data[batch * dims.b_stride..batch * dims.b_stride + k * n];
            let c = &mut out[batch * m * n..(batch + 1) * m * n];
            if transpose_b {
                gemm_nt_acc(a, b, c, m, k, n);
            } else {
                gemm_acc(a, b, c, m, k, n);
            }
        }
        if let Some(bias) = bias {
            for row in out.chunks_exact_mut(n) {
                for (o, b) in row.iter_mut().zip(bias.data.iter()) {
                    *o += b;
                }
            }
        }
        let rg = self.requires_grad()
            || rhs.requires_grad()
            || bias.map(|b| b.requires_grad()).unwrap_or(false);
        Ok(self.tape.push(
            Op::Matmul {
                a: self.node,
                b: rhs.node,
                bias: bias.map(|b| b.node),
                transpose_b,
                dims,
            },
            out_shape,
            out,
            rg,
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward(
    inner: &TapeInner,
    a: usize,
    b: usize,
    bias: Option<usize>,
    transpose_b: bool,
    dims: &MatmulDims,
    gout: &[f32],
    grads: &mut [Option<Vec<f32>>],
) {
    let (m, k, n) = (dims.m, dims.k, dims.n);
    let a_data = &inner.nodes[a].data;
    let b_data = &inner.nodes[b].data;
    let need_a = inner.nodes[a].requires_grad;
    let need_b = inner.nodes[b].requires_grad;

    if need_a {
        let mut ga = vec![0.0f32; a_data.len()];
        for batch in 0..dims.batch {
            let g = &gout[batch * m * n..(batch + 1) * m * n];
            let bd = &b_data[batch * dims.b_stride..batch * dims.b_stride + k * n];
            let gslice = &mut ga[batch * dims.a_stride..batch * dims.a_stride + m * k];
            if transpose_b {
                // y = a b^T  =>  da = g * b  (b stored as [n, k])
                gemm_acc(g, bd, gslice, m, n, k);
            } else {
                // da = g * b^T, b stored [k, n]
                gemm_nt_acc(g, bd, gslice, m, n, k);
            }
        }
        accumulate_owned(&mut grads[a], ga);
    }
    if need_b {
        let mut gb = vec![0.0f32; b_data.len()];
        for batch in 0..dims.batch {
            let g = &gout[batch * m * n..(batch + 1) * m * n];
            let ad = &a_data[batch * dims.a_stride..batch * dims.a_stride + m * k];
            let gslice = &mut gb[batch * dims.b_stride..batch * dims.b_stride + k * n];
            if transpose_b {
                // y = a b^T  =>  db = g^T * a  ([n, m] x [m, k])
                gemm_tn_acc(g, ad, gslice, n, m, k);
            } else {
                // db = a^T * g
                gemm_tn_acc(ad, g, gslice, k, m, n);
            }
        }
        accumulate_owned(&mut grads[b], gb);
    }
    if let Some(bias) = bias {
        if inner.nodes[bias].requires_grad {
            let mut gbias = vec![0.0f32; n];
            for row in gout.chunks_exact(n) {
                for (gb, g) in gbias.iter_mut().zip(row) {
                    *gb += g;
                }
            }
            accumulate_owned(&mut grads[bias], gbias);
        }
    }
}
