//! Shape manipulation: reshape, permute, slice, pad, concat, roll.

use crate::op::Op;
use crate::{accumulate, Result, TapeInner, Tensor, TensorError};

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Materialize `x` permuted by `perm` (out axis i = in axis perm[i]).
/// Trailing output axes that stay contiguous in the input are coalesced
/// into one block copy.
fn permute_copy(in_shape: &[usize], data: &[f32], perm: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_of(in_shape);
    // stride in the input for each output axis
    let map_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0f32; data.len()];
    if data.is_empty() {
        return (out_shape, out);
    }
    // merge trailing axes that form one contiguous input run
    let mut merged = rank;
    let mut run = 1usize;
    let mut expected = 1usize;
    while merged > 0 && map_strides[merged - 1] == expected {
        run *= out_shape[merged - 1];
        expected = map_strides[merged - 1] * out_shape[merged - 1];
        merged -= 1;
    }
    if merged == 0 {
        out.copy_from_slice(data);
        return (out_shape, out);
    }
    let (inner, inner_stride, lead) = if run > 1 {
        (run, 1usize, merged)
    } else {
        // innermost axis is strided; keep it as the element loop
        (out_shape[rank - 1], map_strides[rank - 1], rank - 1)
    };
    let outer: usize = out_shape[..lead].iter().product();
    let mut idx = vec![0usize; lead];
    let mut src_base = 0usize;
    let mut dst = 0usize;
    for _ in 0..outer {
        if inner_stride == 1 {
            out[dst..dst + inner].copy_from_slice(&data[src_base..src_base + inner]);
        } else {
            let mut src = src_base;
            for o in &mut out[dst..dst + inner] {
                *o = data[src];
                src += inner_stride;
            }
        }
        dst += inner;
        // advance the multi-index over the leading axes
        for ax in (0..lead).rev() {
            idx[ax] += 1;
            src_base += map_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src_base -= map_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn permute_backward(in_shape: &[usize], perm: &[usize], gout: &[f32]) -> Vec<f32> {
    // gradient of permute is the inverse permutation
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    permute_copy(&out_shape, gout, &inv).1
}

pub(crate) fn slice_backward(
    in_shape: &[usize],
    ranges: &[(usize, usize)],
    gout: &[f32],
) -> Vec<f32> {
    let mut gx = vec![0.0f32; in_shape.iter().product()];
    let out_shape: Vec<usize> = ranges.iter().map(|(a, b)| b - a).collect();
    scatter_block(&mut gx, in_shape, gout, &out_shape, ranges);
    gx
}

pub(crate) fn pad_backward(in_shape: &[usize], pad: &[(usize, usize)], gout: &[f32]) -> Vec<f32> {
    let out_shape: Vec<usize> = in_shape
        .iter()
        .zip(pad)
        .map(|(e, (lo, hi))| e + lo + hi)
        .collect();
    let ranges: Vec<(usize, usize)> = in_shape
        .iter()
        .zip(pad)
        .map(|(e, (lo, _))| (*lo, lo + e))
        .collect();
    gather_block(gout, &out_shape, &ranges)
}

/// Copy the hyper-rectangle `ranges` of `src` into a tight buffer.
fn gather_block(src: &[f32], src_shape: &[usize], ranges: &[(usize, usize)]) -> Vec<f32> {
    let out_shape: Vec<usize> = ranges.iter().map(|(a, b)| b - a).collect();
    let numel: usize = out_shape.iter().product();
    let mut out = vec![0.0f32; numel];
    if numel == 0 {
        return out;
    }
    let rank = src_shape.len();
    let src_strides = strides_of(src_shape);
    let inner = out_shape[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut dst = 0usize;
    for _ in 0..outer.max(1) {
        let mut src_off = ranges[rank - 1].0;
        for ax in 0..rank - 1 {
            src_off += (ranges[ax].0 + idx[ax]) * src_strides[ax];
        }
        out[dst..dst + inner].copy_from_slice(&src[src_off..src_off + inner]);
        dst += inner;
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
        if rank == 1 {
            break;
        }
    }
    out
}

/// Add the tight `block` into the hyper-rectangle `ranges` of `dst`.
fn scatter_block(
    dst: &mut [f32],
    dst_shape: &[usize],
    block: &[f32],
    block_shape: &[usize],
    ranges: &[(usize, usize)],
) {
    if block.is_empty() {
        return;
    }
    let rank = dst_shape.len();
    let dst_strides = strides_of(dst_shape);
    let inner = block_shape[rank - 1];
    let outer: usize = block_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut src = 0usize;
    for _ in 0..outer.max(1) {
        let mut dst_off = ranges[rank - 1].0;
        for ax in 0..rank - 1 {
            dst_off += (ranges[ax].0 + idx[ax]) * dst_strides[ax];
        }
        for (o, b) in dst[dst_off..dst_off + inner].iter_mut().zip(&block[src..src + inner]) {
            *o += b;
        }
        src += inner;
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < block_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
        if rank == 1 {
            break;
        }
    }
}

/// Cyclic shift along every axis; `shifts[i]` moves data toward higher
/// indices (negative toward lower).
pub(crate) fn roll_forward(shape: &[usize], data: &[f32], shifts: &[isize]) -> Vec<f32> {
    let rank = shape.len();
    let strides = strides_of(shape);
    let norm: Vec<usize> = shape
        .iter()
        .zip(shifts)
        .map(|(&e, &s)| {
            if e == 0 {
                0
            } else {
                (((s % e as isize) + e as isize) % e as isize) as usize
            }
        })
        .collect();
    if norm.iter().all(|&s| s == 0) {
        return data.to_vec();
    }
    let mut out = vec![0.0f32; data.len()];
    let inner = shape[rank - 1];
    let outer: usize = shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    for o in 0..outer.max(1) {
        let mut dst_base = 0usize;
        for ax in 0..rank - 1 {
            dst_base += ((idx[ax] + norm[ax]) % shape[ax]) * strides[ax];
        }
        let src_base = o * inner;
        let s = norm[rank - 1];
        if s == 0 {
            out[dst_base..dst_base + inner].copy_from_slice(&data[src_base..src_base + inner]);
        } else {
            out[dst_base + s..dst_base + inner].copy_from_slice(&data[src_base..src_base + inner - s]);
            out[dst_base..dst_base + s].copy_from_slice(&data[src_base + inner - s..src_base + inner]);
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn concat_backward(
    inner: &TapeInner,
    parts: &[usize],
    axis: usize,
    out_shape: &[usize],
    gout: &[f32],
    grads: &mut [Option<Vec<f32>>],
) {
    let mut offset = 0usize;
    for &part in parts {
        let pshape = &inner.nodes[part].shape;
        let extent = pshape[axis];
        if inner.nodes[part].requires_grad {
            let ranges: Vec<(usize, usize)> = out_shape
                .iter()
                .enumerate()
                .map(|(ax, &e)| if ax == axis { (offset, offset + extent) } else { (0, e) })
                .collect();
            let gp = gather_block(gout, out_shape, &ranges);
            accumulate(&mut grads[part], &gp);
        }
        offset += extent;
    }
}

impl Tensor {
    /// Change shape without touching data. Element count must be preserved.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::LengthMismatch {
                op: "reshape",
                len: self.numel(),
                shape: shape.to_vec(),
            });
        }
        let rg = self.requires_grad();
        Ok(self.tape.push_shared(
            Op::Reshape { x: self.node },
            shape.to_vec(),
            std::rc::Rc::clone(&self.data),
            rg,
        ))
    }

    /// Reorder axes: output axis `i` takes input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(crate::config_err(
                "permute",
                format!("{perm:?} is not a permutation of 0..{rank}"),
            ));
        }
        let (out_shape, data) = permute_copy(&self.shape, &self.data, perm);
        let rg = self.requires_grad();
        Ok(self.tape.push(
            Op::Permute {
                x: self.node,
                perm: perm.to_vec(),
            },
            out_shape,
            data,
            rg,
        ))
    }

    /// Contiguous sub-block, one half-open range per axis.
    pub fn slice(&self, ranges: &[(usize, usize)]) -> Result<Tensor> {
        if ranges.len() != self.rank()
            || ranges
                .iter()
                .zip(&self.shape)
                .any(|((a, b), &e)| a > b || *b > e)
        {
            return Err(crate::config_err(
                "slice",
                format!("ranges {ranges:?} invalid for shape {:?}", self.shape),
            ));
        }
        let data = gather_block(&self.data, &self.shape, ranges);
        let out_shape: Vec<usize> = ranges.iter().map(|(a, b)| b - a).collect();
        let rg = self.requires_grad();
        Ok(self.tape.push(
            Op::Slice {
                x: self.node,
                ranges: ranges.to_vec(),
            },
            out_shape,
            data,
            rg,
        ))
    }

    /// Zero-pad with `(low, high)` amounts per axis.
    pub fn pad(&self, pad: &[(usize, usize)]) -> Result<Tensor> {
        if pad.len() != self.rank() {
            return Err(crate::config_err(
                "pad",
                format!("{} pad pairs for rank {}", pad.len(), self.rank()),
            ));
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(pad)
            .map(|(e, (lo, hi))| e + lo + hi)
            .collect();
        let mut data = vec![0.0f32; out_shape.iter().product()];
        let ranges: Vec<(usize, usize)> = self
            .shape
            .iter()
            .zip(pad)
            .map(|(e, (lo, _))| (*lo, lo + e))
            .collect();
        scatter_block(&mut data, &out_shape, &self.data, &self.shape, &ranges);
        let rg = self.requires_grad();
        Ok(self.tape.push(
            Op::Pad {
                x: self.node,
                pad: pad.to_vec(),
            },
            out_shape,
            data,
            rg,
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| crate::config_err("concat", "no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                rank,
            });
        }
        let mut out_shape = first.shape.clone();
        let mut total = 0usize;
        for p in parts {
            first.same_tape(p, "concat")?;
            if p.rank() != rank
                || p.shape
                    .iter()
                    .enumerate()
                    .any(|(ax, &e)| ax != axis && e != first.shape[ax])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            total += p.shape[axis];
        }
        out_shape[axis] = total;
        let mut data = vec![0.0f32; out_shape.iter().product()];
        let mut offset = 0usize;
        for p in parts {
            let ranges: Vec<(usize, usize)> = out_shape
                .iter()
                .enumerate()
                .map(|(ax, &e)| {
                    if ax == axis {
                        (offset, offset + p.shape[axis])
                    } else {
                        (0, e)
                    }
                })
                .collect();
            scatter_block(&mut data, &out_shape, &p.data, &p.shape, &ranges);
            offset += p.shape[axis];
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(first.tape.push(
            Op::Concat {
                parts: parts.iter().map(|p| p.node).collect(),
                axis,
            },
            out_shape,
            data,
            rg,
        ))
    }

    /// Cyclic shift along every axis (positive toward higher indices).
    pub fn roll(&self, shifts: &[isize]) -> Result<Tensor> {
        if shifts.len() != self.rank() {
            return Err(crate::config_err(
                "roll",
                format!("{} shifts for rank {}", shifts.len(), self.rank()),
            ));
        }
        let data = roll_forward(&self.shape, &self.data, shifts);
        let rg = self.requires_grad();
        Ok(self.tape.push(
            Op::Roll {
                x: self.node,
                shifts: shifts.to_vec(),
            },
            self.shape.clone(),
            data,
            rg,
        ))
    }
}
