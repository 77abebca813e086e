//! Softmax and layer normalization.

use crate::op::Op;
use crate::{accumulate_owned, Result, TapeInner, Tensor, TensorError};

const LANES: usize = 8;

/// Max over a slice using lane accumulators (max is order-independent, so
/// this is exact and fast).
#[inline]
fn lane_max(row: &[f32]) -> f32 {
    let mut lanes = [f32::NEG_INFINITY; LANES];
    let chunks = row.chunks_exact(LANES);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            lanes[l] = lanes[l].max(c[l]);
        }
    }
    let mut m = f32::NEG_INFINITY;
    for l in lanes {
        m = m.max(l);
    }
    for &v in rem {
        m = m.max(v);
    }
    m
}

/// Sum with lane accumulators in a fixed order: vectorizable yet
/// bit-reproducible run to run.
#[inline]
fn lane_sum(row: &[f32]) -> f32 {
    let mut lanes = [0.0f32; LANES];
    let chunks = row.chunks_exact(LANES);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            lanes[l] += c[l];
        }
    }
    let mut s = 0.0f32;
    for l in lanes {
        s += l;
    }
    for &v in rem {
        s += v;
    }
    s
}

#[inline]
fn lane_dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; LANES];
    let ac = a.chunks_exact(LANES);
    let bc = b.chunks_exact(LANES);
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (ca, cb) in ac.zip(bc) {
        for l in 0..LANES {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut s = 0.0f32;
    for l in lanes {
        s += l;
    }
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

pub struct LayerNormCtx {
    pub x: usize,
    pub gain: usize,
    pub bias: usize,
    pub axis: usize,
    pub eps: f32,
    /// Per-slice mean and reciprocal standard deviation saved at forward time.
    pub mean: Vec<f32>,
    pub rstd: Vec<f32>,
}

/// Decompose `shape` around `axis` into (outer, extent, inner) loop bounds.
fn axis_bounds(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, extent, inner)
}

impl Tensor {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.softmax_impl(axis, None)
    }

    /// Softmax of `self + mask` along `axis`. The mask is folded into the
    /// op (no intermediate sum is materialized) and must not require
    /// gradients.
    pub fn softmax_masked(&self, axis: usize, mask: &Tensor) -> Result<Tensor> {
        self.same_tape(mask, "softmax_masked")?;
        if mask.shape != self.shape {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_masked",
                lhs: self.shape.clone(),
                rhs: mask.shape.clone(),
            });
        }
        if mask.requires_grad() {
            return Err(crate::config_err(
                "softmax_masked",
                "mask must not require gradients",
            ));
        }
        self.softmax_impl(axis, Some(mask))
    }

    fn softmax_impl(&self, axis: usize, mask: Option<&Tensor>) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: self.rank(),
            });
        }
        let (outer, extent, inner) = axis_bounds(&self.shape, axis);
        let mut out = vec![0.0f32; self.numel()];
        if inner == 1 {
            let mask_data = mask.map(|m| m.data.as_slice());
            for (r, (row, orow)) in self
                .data
                .chunks_exact(extent)
                .zip(out.chunks_exact_mut(extent))
                .enumerate()
            {
                if let Some(md) = mask_data {
                    let mrow = &md[r * extent..(r + 1) * extent];
                    for ((v, m), o) in row.iter().zip(mrow).zip(orow.iter_mut()) {
                        *o = v + m;
                    }
                    let max = lane_max(orow);
                    for o in orow.iter_mut() {
                        // flush masked entries to exact zero: subnormal
                        // attention weights poison the downstream GEMM
                        let d = *o - max;
                        *o = crate::fastmath::fast_exp(d) * ((d > -80.0) as i32 as f32);
                    }
                } else {
                    let max = lane_max(row);
                    for (v, o) in row.iter().zip(orow.iter_mut()) {
                        let d = v - max;
                        *o = crate::fastmath::fast_exp(d) * ((d > -80.0) as i32 as f32);
                    }
                }
                let norm = 1.0 / lane_sum(orow);
                for o in orow.iter_mut() {
                    *o *= norm;
                }
            }
        } else {
            let md = mask.map(|m| m.data.as_slice());
            let at = |i: usize| -> f32 {
                self.data[i] + md.map(|m| m[i]).unwrap_or(0.0)
            };
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * extent * inner + i;
                    let mut max = f32::NEG_INFINITY;
                    for e in 0..extent {
                        max = max.max(at(base + e * inner));
                    }
                    let mut sum = 0.0f32;
                    for e in 0..extent {
                        let d = at(base + e * inner) - max;
                        let v = crate::fastmath::fast_exp(d) * ((d > -80.0) as i32 as f32);
                        out[base + e * inner] = v;
                        sum += v;
                    }
                    let norm = 1.0 / sum;
                    for e in 0..extent {
                        out[base + e * inner] *= norm;
                    }
                }
            }
        }
        let rg = self.requires_grad();
        Ok(self.tape.push(
            Op::Softmax {
                x: self.node,
                axis,
                mask: mask.map(|m| m.node),
            },
            self.shape.clone(),
            out,
            rg,
        ))
    }

    /// Normalize along `axis` to zero mean and unit variance (eps inside the
    /// square root), then apply the affine `gain`/`bias` of that extent.
    pub fn layer_norm(&self, axis: usize, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
        self.same_tape(gain, "layer_norm")?;
        self.same_tape(bias, "layer_norm")?;
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                op: "layer_norm",
                axis,
                rank: self.rank(),
            });
        }
        let extent = self.shape[axis];
        if gain.shape != [extent] || bias.shape != [extent] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![extent],
                rhs: gain.shape.clone(),
            });
        }
        let (outer, _, inner) = axis_bounds(&self.shape, axis);
        let slices = outer * inner;
        let mut out = vec![0.0f32; self.numel()];
        let mut means = vec![0.0f32; slices];
        let mut rstds = vec![0.0f32; slices];
        if inner == 1 {
            for (s, (row, orow)) in self
                .data
                .chunks_exact(extent)
                .zip(out.chunks_exact_mut(extent))
                .enumerate()
            {
                let mean = lane_sum(row) / extent as f32;
                let mut var_lanes = [0.0f32; LANES];
                let chunks = row.chunks_exact(LANES);
                let rem = chunks.remainder();
                for c in chunks {
                    for l in 0..LANES {
                        let d = c[l] - mean;
                        var_lanes[l] += d * d;
                    }
                }
                let mut var = 0.0f32;
                for l in var_lanes {
                    var += l;
                }
                for &v in rem {
                    let d = v - mean;
                    var += d * d;
                }
                let rstd = 1.0 / (var / extent as f32 + eps).sqrt();
                means[s] = mean;
                rstds[s] = rstd;
                for ((v, o), (g, b)) in row
                    .iter()
                    .zip(orow.iter_mut())
                    .zip(gain.data.iter().zip(bias.data.iter()))
                {
                    *o = (v - mean) * rstd * g + b;
                }
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * extent * inner + i;
                    let mut sum = 0.0f64;
                    for e in 0..extent {
                        sum += self.data[base + e * inner] as f64;
                    }
                    let mean = (sum / extent as f64) as f32;
                    let mut var = 0.0f64;
                    for e in 0..extent {
                        let d = self.data[base + e * inner] - mean;
                        var += (d * d) as f64;
                    }
                    let rstd = 1.0 / ((var / extent as f64) as f32 + eps).sqrt();
                    means[o * inner + i] = mean;
                    rstds[o * inner + i] = rstd;
                    for e in 0..extent {
                        let xn = (self.data[base + e * inner] - mean) * rstd;
                        out[base + e * inner] = xn * gain.data[e] + bias.data[e];
                    }
                }
            }
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            Op::LayerNorm(Box::new(LayerNormCtx {
                x: self.node,
                gain: gain.node,
                bias: bias.node,
                axis,
                eps,
                mean: means,
                rstd: rstds,
            })),
            self.shape.clone(),
            out,
            rg,
        ))
    }
}

/// dx = y * (g - sum(g * y)) along the axis, written back into `gout`.
pub(crate) fn softmax_backward_inplace(y: &[f32], shape: &[usize], axis: usize, gout: &mut [f32]) {
    let (outer, extent, inner) = axis_bounds(shape, axis);
    if inner == 1 {
        for (yrow, grow) in y.chunks_exact(extent).zip(gout.chunks_exact_mut(extent)) {
            let dot = lane_dot(yrow, grow);
            for (yv, g) in yrow.iter().zip(grow.iter_mut()) {
                *g = yv * (*g - dot);
            }
        }
        return;
    }
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut dot = 0.0f32;
            for e in 0..extent {
                dot += gout[base + e * inner] * y[base + e * inner];
            }
            for e in 0..extent {
                let idx = base + e * inner;
                gout[idx] = y[idx] * (gout[idx] - dot);
            }
        }
    }
}

pub(crate) fn layer_norm_backward(
    inner_tape: &TapeInner,
    ctx: &LayerNormCtx,
    gout: &[f32],
    grads: &mut [Option<Vec<f32>>],
) {
    let x = &inner_tape.nodes[ctx.x].data;
    let shape = &inner_tape.nodes[ctx.x].shape;
    let gain = &inner_tape.nodes[ctx.gain].data;
    let (outer, extent, inner) = axis_bounds(shape, ctx.axis);
    let need_x = inner_tape.nodes[ctx.x].requires_grad;
    let need_g = inner_tape.nodes[ctx.gain].requires_grad;
    let need_b = inner_tape.nodes[ctx.bias].requires_grad;

    let mut gx = if need_x { vec![0.0f32; x.len()] } else { Vec::new() };
    let mut gg = vec![0.0f32; extent];
    let mut gb = vec![0.0f32; extent];
    if inner == 1 {
        let n = extent as f32;
        for s in 0..outer {
            let base = s * extent;
            let (mean, rstd) = (ctx.mean[s], ctx.rstd[s]);
            let xrow = &x[base..base + extent];
            let grow = &gout[base..base + extent];
            let mut sum_gy = 0.0f32;
            let mut sum_gyx = 0.0f32;
            for e in 0..extent {
                let xn = (xrow[e] - mean) * rstd;
                let gyg = grow[e] * gain[e];
                sum_gy += gyg;
                sum_gyx += gyg * xn;
                if need_g {
                    gg[e] += grow[e] * xn;
                }
                if need_b {
                    gb[e] += grow[e];
                }
            }
            if need_x {
                let gxrow = &mut gx[base..base + extent];
                let (c1, c2) = (sum_gy / n, sum_gyx / n);
                for e in 0..extent {
                    let xn = (xrow[e] - mean) * rstd;
                    gxrow[e] = rstd * (grow[e] * gain[e] - c1 - xn * c2);
                }
            }
        }
    } else {
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mean = ctx.mean[o * inner + i];
                let rstd = ctx.rstd[o * inner + i];
                let mut sum_gy = 0.0f32;
                let mut sum_gyx = 0.0f32;
                for e in 0..extent {
                    let idx = base + e * inner;
                    let xn = (x[idx] - mean) * rstd;
                    let gyg = gout[idx] * gain[e];
                    sum_gy += gyg;
                    sum_gyx += gyg * xn;
                    if need_g {
                        gg[e] += gout[idx] * xn;
                    }
                    if need_b {
                        gb[e] += gout[idx];
                    }
                }
                if need_x {
                    let n = extent as f32;
                    for e in 0..extent {
                        let idx = base + e * inner;
                        let xn = (x[idx] - mean) * rstd;
                        gx[idx] = rstd * (gout[idx] * gain[e] - sum_gy / n - xn * sum_gyx / n);
                    }
                }
            }
        }
    }
    if need_x {
        accumulate_owned(&mut grads[ctx.x], gx);
    }
    if need_g {
        accumulate_owned(&mut grads[ctx.gain], gg);
    }
    if need_b {
        accumulate_owned(&mut grads[ctx.bias], gb);
    }
}

#[cfg(test)]
mod tests {
    use crate::Tape;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let tape = Tape::new();
        let x = tape.zeros(&[3]);
        let y = x.softmax(0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_is_shift_stable() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1000.0, 1000.0], &[2], false).unwrap();
        let y = x.softmax(0).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-6);
        assert!(!y.has_non_finite());
    }

    #[test]
    fn softmax_closed_form() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.0, 3.0f32.ln()], &[2], false).unwrap();
        let y = x.softmax(0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-6);
        assert!((y.data()[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_along_axis() {
        let tape = Tape::new();
        let x = tape
            .leaf((0..24).map(|i| (i as f32).sin() * 3.0).collect(), &[2, 3, 4], false)
            .unwrap();
        for axis in 0..3 {
            let y = x.softmax(axis).unwrap();
            let d = y.data();
            // check one arbitrary fiber per axis
            let sum: f32 = match axis {
                0 => (0..2).map(|e| d[e * 12 + 5]).sum(),
                1 => (0..3).map(|e| d[12 + e * 4 + 1]).sum(),
                _ => (0..4).map(|e| d[12 + 2 * 4 + e]).sum(),
            };
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_constant_slice_maps_to_bias() {
        let tape = Tape::new();
        let x = tape.full(&[2, 4], 7.0);
        let g = tape.full(&[4], 1.0);
        let b = tape.zeros(&[4]);
        let y = x.layer_norm(1, &g, &b, 1e-5).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_two_point_slice() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 3.0], &[1, 2], false).unwrap();
        let g = tape.full(&[2], 1.0);
        let b = tape.zeros(&[2]);
        let y = x.layer_norm(1, &g, &b, 1e-10).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-4);
        assert!((y.data()[1] - 1.0).abs() < 1e-4);
    }
}
