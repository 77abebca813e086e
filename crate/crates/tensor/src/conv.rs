//! 3-D convolution and its transposed counterpart, via im2col + GEMM.
//!
//! Inputs are `[C, T, H, W]` or `[B, C, T, H, W]`. Convolution weights are
//! `[C_out, C_in/groups, kt, kh, kw]`; transposed-convolution weights are
//! `[C_in, C_out/groups, kt, kh, kw]`.

use crate::gemm::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::op::Op;
use crate::{accumulate_owned, config_err, Result, TapeInner, Tensor, TensorError};

#[derive(Clone, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Spatial extents of the operation input.
    pub in_spatial: [usize; 3],
    /// Spatial extents of the operation output.
    pub out_spatial: [usize; 3],
    /// True when the input carried a leading batch axis.
    pub batched: bool,
    /// Channels-last depthwise layout (`[B, T, H, W, C]`).
    pub channels_last: bool,
}

pub struct ConvCtx {
    pub x: usize,
    pub w: usize,
    pub bias: Option<usize>,
    pub dims: ConvDims,
}

/// Valid output range `[lo, hi)` along one axis for a stride-1 kernel tap
/// at offset `d`: positions whose source `o + d - pad` stays in bounds.
fn tap_range(out_e: usize, in_e: usize, d: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(d);
    let hi = (in_e + pad - d).min(out_e);
    (lo, hi.max(lo))
}

/// Depthwise stride-1 3-D convolution: every channel of every sample
/// convolves with its own single-channel kernel. Per-tap valid ranges are
/// precomputed so the inner loops run branch-free over contiguous rows;
/// this beats the per-group im2col round trip on small cube lattices.
#[allow(clippy::too_many_arguments)]
fn depthwise_forward(
    x: &[f32],
    w: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
    batch: usize,
    channels: usize,
    sp: [usize; 3],
    kernel: [usize; 3],
    padding: [usize; 3],
    out_sp: [usize; 3],
) {
    let [it, ih, iw] = sp;
    let [ot, oh, ow] = out_sp;
    let (in_vox, out_vox) = (it * ih * iw, ot * oh * ow);
    let klen = kernel[0] * kernel[1] * kernel[2];
    for plane in 0..batch * channels {
        let c = plane % channels;
        let xp = &x[plane * in_vox..(plane + 1) * in_vox];
        let yp = &mut out[plane * out_vox..(plane + 1) * out_vox];
        yp.fill(bias.map(|b| b[c]).unwrap_or(0.0));
        let wc = &w[c * klen..(c + 1) * klen];
        let mut ki = 0usize;
        for dt in 0..kernel[0] {
            let (t_lo, t_hi) = tap_range(ot, it, dt, padding[0]);
            for dh in 0..kernel[1] {
                let (h_lo, h_hi) = tap_range(oh, ih, dh, padding[1]);
                for dw in 0..kernel[2] {
                    let wk = wc[ki];
                    ki += 1;
                    if wk == 0.0 {
                        continue;
                    }
                    let (w_lo, w_hi) = tap_range(ow, iw, dw, padding[2]);
                    if w_lo >= w_hi {
                        continue;
                    }
                    for t in t_lo..t_hi {
                        let tb = (t + dt - padding[0]) * ih * iw;
                        for h in h_lo..h_hi {
                            let src0 = tb + (h + dh - padding[1]) * iw + w_lo + dw - padding[2];
                            let dst0 = t * oh * ow + h * ow + w_lo;
                            let run = w_hi - w_lo;
                            let (xs, ys) = (&xp[src0..src0 + run], &mut yp[dst0..dst0 + run]);
                            for (y, xv) in ys.iter_mut().zip(xs) {
                                *y += wk * xv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`depthwise_forward`]: input gradient by transposed
/// accumulation, weight gradient by correlation, same range precomputation.
#[allow(clippy::too_many_arguments)]
fn depthwise_backward(
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    mut gw: Option<&mut [f32]>,
    batch: usize,
    channels: usize,
    sp: [usize; 3],
    kernel: [usize; 3],
    padding: [usize; 3],
    out_sp: [usize; 3],
) {
    let [it, ih, iw] = sp;
    let [ot, oh, ow] = out_sp;
    let (in_vox, out_vox) = (it * ih * iw, ot * oh * ow);
    let klen = kernel[0] * kernel[1] * kernel[2];
    for plane in 0..batch * channels {
        let c = plane % channels;
        let xp = &x[plane * in_vox..(plane + 1) * in_vox];
        let gp = &gout[plane * out_vox..(plane + 1) * out_vox];
        let gxp = gx.as_deref_mut().map(|g| &mut g[plane * in_vox..(plane + 1) * in_vox]);
        let mut gxp = gxp;
        let wc = &w[c * klen..(c + 1) * klen];
        let mut ki = 0usize;
        for dt in 0..kernel[0] {
            let (t_lo, t_hi) = tap_range(ot, it, dt, padding[0]);
            for dh in 0..kernel[1] {
                let (h_lo, h_hi) = tap_range(oh, ih, dh, padding[1]);
                for dw in 0..kernel[2] {
                    let wk = wc[ki];
                    let (w_lo, w_hi) = tap_range(ow, iw, dw, padding[2]);
                    let mut wk_grad = 0.0f64;
                    if w_lo < w_hi {
                        for t in t_lo..t_hi {
                            let tb = (t + dt - padding[0]) * ih * iw;
                            for h in h_lo..h_hi {
                                let src0 =
                                    tb + (h + dh - padding[1]) * iw + w_lo + dw - padding[2];
                                let out0 = t * oh * ow + h * ow + w_lo;
                                let run = w_hi - w_lo;
                                let grow = &gp[out0..out0 + run];
                                if gw.is_some() {
                                    let xs = &xp[src0..src0 + run];
                                    let mut acc = 0.0f32;
                                    for (g, xv) in grow.iter().zip(xs) {
                                        acc += g * xv;
                                    }
                                    wk_grad += acc as f64;
                                }
                                if let Some(gxp) = gxp.as_deref_mut() {
                                    let gxs = &mut gxp[src0..src0 + run];
                                    for (gx, g) in gxs.iter_mut().zip(grow) {
                                        *gx += wk * g;
                                    }
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[c * klen + ki] += wk_grad as f32;
                    }
                    ki += 1;
                }
            }
        }
    }
}

/// Gather sliding windows: `cols[(c, kt, kh, kw), (t, h, w)]` over the `dst`
/// lattice, reading `src` (one sample, `c` channels) with zero padding.
#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f32],
    channels: usize,
    src_sp: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    dst_sp: [usize; 3],
    cols: &mut [f32],
) {
    let [st, sh, sw] = stride;
    let [pt, ph, pw] = padding;
    let [it, ih, iw] = src_sp;
    let [ot, oh, ow] = dst_sp;
    let plane = ih * iw;
    let out_plane = oh * ow;
    let mut row = 0usize;
    for c in 0..channels {
        let ch = &src[c * it * plane..(c + 1) * it * plane];
        for dt in 0..kernel[0] {
            for dh in 0..kernel[1] {
                for dw in 0..kernel[2] {
                    let dst_row = &mut cols[row * ot * out_plane..(row + 1) * ot * out_plane];
                    for t in 0..ot {
                        let src_t = (t * st + dt) as isize - pt as isize;
                        if src_t < 0 || src_t >= it as isize {
                            dst_row[t * out_plane..(t + 1) * out_plane].fill(0.0);
                            continue;
                        }
                        let tbase = src_t as usize * plane;
                        for h in 0..oh {
                            let src_h = (h * sh + dh) as isize - ph as isize;
                            let drow = &mut dst_row[t * out_plane + h * ow..t * out_plane + (h + 1) * ow];
                            if src_h < 0 || src_h >= ih as isize {
                                drow.fill(0.0);
                                continue;
                            }
                            let hbase = tbase + src_h as usize * iw;
                            for (w, d) in drow.iter_mut().enumerate() {
                                let src_w = (w * sw + dw) as isize - pw as isize;
                                *d = if src_w < 0 || src_w >= iw as isize {
                                    0.0
                                } else {
                                    ch[hbase + src_w as usize]
                                };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add `cols` back into `dst`.
#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    cols: &[f32],
    channels: usize,
    dst_sp: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    src_sp: [usize; 3],
    dst: &mut [f32],
) {
    let [st, sh, sw] = stride;
    let [pt, ph, pw] = padding;
    let [it, ih, iw] = dst_sp;
    let [ot, oh, ow] = src_sp;
    let plane = ih * iw;
    let out_plane = oh * ow;
    let mut row = 0usize;
    for c in 0..channels {
        let ch = &mut dst[c * it * plane..(c + 1) * it * plane];
        for dt in 0..kernel[0] {
            for dh in 0..kernel[1] {
                for dw in 0..kernel[2] {
                    let src_row = &cols[row * ot * out_plane..(row + 1) * ot * out_plane];
                    for t in 0..ot {
                        let dst_t = (t * st + dt) as isize - pt as isize;
                        if dst_t < 0 || dst_t >= it as isize {
                            continue;
                        }
                        let tbase = dst_t as usize * plane;
                        for h in 0..oh {
                            let dst_h = (h * sh + dh) as isize - ph as isize;
                            if dst_h < 0 || dst_h >= ih as isize {
                                continue;
                            }
                            let hbase = tbase + dst_h as usize * iw;
                            let srow = &src_row[t * out_plane + h * ow..t * out_plane + (h + 1) * ow];
                            for (w, s) in srow.iter().enumerate() {
                                let dst_w = (w * sw + dw) as isize - pw as isize;
                                if dst_w >= 0 && (dst_w as usize) < iw {
                                    ch[hbase + dst_w as usize] += s;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_dims(
    op: &'static str,
    x_shape: &[usize],
    w_shape: &[usize],
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
    groups: usize,
    transposed: bool,
) -> Result<ConvDims> {
    let (batched, batch, c_x, sp) = match x_shape.len() {
        4 => (false, 1, x_shape[0], [x_shape[1], x_shape[2], x_shape[3]]),
        5 => (true, x_shape[0], x_shape[1], [x_shape[2], x_shape[3], x_shape[4]]),
        _ => {
            return Err(config_err(
                op,
                format!("input must be [C,T,H,W] or [B,C,T,H,W], got {x_shape:?}"),
            ))
        }
    };
    if w_shape.len() != 5 {
        return Err(config_err(
            op,
            format!("weight must be rank 5, got {w_shape:?}"),
        ));
    }
    let kernel = [w_shape[2], w_shape[3], w_shape[4]];
    let stride = [stride.0, stride.1, stride.2];
    let padding = [padding.0, padding.1, padding.2];
    if stride.iter().any(|&s| s == 0) || kernel.iter().any(|&k| k == 0) {
        return Err(config_err(op, "kernel and stride extents must be positive"));
    }
    if groups == 0 || c_x % groups != 0 {
        return Err(config_err(
            op,
            format!("groups {groups} must divide channels {c_x}"),
        ));
    }
    let (c_in, c_out) = if transposed {
        // w: [C_in, C_out/groups, k...]
        if w_shape[0] != c_x {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: x_shape.to_vec(),
                rhs: w_shape.to_vec(),
            });
        }
        (c_x, w_shape[1] * groups)
    } else {
        // w: [C_out, C_in/groups, k...]
        if w_shape[1] * groups != c_x {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: x_shape.to_vec(),
                rhs: w_shape.to_vec(),
            });
        }
        (c_x, w_shape[0])
    };
    if c_out % groups != 0 {
        return Err(config_err(
            op,
            format!("groups {groups} must divide output channels {c_out}"),
        ));
    }
    let mut out_sp = [0usize; 3];
    for ax in 0..3 {
        if transposed {
            let e = (sp[ax] - 1) * stride[ax] + kernel[ax];
            if e <= 2 * padding[ax] {
                return Err(config_err(op, format!("non-positive output extent on axis {ax}")));
            }
            out_sp[ax] = e - 2 * padding[ax];
        } else {
            let padded = sp[ax] + 2 * padding[ax];
            if kernel[ax] > padded {
                return Err(config_err(
                    op,
                    format!(
                        "kernel extent {} exceeds padded input extent {} on axis {ax}",
                        kernel[ax], padded
                    ),
                ));
            }
            out_sp[ax] = (padded - kernel[ax]) / stride[ax] + 1;
        }
    }
    let (in_spatial, out_spatial) = if transposed { (sp, out_sp) } else { (sp, out_sp) };
    Ok(ConvDims {
        batch,
        c_in,
        c_out,
        groups,
        kernel,
        stride,
        padding,
        in_spatial,
        out_spatial,
        batched,
        channels_last: false,
    })
}

impl ConvDims {
    fn k_per_group_fwd(&self) -> usize {
        (self.c_in / self.groups) * self.kernel.iter().product::<usize>()
    }
    fn k_per_group_tr(&self) -> usize {
        (self.c_out / self.groups) * self.kernel.iter().product::<usize>()
    }
    fn in_voxels(&self) -> usize {
        self.in_spatial.iter().product()
    }
    fn out_voxels(&self) -> usize {
        self.out_spatial.iter().product()
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vec![c_out],
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

impl Tensor {
    /// 3-D convolution. Output extent per axis is
    /// `(in + 2*pad - k) / stride + 1`.
    pub fn conv3d(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        groups: usize,
    ) -> Result<Tensor> {
        self.same_tape(w, "conv3d")?;
        if let Some(b) = bias {
            self.same_tape(b, "conv3d")?;
        }
        let dims = conv_dims("conv3d", &self.shape, &w.shape, stride, padding, groups, false)?;
        check_bias("conv3d", bias, dims.c_out)?;
        let cg_out = dims.c_out / dims.groups;
        let k = dims.k_per_group_fwd();
        let out_vox = dims.out_voxels();
        let in_len = dims.c_in * dims.in_voxels();
        let out_len = dims.c_out * out_vox;
        let mut out = vec![0.0f32; dims.batch * out_len];
        if dims.groups == dims.c_in
            && dims.c_out == dims.c_in
            && dims.groups > 1
            && dims.stride == [1, 1, 1]
        {
            depthwise_forward(
                &self.data,
                &w.data,
                bias.map(|b| b.data.as_slice()),
                &mut out,
                dims.batch,
                dims.c_in,
                dims.in_spatial,
                dims.kernel,
                dims.padding,
                dims.out_spatial,
            );
            let mut out_shape = if dims.batched { vec![dims.batch] } else { vec![] };
            out_shape.push(dims.c_out);
            out_shape.extend_from_slice(&dims.out_spatial);
            let rg = self.requires_grad()
                || w.requires_grad()
                || bias.map(|b| b.requires_grad()).unwrap_or(false);
            return Ok(self.tape.push(
                Op::Conv3d(Box::new(ConvCtx {
                    x: self.node,
                    w: w.node,
                    bias: bias.map(|b| b.node),
                    dims,
                })),
                out_shape,
                out,
                rg,
            ));
        }
        let mut cols = vec![0.0f32; k * out_vox];
        let cg_in = dims.c_in / dims.groups;
        for b in 0..dims.batch {
            let xb = &self.data[b * in_len..(b + 1) * in_len];
            for g in 0..dims.groups {
                im2col(
                    &xb[g * cg_in * dims.in_voxels()..(g + 1) * cg_in * dims.in_voxels()],
                    cg_in,
                    dims.in_spatial,
                    dims.kernel,
                    dims.stride,
                    dims.padding,
                    dims.out_spatial,
                    &mut cols,
                );
                let wg = &w.data[g * cg_out * k..(g + 1) * cg_out * k];
                let og = &mut out[b * out_len + g * cg_out * out_vox..b * out_len + (g + 1) * cg_out * out_vox];
                gemm_acc(wg, &cols, og, cg_out, k, out_vox);
            }
            if let Some(bias) = bias {
                let ob = &mut out[b * out_len..(b + 1) * out_len];
                for (c, bv) in bias.data.iter().enumerate() {
                    for o in &mut ob[c * out_vox..(c + 1) * out_vox] {
                        *o += bv;
                    }
                }
            }
        }
        let mut out_shape = if dims.batched { vec![dims.batch] } else { vec![] };
        out_shape.push(dims.c_out);
        out_shape.extend_from_slice(&dims.out_spatial);
        let rg = self.requires_grad()
            || w.requires_grad()
            || bias.map(|b| b.requires_grad()).unwrap_or(false);
        Ok(self.tape.push(
            Op::Conv3d(Box::new(ConvCtx {
                x: self.node,
                w: w.node,
                bias: bias.map(|b| b.node),
                dims,
            })),
            out_shape,
            out,
            rg,
        ))
    }

    /// Transposed 3-D convolution. Output extent per axis is
    /// `(in - 1) * stride + k - 2*pad`.
    pub fn conv_transpose3d(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        groups: usize,
    ) -> Result<Tensor> {
        self.same_tape(w, "conv_transpose3d")?;
        if let Some(b) = bias {
            self.same_tape(b, "conv_transpose3d")?;
        }
        let dims = conv_dims(
            "conv_transpose3d",
            &self.shape,
            &w.shape,
            stride,
            padding,
            groups,
            true,
        )?;
        check_bias("conv_transpose3d", bias, dims.c_out)?;
        let cg_in = dims.c_in / dims.groups;
        let cg_out = dims.c_out / dims.groups;
        let k = dims.k_per_group_tr();
        let in_vox = dims.in_voxels();
        let out_vox = dims.out_voxels();
        let in_len = dims.c_in * in_vox;
        let out_len = dims.c_out * out_vox;
        let mut out = vec![0.0f32; dims.batch * out_len];
        let mut cols = vec![0.0f32; k * in_vox];
        for b in 0..dims.batch {
            let xb = &self.data[b * in_len..(b + 1) * in_len];
            for g in 0..dims.groups {
                cols.fill(0.0);
                let wg = &w.data[g * cg_in * k..(g + 1) * cg_in * k];
                let xg = &xb[g * cg_in * in_vox..(g + 1) * cg_in * in_vox];
                // cols = w_g^T . x_g
                gemm_tn_acc(wg, xg, &mut cols, k, cg_in, in_vox);
                col2im_acc(
                    &cols,
                    cg_out,
                    dims.out_spatial,
                    dims.kernel,
                    dims.stride,
                    dims.padding,
                    dims.in_spatial,
                    &mut out[b * out_len + g * cg_out * out_vox..b * out_len + (g + 1) * cg_out * out_vox],
                );
            }
            if let Some(bias) = bias {
                let ob = &mut out[b * out_len..(b + 1) * out_len];
                for (c, bv) in bias.data.iter().enumerate() {
                    for o in &mut ob[c * out_vox..(c + 1) * out_vox] {
                        *o += bv;
                    }
                }
            }
        }
        let mut out_shape = if dims.batched { vec![dims.batch] } else { vec![] };
        out_shape.push(dims.c_out);
        out_shape.extend_from_slice(&dims.out_spatial);
        let rg = self.requires_grad()
            || w.requires_grad()
            || bias.map(|b| b.requires_grad()).unwrap_or(false);
        Ok(self.tape.push(
            Op::ConvTranspose3d(Box::new(ConvCtx {
                x: self.node,
                w: w.node,
                bias: bias.map(|b| b.node),
                dims,
            })),
            out_shape,
            out,
            rg,
        ))
    }
}

/// Kernel transposed to `[klen, C]` so channel lanes stay contiguous.
fn kernel_lanes(w: &[f32], channels: usize, klen: usize) -> Vec<f32> {
    let mut lanes = vec![0.0f32; klen * channels];
    for c in 0..channels {
        for ki in 0..klen {
            lanes[ki * channels + c] = w[c * klen + ki];
        }
    }
    lanes
}

impl Tensor {
    /// Depthwise stride-1 3-D convolution over a channels-last lattice
    /// `[B, T, H, W, C]` with weights `[C, 1, kt, kh, kw]`. The channel
    /// lanes are contiguous, so every tap is a vectorized row update.
    pub fn conv3d_depthwise_last(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        padding: (usize, usize, usize),
    ) -> Result<Tensor> {
        self.same_tape(w, "conv3d_depthwise_last")?;
        if let Some(b) = bias {
            self.same_tape(b, "conv3d_depthwise_last")?;
        }
        let s = &self.shape;
        if s.len() != 5 {
            return Err(config_err(
                "conv3d_depthwise_last",
                format!("input must be [B,T,H,W,C], got {s:?}"),
            ));
        }
        let (batch, sp, channels) = (s[0], [s[1], s[2], s[3]], s[4]);
        if w.shape.len() != 5 || w.shape[0] != channels || w.shape[1] != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d_depthwise_last",
                lhs: s.clone(),
                rhs: w.shape.clone(),
            });
        }
        let kernel = [w.shape[2], w.shape[3], w.shape[4]];
        let padding = [padding.0, padding.1, padding.2];
        let mut out_sp = [0usize; 3];
        for ax in 0..3 {
            let padded = sp[ax] + 2 * padding[ax];
            if kernel[ax] > padded {
                return Err(config_err(
                    "conv3d_depthwise_last",
                    format!("kernel exceeds padded extent on axis {ax}"),
                ));
            }
            out_sp[ax] = padded - kernel[ax] + 1;
        }
        check_bias("conv3d_depthwise_last", bias, channels)?;
        let klen: usize = kernel.iter().product();
        let lanes = kernel_lanes(&w.data, channels, klen);
        let [it, ih, iw] = sp;
        let [ot, oh, ow] = out_sp;
        let mut out = vec![0.0f32; batch * ot * oh * ow * channels];
        if let Some(b) = bias {
            for row in out.chunks_exact_mut(channels) {
                row.copy_from_slice(&b.data);
            }
        }
        let in_vol = it * ih * iw * channels;
        let out_vol = ot * oh * ow * channels;
        for bi in 0..batch {
            let xp = &self.data[bi * in_vol..(bi + 1) * in_vol];
            let yp = &mut out[bi * out_vol..(bi + 1) * out_vol];
            let mut ki = 0usize;
            for dt in 0..kernel[0] {
                let (t_lo, t_hi) = tap_range(ot, it, dt, padding[0]);
                for dh in 0..kernel[1] {
                    let (h_lo, h_hi) = tap_range(oh, ih, dh, padding[1]);
                    for dw in 0..kernel[2] {
                        let (w_lo, w_hi) = tap_range(ow, iw, dw, padding[2]);
                        let wk = &lanes[ki * channels..(ki + 1) * channels];
                        ki += 1;
                        if w_lo >= w_hi {
                            continue;
                        }
                        for t in t_lo..t_hi {
                            let tb = ((t + dt - padding[0]) * ih) * iw;
                            for h in h_lo..h_hi {
                                let src0 =
                                    (tb + (h + dh - padding[1]) * iw + w_lo + dw - padding[2])
                                        * channels;
                                let dst0 = ((t * oh + h) * ow + w_lo) * channels;
                                let run = (w_hi - w_lo) * channels;
                                let xs = &xp[src0..src0 + run];
                                let ys = &mut yp[dst0..dst0 + run];
                                for (yc, xc) in ys
                                    .chunks_exact_mut(channels)
                                    .zip(xs.chunks_exact(channels))
                                {
                                    for c in 0..channels {
                                        yc[c] += wk[c] * xc[c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let out_shape = vec![batch, ot, oh, ow, channels];
        let rg = self.requires_grad()
            || w.requires_grad()
            || bias.map(|b| b.requires_grad()).unwrap_or(false);
        let dims = ConvDims {
            batch,
            c_in: channels,
            c_out: channels,
            groups: channels,
            kernel,
            stride: [1, 1, 1],
            padding,
            in_spatial: sp,
            out_spatial: out_sp,
            batched: true,
            channels_last: true,
        };
        Ok(self.tape.push(
            Op::Conv3d(Box::new(ConvCtx {
                x: self.node,
                w: w.node,
                bias: bias.map(|b| b.node),
                dims,
            })),
            out_shape,
            out,
            rg,
        ))
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_last_backward(
    x: &[f32],
    lanes: &[f32],
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    glanes: Option<&mut [f32]>,
    batch: usize,
    channels: usize,
    sp: [usize; 3],
    kernel: [usize; 3],
    padding: [usize; 3],
    out_sp: [usize; 3],
) {
    let [it, ih, iw] = sp;
    let [ot, oh, ow] = out_sp;
    let in_vol = it * ih * iw * channels;
    let out_vol = ot * oh * ow * channels;
    let mut glanes = glanes;
    for bi in 0..batch {
        let xp = &x[bi * in_vol..(bi + 1) * in_vol];
        let gp = &gout[bi * out_vol..(bi + 1) * out_vol];
        let gxp = gx
            .as_deref_mut()
            .map(|g| &mut g[bi * in_vol..(bi + 1) * in_vol]);
        let mut gxp = gxp;
        let mut ki = 0usize;
        for dt in 0..kernel[0] {
            let (t_lo, t_hi) = tap_range(ot, it, dt, padding[0]);
            for dh in 0..kernel[1] {
                let (h_lo, h_hi) = tap_range(oh, ih, dh, padding[1]);
                for dw in 0..kernel[2] {
                    let (w_lo, w_hi) = tap_range(ow, iw, dw, padding[2]);
                    let wk = &lanes[ki * channels..(ki + 1) * channels];
                    if w_lo < w_hi {
                        for t in t_lo..t_hi {
                            let tb = ((t + dt - padding[0]) * ih) * iw;
                            for h in h_lo..h_hi {
                                let src0 =
                                    (tb + (h + dh - padding[1]) * iw + w_lo + dw - padding[2])
                                        * channels;
                                let out0 = ((t * oh + h) * ow + w_lo) * channels;
                                let run = (w_hi - w_lo) * channels;
                                let grow = &gp[out0..out0 + run];
                                if let Some(gl) = glanes.as_deref_mut() {
                                    let gl = &mut gl[ki * channels..(ki + 1) * channels];
                                    let xs = &xp[src0..src0 + run];
                                    for (gc, xc) in grow
                                        .chunks_exact(channels)
                                        .zip(xs.chunks_exact(channels))
                                    {
                                        for c in 0..channels {
                                            gl[c] += gc[c] * xc[c];
                                        }
                                    }
                                }
                                if let Some(gxp) = gxp.as_deref_mut() {
                                    let gxs = &mut gxp[src0..src0 + run];
                                    for (gxc, gc) in gxs
                                        .chunks_exact_mut(channels)
                                        .zip(grow.chunks_exact(channels))
                                    {
                                        for c in 0..channels {
                                            gxc[c] += wk[c] * gc[c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    ki += 1;
                }
            }
        }
    }
}

pub(crate) fn conv3d_backward(
    inner: &TapeInner,
    ctx: &ConvCtx,
    gout: &[f32],
    grads: &mut [Option<Vec<f32>>],
) {
    let dims = &ctx.dims;
    let x = &inner.nodes[ctx.x].data;
    let w = &inner.nodes[ctx.w].data;
    let need_x = inner.nodes[ctx.x].requires_grad;
    let need_w = inner.nodes[ctx.w].requires_grad;
    let cg_in = dims.c_in / dims.groups;
    let cg_out = dims.c_out / dims.groups;
    let k = dims.k_per_group_fwd();
    let in_vox = dims.in_voxels();
    let out_vox = dims.out_voxels();
    let in_len = dims.c_in * in_vox;
    let out_len = dims.c_out * out_vox;

    let mut gx = if need_x { vec![0.0f32; x.len()] } else { Vec::new() };
    let mut gw = if need_w { vec![0.0f32; w.len()] } else { Vec::new() };
    if dims.channels_last {
        let channels = dims.c_in;
        let klen: usize = dims.kernel.iter().product();
        let lanes = kernel_lanes(w, channels, klen);
        let mut glanes = if need_w {
            vec![0.0f32; klen * channels]
        } else {
            Vec::new()
        };
        depthwise_last_backward(
            x,
            &lanes,
            gout,
            need_x.then_some(gx.as_mut_slice()),
            need_w.then_some(glanes.as_mut_slice()),
            dims.batch,
            channels,
            dims.in_spatial,
            dims.kernel,
            dims.padding,
            dims.out_spatial,
        );
        if need_x {
            accumulate_owned(&mut grads[ctx.x], gx);
        }
        if need_w {
            // transpose lane-major gradients back to the [C, 1, k...] layout
            for c in 0..channels {
                for ki in 0..klen {
                    gw[c * klen + ki] = glanes[ki * channels + c];
                }
            }
            accumulate_owned(&mut grads[ctx.w], gw);
        }
        if let Some(bias) = ctx.bias {
            if inner.nodes[bias].requires_grad {
                let mut gb = vec![0.0f32; channels];
                for row in gout.chunks_exact(channels) {
                    for (gb, g) in gb.iter_mut().zip(row) {
                        *gb += g;
                    }
                }
                accumulate_owned(&mut grads[bias], gb);
            }
        }
        return;
    }
    if dims.groups == dims.c_in
        && dims.c_out == dims.c_in
        && dims.groups > 1
        && dims.stride == [1, 1, 1]
    {
        depthwise_backward(
            x,
            w,
            gout,
            need_x.then_some(gx.as_mut_slice()),
            need_w.then_some(gw.as_mut_slice()),
            dims.batch,
            dims.c_in,
            dims.in_spatial,
            dims.kernel,
            dims.padding,
            dims.out_spatial,
        );
        if need_x {
            accumulate_owned(&mut grads[ctx.x], gx);
        }
        if need_w {
            accumulate_owned(&mut grads[ctx.w], gw);
        }
        if let Some(bias) = ctx.bias {
            if inner.nodes[bias].requires_grad {
                let mut gb = vec![0.0f32; dims.c_out];
                for b in 0..dims.batch {
                    for c in 0..dims.c_out {
                        let base = b * out_len + c * out_vox;
                        gb[c] += gout[base..base + out_vox].iter().sum::<f32>();
                    }
                }
                accumulate_owned(&mut grads[bias], gb);
            }
        }
        return;
    }
    let mut cols = vec![0.0f32; k * out_vox];
    let mut dcols = vec![0.0f32; k * out_vox];
    for b in 0..dims.batch {
        for g in 0..dims.groups {
            let go = &gout[b * out_len + g * cg_out * out_vox..b * out_len + (g + 1) * cg_out * out_vox];
            let wg = &w[g * cg_out * k..(g + 1) * cg_out * k];
            if need_w {
                // rebuild the forward cols for this (batch, group)
                im2col(
                    &x[b * in_len + g * cg_in * in_vox..b * in_len + (g + 1) * cg_in * in_vox],
                    cg_in,
                    dims.in_spatial,
                    dims.kernel,
                    dims.stride,
                    dims.padding,
                    dims.out_spatial,
                    &mut cols,
                );
                gemm_nt_acc(
                    go,
                    &cols,
                    &mut gw[g * cg_out * k..(g + 1) * cg_out * k],
                    cg_out,
                    out_vox,
                    k,
                );
            }
            if need_x {
                dcols.fill(0.0);
                gemm_tn_acc(wg, go, &mut dcols, k, cg_out, out_vox);
                col2im_acc(
                    &dcols,
                    cg_in,
                    dims.in_spatial,
                    dims.kernel,
                    dims.stride,
                    dims.padding,
                    dims.out_spatial,
                    &mut gx[b * in_len + g * cg_in * in_vox..b * in_len + (g + 1) * cg_in * in_vox],
                );
            }
        }
    }
    if need_x {
        accumulate_owned(&mut grads[ctx.x], gx);
    }
    if need_w {
        accumulate_owned(&mut grads[ctx.w], gw);
    }
    if let Some(bias) = ctx.bias {
        if inner.nodes[bias].requires_grad {
            let mut gb = vec![0.0f32; dims.c_out];
            for b in 0..dims.batch {
                for c in 0..dims.c_out {
                    let base = b * out_len + c * out_vox;
                    gb[c] += gout[base..base + out_vox].iter().sum::<f32>();
                }
            }
            accumulate_owned(&mut grads[bias], gb);
        }
    }
}

pub(crate) fn conv_transpose3d_backward(
    inner: &TapeInner,
    ctx: &ConvCtx,
    gout: &[f32],
    grads: &mut [Option<Vec<f32>>],
) {
    let dims = &ctx.dims;
    let x = &inner.nodes[ctx.x].data;
    let need_x = inner.nodes[ctx.x].requires_grad;
    let need_w = inner.nodes[ctx.w].requires_grad;
    let cg_in = dims.c_in / dims.groups;
    let cg_out = dims.c_out / dims.groups;
    let k = dims.k_per_group_tr();
    let in_vox = dims.in_voxels();
    let out_vox = dims.out_voxels();
    let in_len = dims.c_in * in_vox;
    let out_len = dims.c_out * out_vox;

    let w = &inner.nodes[ctx.w].data;
    let mut gx = if need_x { vec![0.0f32; x.len()] } else { Vec::new() };
    let mut gw = if need_w { vec![0.0f32; w.len()] } else { Vec::new() };
    // dcols = im2col of the output gradient over the input lattice
    let mut dcols = vec![0.0f32; k * in_vox];
    for b in 0..dims.batch {
        for g in 0..dims.groups {
            let go = &gout[b * out_len + g * cg_out * out_vox..b * out_len + (g + 1) * cg_out * out_vox];
            im2col(
                go,
                cg_out,
                dims.out_spatial,
                dims.kernel,
                dims.stride,
                dims.padding,
                dims.in_spatial,
                &mut dcols,
            );
            if need_x {
                let wg = &w[g * cg_in * k..(g + 1) * cg_in * k];
                gemm_acc(
                    wg,
                    &dcols,
                    &mut gx[b * in_len + g * cg_in * in_vox..b * in_len + (g + 1) * cg_in * in_vox],
                    cg_in,
                    k,
                    in_vox,
                );
            }
            if need_w {
                let xg = &x[b * in_len + g * cg_in * in_vox..b * in_len + (g + 1) * cg_in * in_vox];
                gemm_nt_acc(
                    xg,
                    &dcols,
                    &mut gw[g * cg_in * k..(g + 1) * cg_in * k],
                    cg_in,
                    in_vox,
                    k,
                );
            }
        }
    }
    if need_x {
        accumulate_owned(&mut grads[ctx.x], gx);
    }
    if need_w {
        accumulate_owned(&mut grads[ctx.w], gw);
    }
    if let Some(bias) = ctx.bias {
        if inner.nodes[bias].requires_grad {
            let mut gb = vec![0.0f32; dims.c_out];
            for b in 0..dims.batch {
                for c in 0..dims.c_out {
                    let base = b * out_len + c * out_vox;
                    gb[c] += gout[base..base + out_vox].iter().sum::<f32>();
                }
            }
            accumulate_owned(&mut grads[bias], gb);
        }
    }
}
