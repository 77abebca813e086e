//! Differentiable counterparts of the polarization math, expressed in
//! tensor ops so losses can propagate gradients through the
//! demosaic -> Stokes -> DoLP/AoLP chain.
//!
//! Quad tensors are `[4, H, W]` in the channel order of
//! [`crate::ANGLES_DEG`]; mosaics are `[2H, 2W]`.

use crate::MOSAIC_OFFSETS;
use pvfi_tensor::{Result, Tensor};

/// Raw Stokes components from a `[4, H, W]` quad: (S0, S1, S2), each `[H, W]`.
pub fn stokes(quad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let shape = quad.shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let ch = |k: usize| -> Result<Tensor> {
        quad.slice(&[(k, k + 1), (0, h), (0, w)])?.reshape(&[h, w])
    };
    let (i0, i45, i90, i135) = (ch(0)?, ch(1)?, ch(2)?, ch(3)?);
    let s0 = i0.add(&i45)?.add(&i90)?.add(&i135)?.scale(0.5);
    let s1 = i0.sub(&i90)?;
    let s2 = i45.sub(&i135)?;
    Ok((s0, s1, s2))
}

/// DoLP = sqrt(S1^2 + S2^2) / max(S0, eps), clamped to [0, 1].
pub fn dolp(s0: &Tensor, s1: &Tensor, s2: &Tensor, eps: f32) -> Result<Tensor> {
    let mag = s1.square()?.add(&s2.square()?)?.sqrt();
    Ok(mag.div(&s0.clamp_min(eps))?.clamp(0.0, 1.0))
}

/// AoLP / pi in [0, 1): atan2(S2, S1) / 2 wrapped into [0, pi), then
/// divided by pi.
pub fn aolp_normalized(s1: &Tensor, s2: &Tensor) -> Result<Tensor> {
    Ok(s2
        .atan2(s1)?
        .scale(0.5)
        .wrap_half_turn()
        .scale(std::f32::consts::FRAC_1_PI))
}

/// Linear interpolation along `axis` of a `[H, W]` sub-lattice positioned at
/// `offset` (0 or 1) within the mosaic; mirrors `demosaic_taps`.
fn interp_axis(t: &Tensor, axis: usize, offset: usize) -> Result<Tensor> {
    let shape = t.shape().to_vec();
    let e = shape[axis];
    let full = |ax: usize| (0usize, shape[ax]);
    let range = |lo: usize, hi: usize| -> Vec<(usize, usize)> {
        let mut r = vec![full(0), full(1)];
        r[axis] = (lo, hi);
        r
    };
    let lo = t.slice(&range(0, e - 1))?;
    let hi = t.slice(&range(1, e))?;
    if offset == 0 {
        // interior i: 0.75 s[i] + 0.25 s[i+1]; last row extrapolates
        let interior = lo.scale(0.75).add(&hi.scale(0.25))?;
        let last = t
            .slice(&range(e - 1, e))?
            .scale(1.25)
            .add(&t.slice(&range(e - 2, e - 1))?.scale(-0.25))?;
        Tensor::concat(&[&interior, &last], axis)
    } else {
        // first row extrapolates; interior i: 0.25 s[i-1] + 0.75 s[i]
        let first = t
            .slice(&range(0, 1))?
            .scale(1.25)
            .add(&t.slice(&range(1, 2))?.scale(-0.25))?;
        let interior = lo.scale(0.25).add(&hi.scale(0.75))?;
        Tensor::concat(&[&first, &interior], axis)
    }
}

/// Differentiable bilinear demosaic of a `[2H, 2W]` mosaic into a
/// `[4, H, W]` quad. Matches [`crate::demosaic`] exactly.
pub fn demosaic(mosaic: &Tensor) -> Result<Tensor> {
    let shape = mosaic.shape().to_vec();
    let (h2, w2) = (shape[0], shape[1]);
    let (h, w) = (h2 / 2, w2 / 2);
    // expose the 2x2 phase axes: [H, 2, W, 2]
    let phased = mosaic.reshape(&[h, 2, w, 2])?;
    let mut channels = Vec::with_capacity(4);
    for (oy, ox) in MOSAIC_OFFSETS {
        let sub = phased
            .slice(&[(0, h), (oy, oy + 1), (0, w), (ox, ox + 1)])?
            .reshape(&[h, w])?;
        let rows = interp_axis(&sub, 0, oy)?;
        let full = interp_axis(&rows, 1, ox)?;
        channels.push(full.reshape(&[1, h, w])?);
    }
    let refs: Vec<&Tensor> = channels.iter().collect();
    Tensor::concat(&refs, 0)
}

/// Interpret a `[C, H, W]` frame as a quad: `C = 4` passes through,
/// `C = 1` is treated as a mosaic and demosaicked.
pub fn frame_to_quad(frame: &Tensor) -> Result<Tensor> {
    let shape = frame.shape().to_vec();
    match shape[0] {
        4 => Ok(frame.clone()),
        1 => demosaic(&frame.reshape(&[shape[1], shape[2]])?),
        c => Err(pvfi_tensor::TensorError::Config {
            op: "frame_to_quad",
            msg: format!("expected 1 or 4 channels, got {c}"),
        }),
    }
}
