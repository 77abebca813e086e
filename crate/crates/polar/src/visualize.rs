//! AoLP-DoLP false-color rendering: angle maps to hue, degree to brightness.

use crate::{Map2d, PolarizationMaps, PolarError, Result};

/// HSV -> RGB with h in [0, 1), s and v in [0, 1].
fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let to8 = |x: f32| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [to8(r), to8(g), to8(b)]
}

/// Interleaved 8-bit RGB buffer: hue = aolp / pi, saturation = 1,
/// value = dolp.
pub fn visualize_aolp_dolp(p: &PolarizationMaps) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = p.aolp.extents();
    if p.dolp.extents() != (h, w) {
        return Err(PolarError::ExtentMismatch {
            op: "visualize_aolp_dolp",
            lhs: (h, w),
            rhs: p.dolp.extents(),
        });
    }
    let mut rgb = Vec::with_capacity(3 * h * w);
    for (a, d) in p.aolp.data().iter().zip(p.dolp.data()) {
        let hue = a * std::f32::consts::FRAC_1_PI;
        rgb.extend_from_slice(&hsv_to_rgb(hue, 1.0, *d));
    }
    Ok((h, w, rgb))
}

/// Grayscale map rendered to 8-bit RGB (values clamped to [0, 1]).
pub fn gray_to_rgb(m: &Map2d) -> (usize, usize, Vec<u8>) {
    let (h, w) = m.extents();
    let mut rgb = Vec::with_capacity(3 * h * w);
    for v in m.data() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb.extend_from_slice(&[g, g, g]);
    }
    (h, w, rgb)
}
