//! Polarization math for division-of-focal-plane (DoFP) imagery.
//!
//! A DoFP sensor samples linear polarization at four analyzer angles
//! (0, 45, 90, 135 degrees) in each 2x2 super-pixel. From the four intensity
//! maps this crate derives Stokes parameters, degree and angle of linear
//! polarization, simulates the mosaic sensor layout, interpolates it back
//! to a quad, and renders the hue/brightness false-color view.
//!
//! The super-pixel layout is fixed as `[0, 45; 135, 90]` degrees.

pub mod diff;
pub mod io;
mod map;
mod visualize;

pub use map::Map2d;
pub use visualize::{gray_to_rgb, visualize_aolp_dolp};

pub type Result<T> = std::result::Result<T, PolarError>;

#[derive(Debug, thiserror::Error)]
pub enum PolarError {
    #[error("{op}: maps have mismatched extents {lhs:?} vs {rhs:?}")]
    ExtentMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: {msg}")]
    Format { op: &'static str, msg: String },
    #[error("png error at {path}: {source}")]
    Png {
        path: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Analyzer angles in super-pixel order, degrees.
pub const ANGLES_DEG: [u16; 4] = [0, 45, 90, 135];

/// Sub-lattice offset (row, col) of each angle channel in the mosaic,
/// matching the `[0, 45; 135, 90]` super-pixel layout.
pub const MOSAIC_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 1), (1, 0)];

/// Division guard for the DoLP quotient.
pub const DOLP_EPS: f32 = 1e-6;

/// Four same-shape intensity maps I(0), I(45), I(90), I(135) in [0, 1].
#[derive(Clone, Debug)]
pub struct IntensityQuad {
    /// Channel order follows [`ANGLES_DEG`].
    pub channels: [Map2d; 4],
}

impl IntensityQuad {
    pub fn new(channels: [Map2d; 4]) -> Result<Self> {
        let (h, w) = channels[0].extents();
        for c in &channels[1..] {
            if c.extents() != (h, w) {
                return Err(PolarError::ExtentMismatch {
                    op: "IntensityQuad",
                    lhs: (h, w),
                    rhs: c.extents(),
                });
            }
        }
        Ok(Self { channels })
    }

    pub fn extents(&self) -> (usize, usize) {
        self.channels[0].extents()
    }

    pub fn i0(&self) -> &Map2d {
        &self.channels[0]
    }
    pub fn i45(&self) -> &Map2d {
        &self.channels[1]
    }
    pub fn i90(&self) -> &Map2d {
        &self.channels[2]
    }
    pub fn i135(&self) -> &Map2d {
        &self.channels[3]
    }

    /// Stack as a flat `[4, H, W]` buffer (channel order of [`ANGLES_DEG`]).
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(4 * self.channels[0].len());
        for c in &self.channels {
            out.extend_from_slice(c.data());
        }
        out
    }

    pub fn from_flat(h: usize, w: usize, data: &[f32]) -> Result<Self> {
        if data.len() != 4 * h * w {
            return Err(PolarError::Format {
                op: "IntensityQuad::from_flat",
                msg: format!("expected {} values, got {}", 4 * h * w, data.len()),
            });
        }
        let ch = |i: usize| Map2d::from_vec(h, w, data[i * h * w..(i + 1) * h * w].to_vec());
        Self::new([ch(0), ch(1), ch(2), ch(3)])
    }
}

/// Per-pixel Stokes parameters S0, S1, S2.
#[derive(Clone, Debug)]
pub struct StokesMap {
    pub s0: Map2d,
    pub s1: Map2d,
    pub s2: Map2d,
}

/// Stokes parameters plus the derived polarization quantities.
#[derive(Clone, Debug)]
pub struct PolarizationMaps {
    /// Normalized intensity S0 / 2.
    pub intensity: Map2d,
    pub stokes: StokesMap,
    /// Angle of linear polarization, wrapped into [0, pi).
    pub aolp: Map2d,
    /// Degree of linear polarization, clamped to [0, 1].
    pub dolp: Map2d,
    /// Number of pixels whose raw DoLP exceeded 1 before clamping.
    pub dolp_clamped: usize,
}

/// Single-channel DoFP mosaic of extents 2H x 2W.
#[derive(Clone, Debug)]
pub struct DofpMosaic {
    pub map: Map2d,
}

impl DofpMosaic {
    pub fn new(map: Map2d) -> Result<Self> {
        let (h, w) = map.extents();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(PolarError::Format {
                op: "DofpMosaic",
                msg: format!("extents must be even, got {h}x{w}"),
            });
        }
        Ok(Self { map })
    }
}

/// Stokes parameters from the four analyzer intensities:
/// S0 = (I0 + I45 + I90 + I135) / 2, S1 = I0 - I90, S2 = I45 - I135.
pub fn stokes_from_quad(q: &IntensityQuad) -> StokesMap {
    let (h, w) = q.extents();
    let n = h * w;
    let mut s0 = vec![0.0f32; n];
    let mut s1 = vec![0.0f32; n];
    let mut s2 = vec![0.0f32; n];
    let (i0, i45, i90, i135) = (
        q.i0().data(),
        q.i45().data(),
        q.i90().data(),
        q.i135().data(),
    );
    for i in 0..n {
        s0[i] = 0.5 * (i0[i] + i45[i] + i90[i] + i135[i]);
        s1[i] = i0[i] - i90[i];
        s2[i] = i45[i] - i135[i];
    }
    StokesMap {
        s0: Map2d::from_vec(h, w, s0),
        s1: Map2d::from_vec(h, w, s1),
        s2: Map2d::from_vec(h, w, s2),
    }
}

/// DoLP and AoLP from Stokes parameters.
///
/// DoLP = sqrt(S1^2 + S2^2) / max(S0, eps), clamped to [0, 1];
/// AoLP = atan2(S2, S1) / 2 wrapped into [0, pi), with atan2(0, 0) = 0.
/// Returns (dolp, aolp, clamped_pixel_count).
pub fn dolp_aolp(s: &StokesMap, eps: f32) -> (Map2d, Map2d, usize) {
    let (h, w) = s.s0.extents();
    let n = h * w;
    let mut dolp = vec![0.0f32; n];
    let mut aolp = vec![0.0f32; n];
    let mut clamped = 0usize;
    for i in 0..n {
        let (s0, s1, s2) = (s.s0.data()[i], s.s1.data()[i], s.s2.data()[i]);
        let mag = (s1 * s1 + s2 * s2).sqrt();
        let raw = mag / s0.max(eps);
        if raw > 1.0 {
            clamped += 1;
        }
        dolp[i] = raw.clamp(0.0, 1.0);
        let mut a = if s1 == 0.0 && s2 == 0.0 {
            0.0
        } else {
            0.5 * s2.atan2(s1)
        };
        if a < 0.0 {
            a += std::f32::consts::PI;
        }
        // f32 rounding of atan2(-epsilon, x) + pi can land exactly on pi
        if a >= std::f32::consts::PI {
            a = 0.0;
        }
        aolp[i] = a;
    }
    (
        Map2d::from_vec(h, w, dolp),
        Map2d::from_vec(h, w, aolp),
        clamped,
    )
}

/// Full derivation quad -> Stokes -> DoLP/AoLP with the default eps guard.
pub fn polarization_maps(q: &IntensityQuad) -> PolarizationMaps {
    let stokes = stokes_from_quad(q);
    let (dolp, aolp, dolp_clamped) = dolp_aolp(&stokes, DOLP_EPS);
    let intensity = stokes.s0.map(|v| 0.5 * v);
    PolarizationMaps {
        intensity,
        stokes,
        aolp,
        dolp,
        dolp_clamped,
    }
}

/// Sample the quad onto the 2H x 2W sensor mosaic.
pub fn mosaic(q: &IntensityQuad) -> DofpMosaic {
    let (h, w) = q.extents();
    let mut out = vec![0.0f32; 4 * h * w];
    let w2 = 2 * w;
    for (ch, (oy, ox)) in q.channels.iter().zip(MOSAIC_OFFSETS) {
        for r in 0..h {
            let src = &ch.data()[r * w..(r + 1) * w];
            let dst_row = (2 * r + oy) * w2 + ox;
            for c in 0..w {
                out[dst_row + 2 * c] = src[c];
            }
        }
    }
    DofpMosaic {
        map: Map2d::from_vec(2 * h, 2 * w, out),
    }
}

/// Per-axis bilinear weights for demosaicking one angle sub-lattice.
///
/// Target sample `i` sits at sub-lattice coordinate `i + 0.25` (offset 0)
/// or `i - 0.25` (offset 1); borders extrapolate linearly so affine images
/// reproduce exactly. Returns (base_index, weight_on_base_plus_one).
pub(crate) fn demosaic_taps(extent: usize, offset: usize, i: usize) -> (usize, f32) {
    debug_assert!(extent >= 2);
    let u = i as f32 + if offset == 0 { 0.25 } else { -0.25 };
    let base = (u.floor() as isize).clamp(0, extent as isize - 2) as usize;
    (base, u - base as f32)
}

/// Bilinear interpolation of each angle sub-lattice onto the common H x W grid
/// (half the mosaic's linear extents).
pub fn demosaic(m: &DofpMosaic) -> Result<IntensityQuad> {
    let (h2, w2) = m.map.extents();
    let (h, w) = (h2 / 2, w2 / 2);
    if h < 2 || w < 2 {
        return Err(PolarError::Format {
            op: "demosaic",
            msg: format!("mosaic {h2}x{w2} too small"),
        });
    }
    let data = m.map.data();
    let mut channels: Vec<Map2d> = Vec::with_capacity(4);
    for (oy, ox) in MOSAIC_OFFSETS {
        // gather the angle sub-lattice (H x W)
        let mut sub = vec![0.0f32; h * w];
        for r in 0..h {
            let src = (2 * r + oy) * w2 + ox;
            for c in 0..w {
                sub[r * w + c] = data[src + 2 * c];
            }
        }
        let mut out = vec![0.0f32; h * w];
        for i in 0..h {
            let (r0, wr) = demosaic_taps(h, oy, i);
            for j in 0..w {
                let (c0, wc) = demosaic_taps(w, ox, j);
                let v00 = sub[r0 * w + c0];
                let v01 = sub[r0 * w + c0 + 1];
                let v10 = sub[(r0 + 1) * w + c0];
                let v11 = sub[(r0 + 1) * w + c0 + 1];
                out[i * w + j] = (1.0 - wr) * ((1.0 - wc) * v00 + wc * v01)
                    + wr * ((1.0 - wc) * v10 + wc * v11);
            }
        }
        channels.push(Map2d::from_vec(h, w, out));
    }
    let [a, b, c, d] = <[Map2d; 4]>::try_from(channels).expect("four channels");
    IntensityQuad::new([a, b, c, d])
}

/// Maps rescaled into [0, 1] for metrics and reports: intensity = S0/2,
/// S1 and S2 via (x + 1)/2, AoLP / pi, DoLP unchanged.
#[derive(Clone, Debug)]
pub struct NormalizedMaps {
    pub intensity: Map2d,
    /// Normalized 3-component Stokes stack [S0/2, (S1+1)/2, (S2+1)/2].
    pub stokes: [Map2d; 3],
    pub aolp: Map2d,
    pub dolp: Map2d,
    pub dolp_clamped: usize,
}

pub fn normalize_maps(p: &PolarizationMaps) -> NormalizedMaps {
    NormalizedMaps {
        intensity: p.stokes.s0.map(|v| 0.5 * v),
        stokes: [
            p.stokes.s0.map(|v| 0.5 * v),
            p.stokes.s1.map(|v| 0.5 * (v + 1.0)),
            p.stokes.s2.map(|v| 0.5 * (v + 1.0)),
        ],
        aolp: p.aolp.map(|v| v * std::f32::consts::FRAC_1_PI),
        dolp: p.dolp.clone(),
        dolp_clamped: p.dolp_clamped,
    }
}

/// Ideal Malus-law quad for a源 polarized at `phi` radians with intensity
/// `i_src` and unpolarized fraction `unpol`: I(theta) =
/// i_src * (unpol/2 + (1 - unpol) cos^2(theta - phi)).
pub fn malus_quad(h: usize, w: usize, phi: f32, i_src: f32, unpol: f32) -> IntensityQuad {
    let mut channels = Vec::with_capacity(4);
    for angle in ANGLES_DEG {
        let theta = (angle as f32).to_radians();
        let c = (theta - phi).cos();
        let v = i_src * (0.5 * unpol + (1.0 - unpol) * c * c);
        channels.push(Map2d::from_vec(h, w, vec![v; h * w]));
    }
    let [a, b, c, d] = <[Map2d; 4]>::try_from(channels).expect("four channels");
    IntensityQuad::new([a, b, c, d]).expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_from_pixels(vals: [f32; 4]) -> IntensityQuad {
        IntensityQuad::new([
            Map2d::from_vec(1, 1, vec![vals[0]]),
            Map2d::from_vec(1, 1, vec![vals[1]]),
            Map2d::from_vec(1, 1, vec![vals[2]]),
            Map2d::from_vec(1, 1, vec![vals[3]]),
        ])
        .unwrap()
    }

    #[test]
    fn stokes_hand_cases() {
        let s = stokes_from_quad(&quad_from_pixels([1.0, 0.5, 0.0, 0.5]));
        assert_eq!(
            (s.s0.data()[0], s.s1.data()[0], s.s2.data()[0]),
            (1.0, 1.0, 0.0)
        );
        let s = stokes_from_quad(&quad_from_pixels([0.3, 0.3, 0.3, 0.3]));
        assert!((s.s0.data()[0] - 0.6).abs() < 1e-7);
        assert_eq!((s.s1.data()[0], s.s2.data()[0]), (0.0, 0.0));
        let s = stokes_from_quad(&quad_from_pixels([0.5, 1.0, 0.5, 0.0]));
        assert_eq!(
            (s.s0.data()[0], s.s1.data()[0], s.s2.data()[0]),
            (1.0, 0.0, 1.0)
        );
    }

    #[test]
    fn dolp_aolp_hand_cases() {
        let mk = |s0: f32, s1: f32, s2: f32| StokesMap {
            s0: Map2d::from_vec(1, 1, vec![s0]),
            s1: Map2d::from_vec(1, 1, vec![s1]),
            s2: Map2d::from_vec(1, 1, vec![s2]),
        };
        let (d, a, _) = dolp_aolp(&mk(1.0, 1.0, 0.0), DOLP_EPS);
        assert_eq!((d.data()[0], a.data()[0]), (1.0, 0.0));
        let (d, a, _) = dolp_aolp(&mk(1.0, 0.0, 1.0), DOLP_EPS);
        assert_eq!(d.data()[0], 1.0);
        assert!((a.data()[0] - std::f32::consts::FRAC_PI_4).abs() < 1e-6);
        // unpolarized: angle defined as 0
        let (d, a, _) = dolp_aolp(&mk(0.8, 0.0, 0.0), DOLP_EPS);
        assert_eq!((d.data()[0], a.data()[0]), (0.0, 0.0));
    }

    #[test]
    fn dolp_clamp_counts_pixels() {
        let s = StokesMap {
            s0: Map2d::from_vec(1, 2, vec![0.0, 1.0]),
            s1: Map2d::from_vec(1, 2, vec![0.5, 0.5]),
            s2: Map2d::from_vec(1, 2, vec![0.0, 0.0]),
        };
        let (d, _, clamped) = dolp_aolp(&s, DOLP_EPS);
        assert_eq!(clamped, 1);
        assert_eq!(d.data()[0], 1.0);
        assert_eq!(d.data()[1], 0.5);
    }

    #[test]
    fn mosaic_layout_puts_i0_at_even_even() {
        let q = IntensityQuad::new([
            Map2d::from_vec(2, 2, vec![1.0; 4]),
            Map2d::from_vec(2, 2, vec![0.0; 4]),
            Map2d::from_vec(2, 2, vec![0.0; 4]),
            Map2d::from_vec(2, 2, vec![0.0; 4]),
        ])
        .unwrap();
        let m = mosaic(&q);
        for r in 0..4 {
            for c in 0..4 {
                let v = m.map.data()[r * 4 + c];
                if r % 2 == 0 && c % 2 == 0 {
                    assert_eq!(v, 1.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn constant_quad_round_trips_through_mosaic() {
        let q = malus_quad(4, 6, 0.3, 0.8, 0.1);
        let back = demosaic(&mosaic(&q)).unwrap();
        for (a, b) in q.channels.iter().zip(&back.channels) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn demosaic_is_exact_on_per_channel_affine_images() {
        // Bilinear interpolation (with linear border extrapolation) has zero
        // error on affine inputs: the round trip lands each channel exactly
        // on the affine function sampled at the common registration grid,
        // a quarter step from the channel's own sites.
        let (h, w) = (5, 7);
        let mut chans = Vec::new();
        for k in 0..4 {
            let (a, b, c) = (0.1 * k as f32, 0.02 * (k + 1) as f32, 0.01 * (4 - k) as f32);
            let data: Vec<f32> = (0..h * w)
                .map(|i| a + b * (i / w) as f32 + c * (i % w) as f32)
                .collect();
            chans.push(Map2d::from_vec(h, w, data));
        }
        let [c0, c1, c2, c3] = <[Map2d; 4]>::try_from(chans).unwrap();
        let q = IntensityQuad::new([c0, c1, c2, c3]).unwrap();
        let back = demosaic(&mosaic(&q)).unwrap();
        for (k, ch) in back.channels.iter().enumerate() {
            let (a, b, c) = (0.1 * k as f32, 0.02 * (k + 1) as f32, 0.01 * (4 - k) as f32);
            let (oy, ox) = MOSAIC_OFFSETS[k];
            let dy = if oy == 0 { 0.25 } else { -0.25 };
            let dx = if ox == 0 { 0.25 } else { -0.25 };
            for i in 0..h {
                for j in 0..w {
                    let expect = a + b * (i as f32 + dy) + c * (j as f32 + dx);
                    let got = ch.get(i, j);
                    assert!((got - expect).abs() < 1e-5, "ch {k} ({i},{j}): {got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn ramp_mosaic_registers_all_channels_onto_the_ramp() {
        // mosaic(y, x) = a + b y + c x; every demosaicked channel must equal
        // the ramp at the shared super-pixel centers (2i+0.5, 2j+0.5)
        let (h, w) = (4, 6);
        let (a, b, c) = (0.05f32, 0.004f32, 0.003f32);
        let data: Vec<f32> = (0..4 * h * w)
            .map(|i| {
                let (y, x) = (i / (2 * w), i % (2 * w));
                a + b * y as f32 + c * x as f32
            })
            .collect();
        let m = DofpMosaic::new(Map2d::from_vec(2 * h, 2 * w, data)).unwrap();
        let quad = demosaic(&m).unwrap();
        for ch in &quad.channels {
            for i in 0..h {
                for j in 0..w {
                    let expect = a + b * (2.0 * i as f32 + 0.5) + c * (2.0 * j as f32 + 0.5);
                    assert!((ch.get(i, j) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn demosaic_rejects_odd_extents() {
        let m = Map2d::from_vec(3, 4, vec![0.0; 12]);
        assert!(DofpMosaic::new(m).is_err());
    }

    #[test]
    fn impulse_stays_in_its_own_channel() {
        let (h, w) = (4, 4);
        let mut m = vec![0.0f32; 64];
        // impulse at a 0-degree site (even row, even col): mosaic (2,2)
        m[2 * 8 + 2] = 1.0;
        let quad = demosaic(&DofpMosaic::new(Map2d::from_vec(2 * h, 2 * w, m)).unwrap()).unwrap();
        let energy: f32 = quad.i0().data().iter().sum();
        assert!(energy > 0.5);
        for ch in &quad.channels[1..] {
            assert!(ch.data().iter().all(|&v| v == 0.0));
        }
        // the bilinear stencil around sub-site (1,1) touches quad rows/cols
        // {0,1} only; everything else stays zero
        for i in 0..h {
            for j in 0..w {
                let v = quad.i0().get(i, j);
                if i <= 1 && j <= 1 {
                    assert!(v > 0.0, "expected footprint at ({i},{j})");
                } else {
                    assert_eq!(v, 0.0, "leak at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn mosaic_demosaic_close_on_smooth_images() {
        let (h, w) = (16, 16);
        let mut chans = Vec::new();
        for k in 0..4 {
            let data: Vec<f32> = (0..h * w)
                .map(|i| {
                    let (r, c) = ((i / w) as f32, (i % w) as f32);
                    0.5 + 0.3 * ((r * 0.3 + k as f32).sin() * (c * 0.25).cos())
                })
                .collect();
            chans.push(Map2d::from_vec(h, w, data));
        }
        let [c0, c1, c2, c3] = <[Map2d; 4]>::try_from(chans).unwrap();
        let q = IntensityQuad::new([c0, c1, c2, c3]).unwrap();
        let back = demosaic(&mosaic(&q)).unwrap();
        let mut err = 0.0f64;
        let mut n = 0usize;
        for (a, b) in q.channels.iter().zip(&back.channels) {
            for (x, y) in a.data().iter().zip(b.data()) {
                err += (x - y).abs() as f64;
                n += 1;
            }
        }
        assert!(err / n as f64 <= 0.05, "mean abs err {}", err / n as f64);
    }

    #[test]
    fn normalize_endpoint_mapping() {
        let p = polarization_maps(&quad_from_pixels([1.0, 0.5, 0.0, 0.5]));
        let n = normalize_maps(&p);
        // S1 = 1 -> 1.0; fully horizontal polarization
        assert_eq!(n.stokes[1].data()[0], 1.0);
        assert_eq!(n.aolp.data()[0], 0.0);
        let p = polarization_maps(&quad_from_pixels([0.0, 0.5, 1.0, 0.5]));
        let n = normalize_maps(&p);
        // S1 = -1 -> 0.0; aolp pi/2 -> 0.5
        assert_eq!(n.stokes[1].data()[0], 0.0);
        assert!((n.aolp.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn unpolarized_scene_normalizes_to_midpoints() {
        let c = 0.4;
        let p = polarization_maps(&quad_from_pixels([c, c, c, c]));
        let n = normalize_maps(&p);
        assert!((n.intensity.data()[0] - c).abs() < 1e-6);
        assert_eq!(n.stokes[1].data()[0], 0.5);
        assert_eq!(n.stokes[2].data()[0], 0.5);
        assert_eq!(n.dolp.data()[0], 0.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn malus_recovers_angle_and_full_dolp(phi in 0.0f32..std::f32::consts::PI) {
                let q = malus_quad(1, 1, phi, 1.0, 0.0);
                let p = polarization_maps(&q);
                prop_assert!((p.dolp.data()[0] - 1.0).abs() < 1e-5);
                let a = p.aolp.data()[0];
                let diff = (a - phi).abs();
                let wrapped = diff.min((std::f32::consts::PI - diff).abs());
                prop_assert!(wrapped < 1e-5, "aolp {a} vs phi {phi}");
            }

            #[test]
            fn stokes_is_linear(
                q1 in proptest::array::uniform4(0.0f32..1.0),
                q2 in proptest::array::uniform4(0.0f32..1.0),
                alpha in 0.0f32..2.0,
                beta in 0.0f32..2.0,
            ) {
                let combo: [f32; 4] =
                    std::array::from_fn(|i| alpha * q1[i] + beta * q2[i]);
                let s_combo = stokes_from_quad(&quad_from_pixels(combo));
                let s1 = stokes_from_quad(&quad_from_pixels(q1));
                let s2 = stokes_from_quad(&quad_from_pixels(q2));
                let components = |s: &StokesMap| {
                    [s.s0.data()[0], s.s1.data()[0], s.s2.data()[0]]
                };
                let (c_combo, c1, c2) = (components(&s_combo), components(&s1), components(&s2));
                for i in 0..3 {
                    let rhs = alpha * c1[i] + beta * c2[i];
                    prop_assert!((c_combo[i] - rhs).abs() < 1e-5, "s{i}: {} vs {rhs}", c_combo[i]);
                }
            }

            #[test]
            fn aolp_in_range_dolp_in_unit_interval(
                vals in proptest::array::uniform4(0.0f32..1.0),
            ) {
                let p = polarization_maps(&quad_from_pixels(vals));
                let a = p.aolp.data()[0];
                prop_assert!((0.0..std::f32::consts::PI).contains(&a));
                let d = p.dolp.data()[0];
                prop_assert!((0.0..=1.0).contains(&d));
            }
        }
    }
}
