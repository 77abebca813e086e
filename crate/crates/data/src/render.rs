//! Malus-law scene rendering with 4x supersampling and seeded sensor noise.

use crate::{cfg_err, Result};
use pvfi_polar::{IntensityQuad, Map2d, ANGLES_DEG};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Motion scenario of one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneKind {
    /// Six polarizer sectors on a ring, transmission axes 0..150 degrees in
    /// 30-degree steps at frame 0, rotating rigidly with the ring.
    Rotation {
        /// Degrees per frame.
        angular_velocity_deg: f32,
        /// Annulus radii as fractions of the smaller image extent.
        inner_radius: f32,
        outer_radius: f32,
    },
    /// Parallel polarizer stripes whose axes match the stripe direction,
    /// translating rigidly.
    Translation {
        /// Stripe direction (and polarizer axis), degrees.
        stripe_angle_deg: f32,
        /// Stripe period in pixels (half covered, half background).
        stripe_period: f32,
        /// Translation per frame along the stripe normal, pixels.
        velocity: f32,
    },
}

/// Concrete parameters of one rendered clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    /// Frames in the clip; at least 7 for septuplet sampling.
    pub frames: usize,
    /// Gaussian noise sigma added per angle channel (then clamped to [0,1]).
    pub noise_sigma: f32,
    /// Unpolarized background: each analyzer sees background/2.
    pub background: f32,
    /// Source intensity of polarizer elements.
    pub source_intensity: f32,
    /// Unpolarized fraction of the element light (keeps DoLP < 1 and
    /// intensities > 0; 0.005 leaves recovered DoLP at 0.995).
    pub unpolarized_floor: f32,
    /// Seed for this clip's sensor noise.
    pub noise_seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 7 {
            return Err(cfg_err("a clip needs at least 7 frames"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(cfg_err("scene extents must be at least 8 x 8"));
        }
        let finite = [
            self.noise_sigma,
            self.background,
            self.source_intensity,
            self.unpolarized_floor,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(cfg_err("scene parameters must be finite"));
        }
        match &self.kind {
            SceneKind::Rotation {
                angular_velocity_deg,
                inner_radius,
                outer_radius,
            } => {
                if !angular_velocity_deg.is_finite() {
                    return Err(cfg_err("angular velocity must be finite"));
                }
                if !(0.0 < *inner_radius && inner_radius < outer_radius && *outer_radius <= 0.5) {
                    return Err(cfg_err("ring radii must satisfy 0 < inner < outer <= 0.5"));
                }
            }
            SceneKind::Translation {
                stripe_period,
                velocity,
                stripe_angle_deg,
            } => {
                if !(stripe_period.is_finite() && *stripe_period >= 2.0) {
                    return Err(cfg_err("stripe period must be >= 2 px"));
                }
                if !velocity.is_finite() || !stripe_angle_deg.is_finite() {
                    return Err(cfg_err("translation parameters must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// One stored frame: `channels` planes of H x W samples, flat `[C, H, W]`.
#[derive(Clone, Debug)]
pub struct FrameBuf {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Polarizer axis (radians) covering the sub-pixel position, if any.
/// `t` is the frame index.
fn element_axis(spec: &SceneSpec, kind: &SceneKind, y: f32, x: f32, t: f32) -> Option<f32> {
    match kind {
        SceneKind::Rotation {
            angular_velocity_deg,
            inner_radius,
            outer_radius,
        } => {
            let cy = spec.height as f32 / 2.0;
            let cx = spec.width as f32 / 2.0;
            let (dy, dx) = (y - cy, x - cx);
            let r = (dy * dy + dx * dx).sqrt();
            let min_extent = spec.height.min(spec.width) as f32;
            if r < inner_radius * min_extent || r > outer_radius * min_extent {
                return None;
            }
            let omega = angular_velocity_deg.to_radians() * t;
            // sector boundaries rotate with the ring
            let azimuth = (dy.atan2(dx) - omega).rem_euclid(std::f32::consts::TAU);
            let sector = (azimuth / (std::f32::consts::TAU / 6.0)).floor() as usize % 6;
            // sector k carries a polarizer at k*30 degrees, rotated with
            // the object
            Some(sector as f32 * 30f32.to_radians() + omega)
        }
        SceneKind::Translation {
            stripe_angle_deg,
            stripe_period,
            velocity,
        } => {
            let a = stripe_angle_deg.to_radians();
            // signed distance along the stripe normal, shifted per frame
            let normal = (-a.sin(), a.cos());
            let p = (y * normal.0 + x * normal.1 - velocity * t) / stripe_period;
            let frac = p.rem_euclid(1.0);
            if frac < 0.5 {
                Some(a)
            } else {
                None
            }
        }
    }
}

/// Render the four analyzer intensities of one frame.
///
/// A covered sub-sample emits Malus's law around the element axis phi:
/// I(theta) = I_src (u/2 + (1-u) cos^2(theta - phi)); the background emits
/// unpolarized background/2. Four sub-samples per pixel, then Gaussian
/// noise, then a clamp to [0, 1].
pub fn render_frame(spec: &SceneSpec, frame_idx: usize) -> Result<IntensityQuad> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let t = frame_idx as f32;
    let u = spec.unpolarized_floor;
    let mut channels: Vec<Vec<f32>> = (0..4).map(|_| vec![0.0f32; h * w]).collect();
    let thetas: Vec<f32> = ANGLES_DEG.iter().map(|a| (*a as f32).to_radians()).collect();
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f32; 4];
            for sy in 0..2 {
                for sx in 0..2 {
                    let y = r as f32 + (sy as f32 + 0.5) / 2.0;
                    let x = c as f32 + (sx as f32 + 0.5) / 2.0;
                    match element_axis(spec, &spec.kind, y, x, t) {
                        Some(phi) => {
                            for (k, theta) in thetas.iter().enumerate() {
                                let cos = (theta - phi).cos();
                                acc[k] += spec.source_intensity
                                    * (0.5 * u + (1.0 - u) * cos * cos);
                            }
                        }
                        None => {
                            for a in &mut acc {
                                *a += spec.background * 0.5;
                            }
                        }
                    }
                }
            }
            for (k, ch) in channels.iter_mut().enumerate() {
                ch[r * w + c] = acc[k] / 4.0;
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(spec.noise_seed ^ (frame_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for ch in channels.iter_mut() {
            for v in ch.iter_mut() {
                *v += spec.noise_sigma * normal(&mut rng);
            }
        }
    }
    for ch in channels.iter_mut() {
        for v in ch.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    let maps: Vec<Map2d> = channels
        .into_iter()
        .map(|data| Map2d::from_vec(h, w, data))
        .collect();
    let [a, b, c, d] = <[Map2d; 4]>::try_from(maps).expect("four channels");
    Ok(IntensityQuad::new([a, b, c, d])?)
}

/// Standard normal via Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use pvfi_polar::polarization_maps;

    pub(crate) fn rotation_spec(omega: f32, sigma: f32) -> SceneSpec {
        SceneSpec {
            kind: SceneKind::Rotation {
                angular_velocity_deg: omega,
                inner_radius: 0.25,
                outer_radius: 0.45,
            },
            height: 64,
            width: 64,
            frames: 8,
            noise_sigma: sigma,
            background: 0.25,
            source_intensity: 0.9,
            unpolarized_floor: 0.005,
            noise_seed: 7,
        }
    }

    /// Pixel at the angular center of sector `k`, mid-annulus, frame 0.
    fn sector_probe(spec: &SceneSpec, k: usize) -> (usize, usize) {
        let (inner, outer) = match spec.kind {
            SceneKind::Rotation {
                inner_radius,
                outer_radius,
                ..
            } => (inner_radius, outer_radius),
            _ => unreachable!(),
        };
        let min_extent = spec.height.min(spec.width) as f32;
        let r = 0.5 * (inner + outer) * min_extent;
        let az = (k as f32 + 0.5) * std::f32::consts::TAU / 6.0;
        let y = spec.height as f32 / 2.0 + r * az.sin();
        let x = spec.width as f32 / 2.0 + r * az.cos();
        (y as usize, x as usize)
    }

    #[test]
    fn sector_zero_is_horizontal_polarizer() {
        let spec = rotation_spec(0.0, 0.0);
        let quad = render_frame(&spec, 0).unwrap();
        let (r, c) = sector_probe(&spec, 0);
        let vals: Vec<f32> = quad.channels.iter().map(|ch| ch.get(r, c)).collect();
        // Malus at phi = 0: proportional to (1, 0.5, 0, 0.5) plus the floor
        let i_src = spec.source_intensity;
        let u = spec.unpolarized_floor;
        let expect = [
            i_src * (0.5 * u + (1.0 - u)),
            i_src * (0.5 * u + (1.0 - u) * 0.5),
            i_src * (0.5 * u),
            i_src * (0.5 * u + (1.0 - u) * 0.5),
        ];
        for (v, e) in vals.iter().zip(&expect) {
            assert!((v - e).abs() < 1e-5, "{vals:?} vs {expect:?}");
        }
        // recovered AoLP is 0, DoLP is 1 - u
        let p = polarization_maps(&quad);
        let a = p.aolp.get(r, c);
        assert!(a.min(std::f32::consts::PI - a) < 1e-4, "aolp {a}");
        assert!((p.dolp.get(r, c) - (1.0 - u)).abs() < 1e-4);
    }

    #[test]
    fn every_sector_angle_matches_layout_at_frame_zero() {
        let spec = rotation_spec(0.0, 0.0);
        let quad = render_frame(&spec, 0).unwrap();
        let p = polarization_maps(&quad);
        for k in 0..6 {
            let (r, c) = sector_probe(&spec, k);
            let expect = (k as f32 * 30.0).to_radians();
            let a = p.aolp.get(r, c);
            let d = (a - expect).abs();
            let wrapped = d.min(std::f32::consts::PI - d);
            assert!(wrapped < 1e-3, "sector {k}: aolp {a} expect {expect}");
        }
    }

    #[test]
    fn rotation_advances_aolp_with_the_object() {
        let omega = 30.0f32;
        let spec = rotation_spec(omega, 0.0);
        let q0 = render_frame(&spec, 0).unwrap();
        let q1 = render_frame(&spec, 1).unwrap();
        // track the sector-0 element: after 30 degrees of rotation its
        // center moved by 30 degrees of azimuth and its axis gained 30
        let p0 = polarization_maps(&q0);
        let p1 = polarization_maps(&q1);
        let (r0, c0) = sector_probe(&spec, 0);
        // probe the rotated element position
        let min_extent = 64f32;
        let r = 0.5 * (0.25 + 0.45) * min_extent;
        let az = 0.5 * std::f32::consts::TAU / 6.0 + omega.to_radians();
        let (r1, c1) = (
            (32.0 + r * az.sin()) as usize,
            (32.0 + r * az.cos()) as usize,
        );
        let a0 = p0.aolp.get(r0, c0);
        let a1 = p1.aolp.get(r1, c1);
        let delta = (a1 - a0).rem_euclid(std::f32::consts::PI);
        assert!(
            (delta - omega.to_radians()).abs() < 1e-3,
            "aolp shift {delta} expect {}",
            omega.to_radians()
        );
    }

    #[test]
    fn translation_keeps_aolp_but_moves_content() {
        let spec = SceneSpec {
            kind: SceneKind::Translation {
                stripe_angle_deg: 40.0,
                stripe_period: 16.0,
                velocity: 3.0,
            },
            height: 48,
            width: 48,
            frames: 8,
            noise_sigma: 0.0,
            background: 0.2,
            source_intensity: 0.8,
            unpolarized_floor: 0.005,
            noise_seed: 1,
        };
        let q0 = render_frame(&spec, 0).unwrap();
        let q1 = render_frame(&spec, 1).unwrap();
        // frames differ (content moved)
        let moved = q0
            .i0()
            .data()
            .iter()
            .zip(q1.i0().data())
            .any(|(a, b)| (a - b).abs() > 0.05);
        assert!(moved);
        // wherever both frames are strongly polarized, AoLP agrees with the
        // stripe angle
        let p0 = polarization_maps(&q0);
        let p1 = polarization_maps(&q1);
        let expect = 40f32.to_radians();
        let mut checked = 0;
        for i in 0..p0.dolp.len() {
            if p0.dolp.data()[i] > 0.9 && p1.dolp.data()[i] > 0.9 {
                for p in [&p0, &p1] {
                    let a = p.aolp.data()[i];
                    let d = (a - expect).abs();
                    assert!(d.min(std::f32::consts::PI - d) < 1e-3, "aolp {a}");
                }
                checked += 1;
            }
        }
        assert!(checked > 50, "only {checked} strongly polarized pixels");
    }

    #[test]
    fn zero_velocity_clip_is_static() {
        let spec = rotation_spec(0.0, 0.0);
        let q0 = render_frame(&spec, 0).unwrap();
        let q5 = render_frame(&spec, 5).unwrap();
        for (a, b) in q0.channels.iter().zip(&q5.channels) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let spec = rotation_spec(10.0, 0.02);
        let a = render_frame(&spec, 3).unwrap();
        let b = render_frame(&spec, 3).unwrap();
        for (x, y) in a.i45().data().iter().zip(b.i45().data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let mut other = spec.clone();
        other.noise_seed = 8;
        let c = render_frame(&other, 3).unwrap();
        assert!(a.i45().data().iter().zip(c.i45().data()).any(|(x, y)| x != y));
    }
}
