//! Training losses for polarized interpolation.
//!
//! The intensity term is a plain L1; the Stokes, AoLP and DoLP terms run
//! the prediction and target through the differentiable polarization chain
//! (demosaicking first when frames are mosaics) and compare with a
//! root-mean-square reading of the L2 norm, so magnitudes stay comparable
//! across resolutions.

use crate::config::LossWeights;
use crate::{cfg_err, Result};
use pvfi_polar::diff;
use pvfi_tensor::Tensor;

/// Division guard for the DoLP chain; mandatory here because S0 near zero
/// otherwise drives the DoLP gradient unbounded.
const DOLP_EPS: f32 = 1e-6;

/// Mean absolute error over all elements.
pub fn loss_intensity(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(pred.sub(target)?.abs().mean_all()?)
}

fn rms(t: &Tensor) -> Result<Tensor> {
    Ok(t.square()?.mean_all()?.sqrt())
}

/// Mean over the three Stokes components of the RMS difference, Stokes
/// computed from the (demosaicked) quads.
pub fn loss_stokes(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let qp = diff::frame_to_quad(pred)?;
    let qt = diff::frame_to_quad(target)?;
    let (p0, p1, p2) = diff::stokes(&qp)?;
    let (t0, t1, t2) = diff::stokes(&qt)?;
    let r0 = rms(&p0.sub(&t0)?)?;
    let r1 = rms(&p1.sub(&t1)?)?;
    let r2 = rms(&p2.sub(&t2)?)?;
    Ok(r0.add(&r1)?.add(&r2)?.scale(1.0 / 3.0))
}

/// RMS difference of normalized AoLP maps (aolp / pi in [0, 1); the pi-wrap
/// is not treated as circular).
pub fn loss_aolp(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let qp = diff::frame_to_quad(pred)?;
    let qt = diff::frame_to_quad(target)?;
    let (_, p1, p2) = diff::stokes(&qp)?;
    let (_, t1, t2) = diff::stokes(&qt)?;
    rms(&diff::aolp_normalized(&p1, &p2)?.sub(&diff::aolp_normalized(&t1, &t2)?)?)
}

/// RMS difference of clamped DoLP maps.
pub fn loss_dolp(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let qp = diff::frame_to_quad(pred)?;
    let qt = diff::frame_to_quad(target)?;
    let (p0, p1, p2) = diff::stokes(&qp)?;
    let (t0, t1, t2) = diff::stokes(&qt)?;
    rms(&diff::dolp(&p0, &p1, &p2, DOLP_EPS)?.sub(&diff::dolp(&t0, &t1, &t2, DOLP_EPS)?)?)
}

/// Individual term values alongside the combined scalar.
pub struct LossTerms {
    pub intensity: f32,
    pub stokes: f32,
    pub aolp: f32,
    pub dolp: f32,
    pub total: Tensor,
}

/// Weighted combination; terms with zero weight are skipped entirely (and
/// reported as 0), which also sidesteps the DoLP instability when its
/// weight is zero.
pub fn loss_combined(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<LossTerms> {
    w.validate()?;
    let mut total: Option<Tensor> = None;
    let mut add = |term: &Tensor, weight: f32| -> Result<()> {
        let scaled = term.scale(weight);
        total = Some(match total.take() {
            Some(t) => t.add(&scaled)?,
            None => scaled,
        });
        Ok(())
    };
    let mut values = [0.0f32; 4];
    if w.intensity > 0.0 {
        let t = loss_intensity(pred, target)?;
        values[0] = t.item();
        add(&t, w.intensity)?;
    }
    if w.stokes > 0.0 {
        let t = loss_stokes(pred, target)?;
        values[1] = t.item();
        add(&t, w.stokes)?;
    }
    if w.aolp > 0.0 {
        let t = loss_aolp(pred, target)?;
        values[2] = t.item();
        add(&t, w.aolp)?;
    }
    if w.dolp > 0.0 {
        let t = loss_dolp(pred, target)?;
        values[3] = t.item();
        add(&t, w.dolp)?;
    }
    Ok(LossTerms {
        intensity: values[0],
        stokes: values[1],
        aolp: values[2],
        dolp: values[3],
        total: total.ok_or_else(|| cfg_err("no active loss term"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pvfi_tensor::Tape;
    use rand::{Rng, SeedableRng};

    fn random_quad(tape: &Tape, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..4 * h * w).map(|_| rng.gen_range(0.1..0.9)).collect();
        tape.leaf(data, &[4, h, w], false).unwrap()
    }

    #[test]
    fn every_loss_is_zero_at_equality_and_nonnegative_elsewhere() {
        let tape = Tape::new();
        let a = random_quad(&tape, 6, 6, 1);
        let b = random_quad(&tape, 6, 6, 2);
        for f in [loss_intensity, loss_stokes, loss_aolp, loss_dolp] {
            assert_eq!(f(&a, &a).unwrap().item(), 0.0);
            assert!(f(&a, &b).unwrap().item() >= 0.0);
        }
    }

    #[test]
    fn constant_offset_gives_l1_of_delta() {
        let tape = Tape::new();
        let a = tape.leaf(vec![0.5; 4 * 16], &[4, 4, 4], false).unwrap();
        let b = tape.leaf(vec![0.58; 4 * 16], &[4, 4, 4], false).unwrap();
        let l = loss_intensity(&a, &b).unwrap().item();
        assert!((l - 0.08).abs() < 1e-6);
    }

    #[test]
    fn swapping_i0_i90_touches_only_s1() {
        // pred = target with channels 0 and 2 exchanged: S0 and S2 agree,
        // the whole residual sits in S1
        let tape = Tape::new();
        let t = random_quad(&tape, 5, 5, 3);
        let swapped = {
            let d = t.data();
            let n = 25;
            let mut v = d.to_vec();
            for i in 0..n {
                v.swap(i, 2 * n + i);
            }
            tape.leaf(v, &[4, 5, 5], false).unwrap()
        };
        // hand value: S1 flips sign, so ||delta S1||_2 = rms(2 * s1)
        let (_, s1, _) = pvfi_polar::diff::stokes(&t).unwrap();
        let expect = s1
            .scale(2.0)
            .square()
            .unwrap()
            .mean_all()
            .unwrap()
            .sqrt()
            .item()
            / 3.0;
        let got = loss_stokes(&swapped, &t).unwrap().item();
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn quarter_turn_aolp_residual_is_half() {
        // fully polarized at theta vs theta + pi/2: normalized AoLP differs
        // by exactly 0.5 per pixel
        let tape = Tape::new();
        let theta = 0.4f32;
        let mk = |phi: f32| {
            let q = pvfi_polar::malus_quad(4, 4, phi, 1.0, 0.0);
            tape.leaf(q.to_flat(), &[4, 4, 4], false).unwrap()
        };
        let a = mk(theta);
        let b = mk(theta + std::f32::consts::FRAC_PI_2);
        let l = loss_aolp(&a, &b).unwrap().item();
        assert!((l - 0.5).abs() < 1e-5, "aolp residual {l}");
    }

    #[test]
    fn unpolarized_vs_polarized_dolp_residual_is_one() {
        let tape = Tape::new();
        let unpol = pvfi_polar::malus_quad(4, 4, 0.3, 1.0, 1.0);
        let pol = pvfi_polar::malus_quad(4, 4, 0.3, 1.0, 0.0);
        let a = tape.leaf(unpol.to_flat(), &[4, 4, 4], false).unwrap();
        let b = tape.leaf(pol.to_flat(), &[4, 4, 4], false).unwrap();
        let l = loss_dolp(&a, &b).unwrap().item();
        assert!((l - 1.0).abs() < 1e-5);
    }

    #[test]
    fn combined_matches_manual_weighting_and_is_linear_in_weights() {
        let tape = Tape::new();
        let a = random_quad(&tape, 6, 6, 4);
        let b = random_quad(&tape, 6, 6, 5);
        let w = LossWeights::default(); // (0.1, 1, 0, 0)
        let combo = loss_combined(&a, &b, &w).unwrap();
        let manual = 0.1 * loss_intensity(&a, &b).unwrap().item()
            + loss_stokes(&a, &b).unwrap().item();
        assert!((combo.total.item() - manual).abs() < 1e-7);

        // doubling the weights doubles the loss
        let w2 = LossWeights {
            intensity: 0.2,
            stokes: 2.0,
            aolp: 0.0,
            dolp: 0.0,
        };
        let c2 = loss_combined(&a, &b, &w2).unwrap();
        assert!((c2.total.item() - 2.0 * combo.total.item()).abs() < 1e-6);
    }

    #[test]
    fn intensity_only_weights_reduce_to_l1() {
        let tape = Tape::new();
        let a = random_quad(&tape, 4, 4, 6);
        let b = random_quad(&tape, 4, 4, 7);
        let combo = loss_combined(&a, &b, &LossWeights::intensity_only()).unwrap();
        assert!((combo.total.item() - loss_intensity(&a, &b).unwrap().item()).abs() < 1e-7);
    }

    #[test]
    fn ablation_rows_are_expressible() {
        // 0.7 L_I + 0.3 L_D and 0.9 L_I + 0.1 L_A from the loss ablation
        let tape = Tape::new();
        let a = random_quad(&tape, 4, 4, 8);
        let b = random_quad(&tape, 4, 4, 9);
        let w = LossWeights {
            intensity: 0.7,
            stokes: 0.0,
            aolp: 0.0,
            dolp: 0.3,
        };
        let combo = loss_combined(&a, &b, &w).unwrap();
        let manual = 0.7 * loss_intensity(&a, &b).unwrap().item()
            + 0.3 * loss_dolp(&a, &b).unwrap().item();
        assert!((combo.total.item() - manual).abs() < 1e-7);
    }

    #[test]
    fn losses_accept_mosaic_frames() {
        let tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let data: Vec<f32> = (0..144).map(|_| rng.gen_range(0.1..0.9f32)).collect();
            tape.leaf(data, &[1, 12, 12], false).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        assert!(loss_stokes(&a, &b).unwrap().item() > 0.0);
        assert_eq!(loss_dolp(&a, &a).unwrap().item(), 0.0);
    }

    #[test]
    fn stokes_loss_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let base: Vec<f32> = (0..4 * 64).map(|_| rng.gen_range(0.2..0.8)).collect();
        let target: Vec<f32> = (0..4 * 64).map(|_| rng.gen_range(0.2..0.8)).collect();
        let eval = |data: Vec<f32>, grad: bool| -> (f32, Option<Vec<f32>>) {
            let tape = Tape::new();
            let p = tape.leaf(data, &[4, 8, 8], grad).unwrap();
            let t = tape.leaf(target.clone(), &[4, 8, 8], false).unwrap();
            let l = loss_stokes(&p, &t).unwrap();
            if grad {
                let g = l.backward().unwrap().get(&p).unwrap().to_vec();
                (l.item(), Some(g))
            } else {
                (l.item(), None)
            }
        };
        let (_, g) = eval(base.clone(), true);
        let g = g.unwrap();
        let step = 1e-3;
        for i in (0..base.len()).step_by(37) {
            if g[i].abs() < 1e-4 {
                continue;
            }
            let mut p = base.clone();
            p[i] += step;
            let mut m = base.clone();
            m[i] -= step;
            let fd = (eval(p, false).0 - eval(m, false).0) / (2.0 * step);
            assert!(
                (g[i] - fd).abs() <= 1e-2 * g[i].abs().max(fd.abs()) + 2e-4,
                "elem {i}: {} vs {fd}",
                g[i]
            );
        }
    }
}
