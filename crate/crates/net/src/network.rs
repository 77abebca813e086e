//! The full interpolation network: embedding, cascaded multi-scale
//! transformer stages, long identity mapping, and the synthesis head that
//! collapses six frames into the middle one.

use crate::attention::{swin_block, AttentionWeights, MaskCache, SubBlockWeights, SwinBlockWeights};
use crate::config::ModelConfig;
use crate::params::ModelParams;
use crate::{cfg_err, Result};
use pvfi_tensor::{Tape, Tensor};
use std::collections::HashMap;

/// Configuration plus materialized parameters.
pub struct Model {
    cfg: ModelConfig,
    params: ModelParams,
    masks: MaskCache,
}

/// Parameters registered as leaves on one tape, in registry order.
pub struct BoundModel {
    pub leaves: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl BoundModel {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.leaves[i])
            .ok_or_else(|| cfg_err(format!("unbound parameter {name}")))
    }

    fn sub_block(&self, prefix: &str) -> Result<SubBlockWeights> {
        let g = |n: &str| self.get(&format!("{prefix}.{n}")).cloned();
        Ok(SubBlockWeights {
            ln1_g: g("ln1.g")?,
            ln1_b: g("ln1.b")?,
            attn: AttentionWeights {
                wq: g("wq")?,
                wk: g("wk")?,
                wv: g("wv")?,
                wo: g("wo")?,
                scale: g("d")?,
                pos1_w: g("pos1.w")?,
                pos1_b: g("pos1.b")?,
                pos2_w: g("pos2.w")?,
                pos2_b: g("pos2.b")?,
            },
            ln2_g: g("ln2.g")?,
            ln2_b: g("ln2.b")?,
            ffn1_w: g("ffn1.w")?,
            ffn1_b: g("ffn1.b")?,
            ffn2_w: g("ffn2.w")?,
            ffn2_b: g("ffn2.b")?,
        })
    }

    fn block(&self, prefix: &str) -> Result<SwinBlockWeights> {
        Ok(SwinBlockWeights {
            sub: [
                self.sub_block(&format!("{prefix}.a"))?,
                self.sub_block(&format!("{prefix}.b"))?,
            ],
        })
    }
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&cfg, seed)?;
        Ok(Self {
            cfg,
            params,
            masks: MaskCache::default(),
        })
    }

    pub fn from_parts(cfg: ModelConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            params,
            masks: MaskCache::default(),
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Register every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &Tape) -> Result<BoundModel> {
        self.bind_with_grad(tape, true)
    }

    pub fn bind_with_grad(&self, tape: &Tape, requires_grad: bool) -> Result<BoundModel> {
        let mut leaves = Vec::with_capacity(self.params.len());
        let mut index = HashMap::with_capacity(self.params.len());
        for (spec, data) in self.params.iter() {
            let t = tape.leaf(data.to_vec(), &spec.shape, requires_grad)?;
            index.insert(spec.name.clone(), leaves.len());
            leaves.push(t);
        }
        Ok(BoundModel { leaves, index })
    }

    /// `[B, T, H, W, D] -> [B, T, H/2, W/2, 2D]` strided convolution.
    fn downsample(&self, bound: &BoundModel, x: &Tensor, stage: usize, level: usize) -> Result<Tensor> {
        let w = bound.get(&format!("stage{stage}.down{level}.w"))?;
        let b = bound.get(&format!("stage{stage}.down{level}.b"))?;
        let conv_in = x.permute(&[0, 4, 1, 2, 3])?;
        let out = conv_in.conv3d(w, Some(b), (1, 2, 2), (0, 0, 0), 1)?;
        Ok(out.permute(&[0, 2, 3, 4, 1])?)
    }

    /// `[B, T, H, W, 2D] -> [B, T, 2H, 2W, D]` transposed convolution.
    fn upsample(&self, bound: &BoundModel, x: &Tensor, stage: usize, level: usize) -> Result<Tensor> {
        let w = bound.get(&format!("stage{stage}.up{level}.w"))?;
        let b = bound.get(&format!("stage{stage}.up{level}.b"))?;
        let conv_in = x.permute(&[0, 4, 1, 2, 3])?;
        let out = conv_in.conv_transpose3d(w, Some(b), (1, 2, 2), (0, 0, 0), 1)?;
        Ok(out.permute(&[0, 2, 3, 4, 1])?)
    }

    /// Concatenate the skip along depth and halve it with a 1x1x1 conv.
    fn fuse_skip(
        &self,
        bound: &BoundModel,
        up: &Tensor,
        skip: &Tensor,
        stage: usize,
        level: usize,
    ) -> Result<Tensor> {
        let cat = Tensor::concat(&[up, skip], 4)?;
        let s = cat.shape().to_vec();
        let d2 = *s.last().expect("depth axis");
        let rows = cat.numel() / d2;
        let d = d2 / 2;
        let w = bound.get(&format!("stage{stage}.fuse{level}.w"))?;
        let b = bound.get(&format!("stage{stage}.fuse{level}.b"))?;
        // the 1x1x1 kernel acts per token; run it as a linear map
        let w_lin = w.reshape(&[d, d2])?.permute(&[1, 0])?;
        let out = cat.reshape(&[rows, d2])?.linear(&w_lin, Some(b))?;
        let mut out_shape = s;
        *out_shape.last_mut().expect("depth axis") = d;
        Ok(out.reshape(&out_shape)?)
    }

    /// One stage: encoder of Swin blocks with downsampling, then the
    /// mirrored decoder with skip fusion. Shape-preserving.
    pub fn multi_scale_transformer(
        &self,
        tape: &Tape,
        bound: &BoundModel,
        x: &Tensor,
        stage: usize,
    ) -> Result<Tensor> {
        let l_count = self.cfg.scales;
        let mut feats = x.clone();
        let mut skips: Vec<Tensor> = Vec::with_capacity(l_count.saturating_sub(1));
        for level in 0..l_count {
            let acfg = self.cfg.attention_at(level);
            let block = bound.block(&format!("stage{stage}.enc{level}"))?;
            feats = swin_block(tape, &feats, &acfg, &block, &self.masks)?;
            if level + 1 < l_count {
                skips.push(feats.clone());
                feats = self.downsample(bound, &feats, stage, level)?;
            }
        }
        for level in (0..l_count.saturating_sub(1)).rev() {
            feats = self.upsample(bound, &feats, stage, level)?;
            feats = self.fuse_skip(bound, &feats, &skips[level], stage, level)?;
            let acfg = self.cfg.attention_at(level);
            let block = bound.block(&format!("stage{stage}.dec{level}"))?;
            feats = swin_block(tape, &feats, &acfg, &block, &self.masks)?;
        }
        Ok(feats)
    }

    /// Interpolate the middle frame from `frames: [6, C, H, W]` (or a batch
    /// `[B, 6, C, H, W]`, producing `[B, C, H, W]`).
    ///
    /// Pipeline: embed, N_s cascaded stages, long identity mapping, 3D conv
    /// head with temporal collapse, plus the fixed pixel-space average of
    /// the two center frames (which the zero-initialized head reproduces
    /// exactly at initialization).
    pub fn forward_with(&self, tape: &Tape, bound: &BoundModel, frames: &Tensor) -> Result<Tensor> {
        let s_in = frames.shape().to_vec();
        let (frames, batched) = match s_in.len() {
            4 => (
                frames.reshape(&[1, s_in[0], s_in[1], s_in[2], s_in[3]])?,
                false,
            ),
            5 => (frames.clone(), true),
            _ => {
                return Err(cfg_err(format!(
                    "expected [6, C, H, W] or [B, 6, C, H, W], got {s_in:?}"
                )))
            }
        };
        let s = frames.shape().to_vec();
        if s[1] != self.cfg.frames {
            return Err(cfg_err(format!(
                "expected {} input frames, got {}",
                self.cfg.frames, s[1]
            )));
        }
        let (b, c, h, w) = (s[0], s[2], s[3], s[4]);
        if c != self.cfg.channels {
            return Err(cfg_err(format!(
                "expected {} channels, got {c}",
                self.cfg.channels
            )));
        }
        // fixed non-learned reference: the average of I0 and I1
        let i0 = frames
            .slice(&[(0, b), (2, 3), (0, c), (0, h), (0, w)])?
            .reshape(&[b, c, h, w])?;
        let i1 = frames
            .slice(&[(0, b), (4, 5), (0, c), (0, h), (0, w)])?
            .reshape(&[b, c, h, w])?;
        let identity_ref = i0.add(&i1)?.scale(0.5);

        let m = self.cfg.spatial_multiple();
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let mut x = frames.permute(&[0, 2, 1, 3, 4])?; // [B, C, T, H, W]
        if (hp, wp) != (h, w) {
            x = x.pad(&[(0, 0), (0, 0), (0, 0), (0, hp - h), (0, wp - w)])?;
        }
        let embed_w = bound.get("embed.w")?;
        let embed_b = bound.get("embed.b")?;
        let embedded = x.conv3d(embed_w, Some(embed_b), (1, 1, 1), (1, 1, 1), 1)?;
        let lattice = embedded.permute(&[0, 2, 3, 4, 1])?; // [B, T, H, W, D]

        let mut feats = lattice.clone();
        for stage in 0..self.cfg.stages {
            feats = self.multi_scale_transformer(tape, bound, &feats, stage)?;
        }
        // long identity mapping back to the embedded input features
        feats = feats.add(&lattice)?;

        let head_in = feats.permute(&[0, 4, 1, 2, 3])?;
        let out_w = bound.get("head.out.w")?;
        let out_b = bound.get("head.out.b")?;
        let synth = head_in.conv3d(out_w, Some(out_b), (1, 1, 1), (0, 0, 0), 1)?;
        let synth = synth.reshape(&[b, c, hp, wp])?;
        let synth = if (hp, wp) != (h, w) {
            synth.slice(&[(0, b), (0, c), (0, h), (0, w)])?
        } else {
            synth
        };
        let out = synth.add(&identity_ref)?;
        if batched {
            Ok(out)
        } else {
            Ok(out.reshape(&[c, h, w])?)
        }
    }

    pub fn forward(&self, tape: &Tape, frames: &Tensor) -> Result<Tensor> {
        let bound = self.bind_with_grad(tape, false)?;
        self.forward_with(tape, &bound, frames)
    }

    /// Plain inference on a flat `[6, C, H, W]` buffer.
    pub fn infer(&self, frames: &[f32], c: usize, h: usize, w: usize) -> Result<Vec<f32>> {
        let tape = Tape::new();
        let input = tape.leaf(frames.to_vec(), &[self.cfg.frames, c, h, w], false)?;
        let out = self.forward(&tape, &input)?;
        Ok(out.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            stages: 1,
            scales: 2,
            base_width: 8,
            heads: vec![2, 4],
            cube: [2, 2, 2],
            channels: 4,
            frames: 6,
            pos_depthwise: true,
        }
    }

    fn random_frames(c: usize, h: usize, w: usize, seed: u64) -> Vec<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..6 * c * h * w).map(|_| rng.gen_range(0.0..1.0f32)).collect()
    }

    #[test]
    fn shape_contract_in_to_out() {
        let model = Model::new(tiny_cfg(), 1).unwrap();
        let out = model.infer(&random_frames(4, 12, 10, 2), 4, 12, 10).unwrap();
        assert_eq!(out.len(), 4 * 12 * 10);
    }

    #[test]
    fn arity_and_channel_errors() {
        let model = Model::new(tiny_cfg(), 1).unwrap();
        let tape = Tape::new();
        let five = tape.zeros(&[5, 4, 8, 8]);
        assert!(model.forward(&tape, &five).is_err());
        let wrong_c = tape.zeros(&[6, 3, 8, 8]);
        assert!(model.forward(&tape, &wrong_c).is_err());
    }

    #[test]
    fn zero_initialized_head_returns_center_average() {
        let model = Model::new(tiny_cfg(), 5).unwrap();
        let frames = random_frames(4, 8, 8, 3);
        let out = model.infer(&frames, 4, 8, 8).unwrap();
        let n = 4 * 8 * 8;
        for i in 0..n {
            let expect = 0.5 * (frames[2 * n + i] + frames[4 * n + i]);
            assert!(
                (out[i] - expect).abs() < 1e-6,
                "pixel {i}: {} vs {expect}",
                out[i]
            );
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::new(tiny_cfg(), 9).unwrap();
        let frames = random_frames(4, 10, 8, 4);
        let a = model.infer(&frames, 4, 10, 8).unwrap();
        let b = model.infer(&frames, 4, 10, 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn single_scale_reduces_to_one_block() {
        let cfg = ModelConfig {
            scales: 1,
            heads: vec![2],
            ..tiny_cfg()
        };
        let model = Model::new(cfg, 1).unwrap();
        let out = model.infer(&random_frames(4, 8, 8, 6), 4, 8, 8).unwrap();
        assert_eq!(out.len(), 4 * 8 * 8);
    }

    #[test]
    fn mosaic_channel_mode_works() {
        let cfg = ModelConfig {
            channels: 1,
            ..tiny_cfg()
        };
        let model = Model::new(cfg, 1).unwrap();
        let out = model.infer(&random_frames(1, 16, 16, 7), 1, 16, 16).unwrap();
        assert_eq!(out.len(), 16 * 16);
    }

    #[test]
    fn encoder_extents_follow_stride_arithmetic() {
        // probe the internals: downsample twice from 16x16 at widths 8, 16
        let cfg = ModelConfig {
            scales: 3,
            heads: vec![2, 2, 2],
            ..tiny_cfg()
        };
        let model = Model::new(cfg, 1).unwrap();
        let tape = Tape::new();
        let bound = model.bind_with_grad(&tape, false).unwrap();
        let x = tape.zeros(&[1, 6, 16, 16, 8]);
        let d0 = model.downsample(&bound, &x, 0, 0).unwrap();
        assert_eq!(d0.shape(), &[1, 6, 8, 8, 16]);
        let d1 = model.downsample(&bound, &d0, 0, 1).unwrap();
        assert_eq!(d1.shape(), &[1, 6, 4, 4, 32]);
        let u = model.upsample(&bound, &d1, 0, 1).unwrap();
        assert_eq!(u.shape(), &[1, 6, 8, 8, 16]);
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let model = Model::new(tiny_cfg(), 21).unwrap();
        let f0 = random_frames(4, 8, 8, 31);
        let f1 = random_frames(4, 8, 8, 32);
        let tape = Tape::new();
        let mut both = f0.clone();
        both.extend_from_slice(&f1);
        let batch = tape.leaf(both, &[2, 6, 4, 8, 8], false).unwrap();
        let bound = model.bind_with_grad(&tape, false).unwrap();
        let out = model.forward_with(&tape, &bound, &batch).unwrap();
        assert_eq!(out.shape(), &[2, 4, 8, 8]);
        let a = model.infer(&f0, 4, 8, 8).unwrap();
        let b = model.infer(&f1, 4, 8, 8).unwrap();
        let n = 4 * 8 * 8;
        for i in 0..n {
            assert!((out.data()[i] - a[i]).abs() < 1e-6);
            assert!((out.data()[n + i] - b[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        // perturb the zero-initialized head so gradients pass through it
        let mut model = Model::new(tiny_cfg(), 11).unwrap();
        let head_idx = model
            .params()
            .specs()
            .iter()
            .position(|s| s.name == "head.out.w")
            .unwrap();
        for (i, v) in model.params_mut().buffer_mut(head_idx).iter_mut().enumerate() {
            *v = 0.01 * ((i % 7) as f32 - 3.0);
        }
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let frames = tape
            .leaf(random_frames(4, 8, 8, 13), &[6, 4, 8, 8], false)
            .unwrap();
        let out = model.forward_with(&tape, &bound, &frames).unwrap();
        let loss = out.square().unwrap().mean_all().unwrap();
        let grads = loss.backward().unwrap();
        for (leaf, spec) in bound.leaves.iter().zip(model.params().specs()) {
            let g = grads
                .get(leaf)
                .unwrap_or_else(|| panic!("no grad for {}", spec.name));
            assert!(
                g.iter().any(|&v| v != 0.0),
                "gradient identically zero for {}",
                spec.name
            );
        }
    }
}
