//! Named parameter registry: one ordered walk drives allocation,
//! initialization, counting, checkpoint layout, and optimizer state.

use crate::config::ModelConfig;
use crate::{cfg_err, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Truncated normal, sigma 0.02, resampled beyond two sigma.
    TruncNormal,
    /// Uniform in +-1/sqrt(fan_in) where fan_in is the per-output input
    /// count of the convolution kernel.
    FanInUniform,
    Zeros,
    Ones,
    /// The attention scale d, initialized to sqrt(head width).
    Const(f32),
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn spec(name: String, shape: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { name, shape, init }
}

fn sub_block_specs(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig, level: usize) {
    let a = cfg.attention_at(level);
    let d = a.width;
    let dh = a.head_width();
    let k = [3usize, 3, 3];
    let pos_in = d / a.pos_groups;
    let p = |n: &str| format!("{prefix}.{n}");
    out.push(spec(p("ln1.g"), vec![d], Init::Ones));
    out.push(spec(p("ln1.b"), vec![d], Init::Zeros));
    for w in ["wq", "wk", "wv", "wo"] {
        out.push(spec(p(w), vec![d, d], Init::TruncNormal));
    }
    out.push(spec(p("d"), vec![1], Init::Const((dh as f32).sqrt())));
    out.push(spec(p("pos1.w"), vec![d, pos_in, k[0], k[1], k[2]], Init::FanInUniform));
    out.push(spec(p("pos1.b"), vec![d], Init::Zeros));
    out.push(spec(p("pos2.w"), vec![d, pos_in, k[0], k[1], k[2]], Init::FanInUniform));
    out.push(spec(p("pos2.b"), vec![d], Init::Zeros));
    out.push(spec(p("ln2.g"), vec![d], Init::Ones));
    out.push(spec(p("ln2.b"), vec![d], Init::Zeros));
    out.push(spec(p("ffn1.w"), vec![d, 2 * d], Init::TruncNormal));
    out.push(spec(p("ffn1.b"), vec![2 * d], Init::Zeros));
    out.push(spec(p("ffn2.w"), vec![2 * d, d], Init::TruncNormal));
    out.push(spec(p("ffn2.b"), vec![d], Init::Zeros));
}

fn block_specs(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig, level: usize) {
    sub_block_specs(out, &format!("{prefix}.a"), cfg, level);
    sub_block_specs(out, &format!("{prefix}.b"), cfg, level);
}

/// The full ordered parameter walk for a configuration.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let d0 = cfg.base_width;
    let c = cfg.channels;
    out.push(spec("embed.w".into(), vec![d0, c, 3, 3, 3], Init::FanInUniform));
    out.push(spec("embed.b".into(), vec![d0], Init::Zeros));
    for s in 0..cfg.stages {
        for l in 0..cfg.scales {
            block_specs(&mut out, &format!("stage{s}.enc{l}"), cfg, l);
            if l + 1 < cfg.scales {
                let (din, dout) = (cfg.width_at(l), cfg.width_at(l + 1));
                out.push(spec(
                    format!("stage{s}.down{l}.w"),
                    vec![dout, din, 1, 2, 2],
                    Init::FanInUniform,
                ));
                out.push(spec(format!("stage{s}.down{l}.b"), vec![dout], Init::Zeros));
            }
        }
        for l in (0..cfg.scales.saturating_sub(1)).rev() {
            let (din, dout) = (cfg.width_at(l + 1), cfg.width_at(l));
            out.push(spec(
                format!("stage{s}.up{l}.w"),
                vec![din, dout, 1, 2, 2],
                Init::FanInUniform,
            ));
            out.push(spec(format!("stage{s}.up{l}.b"), vec![dout], Init::Zeros));
            out.push(spec(
                format!("stage{s}.fuse{l}.w"),
                vec![dout, 2 * dout, 1, 1, 1],
                Init::FanInUniform,
            ));
            out.push(spec(format!("stage{s}.fuse{l}.b"), vec![dout], Init::Zeros));
            block_specs(&mut out, &format!("stage{s}.dec{l}"), cfg, l);
        }
    }
    // synthesis head: one 3D conv with temporal kernel 6 collapses the six
    // frames to the middle one; zero-initialized so the untrained network
    // outputs its identity reference
    out.push(spec(
        "head.out.w".into(),
        vec![c, d0, cfg.frames, 1, 1],
        Init::Zeros,
    ));
    out.push(spec("head.out.b".into(), vec![c], Init::Zeros));
    out
}

/// Exact parameter count for a configuration.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    param_specs(cfg).iter().map(|s| s.numel() as u64).sum()
}

/// Materialized parameters, ordered exactly like [`param_specs`].
pub struct ModelParams {
    specs: Vec<ParamSpec>,
    buffers: Vec<Vec<f32>>,
}

fn trunc_normal(rng: &mut ChaCha8Rng, sigma: f32) -> f32 {
    // Box-Muller, resampled beyond two sigma
    loop {
        let u1: f32 = rng.gen_range(f32::MIN_POSITIVE..1.0);
        let u2: f32 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos();
        let v = z * sigma;
        if v.abs() <= 2.0 * sigma {
            return v;
        }
    }
}

impl ModelParams {
    /// Initialize from the spec walk with a seeded generator.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buffers = specs
            .iter()
            .map(|s| {
                let n = s.numel();
                match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Const(v) => vec![v; n],
                    Init::TruncNormal => (0..n).map(|_| trunc_normal(&mut rng, 0.02)).collect(),
                    Init::FanInUniform => {
                        let fan_in: usize = s.shape[1..].iter().product::<usize>().max(1);
                        let bound = 1.0 / (fan_in as f32).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                }
            })
            .collect();
        Ok(Self { specs, buffers })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn buffer(&self, idx: usize) -> &[f32] {
        &self.buffers[idx]
    }

    pub fn buffer_mut(&mut self, idx: usize) -> &mut Vec<f32> {
        &mut self.buffers[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<(&ParamSpec, &[f32])> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(|i| (&self.specs[i], self.buffers[i].as_slice()))
    }

    /// Total scalar count across all buffers.
    pub fn total_len(&self) -> u64 {
        self.buffers.iter().map(|b| b.len() as u64).sum()
    }

    /// Replace buffers from named records (checkpoint load).
    pub fn load_records(&mut self, records: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<()> {
        let mut seen = vec![false; self.specs.len()];
        for (name, shape, data) in records {
            let Some(idx) = self.specs.iter().position(|s| s.name == name) else {
                return Err(cfg_err(format!("unknown parameter record {name}")));
            };
            if self.specs[idx].shape != shape {
                return Err(cfg_err(format!(
                    "parameter {name}: shape {shape:?} does not match {:?}",
                    self.specs[idx].shape
                )));
            }
            self.buffers[idx] = data;
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(cfg_err(format!(
                "checkpoint is missing parameter {}",
                self.specs[missing].name
            )));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamSpec, &[f32])> {
        self.specs.iter().zip(self.buffers.iter().map(|b| b.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_materialized_total() {
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(count_params(&cfg), params.total_len());
    }

    #[test]
    fn stage_additivity_is_exact() {
        let mut cfg = ModelConfig::default();
        let counts: Vec<u64> = (1..=3)
            .map(|s| {
                cfg.stages = s;
                count_params(&cfg)
            })
            .collect();
        assert_eq!(counts[1] - counts[0], counts[2] - counts[1]);
        assert!(counts[1] > counts[0]);
    }

    #[test]
    fn single_linear_map_contributes_d_squared() {
        let cfg = ModelConfig::default();
        let specs = param_specs(&cfg);
        let wq = specs.iter().find(|s| s.name == "stage0.enc0.a.wq").unwrap();
        assert_eq!(wq.numel(), cfg.base_width * cfg.base_width);
    }

    #[test]
    fn init_is_seed_deterministic_and_seed_sensitive() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, 7).unwrap();
        let b = ModelParams::init(&cfg, 7).unwrap();
        let c = ModelParams::init(&cfg, 8).unwrap();
        for i in 0..a.len() {
            assert_eq!(a.buffer(i), b.buffer(i));
        }
        assert!((0..a.len()).any(|i| a.buffer(i) != c.buffer(i)));
    }

    #[test]
    fn head_out_is_zero_initialized() {
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, 3).unwrap();
        let (_, data) = params.by_name("head.out.w").unwrap();
        assert!(data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(trunc_normal(&mut rng, 0.02).abs() <= 0.04);
        }
    }
}
