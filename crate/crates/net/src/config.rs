//! Model and loss configuration.

use crate::{cfg_err, Result};
use serde::{Deserialize, Serialize};

/// Geometry of one attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    /// Cube extents (t, h, w).
    pub cube: [usize; 3],
    /// Head count n; the head width is `width / heads`.
    pub heads: usize,
    /// Model width D.
    pub width: usize,
    /// Groups of the two positional-embedding convolutions (1 = dense,
    /// `width` = depthwise).
    pub pos_groups: usize,
}

impl AttentionConfig {
    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn cube_len(&self) -> usize {
        self.cube.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cube.iter().any(|&e| e == 0) {
            return Err(cfg_err("cube extents must be >= 1"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(cfg_err(format!(
                "width {} must be divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.pos_groups == 0 || self.width % self.pos_groups != 0 {
            return Err(cfg_err(format!(
                "width {} must be divisible by pos_groups {}",
                self.width, self.pos_groups
            )));
        }
        Ok(())
    }
}

/// Full network configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Cascaded stage count N_s.
    pub stages: usize,
    /// Scale count L of the encoder/decoder inside each stage.
    pub scales: usize,
    /// Base width D at scale 0; scale l uses D * 2^l.
    pub base_width: usize,
    /// Head count per scale.
    pub heads: Vec<usize>,
    /// Cube extents (t, h, w), shared by every scale.
    pub cube: [usize; 3],
    /// Input/output channel count: 1 = DoFP mosaic, 4 = demosaicked quad,
    /// 3 = conventional RGB.
    pub channels: usize,
    /// Input frame count; the architecture interpolates the middle of six.
    pub frames: usize,
    /// Positional-embedding convolutions run depthwise when true (the
    /// desk-scale default; dense otherwise).
    pub pos_depthwise: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk_default()
    }
}

impl ModelConfig {
    /// Desk-scale polarized default: trains on one CPU core in well under an
    /// hour at 64 x 64 crops.
    pub fn desk_default() -> Self {
        Self {
            stages: 1,
            scales: 2,
            base_width: 32,
            heads: vec![2, 4],
            cube: [2, 4, 4],
            channels: 4,
            frames: 6,
            pos_depthwise: true,
        }
    }

    /// Width at scale `l`.
    pub fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn attention_at(&self, level: usize) -> AttentionConfig {
        let width = self.width_at(level);
        AttentionConfig {
            cube: self.cube,
            heads: self.heads[level],
            width,
            pos_groups: if self.pos_depthwise { width } else { 1 },
        }
    }

    /// Spatial divisibility the forward pass pads to: 2^(L-1).
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(cfg_err("stages must be >= 1"));
        }
        if self.scales == 0 {
            return Err(cfg_err("scales must be >= 1"));
        }
        if self.heads.len() != self.scales {
            return Err(cfg_err(format!(
                "heads has {} entries for {} scales",
                self.heads.len(),
                self.scales
            )));
        }
        if self.frames != 6 {
            return Err(cfg_err("the interpolator takes exactly 6 input frames"));
        }
        if !matches!(self.channels, 1 | 3 | 4) {
            return Err(cfg_err(format!(
                "channels must be 1 (mosaic), 3 (rgb) or 4 (quad), got {}",
                self.channels
            )));
        }
        for level in 0..self.scales {
            self.attention_at(level).validate()?;
        }
        Ok(())
    }
}

/// Weights of the combined training loss: intensity, Stokes, AoLP, DoLP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub intensity: f32,
    pub stokes: f32,
    pub aolp: f32,
    pub dolp: f32,
}

impl Default for LossWeights {
    /// The published setting: 0.1 L_I + 1 L_S.
    fn default() -> Self {
        Self {
            intensity: 0.1,
            stokes: 1.0,
            aolp: 0.0,
            dolp: 0.0,
        }
    }
}

impl LossWeights {
    pub fn intensity_only() -> Self {
        Self {
            intensity: 1.0,
            stokes: 0.0,
            aolp: 0.0,
            dolp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.intensity, self.stokes, self.aolp, self.dolp];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(cfg_err("loss weights must be finite and nonnegative"));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(cfg_err("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn heads_must_divide_width() {
        let mut cfg = ModelConfig::default();
        cfg.heads = vec![5, 4];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip_rejects_unknown_keys() {
        let cfg = ModelConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let bad = format!("{text}\nbogus_key = 3\n");
        assert!(toml::from_str::<ModelConfig>(&bad).is_err());
    }

    #[test]
    fn all_zero_loss_weights_rejected() {
        let w = LossWeights {
            intensity: 0.0,
            stokes: 0.0,
            aolp: 0.0,
            dolp: 0.0,
        };
        assert!(w.validate().is_err());
        LossWeights::default().validate().unwrap();
    }
}
