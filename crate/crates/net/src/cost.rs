//! Analytic cost accounting: parameters are counted from the registry walk;
//! FLOPs follow the attention formula 4D^2(THW) + 2thwD(THW) plus
//! 2 * k * C_in/groups * C_out per convolution output voxel and
//! 2 * D_in * D_out per linear row. Normalizations and elementwise ops are
//! not counted.

use crate::attention::msa_flops;
use crate::config::ModelConfig;

fn conv_flops(kernel: usize, cin_per_group: usize, cout: usize, out_voxels: usize) -> u64 {
    2 * kernel as u64 * cin_per_group as u64 * cout as u64 * out_voxels as u64
}

fn linear_flops(din: usize, dout: usize, rows: usize) -> u64 {
    2 * din as u64 * dout as u64 * rows as u64
}

fn padded(e: usize, c: usize) -> usize {
    e.div_ceil(c) * c
}

/// Per-component forward cost at input extents H x W. Returns labelled
/// counts; the total is their sum.
pub fn flops_breakdown(cfg: &ModelConfig, h: usize, w: usize) -> Vec<(String, u64)> {
    let mut out = Vec::new();
    let t = cfg.frames;
    let m = cfg.spatial_multiple();
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let d0 = cfg.base_width;
    let c = cfg.channels;

    out.push((
        "embed".into(),
        conv_flops(27, c, d0, t * hp * wp),
    ));

    let block_cost = |level: usize| -> u64 {
        let a = cfg.attention_at(level);
        let (hl, wl) = (hp >> level, wp >> level);
        let thw_real = t * hl * wl;
        let thw_pad = padded(t, a.cube[0]) * padded(hl, a.cube[1]) * padded(wl, a.cube[2]);
        let d = a.width;
        let mut per_sub = msa_flops(&a, t, hl, wl);
        // positional term: two 3x3x3 convolutions over every padded voxel
        per_sub += 2 * conv_flops(27, d / a.pos_groups, d, thw_pad);
        // feed-forward: D -> 2D -> D
        per_sub += linear_flops(d, 2 * d, thw_real) + linear_flops(2 * d, d, thw_real);
        2 * per_sub
    };

    for stage in 0..cfg.stages {
        let mut stage_total = 0u64;
        for level in 0..cfg.scales {
            stage_total += block_cost(level);
            if level + 1 < cfg.scales {
                let (hl, wl) = (hp >> (level + 1), wp >> (level + 1));
                stage_total += conv_flops(4, cfg.width_at(level), cfg.width_at(level + 1), t * hl * wl);
            }
        }
        for level in (0..cfg.scales.saturating_sub(1)).rev() {
            let (hin, win) = (hp >> (level + 1), wp >> (level + 1));
            let (hl, wl) = (hp >> level, wp >> level);
            // transposed conv counted per input voxel
            stage_total += conv_flops(4, cfg.width_at(level + 1), cfg.width_at(level), t * hin * win);
            stage_total += linear_flops(2 * cfg.width_at(level), cfg.width_at(level), t * hl * wl);
            stage_total += block_cost(level);
        }
        out.push((format!("stage{stage}"), stage_total));
    }

    out.push((
        "head.out".into(),
        conv_flops(cfg.frames, d0, c, hp * wp),
    ));
    out
}

/// Total forward FLOPs at input extents H x W.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> u64 {
    flops_breakdown(cfg, h, w).iter().map(|(_, v)| v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_flops_are_additive() {
        let mut cfg = ModelConfig::default();
        let totals: Vec<u64> = (1..=3)
            .map(|s| {
                cfg.stages = s;
                count_flops(&cfg, 64, 64)
            })
            .collect();
        assert_eq!(totals[1] - totals[0], totals[2] - totals[1]);
    }

    #[test]
    fn attention_flops_scale_linearly_with_area() {
        let cfg = ModelConfig::default();
        let f1 = count_flops(&cfg, 64, 64);
        let f2 = count_flops(&cfg, 64, 128);
        assert_eq!(f2, 2 * f1);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let cfg = ModelConfig::default();
        let parts = flops_breakdown(&cfg, 64, 64);
        let total: u64 = parts.iter().map(|(_, v)| v).sum();
        assert_eq!(total, count_flops(&cfg, 64, 64));
        assert!(parts.iter().any(|(n, _)| n == "embed"));
        assert!(parts.iter().any(|(n, _)| n == "stage0"));
    }
}
