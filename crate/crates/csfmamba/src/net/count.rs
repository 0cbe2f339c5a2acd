//! Parameter and FLOP accounting, a pure function of the config.
//!
//! Parameter counts are exact (learnable scalars only; batchnorm running
//! statistics are excluded). FLOPs are per forward sample: two per
//! multiply-accumulate for conv/linear/matmul, plus per-element estimates
//! for the cheap ops (batchnorm 2, relu 1, silu and softplus 4, layernorm 7,
//! scan 11 per token-channel-state triple).

use super::config::ModelConfig;
use crate::error::Result;

/// Learnable scalar count and forward FLOPs for one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Budget {
    pub params: usize,
    pub flops: u64,
}

impl Budget {
    fn add(&mut self, other: Budget) {
        self.params += other.params;
        self.flops += other.flops;
    }

    fn flops_only(flops: u64) -> Budget {
        Budget { params: 0, flops }
    }
}

/// Bias-carrying linear layer applied to `rows` rows.
pub fn linear_cost(rows: usize, d_in: usize, d_out: usize) -> Budget {
    Budget {
        params: d_in * d_out + d_out,
        flops: (rows * (2 * d_in * d_out + d_out)) as u64,
    }
}

/// Bias-carrying square-kernel 2-D conv producing `out_hw` spatial outputs.
pub fn conv2d_cost(out_hw: usize, c_in: usize, c_out: usize, k: usize) -> Budget {
    let out_elems = c_out * out_hw;
    Budget {
        params: c_out * c_in * k * k + c_out,
        flops: (out_elems * (2 * c_in * k * k + 1)) as u64,
    }
}

/// Bias-carrying 3-D conv with kernel `kd`x3x3 producing
/// `c_out * out_depth * out_hw` outputs.
pub fn conv3d_cost(out_hw: usize, out_depth: usize, c_in: usize, c_out: usize, kd: usize) -> Budget {
    let out_elems = c_out * out_depth * out_hw;
    Budget {
        params: c_out * c_in * kd * 9 + c_out,
        flops: (out_elems * (2 * c_in * kd * 9 + 1)) as u64,
    }
}

/// Batchnorm over `c` channels and `elems` activations.
fn bn_cost(c: usize, elems: usize) -> Budget {
    Budget {
        params: 2 * c,
        flops: 2 * elems as u64,
    }
}

/// One scan block over `r` tokens of width `d` with `n` states. `extra_proj`
/// adds the second prenorm + input projection a cross-state direction spends
/// on the other stream, plus the post-norm.
fn scan_block_cost(r: usize, d: usize, n: usize, cross_direction: bool) -> Budget {
    let mut b = Budget::default();
    // prenorm
    b.params += 2 * d;
    b.flops += (7 * r * d) as u64;
    // shared input projection, split into branch and gate
    b.add(linear_cost(r, d, 2 * d));
    // per-token scan parameters
    b.add(linear_cost(r, d, n)); // b
    b.add(linear_cost(r, d, n)); // c
    b.add(linear_cost(r, d, d)); // delta
    b.flops += (4 * r * d) as u64; // softplus on delta
    // transition diagonal and residual direct path
    b.params += d * n + d;
    b.flops += (2 * d * n) as u64; // exp and negate
    b.flops += (11 * r * d * n) as u64; // recurrence
    // gate and output projection
    b.flops += (4 * r * d) as u64; // silu
    b.flops += (r * d) as u64; // gating product
    b.add(linear_cost(r, d, d));
    b.flops += (r * d) as u64; // residual add
    if cross_direction {
        // prenorm + projection of the parameter stream
        b.flops += (7 * r * d) as u64;
        b.flops += linear_cost(r, d, 2 * d).flops;
        // post-norm
        b.params += 2 * d;
        b.flops += (7 * r * d) as u64;
    }
    b
}

/// Exact learnable parameter count and per-sample forward FLOPs.
pub fn count_params_flops(cfg: &ModelConfig) -> Result<Budget> {
    cfg.validate()?;
    let s = cfg.patch_size;
    let hw = s * s;
    let d = cfg.token_width;
    let n = cfg.state_size;
    let l = cfg.token_count() + 1;
    let mut b = Budget::default();

    if cfg.linear_extractors {
        b.add(linear_cost(hw, cfg.hsi_channels, d));
        b.add(linear_cost(hw, cfg.lidar_channels, d));
    } else {
        b.add(conv3d_cost(hw, cfg.spectral_out(), 1, cfg.spectral_channels, cfg.spectral_kernel));
        b.add(bn_cost(cfg.spectral_channels, cfg.spectral_channels * cfg.spectral_out() * hw));
        b.add(Budget::flops_only((cfg.spectral_channels * cfg.spectral_out() * hw) as u64)); // relu
        b.add(conv2d_cost(hw, cfg.flattened_channels(), d, 3));
        b.add(bn_cost(d, d * hw));
        b.add(Budget::flops_only((d * hw) as u64));

        b.add(conv2d_cost(hw, cfg.lidar_channels, cfg.lidar_hidden, 3));
        b.add(bn_cost(cfg.lidar_hidden, cfg.lidar_hidden * hw));
        b.add(Budget::flops_only((cfg.lidar_hidden * hw) as u64));
        b.add(conv2d_cost(hw, cfg.lidar_hidden, d, 3));
        b.add(bn_cost(d, d * hw));
        b.add(Budget::flops_only((d * hw) as u64));
    }

    for _ in 0..2 {
        // tokenizer: conv, flatten, linear over the token grid, CLS, positions
        b.add(conv2d_cost(hw, d, d, cfg.tokenizer_kernel));
        b.add(linear_cost(cfg.token_count(), d, d));
        b.params += d; // class token
        b.add(Budget::flops_only((l * d) as u64)); // positional add
    }

    for _ in 0..(2 * cfg.encoder_layers) {
        b.add(scan_block_cost(l, d, n, false));
    }
    if cfg.no_fusion {
        for _ in 0..(2 * cfg.fusion_layers) {
            b.add(scan_block_cost(l, d, n, false));
        }
    } else {
        for _ in 0..(2 * cfg.fusion_layers) {
            b.add(scan_block_cost(l, d, n, true));
        }
    }

    // head: average the two CLS vectors, project, normalize
    b.add(Budget::flops_only(2 * d as u64));
    b.add(linear_cost(1, d, cfg.num_classes));
    b.add(Budget::flops_only(4 * cfg.num_classes as u64));
    Ok(b)
}
