//! Normalization, softmax, and cross-entropy kernels used by the graph ops.

use super::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel batch statistics of a tensor whose channel axis is 1.
/// `reduce` is the product of all non-channel dims. Variance is biased.
pub fn channel_stats<T: Scalar>(
    x: &[T],
    lead: usize,
    channels: usize,
    rest: usize,
) -> (Vec<T>, Vec<T>) {
    let m = lead * rest;
    let inv_m = T::from_f64(1.0 / m as f64);
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let mut s = T::zero();
        for b in 0..lead {
            let off = (b * channels + c) * rest;
            for r in 0..rest {
                s += x[off + r];
            }
        }
        mean[c] = s * inv_m;
    }
    for c in 0..channels {
        let mut s = T::zero();
        for b in 0..lead {
            let off = (b * channels + c) * rest;
            for r in 0..rest {
                let d = x[off + r] - mean[c];
                s += d * d;
            }
        }
        var[c] = s * inv_m;
    }
    (mean, var)
}

pub fn inv_std_from_var<T: Scalar>(var: &[T]) -> Vec<T> {
    let eps = T::from_f64(NORM_EPS);
    var.iter().map(|&v| (v + eps).sqrt().recip()).collect()
}

/// Normalizes over all axes except axis 1 with the given per-channel stats.
pub fn channel_affine_norm<T: Scalar>(
    x: &[T],
    lead: usize,
    channels: usize,
    rest: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..lead {
        for c in 0..channels {
            let off = (b * channels + c) * rest;
            let sc = gamma[c] * inv_std[c];
            for r in 0..rest {
                out[off + r] = (x[off + r] - mean[c]) * sc + beta[c];
            }
        }
    }
    out
}

pub struct ChannelNormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

/// Backward for channel normalization. When `stats_from_batch` the mean and
/// inverse std were computed from `x` itself and the gradient flows through
/// them; otherwise they are constants (eval mode with recorded stats).
pub fn channel_norm_backward<T: Scalar>(
    gy: &[T],
    x: &[T],
    lead: usize,
    channels: usize,
    rest: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    stats_from_batch: bool,
) -> ChannelNormGrads<T> {
    let m = lead * rest;
    let inv_m = T::from_f64(1.0 / m as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for b in 0..lead {
            let off = (b * channels + c) * rest;
            for r in 0..rest {
                let g = gy[off + r];
                let xh = (x[off + r] - mean[c]) * inv_std[c];
                s1 += g;
                s2 += g * xh;
            }
        }
        dbeta[c] = s1;
        dgamma[c] = s2;
        let sc = gamma[c] * inv_std[c];
        for b in 0..lead {
            let off = (b * channels + c) * rest;
            for r in 0..rest {
                let g = gy[off + r];
                if stats_from_batch {
                    let xh = (x[off + r] - mean[c]) * inv_std[c];
                    dx[off + r] += sc * (g - s1 * inv_m - xh * (s2 * inv_m));
                } else {
                    dx[off + r] += sc * g;
                }
            }
        }
    }
    ChannelNormGrads { dx, dgamma, dbeta }
}

/// Row-wise normalization over the last axis. Returns (out, mean, inv_std)
/// with one mean/inv_std entry per row.
pub fn layernorm_forward<T: Scalar>(
    x: &[T],
    rows: usize,
    dim: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let eps = T::from_f64(NORM_EPS);
    let inv_d = T::from_f64(1.0 / dim as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut means = vec![T::zero(); rows];
    let mut inv_stds = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mut s = T::zero();
        for &v in row {
            s += v;
        }
        let mu = s * inv_d;
        let mut vs = T::zero();
        for &v in row {
            let d = v - mu;
            vs += d * d;
        }
        let istd = (vs * inv_d + eps).sqrt().recip();
        means[r] = mu;
        inv_stds[r] = istd;
        for i in 0..dim {
            out[r * dim + i] = (row[i] - mu) * istd * gamma[i] + beta[i];
        }
    }
    (out, means, inv_stds)
}

pub struct LayerNormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub fn layernorm_backward<T: Scalar>(
    gy: &[T],
    x: &[T],
    rows: usize,
    dim: usize,
    gamma: &[T],
    means: &[T],
    inv_stds: &[T],
) -> LayerNormGrads<T> {
    let inv_d = T::from_f64(1.0 / dim as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); dim];
    let mut dbeta = vec![T::zero(); dim];
    for r in 0..rows {
        let off = r * dim;
        let istd = inv_stds[r];
        let mut sum_gg = T::zero();
        let mut sum_ggx = T::zero();
        for i in 0..dim {
            let xh = (x[off + i] - means[r]) * istd;
            let gg = gy[off + i] * gamma[i];
            dgamma[i] += gy[off + i] * xh;
            dbeta[i] += gy[off + i];
            sum_gg += gg;
            sum_ggx += gg * xh;
        }
        for i in 0..dim {
            let xh = (x[off + i] - means[r]) * istd;
            let gg = gy[off + i] * gamma[i];
            dx[off + i] += istd * (gg - sum_gg * inv_d - xh * (sum_ggx * inv_d));
        }
    }
    LayerNormGrads { dx, dgamma, dbeta }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_forward<T: Scalar>(x: &[T], rows: usize, dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut s = T::zero();
        for i in 0..dim {
            let e = (row[i] - m).exp();
            out[r * dim + i] = e;
            s += e;
        }
        let inv = s.recip();
        for i in 0..dim {
            out[r * dim + i] *= inv;
        }
    }
    out
}

pub fn softmax_backward<T: Scalar>(gy: &[T], probs: &[T], rows: usize, dim: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); gy.len()];
    for r in 0..rows {
        let off = r * dim;
        let mut dot = T::zero();
        for i in 0..dim {
            dot += gy[off + i] * probs[off + i];
        }
        for i in 0..dim {
            dx[off + i] = probs[off + i] * (gy[off + i] - dot);
        }
    }
    dx
}

/// Mean cross-entropy of logits against 0-based class indices.
/// Returns (loss, probs) with probs saved for the backward pass.
pub fn cross_entropy_forward<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    rows: usize,
    dim: usize,
) -> (T, Vec<T>) {
    let probs = softmax_forward(logits, rows, dim);
    let mut total = T::zero();
    for r in 0..rows {
        let row = &logits[r * dim..(r + 1) * dim];
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let mut s = T::zero();
        for &v in row {
            s += (v - m).exp();
        }
        total += m + s.ln() - row[labels[r]];
    }
    (total * T::from_f64(1.0 / rows as f64), probs)
}

pub fn cross_entropy_backward<T: Scalar>(
    g: T,
    probs: &[T],
    labels: &[usize],
    rows: usize,
    dim: usize,
) -> Vec<T> {
    let scale = g * T::from_f64(1.0 / rows as f64);
    let mut dl = vec![T::zero(); probs.len()];
    for r in 0..rows {
        for i in 0..dim {
            let ind = if labels[r] == i { T::one() } else { T::zero() };
            dl[r * dim + i] = scale * (probs[r * dim + i] - ind);
        }
    }
    dl
}
