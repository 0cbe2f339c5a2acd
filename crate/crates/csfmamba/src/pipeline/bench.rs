//! Wall-clock comparison of the linear-time selective scan against the
//! quadratic materialized form, demonstrating the scaling gap.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ssm::{scan_materialized, selective_scan, ScanParams};

/// Width of the benchmark instance: channels and states are held small and
/// fixed so only the sequence length varies.
const BENCH_D_IN: usize = 4;
const BENCH_STATES: usize = 4;
/// Minimum duration of one timing sample; shorter runs are repeated inside
/// the sample until this is met, which keeps clock granularity irrelevant.
const SAMPLE_FLOOR_S: f64 = 0.01;
const MAX_INNER_REPS: usize = 1_000_000;

/// Timing summary for one sequence length.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub len: usize,
    /// Median seconds per call of the linear-time scan.
    pub scan_median_s: f64,
    /// Median seconds per call of the quadratic materialized scan.
    pub quadratic_median_s: f64,
    /// `time(L) / time(L/2)` when the previous length is exactly half.
    pub scan_ratio: Option<f64>,
    pub quadratic_ratio: Option<f64>,
}

struct Instance {
    x: Tensor<f64>,
    params: ScanParams<f64>,
    dvec: Tensor<f64>,
}

fn instance(len: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, n) = (BENCH_D_IN, BENCH_STATES);
    Instance {
        x: Tensor::rand_uniform(&[len, d], -1.0, 1.0, &mut rng),
        params: ScanParams {
            a_bar: Tensor::rand_uniform(&[len, d, n], 0.1, 0.95, &mut rng),
            b_bar: Tensor::rand_uniform(&[len, d, n], -1.0, 1.0, &mut rng),
            c: Tensor::rand_uniform(&[len, n], -1.0, 1.0, &mut rng),
        },
        dvec: Tensor::rand_uniform(&[d], -1.0, 1.0, &mut rng),
    }
}

/// Seconds per call, median over `repeats` samples. Each sample loops the
/// call enough times to run at least [`SAMPLE_FLOOR_S`].
fn time_median<F: FnMut()>(mut call: F, repeats: usize) -> f64 {
    let mut reps = 1usize;
    loop {
        let t0 = Instant::now();
        for _ in 0..reps {
            call();
        }
        let elapsed = t0.elapsed().as_secs_f64();
        if elapsed >= SAMPLE_FLOOR_S || reps >= MAX_INNER_REPS {
            let mut samples = Vec::with_capacity(repeats);
            samples.push(elapsed / reps as f64);
            for _ in 1..repeats {
                let t0 = Instant::now();
                for _ in 0..reps {
                    call();
                }
                samples.push(t0.elapsed().as_secs_f64() / reps as f64);
            }
            samples.sort_by(f64::total_cmp);
            let mid = samples.len() / 2;
            return if samples.len() % 2 == 1 {
                samples[mid]
            } else {
                0.5 * (samples[mid - 1] + samples[mid])
            };
        }
        // grow toward the floor with headroom
        let scale = (SAMPLE_FLOOR_S / elapsed.max(1e-9)).ceil().max(2.0);
        reps = (reps as f64 * scale).min(MAX_INNER_REPS as f64) as usize;
    }
}

/// Times both scan forms at each length. `lengths` must be strictly
/// ascending; ratio columns fill in where one length doubles the previous.
pub fn bench_scan(lengths: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    if lengths.is_empty() {
        return Err(Error::invalid("need at least one sequence length"));
    }
    if lengths.iter().any(|&l| l == 0) {
        return Err(Error::invalid("sequence lengths must be at least 1"));
    }
    if !lengths.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("sequence lengths must be strictly ascending"));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }

    let mut rows: Vec<BenchRow> = Vec::with_capacity(lengths.len());
    for (i, &len) in lengths.iter().enumerate() {
        let inst = instance(len, 0xBE7C_0000 + len as u64);
        // correctness spot check before timing anything
        let fast = selective_scan(&inst.x, &inst.params, &inst.dvec)?;
        let slow = scan_materialized(&inst.x, &inst.params, &inst.dvec)?;
        let agree = fast
            .data()
            .iter()
            .zip(slow.data())
            .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())));
        if !agree {
            return Err(Error::numeric(format!(
                "scan implementations disagree at length {len}"
            )));
        }

        let scan_median_s = time_median(
            || {
                let y = selective_scan(&inst.x, &inst.params, &inst.dvec).unwrap();
                black_box(y);
            },
            repeats,
        );
        let quadratic_median_s = time_median(
            || {
                let y = scan_materialized(&inst.x, &inst.params, &inst.dvec).unwrap();
                black_box(y);
            },
            repeats,
        );
        let prev = i
            .checked_sub(1)
            .map(|p| &rows[p])
            .filter(|prev| prev.len * 2 == len);
        let scan_ratio = prev.map(|p| scan_median_s / p.scan_median_s);
        let quadratic_ratio = prev.map(|p| quadratic_median_s / p.quadratic_median_s);
        rows.push(BenchRow {
            len,
            scan_median_s,
            quadratic_median_s,
            scan_ratio,
            quadratic_ratio,
        });
    }
    Ok(rows)
}
