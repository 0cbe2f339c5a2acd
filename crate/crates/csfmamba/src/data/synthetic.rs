//! Synthetic co-registered HSI + elevation scenes for tests and demos.
//!
//! The scene is partitioned into K compact, balanced regions by
//! capacity-constrained nearest-center assignment. Each class gets a smooth
//! sinusoid spectral signature plus Gaussian noise, a distinct mean height,
//! and about 3% of pixels are left unlabeled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::raster::{CubeKind, LabelMap, RasterCube};
use crate::error::{Error, Result};

/// Inputs of the generator. `noise_sigma` scales the spectral noise;
/// elevation noise uses a tenth of it.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub hsi_bands: usize,
    pub noise_sigma: f64,
}

/// The class-k signature value at band b: one smooth sinusoid per class,
/// frequencies and phases spread so signatures stay well separated.
pub fn class_signature(class: usize, band: usize, bands: usize) -> f64 {
    let t = band as f64 / bands as f64;
    let freq = 1.0 + class as f64 * 0.5;
    let phase = class as f64 * 0.9;
    (std::f64::consts::TAU * freq * t + phase).sin() * 0.5 + 0.5
}

/// Mean elevation of class k (0-based): k + 1 units.
pub fn class_height(class: usize) -> f64 {
    class as f64 + 1.0
}

const UNLABELED_FRACTION: f64 = 0.03;

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(RasterCube, RasterCube, LabelMap)> {
    let SyntheticSpec {
        seed,
        height: h,
        width: w,
        num_classes: k,
        hsi_bands: bands,
        noise_sigma,
    } = *spec;
    if k < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if bands < k {
        return Err(Error::invalid(format!(
            "need at least {k} bands for {k} classes, got {bands}"
        )));
    }
    if h * w < 4 * k {
        return Err(Error::Dataset(format!(
            "{h}x{w} scene is too small to host {k} regions"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be finite and nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Spread K centers; duplicates are fine, capacity still balances them.
    let centers: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)))
        .collect();

    // Capacity-constrained assignment: visit (pixel, center) pairs by
    // distance; a pixel takes the closest center that still has room.
    let cap = h * w / k + 1;
    let classes = assign_balanced(h, w, &centers, cap);

    // ~3% unlabeled, spread deterministically.
    let mut labels: Vec<u16> = classes.iter().map(|&c| c as u16 + 1).collect();
    let drop_count = ((h * w) as f64 * UNLABELED_FRACTION) as usize;
    let mut order: Vec<usize> = (0..h * w).collect();
    order.shuffle(&mut rng);
    for &p in &order[..drop_count] {
        labels[p] = 0;
    }

    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut hsi = vec![0.0f64; h * w * bands];
    for b in 0..bands {
        let plane = &mut hsi[b * h * w..(b + 1) * h * w];
        for (p, out) in plane.iter_mut().enumerate() {
            let sig = class_signature(classes[p], b, bands);
            *out = sig + noise_sigma * noise.sample(&mut rng);
        }
    }
    let mut lidar = vec![0.0f64; h * w];
    for (p, out) in lidar.iter_mut().enumerate() {
        *out = class_height(classes[p]) + 0.1 * noise_sigma * noise.sample(&mut rng);
    }

    Ok((
        RasterCube::new(CubeKind::Hsi, h, w, bands, hsi)?,
        RasterCube::new(CubeKind::Lidar, h, w, 1, lidar)?,
        LabelMap::new(h, w, labels, k)?,
    ))
}

/// Nearest-center labels with per-center capacity. Pairs are processed in
/// ascending distance, ties broken by pixel then center index, so the result
/// is deterministic and every center ends up within one pixel of `cap`.
fn assign_balanced(h: usize, w: usize, centers: &[(f64, f64)], cap: usize) -> Vec<usize> {
    let k = centers.len();
    let mut pairs: Vec<(f64, u32, u32)> = Vec::with_capacity(h * w * k);
    for r in 0..h {
        for c in 0..w {
            let p = (r * w + c) as u32;
            for (ci, &(cr, cc)) in centers.iter().enumerate() {
                let dr = r as f64 - cr;
                let dc = c as f64 - cc;
                pairs.push((dr * dr + dc * dc, p, ci as u32));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assigned = vec![usize::MAX; h * w];
    let mut remaining = vec![cap; k];
    let mut left = h * w;
    for &(_, p, ci) in &pairs {
        let (p, ci) = (p as usize, ci as usize);
        if assigned[p] != usize::MAX || remaining[ci] == 0 {
            continue;
        }
        assigned[p] = ci;
        remaining[ci] -= 1;
        left -= 1;
        if left == 0 {
            break;
        }
    }
    assigned
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            height: 32,
            width: 32,
            num_classes: 4,
            hsi_bands: 12,
            noise_sigma: 0.05,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (h1, l1, m1) = make_synthetic(&spec(42)).unwrap();
        let (h2, l2, m2) = make_synthetic(&spec(42)).unwrap();
        assert_eq!(h1.values(), h2.values());
        assert_eq!(l1.values(), l2.values());
        assert_eq!(m1.labels(), m2.labels());
    }

    #[test]
    fn noiseless_scene_is_nearest_signature_separable() {
        let s = SyntheticSpec {
            noise_sigma: 0.0,
            ..spec(3)
        };
        let (hsi, _, map) = make_synthetic(&s).unwrap();
        let bands = hsi.channels();
        let mut correct = 0usize;
        let mut total = 0usize;
        for r in 0..hsi.height() {
            for c in 0..hsi.width() {
                let label = map.get(r, c);
                if label == 0 {
                    continue;
                }
                let mut best = (f64::INFINITY, 0usize);
                for class in 0..s.num_classes {
                    let d2: f64 = (0..bands)
                        .map(|b| {
                            let d = hsi.get(r, c, b) - class_signature(class, b, bands);
                            d * d
                        })
                        .sum();
                    if d2 < best.0 {
                        best = (d2, class);
                    }
                }
                total += 1;
                if best.1 as u16 + 1 == label {
                    correct += 1;
                }
            }
        }
        assert_eq!(correct, total);
    }

    #[test]
    fn classes_stay_balanced() {
        let (_, _, map) = make_synthetic(&spec(9)).unwrap();
        let counts = map.class_counts();
        let floor = (32.0 * 32.0 / 4.0 * 0.8) as usize;
        for class in 1..=4 {
            assert!(
                counts[class] >= floor,
                "class {class} has only {} labeled pixels",
                counts[class]
            );
        }
        let unlabeled = counts[0];
        assert!(unlabeled > 0 && unlabeled < 1024 / 10);
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(make_synthetic(&SyntheticSpec {
            num_classes: 1,
            ..spec(0)
        })
        .is_err());
        assert!(make_synthetic(&SyntheticSpec {
            hsi_bands: 3,
            ..spec(0)
        })
        .is_err());
        assert!(make_synthetic(&SyntheticSpec {
            height: 2,
            width: 2,
            ..spec(0)
        })
        .is_err());
    }

    #[test]
    fn regions_are_spatially_coherent() {
        let (_, lidar, map) = make_synthetic(&spec(5)).unwrap();
        // mean elevation per class tracks class_height
        let mut sums = vec![0.0f64; 5];
        let mut counts = vec![0usize; 5];
        for r in 0..32 {
            for c in 0..32 {
                let l = map.get(r, c) as usize;
                sums[l] += lidar.get(r, c, 0);
                counts[l] += 1;
            }
        }
        for class in 1..=4 {
            let mean = sums[class] / counts[class] as f64;
            assert!(
                (mean - class_height(class - 1)).abs() < 0.1,
                "class {class} mean height {mean}"
            );
        }
    }
}
