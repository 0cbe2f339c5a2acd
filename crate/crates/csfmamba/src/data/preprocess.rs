//! Scene preprocessing: mutual-information band ranking, PCA spectral
//! reduction, derived elevation channels, and per-channel standardization.
//!
//! [`PreprocessModel`] captures everything fitted on a training scene
//! (selected bands, PCA basis, standardization statistics) so the same
//! transform can be replayed on raw rasters at prediction time.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::raster::{CubeKind, LabelMap, RasterCube};
use crate::error::{Error, Result};

/// Knobs for the fitted transform.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// How many top-ranked bands survive mutual-information selection.
    pub mi_top_bands: usize,
    /// Spectral channels after PCA.
    pub pca_components: usize,
    /// Equal-width value bins for the mutual-information histogram.
    pub mi_histogram_bins: usize,
    /// Side of the square window for local elevation mean and variance.
    pub lidar_window: usize,
    /// Standardize each output channel to zero mean, unit variance.
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            mi_top_bands: 48,
            pca_components: 30,
            mi_histogram_bins: 32,
            lidar_window: 5,
            standardize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, raw_bands: usize) -> Result<()> {
        if self.pca_components > self.mi_top_bands || self.mi_top_bands > raw_bands {
            return Err(Error::invalid(format!(
                "need pca_components <= mi_top_bands <= raw bands, got {} / {} / {raw_bands}",
                self.pca_components, self.mi_top_bands
            )));
        }
        if self.mi_histogram_bins < 2 {
            return Err(Error::invalid("mutual information needs at least 2 bins"));
        }
        if self.lidar_window < 3 || self.lidar_window % 2 == 0 {
            return Err(Error::invalid("lidar window must be odd and at least 3"));
        }
        Ok(())
    }
}

/// Ranks spectral bands by estimated mutual information with the class label
/// and keeps the `mi_top_bands` best. Returns the reduced cube (bands in
/// original order) and the score of every input band.
///
/// The estimate uses a joint histogram over labeled pixels only; value bins
/// are equal-width over each band's full-scene min..max. Ties in score keep
/// the lower band index first.
pub fn mi_band_select(
    cube: &RasterCube,
    labels: &LabelMap,
    cfg: &PreprocessConfig,
) -> Result<(RasterCube, Vec<f64>)> {
    if cube.height() != labels.height() || cube.width() != labels.width() {
        return Err(Error::shape("cube and label map differ in extent"));
    }
    if labels.labeled_count() == 0 {
        return Err(Error::Dataset("no labeled pixels for band scoring".into()));
    }
    if cube.channels() < cfg.mi_top_bands {
        return Err(Error::invalid(format!(
            "cannot keep {} of {} bands",
            cfg.mi_top_bands,
            cube.channels()
        )));
    }
    let scores: Vec<f64> = (0..cube.channels())
        .map(|b| band_mi(cube.channel_plane(b), labels, cfg.mi_histogram_bins))
        .collect();
    let keep = top_bands(&scores, cfg.mi_top_bands);
    let reduced = cube.select_channels(&keep, CubeKind::Hsi)?;
    Ok((reduced, scores))
}

/// Indices of the `count` highest-scoring bands, returned in ascending
/// original order. Score ties keep the lower index.
pub fn top_bands(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    let mut keep: Vec<usize> = order[..count].to_vec();
    keep.sort_unstable();
    keep
}

/// Mutual information (nats) between one band's binned values and the label,
/// over labeled pixels. Never negative.
fn band_mi(plane: &[f64], labels: &LabelMap, bins: usize) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in plane {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let k = labels.num_classes();
    let mut joint = vec![0usize; bins * k];
    let mut total = 0usize;
    for (p, &v) in plane.iter().enumerate() {
        let label = labels.labels()[p] as usize;
        if label == 0 {
            continue;
        }
        let bin = if span > 0.0 {
            (((v - lo) / span * bins as f64) as usize).min(bins - 1)
        } else {
            0
        };
        joint[bin * k + (label - 1)] += 1;
        total += 1;
    }
    let n = total as f64;
    let mut bin_marg = vec![0usize; bins];
    let mut class_marg = vec![0usize; k];
    for bin in 0..bins {
        for cl in 0..k {
            let c = joint[bin * k + cl];
            bin_marg[bin] += c;
            class_marg[cl] += c;
        }
    }
    let mut mi = 0.0;
    for bin in 0..bins {
        for cl in 0..k {
            let c = joint[bin * k + cl];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            let px = bin_marg[bin] as f64 / n;
            let py = class_marg[cl] as f64 / n;
            mi += pxy * (pxy / (px * py)).ln();
        }
    }
    mi.max(0.0)
}

/// A fitted PCA: channel means and the top-`k` eigenvectors of the channel
/// covariance (columns, eigenvalues descending, sign fixed so the largest
/// magnitude entry of each vector is positive).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row-major `[channels, components]`.
    pub basis: Vec<f64>,
    pub components: usize,
    /// Fraction of total variance carried by each kept component.
    pub explained: Vec<f64>,
}

impl PcaModel {
    /// Eigendecomposition of the channel covariance (divisor n - 1).
    pub fn fit(cube: &RasterCube, components: usize) -> Result<PcaModel> {
        let c = cube.channels();
        let n = cube.pixels();
        if components > c {
            return Err(Error::invalid(format!(
                "cannot keep {components} of {c} channels"
            )));
        }
        if n < 2 {
            return Err(Error::Dataset("pca needs at least 2 pixels".into()));
        }
        let mut mean = vec![0.0f64; c];
        for ch in 0..c {
            mean[ch] = cube.channel_plane(ch).iter().sum::<f64>() / n as f64;
        }
        let mut cov = DMatrix::<f64>::zeros(c, c);
        for i in 0..c {
            let pi = cube.channel_plane(i);
            for j in i..c {
                let pj = cube.channel_plane(j);
                let mut s = 0.0;
                for p in 0..n {
                    s += (pi[p] - mean[i]) * (pj[p] - mean[j]);
                }
                let v = s / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

        let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
        let mut basis = vec![0.0f64; c * components];
        let mut explained = Vec::with_capacity(components);
        for (out_j, &src) in order[..components].iter().enumerate() {
            let col = eig.eigenvectors.column(src);
            let mut pivot = 0;
            for r in 1..c {
                if col[r].abs() > col[pivot].abs() {
                    pivot = r;
                }
            }
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for r in 0..c {
                basis[r * components + out_j] = col[r] * sign;
            }
            explained.push(if total > 0.0 {
                eig.eigenvalues[src].max(0.0) / total
            } else {
                0.0
            });
        }
        Ok(PcaModel {
            mean,
            basis,
            components,
            explained,
        })
    }

    /// Projects a cube with matching channel count onto the kept components.
    pub fn transform(&self, cube: &RasterCube) -> Result<RasterCube> {
        let c = self.mean.len();
        if cube.channels() != c {
            return Err(Error::shape(format!(
                "pca was fitted on {c} channels, cube has {}",
                cube.channels()
            )));
        }
        let n = cube.pixels();
        let mut values = vec![0.0f64; n * self.components];
        for j in 0..self.components {
            let out = &mut values[j * n..(j + 1) * n];
            for ch in 0..c {
                let w = self.basis[ch * self.components + j];
                if w == 0.0 {
                    continue;
                }
                let plane = cube.channel_plane(ch);
                let m = self.mean[ch];
                for p in 0..n {
                    out[p] += (plane[p] - m) * w;
                }
            }
        }
        RasterCube::new(CubeKind::Hsi, cube.height(), cube.width(), self.components, values)
    }
}

/// Fits PCA on the cube and projects it, returning the reduced cube and the
/// explained-variance fractions of the kept components.
pub fn pca_reduce(cube: &RasterCube, components: usize) -> Result<(RasterCube, Vec<f64>)> {
    let model = PcaModel::fit(cube, components)?;
    let reduced = model.transform(cube)?;
    Ok((reduced, model.explained))
}

/// Channels produced by [`derive_lidar_channels`].
pub const DERIVED_LIDAR_CHANNELS: usize = 5;

/// Expands a single-channel elevation raster into five channels:
/// raw height, gradient magnitude (central differences), curvature
/// (5-point Laplacian), local mean, and local variance over a square
/// window. Edges replicate the nearest pixel.
pub fn derive_lidar_channels(height: &RasterCube, cfg: &PreprocessConfig) -> Result<RasterCube> {
    if height.channels() != 1 {
        return Err(Error::invalid(format!(
            "elevation raster must have 1 channel, got {}",
            height.channels()
        )));
    }
    let (h, w) = (height.height(), height.width());
    if cfg.lidar_window > h.min(w) {
        return Err(Error::invalid(format!(
            "window {} exceeds scene extent {}x{}",
            cfg.lidar_window, h, w
        )));
    }
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        height.get(r, c, 0)
    };
    let mut out = RasterCube::zeros(CubeKind::Derived, h, w, DERIVED_LIDAR_CHANNELS)?;
    let half = (cfg.lidar_window / 2) as isize;
    let count = (cfg.lidar_window * cfg.lidar_window) as f64;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let center = at(r, c);
            let gx = (at(r, c + 1) - at(r, c - 1)) / 2.0;
            let gy = (at(r + 1, c) - at(r - 1, c)) / 2.0;
            let lap = at(r + 1, c) + at(r - 1, c) + at(r, c + 1) + at(r, c - 1) - 4.0 * center;
            let mut s = 0.0;
            let mut s2 = 0.0;
            for dr in -half..=half {
                for dc in -half..=half {
                    let v = at(r + dr, c + dc);
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / count;
            let var = (s2 / count - mean * mean).max(0.0);
            let (ru, cu) = (r as usize, c as usize);
            out.set(ru, cu, 0, center);
            out.set(ru, cu, 1, (gx * gx + gy * gy).sqrt());
            out.set(ru, cu, 2, lap);
            out.set(ru, cu, 3, mean);
            out.set(ru, cu, 4, var);
        }
    }
    Ok(out)
}

/// Per-channel scene statistics for standardization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(cube: &RasterCube) -> ChannelStats {
        let n = cube.pixels() as f64;
        let mut mean = Vec::with_capacity(cube.channels());
        let mut std = Vec::with_capacity(cube.channels());
        for ch in 0..cube.channels() {
            let plane = cube.channel_plane(ch);
            let m = plane.iter().sum::<f64>() / n;
            let v = plane.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(v.sqrt().max(1e-12));
        }
        ChannelStats { mean, std }
    }

    pub fn apply(&self, cube: &RasterCube) -> Result<RasterCube> {
        if cube.channels() != self.mean.len() {
            return Err(Error::shape("standardization stats do not match cube"));
        }
        let mut values = Vec::with_capacity(cube.values().len());
        for ch in 0..cube.channels() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            values.extend(cube.channel_plane(ch).iter().map(|&v| (v - m) / s));
        }
        RasterCube::new(cube.kind(), cube.height(), cube.width(), cube.channels(), values)
    }
}

/// Everything fitted during preprocessing, replayable on raw rasters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreprocessModel {
    pub config: PreprocessConfig,
    /// Original indices of the bands kept by mutual information, ascending.
    pub kept_bands: Vec<usize>,
    pub pca: PcaModel,
    pub hsi_stats: Option<ChannelStats>,
    pub lidar_stats: Option<ChannelStats>,
}

impl PreprocessModel {
    /// Fits band selection, PCA, and standardization on one scene and
    /// returns the model together with the transformed rasters.
    pub fn fit(
        hsi: &RasterCube,
        lidar_height: &RasterCube,
        labels: &LabelMap,
        cfg: &PreprocessConfig,
    ) -> Result<(PreprocessModel, RasterCube, RasterCube)> {
        cfg.validate(hsi.channels())?;
        let (selected, scores) = mi_band_select(hsi, labels, cfg)?;
        let kept_bands = top_bands(&scores, cfg.mi_top_bands);
        let pca = PcaModel::fit(&selected, cfg.pca_components)?;
        let mut hsi_out = pca.transform(&selected)?;
        let mut lidar_out = derive_lidar_channels(lidar_height, cfg)?;

        let (hsi_stats, lidar_stats) = if cfg.standardize {
            let hs = ChannelStats::fit(&hsi_out);
            let ls = ChannelStats::fit(&lidar_out);
            hsi_out = hs.apply(&hsi_out)?;
            lidar_out = ls.apply(&lidar_out)?;
            (Some(hs), Some(ls))
        } else {
            (None, None)
        };
        let model = PreprocessModel {
            config: cfg.clone(),
            kept_bands,
            pca,
            hsi_stats,
            lidar_stats,
        };
        Ok((model, hsi_out, lidar_out))
    }

    /// Replays the fitted transform on raw rasters.
    pub fn apply(
        &self,
        hsi: &RasterCube,
        lidar_height: &RasterCube,
    ) -> Result<(RasterCube, RasterCube)> {
        let selected = hsi.select_channels(&self.kept_bands, CubeKind::Hsi)?;
        let mut hsi_out = self.pca.transform(&selected)?;
        let mut lidar_out = derive_lidar_channels(lidar_height, &self.config)?;
        if let Some(hs) = &self.hsi_stats {
            hsi_out = hs.apply(&hsi_out)?;
        }
        if let Some(ls) = &self.lidar_stats {
            lidar_out = ls.apply(&lidar_out)?;
        }
        Ok((hsi_out, lidar_out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bands: usize, bins: usize) -> PreprocessConfig {
        PreprocessConfig {
            mi_top_bands: bands,
            pca_components: bands.min(2),
            mi_histogram_bins: bins,
            lidar_window: 3,
            standardize: false,
        }
    }

    fn label_entropy(labels: &LabelMap) -> f64 {
        let counts = labels.class_counts();
        let n: usize = counts[1..].iter().sum();
        counts[1..]
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum()
    }

    #[test]
    fn band_equal_to_label_ranks_first_with_entropy_score() {
        let labels = LabelMap::new(2, 4, vec![1, 1, 2, 3, 3, 2, 1, 0], 3).unwrap();
        let informative: Vec<f64> = labels.labels().iter().map(|&l| l as f64).collect();
        let constant = vec![0.5; 8];
        let mut values = informative;
        values.extend(constant);
        let cube = RasterCube::new(CubeKind::Hsi, 2, 4, 2, values).unwrap();
        let (reduced, scores) = mi_band_select(&cube, &labels, &cfg(1, 32)).unwrap();
        assert!((scores[0] - label_entropy(&labels)).abs() < 1e-12);
        assert_eq!(scores[1], 0.0);
        assert_eq!(reduced.channels(), 1);
        assert_eq!(reduced.channel_plane(0), cube.channel_plane(0));
    }

    #[test]
    fn balanced_binary_band_scores_ln_2() {
        let labels = LabelMap::new(2, 2, vec![1, 2, 1, 2], 2).unwrap();
        let band: Vec<f64> = labels.labels().iter().map(|&l| l as f64).collect();
        let cube = RasterCube::new(CubeKind::Hsi, 2, 2, 1, band).unwrap();
        let (_, scores) = mi_band_select(&cube, &labels, &cfg(1, 2)).unwrap();
        assert!((scores[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn positive_affine_rescale_keeps_the_ranking() {
        let mut values = Vec::new();
        let labels: Vec<u16> = (0..16).map(|i| (i % 4) as u16 + 1).collect();
        for b in 0..5 {
            for i in 0..16 {
                let v = ((i * (b + 1)) % 7) as f64 + (i % 4) as f64 * b as f64;
                values.push(v);
            }
        }
        let cube = RasterCube::new(CubeKind::Hsi, 4, 4, 5, values.clone()).unwrap();
        let map = LabelMap::new(4, 4, labels, 4).unwrap();
        let (_, base) = mi_band_select(&cube, &map, &cfg(3, 8)).unwrap();

        let rescaled: Vec<f64> = values.iter().map(|&v| 3.5 * v + 11.0).collect();
        let cube2 = RasterCube::new(CubeKind::Hsi, 4, 4, 5, rescaled).unwrap();
        let (_, again) = mi_band_select(&cube2, &map, &cfg(3, 8)).unwrap();

        let rank = |s: &[f64]| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap().then(i.cmp(&j)));
            idx
        };
        assert_eq!(rank(&base), rank(&again));
        for (a, b) in base.iter().zip(&again) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn no_labels_is_an_error() {
        let cube = RasterCube::new(CubeKind::Hsi, 1, 2, 1, vec![1.0, 2.0]).unwrap();
        let map = LabelMap::new(1, 2, vec![0, 0], 2).unwrap();
        assert!(mi_band_select(&cube, &map, &cfg(1, 4)).is_err());
    }

    // Four pixels chosen so the channel covariance is exactly
    // diag(4, 1, 0.25) under the n - 1 divisor.
    fn axis_aligned_cube() -> RasterCube {
        let a = 3.0f64.sqrt();
        let b = 3.0f64.sqrt() / 2.0;
        let c = 3.0f64.sqrt() / 4.0;
        let ch0 = [a, -a, a, -a];
        let ch1 = [b, b, -b, -b];
        let ch2 = [c, -c, -c, c];
        let mut values = Vec::new();
        values.extend(ch0);
        values.extend(ch1);
        values.extend(ch2);
        RasterCube::new(CubeKind::Hsi, 2, 2, 3, values).unwrap()
    }

    #[test]
    fn pca_recovers_axis_aligned_variances() {
        let cube = axis_aligned_cube();
        let model = PcaModel::fit(&cube, 2).unwrap();
        assert!((model.explained[0] - 4.0 / 5.25).abs() < 1e-12);
        assert!((model.explained[1] - 1.0 / 5.25).abs() < 1e-12);
        for j in 0..2 {
            for r in 0..3 {
                let expect = if r == j { 1.0 } else { 0.0 };
                assert!(
                    (model.basis[r * 2 + j].abs() - expect).abs() < 1e-9,
                    "basis entry ({r},{j}) = {}",
                    model.basis[r * 2 + j]
                );
            }
        }
        let reduced = model.transform(&cube).unwrap();
        for ch in 0..2 {
            let mean: f64 = reduced.channel_plane(ch).iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn full_rank_pca_preserves_total_variance() {
        let cube = axis_aligned_cube();
        let (reduced, explained) = pca_reduce(&cube, 3).unwrap();
        let total_in = 5.25;
        let mut total_out = 0.0;
        for ch in 0..3 {
            let plane = reduced.channel_plane(ch);
            let m: f64 = plane.iter().sum::<f64>() / 4.0;
            total_out += plane.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / 3.0;
        }
        assert!((total_out - total_in).abs() < 1e-6);
        assert!((explained.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_pixels_reduce_to_zero() {
        let cube = RasterCube::new(CubeKind::Hsi, 2, 2, 2, vec![7.0; 8]).unwrap();
        let (reduced, _) = pca_reduce(&cube, 1).unwrap();
        assert!(reduced.values().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn pca_outputs_are_uncorrelated() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (h, w, c) = (8, 8, 5);
        let values: Vec<f64> = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cube = RasterCube::new(CubeKind::Hsi, h, w, c, values).unwrap();
        let model = PcaModel::fit(&cube, 4).unwrap();
        let reduced = model.transform(&cube).unwrap();
        let n = (h * w) as f64;
        let mut vars = Vec::new();
        for ch in 0..4 {
            let p = reduced.channel_plane(ch);
            vars.push(p.iter().map(|&v| v * v).sum::<f64>() / (n - 1.0));
        }
        let lmax = vars.iter().cloned().fold(0.0, f64::max);
        for i in 0..4 {
            for j in i + 1..4 {
                let pi = reduced.channel_plane(i);
                let pj = reduced.channel_plane(j);
                let cov = pi.iter().zip(pj).map(|(&a, &b)| a * b).sum::<f64>() / (n - 1.0);
                assert!(cov.abs() <= 1e-6 * lmax, "channels {i},{j} covary: {cov}");
            }
        }
    }

    fn lidar_cfg() -> PreprocessConfig {
        PreprocessConfig {
            lidar_window: 3,
            ..PreprocessConfig::default()
        }
    }

    #[test]
    fn constant_plane_derives_constants_and_zeros() {
        let cube = RasterCube::new(CubeKind::Lidar, 4, 4, 1, vec![2.5; 16]).unwrap();
        let out = derive_lidar_channels(&cube, &lidar_cfg()).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(out.get(r, c, 0), 2.5);
                assert_eq!(out.get(r, c, 1), 0.0);
                assert_eq!(out.get(r, c, 2), 0.0);
                assert!((out.get(r, c, 3) - 2.5).abs() < 1e-12);
                assert!(out.get(r, c, 4).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ramp_has_unit_gradient_and_zero_curvature_inside() {
        let mut values = vec![0.0; 25];
        for r in 0..5 {
            for c in 0..5 {
                values[r * 5 + c] = c as f64;
            }
        }
        let cube = RasterCube::new(CubeKind::Lidar, 5, 5, 1, values).unwrap();
        let out = derive_lidar_channels(&cube, &lidar_cfg()).unwrap();
        for r in 1..4 {
            for c in 1..4 {
                assert!((out.get(r, c, 1) - 1.0).abs() < 1e-12);
                assert!(out.get(r, c, 2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkerboard_window_statistics() {
        let mut values = vec![0.0; 36];
        for r in 0..6 {
            for c in 0..6 {
                values[r * 6 + c] = ((r + c) % 2) as f64;
            }
        }
        let cube = RasterCube::new(CubeKind::Lidar, 6, 6, 1, values).unwrap();
        let out = derive_lidar_channels(&cube, &lidar_cfg()).unwrap();
        for r in 1..5 {
            for c in 1..5 {
                let mean = out.get(r, c, 3);
                let ok = (mean - 4.0 / 9.0).abs() < 1e-12 || (mean - 5.0 / 9.0).abs() < 1e-12;
                assert!(ok, "mean {mean} at ({r},{c})");
                assert!(out.get(r, c, 4) > 0.0);
            }
        }
    }

    #[test]
    fn constant_shift_moves_only_height_and_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..49).map(|_| rng.gen_range(0.0..5.0)).collect();
        let shifted: Vec<f64> = values.iter().map(|&v| v + 10.0).collect();
        let a = RasterCube::new(CubeKind::Lidar, 7, 7, 1, values).unwrap();
        let b = RasterCube::new(CubeKind::Lidar, 7, 7, 1, shifted).unwrap();
        let da = derive_lidar_channels(&a, &lidar_cfg()).unwrap();
        let db = derive_lidar_channels(&b, &lidar_cfg()).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                assert!((db.get(r, c, 0) - da.get(r, c, 0) - 10.0).abs() < 1e-9);
                assert!((db.get(r, c, 1) - da.get(r, c, 1)).abs() < 1e-9);
                assert!((db.get(r, c, 2) - da.get(r, c, 2)).abs() < 1e-9);
                assert!((db.get(r, c, 3) - da.get(r, c, 3) - 10.0).abs() < 1e-9);
                assert!((db.get(r, c, 4) - da.get(r, c, 4)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn oversized_window_is_rejected() {
        let cube = RasterCube::new(CubeKind::Lidar, 3, 3, 1, vec![0.0; 9]).unwrap();
        let cfg = PreprocessConfig {
            lidar_window: 5,
            ..PreprocessConfig::default()
        };
        assert!(derive_lidar_channels(&cube, &cfg).is_err());
    }

    #[test]
    fn standardization_yields_zero_mean_unit_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..64).map(|_| rng.gen_range(3.0..9.0)).collect();
        let cube = RasterCube::new(CubeKind::Hsi, 8, 8, 1, values).unwrap();
        let stats = ChannelStats::fit(&cube);
        let out = stats.apply(&cube).unwrap();
        let n = 64.0;
        let mean: f64 = out.channel_plane(0).iter().sum::<f64>() / n;
        let var: f64 = out.channel_plane(0).iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
