//! Patch extraction around pixels and deterministic stratified splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::{LabelMap, RasterCube};
use crate::error::{Error, Result};

/// Which pixels get a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchSelection {
    /// Only pixels with a nonzero label; labels are then all in 1..=K.
    LabeledOnly,
    /// Every pixel in row-major order; labels keep the raw map value
    /// (0 for unlabeled). Used for full-scene prediction.
    AllPixels,
}

/// N square patches, channel-last `[N, s, s, C]`, each centered on a source
/// pixel. Cells that fall outside the image are exactly zero.
#[derive(Clone, Debug)]
pub struct PatchSet {
    patch_size: usize,
    channels: usize,
    data: Vec<f64>,
    labels: Vec<u16>,
    coords: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Patch `n` as a `[s, s, C]` channel-last slice.
    pub fn patch(&self, n: usize) -> &[f64] {
        let stride = self.patch_size * self.patch_size * self.channels;
        &self.data[n * stride..(n + 1) * stride]
    }

    #[inline]
    pub fn at(&self, n: usize, row: usize, col: usize, ch: usize) -> f64 {
        let s = self.patch_size;
        self.data[((n * s + row) * s + col) * self.channels + ch]
    }

    /// New set holding the listed patches, order preserved.
    pub fn subset(&self, indices: &[usize]) -> PatchSet {
        let stride = self.patch_size * self.patch_size * self.channels;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        let mut coords = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.patch(i));
            labels.push(self.labels[i]);
            coords.push(self.coords[i]);
        }
        PatchSet {
            patch_size: self.patch_size,
            channels: self.channels,
            data,
            labels,
            coords,
        }
    }
}

/// Copies the s x s window centered at (row, col) into `out`, channel-last,
/// zeroing cells outside the image.
fn patch_at(cube: &RasterCube, row: usize, col: usize, s: usize, out: &mut [f64]) {
    let half = (s / 2) as isize;
    let (h, w, c) = (cube.height() as isize, cube.width() as isize, cube.channels());
    for i in 0..s as isize {
        for j in 0..s as isize {
            let r = row as isize + i - half;
            let q = col as isize + j - half;
            let base = ((i as usize * s) + j as usize) * c;
            if r < 0 || r >= h || q < 0 || q >= w {
                out[base..base + c].fill(0.0);
            } else {
                for ch in 0..c {
                    out[base + ch] = cube.get(r as usize, q as usize, ch);
                }
            }
        }
    }
}

/// Channel-last `[n, s, s, C]` patch values for an explicit pixel list,
/// zero-padded outside the image exactly like [`extract_patches`]. Serves
/// tiled full-scene prediction, where materializing every patch at once
/// would exhaust memory.
pub fn patches_for_pixels(
    cube: &RasterCube,
    pixels: &[(usize, usize)],
    s: usize,
) -> Result<Vec<f64>> {
    if s % 2 == 0 {
        return Err(Error::invalid(format!("patch size {s} must be odd")));
    }
    let c = cube.channels();
    let stride = s * s * c;
    let mut data = vec![0.0f64; pixels.len() * stride];
    for (k, &(r, q)) in pixels.iter().enumerate() {
        if r >= cube.height() || q >= cube.width() {
            return Err(Error::invalid(format!(
                "pixel ({r}, {q}) outside a {}x{} scene",
                cube.height(),
                cube.width()
            )));
        }
        patch_at(cube, r, q, s, &mut data[k * stride..(k + 1) * stride]);
    }
    Ok(data)
}

/// One patch per selected pixel, centered on it, zero outside the image.
pub fn extract_patches(
    cube: &RasterCube,
    labels: &LabelMap,
    s: usize,
    which: PatchSelection,
) -> Result<PatchSet> {
    if s % 2 == 0 {
        return Err(Error::invalid(format!("patch size {s} must be odd")));
    }
    if s > 2 * cube.height().max(cube.width()) {
        return Err(Error::invalid(format!(
            "patch size {s} is unreasonably large for a {}x{} scene",
            cube.height(),
            cube.width()
        )));
    }
    if cube.height() != labels.height() || cube.width() != labels.width() {
        return Err(Error::shape("cube and label map differ in extent"));
    }
    let c = cube.channels();
    let stride = s * s * c;
    let mut data = Vec::new();
    let mut out_labels = Vec::new();
    let mut coords = Vec::new();
    let mut buf = vec![0.0f64; stride];
    for r in 0..cube.height() {
        for q in 0..cube.width() {
            let l = labels.get(r, q);
            if which == PatchSelection::LabeledOnly && l == 0 {
                continue;
            }
            patch_at(cube, r, q, s, &mut buf);
            data.extend_from_slice(&buf);
            out_labels.push(l);
            coords.push((r, q));
        }
    }
    Ok(PatchSet {
        patch_size: s,
        channels: c,
        data,
        labels: out_labels,
        coords,
    })
}

/// How many samples of each class go to the training side.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSize {
    PerClass(usize),
    Fraction(f64),
}

/// Deterministic stratified train/validation split.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: TrainSize,
    pub seed: u64,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        match self.train {
            TrainSize::PerClass(n) if n == 0 => {
                Err(Error::invalid("per-class train count must be at least 1"))
            }
            TrainSize::Fraction(f) if !(0.0 < f && f < 1.0) => {
                Err(Error::invalid(format!("train fraction {f} not in (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// Index sets of the split: disjoint, covering all patches, per-class train
/// counts as specified. Exposed for tests and index-level consumers.
pub fn stratified_split_indices(
    labels: &[u16],
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let max_class = labels.iter().copied().max().unwrap_or(0) as usize;
    if max_class == 0 {
        return Err(Error::Dataset("no labeled samples to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 1..=max_class {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l as usize == class)
            .map(|(i, _)| i)
            .collect();
        let take = match spec.train {
            TrainSize::PerClass(n) => {
                if n > members.len() {
                    return Err(Error::Dataset(format!(
                        "class {class} has {} samples, cannot take {n} for training",
                        members.len()
                    )));
                }
                n
            }
            TrainSize::Fraction(_) if members.is_empty() => continue,
            TrainSize::Fraction(f) => ((members.len() as f64 * f) as usize).max(1),
        };
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..take]);
        val.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Splits a patch set per class; every input patch lands in exactly one side.
pub fn stratified_split(patches: &PatchSet, spec: &SplitSpec) -> Result<(PatchSet, PatchSet)> {
    let (train, val) = stratified_split_indices(patches.labels(), spec)?;
    Ok((patches.subset(&train), patches.subset(&val)))
}
