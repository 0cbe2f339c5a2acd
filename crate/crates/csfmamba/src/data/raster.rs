//! In-memory rasters: multi-channel cubes and per-pixel class labels.
//!
//! Cubes are stored band-sequential (channel-major), matching the on-disk
//! layout, with `f64` values. Pixel (r, c) of channel ch lives at
//! `ch * H * W + r * W + c`.

use crate::error::{Error, Result};

/// What a cube holds; purely informational.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeKind {
    Hsi,
    Lidar,
    Derived,
}

/// A H x W scene with C channels, all values finite.
#[derive(Clone, Debug)]
pub struct RasterCube {
    kind: CubeKind,
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl RasterCube {
    /// `values` is band-sequential: channel-major, rows within a channel,
    /// columns within a row.
    pub fn new(
        kind: CubeKind,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("raster dimensions must be at least 1"));
        }
        if values.len() != height * width * channels {
            return Err(Error::shape(format!(
                "raster expects {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("raster contains a non-finite value"));
        }
        Ok(RasterCube {
            kind,
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(kind: CubeKind, height: usize, width: usize, channels: usize) -> Result<Self> {
        RasterCube::new(kind, height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn kind(&self) -> CubeKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, v: f64) {
        self.values[(channel * self.height + row) * self.width + col] = v;
    }

    /// One whole channel as a contiguous row-major plane.
    pub fn channel_plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[channel * n..(channel + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Keeps the listed channels, in the order given.
    pub fn select_channels(&self, keep: &[usize], kind: CubeKind) -> Result<RasterCube> {
        let n = self.height * self.width;
        let mut values = Vec::with_capacity(keep.len() * n);
        for &ch in keep {
            if ch >= self.channels {
                return Err(Error::invalid(format!(
                    "channel {ch} out of range for {} channels",
                    self.channels
                )));
            }
            values.extend_from_slice(self.channel_plane(ch));
        }
        RasterCube::new(kind, self.height, self.width, keep.len(), values)
    }
}

/// Per-pixel class labels over the same grid as a cube. 0 means unlabeled;
/// classes run 1..=num_classes.
#[derive(Clone, Debug)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    num_classes: usize,
}

impl LabelMap {
    /// `labels` is row-major.
    pub fn new(height: usize, width: usize, labels: Vec<u16>, num_classes: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("label map dimensions must be at least 1"));
        }
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "label map expects {} entries, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} exceeds class count {num_classes}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
            num_classes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    /// Count of each class 1..=num_classes, index 0 unused.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}
