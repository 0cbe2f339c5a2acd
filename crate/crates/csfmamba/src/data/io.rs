//! On-disk dataset directories.
//!
//! A dataset is a directory holding `dataset.json` plus three raw binaries:
//! `hsi.f32` and `lidar.f32` (little-endian IEEE-754 32-bit, band-sequential)
//! and `labels.u16` (little-endian unsigned 16-bit, row-major, 0 = unlabeled).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raster::{CubeKind, LabelMap, RasterCube};
use crate::error::{Error, Result};

pub const HEADER_FILE: &str = "dataset.json";
pub const HSI_FILE: &str = "hsi.f32";
pub const LIDAR_FILE: &str = "lidar.f32";
pub const LABELS_FILE: &str = "labels.u16";

/// `dataset.json` contents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub hsi_bands: usize,
    pub lidar_channels: usize,
    pub num_classes: usize,
    pub dtype: String,
    pub layout: String,
}

/// A dataset loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub hsi: RasterCube,
    pub lidar: RasterCube,
    pub labels: LabelMap,
}

pub fn write_dataset(
    dir: &Path,
    name: &str,
    hsi: &RasterCube,
    lidar: &RasterCube,
    labels: &LabelMap,
) -> Result<()> {
    if hsi.height() != labels.height()
        || hsi.width() != labels.width()
        || lidar.height() != labels.height()
        || lidar.width() != labels.width()
    {
        return Err(Error::shape("rasters and labels differ in extent"));
    }
    fs::create_dir_all(dir)?;
    let header = DatasetHeader {
        name: name.to_string(),
        height: hsi.height(),
        width: hsi.width(),
        hsi_bands: hsi.channels(),
        lidar_channels: lidar.channels(),
        num_classes: labels.num_classes(),
        dtype: "f32le".to_string(),
        layout: "band-sequential".to_string(),
    };
    fs::write(
        dir.join(HEADER_FILE),
        serde_json::to_string_pretty(&header)?,
    )?;
    fs::write(dir.join(HSI_FILE), values_to_f32le(hsi.values()))?;
    fs::write(dir.join(LIDAR_FILE), values_to_f32le(lidar.values()))?;
    let mut label_bytes = Vec::with_capacity(labels.labels().len() * 2);
    for &l in labels.labels() {
        label_bytes.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(dir.join(LABELS_FILE), label_bytes)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let header_path = dir.join(HEADER_FILE);
    let header: DatasetHeader = serde_json::from_str(&fs::read_to_string(&header_path).map_err(
        |e| Error::Dataset(format!("cannot read {}: {e}", header_path.display())),
    )?)?;
    if header.dtype != "f32le" {
        return Err(Error::Dataset(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.layout != "band-sequential" {
        return Err(Error::Dataset(format!(
            "unsupported layout {:?}",
            header.layout
        )));
    }
    let (h, w) = (header.height, header.width);
    let hsi = RasterCube::new(
        CubeKind::Hsi,
        h,
        w,
        header.hsi_bands,
        read_f32le(&dir.join(HSI_FILE), h * w * header.hsi_bands)?,
    )?;
    let lidar = RasterCube::new(
        CubeKind::Lidar,
        h,
        w,
        header.lidar_channels,
        read_f32le(&dir.join(LIDAR_FILE), h * w * header.lidar_channels)?,
    )?;
    let labels = LabelMap::new(h, w, read_u16le(&dir.join(LABELS_FILE), h * w)?, header.num_classes)?;
    Ok(Dataset {
        header,
        hsi,
        lidar,
        labels,
    })
}

fn values_to_f32le(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

fn read_f32le(path: &Path, expect: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() != expect * 4 {
        return Err(Error::Dataset(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expect * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_u16le(path: &Path, expect: usize) -> Result<Vec<u16>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() != expect * 2 {
        return Err(Error::Dataset(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expect * 2
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}
