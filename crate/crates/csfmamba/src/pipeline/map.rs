//! Full-scene classification maps: every pixel classified through its patch,
//! rendered as a P6 PPM with a deterministic palette plus a raw u16 class
//! raster and a JSON legend.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::load_checkpoint;
use super::config::PrecisionMode;
use super::prep::{check_dataset, replay_inputs};
use crate::autodiff::{Graph, ParamStore, Scalar, Tensor};
use crate::data::{patches_for_pixels, read_dataset, RasterCube};
use crate::error::{Error, Result};
use crate::net::{model_forward, Mode, ModelConfig};

/// Pixels classified per forward pass; bounds peak memory on large scenes.
pub const DEFAULT_TILE: usize = 256;

/// A rendered scene map and where its files were written.
#[derive(Debug)]
pub struct MapOutput {
    pub height: usize,
    pub width: usize,
    /// Predicted class per pixel, row-major, 1-based.
    pub classes: Vec<u16>,
    pub ppm: PathBuf,
    pub raster: PathBuf,
    pub legend: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct LegendEntry {
    class: u16,
    rgb: [u8; 3],
}

#[derive(Serialize, Deserialize)]
struct Legend {
    num_classes: usize,
    entries: Vec<LegendEntry>,
}

/// Standard HSV to RGB conversion; `h` wraps modulo 1.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let sector = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let to_byte = |x: f64| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    [to_byte(r), to_byte(g), to_byte(b)]
}

/// Palette entry for class `k` of `num_classes`: hue `k / K` at fixed
/// saturation and value. Deterministic, so maps are comparable across runs.
pub fn class_color(k: u16, num_classes: usize) -> [u8; 3] {
    hsv_to_rgb(k as f64 / num_classes as f64, 0.85, 0.95)
}

fn argmax_rows<T: Scalar>(logits: &Tensor<T>, k: usize) -> Vec<u16> {
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            (best + 1) as u16
        })
        .collect()
}

/// Classifies every pixel of the scene, `tile` pixels per forward pass.
pub fn predict_all_pixels<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    hsi: &RasterCube,
    lidar: &RasterCube,
    tile: usize,
) -> Result<Vec<u16>> {
    if tile == 0 {
        return Err(Error::invalid("tile size must be at least 1"));
    }
    let (h, w) = (hsi.height(), hsi.width());
    let s = cfg.patch_size;
    let pixels: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .collect();
    let mut classes = Vec::with_capacity(h * w);
    for chunk in pixels.chunks(tile) {
        let n = chunk.len();
        let to_tensor = |cube: &RasterCube| -> Result<Tensor<T>> {
            let flat = patches_for_pixels(cube, chunk, s)?;
            let data: Vec<T> = flat.into_iter().map(T::from_f64).collect();
            Tensor::new(vec![n, s, s, cube.channels()], data)
        };
        let mut g = Graph::new();
        let bound = store.bind(&mut g)?;
        let hp = g.constant(to_tensor(hsi)?)?;
        let lp = g.constant(to_tensor(lidar)?)?;
        let out = model_forward(&mut g, &bound, cfg, hp, lp, Mode::Eval)?;
        classes.extend(argmax_rows(g.value(out.logits), cfg.num_classes));
    }
    Ok(classes)
}

fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes)?;
    Ok(())
}

/// Renders the full-scene map for a checkpoint. `out_ppm` names the color
/// image; the u16 raster and JSON legend are written next to it with the
/// same stem.
pub fn predict_map(
    checkpoint: &Path,
    data_dir: &Path,
    out_ppm: &Path,
    tile: usize,
) -> Result<MapOutput> {
    let probe = load_checkpoint::<f32>(checkpoint)?;
    match probe.manifest.config.train.precision {
        PrecisionMode::F32 => predict_map_typed::<f32>(checkpoint, data_dir, out_ppm, tile),
        PrecisionMode::F64 => predict_map_typed::<f64>(checkpoint, data_dir, out_ppm, tile),
    }
}

fn predict_map_typed<T: Scalar>(
    checkpoint: &Path,
    data_dir: &Path,
    out_ppm: &Path,
    tile: usize,
) -> Result<MapOutput> {
    let loaded = load_checkpoint::<T>(checkpoint)?;
    let cfg = &loaded.manifest.config;
    let ds = read_dataset(data_dir)?;
    check_dataset(&ds, cfg)?;
    let (hsi, lidar) = replay_inputs(&ds, cfg, loaded.manifest.preprocess.as_ref())?;
    let classes = predict_all_pixels(&loaded.store, &cfg.model, &hsi, &lidar, tile)?;

    let (h, w, k) = (hsi.height(), hsi.width(), cfg.model.num_classes);
    let mut rgb = Vec::with_capacity(classes.len() * 3);
    for &c in &classes {
        rgb.extend_from_slice(&class_color(c, k));
    }
    if let Some(parent) = out_ppm.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_ppm(out_ppm, w, h, &rgb)?;

    let raster_path = out_ppm.with_extension("u16");
    let mut raster = Vec::with_capacity(classes.len() * 2);
    for &c in &classes {
        raster.extend_from_slice(&c.to_le_bytes());
    }
    fs::write(&raster_path, raster)?;

    let legend_path = out_ppm.with_extension("legend.json");
    let legend = Legend {
        num_classes: k,
        entries: (1..=k as u16)
            .map(|class| LegendEntry {
                class,
                rgb: class_color(class, k),
            })
            .collect(),
    };
    fs::write(&legend_path, serde_json::to_string_pretty(&legend)?)?;

    Ok(MapOutput {
        height: h,
        width: w,
        classes,
        ppm: out_ppm.to_path_buf(),
        raster: raster_path,
        legend: legend_path,
    })
}
