//! Batched prediction and checkpoint evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::load_checkpoint;
use super::metrics::{confusion_and_metrics, ConfusionMatrix, MetricsReport};
use super::prep::{check_dataset, replay_inputs};
use crate::autodiff::{Graph, ParamStore, Scalar};
use crate::data::{
    extract_patches, read_dataset, stratified_split_indices, PatchSelection, PatchSet,
};
use crate::error::{Error, Result};
use crate::net::{model_forward, patch_batch, Mode, ModelConfig};
use crate::pipeline::PrecisionMode;

/// Which half of the stratified split to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Val,
}

impl std::fmt::Display for SplitChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitChoice::Train => write!(f, "train"),
            SplitChoice::Val => write!(f, "val"),
        }
    }
}

impl std::str::FromStr for SplitChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitChoice::Train),
            "val" => Ok(SplitChoice::Val),
            other => Err(Error::invalid(format!(
                "unknown split {other:?}, expected train or val"
            ))),
        }
    }
}

/// Predicts 1-based class labels for the listed patches, `batch` at a time.
///
/// Runs in evaluation mode, where every forward is per-sample stateless, so
/// the batch size never changes a prediction.
pub fn predict_subset<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &ModelConfig,
    hsi_patches: &PatchSet,
    lidar_patches: &PatchSet,
    indices: &[usize],
    batch: usize,
) -> Result<Vec<u16>> {
    if batch == 0 {
        return Err(Error::invalid("prediction batch size must be at least 1"));
    }
    if hsi_patches.len() != lidar_patches.len() {
        return Err(Error::shape(format!(
            "{} spectral patches but {} elevation patches",
            hsi_patches.len(),
            lidar_patches.len()
        )));
    }
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch) {
        let mut g = Graph::new();
        let bound = store.bind(&mut g)?;
        let hp = g.constant(patch_batch::<T>(hsi_patches, chunk)?)?;
        let lp = g.constant(patch_batch::<T>(lidar_patches, chunk)?)?;
        let out = model_forward(&mut g, &bound, cfg, hp, lp, Mode::Eval)?;
        let logits = g.value(out.logits);
        let k = cfg.num_classes;
        if logits.data().len() != chunk.len() * k {
            return Err(Error::shape(format!(
                "logits hold {} values for {} rows of {k}",
                logits.data().len(),
                chunk.len()
            )));
        }
        for row in logits.data().chunks(k) {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            preds.push((best + 1) as u16);
        }
    }
    Ok(preds)
}

/// Metrics for one split, as written to `metrics_<split>.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
    /// `confusion[t][p]` counts truth class `t+1` predicted as `p+1`.
    pub confusion: Vec<Vec<u64>>,
    pub split: String,
    pub samples: usize,
}

impl EvalReport {
    pub fn new(metrics: &MetricsReport, confusion: &ConfusionMatrix, split: SplitChoice) -> Self {
        EvalReport {
            oa: metrics.oa,
            aa: metrics.aa,
            kappa: metrics.kappa,
            per_class: metrics.per_class.clone(),
            confusion: confusion.rows(),
            split: split.to_string(),
            samples: confusion.total() as usize,
        }
    }
}

/// Scores a checkpoint on the train or val half of its own stored split and
/// writes `metrics_<split>.json` next to the manifest.
pub fn evaluate(checkpoint: &Path, data_dir: &Path, split: SplitChoice) -> Result<EvalReport> {
    let probe = load_checkpoint::<f32>(checkpoint)?;
    match probe.manifest.config.train.precision {
        PrecisionMode::F32 => evaluate_typed::<f32>(checkpoint, data_dir, split),
        PrecisionMode::F64 => evaluate_typed::<f64>(checkpoint, data_dir, split),
    }
}

fn evaluate_typed<T: Scalar>(
    checkpoint: &Path,
    data_dir: &Path,
    split: SplitChoice,
) -> Result<EvalReport> {
    let loaded = load_checkpoint::<T>(checkpoint)?;
    let cfg = &loaded.manifest.config;
    let ds = read_dataset(data_dir)?;
    check_dataset(&ds, cfg)?;
    let (hsi, lidar) = replay_inputs(&ds, cfg, loaded.manifest.preprocess.as_ref())?;
    let s = cfg.model.patch_size;
    let hsi_patches = extract_patches(&hsi, &ds.labels, s, PatchSelection::LabeledOnly)?;
    let lidar_patches = extract_patches(&lidar, &ds.labels, s, PatchSelection::LabeledOnly)?;
    let (train_idx, val_idx) = stratified_split_indices(hsi_patches.labels(), &cfg.split)?;
    let indices = match split {
        SplitChoice::Train => train_idx,
        SplitChoice::Val => val_idx,
    };
    if indices.is_empty() {
        return Err(Error::Dataset(format!("the {split} split is empty")));
    }
    let preds = predict_subset(
        &loaded.store,
        &cfg.model,
        &hsi_patches,
        &lidar_patches,
        &indices,
        cfg.train.batch_size.max(1),
    )?;
    let truth: Vec<u16> = indices.iter().map(|&i| hsi_patches.labels()[i]).collect();
    let (confusion, metrics) = confusion_and_metrics(&truth, &preds, cfg.model.num_classes)?;
    let report = EvalReport::new(&metrics, &confusion, split);
    let out = loaded.dir.join(format!("metrics_{split}.json"));
    fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
