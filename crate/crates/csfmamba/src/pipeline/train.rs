//! Training loop: stratified patch sampling, Adam with a stepped learning
//! rate, per-epoch validation, and best-epoch checkpointing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, BestEpoch, EpochRecord};
use super::config::{PipelineConfig, PrecisionMode};
use super::eval::predict_subset;
use super::metrics::confusion_and_metrics;
use super::prep::{check_dataset, fit_inputs};
use crate::autodiff::{Adam, Graph, Scalar};
use crate::data::{extract_patches, read_dataset, stratified_split_indices, PatchSelection};
use crate::error::{Error, Result};
use crate::net::{apply_bn_updates, batch_loss, init_model, model_forward, patch_batch, Mode};

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// What a finished run hands back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best: BestEpoch,
    /// Directory holding the best-epoch checkpoint and the training log.
    pub checkpoint_dir: PathBuf,
}

/// Trains on the scene in `data_dir` and writes the best-validation
/// checkpoint plus a line-oriented JSON log into `out_dir`.
pub fn train(data_dir: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.train.precision {
        PrecisionMode::F32 => train_typed::<f32>(data_dir, cfg, out_dir),
        PrecisionMode::F64 => train_typed::<f64>(data_dir, cfg, out_dir),
    }
}

/// Whether an epoch's validation score displaces the incumbent best.
/// Ties go to the newer epoch, which has seen more optimization.
fn improves(best: &Option<BestEpoch>, val_oa: f64) -> bool {
    best.map_or(true, |b| val_oa >= b.val_oa)
}

fn train_typed<T: Scalar>(
    data_dir: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    if cfg.train.batch_size < 2 {
        return Err(Error::Config(
            "training batch size must be at least 2 for batch statistics".into(),
        ));
    }
    let ds = read_dataset(data_dir)?;
    check_dataset(&ds, cfg)?;
    let (preprocess, hsi, lidar) = fit_inputs(&ds, cfg)?;
    let s = cfg.model.patch_size;
    let hsi_patches = extract_patches(&hsi, &ds.labels, s, PatchSelection::LabeledOnly)?;
    let lidar_patches = extract_patches(&lidar, &ds.labels, s, PatchSelection::LabeledOnly)?;
    let (train_idx, val_idx) = stratified_split_indices(hsi_patches.labels(), &cfg.split)?;
    if train_idx.len() < 2 {
        return Err(Error::Dataset(format!(
            "{} training samples cannot form a batch",
            train_idx.len()
        )));
    }

    fs::create_dir_all(out_dir)?;
    let mut log = BufWriter::new(fs::File::create(out_dir.join(TRAIN_LOG_FILE))?);

    let mut store = init_model::<T>(&cfg.model)?;
    let mut opt = Adam::new();
    // one RNG drives every epoch's shuffle, so epoch order is a single
    // deterministic stream
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);

    let mut history: Vec<EpochRecord> = Vec::with_capacity(cfg.train.epochs);
    let mut best: Option<BestEpoch> = None;
    let mut best_store = store.clone();

    for epoch in 0..cfg.train.epochs {
        let lr = cfg.train.lr_at(epoch);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (step, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            if chunk.len() < 2 {
                // batch statistics need at least two samples
                continue;
            }
            let mut g = Graph::new();
            let bound = store.bind(&mut g)?;
            let hp = g.constant(patch_batch::<T>(&hsi_patches, chunk)?)?;
            let lp = g.constant(patch_batch::<T>(&lidar_patches, chunk)?)?;
            let labels: Vec<u16> = chunk.iter().map(|&i| hsi_patches.labels()[i]).collect();
            let out = model_forward(&mut g, &bound, &cfg.model, hp, lp, Mode::Train)?;
            let loss = batch_loss(&mut g, out.logits, &labels, cfg.model.num_classes)?;
            let loss_value = Scalar::to_f64(g.value(loss).data()[0]);
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is not finite at epoch {epoch}, step {step}"
                )));
            }
            g.backward(loss)?;
            let grads = store.collect_grads(&g, &bound)?;
            opt.step(&mut store, &grads, lr)?;
            apply_bn_updates(&mut store, &out.bn_updates)?;
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen as f64;

        let eval_batch = cfg.train.batch_size.max(1);
        let train_preds = predict_subset(
            &store,
            &cfg.model,
            &hsi_patches,
            &lidar_patches,
            &train_idx,
            eval_batch,
        )?;
        let correct = train_idx
            .iter()
            .zip(&train_preds)
            .filter(|(&i, &p)| hsi_patches.labels()[i] == p)
            .count();
        let train_acc = correct as f64 / train_idx.len() as f64;

        let val_preds = predict_subset(
            &store,
            &cfg.model,
            &hsi_patches,
            &lidar_patches,
            &val_idx,
            eval_batch,
        )?;
        let val_truth: Vec<u16> = val_idx.iter().map(|&i| hsi_patches.labels()[i]).collect();
        let (_, val_metrics) =
            confusion_and_metrics(&val_truth, &val_preds, cfg.model.num_classes)?;
        let val_oa = val_metrics.oa;

        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            train_acc,
            val_oa,
        };
        let line = serde_json::to_string(&record)?;
        writeln!(log, "{line}")?;
        log.flush()?;
        history.push(record);

        if improves(&best, val_oa) {
            best = Some(BestEpoch { epoch, val_oa });
            best_store = store.clone();
        }
    }

    let best = best.expect("at least one epoch ran");
    save_checkpoint(
        out_dir,
        cfg,
        preprocess.as_ref(),
        &best_store,
        &history,
        Some(best),
    )?;
    Ok(TrainOutcome {
        history,
        best,
        checkpoint_dir: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, write_dataset, SplitSpec, SyntheticSpec, TrainSize};
    use crate::pipeline::checkpoint::{load_checkpoint, MANIFEST_FILE, WEIGHTS_FILE};
    use crate::pipeline::eval::{evaluate, SplitChoice};

    fn write_scene(dir: &Path, seed: u64) {
        let spec = SyntheticSpec {
            seed,
            height: 16,
            width: 16,
            num_classes: 3,
            hsi_bands: 20,
            noise_sigma: 0.05,
        };
        let (hsi, lidar, labels) = make_synthetic(&spec).unwrap();
        write_dataset(dir, "scene", &hsi, &lidar, &labels).unwrap();
    }

    fn quick_cfg(epochs: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::desk(3, 7);
        cfg.preprocess.mi_top_bands = 12;
        cfg.train.epochs = epochs;
        cfg.train.batch_size = 16;
        cfg.split = SplitSpec {
            train: TrainSize::PerClass(8),
            seed: 7,
        };
        cfg
    }

    #[test]
    fn ties_displace_the_incumbent_and_losses_do_not() {
        assert!(improves(&None, 0.0));
        let b = Some(BestEpoch {
            epoch: 2,
            val_oa: 0.5,
        });
        assert!(improves(&b, 0.5));
        assert!(improves(&b, 0.51));
        assert!(!improves(&b, 0.49));
    }

    #[test]
    fn batch_size_one_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_scene(tmp.path(), 3);
        let mut cfg = quick_cfg(1);
        cfg.train.batch_size = 1;
        let err = train(tmp.path(), &cfg, &tmp.path().join("run")).unwrap_err();
        assert!(err.to_string().contains("batch size"));
    }

    #[test]
    fn a_short_run_checkpoints_its_best_epoch() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        write_scene(&data, 11);
        let cfg = quick_cfg(3);
        let out = tmp.path().join("run");
        let outcome = train(&data, &cfg, &out).unwrap();

        assert_eq!(outcome.history.len(), 3);
        assert_eq!(outcome.checkpoint_dir, out);
        for (i, rec) in outcome.history.iter().enumerate() {
            assert_eq!(rec.epoch, i);
            assert!(rec.train_loss.is_finite());
            assert!((0.0..=1.0).contains(&rec.train_acc));
            assert!((0.0..=1.0).contains(&rec.val_oa));
            assert_eq!(rec.lr, cfg.train.lr_at(i));
        }

        // the recorded best is the max val score, later epoch on ties
        let best = outcome.best;
        let max_oa = outcome
            .history
            .iter()
            .map(|r| r.val_oa)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.val_oa, max_oa);
        let last_at_max = outcome
            .history
            .iter()
            .rev()
            .find(|r| r.val_oa == max_oa)
            .unwrap();
        assert_eq!(best.epoch, last_at_max.epoch);

        // the log replays the in-memory history line by line
        let log = fs::read_to_string(out.join(TRAIN_LOG_FILE)).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 3);
        for (line, rec) in lines.iter().zip(&outcome.history) {
            let parsed: EpochRecord = serde_json::from_str(line).unwrap();
            assert_eq!(parsed.epoch, rec.epoch);
            assert_eq!(parsed.val_oa, rec.val_oa);
            assert_eq!(parsed.train_loss, rec.train_loss);
        }

        // the checkpoint carries the config, transform, and history
        let loaded = load_checkpoint::<f64>(&out).unwrap();
        assert_eq!(loaded.manifest.best.unwrap().epoch, best.epoch);
        assert_eq!(loaded.manifest.metrics_history.len(), 3);
        assert!(loaded.manifest.preprocess.is_some());

        // evaluation from the checkpoint is deterministic
        let r1 = evaluate(&out, &data, SplitChoice::Val).unwrap();
        let r2 = evaluate(&out.join(MANIFEST_FILE), &data, SplitChoice::Val).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        assert!(out.join("metrics_val.json").exists());
        let sum: u64 = r1.confusion.iter().flatten().sum();
        assert_eq!(sum as usize, r1.samples);

        let tr = evaluate(&out, &data, SplitChoice::Train).unwrap();
        assert_eq!(tr.samples, 24);
        assert_eq!(tr.split, "train");
    }

    #[test]
    fn identical_seeds_reproduce_identical_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        write_scene(&data, 21);
        let cfg = quick_cfg(2);
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let oa = train(&data, &cfg, &a).unwrap();
        let ob = train(&data, &cfg, &b).unwrap();

        assert_eq!(
            serde_json::to_string(&oa.history).unwrap(),
            serde_json::to_string(&ob.history).unwrap()
        );
        assert_eq!(
            fs::read(a.join(WEIGHTS_FILE)).unwrap(),
            fs::read(b.join(WEIGHTS_FILE)).unwrap()
        );
        assert_eq!(
            fs::read_to_string(a.join(MANIFEST_FILE)).unwrap(),
            fs::read_to_string(b.join(MANIFEST_FILE)).unwrap()
        );
    }
}
