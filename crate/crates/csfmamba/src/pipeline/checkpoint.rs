//! Checkpoint format: a `manifest.json` describing the run next to a
//! `weights.f32` payload of contiguous little-endian 32-bit floats.
//!
//! The manifest records every tensor's name, shape, byte offset, and role
//! (`"param"` for trainable weights, `"bn"` for running statistics), plus the
//! full pipeline config, the fitted preprocessing transform, and the training
//! history. Weights are quantized to 32 bits exactly once at save time, so
//! load -> save -> load is bit-stable regardless of the training precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::autodiff::{ParamStore, Scalar, Tensor};
use crate::data::PreprocessModel;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.f32";
pub const CHECKPOINT_FORMAT: &str = "csfmamba.checkpoint.v1";

const ROLE_PARAM: &str = "param";
const ROLE_BN: &str = "bn";

/// One tensor in the weights payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the first value inside `weights.f32`.
    pub offset: u64,
    /// `"param"` for trainable tensors, `"bn"` for running statistics.
    pub role: String,
}

/// One training epoch as recorded in logs and the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_oa: f64,
}

/// The epoch whose weights the checkpoint holds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_oa: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: PipelineConfig,
    pub preprocess: Option<PreprocessModel>,
    pub tensors: Vec<TensorRecord>,
    pub metrics_history: Vec<EpochRecord>,
    pub best: Option<BestEpoch>,
}

/// A checkpoint read back into memory.
pub struct LoadedCheckpoint<T> {
    pub manifest: Manifest,
    pub store: ParamStore<T>,
    /// Directory the checkpoint was loaded from.
    pub dir: PathBuf,
}

/// Writes `manifest.json` and `weights.f32` into `dir` (created if missing).
pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    config: &PipelineConfig,
    preprocess: Option<&PreprocessModel>,
    store: &ParamStore<T>,
    history: &[EpochRecord],
    best: Option<BestEpoch>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(store.entries().len());
    let mut payload: Vec<u8> = Vec::with_capacity(store.numel() * 4);
    for entry in store.entries() {
        tensors.push(TensorRecord {
            name: entry.name.clone(),
            shape: entry.value.shape().to_vec(),
            offset: payload.len() as u64,
            role: if entry.trainable { ROLE_PARAM } else { ROLE_BN }.to_string(),
        });
        for &v in entry.value.data() {
            payload.extend_from_slice(&(Scalar::to_f64(v) as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        config: config.clone(),
        preprocess: preprocess.cloned(),
        tensors,
        metrics_history: history.to_vec(),
        best,
    };
    fs::write(dir.join(WEIGHTS_FILE), &payload)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

/// Resolves `path` to the checkpoint directory whether it names the
/// directory or the manifest file inside it.
fn checkpoint_dir(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        Ok(path.to_path_buf())
    } else if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
        Ok(path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf())
    } else {
        Err(Error::Checkpoint(format!(
            "{} is neither a checkpoint directory nor a {MANIFEST_FILE} path",
            path.display()
        )))
    }
}

/// Reads a checkpoint back. `path` may be the directory or its manifest.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LoadedCheckpoint<T>> {
    let dir = checkpoint_dir(path)?;
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {:?}",
            manifest.format
        )));
    }
    manifest.config.validate()?;
    let payload = fs::read(dir.join(WEIGHTS_FILE))?;

    let mut store = ParamStore::new();
    let mut expected = 0u64;
    for rec in &manifest.tensors {
        if rec.offset != expected {
            return Err(Error::Checkpoint(format!(
                "tensor {} starts at byte {} but {} was expected",
                rec.name, rec.offset, expected
            )));
        }
        let numel: usize = rec.shape.iter().product();
        let start = rec.offset as usize;
        let end = start + numel * 4;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} overruns the weights payload ({} > {} bytes)",
                rec.name,
                end,
                payload.len()
            )));
        }
        let data: Vec<T> = payload[start..end]
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        let tensor = Tensor::new(rec.shape.clone(), data)?;
        match rec.role.as_str() {
            ROLE_PARAM => store.insert_with(&rec.name, tensor, true)?,
            ROLE_BN => store.insert_with(&rec.name, tensor, false)?,
            other => {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has unknown role {other:?}",
                    rec.name
                )))
            }
        }
        expected = end as u64;
    }
    if expected as usize != payload.len() {
        return Err(Error::Checkpoint(format!(
            "weights payload holds {} bytes but the manifest accounts for {}",
            payload.len(),
            expected
        )));
    }
    Ok(LoadedCheckpoint {
        manifest,
        store,
        dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_model;

    fn small_store() -> (PipelineConfig, ParamStore<f64>) {
        let cfg = PipelineConfig::desk(3, 9);
        let store = init_model::<f64>(&cfg.model).unwrap();
        (cfg, store)
    }

    fn read_pair(dir: &Path) -> (String, Vec<u8>) {
        (
            fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap(),
            fs::read(dir.join(WEIGHTS_FILE)).unwrap(),
        )
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let (cfg, store) = small_store();
        let history = vec![EpochRecord {
            epoch: 0,
            lr: 5e-4,
            train_loss: 1.2,
            train_acc: 0.5,
            val_oa: 0.4,
        }];
        let best = Some(BestEpoch {
            epoch: 0,
            val_oa: 0.4,
        });
        let a = tmp.path().join("a");
        save_checkpoint(&a, &cfg, None, &store, &history, best).unwrap();

        let loaded = load_checkpoint::<f64>(&a).unwrap();
        assert_eq!(loaded.manifest.metrics_history.len(), 1);
        assert_eq!(loaded.manifest.best.unwrap().epoch, 0);
        let b = tmp.path().join("b");
        save_checkpoint(
            &b,
            &loaded.manifest.config,
            loaded.manifest.preprocess.as_ref(),
            &loaded.store,
            &loaded.manifest.metrics_history,
            loaded.manifest.best,
        )
        .unwrap();

        assert_eq!(read_pair(&a), read_pair(&b));

        // second round trip stays bit stable too
        let loaded2 = load_checkpoint::<f64>(&b.join(MANIFEST_FILE)).unwrap();
        for (x, y) in loaded.store.entries().iter().zip(loaded2.store.entries()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.trainable, y.trainable);
            assert_eq!(x.value.data(), y.value.data());
        }
    }

    #[test]
    fn roles_and_order_survive_the_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let (cfg, store) = small_store();
        save_checkpoint(tmp.path(), &cfg, None, &store, &[], None).unwrap();
        let loaded = load_checkpoint::<f32>(tmp.path()).unwrap();
        assert_eq!(loaded.store.entries().len(), store.entries().len());
        for (orig, back) in store.entries().iter().zip(loaded.store.entries()) {
            assert_eq!(orig.name, back.name);
            assert_eq!(orig.trainable, back.trainable);
            assert_eq!(orig.value.shape(), back.value.shape());
        }
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let (cfg, store) = small_store();
        save_checkpoint(tmp.path(), &cfg, None, &store, &[], None).unwrap();

        // truncated payload
        let payload = fs::read(tmp.path().join(WEIGHTS_FILE)).unwrap();
        fs::write(
            tmp.path().join(WEIGHTS_FILE),
            &payload[..payload.len() - 4],
        )
        .unwrap();
        assert!(load_checkpoint::<f64>(tmp.path()).is_err());
        fs::write(tmp.path().join(WEIGHTS_FILE), &payload).unwrap();

        // wrong format marker
        let text = fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap();
        fs::write(
            tmp.path().join(MANIFEST_FILE),
            text.replace(CHECKPOINT_FORMAT, "someone.elses.format"),
        )
        .unwrap();
        assert!(load_checkpoint::<f64>(tmp.path()).is_err());
        fs::write(tmp.path().join(MANIFEST_FILE), &text).unwrap();

        // stray file path
        assert!(load_checkpoint::<f64>(&tmp.path().join(WEIGHTS_FILE)).is_err());
    }

    #[test]
    fn f64_weights_quantize_once() {
        let tmp = tempfile::tempdir().unwrap();
        let (cfg, mut store) = small_store();
        // a value with no exact f32 representation
        store.get_mut("head.b").unwrap().data_mut()[0] = 0.1f64 + 1e-12;
        save_checkpoint(tmp.path(), &cfg, None, &store, &[], None).unwrap();
        let loaded = load_checkpoint::<f64>(tmp.path()).unwrap();
        let v = loaded.store.get("head.b").unwrap().data()[0];
        assert_eq!(v, (0.1f64 + 1e-12) as f32 as f64);

        // saving again reproduces the same bytes
        let again = tmp.path().join("again");
        save_checkpoint(&again, &cfg, None, &loaded.store, &[], None).unwrap();
        assert_eq!(
            fs::read(tmp.path().join(WEIGHTS_FILE)).unwrap(),
            fs::read(again.join(WEIGHTS_FILE)).unwrap()
        );
    }
}
