//! Patch feature extractors.
//!
//! The HSI branch treats a patch as one 3-D volume: a strided 3-D conv over
//! (spectral, row, col), flattening of channels x spectral, then a 3x3 2-D
//! conv to the token width. The elevation branch is two 3x3 2-D convs. Every
//! conv is followed by batch normalization and a ReLU; spatial size is
//! preserved throughout. An ablation flag swaps both for per-pixel linear
//! lifts.

use rand::Rng;

use super::config::ModelConfig;
use crate::autodiff::{Graph, GraphParams, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Whether batchnorm uses batch statistics (training) or the recorded
/// running statistics (inference).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by one batchnorm during a training forward;
/// fold into the running statistics with [`apply_bn_updates`].
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Decay of the old running statistics per update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Folds observed batch statistics into the store's running statistics.
pub fn apply_bn_updates<T: Scalar>(
    store: &mut ParamStore<T>,
    updates: &[BnUpdate<T>],
) -> Result<()> {
    let keep = T::from_f64(BN_MOMENTUM);
    let take = T::from_f64(1.0 - BN_MOMENTUM);
    for u in updates {
        for (suffix, batch) in [("running_mean", &u.mean), ("running_var", &u.var)] {
            let name = format!("{}.{suffix}", u.name);
            let t = store
                .get_mut(&name)
                .ok_or_else(|| Error::invalid(format!("no running statistic {name}")))?;
            for (r, &b) in t.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + take * b;
            }
        }
    }
    Ok(())
}

fn uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

fn insert_bn<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<()> {
    store.insert(&format!("{prefix}.gamma"), Tensor::full(&[channels], T::one()))?;
    store.insert(&format!("{prefix}.beta"), Tensor::zeros(&[channels]))?;
    store.insert_with(
        &format!("{prefix}.running_mean"),
        Tensor::zeros(&[channels]),
        false,
    )?;
    store.insert_with(
        &format!("{prefix}.running_var"),
        Tensor::full(&[channels], T::one()),
        false,
    )?;
    Ok(())
}

/// Inserts both extractors' parameters.
pub fn init_extractors<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<()> {
    let d = cfg.token_width;
    if cfg.linear_extractors {
        store.insert(
            "hsi.lift.w",
            uniform(&[cfg.hsi_channels, d], cfg.hsi_channels, rng),
        )?;
        store.insert("hsi.lift.b", Tensor::zeros(&[d]))?;
        store.insert(
            "lidar.lift.w",
            uniform(&[cfg.lidar_channels, d], cfg.lidar_channels, rng),
        )?;
        store.insert("lidar.lift.b", Tensor::zeros(&[d]))?;
        return Ok(());
    }
    let sc = cfg.spectral_channels;
    let kd = cfg.spectral_kernel;
    store.insert("hsi.conv3.w", uniform(&[sc, 1, kd, 3, 3], kd * 9, rng))?;
    store.insert("hsi.conv3.b", Tensor::zeros(&[sc]))?;
    insert_bn(store, "hsi.bn3", sc)?;
    let flat = cfg.flattened_channels();
    store.insert("hsi.conv2.w", uniform(&[d, flat, 3, 3], flat * 9, rng))?;
    store.insert("hsi.conv2.b", Tensor::zeros(&[d]))?;
    insert_bn(store, "hsi.bn2", d)?;

    let hid = cfg.lidar_hidden;
    store.insert(
        "lidar.conv1.w",
        uniform(&[hid, cfg.lidar_channels, 3, 3], cfg.lidar_channels * 9, rng),
    )?;
    store.insert("lidar.conv1.b", Tensor::zeros(&[hid]))?;
    insert_bn(store, "lidar.bn1", hid)?;
    store.insert("lidar.conv2.w", uniform(&[d, hid, 3, 3], hid * 9, rng))?;
    store.insert("lidar.conv2.b", Tensor::zeros(&[d]))?;
    insert_bn(store, "lidar.bn2", d)?;
    Ok(())
}

/// Conv-bn-relu helper shared by both branches. Collects training-mode batch
/// statistics into `updates`; inference reads the bound running statistics.
fn bn_relu<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    name: &str,
    x: Var,
    mode: Mode,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<Var> {
    let gamma = bound.var(&format!("{name}.gamma"))?;
    let beta = bound.var(&format!("{name}.beta"))?;
    let normed = match mode {
        Mode::Train => {
            let (y, mean, var) = g.batchnorm_train(x, gamma, beta)?;
            updates.push(BnUpdate {
                name: name.to_string(),
                mean,
                var,
            });
            y
        }
        Mode::Eval => {
            let rm = g
                .value(bound.var(&format!("{name}.running_mean"))?)
                .data()
                .to_vec();
            let rv = g
                .value(bound.var(&format!("{name}.running_var"))?)
                .data()
                .to_vec();
            g.batchnorm_eval(x, gamma, beta, &rm, &rv)?
        }
    };
    g.relu(normed)
}

/// HSI branch: `[batch, s, s, C1]` channel-last patches to `[batch, D, s, s]`
/// feature maps.
pub fn hsi_extract<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    cfg: &ModelConfig,
    patches: Var,
    mode: Mode,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<Var> {
    let shape = g.value(patches).shape().to_vec();
    let (b, s) = (shape[0], cfg.patch_size);
    if shape != [b, s, s, cfg.hsi_channels] {
        return Err(Error::shape(format!(
            "expected [batch, {s}, {s}, {}] patches, got {shape:?}",
            cfg.hsi_channels
        )));
    }
    if cfg.linear_extractors {
        let lifted = g.linear(patches, bound.var("hsi.lift.w")?, bound.var("hsi.lift.b")?)?;
        return g.permute(lifted, &[0, 3, 1, 2]);
    }
    let nchw = g.permute(patches, &[0, 3, 1, 2])?;
    let volume = g.reshape(nchw, &[b, 1, cfg.hsi_channels, s, s])?;
    let c3 = g.conv3d(
        volume,
        bound.var("hsi.conv3.w")?,
        Some(bound.var("hsi.conv3.b")?),
        [cfg.spectral_stride, 1, 1],
        [0, 1, 1],
    )?;
    let a3 = bn_relu(g, bound, "hsi.bn3", c3, mode, updates)?;
    let flat = g.reshape(a3, &[b, cfg.flattened_channels(), s, s])?;
    let c2 = g.conv2d(
        flat,
        bound.var("hsi.conv2.w")?,
        Some(bound.var("hsi.conv2.b")?),
        1,
        1,
    )?;
    bn_relu(g, bound, "hsi.bn2", c2, mode, updates)
}

/// Elevation branch: `[batch, s, s, C2]` patches to `[batch, D, s, s]`.
pub fn lidar_extract<T: Scalar>(
    g: &mut Graph<T>,
    bound: &GraphParams,
    cfg: &ModelConfig,
    patches: Var,
    mode: Mode,
    updates: &mut Vec<BnUpdate<T>>,
) -> Result<Var> {
    let shape = g.value(patches).shape().to_vec();
    let (b, s) = (shape[0], cfg.patch_size);
    if shape != [b, s, s, cfg.lidar_channels] {
        return Err(Error::shape(format!(
            "expected [batch, {s}, {s}, {}] patches, got {shape:?}",
            cfg.lidar_channels
        )));
    }
    if cfg.linear_extractors {
        let lifted = g.linear(patches, bound.var("lidar.lift.w")?, bound.var("lidar.lift.b")?)?;
        return g.permute(lifted, &[0, 3, 1, 2]);
    }
    let nchw = g.permute(patches, &[0, 3, 1, 2])?;
    let c1 = g.conv2d(
        nchw,
        bound.var("lidar.conv1.w")?,
        Some(bound.var("lidar.conv1.b")?),
        1,
        1,
    )?;
    let a1 = bn_relu(g, bound, "lidar.bn1", c1, mode, updates)?;
    let c2 = g.conv2d(
        a1,
        bound.var("lidar.conv2.w")?,
        Some(bound.var("lidar.conv2.b")?),
        1,
        1,
    )?;
    bn_relu(g, bound, "lidar.bn2", c2, mode, updates)
}
