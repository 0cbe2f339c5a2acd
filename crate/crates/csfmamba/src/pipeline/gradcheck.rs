//! Finite-difference verification of every backward rule, reported
//! primitive by primitive plus one end-to-end pass through the full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{check_gradients, CheckSettings, Graph, GraphParams, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::net::{batch_loss, init_model, model_forward, perturb_params, Mode, ModelConfig};

/// Normalized-error threshold every row must stay under.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradRow {
    pub name: String,
    pub max_error: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct GradReport {
    pub tolerance: f64,
    pub rows: Vec<GradRow>,
    /// Row with the largest error.
    pub worst: String,
    pub worst_error: f64,
    pub pass: bool,
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6AD0_0000 ^ tag)
}

fn param<R: Rng>(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut R) {
    let t = Tensor::rand_uniform(shape, -1.0, 1.0, rng);
    store.insert(name, t).expect("fresh name");
}

/// Random positive values bounded away from zero, for kinked or singular
/// domains (relu at 0, recip near 0).
fn param_off_zero<R: Rng>(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut R) {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let magnitude = rng.gen_range(0.3..1.2);
            if rng.gen_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    store
        .insert(name, Tensor::new(shape.to_vec(), data).unwrap())
        .expect("fresh name");
}

/// Scalar objective: mean of the elementwise product with a fixed random
/// weighting, which keeps every output coordinate in play.
fn weighted_mean(
    g: &mut Graph<f64>,
    y: Var,
    shape: &[usize],
    seed: u64,
) -> Result<Var> {
    let w = Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng(seed));
    let wv = g.constant(w)?;
    let prod = g.mul(y, wv)?;
    g.mean_all(prod)
}

fn run_row<F>(name: &str, store: &mut ParamStore<f64>, samples: usize, build: F) -> Result<GradRow>
where
    F: FnMut(&GraphParams, &mut Graph<f64>) -> Result<Var>,
{
    let settings = CheckSettings {
        samples_per_tensor: samples,
        ..CheckSettings::default()
    };
    let report = check_gradients(store, build, &settings)?;
    Ok(GradRow {
        name: name.to_string(),
        max_error: report.max_error,
        coords_checked: report.coords_checked,
        pass: report.max_error < GRADCHECK_TOL,
    })
}

/// Verifies each primitive's backward rule against central differences,
/// then the whole model end to end at a generic parameter point.
pub fn run_gradcheck() -> Result<GradReport> {
    let mut rows = Vec::new();

    {
        let mut s = ParamStore::new();
        let mut r = rng(1);
        param(&mut s, "a", &[3, 4], &mut r);
        param(&mut s, "b", &[4, 5], &mut r);
        rows.push(run_row("matmul", &mut s, 64, |p, g| {
            let y = g.matmul(p.var("a")?, p.var("b")?)?;
            weighted_mean(g, y, &[3, 5], 101)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(2);
        param(&mut s, "w", &[6, 3], &mut r);
        param(&mut s, "b", &[3], &mut r);
        let x = Tensor::rand_uniform(&[4, 6], -1.0, 1.0, &mut rng(102));
        rows.push(run_row("linear", &mut s, 64, move |p, g| {
            let xv = g.constant(x.clone())?;
            let y = g.linear(xv, p.var("w")?, p.var("b")?)?;
            weighted_mean(g, y, &[4, 3], 103)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(3);
        param(&mut s, "x", &[2, 3, 5, 5], &mut r);
        param(&mut s, "w", &[4, 3, 3, 3], &mut r);
        param(&mut s, "b", &[4], &mut r);
        rows.push(run_row("conv2d", &mut s, 48, |p, g| {
            let y = g.conv2d(p.var("x")?, p.var("w")?, Some(p.var("b")?), 1, 1)?;
            weighted_mean(g, y, &[2, 4, 5, 5], 104)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(4);
        param(&mut s, "x", &[1, 2, 7, 4, 4], &mut r);
        param(&mut s, "w", &[3, 2, 5, 3, 3], &mut r);
        param(&mut s, "b", &[3], &mut r);
        rows.push(run_row("conv3d", &mut s, 48, |p, g| {
            let y = g.conv3d(
                p.var("x")?,
                p.var("w")?,
                Some(p.var("b")?),
                [2, 1, 1],
                [1, 1, 1],
            )?;
            weighted_mean(g, y, &[1, 3, 3, 4, 4], 105)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(5);
        param(&mut s, "x", &[6, 4], &mut r);
        param(&mut s, "gamma", &[4], &mut r);
        param(&mut s, "beta", &[4], &mut r);
        rows.push(run_row("batchnorm", &mut s, 64, |p, g| {
            let (y, _, _) = g.batchnorm_train(p.var("x")?, p.var("gamma")?, p.var("beta")?)?;
            weighted_mean(g, y, &[6, 4], 106)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(6);
        param(&mut s, "x", &[4, 6], &mut r);
        param(&mut s, "gamma", &[6], &mut r);
        param(&mut s, "beta", &[6], &mut r);
        rows.push(run_row("layernorm", &mut s, 64, |p, g| {
            let y = g.layernorm(p.var("x")?, p.var("gamma")?, p.var("beta")?)?;
            weighted_mean(g, y, &[4, 6], 107)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param(&mut s, "x", &[5, 7], &mut rng(7));
        rows.push(run_row("softmax", &mut s, 64, |p, g| {
            let y = g.softmax(p.var("x")?)?;
            weighted_mean(g, y, &[5, 7], 108)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param_off_zero(&mut s, "x", &[4, 9], &mut rng(8));
        rows.push(run_row("relu", &mut s, 64, |p, g| {
            let y = g.relu(p.var("x")?)?;
            weighted_mean(g, y, &[4, 9], 109)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param(&mut s, "x", &[4, 9], &mut rng(9));
        rows.push(run_row("silu", &mut s, 64, |p, g| {
            let y = g.silu(p.var("x")?)?;
            weighted_mean(g, y, &[4, 9], 110)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param(&mut s, "x", &[4, 9], &mut rng(10));
        rows.push(run_row("softplus", &mut s, 64, |p, g| {
            let y = g.softplus(p.var("x")?)?;
            weighted_mean(g, y, &[4, 9], 111)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param(&mut s, "x", &[4, 9], &mut rng(11));
        rows.push(run_row("exp", &mut s, 64, |p, g| {
            let y = g.exp(p.var("x")?)?;
            weighted_mean(g, y, &[4, 9], 112)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param_off_zero(&mut s, "x", &[4, 9], &mut rng(12));
        rows.push(run_row("recip", &mut s, 64, |p, g| {
            let y = g.recip(p.var("x")?)?;
            weighted_mean(g, y, &[4, 9], 113)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(13);
        param(&mut s, "a", &[3, 5], &mut r);
        param(&mut s, "b", &[3, 5], &mut r);
        rows.push(run_row("add_sub_mul_scale", &mut s, 64, |p, g| {
            let (a, b) = (p.var("a")?, p.var("b")?);
            let scaled = g.scale(a, 2.5)?;
            let sum = g.add(scaled, b)?;
            let prod = g.mul(a, b)?;
            let y = g.sub(sum, prod)?;
            weighted_mean(g, y, &[3, 5], 114)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(14);
        param(&mut s, "a", &[2, 3, 4], &mut r);
        param(&mut s, "b", &[2, 2, 4], &mut r);
        rows.push(run_row("concat_slice", &mut s, 64, |p, g| {
            let cat = g.concat(&[p.var("a")?, p.var("b")?], 1)?;
            let y = g.slice(cat, 1, 1, 3)?;
            weighted_mean(g, y, &[2, 3, 4], 115)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param(&mut s, "x", &[2, 3, 4], &mut rng(15));
        let table = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng(115));
        rows.push(run_row("permute_reshape_repeat_broadcast", &mut s, 64, move |p, g| {
            let x = p.var("x")?;
            let broad = g.add_broadcast0(x, &table)?;
            let perm = g.permute(broad, &[1, 0, 2])?;
            let flat = g.reshape(perm, &[3, 8])?;
            let rep = g.repeat0(flat, 2)?;
            weighted_mean(g, rep, &[2, 3, 8], 116)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(16);
        param(&mut s, "a", &[4, 5], &mut r);
        param(&mut s, "b", &[4, 5], &mut r);
        let mask = {
            let mut m = rng(116);
            let data: Vec<f64> = (0..20)
                .map(|_| if m.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            Tensor::new(vec![4, 5], data).unwrap()
        };
        rows.push(run_row("select", &mut s, 64, move |p, g| {
            let y = g.select(&mask, p.var("a")?, p.var("b")?)?;
            weighted_mean(g, y, &[4, 5], 117)
        })?);
    }
    {
        let mut s = ParamStore::new();
        let mut r = rng(17);
        let (batch, len, d_in, n) = (2, 6, 3, 4);
        param(&mut s, "x", &[batch, len, d_in], &mut r);
        param(&mut s, "b", &[batch, len, n], &mut r);
        param(&mut s, "c", &[batch, len, n], &mut r);
        param(&mut s, "delta", &[batch, len, d_in], &mut r);
        // strictly negative transition keeps the recurrence contractive
        let a_data: Vec<f64> = (0..d_in * n).map(|_| r.gen_range(-2.0..-0.3)).collect();
        s.insert("a", Tensor::new(vec![d_in, n], a_data).unwrap())
            .unwrap();
        param(&mut s, "d", &[d_in], &mut r);
        rows.push(run_row("ssm_scan", &mut s, 48, move |p, g| {
            let y = g.ssm_scan(
                p.var("x")?,
                p.var("b")?,
                p.var("c")?,
                p.var("delta")?,
                p.var("a")?,
                p.var("d")?,
            )?;
            weighted_mean(g, y, &[batch, len, d_in], 118)
        })?);
    }
    {
        let mut s = ParamStore::new();
        param(&mut s, "logits", &[5, 4], &mut rng(18));
        let labels = vec![0usize, 3, 1, 2, 1];
        rows.push(run_row("cross_entropy", &mut s, 64, move |p, g| {
            g.cross_entropy(p.var("logits")?, &labels)
        })?);
    }
    {
        // end to end: extractors, tokenizers, encoders, fusion, head
        let cfg = ModelConfig::tiny(3, 404);
        let mut s = init_model::<f64>(&cfg)?;
        // the exact initial point is degenerate (zero CLS rows make the
        // readout data-independent), so probe a generic nearby point
        perturb_params(&mut s, 0.05, 405)?;
        let mut r = rng(19);
        let hsi = Tensor::rand_uniform(&[2, 5, 5, cfg.hsi_channels], -1.0, 1.0, &mut r);
        let lidar = Tensor::rand_uniform(&[2, 5, 5, cfg.lidar_channels], -1.0, 1.0, &mut r);
        let labels = vec![1u16, 3];
        rows.push(run_row("model", &mut s, 8, move |p, g| {
            let hp = g.constant(hsi.clone())?;
            let lp = g.constant(lidar.clone())?;
            let out = model_forward(g, p, &cfg, hp, lp, Mode::Train)?;
            batch_loss(g, out.logits, &labels, cfg.num_classes)
        })?);
    }

    let worst_row = rows
        .iter()
        .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
        .expect("rows is never empty");
    let report = GradReport {
        tolerance: GRADCHECK_TOL,
        worst: worst_row.name.clone(),
        worst_error: worst_row.max_error,
        pass: rows.iter().all(|r| r.pass),
        rows: rows.clone(),
    };
    Ok(report)
}
