//! Central-difference verification of reverse-mode gradients.
//!
//! The checker rebuilds the objective graph from a [`ParamStore`], compares
//! every analytic gradient against `(f(x + e) - f(x - e)) / 2e` on a sampled
//! subset of coordinates, and reports the worst normalized error. Objectives
//! must be deterministic; a double evaluation guards against accidental
//! randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{GraphParams, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub struct CheckSettings {
    /// Coordinates sampled per tensor (all of them if the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Base half-width of the central difference, scaled by `1 + |theta|`.
    pub step: f64,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            samples_per_tensor: 64,
            step: 1e-5,
            seed: 0x9d5c_17e3,
        }
    }
}

/// Worst-case comparison over all sampled coordinates.
pub struct CheckReport {
    pub max_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl CheckReport {
    pub fn describe(&self) -> String {
        match &self.worst {
            Some((name, idx, analytic, numeric)) => format!(
                "checked {} coordinates, max error {:.3e} at {}[{}] (analytic {:.9e}, numeric {:.9e})",
                self.coords_checked, self.max_error, name, idx, analytic, numeric
            ),
            None => "no trainable coordinates to check".to_string(),
        }
    }
}

/// Error metric: absolute difference normalized by `max(1, |a|, |n|)`, i.e.
/// absolute for small gradients and relative for large ones.
pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares reverse-mode gradients of `build`'s scalar loss against central
/// differences. `build` receives the bound parameters and must construct the
/// same computation every time it is called.
pub fn check_gradients<T, F>(
    params: &mut ParamStore<T>,
    mut build: F,
    settings: &CheckSettings,
) -> Result<CheckReport>
where
    T: Scalar,
    F: FnMut(&GraphParams, &mut Graph<T>) -> Result<Var>,
{
    let eval = |params: &ParamStore<T>, build: &mut F| -> Result<(f64, Vec<Tensor<T>>)> {
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph)?;
        let loss = build(&bound, &mut graph)?;
        if graph.value(loss).numel() != 1 {
            return Err(Error::shape("gradient check objective must be scalar"));
        }
        let l = graph.value(loss).data()[0].to_f64();
        graph.backward(loss)?;
        let grads = params.collect_grads(&graph, &bound)?;
        Ok((l, grads))
    };

    let (l0, grads) = eval(params, &mut build)?;
    let (l1, _) = eval(params, &mut build)?;
    if l0 != l1 {
        return Err(Error::numeric(format!(
            "objective is not deterministic: {l0} vs {l1}"
        )));
    }

    let names: Vec<String> = params
        .trainable_entries()
        .map(|e| e.name.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut report = CheckReport {
        max_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for (name, analytic) in names.iter().zip(&grads) {
        let numel = analytic.numel();
        let coords: Vec<usize> = if numel <= settings.samples_per_tensor {
            (0..numel).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < settings.samples_per_tensor {
                picked.insert(rng.gen_range(0..numel));
            }
            picked.into_iter().collect()
        };
        for idx in coords {
            let theta = params
                .get(name)
                .expect("trainable entry exists")
                .data()[idx]
                .to_f64();
            let h = settings.step * (1.0 + theta.abs());
            set_coord(params, name, idx, theta + h)?;
            let (lp, _) = eval_loss_only(params, &mut build)?;
            set_coord(params, name, idx, theta - h)?;
            let (lm, _) = eval_loss_only(params, &mut build)?;
            set_coord(params, name, idx, theta)?;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.data()[idx].to_f64();
            let err = grad_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_error {
                report.max_error = err;
                report.worst = Some((name.clone(), idx, a, numeric));
            }
        }
    }
    Ok(report)
}

fn eval_loss_only<T, F>(params: &ParamStore<T>, build: &mut F) -> Result<(f64, ())>
where
    T: Scalar,
    F: FnMut(&GraphParams, &mut Graph<T>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let bound = params.bind(&mut graph)?;
    let loss = build(&bound, &mut graph)?;
    Ok((graph.value(loss).data()[0].to_f64(), ()))
}

fn set_coord<T: Scalar>(
    params: &mut ParamStore<T>,
    name: &str,
    idx: usize,
    value: f64,
) -> Result<()> {
    let t = params
        .get_mut(name)
        .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
    t.data_mut()[idx] = T::from_f64(value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_composite_passes() {
        let mut p = ParamStore::<f64>::new();
        p.insert(
            "w",
            Tensor::new(vec![3], vec![0.3, -0.7, 1.1]).unwrap(),
        )
        .unwrap();
        let report = check_gradients(
            &mut p,
            |bound, g| {
                let w = bound.var("w")?;
                let s = g.silu(w)?;
                let e = g.softplus(s)?;
                g.mean_all(e)
            },
            &CheckSettings::default(),
        )
        .unwrap();
        assert!(report.max_error < 1e-8, "{}", report.describe());
    }

    #[test]
    fn kinked_objective_is_flagged() {
        // relu evaluated exactly at its kink: the analytic subgradient (0)
        // cannot match the central difference (1/2), so the checker must
        // report a large error. This guards the checker itself.
        let mut p = ParamStore::<f64>::new();
        p.insert("x", Tensor::scalar(0.0)).unwrap();
        let report = check_gradients(
            &mut p,
            |bound, g| {
                let x = bound.var("x")?;
                let r = g.relu(x)?;
                g.mean_all(r)
            },
            &CheckSettings::default(),
        )
        .unwrap();
        assert!(report.max_error > 0.4, "{}", report.describe());
    }

    #[test]
    fn scan_gradients_match_finite_differences() {
        let mut p = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = [
            ("x", vec![2, 4, 3]),
            ("b", vec![2, 4, 2]),
            ("c", vec![2, 4, 2]),
            ("delta", vec![2, 4, 3]),
            ("a", vec![3, 2]),
            ("d", vec![3]),
        ];
        for (name, shape) in dims {
            p.insert(name, Tensor::rand_uniform(&shape, -0.9, 0.9, &mut rng))
                .unwrap();
        }
        let report = check_gradients(
            &mut p,
            |bound, g| {
                let y = g.ssm_scan(
                    bound.var("x")?,
                    bound.var("b")?,
                    bound.var("c")?,
                    bound.var("delta")?,
                    bound.var("a")?,
                    bound.var("d")?,
                )?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            &CheckSettings::default(),
        )
        .unwrap();
        assert!(report.max_error < 1e-8, "{}", report.describe());
    }
}
