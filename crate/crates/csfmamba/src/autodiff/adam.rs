//! Adam optimizer with bias-corrected moment estimates.

use super::params::ParamStore;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Standard coefficients: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new() -> Self {
        Adam::with_coefficients(0.9, 0.999, 1e-8)
    }

    pub fn with_coefficients(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    /// Applies one update to every trainable parameter. `grads` must align
    /// with the store's trainable entries in insertion order, as produced by
    /// [`ParamStore::collect_grads`].
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        let names: Vec<String> = params
            .trainable_entries()
            .map(|e| e.name.clone())
            .collect();
        if names.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} trainable parameters",
                grads.len(),
                names.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() {
            return Err(Error::invalid(
                "optimizer state does not match the parameter set",
            ));
        }
        self.step_count += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.step_count as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.step_count as i32));
        let eps = T::from_f64(self.eps);
        let lr_t = T::from_f64(lr);
        for (i, (name, g)) in names.iter().zip(grads).enumerate() {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if p.numel() != g.numel() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (&gv, pv)) in g.data().iter().zip(p.data_mut().iter_mut()).enumerate() {
                m[j] = b1 * m[j] + one_m_b1 * gv;
                v[j] = b2 * v[j] + one_m_b2 * gv * gv;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *pv -= lr_t * mhat / (vhat.sqrt() + eps);
            }
            if !p.all_finite() {
                return Err(Error::numeric(format!(
                    "parameter {name} became non-finite after an optimizer step"
                )));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Adam::new()
    }
}
