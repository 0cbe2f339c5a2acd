//! Plain (non-differentiable) selective scan over a single sequence.
//!
//! This is the reference-facing API: discretized step parameters in,
//! output sequence out, linear in sequence length. [`scan_oracle`] computes
//! the same map by explicit unrolled materialization in quadratic time and
//! exists purely to verify [`selective_scan`].

use rand::Rng;

use super::kernel::discretize;
use crate::autodiff::scalar::{softplus, Scalar};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Discretized per-step scan parameters for a sequence of length `L`.
pub struct ScanParams<T> {
    /// `[L, d_in, n]` decay factors.
    pub a_bar: Tensor<T>,
    /// `[L, d_in, n]` input injections.
    pub b_bar: Tensor<T>,
    /// `[L, n]` readout vectors.
    pub c: Tensor<T>,
}

impl<T: Scalar> ScanParams<T> {
    fn dims_for(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let sx = x.shape();
        if sx.len() != 2 {
            return Err(Error::shape(format!("scan input must be [len, d_in]: {sx:?}")));
        }
        let (l, d) = (sx[0], sx[1]);
        let sa = self.a_bar.shape();
        if sa.len() != 3 || sa[0] != l || sa[1] != d {
            return Err(Error::shape(format!(
                "a_bar must be [{l}, {d}, n], got {sa:?}"
            )));
        }
        let n = sa[2];
        if self.b_bar.shape() != sa {
            return Err(Error::shape(format!(
                "b_bar shape {:?} must match a_bar {sa:?}",
                self.b_bar.shape()
            )));
        }
        if self.c.shape() != [l, n] {
            return Err(Error::shape(format!(
                "c must be [{l}, {n}], got {:?}",
                self.c.shape()
            )));
        }
        Ok((l, d, n))
    }
}

fn check_residual<T: Scalar>(d: usize, dvec: &Tensor<T>) -> Result<()> {
    if dvec.shape() != [d] {
        return Err(Error::shape(format!(
            "residual must be [{d}], got {:?}",
            dvec.shape()
        )));
    }
    Ok(())
}

/// Linear-time scan: `h_t = a_bar_t (*) h_{t-1} + b_bar_t * x_t`,
/// `y_t = <c_t, h_t> + d (*) x_t`, with `h_0 = 0`.
pub fn selective_scan<T: Scalar>(
    x: &Tensor<T>,
    params: &ScanParams<T>,
    dvec: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (l, d, n) = params.dims_for(x)?;
    check_residual(d, dvec)?;
    let (xd, ab, bb, cd, dd) = (
        x.data(),
        params.a_bar.data(),
        params.b_bar.data(),
        params.c.data(),
        dvec.data(),
    );
    let mut y = vec![T::zero(); l * d];
    let mut h = vec![T::zero(); d * n];
    for t in 0..l {
        for i in 0..d {
            let xv = xd[t * d + i];
            let step = (t * d + i) * n;
            let mut acc = T::zero();
            for j in 0..n {
                let hv = ab[step + j] * h[i * n + j] + bb[step + j] * xv;
                h[i * n + j] = hv;
                acc += cd[t * n + j] * hv;
            }
            y[t * d + i] = acc + dd[i] * xv;
        }
    }
    Tensor::new(vec![l, d], y)
}

/// Sizes above which [`scan_oracle`] refuses to run.
pub const ORACLE_MAX_LEN: usize = 32;
pub const ORACLE_MAX_STATES: usize = 8;

/// Quadratic-time reference: materializes
/// `y_t = sum_{s<=t} <c_t, (prod_{r=s+1..t} a_bar_r) (*) b_bar_s> x_s + d x_t`
/// without carrying a hidden state across steps. Refuses instances beyond
/// the oracle bounds; verification at larger sizes proves nothing extra and
/// only burns time.
pub fn scan_oracle<T: Scalar>(
    x: &Tensor<T>,
    params: &ScanParams<T>,
    dvec: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (l, n) = {
        let (l, _, n) = params.dims_for(x)?;
        (l, n)
    };
    if l > ORACLE_MAX_LEN || n > ORACLE_MAX_STATES {
        return Err(Error::invalid(format!(
            "oracle limited to len <= {ORACLE_MAX_LEN} and n <= {ORACLE_MAX_STATES}, got len {l}, n {n}"
        )));
    }
    scan_materialized(x, params, dvec)
}

/// The oracle's algorithm without its size guard. Cost grows with the square
/// of the sequence length; this entry exists so timing comparisons against
/// [`selective_scan`] can run at lengths the guard would reject.
pub fn scan_materialized<T: Scalar>(
    x: &Tensor<T>,
    params: &ScanParams<T>,
    dvec: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (l, d, n) = params.dims_for(x)?;
    check_residual(d, dvec)?;
    let (xd, ab, bb, cd, dd) = (
        x.data(),
        params.a_bar.data(),
        params.b_bar.data(),
        params.c.data(),
        dvec.data(),
    );
    let mut y = vec![T::zero(); l * d];
    let mut decay = vec![T::zero(); n];
    for t in 0..l {
        for i in 0..d {
            let mut acc = T::zero();
            // decay[j] holds prod_{r=s+1..t} a_bar[r,i,j]; empty product at s=t.
            for v in decay.iter_mut() {
                *v = T::one();
            }
            for s in (0..=t).rev() {
                let step = (s * d + i) * n;
                let mut inject = T::zero();
                for j in 0..n {
                    inject += cd[t * n + j] * decay[j] * bb[step + j];
                }
                acc += inject * xd[s * d + i];
                for j in 0..n {
                    decay[j] *= ab[step + j];
                }
            }
            y[t * d + i] = acc + dd[i] * xd[t * d + i];
        }
    }
    Tensor::new(vec![l, d], y)
}

/// Input-dependent parameter generation plus diagonal transition and
/// residual: everything the scan needs besides the sequences themselves.
pub struct SelectiveProj<T> {
    /// `[d_in, n]` projection generating per-step `b`.
    pub w_b: Tensor<T>,
    pub bias_b: Tensor<T>,
    /// `[d_in, n]` projection generating per-step `c`.
    pub w_c: Tensor<T>,
    pub bias_c: Tensor<T>,
    /// `[d_in, d_in]` projection generating per-step `delta` (pre-softplus).
    pub w_delta: Tensor<T>,
    pub bias_delta: Tensor<T>,
    /// `[d_in, n]` diagonal transition, strictly negative.
    pub a: Tensor<T>,
    /// `[d_in]` residual weights.
    pub d: Tensor<T>,
}

impl<T: Scalar> SelectiveProj<T> {
    /// Fresh projection with the standard initialization: uniform
    /// `(-1/sqrt(d_in), 1/sqrt(d_in))` weights, zero biases,
    /// `a[i][j] = -(j + 1)`, unit residual.
    pub fn init<R: Rng>(d_in: usize, n: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let a = Tensor::new(
            vec![d_in, n],
            (0..d_in * n)
                .map(|k| T::from_f64(-((k % n + 1) as f64)))
                .collect(),
        )
        .expect("static shape");
        SelectiveProj {
            w_b: Tensor::rand_uniform(&[d_in, n], -bound, bound, rng),
            bias_b: Tensor::zeros(&[n]),
            w_c: Tensor::rand_uniform(&[d_in, n], -bound, bound, rng),
            bias_c: Tensor::zeros(&[n]),
            w_delta: Tensor::rand_uniform(&[d_in, d_in], -bound, bound, rng),
            bias_delta: Tensor::zeros(&[d_in]),
            a,
            d: Tensor::full(&[d_in], T::one()),
        }
    }

    pub fn d_in(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.a.shape()[1]
    }

    /// Validates that the transition is usable: strictly negative and finite.
    pub fn check(&self) -> Result<()> {
        if !self.a.all_finite() {
            return Err(Error::numeric("transition matrix contains non-finite values"));
        }
        if self.a.data().iter().any(|&v| v >= T::zero()) {
            return Err(Error::invalid(
                "diagonal transition must be strictly negative",
            ));
        }
        Ok(())
    }

    /// Per-step parameters from a driving sequence `[len, d_in]`:
    /// `b_t = W_b x_t + bias`, `c_t = W_c x_t + bias`,
    /// `delta_t = softplus(W_delta x_t + bias)`.
    pub fn project(&self, driver: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let s = driver.shape();
        let d_in = self.d_in();
        if s.len() != 2 || s[1] != d_in {
            return Err(Error::shape(format!(
                "driver must be [len, {d_in}], got {s:?}"
            )));
        }
        let (l, n) = (s[0], self.n());
        let xd = driver.data();
        let affine = |w: &Tensor<T>, bias: &Tensor<T>, cols: usize| -> Vec<T> {
            let wd = w.data();
            let bd = bias.data();
            let mut out = vec![T::zero(); l * cols];
            for t in 0..l {
                for j in 0..cols {
                    let mut acc = T::zero();
                    for i in 0..d_in {
                        acc += xd[t * d_in + i] * wd[i * cols + j];
                    }
                    out[t * cols + j] = acc + bd[j];
                }
            }
            out
        };
        let b = affine(&self.w_b, &self.bias_b, n);
        let c = affine(&self.w_c, &self.bias_c, n);
        let mut delta = affine(&self.w_delta, &self.bias_delta, d_in);
        for v in delta.iter_mut() {
            *v = softplus(*v);
        }
        Ok((
            Tensor::new(vec![l, n], b)?,
            Tensor::new(vec![l, n], c)?,
            Tensor::new(vec![l, d_in], delta)?,
        ))
    }

    /// Zero-order-hold discretization of projected parameters, returning
    /// `(a_bar, b_bar)`, each `[len, d_in, n]`.
    pub fn discretize(&self, b: &Tensor<T>, delta: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check()?;
        let (d_in, n) = (self.d_in(), self.n());
        let l = delta.shape()[0];
        if delta.shape() != [l, d_in] || b.shape() != [l, n] {
            return Err(Error::shape(format!(
                "expected delta [{l}, {d_in}] and b [{l}, {n}], got {:?} and {:?}",
                delta.shape(),
                b.shape()
            )));
        }
        let ad = self.a.data();
        let bd = b.data();
        let dd = delta.data();
        let mut a_bar = vec![T::zero(); l * d_in * n];
        let mut b_bar = vec![T::zero(); l * d_in * n];
        for t in 0..l {
            for i in 0..d_in {
                let dt = dd[t * d_in + i];
                let step = (t * d_in + i) * n;
                for j in 0..n {
                    let (ab, bb) = discretize(ad[i * n + j], bd[t * n + j], dt);
                    a_bar[step + j] = ab;
                    b_bar[step + j] = bb;
                }
            }
        }
        Ok((
            Tensor::new(vec![l, d_in, n], a_bar)?,
            Tensor::new(vec![l, d_in, n], b_bar)?,
        ))
    }

    /// Cross-state scan: parameters are generated from `x_other` while the
    /// recurrence and residual are driven by `x_self`. The single-modality
    /// scan is the degenerate call with both arguments equal, so the two
    /// cases cannot diverge.
    pub fn apply_cross(&self, x_self: &Tensor<T>, x_other: &Tensor<T>) -> Result<Tensor<T>> {
        if x_self.shape() != x_other.shape() {
            return Err(Error::shape(format!(
                "stream shapes must match: {:?} vs {:?}",
                x_self.shape(),
                x_other.shape()
            )));
        }
        let (b, c, delta) = self.project(x_other)?;
        let (a_bar, b_bar) = self.discretize(&b, &delta)?;
        let params = ScanParams { a_bar, b_bar, c };
        selective_scan(x_self, &params, &self.d)
    }

    /// Single-modality scan: input-dependent parameters from the sequence
    /// being scanned.
    pub fn apply_self(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply_cross(x, x)
    }
}
