//! Core selective-scan math shared by the plain sequence API and the
//! differentiable graph primitive, so both produce identical values.

use crate::autodiff::scalar::Scalar;

/// Zero-order-hold discretization of one diagonal state element.
///
/// Returns `(a_bar, b_bar)` with `a_bar = exp(delta * a)` and
/// `b_bar = (exp(delta * a) - 1) / a * b`, using `exp_m1` so the
/// `delta -> 0` limit is exact: `(1, 0)`. At `a == 0` the analytic limit
/// `b_bar = delta * b` is used.
#[inline]
pub fn discretize<T: Scalar>(a: T, b: T, delta: T) -> (T, T) {
    let z = delta * a;
    let a_bar = z.exp();
    let b_bar = if a == T::zero() {
        delta * b
    } else {
        z.exp_m1() / a * b
    };
    (a_bar, b_bar)
}

/// Shape bundle for a batched scan over `[batch, len, d_in]` sequences with
/// `n` states per channel.
#[derive(Clone, Copy, Debug)]
pub struct SsmDims {
    pub batch: usize,
    pub len: usize,
    pub d_in: usize,
    pub n: usize,
}

impl SsmDims {
    pub fn state_len(&self) -> usize {
        self.batch * self.len * self.d_in * self.n
    }
}

pub struct ScanSaved<T> {
    /// Output sequence, `[batch, len, d_in]`.
    pub y: Vec<T>,
    /// Hidden states after every step, `[batch, len, d_in, n]`.
    pub h: Vec<T>,
    /// Discretized decay factors, `[batch, len, d_in, n]`.
    pub a_bar: Vec<T>,
}

/// Runs the recurrence `h_t = a_bar_t * h_{t-1} + b_bar_t * x_t`,
/// `y_t = <c_t, h_t> + d * x_t` over a batch. `b` and `c` vary per step
/// (`[batch, len, n]`), `delta` per step and channel (`[batch, len, d_in]`),
/// `a` is the diagonal transition `[d_in, n]`, `dvec` the residual `[d_in]`.
pub fn scan_forward<T: Scalar>(
    x: &[T],
    b: &[T],
    c: &[T],
    delta: &[T],
    a: &[T],
    dvec: &[T],
    dm: &SsmDims,
) -> ScanSaved<T> {
    let (bs, l, d, n) = (dm.batch, dm.len, dm.d_in, dm.n);
    let mut y = vec![T::zero(); bs * l * d];
    let mut h = vec![T::zero(); dm.state_len()];
    let mut a_bar = vec![T::zero(); dm.state_len()];
    for bi in 0..bs {
        for t in 0..l {
            let seq = (bi * l + t) * d;
            let step_bc = (bi * l + t) * n;
            for i in 0..d {
                let xv = x[seq + i];
                let dt = delta[seq + i];
                let state = (seq + i) * n;
                let prev = state.wrapping_sub(d * n);
                let mut acc = T::zero();
                for j in 0..n {
                    let (ab, bb) = discretize(a[i * n + j], b[step_bc + j], dt);
                    let hp = if t == 0 { T::zero() } else { h[prev + j] };
                    let hv = ab * hp + bb * xv;
                    h[state + j] = hv;
                    a_bar[state + j] = ab;
                    acc += c[step_bc + j] * hv;
                }
                y[seq + i] = acc + dvec[i] * xv;
            }
        }
    }
    ScanSaved { y, h, a_bar }
}

pub struct ScanGrads<T> {
    pub dx: Vec<T>,
    pub db: Vec<T>,
    pub dc: Vec<T>,
    pub ddelta: Vec<T>,
    pub da: Vec<T>,
    pub dd: Vec<T>,
}

/// Reverse-mode gradients of `scan_forward` with respect to every input.
/// `gy` has the output shape `[batch, len, d_in]`; `h` and `a_bar` must come
/// from the matching forward call.
#[allow(clippy::too_many_arguments)]
pub fn scan_backward<T: Scalar>(
    gy: &[T],
    x: &[T],
    b: &[T],
    c: &[T],
    delta: &[T],
    a: &[T],
    dvec: &[T],
    h: &[T],
    a_bar: &[T],
    dm: &SsmDims,
) -> ScanGrads<T> {
    let (bs, l, d, n) = (dm.batch, dm.len, dm.d_in, dm.n);
    let half = T::from_f64(0.5);
    let mut g = ScanGrads {
        dx: vec![T::zero(); bs * l * d],
        db: vec![T::zero(); bs * l * n],
        dc: vec![T::zero(); bs * l * n],
        ddelta: vec![T::zero(); bs * l * d],
        da: vec![T::zero(); d * n],
        dd: vec![T::zero(); d],
    };
    // carry[i*n+j] is dL/dh_t[i,j] contributed by steps after t.
    let mut carry = vec![T::zero(); d * n];
    for bi in 0..bs {
        for v in carry.iter_mut() {
            *v = T::zero();
        }
        for t in (0..l).rev() {
            let seq = (bi * l + t) * d;
            let step_bc = (bi * l + t) * n;
            for i in 0..d {
                let xv = x[seq + i];
                let dt = delta[seq + i];
                let go = gy[seq + i];
                let state = (seq + i) * n;
                let prev = state.wrapping_sub(d * n);
                g.dx[seq + i] += go * dvec[i];
                g.dd[i] += go * xv;
                for j in 0..n {
                    let av = a[i * n + j];
                    let bv = b[step_bc + j];
                    let ab = a_bar[state + j];
                    let em1 = ab - T::one();
                    let hv = h[state + j];
                    let hp = if t == 0 { T::zero() } else { h[prev + j] };
                    let hadj = carry[i * n + j] + go * c[step_bc + j];
                    g.dc[step_bc + j] += go * hv;
                    let d_ab = hadj * hp;
                    let d_bb = hadj * xv;
                    let (bb, bb_over_b, dbb_da) = if av == T::zero() {
                        (dt * bv, dt, bv * dt * dt * half)
                    } else {
                        let f = em1 / av;
                        (f * bv, f, bv * (dt * ab * av - em1) / (av * av))
                    };
                    g.dx[seq + i] += hadj * bb;
                    g.ddelta[seq + i] += d_ab * av * ab + d_bb * ab * bv;
                    g.da[i * n + j] += d_ab * dt * ab + d_bb * dbb_da;
                    g.db[step_bc + j] += d_bb * bb_over_b;
                    carry[i * n + j] = hadj * ab;
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_matches_closed_forms() {
        let (ab, bb) = discretize(-1.0f64, 2.0, std::f64::consts::LN_2);
        assert_eq!(ab, 0.5);
        assert_eq!(bb, 1.0);

        let (ab, bb) = discretize(-2.0f64, 1.0, 0.5);
        assert_eq!(ab, (-1.0f64).exp());
        assert!((bb - 0.31606027941427883).abs() < 1e-15);
    }

    #[test]
    fn discretize_zero_delta_is_identity() {
        let (ab, bb) = discretize(-3.0f64, 7.0, 0.0);
        assert_eq!(ab, 1.0);
        assert_eq!(bb, 0.0);
    }

    #[test]
    fn discretize_zero_a_uses_limit() {
        let (ab, bb) = discretize(0.0f64, 3.0, 0.25);
        assert_eq!(ab, 1.0);
        assert_eq!(bb, 0.75);
    }

    #[test]
    fn scan_forward_hand_case() {
        // One channel, one state: a_bar = 0.5, b_bar = 1, c = 1, d = 0,
        // x = (1, 1, 1) gives h = (1, 1.5, 1.75) and y = h.
        let dm = SsmDims {
            batch: 1,
            len: 3,
            d_in: 1,
            n: 1,
        };
        let a = [-1.0f64];
        let b = [2.0, 2.0, 2.0];
        let c = [1.0, 1.0, 1.0];
        let delta = [std::f64::consts::LN_2; 3];
        let x = [1.0, 1.0, 1.0];
        let saved = scan_forward(&x, &b, &c, &delta, &a, &[0.0], &dm);
        assert!((saved.y[0] - 1.0).abs() < 1e-15);
        assert!((saved.y[1] - 1.5).abs() < 1e-15);
        assert!((saved.y[2] - 1.75).abs() < 1e-15);
    }
}
