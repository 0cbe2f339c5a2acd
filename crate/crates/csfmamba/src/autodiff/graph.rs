//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every intermediate tensor of one forward pass. Operations
//! append nodes and return [`Var`] handles; [`Graph::backward`] walks the tape
//! in reverse and accumulates gradients into every node that needs them. The
//! tape is rebuilt for each forward pass.
//!
//! Every operation validates shapes up front and checks its output for
//! non-finite values, so a NaN or overflow surfaces at the op that produced
//! it instead of corrupting downstream state.

use super::conv::{
    conv2d_backward, conv2d_forward, conv2d_out_dim, conv3d_backward, conv3d_forward, Conv2dDims,
    Conv3dDims,
};
use super::norm;
use super::scalar::{sigmoid, softplus, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::ssm::kernel::{self, SsmDims};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Guard below which `recip` refuses to divide.
const RECIP_GUARD: f64 = 1e-30;

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: Conv2dDims,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: Conv3dDims,
    },
    ChannelNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        stats_from_batch: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    Relu(Var),
    Silu(Var),
    Softplus(Var),
    Exp(Var),
    Recip(Var),
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Repeat0 {
        x: Var,
        n: usize,
    },
    AddBroadcast0(Var),
    MeanAll(Var),
    Select {
        cond: Tensor<T>,
        a: Var,
        b: Var,
    },
    SsmScan {
        x: Var,
        b: Var,
        c: Var,
        delta: Var,
        a: Var,
        dvec: Var,
        dims: SsmDims,
        h: Vec<T>,
        a_bar: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    needs_grad: bool,
    op: Op<T>,
}

/// One forward pass worth of computation, differentiable in reverse.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by [`Graph::backward`], if any reached this node.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, needs_grad: bool, op: Op<T>, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(format!(
                "{name} produced a non-finite value"
            )));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Inserts a tensor that participates in differentiation.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, true, Op::Leaf, "leaf")
    }

    /// Inserts a tensor treated as a constant: no gradient is accumulated.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, false, Op::Leaf, "constant")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push(out, self.needs(a) || self.needs(b), Op::Add(a, b), "add")
    }

    /// `a - b`, built from scale and add.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -T::one())?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push(out, self.needs(a) || self.needs(b), Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let out = self.nodes[x.0].value.map(|v| v * k);
        self.push(out, self.needs(x), Op::Scale(x, k), "scale")
    }

    /// Strict rank-2 matrix product `[r,k] x [k,c] -> [r,c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul expects [r,k] x [k,c], got {sa:?} x {sb:?}"
            )));
        }
        let (r, k, c) = (sa[0], sa[1], sb[1]);
        let out = matmul_nn(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            r,
            k,
            c,
        );
        self.push(
            Tensor::new(vec![r, c], out)?,
            self.needs(a) || self.needs(b),
            Op::MatMul(a, b),
            "matmul",
        )
    }

    /// Affine map over the last axis: `x [.., k] x w [k, c] + b [c]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape().to_vec();
        let sw = self.nodes[w.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sw.len() != 2 {
            return Err(Error::shape(format!("linear weight must be rank 2: {sw:?}")));
        }
        let (k, c) = (sw[0], sw[1]);
        if sx.last() != Some(&k) {
            return Err(Error::shape(format!(
                "linear input last dim must be {k}, got {sx:?}"
            )));
        }
        if sb != [c] {
            return Err(Error::shape(format!("linear bias must be [{c}], got {sb:?}")));
        }
        let rows = self.nodes[x.0].value.numel() / k;
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let bd = self.nodes[b.0].value.data();
        let mut out = vec![T::zero(); rows * c];
        for r in 0..rows {
            for j in 0..c {
                let mut acc = T::zero();
                for i in 0..k {
                    acc += xd[r * k + i] * wd[i * c + j];
                }
                out[r * c + j] = acc + bd[j];
            }
        }
        let mut oshape = sx;
        *oshape.last_mut().unwrap() = c;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            Tensor::new(oshape, out)?,
            needs,
            Op::Linear { x, w, b },
            "linear",
        )
    }

    /// 2-D convolution over `[batch, c_in, h, w]` with square stride/padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape();
        let sw = self.nodes[w.0].value.shape();
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects x [b,c,h,w] and w [o,c,kh,kw], got {sx:?} and {sw:?}"
            )));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {}, kernel expects {}",
                sx[1], sw[1]
            )));
        }
        if let Some(bv) = b {
            let sb = self.nodes[bv.0].value.shape();
            if sb != [sw[0]] {
                return Err(Error::shape(format!(
                    "conv2d bias must be [{}], got {sb:?}",
                    sw[0]
                )));
            }
        }
        let dims = Conv2dDims {
            batch: sx[0],
            c_in: sx[1],
            h: sx[2],
            w: sx[3],
            c_out: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            oh: conv2d_out_dim(sx[2], sw[2], stride, pad)?,
            ow: conv2d_out_dim(sx[3], sw[3], stride, pad)?,
        };
        let out = conv2d_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            b.map(|bv| self.nodes[bv.0].value.data()),
            &dims,
        );
        let oshape = vec![dims.batch, dims.c_out, dims.oh, dims.ow];
        let needs =
            self.needs(x) || self.needs(w) || b.map(|bv| self.needs(bv)).unwrap_or(false);
        self.push(
            Tensor::new(oshape, out)?,
            needs,
            Op::Conv2d { x, w, b, dims },
            "conv2d",
        )
    }

    /// 3-D convolution over `[batch, c_in, d, h, w]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape();
        let sw = self.nodes[w.0].value.shape();
        if sx.len() != 5 || sw.len() != 5 {
            return Err(Error::shape(format!(
                "conv3d expects x [b,c,d,h,w] and w [o,c,kd,kh,kw], got {sx:?} and {sw:?}"
            )));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape(format!(
                "conv3d channel mismatch: input has {}, kernel expects {}",
                sx[1], sw[1]
            )));
        }
        if let Some(bv) = b {
            let sb = self.nodes[bv.0].value.shape();
            if sb != [sw[0]] {
                return Err(Error::shape(format!(
                    "conv3d bias must be [{}], got {sb:?}",
                    sw[0]
                )));
            }
        }
        let dims = Conv3dDims {
            batch: sx[0],
            c_in: sx[1],
            depth: sx[2],
            h: sx[3],
            w: sx[4],
            c_out: sw[0],
            kd: sw[2],
            kh: sw[3],
            kw: sw[4],
            stride,
            pad,
            od: conv2d_out_dim(sx[2], sw[2], stride[0], pad[0])?,
            oh: conv2d_out_dim(sx[3], sw[3], stride[1], pad[1])?,
            ow: conv2d_out_dim(sx[4], sw[4], stride[2], pad[2])?,
        };
        let out = conv3d_forward(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            b.map(|bv| self.nodes[bv.0].value.data()),
            &dims,
        );
        let oshape = vec![dims.batch, dims.c_out, dims.od, dims.oh, dims.ow];
        let needs =
            self.needs(x) || self.needs(w) || b.map(|bv| self.needs(bv)).unwrap_or(false);
        self.push(
            Tensor::new(oshape, out)?,
            needs,
            Op::Conv3d { x, w, b, dims },
            "conv3d",
        )
    }

    fn channel_norm_shape(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let sx = self.nodes[x.0].value.shape();
        if sx.len() < 2 {
            return Err(Error::shape(format!(
                "batchnorm input must have a channel axis at position 1: {sx:?}"
            )));
        }
        let channels = sx[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.nodes[v.0].value.shape();
            if s != [channels] {
                return Err(Error::shape(format!(
                    "batchnorm {name} must be [{channels}], got {s:?}"
                )));
            }
        }
        let rest: usize = sx[2..].iter().product();
        Ok((sx[0], channels, rest))
    }

    /// Batch normalization over all axes except axis 1, using statistics of
    /// the current batch. Returns the output together with the batch mean and
    /// biased variance so the caller can maintain running statistics.
    /// Requires at least two entries along axis 0.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (lead, channels, rest) = self.channel_norm_shape(x, gamma, beta)?;
        if lead < 2 {
            return Err(Error::invalid(
                "batchnorm in training mode needs a batch of at least 2",
            ));
        }
        let xd = self.nodes[x.0].value.data();
        let (mean, var) = norm::channel_stats(xd, lead, channels, rest);
        if var.iter().all(|&v| v == T::zero()) {
            return Err(Error::numeric(
                "batchnorm in training mode saw a batch with zero variance in every channel",
            ));
        }
        let inv_std = norm::inv_std_from_var(&var);
        let out = norm::channel_affine_norm(
            xd,
            lead,
            channels,
            rest,
            &mean,
            &inv_std,
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = self.nodes[x.0].value.shape().to_vec();
        let v = self.push(
            Tensor::new(shape, out)?,
            needs,
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                mean: mean.clone(),
                inv_std,
                stats_from_batch: true,
            },
            "batchnorm",
        )?;
        Ok((v, mean, var))
    }

    /// Batch normalization with fixed recorded statistics (inference mode).
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<Var> {
        let (lead, channels, rest) = self.channel_norm_shape(x, gamma, beta)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::shape(format!(
                "running stats must have {channels} entries, got {} and {}",
                running_mean.len(),
                running_var.len()
            )));
        }
        let inv_std = norm::inv_std_from_var(running_var);
        let out = norm::channel_affine_norm(
            self.nodes[x.0].value.data(),
            lead,
            channels,
            rest,
            running_mean,
            &inv_std,
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = self.nodes[x.0].value.shape().to_vec();
        self.push(
            Tensor::new(shape, out)?,
            needs,
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                inv_std,
                stats_from_batch: false,
            },
            "batchnorm",
        )
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape();
        let dim = *sx.last().ok_or_else(|| Error::shape("layernorm input must have rank >= 1"))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.nodes[v.0].value.shape();
            if s != [dim] {
                return Err(Error::shape(format!(
                    "layernorm {name} must be [{dim}], got {s:?}"
                )));
            }
        }
        let rows = self.nodes[x.0].value.numel() / dim;
        let (out, mean, inv_std) = norm::layernorm_forward(
            self.nodes[x.0].value.data(),
            rows,
            dim,
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = sx.to_vec();
        self.push(
            Tensor::new(shape, out)?,
            needs,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
            "layernorm",
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape();
        let dim = *sx.last().ok_or_else(|| Error::shape("softmax input must have rank >= 1"))?;
        if dim == 0 {
            return Err(Error::shape("softmax axis must be non-empty"));
        }
        let rows = self.nodes[x.0].value.numel() / dim;
        let out = norm::softmax_forward(self.nodes[x.0].value.data(), rows, dim);
        let shape = sx.to_vec();
        self.push(Tensor::new(shape, out)?, self.needs(x), Op::Softmax(x), "softmax")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].value.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, self.needs(x), Op::Relu(x), "relu")
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].value.map(|v| v * sigmoid(v));
        self.push(out, self.needs(x), Op::Silu(x), "silu")
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.nodes[x.0].value.map(softplus);
        self.push(out, self.needs(x), Op::Softplus(x), "softplus")
    }

    /// Elementwise exponential. Inputs above a per-precision guard are
    /// rejected before they can overflow.
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let guard = T::from_f64(T::EXP_GUARD);
        for &v in self.nodes[x.0].value.data() {
            if v > guard {
                return Err(Error::numeric(format!(
                    "exp input {} exceeds overflow guard {}",
                    v.to_f64(),
                    T::EXP_GUARD
                )));
            }
        }
        let out = self.nodes[x.0].value.map(|v| v.exp());
        self.push(out, self.needs(x), Op::Exp(x), "exp")
    }

    /// Elementwise reciprocal. Inputs too close to zero are rejected.
    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let guard = T::from_f64(RECIP_GUARD);
        for &v in self.nodes[x.0].value.data() {
            if v.abs() < guard {
                return Err(Error::numeric(format!(
                    "reciprocal of near-zero value {}",
                    v.to_f64()
                )));
            }
        }
        let out = self.nodes[x.0].value.map(|v| v.recip());
        self.push(out, self.needs(x), Op::Recip(x), "recip")
    }

    /// Concatenates tensors of equal shape except along `axis`.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat needs at least one input"));
        }
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::shape(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.nodes[v.0].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::shape(format!(
                    "concat inputs must match except on axis {axis}: {first:?} vs {s:?}"
                )));
            }
            axis_total += s[axis];
        }
        let lead: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut oshape = first;
        oshape[axis] = axis_total;
        let mut out = vec![T::zero(); lead * axis_total * inner];
        for l in 0..lead {
            let mut dst = l * axis_total * inner;
            for &v in xs {
                let s = self.nodes[v.0].value.shape();
                let chunk = s[axis] * inner;
                let src = &self.nodes[v.0].value.data()[l * chunk..(l + 1) * chunk];
                out[dst..dst + chunk].copy_from_slice(src);
                dst += chunk;
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        self.push(
            Tensor::new(oshape, out)?,
            needs,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.nodes[x.0].value.shape().to_vec();
        if axis >= s.len() {
            return Err(Error::shape(format!(
                "slice axis {axis} out of range for rank {}",
                s.len()
            )));
        }
        if start + len > s[axis] || len == 0 {
            return Err(Error::shape(format!(
                "slice {start}..{} out of range for axis of size {}",
                start + len,
                s[axis]
            )));
        }
        let lead: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut oshape = s.clone();
        oshape[axis] = len;
        let mut out = vec![T::zero(); lead * len * inner];
        let src_stride = s[axis] * inner;
        for l in 0..lead {
            let src = l * src_stride + start * inner;
            out[l * len * inner..(l + 1) * len * inner]
                .copy_from_slice(&self.nodes[x.0].value.data()[src..src + len * inner]);
        }
        self.push(
            Tensor::new(oshape, out)?,
            self.needs(x),
            Op::Slice { x, axis, start },
            "slice",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes[x.0].value.reshaped(shape)?;
        self.push(out, self.needs(x), Op::Reshape(x), "reshape")
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.nodes[x.0].value.shape().to_vec();
        if perm.len() != s.len() {
            return Err(Error::shape(format!(
                "permute needs {} axes, got {perm:?}",
                s.len()
            )));
        }
        let mut seen = vec![false; s.len()];
        for &p in perm {
            if p >= s.len() || seen[p] {
                return Err(Error::shape(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let oshape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let out = permute_data(self.nodes[x.0].value.data(), &s, perm, &oshape);
        self.push(
            Tensor::new(oshape, out)?,
            self.needs(x),
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            "permute",
        )
    }

    /// Tiles a tensor `n` times along a new leading axis.
    pub fn repeat0(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::invalid("repeat count must be >= 1"));
        }
        let s = self.nodes[x.0].value.shape();
        let mut oshape = Vec::with_capacity(s.len() + 1);
        oshape.push(n);
        oshape.extend_from_slice(s);
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            out.extend_from_slice(src);
        }
        self.push(
            Tensor::new(oshape, out)?,
            self.needs(x),
            Op::Repeat0 { x, n },
            "repeat",
        )
    }

    /// Adds a constant table to every slice along axis 0. The table shape
    /// must equal the input shape without its leading axis.
    pub fn add_broadcast0(&mut self, x: Var, table: &Tensor<T>) -> Result<Var> {
        let s = self.nodes[x.0].value.shape();
        if s.is_empty() || table.shape() != &s[1..] {
            return Err(Error::shape(format!(
                "broadcast table shape {:?} must match input {:?} without axis 0",
                table.shape(),
                s
            )));
        }
        let chunk = table.numel();
        let mut out = self.nodes[x.0].value.data().to_vec();
        for l in 0..s[0] {
            for (o, &t) in out[l * chunk..(l + 1) * chunk].iter_mut().zip(table.data()) {
                *o += t;
            }
        }
        let shape = s.to_vec();
        self.push(
            Tensor::new(shape, out)?,
            self.needs(x),
            Op::AddBroadcast0(x),
            "add_broadcast",
        )
    }

    /// Mean over every element, producing a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].value.numel();
        if n == 0 {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let mut s = T::zero();
        for &v in self.nodes[x.0].value.data() {
            s += v;
        }
        let out = Tensor::scalar(s * T::from_f64(1.0 / n as f64));
        self.push(out, self.needs(x), Op::MeanAll(x), "mean")
    }

    /// Elementwise select: where `cond > 0` take `a`, otherwise `b`.
    pub fn select(&mut self, cond: &Tensor<T>, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "select")?;
        if cond.shape() != self.nodes[a.0].value.shape() {
            return Err(Error::shape(format!(
                "select condition shape {:?} must match operands {:?}",
                cond.shape(),
                self.nodes[a.0].value.shape()
            )));
        }
        let va = self.nodes[a.0].value.data();
        let vb = self.nodes[b.0].value.data();
        let out: Vec<T> = cond
            .data()
            .iter()
            .zip(va.iter().zip(vb))
            .map(|(&c, (&x, &y))| if c > T::zero() { x } else { y })
            .collect();
        let shape = cond.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(
            Tensor::new(shape, out)?,
            needs,
            Op::Select {
                cond: cond.clone(),
                a,
                b,
            },
            "select",
        )
    }

    /// Selective state-space scan: for each batch element and channel,
    /// `h_t = exp(delta_t a) h_{t-1} + bbar_t x_t`, `y_t = <c_t, h_t> + d x_t`.
    /// Shapes: `x`, `delta` are `[batch, len, d_in]`; `b`, `c` are
    /// `[batch, len, n]`; `a` is `[d_in, n]`; `dvec` is `[d_in]`.
    pub fn ssm_scan(
        &mut self,
        x: Var,
        b: Var,
        c: Var,
        delta: Var,
        a: Var,
        dvec: Var,
    ) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape().to_vec();
        if sx.len() != 3 {
            return Err(Error::shape(format!("scan input must be [batch, len, d_in]: {sx:?}")));
        }
        let dims = SsmDims {
            batch: sx[0],
            len: sx[1],
            d_in: sx[2],
            n: {
                let sb = self.nodes[b.0].value.shape();
                if sb.len() != 3 || sb[0] != sx[0] || sb[1] != sx[1] {
                    return Err(Error::shape(format!(
                        "scan b must be [batch, len, n] matching {sx:?}, got {sb:?}"
                    )));
                }
                sb[2]
            },
        };
        let expect = |name: &str, got: &[usize], want: &[usize]| -> Result<()> {
            if got != want {
                return Err(Error::shape(format!(
                    "scan {name} must be {want:?}, got {got:?}"
                )));
            }
            Ok(())
        };
        expect(
            "c",
            self.nodes[c.0].value.shape(),
            &[dims.batch, dims.len, dims.n],
        )?;
        expect(
            "delta",
            self.nodes[delta.0].value.shape(),
            &[dims.batch, dims.len, dims.d_in],
        )?;
        expect("a", self.nodes[a.0].value.shape(), &[dims.d_in, dims.n])?;
        expect("d", self.nodes[dvec.0].value.shape(), &[dims.d_in])?;
        let saved = kernel::scan_forward(
            self.nodes[x.0].value.data(),
            self.nodes[b.0].value.data(),
            self.nodes[c.0].value.data(),
            self.nodes[delta.0].value.data(),
            self.nodes[a.0].value.data(),
            self.nodes[dvec.0].value.data(),
            &dims,
        );
        let needs = self.needs(x)
            || self.needs(b)
            || self.needs(c)
            || self.needs(delta)
            || self.needs(a)
            || self.needs(dvec);
        self.push(
            Tensor::new(vec![dims.batch, dims.len, dims.d_in], saved.y)?,
            needs,
            Op::SsmScan {
                x,
                b,
                c,
                delta,
                a,
                dvec,
                dims,
                h: saved.h,
                a_bar: saved.a_bar,
            },
            "ssm_scan",
        )
    }

    /// Mean cross-entropy between logits `[batch, classes]` and 0-based
    /// class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.nodes[logits.0].value.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("logits must be [batch, classes]: {s:?}")));
        }
        let (rows, dim) = (s[0], s[1]);
        if rows == 0 || dim == 0 {
            return Err(Error::shape("cross-entropy needs a non-empty batch and classes"));
        }
        if labels.len() != rows {
            return Err(Error::shape(format!(
                "expected {rows} labels, got {}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= dim) {
            return Err(Error::invalid(format!(
                "label index {bad} out of range for {dim} classes"
            )));
        }
        let (loss, probs) =
            norm::cross_entropy_forward(self.nodes[logits.0].value.data(), labels, rows, dim);
        self.push(
            Tensor::scalar(loss),
            self.needs(logits),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa != sb {
            return Err(Error::shape(format!(
                "{name} operands must match: {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    /// Accumulates `dL/dnode` for every node reachable from `loss`, which
    /// must be scalar. Gradients land on nodes whose inputs require them;
    /// query with [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&shape, T::one()));
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let (head, tail) = self.nodes.split_at_mut(idx);
            let node = &tail[0];
            backprop(head, node)?;
        }
        Ok(())
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes already checked")
}

fn matmul_nn<T: Scalar>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[i * k + p] * b[p * c + j];
            }
            out[i * c + j] = acc;
        }
    }
    out
}

/// `a [r,k] x b^T` where `b` is `[c,k]`, producing `[r,c]`.
fn matmul_nt<T: Scalar>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[i * k + p] * b[j * k + p];
            }
            out[i * c + j] = acc;
        }
    }
    out
}

/// `a^T x b` where `a` is `[r,k]` and `b` is `[r,c]`, producing `[k,c]`.
fn matmul_tn<T: Scalar>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * c];
    for p in 0..r {
        for i in 0..k {
            let av = a[p * k + i];
            for j in 0..c {
                out[i * c + j] += av * b[p * c + j];
            }
        }
    }
    out
}

fn permute_data<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize], oshape: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mut out = vec![src[0]; src.len()];
    let mut out_idx = vec![0usize; rank];
    for (flat, o) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..rank).rev() {
            out_idx[d] = rem % oshape[d];
            rem /= oshape[d];
        }
        let mut src_off = 0;
        for d in 0..rank {
            src_off += out_idx[d] * in_strides[perm[d]];
        }
        *o = src[src_off];
    }
    out
}

fn accum<T: Scalar>(head: &mut [Node<T>], v: Var, delta: &[T]) {
    let n = &mut head[v.0];
    if !n.needs_grad {
        return;
    }
    let g = n
        .grad
        .get_or_insert_with(|| Tensor::zeros(n.value.shape()));
    for (gd, &dv) in g.data_mut().iter_mut().zip(delta) {
        *gd += dv;
    }
}

fn backprop<T: Scalar>(head: &mut [Node<T>], node: &Node<T>) -> Result<()> {
    let g = node.grad.as_ref().expect("caller checked grad presence");
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accum(head, *a, g.data());
            accum(head, *b, g.data());
        }
        Op::Mul(a, b) => {
            let da: Vec<T> = g
                .data()
                .iter()
                .zip(head[b.0].value.data())
                .map(|(&gv, &bv)| gv * bv)
                .collect();
            let db: Vec<T> = g
                .data()
                .iter()
                .zip(head[a.0].value.data())
                .map(|(&gv, &av)| gv * av)
                .collect();
            accum(head, *a, &da);
            accum(head, *b, &db);
        }
        Op::Scale(x, k) => {
            let dx: Vec<T> = g.data().iter().map(|&gv| gv * *k).collect();
            accum(head, *x, &dx);
        }
        Op::MatMul(a, b) => {
            let sa = head[a.0].value.shape();
            let sb = head[b.0].value.shape();
            let (r, k, c) = (sa[0], sa[1], sb[1]);
            let da = matmul_nt(g.data(), head[b.0].value.data(), r, c, k);
            let db = matmul_tn(head[a.0].value.data(), g.data(), r, k, c);
            accum(head, *a, &da);
            accum(head, *b, &db);
        }
        Op::Linear { x, w, b } => {
            let k = head[w.0].value.shape()[0];
            let c = head[w.0].value.shape()[1];
            let rows = head[x.0].value.numel() / k;
            let dx = matmul_nt(g.data(), head[w.0].value.data(), rows, c, k);
            let dw = matmul_tn(head[x.0].value.data(), g.data(), rows, k, c);
            let mut db = vec![T::zero(); c];
            for r in 0..rows {
                for j in 0..c {
                    db[j] += g.data()[r * c + j];
                }
            }
            accum(head, *x, &dx);
            accum(head, *w, &dw);
            accum(head, *b, &db);
        }
        Op::Conv2d { x, w, b, dims } => {
            let grads = conv2d_backward(
                g.data(),
                head[x.0].value.data(),
                head[w.0].value.data(),
                b.is_some(),
                dims,
            );
            accum(head, *x, &grads.dx);
            accum(head, *w, &grads.dw);
            if let (Some(bv), Some(db)) = (b, grads.db) {
                accum(head, *bv, &db);
            }
        }
        Op::Conv3d { x, w, b, dims } => {
            let grads = conv3d_backward(
                g.data(),
                head[x.0].value.data(),
                head[w.0].value.data(),
                b.is_some(),
                dims,
            );
            accum(head, *x, &grads.dx);
            accum(head, *w, &grads.dw);
            if let (Some(bv), Some(db)) = (b, grads.db) {
                accum(head, *bv, &db);
            }
        }
        Op::ChannelNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            stats_from_batch,
        } => {
            let sx = head[x.0].value.shape();
            let (lead, channels) = (sx[0], sx[1]);
            let rest: usize = sx[2..].iter().product();
            let grads = norm::channel_norm_backward(
                g.data(),
                head[x.0].value.data(),
                lead,
                channels,
                rest,
                mean,
                inv_std,
                head[gamma.0].value.data(),
                *stats_from_batch,
            );
            accum(head, *x, &grads.dx);
            accum(head, *gamma, &grads.dgamma);
            accum(head, *beta, &grads.dbeta);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
        } => {
            let dim = head[gamma.0].value.numel();
            let rows = head[x.0].value.numel() / dim;
            let grads = norm::layernorm_backward(
                g.data(),
                head[x.0].value.data(),
                rows,
                dim,
                head[gamma.0].value.data(),
                mean,
                inv_std,
            );
            accum(head, *x, &grads.dx);
            accum(head, *gamma, &grads.dgamma);
            accum(head, *beta, &grads.dbeta);
        }
        Op::Softmax(x) => {
            let dim = *node.value.shape().last().unwrap();
            let rows = node.value.numel() / dim;
            let dx = norm::softmax_backward(g.data(), node.value.data(), rows, dim);
            accum(head, *x, &dx);
        }
        Op::Relu(x) => {
            let dx: Vec<T> = head[x.0]
                .value
                .data()
                .iter()
                .zip(g.data())
                .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            accum(head, *x, &dx);
        }
        Op::Silu(x) => {
            let dx: Vec<T> = head[x.0]
                .value
                .data()
                .iter()
                .zip(g.data())
                .map(|(&xv, &gv)| {
                    let s = sigmoid(xv);
                    gv * (s + xv * s * (T::one() - s))
                })
                .collect();
            accum(head, *x, &dx);
        }
        Op::Softplus(x) => {
            let dx: Vec<T> = head[x.0]
                .value
                .data()
                .iter()
                .zip(g.data())
                .map(|(&xv, &gv)| gv * sigmoid(xv))
                .collect();
            accum(head, *x, &dx);
        }
        Op::Exp(x) => {
            let dx: Vec<T> = node
                .value
                .data()
                .iter()
                .zip(g.data())
                .map(|(&ov, &gv)| gv * ov)
                .collect();
            accum(head, *x, &dx);
        }
        Op::Recip(x) => {
            let dx: Vec<T> = node
                .value
                .data()
                .iter()
                .zip(g.data())
                .map(|(&ov, &gv)| -gv * ov * ov)
                .collect();
            accum(head, *x, &dx);
        }
        Op::Concat { xs, axis } => {
            let oshape = node.value.shape();
            let lead: usize = oshape[..*axis].iter().product();
            let inner: usize = oshape[*axis + 1..].iter().product();
            let total_chunk = oshape[*axis] * inner;
            let mut off = 0;
            for &v in xs {
                let alen = head[v.0].value.shape()[*axis];
                let chunk = alen * inner;
                let mut dv = vec![T::zero(); head[v.0].value.numel()];
                for l in 0..lead {
                    let src = l * total_chunk + off;
                    dv[l * chunk..(l + 1) * chunk]
                        .copy_from_slice(&g.data()[src..src + chunk]);
                }
                accum(head, v, &dv);
                off += chunk;
            }
        }
        Op::Slice { x, axis, start } => {
            let sx = head[x.0].value.shape().to_vec();
            let oshape = node.value.shape();
            let lead: usize = sx[..*axis].iter().product();
            let inner: usize = sx[*axis + 1..].iter().product();
            let len = oshape[*axis];
            let mut dx = vec![T::zero(); head[x.0].value.numel()];
            let src_stride = sx[*axis] * inner;
            for l in 0..lead {
                let dst = l * src_stride + start * inner;
                for (o, &gv) in dx[dst..dst + len * inner]
                    .iter_mut()
                    .zip(&g.data()[l * len * inner..(l + 1) * len * inner])
                {
                    *o += gv;
                }
            }
            accum(head, *x, &dx);
        }
        Op::Reshape(x) => {
            accum(head, *x, g.data());
        }
        Op::Permute { x, perm } => {
            // Scatter through the forward mapping: out[idx] = in[map(idx)].
            let sx = head[x.0].value.shape().to_vec();
            let oshape = node.value.shape();
            let rank = sx.len();
            let mut in_strides = vec![1usize; rank];
            for d in (0..rank.saturating_sub(1)).rev() {
                in_strides[d] = in_strides[d + 1] * sx[d + 1];
            }
            let mut dx = vec![T::zero(); head[x.0].value.numel()];
            let mut out_idx = vec![0usize; rank];
            for (flat, &gv) in g.data().iter().enumerate() {
                let mut rem = flat;
                for d in (0..rank).rev() {
                    out_idx[d] = rem % oshape[d];
                    rem /= oshape[d];
                }
                let mut src_off = 0;
                for d in 0..rank {
                    src_off += out_idx[d] * in_strides[perm[d]];
                }
                dx[src_off] += gv;
            }
            accum(head, *x, &dx);
        }
        Op::Repeat0 { x, n } => {
            let chunk = head[x.0].value.numel();
            let mut dx = vec![T::zero(); chunk];
            for rep in 0..*n {
                for (o, &gv) in dx.iter_mut().zip(&g.data()[rep * chunk..(rep + 1) * chunk]) {
                    *o += gv;
                }
            }
            accum(head, *x, &dx);
        }
        Op::AddBroadcast0(x) => {
            accum(head, *x, g.data());
        }
        Op::MeanAll(x) => {
            let n = head[x.0].value.numel();
            let gv = g.data()[0] * T::from_f64(1.0 / n as f64);
            let dx = vec![gv; n];
            accum(head, *x, &dx);
        }
        Op::Select { cond, a, b } => {
            let da: Vec<T> = cond
                .data()
                .iter()
                .zip(g.data())
                .map(|(&cv, &gv)| if cv > T::zero() { gv } else { T::zero() })
                .collect();
            let db: Vec<T> = cond
                .data()
                .iter()
                .zip(g.data())
                .map(|(&cv, &gv)| if cv > T::zero() { T::zero() } else { gv })
                .collect();
            accum(head, *a, &da);
            accum(head, *b, &db);
        }
        Op::SsmScan {
            x,
            b,
            c,
            delta,
            a,
            dvec,
            dims,
            h,
            a_bar,
        } => {
            let grads = kernel::scan_backward(
                g.data(),
                head[x.0].value.data(),
                head[b.0].value.data(),
                head[c.0].value.data(),
                head[delta.0].value.data(),
                head[a.0].value.data(),
                head[dvec.0].value.data(),
                h,
                a_bar,
                dims,
            );
            accum(head, *x, &grads.dx);
            accum(head, *b, &grads.db);
            accum(head, *c, &grads.dc);
            accum(head, *delta, &grads.ddelta);
            accum(head, *a, &grads.da);
            accum(head, *dvec, &grads.dd);
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let dim = head[logits.0].value.shape()[1];
            let rows = labels.len();
            let dl = norm::cross_entropy_backward(g.data()[0], probs, labels, rows, dim);
            accum(head, *logits, &dl);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_derivative_is_step() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[2.0, -3.0])).unwrap();
        let y = g.relu(x).unwrap();
        let l = g.mean_all(y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.5, 0.0]);
    }

    #[test]
    fn constant_loss_leaves_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0])).unwrap();
        let c = g.constant(t(&[2], &[5.0, 5.0])).unwrap();
        let l = g.mean_all(c).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).is_none());
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn exp_overflow_guard_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(800.0)).unwrap();
        assert!(g.exp(x).is_err());
    }

    #[test]
    fn recip_near_zero_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(1e-31)).unwrap();
        assert!(g.recip(x).is_err());
    }

    #[test]
    fn matmul_matches_hand_product() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = g.leaf(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(0.0)).unwrap();
        let y = g.softplus(x).unwrap();
        assert!((g.value(y).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0])).unwrap();
        let p = g.softmax(x).unwrap();
        for r in 0..2 {
            let s: f64 = g.value(p).data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_cross_entropy_is_log_k() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1, 4], &[0.0, 0.0, 0.0, 0.0])).unwrap();
        let l = g.cross_entropy(x, &[2]).unwrap();
        assert!((g.value(l).item().unwrap() - (4.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_rejects_single_sample_batch() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let gamma = g.leaf(t(&[3], &[1.0, 1.0, 1.0])).unwrap();
        let beta = g.leaf(t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        assert!(g.batchnorm_train(x, gamma, beta).is_err());
    }

    #[test]
    fn permute_round_trip_restores_data() {
        let mut g = Graph::<f64>::new();
        let x = g
            .leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
            .unwrap();
        let p = g.permute(x, &[1, 0]).unwrap();
        assert_eq!(g.value(p).shape(), &[3, 2]);
        assert_eq!(g.value(p).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let q = g.permute(p, &[1, 0]).unwrap();
        assert_eq!(g.value(q).data(), g.value(x).data());
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = g.leaf(t(&[2, 1], &[9.0, 8.0])).unwrap();
        let cat = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(cat).data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let back = g.slice(cat, 1, 2, 1).unwrap();
        assert_eq!(g.value(back).data(), &[9.0, 8.0]);
    }
}
