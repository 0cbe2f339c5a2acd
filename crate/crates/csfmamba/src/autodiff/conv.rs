//! Direct convolution loops shared by the graph's forward and backward passes.
//!
//! Layouts are NCHW / NCDHW row-major. All loops run in a fixed index order so
//! results are bit-reproducible across runs.

use super::scalar::Scalar;
use crate::error::{Error, Result};

pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("conv stride must be >= 1"));
    }
    if input + 2 * pad < kernel {
        return Err(Error::shape(format!(
            "conv kernel {} larger than padded input {}",
            kernel,
            input + 2 * pad
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

pub struct Conv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    wgt: &[T],
    bias: Option<&[T]>,
    d: &Conv2dDims,
) -> Vec<T> {
    let mut out = vec![T::zero(); d.batch * d.c_out * d.oh * d.ow];
    let in_plane = d.h * d.w;
    let k_plane = d.kh * d.kw;
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * in_plane..(b + 1) * d.c_in * in_plane];
        for oc in 0..d.c_out {
            let woc = &wgt[oc * d.c_in * k_plane..(oc + 1) * d.c_in * k_plane];
            let bias_v = bias.map_or(T::zero(), |bv| bv[oc]);
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let mut acc = T::zero();
                    for ic in 0..d.c_in {
                        let xc = &xb[ic * in_plane..(ic + 1) * in_plane];
                        let wc = &woc[ic * k_plane..(ic + 1) * k_plane];
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let row = iy as usize * d.w;
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                acc += xc[row + ix as usize] * wc[ky * d.kw + kx];
                            }
                        }
                    }
                    out[((b * d.c_out + oc) * d.oh + oy) * d.ow + ox] = acc + bias_v;
                }
            }
        }
    }
    out
}

pub struct Conv2dGrads<T> {
    pub dx: Vec<T>,
    pub dw: Vec<T>,
    pub db: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    gy: &[T],
    x: &[T],
    wgt: &[T],
    has_bias: bool,
    d: &Conv2dDims,
) -> Conv2dGrads<T> {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); wgt.len()];
    let mut db = if has_bias {
        Some(vec![T::zero(); d.c_out])
    } else {
        None
    };
    let in_plane = d.h * d.w;
    let k_plane = d.kh * d.kw;
    for b in 0..d.batch {
        let xoff = b * d.c_in * in_plane;
        for oc in 0..d.c_out {
            let woff = oc * d.c_in * k_plane;
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let g = gy[((b * d.c_out + oc) * d.oh + oy) * d.ow + ox];
                    if let Some(dbv) = db.as_mut() {
                        dbv[oc] += g;
                    }
                    for ic in 0..d.c_in {
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                let ix = ix as usize;
                                let xi = xoff + (ic * d.h + iy) * d.w + ix;
                                let wi = woff + (ic * d.kh + ky) * d.kw + kx;
                                dx[xi] += g * wgt[wi];
                                dw[wi] += g * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Conv2dGrads { dx, dw, db }
}

pub struct Conv3dDims {
    pub batch: usize,
    pub c_in: usize,
    pub depth: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub od: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv3d_forward<T: Scalar>(
    x: &[T],
    wgt: &[T],
    bias: Option<&[T]>,
    d: &Conv3dDims,
) -> Vec<T> {
    let mut out = vec![T::zero(); d.batch * d.c_out * d.od * d.oh * d.ow];
    let in_vol = d.depth * d.h * d.w;
    let k_vol = d.kd * d.kh * d.kw;
    for b in 0..d.batch {
        for oc in 0..d.c_out {
            let bias_v = bias.map_or(T::zero(), |bv| bv[oc]);
            for oz in 0..d.od {
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let mut acc = T::zero();
                        for ic in 0..d.c_in {
                            let xoff = (b * d.c_in + ic) * in_vol;
                            let woff = (oc * d.c_in + ic) * k_vol;
                            for kz in 0..d.kd {
                                let iz = (oz * d.stride[0] + kz) as isize - d.pad[0] as isize;
                                if iz < 0 || iz >= d.depth as isize {
                                    continue;
                                }
                                for ky in 0..d.kh {
                                    let iy = (oy * d.stride[1] + ky) as isize - d.pad[1] as isize;
                                    if iy < 0 || iy >= d.h as isize {
                                        continue;
                                    }
                                    for kx in 0..d.kw {
                                        let ix =
                                            (ox * d.stride[2] + kx) as isize - d.pad[2] as isize;
                                        if ix < 0 || ix >= d.w as isize {
                                            continue;
                                        }
                                        let xi = xoff
                                            + ((iz as usize * d.h) + iy as usize) * d.w
                                            + ix as usize;
                                        let wi = woff + (kz * d.kh + ky) * d.kw + kx;
                                        acc += x[xi] * wgt[wi];
                                    }
                                }
                            }
                        }
                        out[(((b * d.c_out + oc) * d.od + oz) * d.oh + oy) * d.ow + ox] =
                            acc + bias_v;
                    }
                }
            }
        }
    }
    out
}

pub struct Conv3dGrads<T> {
    pub dx: Vec<T>,
    pub dw: Vec<T>,
    pub db: Option<Vec<T>>,
}

pub fn conv3d_backward<T: Scalar>(
    gy: &[T],
    x: &[T],
    wgt: &[T],
    has_bias: bool,
    d: &Conv3dDims,
) -> Conv3dGrads<T> {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); wgt.len()];
    let mut db = if has_bias {
        Some(vec![T::zero(); d.c_out])
    } else {
        None
    };
    let in_vol = d.depth * d.h * d.w;
    let k_vol = d.kd * d.kh * d.kw;
    for b in 0..d.batch {
        for oc in 0..d.c_out {
            for oz in 0..d.od {
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let g = gy[(((b * d.c_out + oc) * d.od + oz) * d.oh + oy) * d.ow + ox];
                        if let Some(dbv) = db.as_mut() {
                            dbv[oc] += g;
                        }
                        for ic in 0..d.c_in {
                            let xoff = (b * d.c_in + ic) * in_vol;
                            let woff = (oc * d.c_in + ic) * k_vol;
                            for kz in 0..d.kd {
                                let iz = (oz * d.stride[0] + kz) as isize - d.pad[0] as isize;
                                if iz < 0 || iz >= d.depth as isize {
                                    continue;
                                }
                                for ky in 0..d.kh {
                                    let iy = (oy * d.stride[1] + ky) as isize - d.pad[1] as isize;
                                    if iy < 0 || iy >= d.h as isize {
                                        continue;
                                    }
                                    for kx in 0..d.kw {
                                        let ix =
                                            (ox * d.stride[2] + kx) as isize - d.pad[2] as isize;
                                        if ix < 0 || ix >= d.w as isize {
                                            continue;
                                        }
                                        let xi = xoff
                                            + ((iz as usize * d.h) + iy as usize) * d.w
                                            + ix as usize;
                                        let wi = woff + (kz * d.kh + ky) * d.kw + kx;
                                        dx[xi] += g * wgt[wi];
                                        dw[wi] += g * x[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Conv3dGrads { dx, dw, db }
}
