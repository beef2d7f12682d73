//! Dense row-major `f64` tensors and the handful of kernels the pipeline
//! needs: convolution via im2col + GEMM, resampling and pooling.
//!
//! Image-like tensors use the `[N, C, H, W]` layout (or `[C, H, W]` for a
//! single sample). Everything is single-threaded and therefore bit-exact
//! across runs.

use std::fmt;

use crate::error::{MadmError, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(MadmError::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected NCHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(MadmError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| MadmError::Shape("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(MadmError::Shape(format!(
                    "stack of mismatched shapes {:?} and {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Splits the leading axis back into individual tensors.
    pub fn unstack(&self) -> Vec<Tensor> {
        let n = self.shape[0];
        let inner: Vec<usize> = self.shape[1..].to_vec();
        let step = self.data.len() / n.max(1);
        (0..n)
            .map(|i| Tensor {
                shape: inner.clone(),
                data: self.data[i * step..(i + 1) * step].to_vec(),
            })
            .collect()
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major matrices, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index reachable with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution on one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        }
    }

    /// A 1x1, stride-1 convolution reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output positions `lo..hi` whose tap at kernel offset `kk` lands
    /// inside an input axis of length `n`.
    fn valid_range(&self, kk: usize, n: usize, on: usize) -> (usize, usize) {
        let lo = if self.pad > kk {
            (self.pad - kk).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if n + self.pad > kk {
            ((n + self.pad - kk - 1) / self.stride + 1).min(on)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.col_cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let out = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_range(kx, g.w, g.ow);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let ix0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = src[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]; accumulates into `dx`.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.col_cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_range(kx, g.w, g.ow);
                if lo >= hi {
                    continue;
                }
                let ix0 = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        dst[ix0..ix0 + s.len()].iter_mut().zip(s).for_each(|(d, v)| *d += v);
                    } else {
                        for (j, v) in s.iter().enumerate() {
                            dst[ix0 + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Source taps for one axis of a bilinear resize with half-pixel centers
/// (the `align_corners = false` convention).
#[derive(Clone, Debug)]
pub(crate) struct LinearTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl LinearTaps {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for o in 0..dst {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let l = (s.floor() as usize).min(src - 1);
            let h = (l + 1).min(src - 1);
            lo.push(l);
            hi.push(h);
            frac.push(if h == l { 0.0 } else { s - l as f64 });
        }
        Self { lo, hi, frac }
    }
}

pub(crate) fn resize_plane(
    src: &[f64],
    sw: usize,
    ty: &LinearTaps,
    tx: &LinearTaps,
    dst: &mut [f64],
) {
    let dw = tx.lo.len();
    for (oy, row) in dst.chunks_mut(dw).enumerate() {
        let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
        for (ox, d) in row.iter_mut().enumerate() {
            let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            *d = top * (1.0 - fy) + bot * fy;
        }
    }
}

pub(crate) fn resize_plane_backward(
    grad: &[f64],
    sw: usize,
    ty: &LinearTaps,
    tx: &LinearTaps,
    dsrc: &mut [f64],
) {
    let dw = tx.lo.len();
    for (oy, row) in grad.chunks(dw).enumerate() {
        let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
        for (ox, &gv) in row.iter().enumerate() {
            let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
            dsrc[y0 * sw + x0] += gv * (1.0 - fy) * (1.0 - fx);
            dsrc[y0 * sw + x1] += gv * (1.0 - fy) * fx;
            dsrc[y1 * sw + x0] += gv * fy * (1.0 - fx);
            dsrc[y1 * sw + x1] += gv * fy * fx;
        }
    }
}

/// Bilinear resize of a `[N, C, H, W]` tensor.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let ty = LinearTaps::new(h, oh);
    let tx = LinearTaps::new(w, ow);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for (src, dst) in x.data.chunks(h * w).zip(out.data.chunks_mut(oh * ow)) {
        resize_plane(src, w, &ty, &tx, dst);
    }
    out
}

/// Non-overlapping `k x k` average pooling of a `[N, C, H, W]` tensor.
pub fn avg_pool(x: &Tensor, k: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / k, w / k);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let inv = 1.0 / (k * k) as f64;
    for (src, dst) in x.data.chunks(h * w).zip(out.data.chunks_mut(oh * ow)) {
        for y in 0..h {
            for xx in 0..w {
                dst[(y / k) * ow + xx / k] += src[y * w + xx] * inv;
            }
        }
    }
    out
}
