//! Img2Col lowering: convolution as a single matrix product.
//!
//! The feature matrix has `in_c * kh * kw` rows and `out_h * out_w`
//! columns; the kernel matrix has `out_c` rows and `in_c * kh * kw`
//! columns. Their product is the convolution output with one row per
//! output channel.

use serde::{Deserialize, Serialize};

use super::Conv2d;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(&self.data, &rhs.data, &mut out.data, self.rows, self.cols, rhs.cols);
        Ok(out)
    }
}

/// `out (m x n) += a (m x k) * b (k x n)`, i-k-j order.
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out (k x n) += a^T * b` where `a` is `m x k` and `b` is `m x n`.
pub(crate) fn gemm_at_b(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Spatial bookkeeping for one convolution applied to an `h x w` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(conv: &Conv2d, h: usize, w: usize) -> Result<Self> {
        let (kh, kw) = conv.kernel;
        let ph = h + 2 * conv.padding;
        let pw = w + 2 * conv.padding;
        if kh > ph || kw > pw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(Self {
            in_c: conv.in_channels,
            h,
            w,
            kh,
            kw,
            stride: conv.stride,
            padding: conv.padding,
            out_h: (ph - kh) / conv.stride + 1,
            out_w: (pw - kw) / conv.stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input offset feeding `(row, col)` of the lowered matrix, `None` inside padding.
    #[inline]
    fn source(&self, row: usize, col: usize) -> Option<usize> {
        let c = row / (self.kh * self.kw);
        let ky = (row / self.kw) % self.kh;
        let kx = row % self.kw;
        let oy = col / self.out_w;
        let ox = col % self.out_w;
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.h && x < self.w).then(|| (c * self.h + y) * self.w + x)
    }

    pub(crate) fn lower(&self, sample: &[f64], out: &mut [f64]) {
        let cols = self.out_len();
        for row in 0..self.patch_len() {
            for col in 0..cols {
                out[row * cols + col] = self.source(row, col).map_or(0.0, |s| sample[s]);
            }
        }
    }

    /// Scatter-adds a lowered matrix back onto an input-shaped buffer.
    pub(crate) fn raise_add(&self, cols_data: &[f64], grad: &mut [f64]) {
        let cols = self.out_len();
        for row in 0..self.patch_len() {
            for col in 0..cols {
                if let Some(s) = self.source(row, col) {
                    grad[s] += cols_data[row * cols + col];
                }
            }
        }
    }
}

fn single_sample(feature: &Tensor) -> Result<(usize, usize, usize)> {
    match feature.shape() {
        [c, h, w] | [1, c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::Shape(format!(
            "im2col takes one (C, H, W) sample, got {other:?}"
        ))),
    }
}

/// Lowers one feature map `(C, H, W)` (or `(1, C, H, W)`) into its patch matrix.
pub fn im2col(feature: &Tensor, conv: &Conv2d) -> Result<Matrix> {
    let (c, h, w) = single_sample(feature)?;
    if c != conv.in_channels {
        return Err(Error::Shape(format!(
            "feature has {c} channels, conv expects {}",
            conv.in_channels
        )));
    }
    let g = ConvGeometry::new(conv, h, w)?;
    let mut m = Matrix::zeros(g.patch_len(), g.out_len());
    g.lower(feature.data(), &mut m.data);
    Ok(m)
}

/// Kernel as a `(out_c) x (in_c * kh * kw)` matrix.
pub fn kernel_matrix(conv: &Conv2d) -> Matrix {
    let cols = conv.in_channels * conv.kernel.0 * conv.kernel.1;
    Matrix {
        rows: conv.out_channels,
        cols,
        data: conv.weight.data().to_vec(),
    }
}

/// Batched convolution computed as `kernel_matrix * im2col` per sample.
pub fn conv_via_matmul(feature: &Tensor, conv: &Conv2d) -> Result<Tensor> {
    conv_with_weight(feature, conv, &conv.weight)
}

pub(crate) fn conv_with_weight(feature: &Tensor, conv: &Conv2d, weight: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = match feature.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        other => return Err(Error::Shape(format!("conv expects (N, C, H, W), got {other:?}"))),
    };
    if c != conv.in_channels {
        return Err(Error::Shape(format!(
            "feature has {c} channels, conv expects {}",
            conv.in_channels
        )));
    }
    let g = ConvGeometry::new(conv, h, w)?;
    let (k, p, o) = (g.patch_len(), g.out_len(), conv.out_channels);
    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; n * o * p];
    for s in 0..n {
        g.lower(feature.sample(s), &mut cols);
        let dst = &mut out[s * o * p..(s + 1) * o * p];
        if let Some(bias) = &conv.bias {
            for (ch, row) in dst.chunks_mut(p).enumerate() {
                row.fill(bias[ch]);
            }
        }
        gemm(weight.data(), &cols, dst, o, k, p);
    }
    Tensor::new(vec![n, o, g.out_h, g.out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let w = Tensor::from_fn(vec![out_c, in_c, k, k], |i| (i as f64 * 0.37).sin());
        Conv2d::new(in_c, out_c, (k, k), stride, pad, w, None).unwrap()
    }

    #[test]
    fn one_by_one_kernel_is_a_reshape() {
        let x = Tensor::from_fn(vec![3, 2, 2], |i| i as f64);
        let m = im2col(&x, &conv(3, 1, 1, 1, 0)).unwrap();
        assert_eq!((m.rows, m.cols), (3, 4));
        assert_eq!(m.data, x.data());
    }

    #[test]
    fn patch_matrix_dimensions() {
        let x = Tensor::zeros(vec![3, 8, 8]);
        let m = im2col(&x, &conv(3, 4, 3, 1, 1)).unwrap();
        assert_eq!((m.rows, m.cols), (27, 64));
        let k = kernel_matrix(&conv(3, 4, 3, 1, 1));
        assert_eq!((k.rows, k.cols), (4, 27));
    }

    #[test]
    fn sliding_windows_on_4x4() {
        let x = Tensor::from_fn(vec![1, 4, 4], |i| i as f64);
        let m = im2col(&x, &conv(1, 1, 3, 1, 0)).unwrap();
        assert_eq!((m.rows, m.cols), (9, 4));
        // window origins (0,0) (0,1) (1,0) (1,1) in a 4-wide grid
        for (col, origin) in [0usize, 1, 4, 5].into_iter().enumerate() {
            for ky in 0..3 {
                for kx in 0..3 {
                    assert_eq!(m.get(ky * 3 + kx, col), (origin + ky * 4 + kx) as f64);
                }
            }
        }
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let x = Tensor::zeros(vec![1, 2, 2]);
        assert!(im2col(&x, &conv(1, 1, 5, 1, 1)).is_err());
        assert!(im2col(&x, &conv(1, 1, 3, 1, 1)).is_ok());
    }
}
