//! im2col-based 2-D cross-correlation kernels and the GEMM helper they share.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::winograd;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let &[batch, in_channels, height, width] = input else {
            return Err(Error::shape(format!("conv2d input must be N×C×H×W, got {input:?}")));
        };
        let &[out_channels, w_in, kh, kw] = weight else {
            return Err(Error::shape(format!("conv2d weight must be Cout×Cin×k×k, got {weight:?}")));
        };
        if w_in != in_channels {
            return Err(Error::shape(format!(
                "conv2d weight expects {w_in} input channels, input has {in_channels}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("conv2d kernel must be square, got {kh}×{kw}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        if kh > height + 2 * padding || kh > width + 2 * padding {
            return Err(Error::shape(format!(
                "kernel {kh} larger than padded input {height}×{width} (padding {padding})"
            )));
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel: kh,
            stride,
            padding,
            out_height: (height + 2 * padding - kh) / stride + 1,
            out_width: (width + 2 * padding - kh) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height, self.out_width]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn plane_out(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Output columns with `o*stride + k - padding` inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if k >= self.padding { 0 } else { (self.padding - k).div_ceil(s) };
        let hi = if extent + self.padding > k { (extent + self.padding - k - 1) / s + 1 } else { 0 };
        (lo.min(out), hi.min(out).max(lo.min(out)))
    }
}

/// `c = a·b + beta·c` with optional transposes, dimensions given after transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    beta: T,
    c: &mut [T],
) {
    let a = if a_transposed {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs")
    };
    let b = if b_transposed {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs")
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm out");
    general_mat_mul(T::one(), &a, &b, beta, &mut c);
}

/// Rows indexed by (c, ky, kx), columns by (n, oy, ox).
#[cfg(test)]
fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut cols = Vec::new();
    im2col_into(input, g, &mut cols);
    cols
}

fn im2col_into<T: Scalar>(input: &[T], g: &ConvGeometry, cols: &mut Vec<T>) {
    let p = g.plane_out();
    let ncols = g.batch * p;
    cols.clear();
    cols.resize(g.patch_len() * ncols, T::zero());
    let (ow, s) = (g.out_width, g.stride);
    for c in 0..g.in_channels {
        for ky in 0..g.kernel {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.height, g.out_height);
            for kx in 0..g.kernel {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.width, g.out_width);
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let plane = &input[(n * g.in_channels + c) * g.height * g.width..][..g.height * g.width];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - g.padding;
                        let src = &plane[iy * g.width..(iy + 1) * g.width];
                        let dst = &mut dst_row[n * p + oy * ow..n * p + (oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kx - g.padding;
                            dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox] = src[ox * s + kx - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the input grid.
#[cfg(test)]
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.in_channels * g.height * g.width];
    col2im_add(cols, g, &mut out);
    out
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    let p = g.plane_out();
    let ncols = g.batch * p;
    let (ow, s) = (g.out_width, g.stride);
    for c in 0..g.in_channels {
        for ky in 0..g.kernel {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.height, g.out_height);
            for kx in 0..g.kernel {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.width, g.out_width);
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let plane = &mut out[(n * g.in_channels + c) * g.height * g.width..][..g.height * g.width];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - g.padding;
                        let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                        let src = &src_row[n * p + oy * ow..n * p + (oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kx - g.padding;
                            for (d, &v) in dst[ix0..ix0 + (ox_hi - ox_lo)].iter_mut().zip(&src[ox_lo..ox_hi]) {
                                *d += v;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox * s + kx - g.padding] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// N×C×P → C×(N·P)
fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize, out: &mut Vec<T>) {
    out.clear();
    out.resize(x.len(), T::zero());
    for s in 0..n {
        for ch in 0..c {
            out[ch * n * p + s * p..][..p].copy_from_slice(&x[(s * c + ch) * p..][..p]);
        }
    }
}

/// C×(N·P) → N×C×P
fn to_batch_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize, out: &mut [T]) {
    for ch in 0..c {
        for s in 0..n {
            out[(s * c + ch) * p..][..p].copy_from_slice(&x[ch * n * p + s * p..][..p]);
        }
    }
}

/// Target size of one im2col buffer; the batch is processed in slices of
/// images small enough to stay cache-resident.
const CHUNK_ELEMENTS: usize = 1 << 19;

impl ConvGeometry {
    fn images_per_chunk(&self) -> usize {
        (CHUNK_ELEMENTS / (self.patch_len() * self.plane_out()).max(1)).clamp(1, self.batch.max(1))
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, ConvGeometry)> + '_ {
        let step = self.images_per_chunk();
        (0..self.batch).step_by(step).map(move |start| (start, ConvGeometry { batch: step.min(self.batch - start), ..*self }))
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_len(&self) -> usize {
        self.out_channels * self.plane_out()
    }
}

pub(crate) fn forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, g: &ConvGeometry) -> Tensor<T> {
    let p = g.plane_out();
    let (in_len, out_len) = (g.in_len(), g.out_len());
    let mut out = vec![T::zero(); g.batch * out_len];
    if winograd::applies(g) {
        winograd::forward(input.data(), weight.data(), g, &mut out);
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(p).zip(b.data().iter().cycle()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        return Tensor::new(&g.output_shape(), out).expect("conv output shape");
    }
    let mut cols = Vec::new();
    let mut tmp = Vec::new();
    for (start, cg) in g.chunks() {
        im2col_into(&input.data()[start * in_len..(start + cg.batch) * in_len], &cg, &mut cols);
        let dst = &mut out[start * out_len..(start + cg.batch) * out_len];
        let ncols = cg.batch * p;
        if cg.batch == 1 {
            gemm(g.out_channels, g.patch_len(), ncols, weight.data(), false, &cols, false, T::zero(), dst);
        } else {
            tmp.resize(g.out_channels * ncols, T::zero());
            gemm(g.out_channels, g.patch_len(), ncols, weight.data(), false, &cols, false, T::zero(), &mut tmp);
            to_batch_major(&tmp, cg.batch, g.out_channels, p, dst);
        }
        if let Some(b) = bias {
            for (row, &bv) in dst.chunks_exact_mut(p).zip(b.data().iter().cycle()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::new(&g.output_shape(), out).expect("conv output shape")
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Gradients with respect to the flags set in `need` = [input, weight, bias].
pub(crate) fn backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    g: &ConvGeometry,
    need: [bool; 3],
) -> ConvGrads<T> {
    let p = g.plane_out();
    let (in_len, out_len, patch) = (g.in_len(), g.out_len(), g.patch_len());
    if winograd::applies(g) {
        let mut input_grad = need[0].then(|| vec![T::zero(); input.len()]);
        let mut weight_grad = need[1].then(|| vec![T::zero(); weight.len()]);
        winograd::backward(grad_out.data(), input.data(), weight.data(), g, input_grad.as_deref_mut(), weight_grad.as_deref_mut());
        let bias = need[2].then(|| {
            let mut gb = vec![T::zero(); g.out_channels];
            for (i, row) in grad_out.data().chunks_exact(p).enumerate() {
                gb[i % g.out_channels] += row.iter().copied().sum::<T>();
            }
            gb
        });
        return ConvGrads { input: input_grad, weight: weight_grad, bias };
    }
    let mut input_grad = need[0].then(|| vec![T::zero(); input.len()]);
    // Accumulated transposed (patch × Cout) so the large operand is read row-wise.
    let mut weight_grad_t = need[1].then(|| vec![T::zero(); weight.len()]);
    let mut bias_grad = need[2].then(|| vec![T::zero(); g.out_channels]);
    let (mut go, mut cols, mut gcols) = (Vec::new(), Vec::new(), Vec::new());
    for (start, cg) in g.chunks() {
        let ncols = cg.batch * p;
        to_channel_major(&grad_out.data()[start * out_len..(start + cg.batch) * out_len], cg.batch, g.out_channels, p, &mut go);
        if let Some(gb) = bias_grad.as_mut() {
            for (acc, row) in gb.iter_mut().zip(go.chunks_exact(ncols)) {
                *acc += row.iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = weight_grad_t.as_mut() {
            im2col_into(&input.data()[start * in_len..(start + cg.batch) * in_len], &cg, &mut cols);
            gemm(patch, ncols, g.out_channels, &cols, false, &go, true, T::one(), gw);
        }
        if let Some(gi) = input_grad.as_mut() {
            gcols.resize(patch * ncols, T::zero());
            gemm(patch, g.out_channels, ncols, weight.data(), true, &go, false, T::zero(), &mut gcols);
            col2im_add(&gcols, &cg, &mut gi[start * in_len..(start + cg.batch) * in_len]);
        }
    }
    let weight_grad = weight_grad_t.map(|t| {
        let mut gw = vec![T::zero(); t.len()];
        for (k, row) in t.chunks_exact(g.out_channels).enumerate() {
            for (o, &v) in row.iter().enumerate() {
                gw[o * patch + k] = v;
            }
        }
        gw
    });
    ConvGrads { input: input_grad, weight: weight_grad, bias: bias_grad }
}
