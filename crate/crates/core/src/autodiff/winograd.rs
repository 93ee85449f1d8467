//! Winograd F(4×4, 3×3) path for stride-1, padding-1, 3×3 cross-correlation.
//!
//! Each 4×4 output tile is computed from a 6×6 input tile with 36 channel
//! GEMMs in the transformed domain, using interpolation points 0, ±1, ±2, ∞.

use std::array;

use super::conv::{gemm, ConvGeometry};
use crate::tensor::Scalar;

/// Output tile edge.
const M: usize = 4;
/// Input tile edge.
const N: usize = M + 2;
/// Transformed planes.
const P: usize = N * N;

pub(crate) fn applies(g: &ConvGeometry) -> bool {
    g.kernel == 3 && g.stride == 1 && g.padding == 1
}

/// Bᵀ·x
fn bt<T: Scalar>(x: [T; N]) -> [T; N] {
    let four = T::of(4.0);
    let two = T::of(2.0);
    let (t1, t2) = (x[4] - four * x[2], x[3] - four * x[1]);
    let (t3, t4) = (x[4] - x[2], two * (x[3] - x[1]));
    [four * x[0] - T::of(5.0) * x[2] + x[4], t1 + t2, t1 - t2, t3 + t4, t3 - t4, four * x[1] - T::of(5.0) * x[3] + x[5]]
}

/// B·y, the adjoint of [`bt`].
fn b<T: Scalar>(y: [T; N]) -> [T; N] {
    let four = T::of(4.0);
    let two = T::of(2.0);
    let (d12, s12) = (y[2] - y[1], y[1] + y[2]);
    let (d34, s34) = (y[4] - y[3], y[3] + y[4]);
    [
        four * y[0],
        four * (d12 + y[5]) + two * d34,
        -T::of(5.0) * y[0] - four * s12 - s34,
        -d12 - two * d34 - T::of(5.0) * y[5],
        y[0] + s12 + s34,
        y[5],
    ]
}

/// G·w
fn gm<T: Scalar>(w: [T; 3]) -> [T; N] {
    let sixth = T::of(1.0 / 6.0);
    let s = w[0] + w[2];
    let even = T::of(1.0 / 24.0) * w[0] + sixth * w[2];
    let odd = T::of(1.0 / 12.0) * w[1];
    [T::of(0.25) * w[0], -sixth * (s + w[1]), -sixth * (s - w[1]), even + odd, even - odd, w[2]]
}

/// Aᵀ·m
fn at<T: Scalar>(m: [T; N]) -> [T; M] {
    let (s12, d12) = (m[1] + m[2], m[1] - m[2]);
    let (s34, d34) = (m[3] + m[4], m[3] - m[4]);
    [m[0] + s12 + s34, d12 + T::of(2.0) * d34, s12 + T::of(4.0) * s34, d12 + T::of(8.0) * d34 + m[5]]
}

/// A·y
fn a<T: Scalar>(y: [T; M]) -> [T; N] {
    let (e, o) = (y[0] + y[2], y[1] + y[3]);
    let (e2, o2) = (y[0] + T::of(4.0) * y[2], T::of(2.0) * y[1] + T::of(8.0) * y[3]);
    [y[0], e + o, e - o, e2 + o2, e2 - o2, y[3]]
}

/// Applies a 1-D map along both axes of a square tile: `P·X·Pᵀ`.
fn separable<T: Scalar, const I: usize, const O: usize>(x: &[[T; I]; I], f: impl Fn([T; I]) -> [T; O]) -> [[T; O]; O] {
    let mut tmp = [[T::zero(); I]; O];
    for c in 0..I {
        let col = f(array::from_fn(|r| x[r][c]));
        for r in 0..O {
            tmp[r][c] = col[r];
        }
    }
    array::from_fn(|r| f(tmp[r]))
}

struct Tiling {
    rows: usize,
    cols: usize,
}

impl Tiling {
    fn new(g: &ConvGeometry) -> Self {
        Tiling { rows: g.out_height.div_ceil(M), cols: g.out_width.div_ceil(M) }
    }

    fn per_image(&self) -> usize {
        self.rows * self.cols
    }
}

/// Distance between transformed planes, offset so their rows do not share
/// cache sets.
fn plane_stride(len: usize) -> usize {
    len.next_multiple_of(1024) + 16
}

const CHUNK_ELEMENTS: usize = 1 << 18;

fn images_per_chunk(g: &ConvGeometry, t: &Tiling) -> usize {
    let per_image = P * g.in_channels.max(g.out_channels) * t.per_image();
    (CHUNK_ELEMENTS / per_image.max(1)).clamp(1, g.batch.max(1))
}

/// `G⊗G` as a `P × 9` matrix: row `6r + s`, column `3p + q` holds `G[r][p]·G[s][q]`.
fn kernel_map<T: Scalar>() -> Vec<T> {
    let cols: [[T; N]; 3] = array::from_fn(|p| gm(array::from_fn(|q| if p == q { T::one() } else { T::zero() })));
    let mut k = vec![T::zero(); P * 9];
    for r in 0..N {
        for s in 0..N {
            for p in 0..3 {
                for q in 0..3 {
                    k[(r * N + s) * 9 + p * 3 + q] = cols[p][r] * cols[q][s];
                }
            }
        }
    }
    k
}

/// Transformed weights, laid out `[P][Cout][Cin]` with no padding between planes.
fn transform_weights<T: Scalar>(weight: &[T], g: &ConvGeometry) -> Vec<T> {
    let pairs = g.out_channels * g.in_channels;
    let mut u = vec![T::zero(); P * pairs];
    gemm(P, 9, pairs, &kernel_map(), false, weight, true, T::zero(), &mut u);
    u
}

/// The runs `planes[k][offset..offset + len]` of a `[P][..]` buffer.
fn runs<T>(planes: &[T], stride: usize, offset: usize, len: usize) -> [&[T]; P] {
    array::from_fn(|k| &planes[k * stride + offset..][..len])
}

fn runs_mut<T>(planes: &mut [T], stride: usize, offset: usize, len: usize) -> [&mut [T]; P] {
    let mut it = planes.chunks_mut(stride);
    array::from_fn(|_| &mut it.next().expect("P planes")[offset..][..len])
}

/// Transformed input tiles for `images` images starting at `input`, laid out `[P][Cin][images·tiles]`.
fn transform_input<T: Scalar>(input: &[T], g: &ConvGeometry, t: &Tiling, images: usize, v: &mut Vec<T>) {
    let (ci, h, w) = (g.in_channels, g.height, g.width);
    let nt = images * t.per_image();
    let ps = plane_stride(ci * nt);
    v.clear();
    v.resize(P * ps, T::zero());
    let span = M * t.cols + 2;
    let mut rows = vec![T::zero(); N * span];
    let mut z = vec![T::zero(); N * span];
    for n in 0..images {
        for c in 0..ci {
            let plane = &input[(n * ci + c) * h * w..][..h * w];
            for ty in 0..t.rows {
                for (r, row) in rows.chunks_exact_mut(span).enumerate() {
                    let y = (M * ty + r).wrapping_sub(1);
                    row.iter_mut().for_each(|v| *v = T::zero());
                    if y < h {
                        let len = w.min(span - 1);
                        row[1..1 + len].copy_from_slice(&plane[y * w..y * w + len]);
                    }
                }
                for (x, zc) in z.chunks_exact_mut(N).enumerate().take(span) {
                    zc.copy_from_slice(&bt(array::from_fn(|r| rows[r * span + x])));
                }
                let dst = runs_mut(v, ps, c * nt + n * t.per_image() + ty * t.cols, t.cols);
                for tx in 0..t.cols {
                    let q = &z[N * M * tx..][..N * N];
                    for i in 0..N {
                        let out = bt(array::from_fn(|x| q[N * x + i]));
                        for (j, &val) in out.iter().enumerate() {
                            dst[i * N + j][tx] = val;
                        }
                    }
                }
            }
        }
    }
}

/// Writes the inverse transform of tile row `ty` of `m` (`[P][channels][nt]`, channel `o`) into `dst`.
fn emit_output<T: Scalar>(m: &[T], channels: usize, o: usize, nt: usize, col0: usize, ty: usize, t: &Tiling, g: &ConvGeometry, rows: &mut [T], dst: &mut [T]) {
    let span = M * t.cols;
    let src = runs(m, plane_stride(channels * nt), o * nt + col0, t.cols);
    for tx in 0..t.cols {
        let p: [[T; M]; N] = array::from_fn(|i| at(array::from_fn(|j| src[N * i + j][tx])));
        for s in 0..M {
            let y = at(array::from_fn(|i| p[i][s]));
            for (r, &val) in y.iter().enumerate() {
                rows[r * span + M * tx + s] = val;
            }
        }
    }
    for r in 0..M {
        let oy = M * ty + r;
        if oy < g.out_height {
            dst[oy * g.out_width..][..g.out_width].copy_from_slice(&rows[r * span..][..g.out_width]);
        }
    }
}

pub(crate) fn forward<T: Scalar>(input: &[T], weight: &[T], g: &ConvGeometry, out: &mut [T]) {
    let t = Tiling::new(g);
    let (ci, co) = (g.in_channels, g.out_channels);
    let (in_len, plane) = (ci * g.height * g.width, g.out_height * g.out_width);
    let u = transform_weights(weight, g);
    let step = images_per_chunk(g, &t);
    let (mut v, mut m) = (Vec::new(), Vec::new());
    let mut rows = vec![T::zero(); M * M * t.cols];
    for start in (0..g.batch).step_by(step) {
        let images = step.min(g.batch - start);
        let nt = images * t.per_image();
        transform_input(&input[start * in_len..(start + images) * in_len], g, &t, images, &mut v);
        m.resize(P * plane_stride(co * nt), T::zero());
        for k in 0..P {
            gemm(co, ci, nt, &u[k * co * ci..][..co * ci], false, &v[k * plane_stride(ci * nt)..][..ci * nt], false, T::zero(), &mut m[k * plane_stride(co * nt)..][..co * nt]);
        }
        for n in 0..images {
            for o in 0..co {
                let dst = &mut out[((start + n) * co + o) * plane..][..plane];
                for ty in 0..t.rows {
                    emit_output(&m, co, o, nt, n * t.per_image() + ty * t.cols, ty, &t, g, &mut rows, dst);
                }
            }
        }
    }
}

/// Input and weight gradients; `input_grad` is accumulated into.
pub(crate) fn backward<T: Scalar>(
    grad_out: &[T],
    input: &[T],
    weight: &[T],
    g: &ConvGeometry,
    mut input_grad: Option<&mut [T]>,
    weight_grad: Option<&mut [T]>,
) {
    let t = Tiling::new(g);
    let (ci, co, h, w) = (g.in_channels, g.out_channels, g.height, g.width);
    let (in_len, plane) = (ci * h * w, g.out_height * g.out_width);
    let u = input_grad.is_some().then(|| transform_weights(weight, g));
    let mut du = weight_grad.is_some().then(|| vec![T::zero(); P * co * ci]);
    let step = images_per_chunk(g, &t);
    let (mut v, mut dm, mut dv) = (Vec::new(), Vec::new(), Vec::new());
    for start in (0..g.batch).step_by(step) {
        let images = step.min(g.batch - start);
        let nt = images * t.per_image();
        dm.clear();
        dm.resize(P * plane_stride(co * nt), T::zero());
        let span = M * t.cols;
        let mut rows = vec![T::zero(); M * span];
        for n in 0..images {
            for o in 0..co {
                let src = &grad_out[((start + n) * co + o) * plane..][..plane];
                for ty in 0..t.rows {
                    for (r, row) in rows.chunks_exact_mut(span).enumerate() {
                        let oy = M * ty + r;
                        if oy < g.out_height {
                            row[..g.out_width].copy_from_slice(&src[oy * g.out_width..][..g.out_width]);
                            row[g.out_width..].iter_mut().for_each(|v| *v = T::zero());
                        } else {
                            row.iter_mut().for_each(|v| *v = T::zero());
                        }
                    }
                    let dst = runs_mut(&mut dm, plane_stride(co * nt), o * nt + n * t.per_image() + ty * t.cols, t.cols);
                    for tx in 0..t.cols {
                        let p: [[T; N]; M] = array::from_fn(|r| a(array::from_fn(|s| rows[r * span + M * tx + s])));
                        for j in 0..N {
                            for (i, &val) in a(array::from_fn(|r| p[r][j])).iter().enumerate() {
                                dst[i * N + j][tx] = val;
                            }
                        }
                    }
                }
            }
        }
        if let Some(du) = du.as_mut() {
            transform_input(&input[start * in_len..(start + images) * in_len], g, &t, images, &mut v);
            for k in 0..P {
                gemm(co, nt, ci, &dm[k * plane_stride(co * nt)..][..co * nt], false, &v[k * plane_stride(ci * nt)..][..ci * nt], true, T::one(), &mut du[k * co * ci..][..co * ci]);
            }
        }
        if let (Some(gi), Some(u)) = (input_grad.as_deref_mut(), u.as_ref()) {
            dv.resize(P * plane_stride(ci * nt), T::zero());
            for k in 0..P {
                gemm(ci, co, nt, &u[k * co * ci..][..co * ci], true, &dm[k * plane_stride(co * nt)..][..co * nt], false, T::zero(), &mut dv[k * plane_stride(ci * nt)..][..ci * nt]);
            }
            let span = M * t.cols + 2;
            let mut acc = vec![T::zero(); N * span];
            for n in 0..images {
                for c in 0..ci {
                    let dst = &mut gi[(start + n) * in_len + c * h * w..][..h * w];
                    for ty in 0..t.rows {
                        acc.iter_mut().for_each(|v| *v = T::zero());
                        let src = runs(&dv, plane_stride(ci * nt), c * nt + n * t.per_image() + ty * t.cols, t.cols);
                        for tx in 0..t.cols {
                            let tile: [[T; N]; N] = array::from_fn(|r| array::from_fn(|s| src[r * N + s][tx]));
                            for (r, row) in separable(&tile, b).iter().enumerate() {
                                for (s, &val) in row.iter().enumerate() {
                                    acc[r * span + M * tx + s] += val;
                                }
                            }
                        }
                        for (r, row) in acc.chunks_exact(span).enumerate() {
                            let y = (M * ty + r).wrapping_sub(1);
                            if y < h {
                                let len = w.min(span - 1);
                                for (d, &v) in dst[y * w..y * w + len].iter_mut().zip(&row[1..1 + len]) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let (Some(gw), Some(du)) = (weight_grad, du) {
        gemm(co * ci, P, 9, &du, true, &kernel_map(), false, T::zero(), gw);
    }
}
