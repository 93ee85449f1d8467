//! Real-input 2-D transforms over the last two axes of N×C×H×W tensors.
//!
//! Forward transforms are unnormalized; inverse transforms carry the 1/(H·W)
//! factor so that `irfft2(rfft2(x)) == x`. Only the non-redundant half-plane
//! `H × (W/2 + 1)` is stored.

use num_complex::Complex;

use super::fft::FftPlan;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Half-plane spectrum of a batch of real feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<T = f64> {
    /// N×C×H×(W/2+1)
    shape: [usize; 4],
    width: usize,
    re: Vec<T>,
    im: Vec<T>,
}

pub fn half_width(width: usize) -> usize {
    width / 2 + 1
}

/// Number of times a stored column appears in the full Hermitian spectrum.
fn column_multiplicity(l: usize, width: usize) -> usize {
    if l == 0 || (width % 2 == 0 && l == width / 2) {
        1
    } else {
        2
    }
}

impl<T: Scalar> ComplexSpectrum<T> {
    pub fn new(shape: [usize; 4], width: usize, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        if shape[3] != half_width(width) {
            return Err(Error::shape(format!(
                "stored width {} inconsistent with original width {width} (expected {})",
                shape[3],
                half_width(width)
            )));
        }
        let n: usize = shape.iter().product();
        if re.len() != n || im.len() != n {
            return Err(Error::shape(format!("spectrum {shape:?} needs {n} values per part")));
        }
        Ok(ComplexSpectrum { shape, width, re, im })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    /// Spatial width of the signal this spectrum came from.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [T] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [T] {
        &mut self.im
    }

    pub fn bin(&self, n: usize, c: usize, k: usize, l: usize) -> Complex<T> {
        let [_, ch, h, wh] = self.shape;
        let i = ((n * ch + c) * h + k) * wh + l;
        Complex::new(self.re[i], self.im[i])
    }
}

struct Planes<T> {
    rows: FftPlan<T>,
    cols: FftPlan<T>,
}

impl<T: Scalar> Planes<T> {
    fn new(h: usize, w: usize) -> Self {
        Planes { rows: FftPlan::new(w), cols: FftPlan::new(h) }
    }

    /// Half-plane forward transform of one H×W plane into `out` (H×Wh, row-major).
    /// Rows are transformed two at a time as the real and imaginary parts of one
    /// complex signal.
    fn forward(&self, plane: &[T], h: usize, w: usize, out: &mut [Complex<T>], row: &mut [Complex<T>]) {
        let wh = half_width(w);
        let half = T::of(0.5);
        let mut r = 0;
        while r < h {
            let a = &plane[r * w..(r + 1) * w];
            if r + 1 < h {
                let b = &plane[(r + 1) * w..(r + 2) * w];
                for ((z, &x), &y) in row.iter_mut().zip(a).zip(b) {
                    *z = Complex::new(x, y);
                }
                self.rows.forward(row);
                for k in 0..wh {
                    let z = row[k];
                    let zc = row[(w - k) % w].conj();
                    let d = z - zc;
                    out[r * wh + k] = (z + zc) * half;
                    out[(r + 1) * wh + k] = Complex::new(d.im * half, -d.re * half);
                }
                r += 2;
            } else {
                for (z, &x) in row.iter_mut().zip(a) {
                    *z = Complex::new(x, T::zero());
                }
                self.rows.forward(row);
                out[r * wh..(r + 1) * wh].copy_from_slice(&row[..wh]);
                r += 1;
            }
        }
        self.cols.process_columns(out, wh, false);
    }

    /// Complex-to-real inverse of one half-plane (consumed in place) into `plane`,
    /// scaled by `scale`. Only the real part of the Hermitian extension is kept,
    /// so any half-plane input is accepted.
    fn inverse(&self, spec: &mut [Complex<T>], h: usize, w: usize, plane: &mut [T], scale: T, row: &mut [Complex<T>]) {
        let wh = half_width(w);
        self.cols.process_columns(spec, wh, true);
        // The imaginary parts of the DC and Nyquist bins only feed the discarded
        // imaginary output, so dropping them makes each row exactly Hermitian and
        // lets two rows share one complex inverse.
        let clean = |z: Complex<T>, l: usize| {
            if l == 0 || (w % 2 == 0 && l == w / 2) {
                Complex::new(z.re, T::zero())
            } else {
                z
            }
        };
        let mut r = 0;
        while r < h {
            let pair = r + 1 < h;
            let zero = Complex::new(T::zero(), T::zero());
            for l in 0..w {
                let (src, conj) = if l < wh { (l, false) } else { (w - l, true) };
                let xa = clean(spec[r * wh + src], src);
                let xb = if pair { clean(spec[(r + 1) * wh + src], src) } else { zero };
                let (xa, xb) = if conj { (xa.conj(), xb.conj()) } else { (xa, xb) };
                row[l] = Complex::new(xa.re - xb.im, xa.im + xb.re);
            }
            self.rows.inverse(row);
            for (j, z) in row.iter().enumerate() {
                plane[r * w + j] = z.re * scale;
                if pair {
                    plane[(r + 1) * w + j] = z.im * scale;
                }
            }
            r += if pair { 2 } else { 1 };
        }
    }
}

fn zero<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Calls `f(plane_index, spectrum_of_plane)` for every N×C plane of `input`.
fn for_each_forward<T: Scalar>(input: &Tensor<T>, mut f: impl FnMut(usize, &[Complex<T>])) -> Result<[usize; 4]> {
    let [n, c, h, w] = input.dims4("rfft2")?;
    let planes = Planes::new(h, w);
    let wh = half_width(w);
    let mut out = vec![zero(); h * wh];
    let mut row = vec![zero(); w];
    for (p, plane) in input.data().chunks_exact(h * w).enumerate() {
        planes.forward(plane, h, w, &mut out, &mut row);
        f(p, &out);
    }
    Ok([n, c, h, wh])
}

/// Unnormalized forward real 2-D DFT over the last two axes.
pub fn rfft2<T: Scalar>(input: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let [n, c, h, w] = input.dims4("rfft2")?;
    let plane_len = h * half_width(w);
    let mut re = vec![T::zero(); n * c * plane_len];
    let mut im = vec![T::zero(); n * c * plane_len];
    let shape = for_each_forward(input, |p, spec| {
        for (i, z) in spec.iter().enumerate() {
            re[p * plane_len + i] = z.re;
            im[p * plane_len + i] = z.im;
        }
    })?;
    ComplexSpectrum::new(shape, w, re, im)
}

/// Inverse of [`rfft2`], scaled by 1/(H·W).
pub fn irfft2<T: Scalar>(spectrum: &ComplexSpectrum<T>) -> Result<Tensor<T>> {
    let [n, c, h, wh] = spectrum.shape;
    let w = spectrum.width;
    if wh != half_width(w) {
        return Err(Error::shape(format!("stored width {wh} inconsistent with original width {w}")));
    }
    let plane_len = h * wh;
    let planes = Planes::new(h, w);
    let scale = T::one() / T::of((h * w) as f64);
    let mut out = vec![T::zero(); n * c * h * w];
    let mut spec = vec![zero(); plane_len];
    let mut row = vec![zero(); w];
    for (p, plane) in out.chunks_exact_mut(h * w).enumerate() {
        let base = p * plane_len;
        for i in 0..plane_len {
            spec[i] = Complex::new(spectrum.re[base + i], spectrum.im[base + i]);
        }
        planes.inverse(&mut spec, h, w, plane, scale, &mut row);
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Stacks real parts as channels `0..C` and imaginary parts as channels `C..2C`.
pub fn pack_complex<T: Scalar>(spectrum: &ComplexSpectrum<T>) -> Tensor<T> {
    let [n, c, h, wh] = spectrum.shape;
    let chan = c * h * wh;
    let mut data = Vec::with_capacity(2 * spectrum.re.len());
    for s in 0..n {
        data.extend_from_slice(&spectrum.re[s * chan..(s + 1) * chan]);
        data.extend_from_slice(&spectrum.im[s * chan..(s + 1) * chan]);
    }
    Tensor::new(&[n, 2 * c, h, wh], data).expect("packed shape is consistent")
}

/// Inverse of [`pack_complex`].
pub fn unpack_complex<T: Scalar>(packed: &Tensor<T>, original_width: usize) -> Result<ComplexSpectrum<T>> {
    let [n, c2, h, wh] = packed.dims4("unpack_complex")?;
    if c2 % 2 != 0 {
        return Err(Error::shape(format!("packed spectrum needs an even channel count, got {c2}")));
    }
    let chan = c2 / 2 * h * wh;
    let mut re = Vec::with_capacity(n * chan);
    let mut im = Vec::with_capacity(n * chan);
    for s in packed.data().chunks_exact(2 * chan) {
        re.extend_from_slice(&s[..chan]);
        im.extend_from_slice(&s[chan..]);
    }
    ComplexSpectrum::new([n, c2 / 2, h, wh], original_width, re, im)
}

/// `pack_complex(rfft2(x))` without the intermediate spectrum.
pub fn rfft2_packed<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("rfft2")?;
    let plane_len = h * half_width(w);
    let chan = c * plane_len;
    let mut data = vec![T::zero(); 2 * n * chan];
    for_each_forward(input, |p, spec| {
        let (s, ch) = (p / c, p % c);
        let re_base = s * 2 * chan + ch * plane_len;
        let im_base = re_base + chan;
        for (i, z) in spec.iter().enumerate() {
            data[re_base + i] = z.re;
            data[im_base + i] = z.im;
        }
    })?;
    Tensor::new(&[n, 2 * c, h, half_width(w)], data)
}

/// `irfft2(unpack_complex(packed, width))`, with each stored column optionally
/// divided by its Hermitian multiplicity first (used by the rfft2 adjoint).
fn irfft2_packed_impl<T: Scalar>(packed: &Tensor<T>, width: usize, scale: T, divide_multiplicity: bool) -> Result<Tensor<T>> {
    let [n, c2, h, wh] = packed.dims4("irfft2")?;
    if c2 % 2 != 0 {
        return Err(Error::shape(format!("packed spectrum needs an even channel count, got {c2}")));
    }
    if wh != half_width(width) {
        return Err(Error::shape(format!("stored width {wh} inconsistent with original width {width}")));
    }
    let c = c2 / 2;
    let plane_len = h * wh;
    let chan = c * plane_len;
    let planes = Planes::new(h, width);
    let mut out = vec![T::zero(); n * c * h * width];
    let mut spec = vec![zero(); plane_len];
    let mut row = vec![zero(); width];
    let src = packed.data();
    for (p, plane) in out.chunks_exact_mut(h * width).enumerate() {
        let (s, ch) = (p / c, p % c);
        let re_base = s * 2 * chan + ch * plane_len;
        let im_base = re_base + chan;
        for i in 0..plane_len {
            let mut z = Complex::new(src[re_base + i], src[im_base + i]);
            if divide_multiplicity && column_multiplicity(i % wh, width) == 2 {
                z = z * T::of(0.5);
            }
            spec[i] = z;
        }
        planes.inverse(&mut spec, h, width, plane, scale, &mut row);
    }
    Tensor::new(&[n, c, h, width], out)
}

/// `irfft2(unpack_complex(packed, width))` without the intermediate spectrum.
pub fn irfft2_packed<T: Scalar>(packed: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    let [_, _, h, _] = packed.dims4("irfft2")?;
    irfft2_packed_impl(packed, width, T::one() / T::of((h * width) as f64), false)
}

/// Adjoint of [`rfft2_packed`]: maps a gradient on the packed half-plane back to
/// the spatial input, `g_x = Re Σ_half G·exp(+iθ)`.
pub fn rfft2_packed_adjoint<T: Scalar>(grad: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    irfft2_packed_impl(grad, width, T::one(), true)
}

/// Adjoint of [`irfft2_packed`]: `g_Y = (m_l / (H·W)) · rfft2(g_x)` where `m_l`
/// is the Hermitian multiplicity of stored column `l`.
pub fn irfft2_packed_adjoint<T: Scalar>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = grad.dims4("irfft2 adjoint")?;
    let mut out = rfft2_packed(grad)?;
    let wh = half_width(w);
    let inv = T::one() / T::of((h * w) as f64);
    let two = T::of(2.0) * inv;
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= if column_multiplicity(i % wh, w) == 2 { two } else { inv };
    }
    Ok(out)
}
