//! One-dimensional complex FFT: iterative radix-2 for power-of-two lengths and
//! Bluestein's chirp-z reformulation for every other length.
//!
//! Both directions are unnormalized.

use num_complex::Complex;

use crate::tensor::Scalar;

#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    len: usize,
    kind: Kind<T>,
}

#[derive(Debug, Clone)]
enum Kind<T> {
    Trivial,
    Radix2 {
        /// exp(-2πik/n) for k < n/2
        twiddles: Vec<Complex<T>>,
        bitrev: Vec<usize>,
    },
    Bluestein(Box<Bluestein<T>>),
}

#[derive(Debug, Clone)]
struct Bluestein<T> {
    /// exp(-iπk²/n)
    chirp: Vec<Complex<T>>,
    /// Forward transform of the zero-padded conjugate chirp.
    kernel: Vec<Complex<T>>,
    inner: FftPlan<T>,
}

fn twiddle<T: Scalar>(numerator: usize, denominator: usize, sign: f64) -> Complex<T> {
    let angle = sign * std::f64::consts::TAU * numerator as f64 / denominator as f64;
    Complex::new(T::of(angle.cos()), T::of(angle.sin()))
}

impl<T: Scalar> FftPlan<T> {
    /// Plans a transform of length `len` (must be nonzero).
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "FFT length must be positive");
        let kind = if len == 1 {
            Kind::Trivial
        } else if len.is_power_of_two() {
            let bits = len.trailing_zeros();
            let bitrev = (0..len).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect();
            let twiddles = (0..len / 2).map(|k| twiddle(k, len, -1.0)).collect();
            Kind::Radix2 { twiddles, bitrev }
        } else {
            Kind::Bluestein(Box::new(Bluestein::new(len)))
        };
        FftPlan { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn uses_bluestein(&self) -> bool {
        matches!(self.kind, Kind::Bluestein(_))
    }

    /// In-place forward transform, X_k = Σ x_j exp(-2πijk/n).
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.process(buf, false);
    }

    /// In-place inverse transform without the 1/n factor.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.process(buf, true);
    }

    fn process(&self, buf: &mut [Complex<T>], inverse: bool) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            Kind::Trivial => {}
            Kind::Radix2 { twiddles, bitrev } => radix2(buf, twiddles, bitrev, inverse),
            Kind::Bluestein(b) => {
                if inverse {
                    buf.iter_mut().for_each(|z| *z = z.conj());
                    b.forward(buf);
                    buf.iter_mut().for_each(|z| *z = z.conj());
                } else {
                    b.forward(buf);
                }
            }
        }
    }

    /// Transforms every column of a row-major `len × width` matrix in place.
    pub fn process_columns(&self, data: &mut [Complex<T>], width: usize, inverse: bool) {
        assert_eq!(data.len(), self.len * width, "matrix size does not match plan");
        match &self.kind {
            Kind::Trivial => {}
            Kind::Radix2 { twiddles, bitrev } => radix2_columns(data, width, twiddles, bitrev, inverse),
            Kind::Bluestein(_) => {
                let mut col = vec![Complex::new(T::zero(), T::zero()); self.len];
                for l in 0..width {
                    for (r, z) in col.iter_mut().enumerate() {
                        *z = data[r * width + l];
                    }
                    self.process(&mut col, inverse);
                    for (r, z) in col.iter().enumerate() {
                        data[r * width + l] = *z;
                    }
                }
            }
        }
    }
}

/// Radix-2 butterflies applied to whole rows, transforming all columns at once.
fn radix2_columns<T: Scalar>(data: &mut [Complex<T>], width: usize, twiddles: &[Complex<T>], bitrev: &[usize], inverse: bool) {
    let n = bitrev.len();
    for (i, &j) in bitrev.iter().enumerate() {
        if i < j {
            let (lo, hi) = data.split_at_mut(j * width);
            lo[i * width..(i + 1) * width].swap_with_slice(&mut hi[..width]);
        }
    }
    let mut span = 2;
    while span <= n {
        let half = span / 2;
        let stride = n / span;
        for start in (0..n).step_by(span) {
            for j in 0..half {
                let w = twiddles[j * stride];
                let w = if inverse { w.conj() } else { w };
                let (lo, hi) = data.split_at_mut((start + j + half) * width);
                let top = &mut lo[(start + j) * width..(start + j + 1) * width];
                for (a, b) in top.iter_mut().zip(&mut hi[..width]) {
                    let t = *b * w;
                    *b = *a - t;
                    *a = *a + t;
                }
            }
        }
        span <<= 1;
    }
}

fn radix2<T: Scalar>(buf: &mut [Complex<T>], twiddles: &[Complex<T>], bitrev: &[usize], inverse: bool) {
    let n = buf.len();
    for i in 0..n {
        let j = bitrev[i];
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut span = 2;
    while span <= n {
        let half = span / 2;
        let stride = n / span;
        for start in (0..n).step_by(span) {
            for j in 0..half {
                let mut w = twiddles[j * stride];
                if inverse {
                    w = w.conj();
                }
                let u = buf[start + j];
                let v = buf[start + j + half] * w;
                buf[start + j] = u + v;
                buf[start + j + half] = u - v;
            }
        }
        span <<= 1;
    }
}

impl<T: Scalar> Bluestein<T> {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        // k² mod 2n keeps the chirp angle small and exact for large k.
        let chirp: Vec<Complex<T>> = (0..n).map(|k| twiddle((k * k) % (2 * n), 2 * n, -1.0)).collect();
        let inner = FftPlan::new(m);
        let mut kernel = vec![Complex::new(T::zero(), T::zero()); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.forward(&mut kernel);
        Bluestein { chirp, kernel, inner }
    }

    fn forward(&self, buf: &mut [Complex<T>]) {
        let n = buf.len();
        let m = self.kernel.len();
        let mut work = vec![Complex::new(T::zero(), T::zero()); m];
        for k in 0..n {
            work[k] = buf[k] * self.chirp[k];
        }
        self.inner.forward(&mut work);
        for (w, &k) in work.iter_mut().zip(&self.kernel) {
            *w = *w * k;
        }
        self.inner.inverse(&mut work);
        let scale = T::one() / T::of(m as f64);
        for k in 0..n {
            buf[k] = work[k] * self.chirp[k] * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn naive(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| v * twiddle::<f64>((j * k) % n, n, -1.0))
                    .sum()
            })
            .collect()
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n).map(|i| Complex64::new((i as f64 * 0.7).sin() + 0.1 * i as f64, (i as f64 * 1.3).cos())).collect()
    }

    #[test]
    fn matches_naive_dft_for_many_lengths() {
        for n in [1, 2, 3, 4, 5, 7, 8, 12, 14, 16, 28, 31, 64, 100, 112] {
            let x = signal(n);
            let mut y = x.clone();
            FftPlan::new(n).forward(&mut y);
            let expected = naive(&x);
            for (a, b) in y.iter().zip(&expected) {
                assert!((a - b).norm() < 1e-9 * n as f64, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_undoes_forward_up_to_n() {
        for n in [8, 14, 56] {
            let x = signal(n);
            let plan = FftPlan::new(n);
            let mut y = x.clone();
            plan.forward(&mut y);
            plan.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a / n as f64 - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plan_kind_follows_length() {
        assert!(!FftPlan::<f64>::new(64).uses_bluestein());
        assert!(FftPlan::<f64>::new(14).uses_bluestein());
    }

    #[test]
    fn column_transform_matches_per_column_transform() {
        for (rows, width) in [(8, 5), (6, 3), (1, 4)] {
            let data: Vec<Complex64> = signal(rows * width);
            let plan = FftPlan::new(rows);
            for inverse in [false, true] {
                let mut all = data.clone();
                plan.process_columns(&mut all, width, inverse);
                for l in 0..width {
                    let mut col: Vec<Complex64> = (0..rows).map(|r| data[r * width + l]).collect();
                    if inverse { plan.inverse(&mut col) } else { plan.forward(&mut col) }
                    for r in 0..rows {
                        assert!((all[r * width + l] - col[r]).norm() < 1e-12);
                    }
                }
            }
        }
    }
}
