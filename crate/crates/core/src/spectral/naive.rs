//! Direct evaluation of the 2-D DFT definition, kept as a verification oracle.

use num_complex::Complex64;

use crate::error::Result;
use crate::tensor::Tensor;

/// Full (both half-planes) complex spectrum of an H×W real signal.
#[derive(Debug, Clone)]
pub struct FullSpectrum {
    pub height: usize,
    pub width: usize,
    pub bins: Vec<Complex64>,
}

impl FullSpectrum {
    pub fn at(&self, k: usize, l: usize) -> Complex64 {
        self.bins[k * self.width + l]
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// `X[k,l] = Σ_{m,n} x[m,n]·exp(-2πi(km/H + ln/W))`, O(H²W²).
pub fn naive_dft2(input: &Tensor<f64>) -> Result<FullSpectrum> {
    let [h, w] = input.dims2("naive_dft2")?;
    let x = input.data();
    let phase = |num: usize, den: usize| {
        let a = -std::f64::consts::TAU * num as f64 / den as f64;
        Complex64::new(a.cos(), a.sin())
    };
    let mut bins = Vec::with_capacity(h * w);
    for k in 0..h {
        for l in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..h {
                let row = phase((k * m) % h, h);
                for n in 0..w {
                    acc += x[m * w + n] * row * phase((l * n) % w, w);
                }
            }
            bins.push(acc);
        }
    }
    Ok(FullSpectrum { height: h, width: w, bins })
}
