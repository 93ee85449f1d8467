//! Frequency-domain machinery for the Conv-FFT block.

mod fft;
mod naive;
mod real;

pub use fft::FftPlan;
pub use naive::{naive_dft2, FullSpectrum};
pub use real::{
    half_width, irfft2, irfft2_packed, irfft2_packed_adjoint, pack_complex, rfft2, rfft2_packed,
    rfft2_packed_adjoint, unpack_complex, ComplexSpectrum,
};
