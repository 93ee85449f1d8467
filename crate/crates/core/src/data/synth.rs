//! Class-conditional band-limited textures standing in for ultrasound data.
//!
//! Class `c` is white noise restricted to radial frequencies
//! `[0.125·c, 0.125·(c+1))` cycles per pixel, plus a faint elliptical blob
//! shared in kind by all classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::image::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::spectral::{irfft2, rfft2};
use crate::tensor::Tensor;

pub const SYNTH_CLASSES: usize = 4;
const BAND_WIDTH: f64 = 0.125;
const TEXTURE_STD: f64 = 0.15;
const BLOB_CONTRAST: f64 = 0.06;

/// Band index of the 2-D frequency bin `(ky, kx)` of an `h×w` grid.
/// `None` for DC and for radii at or beyond 0.5 cycles/pixel.
pub fn band_of(ky: usize, kx: usize, h: usize, w: usize) -> Option<usize> {
    if ky == 0 && kx == 0 {
        return None;
    }
    let fy = ky.min(h - ky) as f64 / h as f64;
    let fx = kx.min(w - kx) as f64 / w as f64;
    let r = fy.hypot(fx);
    let band = (r / BAND_WIDTH) as usize;
    (band < SYNTH_CLASSES).then_some(band)
}

/// Share of non-DC spectral energy of channel 0 falling in each band.
pub fn band_energy_fractions(image: &Tensor) -> Result<[f64; SYNTH_CLASSES]> {
    let (h, w) = match image.shape() {
        &[_, h, w] => (h, w),
        &[h, w] => (h, w),
        s => return Err(Error::shape(format!("expected C×H×W or H×W, got {s:?}"))),
    };
    let plane = Tensor::new(&[1, 1, h, w], image.data()[..h * w].to_vec())?;
    let spec = rfft2(&plane)?;
    let wh = spec.shape()[3];
    let mut bands = [0.0; SYNTH_CLASSES];
    let mut total = 0.0;
    for k in 0..h {
        for l in 0..wh {
            if k == 0 && l == 0 {
                continue;
            }
            let mirrored = l != 0 && !(w % 2 == 0 && l == w / 2);
            let e = spec.bin(0, 0, k, l).norm_sqr() * if mirrored { 2.0 } else { 1.0 };
            total += e;
            if let Some(b) = band_of(k, l, h, w) {
                bands[b] += e;
            }
        }
    }
    if total > 0.0 {
        bands.iter_mut().for_each(|b| *b /= total);
    }
    Ok(bands)
}

/// One deterministic grayscale image (replicated to three channels) in [0, 1].
pub fn synth_generate(class_id: usize, size: usize, seed: u64) -> Result<LabeledImage> {
    if class_id >= SYNTH_CLASSES {
        return Err(Error::invalid(format!("synthetic class must be below {SYNTH_CLASSES}, got {class_id}")));
    }
    if size < 8 {
        return Err(Error::invalid(format!("synthetic images need size ≥ 8, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class_id as u64);
    let n = size * size;

    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut spec = rfft2(&Tensor::new(&[1, 1, size, size], noise)?)?;
    let wh = spec.shape()[3];
    for k in 0..size {
        for l in 0..wh {
            if band_of(k, l, size, size) != Some(class_id) {
                spec.re_mut()[k * wh + l] = 0.0;
                spec.im_mut()[k * wh + l] = 0.0;
            }
        }
    }
    let texture = irfft2(&spec)?.into_data();
    let mean = texture.iter().sum::<f64>() / n as f64;
    let std = (texture.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if std > 0.0 { TEXTURE_STD / std } else { 0.0 };

    let s = size as f64;
    let (cy, cx) = (rng.random_range(0.35..0.65) * s, rng.random_range(0.35..0.65) * s);
    let (a, b) = (rng.random_range(0.12..0.25) * s, rng.random_range(0.12..0.25) * s);
    let (sin, cos) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();

    let mut gray = Vec::with_capacity(n);
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
            let blob = -BLOB_CONTRAST * (-(u / a).powi(2) - (v / b).powi(2)).exp();
            let t = (texture[y * size + x] - mean) * scale;
            gray.push((0.5 + t + blob).clamp(0.0, 1.0));
        }
    }
    let pixels = Tensor::from_fn(&[3, size, size], |i| gray[i % n]);
    Ok(LabeledImage { pixels, label: class_id, source: format!("band{class_id}/synthetic_{seed:016x}") })
}

/// Size and seed of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { per_class: 500, size: 64, seed: 0 }
    }
}

/// `per_class` images of each class; per-image seeds are drawn from `seed`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut images = Vec::with_capacity(SYNTH_CLASSES * spec.per_class);
    for class in 0..SYNTH_CLASSES {
        for i in 0..spec.per_class {
            let mut img = synth_generate(class, spec.size, master.random())?;
            img.source = format!("band{class}/{i:05}.png");
            images.push(img);
        }
    }
    Ok(Dataset { class_names: (0..SYNTH_CLASSES).map(|c| format!("band{c}")).collect(), images })
}
