//! DropBlock: structured dropout over contiguous square regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Seed probability γ chosen so that, ignoring overlaps, `drop_rate` of the map is zeroed.
pub fn seed_probability(height: usize, width: usize, block_size: usize, drop_rate: f64) -> f64 {
    let valid = ((height - block_size + 1) * (width - block_size + 1)) as f64;
    drop_rate * (height * width) as f64 / ((block_size * block_size) as f64 * valid)
}

fn check(height: usize, width: usize, block_size: usize, drop_rate: f64) -> Result<()> {
    if block_size == 0 || block_size % 2 == 0 {
        return Err(Error::invalid(format!("DropBlock block size must be odd, got {block_size}")));
    }
    if block_size > height.min(width) {
        return Err(Error::invalid(format!("DropBlock block {block_size} exceeds {height}×{width} map")));
    }
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::invalid(format!("DropBlock rate must lie in [0, 1), got {drop_rate}")));
    }
    Ok(())
}

/// Samples a keep-mask (1 = kept, 0 = dropped) for one H×W map.
///
/// Seeds are drawn only where a whole block fits; each seed zeroes the
/// `block_size²` square whose top-left corner it marks.
pub fn sample_keep_mask<R: Rng + ?Sized>(height: usize, width: usize, block_size: usize, drop_rate: f64, rng: &mut R) -> Vec<bool> {
    let gamma = seed_probability(height, width, block_size, drop_rate);
    let mut keep = vec![true; height * width];
    for i in 0..=height - block_size {
        for j in 0..=width - block_size {
            if rng.random::<f64>() < gamma {
                for y in i..i + block_size {
                    keep[y * width + j..y * width + j + block_size].fill(false);
                }
            }
        }
    }
    keep
}

/// Full-size multiplicative mask for an N×C×H×W tensor: each sample gets its
/// own block pattern shared by all channels, scaled by total/kept.
pub fn sample_mask<T: Scalar, R: Rng + ?Sized>(shape: [usize; 4], block_size: usize, drop_rate: f64, rng: &mut R) -> Result<Vec<T>> {
    let [n, c, h, w] = shape;
    check(h, w, block_size, drop_rate)?;
    let mut mask = Vec::with_capacity(n * c * h * w);
    for _ in 0..n {
        let keep = sample_keep_mask(h, w, block_size, drop_rate, rng);
        let kept = keep.iter().filter(|&&k| k).count();
        let scale = if kept == 0 { T::zero() } else { T::of((h * w) as f64 / kept as f64) };
        for _ in 0..c {
            mask.extend(keep.iter().map(|&k| if k { scale } else { T::zero() }));
        }
    }
    Ok(mask)
}

/// Standalone DropBlock. Eval mode and `drop_rate == 0` return the input unchanged.
pub fn dropblock<T: Scalar>(input: &Tensor<T>, block_size: usize, drop_rate: f64, mode: Mode, rng_seed: u64) -> Result<Tensor<T>> {
    let shape = input.dims4("dropblock")?;
    check(shape[2], shape[3], block_size, drop_rate)?;
    if mode == Mode::Eval || drop_rate == 0.0 {
        return Ok(input.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mask = sample_mask::<T, _>(shape, block_size, drop_rate, &mut rng)?;
    Tensor::new(input.shape(), input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect())
}
