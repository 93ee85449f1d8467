//! Per-channel batch normalization over N×C×H×W inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lane_dot, lane_sum, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { momentum: 0.1, eps: 1e-5 }
    }
}

/// Exponential moving averages of per-channel mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f64> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    /// Mean 0, variance 1.
    pub fn fresh(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) struct Normalized<T> {
    pub output: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub updated: Option<RunningStats<T>>,
}

/// Train mode when `batch_statistics` is set; otherwise `running` must be given.
pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: Option<&RunningStats<T>>,
    batch_statistics: bool,
    cfg: BatchNormConfig,
) -> Result<Normalized<T>> {
    let [n, c, h, w] = x.dims4("batchnorm2d")?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "batchnorm2d over {c} channels got gamma {} / beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    if let Some(r) = running {
        if r.channels() != c {
            return Err(Error::shape(format!("running stats cover {} channels, input has {c}", r.channels())));
        }
    }
    let p = h * w;
    let count = n * p;
    let eps = T::of(cfg.eps);
    let data = x.data();
    let (mean, var) = if batch_statistics {
        if count < 2 {
            return Err(Error::invalid(format!(
                "train-mode batchnorm needs at least 2 values per channel, got {count}"
            )));
        }
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let m = T::of(count as f64);
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += lane_sum(&data[(b * c + ch) * p..][..p], |x| x);
            }
            let mu = s / m;
            let mut v = T::zero();
            for b in 0..n {
                v += lane_sum(&data[(b * c + ch) * p..][..p], |x| (x - mu) * (x - mu));
            }
            mean[ch] = mu;
            var[ch] = v / m;
        }
        (mean, var)
    } else {
        let r = running.ok_or_else(|| Error::invalid("eval-mode batchnorm requires running statistics"))?;
        (r.mean.clone(), r.var.clone())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); data.len()];
    let mut out = vec![T::zero(); data.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * p;
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in base..base + p {
                let xh = (data[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    let updated = batch_statistics.then(|| {
        let fresh = RunningStats::fresh(c);
        let prev = running.unwrap_or(&fresh);
        let mom = T::of(cfg.momentum);
        let unbias = if count > 1 { T::of(count as f64 / (count - 1) as f64) } else { T::one() };
        RunningStats {
            mean: prev.mean.iter().zip(&mean).map(|(&r, &m)| (T::one() - mom) * r + mom * m).collect(),
            var: prev.var.iter().zip(&var).map(|(&r, &v)| (T::one() - mom) * r + mom * v * unbias).collect(),
        }
    });
    Ok(Normalized { output: Tensor::new(x.shape(), out)?, xhat, inv_std, updated })
}

pub(crate) struct NormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn backward<T: Scalar>(
    grad: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    batch_statistics: bool,
) -> NormGrads<T> {
    let s = grad.shape();
    let (n, c, p) = (s[0], s[1], s[2] * s[3]);
    let g = grad.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * p;
            dgamma[ch] += lane_dot(&g[base..base + p], &xhat[base..base + p]);
            dbeta[ch] += lane_sum(&g[base..base + p], |x| x);
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    let m = T::of((n * p) as f64);
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * p;
            let scale = gamma[ch] * inv_std[ch];
            if batch_statistics {
                // dx = γ·σ⁻¹·(g − mean(g) − x̂·mean(g·x̂))
                let (mg, mgx) = (dbeta[ch] / m, dgamma[ch] / m);
                for i in base..base + p {
                    dx[i] = scale * (g[i] - mg - xhat[i] * mgx);
                }
            } else {
                for i in base..base + p {
                    dx[i] = scale * g[i];
                }
            }
        }
    }
    NormGrads { input: dx, gamma: dgamma, beta: dbeta }
}
