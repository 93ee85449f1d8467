//! Built-in verification suites run by `sfusnet selftest`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check_entries, grad_check_multi, BatchNormConfig, Graph, Mode, RunningStats, Var};
use crate::error::Result;
use crate::eval::{confusion_matrix, format_percent, overall_accuracy, ConfusionMatrix};
use crate::model::{build_model, dropblock, ModelConfig};
use crate::spectral::{irfft2, naive_dft2, rfft2};
use crate::tensor::Tensor;

pub const SUITES: [&str; 5] = ["fft", "conv", "gradients", "dropblock", "metrics"];

/// Test hooks for negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelftestOptions {
    /// Drop the 1/(H·W) factor after the inverse FFT.
    pub corrupt_fft_scale: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestSummary {
    pub suites: Vec<SuiteResult>,
}

impl SelftestSummary {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            let status = if s.passed { "PASS" } else { "FAIL" };
            out += &format!("{status} {:<10} {:>7.2}s  {}\n", s.name, s.seconds, s.detail);
        }
        out
    }
}

/// Runs the named suites (all of [`SUITES`] when `only` is empty).
pub fn cmd_selftest(only: &[String], opts: SelftestOptions) -> Result<SelftestSummary> {
    let mut suites = Vec::new();
    for &name in SUITES.iter().filter(|n| only.is_empty() || only.iter().any(|o| o == *n)) {
        let start = Instant::now();
        let (passed, detail) = match name {
            "fft" => fft_suite(opts.corrupt_fft_scale)?,
            "conv" => conv_suite()?,
            "gradients" => gradient_suite()?,
            "dropblock" => dropblock_suite()?,
            _ => metrics_suite()?,
        };
        log::info!("selftest {name}: {}", if passed { "pass" } else { "FAIL" });
        suites.push(SuiteResult { name: name.into(), passed, detail, seconds: start.elapsed().as_secs_f64() });
    }
    if let Some(bad) = only.iter().find(|o| !SUITES.contains(&o.as_str())) {
        return Err(crate::Error::Config(format!("unknown selftest suite {bad:?}; known: {}", SUITES.join(", "))));
    }
    Ok(SelftestSummary { suites })
}

fn fft_suite(corrupt_scale: bool) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0F0);
    let mut round_trip: f64 = 0.0;
    let mut parseval: f64 = 0.0;
    for s in [8, 16, 32, 64, 128, 14, 28, 56, 112] {
        let x = Tensor::<f64>::uniform(&[1, 1, s, s], -1.0, 1.0, &mut rng);
        let spec = rfft2(&x)?;
        let mut back = irfft2(&spec)?;
        if corrupt_scale {
            back = back.scale((s * s) as f64);
        }
        round_trip = round_trip.max(back.max_abs_diff(&x));

        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let half = spec.shape()[3];
        let mut spectral = 0.0;
        for k in 0..s {
            for l in 0..half {
                let mult = if l == 0 || (s % 2 == 0 && l == s / 2) { 1.0 } else { 2.0 };
                spectral += mult * spec.bin(0, 0, k, l).norm_sqr();
            }
        }
        let mut scaled = spectral / (s * s) as f64;
        if corrupt_scale {
            scaled *= (s * s) as f64;
        }
        parseval = parseval.max((scaled - spatial).abs() / spatial);
    }
    let mut dft: f64 = 0.0;
    for s in [8, 14] {
        let x = Tensor::<f64>::uniform(&[1, 1, s, s], -1.0, 1.0, &mut rng);
        let spec = rfft2(&x)?;
        let full = naive_dft2(&x.clone().reshape(&[s, s])?)?;
        for k in 0..s {
            for l in 0..spec.shape()[3] {
                dft = dft.max((spec.bin(0, 0, k, l) - full.at(k, l)).norm());
            }
        }
    }
    let passed = round_trip <= 1e-10 && dft <= 1e-9 && parseval <= 1e-10;
    Ok((passed, format!("round trip {round_trip:.2e}, naive DFT {dft:.2e}, Parseval {parseval:.2e}")))
}

/// Direct quadruple-loop cross-correlation.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let (s, ws) = (x.shape(), w.shape());
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let (cout, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((ni * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out).expect("consistent shape")
}

fn conv_suite() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=k / 2 + 1);
        let (n, cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=5));
        let h = rng.random_range(k.max(2)..=11);
        let wd = rng.random_range(k.max(2)..=11);
        let x = Tensor::uniform(&[n, cin, h, wd], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[cout], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad)?;
        worst = worst.max(g.value(y).max_abs_diff(&naive_conv2d(&x, &w, Some(b.data()), stride, pad)));
    }
    Ok((worst <= 1e-12, format!("20 cases, max abs error {worst:.2e}")))
}

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::uniform(g.value(y).shape(), -1.0, 1.0, &mut rng);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = (&'static str, Vec<Tensor<f64>>, fn(&mut Graph<f64>, &[Var]) -> Result<Var>);

/// Primitive ops, each reduced to a scalar by a fixed random weighting.
pub fn primitive_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut u = |shape: &[usize]| Tensor::uniform(shape, -1.0, 1.0, &mut rng);
    vec![
        ("add", vec![u(&[2, 3]), u(&[2, 3])], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 1)
        }),
        ("mul", vec![u(&[2, 3]), u(&[2, 3])], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 2)
        }),
        ("sum", vec![u(&[3, 4])], |g, v| {
            let y = g.sum(v[0]);
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        }),
        ("conv2d", vec![u(&[2, 2, 5, 6]), u(&[3, 2, 3, 3]), u(&[3])], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            weighted_sum(g, y, 3)
        }),
        ("conv2d stride 2", vec![u(&[1, 2, 7, 6]), u(&[2, 2, 3, 3])], |g, v| {
            let y = g.conv2d(v[0], v[1], None, 2, 1)?;
            weighted_sum(g, y, 4)
        }),
        ("max_pool2d", vec![u(&[2, 2, 4, 6])], |g, v| {
            let y = g.max_pool2d(v[0])?;
            weighted_sum(g, y, 5)
        }),
        ("batch_norm train", vec![u(&[3, 2, 3, 3]), u(&[2]), u(&[2])], |g, v| {
            let y = g.batch_norm(v[0], v[1], v[2], None, Mode::Train, BatchNormConfig::default())?.output;
            weighted_sum(g, y, 6)
        }),
        ("batch_norm eval", vec![u(&[2, 2, 3, 3]), u(&[2]), u(&[2])], |g, v| {
            let stats = RunningStats { mean: vec![0.1, -0.2], var: vec![0.5, 1.5] };
            let y = g.batch_norm(v[0], v[1], v[2], Some(&stats), Mode::Eval, BatchNormConfig::default())?.output;
            weighted_sum(g, y, 7)
        }),
        ("gelu", vec![u(&[2, 5]).scale(3.0)], |g, v| {
            let y = g.gelu(v[0]);
            weighted_sum(g, y, 8)
        }),
        ("linear", vec![u(&[3, 4]), u(&[2, 4]), u(&[2])], |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            weighted_sum(g, y, 9)
        }),
        ("global_avg_pool", vec![u(&[2, 3, 3, 4])], |g, v| {
            let y = g.global_avg_pool(v[0])?;
            weighted_sum(g, y, 10)
        }),
        ("apply_mask", vec![u(&[1, 2, 3, 3])], |g, v| {
            let mask = (0..18).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
            let y = g.apply_mask(v[0], mask)?;
            weighted_sum(g, y, 11)
        }),
        ("rfft2", vec![u(&[1, 2, 6, 5])], |g, v| {
            let y = g.rfft2(v[0])?;
            weighted_sum(g, y, 12)
        }),
        ("irfft2", vec![u(&[1, 2, 6, 4])], |g, v| {
            let y = g.irfft2(v[0], 6)?;
            weighted_sum(g, y, 13)
        }),
        ("softmax_cross_entropy", vec![u(&[3, 4]).scale(2.0)], |g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1])),
    ]
}

/// Base 4, depths [1,1,1,1], 16×16 input, block size 1.
pub fn gradient_check_model() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        stage_depths: [1, 1, 1, 1],
        input_size: 16,
        dropblock_block_size: 1,
        ..ModelConfig::desk()
    }
}

/// Worst relative error over `count` sampled parameters of the reduced model
/// under a train-mode cross-entropy loss.
pub fn model_gradient_check(count: usize, seed: u64, perturbation: f64) -> Result<crate::autodiff::GradCheckReport> {
    let cfg = gradient_check_model();
    let model = build_model::<f64>(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
    let batch = 4;
    let input = Tensor::uniform(&[batch, 3, cfg.input_size, cfg.input_size], -1.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|i| i % cfg.num_classes).collect();
    let params = model.params().values().to_vec();
    let entries: Vec<(usize, usize)> = (0..count)
        .map(|_| {
            let i = rng.random_range(0..params.len());
            (i, rng.random_range(0..params[i].len()))
        })
        .collect();
    grad_check_entries(
        |g, vars| {
            let x = g.constant(input.clone());
            let out = model.forward(g, vars, x, Mode::Train, 7)?;
            g.softmax_cross_entropy(out.logits, &labels)
        },
        &params,
        &entries,
        perturbation,
    )
}

fn gradient_suite() -> Result<(bool, String)> {
    let mut worst: (f64, &str) = (0.0, "");
    for (name, inputs, f) in primitive_cases() {
        let r = grad_check_multi(f, &inputs, 1e-5)?;
        if r.max_relative_error >= worst.0 {
            worst = (r.max_relative_error, name);
        }
    }
    let model = model_gradient_check(50, 3, 1e-5)?;
    let passed = worst.0 <= 1e-4 && model.max_relative_error <= 1e-4;
    Ok((passed, format!("primitives {:.2e} (worst {}), model {:.2e} over {} params", worst.0, worst.1, model.max_relative_error, model.checked)))
}

fn dropblock_suite() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDB);
    let trials = 10_000;
    let mut zeroed = 0usize;
    for _ in 0..trials {
        zeroed += dropblock::sample_keep_mask(32, 32, 5, 0.1, &mut rng).iter().filter(|&&k| !k).count();
    }
    let mean = zeroed as f64 / (trials * 32 * 32) as f64;
    let x = Tensor::<f64>::uniform(&[2, 3, 32, 32], -1.0, 1.0, &mut rng);
    let identity = dropblock::dropblock(&x, 5, 0.1, Mode::Eval, 1)? == x;
    let passed = (mean - 0.1).abs() <= 0.01 && identity;
    Ok((passed, format!("mean zeroed fraction {mean:.4}, eval identity {identity}")))
}

fn metrics_suite() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E);
    let mut failures = 0;
    for _ in 0..100 {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=60);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let cm: ConfusionMatrix = confusion_matrix(&preds, &labels, k)?;
        let mut tp_sum = 0u64;
        for c in 0..k {
            let o = cm.ovr_counts(c);
            tp_sum += o.tp;
            let exact = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
            let ok = o.total() == n as u64
                && o.sensitivity().value == exact(o.tp, o.tp + o.fn_)
                && o.specificity().value == exact(o.tn, o.tn + o.fp)
                && o.precision().value == exact(o.tp, o.tp + o.fp)
                && o.precision().undefined == (o.tp + o.fp == 0);
            failures += usize::from(!ok);
        }
        let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        failures += usize::from(tp_sum != hits as u64 || overall_accuracy(&cm)? != hits as f64 / n as f64);
    }
    let strings = format_percent(0.9289, 0.0042) == "92.89%(±0.42)" && format_percent(1.0, 0.0) == "100.00%(±0.00)";
    Ok((failures == 0 && strings, format!("100 matrices, {failures} mismatches, format strings {}", if strings { "ok" } else { "wrong" })))
}
