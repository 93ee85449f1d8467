//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any fails. Positional arguments filter by criterion name.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfusnet::autodiff::{Graph, Mode, Var};
use sfusnet::cli::{cmd_ablate, cmd_train, gradient_check_model, primitive_cases, TrainOutcome};
use sfusnet::data::stratified_kfold;
use sfusnet::eval::{confusion_matrix, format_percent, overall_accuracy, ConfusionCounts, Metric};
use sfusnet::experiment::ExperimentConfig;
use sfusnet::model::{build_model, dropblock, ModelConfig};
use sfusnet::spectral::{irfft2, rfft2};
use sfusnet::Tensor;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- FFT

fn dft2(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::zero(); h * w];
    for k in 0..h {
        for l in 0..w {
            let mut acc = Complex64::zero();
            for m in 0..h {
                for n in 0..w {
                    let theta = -2.0 * std::f64::consts::PI * (((k * m) % h) as f64 / h as f64 + ((l * n) % w) as f64 / w as f64);
                    acc += x[m * w + n] * Complex64::from_polar(1.0, theta);
                }
            }
            out[k * w + l] = acc;
        }
    }
    out
}

fn fft_correctness() -> Verdict {
    let start = Instant::now();
    let mut r = rng(11);
    let (mut round_trip, mut parseval): (f64, f64) = (0.0, 0.0);
    for s in [8, 16, 32, 64, 128, 14, 28, 56, 112] {
        for _ in 0..3 {
            let x = Tensor::<f64>::uniform(&[2, 1, s, s], -1.0, 1.0, &mut r);
            let spec = rfft2(&x).unwrap();
            round_trip = round_trip.max(irfft2(&spec).unwrap().max_abs_diff(&x));
            let half = s / 2 + 1;
            for n in 0..2 {
                let energy: f64 = x.data()[n * s * s..(n + 1) * s * s].iter().map(|v| v * v).sum();
                let mut spectral = 0.0;
                for k in 0..s {
                    for l in 0..half {
                        let mult = if l == 0 || 2 * l == s { 1.0 } else { 2.0 };
                        spectral += mult * spec.bin(n, 0, k, l).norm_sqr();
                    }
                }
                parseval = parseval.max((spectral / (s * s) as f64 - energy).abs() / energy);
            }
        }
    }
    let mut dft: f64 = 0.0;
    for s in [8, 14, 16, 28] {
        let x = Tensor::<f64>::uniform(&[1, 1, s, s], -1.0, 1.0, &mut r);
        let spec = rfft2(&x).unwrap();
        let full = dft2(x.data(), s, s);
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = full.iter().map(|z| z.norm_sqr()).sum::<f64>() / (s * s) as f64;
        parseval = parseval.max((spectral - energy).abs() / energy);
        if s > 14 {
            continue;
        }
        for k in 0..s {
            for l in 0..s / 2 + 1 {
                dft = dft.max((spec.bin(0, 0, k, l) - full[k * s + l]).norm());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        round_trip <= 1e-10 && dft <= 1e-9 && parseval <= 1e-10 && secs <= 30.0,
        format!("round trip {round_trip:.2e} (≤1e-10), DFT oracle {dft:.2e} (≤1e-9), Parseval {parseval:.2e} (≤1e-10), {secs:.1}s (≤30s)"),
    )
}

// ---------------------------------------------------------------- convolution

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let at = |ni: usize, c: usize, y: i64, xx: i64| -> f64 {
        if y < 0 || xx < 0 || y >= h as i64 || xx >= wd as i64 {
            0.0
        } else {
            x.data()[((ni * cin + c) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as i64 - pad as i64;
                                let xx = (ox * stride + kx) as i64 - pad as i64;
                                acc += at(ni, ci, y, xx) * w.data()[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn conv_correctness() -> Verdict {
    let mut r = rng(23);
    let mut worst: f64 = 0.0;
    let mut cases = Vec::new();
    for _ in 0..20 {
        let k = [1, 3, 5, 7][r.random_range(0..4)];
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..=k / 2);
        let h = r.random_range(k..k + 12);
        let w = r.random_range(k..k + 12);
        let (n, cin, cout) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
        let x = Tensor::uniform(&[n, cin, h, w], -2.0, 2.0, &mut r);
        let wt = Tensor::uniform(&[cout, cin, k, k], -1.0, 1.0, &mut r);
        let b = Tensor::uniform(&[cout], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let expect = conv_oracle(&x, &wt, b.data(), stride, pad);
        let got = g.value(y).data();
        assert_eq!(got.len(), expect.len());
        worst = worst.max(got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        cases.push(format!("{n}x{cin}x{h}x{w}/k{k}s{stride}p{pad}"));
    }
    verdict(worst <= 1e-12, format!("20 cases (e.g. {}), max abs error {worst:.2e} (≤1e-12)", cases[..3].join(", ")))
}

// ---------------------------------------------------------------- gradients

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(sfusnet::autodiff::RELATIVE_ERROR_FLOOR)
}

/// Analytic gradients from one backward pass against a five-point central
/// difference for the listed entries.
fn fd_worst(f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var, inputs: &[Tensor<f64>], entries: &[(usize, usize)], h: f64) -> f64 {
    let eval = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(inputs);
    let grads = g.backward(out).unwrap();
    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for &(i, e) in entries {
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[e]);
        let orig = work[i].data()[e];
        let mut at = |d: f64| {
            work[i].data_mut()[e] = orig + d;
            let (g, _, o) = eval(&work);
            g.value(o).item()
        };
        let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        work[i].data_mut()[e] = orig;
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

fn gradient_integrity() -> Verdict {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, inputs, f) in primitive_cases() {
        let entries: Vec<(usize, usize)> = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e))).collect();
        let e = fd_worst(&|g, v| f(g, v).unwrap(), &inputs, &entries, 1e-5);
        worst = worst.max(e);
        lines.push(format!("{name} {e:.1e}"));
    }

    let cfg = gradient_check_model();
    let model = build_model::<f64>(&cfg, 2024).unwrap();
    let mut r = rng(99);
    let x = Tensor::uniform(&[4, 3, 16, 16], -1.0, 1.0, &mut r);
    let labels = [0, 1, 2, 3];
    let params = model.params().values().to_vec();
    let entries: Vec<(usize, usize)> = (0..50)
        .map(|_| {
            let i = r.random_range(0..params.len());
            (i, r.random_range(0..params[i].len()))
        })
        .collect();
    let model_err = fd_worst(
        &|g, vars| {
            let xv = g.constant(x.clone());
            let out = model.forward(g, vars, xv, Mode::Train, 17).unwrap();
            g.softmax_cross_entropy(out.logits, &labels).unwrap()
        },
        &params,
        &entries,
        1e-5,
    );
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-4 && model_err <= 1e-4 && secs <= 120.0,
        format!("{} primitives worst {worst:.1e}, reduced model 50 params {model_err:.1e} (≤1e-4), {secs:.1}s (≤120s); {}", lines.len(), lines.join(", ")),
    )
}

// ---------------------------------------------------------------- shapes

fn shape_contract() -> Verdict {
    let model = build_model::<f32>(&ModelConfig::paper(), 0).unwrap();
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let x = g.constant(Tensor::<f32>::uniform(&[1, 3, 224, 224], 0.0, 1.0, &mut rng(1)));
    let out = model.forward(&mut g, &p, x, Mode::Eval, 0).unwrap();
    let taps: Vec<Vec<usize>> = out.taps.iter().map(|&t| g.value(t).shape()[1..].to_vec()).collect();
    let logits = g.value(out.logits).shape().to_vec();
    let expected = vec![vec![32, 112, 112], vec![32, 112, 112], vec![64, 56, 56], vec![128, 28, 28], vec![256, 14, 14]];
    verdict(taps == expected && logits == [1, 4], format!("stem/stage taps {taps:?}, logits {logits:?}"))
}

// ---------------------------------------------------------------- DropBlock

fn dropblock_statistics() -> Verdict {
    let ones = Tensor::<f64>::ones(&[1, 1, 32, 32]);
    let trials = 10_000;
    let mut zeroed = 0usize;
    for seed in 0..trials {
        let y = dropblock::dropblock(&ones, 5, 0.1, Mode::Train, seed as u64).unwrap();
        zeroed += y.data().iter().filter(|&&v| v == 0.0).count();
    }
    let mean = zeroed as f64 / (trials * 1024) as f64;
    let x = Tensor::<f64>::uniform(&[4, 8, 32, 32], -3.0, 3.0, &mut rng(5));
    let y = dropblock::dropblock(&x, 5, 0.1, Mode::Eval, 77).unwrap();
    let identical = x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let rel = (mean - 0.1).abs() / 0.1;
    verdict(rel <= 0.10 && identical, format!("mean zeroed fraction {mean:.5} ({:.1}% from 0.1, ≤10%), eval bit-exact {identical}", rel * 100.0))
}

// ---------------------------------------------------------------- metrics

fn ratio(num: u64, den: u64) -> Option<BigRational> {
    (den != 0).then(|| BigRational::new(BigInt::from(num), BigInt::from(den)))
}

/// True if `v` is the double nearest to `q` (ties either way).
fn correctly_rounded(v: f64, q: &BigRational) -> bool {
    let exact = BigRational::from_float(v).unwrap();
    let next = BigRational::from_float(f64::from_bits(v.to_bits() + 1)).unwrap();
    let prev = if v > 0.0 { BigRational::from_float(f64::from_bits(v.to_bits() - 1)).unwrap() } else { exact.clone() - (next.clone() - exact.clone()) };
    let d = (exact.clone() - q).abs();
    d <= (next - q).abs() && d <= (prev - q).abs()
}

fn check_metric(m: Metric, q: Option<BigRational>) -> bool {
    match q {
        None => m.undefined && m.value == 0.0,
        Some(q) => !m.undefined && correctly_rounded(m.value, &q) && m.value == q.to_f64().unwrap(),
    }
}

fn metrics_arithmetic() -> Verdict {
    let mut r = rng(31);
    let mut mismatches = 0;
    let mut checked = 0;
    for t in 0..100 {
        let k = r.random_range(2..7);
        let n = if t % 10 == 0 { r.random_range(1..5) } else { r.random_range(20..3000) };
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let preds: Vec<usize> = labels.iter().map(|&l| if r.random_bool(0.7) { l } else { r.random_range(0..k) }).collect();
        let cm = confusion_matrix(&preds, &labels, k).unwrap();
        for c in 0..k {
            let tp = (0..n).filter(|&i| labels[i] == c && preds[i] == c).count() as u64;
            let fp = (0..n).filter(|&i| labels[i] != c && preds[i] == c).count() as u64;
            let fn_ = (0..n).filter(|&i| labels[i] == c && preds[i] != c).count() as u64;
            let tn = n as u64 - tp - fp - fn_;
            let o: ConfusionCounts = cm.ovr_counts(c);
            let ok = (o.tp, o.fp, o.fn_, o.tn) == (tp, fp, fn_, tn)
                && check_metric(o.accuracy(), ratio(tp + tn, n as u64))
                && check_metric(o.sensitivity(), ratio(tp, tp + fn_))
                && check_metric(o.specificity(), ratio(tn, tn + fp))
                && check_metric(o.precision(), ratio(tp, tp + fp));
            mismatches += usize::from(!ok);
            checked += 4;
        }
        let hits = (0..n).filter(|&i| labels[i] == preds[i]).count() as u64;
        let acc = overall_accuracy(&cm).unwrap();
        mismatches += usize::from(!correctly_rounded(acc, &ratio(hits, n as u64).unwrap()));
        checked += 1;
    }
    let a = format_percent(0.9289, 0.0042);
    let b = format_percent(1.0, 0.0);
    let strings = a == "92.89%(±0.42)" && b == "100.00%(±0.00)";
    verdict(mismatches == 0 && strings, format!("{checked} metric values vs rational oracle, {mismatches} mismatches; formatter {a}, {b}"))
}

// ---------------------------------------------------------------- folds

fn cross_validation_protocol() -> Verdict {
    let counts = [1217usize, 601, 236, 1338];
    let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
    let mut ok = true;
    let mut spread = Vec::new();
    for seed in [0u64, 1, 42] {
        let plan = stratified_kfold(&labels, 5, seed).unwrap();
        let mut seen = vec![0u8; labels.len()];
        for f in 0..5 {
            plan.validation(f).iter().for_each(|&i| seen[i] += 1);
        }
        ok &= seen.iter().all(|&s| s == 1);
        for (c, _) in counts.iter().enumerate() {
            let per: Vec<usize> = (0..5).map(|f| plan.validation(f).iter().filter(|&&i| labels[i] == c).count()).collect();
            let d = per.iter().max().unwrap() - per.iter().min().unwrap();
            ok &= d <= 1;
            if seed == 0 {
                spread.push(format!("{per:?}"));
            }
        }
    }
    verdict(ok, format!("disjoint cover of 3392 samples for 3 seeds; per-class fold counts {}", spread.join(" ")))
}

// ---------------------------------------------------------------- training

fn acceptance_config(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.output = out.to_path_buf();
    cfg.deterministic = true;
    cfg
}

struct DeskRun {
    outcome: TrainOutcome,
    elapsed: Duration,
}

static FIRST_RUN: OnceLock<DeskRun> = OnceLock::new();

fn desk_run() -> &'static DeskRun {
    FIRST_RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let outcome = cmd_train(&acceptance_config(dir.path())).unwrap();
        DeskRun { outcome, elapsed: start.elapsed() }
    })
}

fn desk_learning() -> Verdict {
    let run = desk_run();
    let accs = run.outcome.fold_accuracies();
    let good = accs.iter().filter(|&&a| a >= 0.90).count();
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    let list: Vec<String> = accs.iter().map(|a| format!("{:.2}%", a * 100.0)).collect();
    verdict(
        good >= 4 && accs.len() == 5 && minutes <= 30.0,
        format!("fold accuracies [{}], {good}/5 ≥ 90% (need 4); runtime {minutes:.1} min (≤30)", list.join(", ")),
    )
}

fn frequency_branch_count(cfg: &ModelConfig) -> usize {
    (0..4)
        .map(|i| {
            let c = cfg.base_channels << i;
            cfg.stage_depths[i] * (72 * c * c + 8 * c)
        })
        .sum()
}

fn ablation_report() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = acceptance_config(dir.path());
    cfg.epochs = 1;
    let out = cmd_ablate(&cfg).unwrap();
    let expected = frequency_branch_count(&cfg.model);
    let complete = [&out.full.report, &out.ablated.report].iter().all(|r| {
        r.folds.len() == 5
            && r.aggregate.as_ref().is_some_and(|a| a.per_class.len() == 4)
            && r.folds.iter().all(|f| f.per_class.len() == 4)
    });
    let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();
    let (a, b) = (read("full/config.toml"), read("no_fft/config.toml"));
    let differing = a.lines().zip(b.lines()).filter(|(x, y)| x != y).count();
    let table = read("ablation.txt");
    let summary = |r: &sfusnet::eval::FoldReport| {
        let agg = r.aggregate.as_ref().unwrap();
        format!("{} {}", r.model, format_percent(agg.accuracy.mean, agg.accuracy.std))
    };
    verdict(
        complete && differing == 1 && out.parameter_difference() == expected && expected == 1_568_640 && table.contains("w/o FFT"),
        format!(
            "{} vs {}; parameters {} - {} = {} (closed form {expected}); echoed configs differ in {differing} line",
            summary(&out.full.report),
            summary(&out.ablated.report),
            out.full_parameters,
            out.ablated_parameters,
            out.parameter_difference()
        ),
    )
}

fn determinism() -> Verdict {
    let first = desk_run();
    let dir = tempfile::tempdir().unwrap();
    let second = cmd_train(&acceptance_config(dir.path())).unwrap();
    let (a, b) = (first.outcome.fold_accuracies(), second.fold_accuracies());
    let same_confusions = first.outcome.confusions == second.confusions;
    verdict(a == b && same_confusions, format!("run 1 {a:?}, run 2 {b:?}, confusion matrices identical {same_confusions}"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("fft-correctness", fft_correctness),
        ("convolution-correctness", conv_correctness),
        ("gradient-integrity", gradient_integrity),
        ("shape-contract", shape_contract),
        ("dropblock-statistics", dropblock_statistics),
        ("metrics-arithmetic", metrics_arithmetic),
        ("cross-validation-protocol", cross_validation_protocol),
        ("desk-learning", desk_learning),
        ("ablation-report", ablation_report),
        ("determinism", determinism),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _) in &criteria {
            println!("{name}: test");
        }
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        ran += 1;
        failed += usize::from(!v.pass);
        println!("{} {name} ({:.1}s): {}", if v.pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64(), v.detail);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
