use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn run1(f: impl FnOnce(&mut Graph<f64>, Var) -> Var, x: Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.constant(x);
    let out = f(&mut g, v);
    g.value(out).clone()
}

fn conv(x: Tensor<f64>, w: Tensor<f64>, b: Option<Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let mut g = Graph::new();
    let (x, w) = (g.constant(x), g.constant(w));
    let b = b.map(|b| g.constant(b));
    let y = g.conv2d(x, w, b, stride, pad).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_identity_kernel_is_identity() {
    let x = Tensor::ones(&[1, 1, 3, 3]);
    let y = conv(x.clone(), t(&[1, 1, 1, 1], vec![1.0]), Some(t(&[1], vec![0.0])), 1, 0);
    assert_eq!(y, x);
}

#[test]
fn conv_same_padding_preserves_shape() {
    let y = conv(Tensor::zeros(&[1, 1, 4, 4]), Tensor::zeros(&[1, 1, 3, 3]), None, 1, 1);
    assert_eq!(y.shape(), &[1, 1, 4, 4]);
}

#[test]
fn conv_ramp_values() {
    // Frozen from a quadruple-loop cross-correlation by hand:
    // Σ_{i,j<3} (4i+j)(3i+j) = 258, shifted windows add Σw=36 per column step and 4·36 per row step.
    let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
    let w = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
    let y = conv(x, w, None, 1, 0);
    assert_eq!(y.data(), &[258.0, 294.0, 402.0, 438.0]);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(crate::Error::Shape(_))));
}

#[test]
fn maxpool_examples() {
    let y = run1(|g, v| g.max_pool2d(v).unwrap(), t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    assert_eq!(y.data(), &[4.0]);
    let y = run1(|g, v| g.max_pool2d(v).unwrap(), Tensor::full(&[1, 2, 4, 4], 1.5));
    assert_eq!(y, Tensor::full(&[1, 2, 2, 2], 1.5));
    let mut g = Graph::<f64>::new();
    let v = g.constant(Tensor::zeros(&[1, 1, 3, 4]));
    assert!(g.max_pool2d(v).is_err());
}

#[test]
fn maxpool_ties_route_gradient_to_first_position() {
    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[1, 1, 2, 2], 3.0));
    let y = g.max_pool2d(x).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_matches_window_scan() {
    let x = Tensor::<f64>::uniform(&[1, 1, 4, 4], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let y = run1(|g, v| g.max_pool2d(v).unwrap(), x.clone());
    let d = x.data();
    for oy in 0..2 {
        for ox in 0..2 {
            let mut m = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    m = m.max(d[(2 * oy + dy) * 4 + 2 * ox + dx]);
                }
            }
            assert_eq!(y.data()[oy * 2 + ox], m);
        }
    }
}

fn bn(x: Tensor<f64>, gamma: Vec<f64>, beta: Vec<f64>) -> (Tensor<f64>, RunningStats<f64>) {
    let c = gamma.len();
    let mut g = Graph::new();
    let x = g.constant(x);
    let ga = g.constant(t(&[c], gamma));
    let be = g.constant(t(&[c], beta));
    let out = g.batch_norm(x, ga, be, None, Mode::Train, BatchNormConfig::default()).unwrap();
    (g.value(out.output).clone(), out.updated.unwrap())
}

#[test]
fn batchnorm_unit_variance_pair() {
    let (y, stats) = bn(t(&[1, 1, 1, 2], vec![-1.0, 1.0]), vec![1.0], vec![0.0]);
    let e = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y.data()[0] + e).abs() < 1e-15 && (y.data()[1] - e).abs() < 1e-15);
    // EMA from (0, 1): mean stays 0, unbiased variance of {−1, 1} is 2.
    assert!((stats.mean[0]).abs() < 1e-15);
    assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let x = Tensor::uniform(&[2, 2, 3, 3], -2.0, 2.0, &mut ChaCha8Rng::seed_from_u64(9));
    let (y, _) = bn(x, vec![0.0, 0.0], vec![0.25, -1.0]);
    for (i, v) in y.data().iter().enumerate() {
        let expect = if (i / 9) % 2 == 0 { 0.25 } else { -1.0 };
        assert_eq!(*v, expect);
    }
}

#[test]
fn batchnorm_output_moments_match_affine_parameters() {
    let x = Tensor::randn(&[4, 3, 5, 5], 3.0, &mut ChaCha8Rng::seed_from_u64(11));
    let (gamma, beta) = (vec![0.5, 2.0, -1.5], vec![1.0, 0.0, -3.0]);
    let (y, _) = bn(x, gamma.clone(), beta.clone());
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| y.data()[(n * 3 + c) * 25..][..25].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((mean - beta[c]).abs() < 1e-6);
        // eps shrinks the variance by var/(var+eps); inputs have variance ≈ 9.
        assert!((var - gamma[c] * gamma[c]).abs() < 1e-5 * gamma[c] * gamma[c] + 1e-6, "{var}");
    }
}

#[test]
fn batchnorm_eval_without_stats_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let ga = g.constant(Tensor::ones(&[1]));
    let be = g.constant(Tensor::zeros(&[1]));
    assert!(g.batch_norm(x, ga, be, None, Mode::Eval, BatchNormConfig::default()).is_err());
    // Train mode with a single value per channel is also rejected.
    let x = g.constant(Tensor::zeros(&[1, 1, 1, 1]));
    assert!(g.batch_norm(x, ga, be, None, Mode::Train, BatchNormConfig::default()).is_err());
}

/// erf via its Maclaurin series, accurate for |x| ≲ 3.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x;
    for n in 0..60 {
        sum += term / (2 * n + 1) as f64;
        term *= -x * x / (n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn gelu_reference_values() {
    let y = run1(|g, v| g.gelu(v), t(&[3], vec![0.0, 10.0, 1.0]));
    assert_eq!(y.data()[0], 0.0);
    assert!((y.data()[1] - 10.0).abs() < 1e-9);
    let oracle = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
    assert!((y.data()[2] - oracle).abs() < 1e-12);
    assert!((y.data()[2] - 0.841345).abs() < 1e-6);
}

#[test]
fn linear_examples() {
    let x = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(eye), g.constant(Tensor::zeros(&[3])));
    let y = g.linear(xv, wv, bv).unwrap();
    assert_eq!(g.value(y), &x);

    let b = t(&[4], vec![1.0, -2.0, 3.0, 0.5]);
    let (wv, bv) = (g.constant(Tensor::zeros(&[4, 3])), g.constant(b.clone()));
    let y = g.linear(xv, wv, bv).unwrap();
    assert_eq!(&g.value(y).data()[4..], b.data());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = Tensor::<f64>::uniform(&[4, 3], -1.0, 1.0, &mut rng);
    let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
    let y = g.linear(xv, wv, bv).unwrap();
    for n in 0..2 {
        for k in 0..4 {
            let dot: f64 = (0..3).map(|f| x.data()[n * 3 + f] * w.data()[k * 3 + f]).sum();
            assert!((g.value(y).data()[n * 4 + k] - dot - b.data()[k]).abs() < 1e-14);
        }
    }
    let bad = g.constant(Tensor::zeros(&[4, 2]));
    assert!(g.linear(xv, bad, bv).is_err());
}

#[test]
fn global_avg_pool_examples() {
    let y = run1(|g, v| g.global_avg_pool(v).unwrap(), t(&[1, 1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]));
    assert_eq!(y.data(), &[3.0]);
    let y = run1(|g, v| g.global_avg_pool(v).unwrap(), Tensor::full(&[2, 3, 4, 5], -0.5));
    assert_eq!(y, Tensor::full(&[2, 3], -0.5));
}

fn ce(logits: Tensor<f64>, labels: &[usize]) -> f64 {
    let mut g = Graph::new();
    let z = g.constant(logits);
    let l = g.softmax_cross_entropy(z, labels).unwrap();
    g.value(l).item()
}

#[test]
fn cross_entropy_examples() {
    assert!((ce(Tensor::zeros(&[1, 4]), &[2]) - 4f64.ln()).abs() < 1e-15);
    assert!(ce(t(&[1, 4], vec![0.0, 1000.0, 0.0, 0.0]), &[1]).abs() < 1e-12);

    let z = vec![0.3, -1.2, 2.0, 0.7, -0.4, 0.9, 0.1, -2.2];
    // Direct log-sum-exp without max subtraction (safe at these magnitudes).
    let direct = |row: &[f64], l: usize| row.iter().map(|v| v.exp()).sum::<f64>().ln() - row[l];
    let expect = (direct(&z[..4], 2) + direct(&z[4..], 0)) / 2.0;
    assert!((ce(t(&[2, 4], z), &[2, 0]) - expect).abs() < 1e-14);
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[2, 3]));
    assert!(g.softmax_cross_entropy(z, &[0, 3]).is_err());
    assert!(g.softmax_cross_entropy(z, &[0]).is_err());
}

#[test]
fn cross_entropy_gradient_rows_sum_to_zero() {
    let mut g = Graph::new();
    let z = g.param(Tensor::uniform(&[3, 5], -3.0, 3.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let l = g.softmax_cross_entropy(z, &[4, 0, 2]).unwrap();
    let grads = g.backward(l).unwrap();
    for row in grads.get(z).unwrap().data().chunks(5) {
        assert!(row.iter().sum::<f64>().abs() < 1e-15);
    }
}

#[test]
fn grad_check_sum_and_square() {
    let x = t(&[5], vec![0.3, -1.0, 2.0, 4.5, -0.7]);
    // Linear in x, so a large step has no truncation error and little cancellation.
    let r = grad_check(|g, v| Ok(g.sum(v)), &x, 1e-3).unwrap();
    assert!(r.max_relative_error <= 1e-10, "{r:?}");

    let x = t(&[2], vec![1.0, 2.0]);
    let f = |g: &mut Graph<f64>, v: Var| {
        let sq = g.mul(v, v)?;
        Ok(g.sum(sq))
    };
    let r = grad_check(f, &x, 1e-6).unwrap();
    assert!(r.max_relative_error <= 1e-6);
    let mut g = Graph::new();
    let v = g.param(x);
    let y = f(&mut g, v).unwrap();
    assert_eq!(g.backward(y).unwrap().get(v).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn grad_check_requires_scalar_output() {
    let x = Tensor::<f64>::ones(&[3]);
    assert!(grad_check(|_, v| Ok(v), &x, 1e-6).is_err());
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::ones(&[2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.param(Tensor::ones(&[2]));
    let b = g.constant(Tensor::full(&[2], 3.0));
    let p = g.mul(a, b).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[3.0, 3.0]);
    assert!(grads.get(b).is_none());
}
