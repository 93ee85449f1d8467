use super::conv::{self, ConvGeometry};
use super::norm::{self, BatchNormConfig, RunningStats};
use crate::error::{Error, Result};
use crate::spectral;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeometry },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_statistics: bool },
    Gelu { input: Var, cdf: Vec<T> },
    Linear { input: Var, weight: Var, bias: Var },
    GlobalAvgPool(Var),
    Mask { input: Var, mask: Vec<T> },
    Rfft2 { input: Var, width: usize },
    Irfft2 { input: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<T>, labels: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Output of [`Graph::batch_norm`].
pub struct BatchNormOutput<T> {
    pub output: Var,
    /// Running statistics after this batch (train mode only).
    pub updated: Option<RunningStats<T>>,
}

/// Define-by-run tape of tensor operations supporting reverse-mode differentiation.
///
/// Values are immutable once recorded. Operations append nodes; [`Graph::backward`]
/// walks them in reverse creation order.
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// Cross-correlation with zero padding. `weight` is Cout×Cin×k×k.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.value(input).shape(), self.value(weight).shape(), stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.out_channels] {
                return Err(Error::shape(format!(
                    "conv2d bias must have shape [{}], got {:?}",
                    geom.out_channels,
                    self.value(b).shape()
                )));
            }
        }
        let out = conv::forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), &geom);
        let mut parents = vec![input, weight];
        parents.extend(bias);
        let rg = self.any_grad(&parents);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }, rg))
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first position in row-major order.
    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("maxpool2d")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("maxpool2d needs even extents, got {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let data = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, rg))
    }

    /// Batch normalization. Train mode uses batch statistics and reports the
    /// updated running statistics; eval mode requires `running`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: Option<&RunningStats<T>>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<BatchNormOutput<T>> {
        let batch_statistics = mode == Mode::Train;
        let r = norm::forward(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
            batch_statistics,
            cfg,
        )?;
        let rg = self.any_grad(&[input, gamma, beta]);
        let (xhat, inv_std) = if rg { (r.xhat, r.inv_std) } else { (Vec::new(), Vec::new()) };
        let output = self.push(r.output, Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_statistics }, rg);
        Ok(BatchNormOutput { output, updated: r.updated })
    }

    /// Exact-erf GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let half = T::of(0.5);
        let inv_sqrt2 = T::FRAC_1_SQRT_2();
        let cdf: Vec<T> = x.data().iter().map(|&v| half * (T::one() + (v * inv_sqrt2).erf())).collect();
        let out = Tensor::new(x.shape(), x.data().iter().zip(&cdf).map(|(&v, &p)| v * p).collect())
            .expect("same shape");
        let rg = self.any_grad(&[input]);
        let cdf = if rg { cdf } else { Vec::new() };
        self.push(out, Op::Gelu { input, cdf }, rg)
    }

    /// `x·Wᵀ + b` for x N×F, W K×F, b K.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, f] = self.value(input).dims2("linear input")?;
        let [k, wf] = self.value(weight).dims2("linear weight")?;
        if wf != f || self.value(bias).shape() != [k] {
            return Err(Error::shape(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.value(input).shape(),
                self.value(weight).shape(),
                self.value(bias).shape()
            )));
        }
        let mut out = vec![T::zero(); n * k];
        for row in out.chunks_exact_mut(k) {
            row.copy_from_slice(self.value(bias).data());
        }
        conv::gemm(n, f, k, self.value(input).data(), false, self.value(weight).data(), true, T::one(), &mut out);
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(Tensor::new(&[n, k], out)?, Op::Linear { input, weight, bias }, rg))
    }

    /// N×C×H×W → N×C spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("global_avg_pool")?;
        let inv = T::one() / T::of((h * w) as f64);
        let out: Vec<T> = x.data().chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::GlobalAvgPool(input), rg))
    }

    /// Element-wise multiplication by a fixed (non-differentiable) mask.
    pub fn apply_mask(&mut self, input: Var, mask: Vec<T>) -> Result<Var> {
        let x = self.value(input);
        if mask.len() != x.len() {
            return Err(Error::shape(format!("mask of {} values for tensor {:?}", mask.len(), x.shape())));
        }
        let out = Tensor::new(x.shape(), x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect())?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Mask { input, mask }, rg))
    }

    /// Real 2-D FFT of N×C×H×W, returned packed as N×2C×H×(W/2+1)
    /// (real parts in the first C channels, imaginary parts in the rest).
    pub fn rfft2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let width = x.dims4("rfft2")?[3];
        let out = spectral::rfft2_packed(x)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Rfft2 { input, width }, rg))
    }

    /// Inverse of [`Graph::rfft2`] back to N×C×H×`width`.
    pub fn irfft2(&mut self, input: Var, width: usize) -> Result<Var> {
        let out = spectral::irfft2_packed(self.value(input), width)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Irfft2 { input }, rg))
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let [n, k] = z.dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (i, row) in z.data().chunks_exact(k).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for (j, &v) in row.iter().enumerate() {
                probs[i * k + j] = (v - max).exp() / denom;
            }
            loss += log_denom - (row[labels[i]] - max);
        }
        loss /= T::of(n as f64);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("cross-entropy loss is {loss}")));
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() }, rg))
    }

    /// Reverse-mode sweep from a scalar `root`. Gradients are retained for leaves only.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::shape(format!("backward needs a scalar root, got {:?}", root_value.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &g, &mut grads)?;
        }

        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of node {idx} is not finite")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let t = Tensor::new(self.nodes[v.0].value.shape(), data).expect("gradient shape matches value");
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn propagate(&self, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                self.accumulate(grads, *b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::Conv2d { input, weight, bias, geom } => {
                let need = [
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                    bias.is_some_and(|b| self.requires_grad(b)),
                ];
                let r = conv::backward(g, self.value(*input), self.value(*weight), geom, need);
                if let Some(d) = r.input {
                    self.accumulate(grads, *input, d);
                }
                if let Some(d) = r.weight {
                    self.accumulate(grads, *weight, d);
                }
                if let (Some(b), Some(d)) = (bias, r.bias) {
                    self.accumulate(grads, *b, d);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut d = vec![T::zero(); self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    d[src] += gv;
                }
                self.accumulate(grads, *input, d);
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_statistics } => {
                let r = norm::backward(g, xhat, inv_std, self.value(*gamma).data(), *batch_statistics);
                self.accumulate(grads, *input, r.input);
                self.accumulate(grads, *gamma, r.gamma);
                self.accumulate(grads, *beta, r.beta);
            }
            Op::Gelu { input, cdf } => {
                let x = self.value(*input).data();
                let inv_sqrt_2pi = T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                let half = T::of(0.5);
                let d = x
                    .iter()
                    .zip(cdf)
                    .zip(gd)
                    .map(|((&v, &p), &gv)| gv * (p + v * inv_sqrt_2pi * (-half * v * v).exp()))
                    .collect();
                self.accumulate(grads, *input, d);
            }
            Op::Linear { input, weight, bias } => {
                let [n, f] = self.value(*input).dims2("linear")?;
                let k = self.value(*bias).len();
                if self.requires_grad(*input) {
                    let mut d = vec![T::zero(); n * f];
                    conv::gemm(n, k, f, gd, false, self.value(*weight).data(), false, T::zero(), &mut d);
                    self.accumulate(grads, *input, d);
                }
                if self.requires_grad(*weight) {
                    let mut d = vec![T::zero(); k * f];
                    conv::gemm(k, n, f, gd, true, self.value(*input).data(), false, T::zero(), &mut d);
                    self.accumulate(grads, *weight, d);
                }
                let mut db = vec![T::zero(); k];
                for row in gd.chunks_exact(k) {
                    for (a, &b) in db.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *bias, db);
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.value(*x).dims4("global_avg_pool")?;
                let inv = T::one() / T::of((h * w) as f64);
                let d = gd.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, h * w)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Mask { input, mask } => {
                self.accumulate(grads, *input, gd.iter().zip(mask).map(|(&a, &m)| a * m).collect());
            }
            Op::Rfft2 { input, width } => {
                let d = spectral::rfft2_packed_adjoint(g, *width)?;
                self.accumulate(grads, *input, d.into_data());
            }
            Op::Irfft2 { input } => {
                let d = spectral::irfft2_packed_adjoint(g)?;
                self.accumulate(grads, *input, d.into_data());
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let k = probs.len() / labels.len();
                let scale = gd[0] / T::of(labels.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= scale;
                }
                self.accumulate(grads, *logits, d);
            }
        }
        Ok(())
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
