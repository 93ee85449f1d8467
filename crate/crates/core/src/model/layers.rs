//! Building blocks shared by the stem, stages, downsamplers and head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::autodiff::{BatchNormConfig, Graph, Mode, RunningStats, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// State threaded through one forward pass.
pub(crate) struct Ctx<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    pub params: &'a [Var],
    pub running: &'a [RunningStats<T>],
    pub mode: Mode,
    pub bn: BatchNormConfig,
    pub rng: ChaCha8Rng,
    pub bn_updates: Vec<(usize, RunningStats<T>)>,
}

impl<T: Scalar> Ctx<'_, T> {
    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.index()]
    }
}

/// Batch-norm running statistics registered alongside parameters.
#[derive(Debug, Clone)]
pub struct BnRegistry<T> {
    pub names: Vec<String>,
    pub stats: Vec<RunningStats<T>>,
}

impl<T: Scalar> BnRegistry<T> {
    pub fn new() -> Self {
        BnRegistry { names: Vec::new(), stats: Vec::new() }
    }

    fn add(&mut self, name: String, channels: usize) -> usize {
        self.names.push(name);
        self.stats.push(RunningStats::fresh(channels));
        self.stats.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

impl BatchNorm {
    pub fn new<T: Scalar>(name: &str, channels: usize, params: &mut ParamStore<T>, bn: &mut BnRegistry<T>) -> Self {
        BatchNorm {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            stats: bn.add(name.to_string(), channels),
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (cx.p(self.gamma), cx.p(self.beta));
        let running = &cx.running[self.stats];
        let out = cx.graph.batch_norm(x, gamma, beta, Some(running), cx.mode, cx.bn)?;
        if let Some(updated) = out.updated {
            cx.bn_updates.push((self.stats, updated));
        }
        Ok(out.output)
    }
}

/// Bias-free convolution followed by batch norm.
#[derive(Debug, Clone)]
pub struct ConvBn {
    weight: ParamId,
    stride: usize,
    padding: usize,
    norm: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        params: &mut ParamStore<T>,
        bn: &mut BnRegistry<T>,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_he_normal(
            format!("{name}.conv.weight"),
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kernel * kernel,
            rng,
        );
        let norm = BatchNorm::new(&format!("{name}.bn"), out_channels, params, bn);
        ConvBn { weight, stride, padding: kernel / 2, norm }
    }

    pub(crate) fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.p(self.weight);
        let y = cx.graph.conv2d(x, w, None, self.stride, self.padding)?;
        self.norm.forward(cx, y)
    }
}

/// Global average pool and a single affine layer.
#[derive(Debug, Clone)]
pub struct Head {
    weight: ParamId,
    bias: ParamId,
}

impl Head {
    pub fn new<T: Scalar, R: Rng + ?Sized>(features: usize, classes: usize, params: &mut ParamStore<T>, rng: &mut R) -> Self {
        Head {
            weight: params.add_he_normal("head.weight", &[classes, features], features, rng),
            bias: params.add("head.bias", Tensor::zeros(&[classes])),
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let pooled = cx.graph.global_avg_pool(x)?;
        let (w, b) = (cx.p(self.weight), cx.p(self.bias));
        cx.graph.linear(pooled, w, b)
    }
}
