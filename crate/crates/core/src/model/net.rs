use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::ConvFftBlock;
use super::config::{ModelConfig, INPUT_CHANNELS};
use super::dropblock;
use super::layers::{BnRegistry, ConvBn, Ctx, Head};
use super::params::ParamStore;
use crate::autodiff::{BatchNormConfig, Graph, Mode, RunningStats, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Max-pool 2×2 then point-wise conv doubling the channels.
#[derive(Debug, Clone)]
struct Downsample {
    project: ConvBn,
}

#[derive(Debug, Clone)]
pub struct SfusNet<T: Scalar = f64> {
    config: ModelConfig,
    params: ParamStore<T>,
    bn: BnRegistry<T>,
    bn_config: BatchNormConfig,
    stem: ConvBn,
    stages: Vec<Vec<ConvFftBlock>>,
    downsamples: Vec<Downsample>,
    head: Head,
}

/// Result of [`SfusNet::forward`].
pub struct ForwardOutput<T> {
    pub logits: Var,
    /// Stem output followed by the output of each of the four stages.
    pub taps: Vec<Var>,
    /// Running statistics to install after a train-mode pass.
    pub bn_updates: Vec<(usize, RunningStats<T>)>,
}

/// Builds the network with He-normal weights drawn from `init_seed`.
pub fn build_model<T: Scalar>(config: &ModelConfig, init_seed: u64) -> Result<SfusNet<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut params = ParamStore::new();
    let mut bn = BnRegistry::new();
    let base = config.base_channels;

    let stem = ConvBn::new("stem", INPUT_CHANNELS, base, 3, 2, &mut params, &mut bn, &mut rng);
    let mut stages = Vec::with_capacity(4);
    let mut downsamples = Vec::with_capacity(3);
    for (i, &depth) in config.stage_depths.iter().enumerate() {
        let c = config.stage_channels(i);
        let blocks = (0..depth)
            .map(|j| {
                ConvFftBlock::new(&format!("stage{}.{j}", i + 1), c, config.fft_branch_enabled, &mut params, &mut bn, &mut rng)
            })
            .collect();
        stages.push(blocks);
        if i < 3 {
            let project = ConvBn::new(&format!("down{}", i + 1), c, 2 * c, 1, 1, &mut params, &mut bn, &mut rng);
            downsamples.push(Downsample { project });
        }
    }
    let head = Head::new(config.stage_channels(3), config.num_classes, &mut params, &mut rng);
    Ok(SfusNet {
        config: config.clone(),
        params,
        bn,
        bn_config: BatchNormConfig::default(),
        stem,
        stages,
        downsamples,
        head,
    })
}

/// Sum of all parameter tensor sizes.
pub fn count_parameters<T: Scalar>(model: &SfusNet<T>) -> usize {
    model.params.count()
}

impl<T: Scalar> SfusNet<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.bn.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.bn.stats
    }

    pub fn running_stat_names(&self) -> &[String] {
        &self.bn.names
    }

    pub fn stage_blocks(&self, stage: usize) -> &[ConvFftBlock] {
        &self.stages[stage]
    }

    /// Places every parameter on `graph` as a leaf, in registration order.
    pub fn bind(&self, graph: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.params.values().iter().map(|p| graph.leaf(p.clone(), requires_grad)).collect()
    }

    /// stem → stage1 → down → stage2 → DropBlock → down → stage3 → DropBlock →
    /// down → stage4 → global average pool → linear.
    ///
    /// `params` must come from [`SfusNet::bind`] (or match it in order and shape).
    /// Running statistics are not modified; train-mode updates are returned.
    pub fn forward(&self, graph: &mut Graph<T>, params: &[Var], input: Var, mode: Mode, dropblock_seed: u64) -> Result<ForwardOutput<T>> {
        let [_, c, h, w] = graph.value(input).dims4("SfusNet input")?;
        let s = self.config.input_size;
        if c != INPUT_CHANNELS || h != s || w != s {
            return Err(Error::shape(format!(
                "model expects N×{INPUT_CHANNELS}×{s}×{s} input, got {:?}",
                graph.value(input).shape()
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::shape(format!("{} bound parameters, model has {}", params.len(), self.params.len())));
        }
        let mut cx = Ctx {
            graph,
            params,
            running: &self.bn.stats,
            mode,
            bn: self.bn_config,
            rng: ChaCha8Rng::seed_from_u64(dropblock_seed),
            bn_updates: Vec::new(),
        };

        let mut taps = Vec::with_capacity(5);
        let x = self.stem.forward(&mut cx, input)?;
        let mut x = cx.graph.gelu(x);
        taps.push(x);
        for (i, blocks) in self.stages.iter().enumerate() {
            if i > 0 {
                let pooled = cx.graph.max_pool2d(x)?;
                x = self.downsamples[i - 1].project.forward(&mut cx, pooled)?;
            }
            for block in blocks {
                x = block.forward(&mut cx, x)?;
            }
            taps.push(x);
            if (i == 1 || i == 2) && mode == Mode::Train && self.config.dropblock_drop_rate > 0.0 {
                let shape = cx.graph.value(x).dims4("dropblock")?;
                let mask = dropblock::sample_mask(shape, self.config.dropblock_block_size, self.config.dropblock_drop_rate, &mut cx.rng)?;
                x = cx.graph.apply_mask(x, mask)?;
            }
        }
        let logits = self.head.forward(&mut cx, x)?;
        Ok(ForwardOutput { logits, taps, bn_updates: cx.bn_updates })
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<(usize, RunningStats<T>)>) {
        for (i, stats) in updates {
            self.bn.stats[i] = stats;
        }
    }

    /// Eval-mode logits for a batch.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, &params, x, Mode::Eval, 0)?;
        Ok(g.value(out.logits).clone())
    }

    /// Eval-mode predicted class per sample.
    pub fn classify(&self, input: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.predict(input)?;
        let k = self.config.num_classes;
        Ok(logits
            .data()
            .chunks_exact(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect())
    }

    /// Same architecture and state in another precision.
    pub fn cast<U: Scalar>(&self) -> SfusNet<U> {
        let mut params = ParamStore::new();
        for (name, v) in self.params.names().iter().zip(self.params.values()) {
            params.add(name.clone(), v.cast());
        }
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        SfusNet {
            config: self.config.clone(),
            params,
            bn: BnRegistry {
                names: self.bn.names.clone(),
                stats: self.bn.stats.iter().map(|s| RunningStats { mean: conv(&s.mean), var: conv(&s.var) }).collect(),
            },
            bn_config: self.bn_config,
            stem: self.stem.clone(),
            stages: self.stages.clone(),
            downsamples: self.downsamples.clone(),
            head: self.head.clone(),
        }
    }
}
