use rand::Rng;

use super::layers::{BnRegistry, ConvBn, Ctx};
use super::params::ParamStore;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Three-branch unit: `GELU(x + spatial(x) + frequency(x))`.
///
/// * spatial: PW-conv → BN → 3×3 conv → BN → GELU → PW-conv → BN
/// * frequency: rfft2 → pack re/im as 2C channels → 3×3 conv → BN → GELU →
///   3×3 conv → BN → unpack → irfft2
/// * identity: no parameters
///
/// All branches keep C channels and the H×W extent.
#[derive(Debug, Clone)]
pub struct ConvFftBlock {
    channels: usize,
    pw_in: ConvBn,
    conv3: ConvBn,
    pw_out: ConvBn,
    frequency: Option<[ConvBn; 2]>,
}

impl ConvFftBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        with_frequency: bool,
        params: &mut ParamStore<T>,
        bn: &mut BnRegistry<T>,
        rng: &mut R,
    ) -> Self {
        let c = channels;
        let pw_in = ConvBn::new(&format!("{name}.spatial.pw_in"), c, c, 1, 1, params, bn, rng);
        let conv3 = ConvBn::new(&format!("{name}.spatial.conv3"), c, c, 3, 1, params, bn, rng);
        let pw_out = ConvBn::new(&format!("{name}.spatial.pw_out"), c, c, 1, 1, params, bn, rng);
        let frequency = with_frequency.then(|| {
            [
                ConvBn::new(&format!("{name}.frequency.conv_a"), 2 * c, 2 * c, 3, 1, params, bn, rng),
                ConvBn::new(&format!("{name}.frequency.conv_b"), 2 * c, 2 * c, 3, 1, params, bn, rng),
            ]
        });
        ConvFftBlock { channels, pw_in, conv3, pw_out, frequency }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn has_frequency_branch(&self) -> bool {
        self.frequency.is_some()
    }

    pub(crate) fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let [_, c, _, w] = cx.graph.value(x).dims4("Conv-FFT block")?;
        if c != self.channels {
            return Err(Error::shape(format!("block expects {} channels, got {c}", self.channels)));
        }

        let s = self.pw_in.forward(cx, x)?;
        let s = self.conv3.forward(cx, s)?;
        let s = cx.graph.gelu(s);
        let s = self.pw_out.forward(cx, s)?;
        let mut fused = cx.graph.add(x, s)?;

        if let Some([conv_a, conv_b]) = &self.frequency {
            let f = cx.graph.rfft2(x)?;
            let f = conv_a.forward(cx, f)?;
            let f = cx.graph.gelu(f);
            let f = conv_b.forward(cx, f)?;
            let f = cx.graph.irfft2(f, w)?;
            fused = cx.graph.add(fused, f)?;
        }
        Ok(cx.graph.gelu(fused))
    }
}

/// A single [`ConvFftBlock`] with its own parameters, for isolated use and testing.
#[derive(Debug, Clone)]
pub struct ConvFftUnit<T: Scalar = f64> {
    block: ConvFftBlock,
    params: ParamStore<T>,
    bn: BnRegistry<T>,
}

impl<T: Scalar> ConvFftUnit<T> {
    pub fn new(channels: usize, with_frequency: bool, init_seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamStore::new();
        let mut bn = BnRegistry::new();
        let block = ConvFftBlock::new("block", channels, with_frequency, &mut params, &mut bn, &mut rng);
        ConvFftUnit { block, params, bn }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn block(&self) -> &ConvFftBlock {
        &self.block
    }

    pub fn bind(&self, graph: &mut crate::autodiff::Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.params.values().iter().map(|p| graph.leaf(p.clone(), requires_grad)).collect()
    }

    pub fn forward(
        &self,
        graph: &mut crate::autodiff::Graph<T>,
        params: &[Var],
        x: Var,
        mode: crate::autodiff::Mode,
    ) -> Result<Var> {
        use rand::SeedableRng;
        let mut cx = Ctx {
            graph,
            params,
            running: &self.bn.stats,
            mode,
            bn: crate::autodiff::BatchNormConfig::default(),
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(0),
            bn_updates: Vec::new(),
        };
        self.block.forward(&mut cx, x)
    }
}
