//! The full encoder-decoder: init conv, five encoder stages with strided
//! downsampling, the frequency bottleneck, five decoder stages with
//! upsampling and skip fusion, and a pointwise head producing logits.

use serde::{Deserialize, Serialize};
use skinmamba_tensor::{Conv2dSpec, Param, Real, Tape, Tensor, Var};

use crate::blocks::{BlockConfig, DecoderBlock, EncoderBlock, Fbgm, MixerRegistry, SkipMode};
use crate::ctx::{Ctx, TraceEvent};
use crate::error::{config, shape, Result};
use crate::init::Init;
use crate::layers::Conv2d;
use crate::module::{impl_module, join, Module};

pub const NUM_STAGES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub num_stages: usize,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_size: [usize; 2],
    pub block: BlockConfig,
    pub skip_mode: SkipMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            num_stages: NUM_STAGES,
            num_classes: 1,
            input_channels: 3,
            input_size: [224, 224],
            block: BlockConfig::default(),
            skip_mode: SkipMode::Concat,
        }
    }
}

/// `(channels, height, width)` at every stage boundary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageShapeLedger {
    /// Encoder outputs before downsampling, shallowest first.
    pub encoder: Vec<[usize; 3]>,
    pub bottleneck: [usize; 3],
    /// Decoder outputs, deepest first.
    pub decoder: Vec<[usize; 3]>,
}

impl NetworkConfig {
    pub fn divisor(&self) -> usize {
        1 << self.num_stages
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_stages != NUM_STAGES {
            return Err(config(format!("num_stages must be {NUM_STAGES}, got {}", self.num_stages)));
        }
        if self.base_channels == 0 || self.num_classes == 0 || self.input_channels == 0 {
            return Err(config("base_channels, num_classes and input_channels must be positive"));
        }
        let d = self.divisor();
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(config(format!("input size {h}x{w} must be a positive multiple of {d} in both dimensions")));
        }
        Ok(())
    }

    /// Stage shapes implied by the configuration alone.
    pub fn expected_ledger(&self) -> StageShapeLedger {
        let [h, w] = self.input_size;
        let c = self.base_channels;
        let at = |i: usize| [c << i, h >> i, w >> i];
        StageShapeLedger {
            encoder: (0..self.num_stages).map(at).collect(),
            bottleneck: at(self.num_stages),
            decoder: (0..self.num_stages).rev().map(at).collect(),
        }
    }
}

/// One resolution level: its encoder block and downsampling, and the
/// matching upsampling and decoder block.
pub struct Stage<T: Real> {
    pub encoder: EncoderBlock<T>,
    pub down: Conv2d<T>,
    pub up: Conv2d<T>,
    pub decoder: DecoderBlock<T>,
}

impl_module!(Stage { encoder, down, up, decoder });

pub struct Network<T: Real> {
    config: NetworkConfig,
    pub init: Conv2d<T>,
    pub stages: Vec<Stage<T>>,
    pub bottleneck: Option<Fbgm<T>>,
    pub head: Conv2d<T>,
}

impl<T: Real> Module<T> for Network<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        self.init.visit(&join(prefix, "init"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stage{}", i + 1)), f);
        }
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.init.visit_mut(&join(prefix, "init"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stage{}", i + 1)), f);
        }
        self.bottleneck.visit_mut(&join(prefix, "bottleneck"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<T: Real> Network<T> {
    pub fn build(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        Self::build_with_registry(cfg, seed, &MixerRegistry::with_builtins())
    }

    pub fn build_with_registry(cfg: &NetworkConfig, seed: u64, registry: &MixerRegistry<T>) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init::new(seed);
        let c = cfg.base_channels;
        let stem = Conv2d::same(&mut init, cfg.input_channels, c, 3);
        let mut stages = Vec::with_capacity(cfg.num_stages);
        for i in 0..cfg.num_stages {
            let width = c << i;
            let block = cfg.block.with_channels(width);
            stages.push(Stage {
                encoder: EncoderBlock::new(&mut init, &block, registry)?,
                down: Conv2d::new(&mut init, width, 2 * width, 2, Conv2dSpec::strided(2)),
                up: Conv2d::pointwise(&mut init, 2 * width, width),
                decoder: DecoderBlock::new(&mut init, &block, cfg.skip_mode, registry)?,
            });
        }
        let deepest = c << cfg.num_stages;
        let bottleneck =
            if cfg.block.use_fbgm { Some(Fbgm::new(&mut init, deepest, cfg.block.csffl_expansion)?) } else { None };
        let head = Conv2d::pointwise(&mut init, c, cfg.num_classes);
        Ok(Self { config: cfg.clone(), init: stem, stages, bottleneck, head })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_input(&self, x: &[usize]) -> Result<()> {
        let d = self.config.divisor();
        match x {
            [_, c, h, w] if *c == self.config.input_channels && *h > 0 && *w > 0 && h % d == 0 && w % d == 0 => Ok(()),
            s => Err(shape(format!(
                "network expects (B, {}, H, W) with H and W positive multiples of {d}, got {s:?}",
                self.config.input_channels
            ))),
        }
    }

    /// Logits of shape `(B, num_classes, H, W)`.
    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        self.check_input(x.shape())?;
        let mut h = self.init.forward(x, ctx)?;
        let mut skips = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let (skip, out) = stage.encoder.forward(&h, ctx)?;
            ctx.trace(format!("encoder{}", i + 1), skip.shape());
            skips.push(skip);
            h = stage.down.forward(&out, ctx)?;
        }
        if let Some(b) = &self.bottleneck {
            h = b.forward(&h, ctx)?;
        }
        ctx.trace("bottleneck", h.shape());
        let n = self.stages.len();
        for j in 1..=n {
            let level = n + 1 - j;
            let stage = &self.stages[level - 1];
            let up = stage.up.forward(&h.upsample_nearest2x(), ctx)?;
            ctx.trace(format!("decoder{j}.skip_from.encoder{level}"), skips[level - 1].shape());
            h = stage.decoder.forward(&up, &skips[level - 1], ctx)?;
            ctx.trace(format!("decoder{j}"), h.shape());
        }
        let logits = self.head.forward(&h, ctx)?;
        ctx.trace("output", logits.shape());
        Ok(logits)
    }

    /// Run one traced evaluation pass on zeros and read back the stage
    /// shapes.
    pub fn trace_ledger(&self, height: usize, width: usize) -> Result<(StageShapeLedger, Vec<TraceEvent>)> {
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape).with_trace();
        let x = tape.constant(Tensor::zeros([1, self.config.input_channels, height, width]));
        self.forward(&x, &ctx)?;
        let events = ctx.events();
        let chw = |tag: &str| -> Result<[usize; 3]> {
            let s = events
                .iter()
                .find(|e| e.tag == tag)
                .ok_or_else(|| shape(format!("no trace event {tag}")))?
                .shape
                .clone();
            Ok([s[1], s[2], s[3]])
        };
        let n = self.stages.len();
        let ledger = StageShapeLedger {
            encoder: (1..=n).map(|i| chw(&format!("encoder{i}"))).collect::<Result<_>>()?,
            bottleneck: chw("bottleneck")?,
            decoder: (1..=n).map(|j| chw(&format!("decoder{j}"))).collect::<Result<_>>()?,
        };
        Ok((ledger, events))
    }
}
