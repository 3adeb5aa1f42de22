//! Token mixers: the global-context stage of a residual state-space block.
//! Variants are constructed by name through a [`MixerRegistry`].

use std::collections::BTreeMap;
use std::rc::Rc;

use skinmamba_tensor::{Real, Var};

use super::vssb::Vssb;
use super::BlockConfig;
use crate::ctx::Ctx;
use crate::error::{config, Result};
use crate::init::Init;
use crate::layers::{Conv2d, LayerNorm2d};
use crate::module::{impl_module, Module};
use crate::scan_core::ScanDirection;

/// Shape-preserving `(B, C, H, W)` map that normalizes its own input.
pub trait TokenMixer<T: Real>: Module<T> + Send + Sync {
    fn name(&self) -> &'static str;

    fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>>;

    /// Zero the final affine layer so the mixer outputs exactly zero.
    fn zero_output(&mut self);
}

pub type MixerBuilder<T> = fn(&BlockConfig, &mut Init) -> Result<Box<dyn TokenMixer<T>>>;

pub const VSSB: &str = "vssb";
pub const CONV3X3: &str = "conv3x3";
pub const SELF_ATTENTION: &str = "self_attention";

/// Name-to-constructor table for token mixers.
pub struct MixerRegistry<T: Real> {
    builders: BTreeMap<String, MixerBuilder<T>>,
}

impl<T: Real> Default for MixerRegistry<T> {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl<T: Real> MixerRegistry<T> {
    pub fn empty() -> Self {
        Self { builders: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(VSSB, |cfg, init| Ok(Box::new(Vssb::new(init, cfg)?)));
        r.register(CONV3X3, |cfg, init| Ok(Box::new(ConvMixer::new(init, cfg.channels))));
        r.register(SELF_ATTENTION, |cfg, init| Ok(Box::new(AttentionMixer::new(init, cfg.channels))));
        r
    }

    /// Returns the builder previously registered under `name`, if any.
    pub fn register(&mut self, name: &str, builder: MixerBuilder<T>) -> Option<MixerBuilder<T>> {
        self.builders.insert(name.to_string(), builder)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.builders.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, cfg: &BlockConfig, init: &mut Init) -> Result<Box<dyn TokenMixer<T>>> {
        let builder = self.builders.get(&cfg.variant).ok_or_else(|| {
            config(format!("unknown block variant '{}'; registered: {}", cfg.variant, self.names().join(", ")))
        })?;
        builder(cfg, init)
    }
}

/// Normalized 3x3 convolution with matched channels.
pub struct ConvMixer<T: Real> {
    pub norm: LayerNorm2d<T>,
    pub conv: Conv2d<T>,
}

impl_module!(ConvMixer { norm, conv });

impl<T: Real> ConvMixer<T> {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        Self { norm: LayerNorm2d::new(channels), conv: Conv2d::same(init, channels, channels, 3) }
    }
}

impl<T: Real> TokenMixer<T> for ConvMixer<T> {
    fn name(&self) -> &'static str {
        CONV3X3
    }

    fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        self.conv.forward(&self.norm.forward(x, ctx)?, ctx)
    }

    fn zero_output(&mut self) {
        self.conv.zero_all();
    }
}

/// Single-head scaled dot-product attention over row-major pixel tokens,
/// head size equal to the channel count.
pub struct AttentionMixer<T: Real> {
    pub norm: LayerNorm2d<T>,
    pub query: Conv2d<T>,
    pub key: Conv2d<T>,
    pub value: Conv2d<T>,
    pub out_proj: Conv2d<T>,
}

impl_module!(AttentionMixer { norm, query, key, value, out_proj });

impl<T: Real> AttentionMixer<T> {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        Self {
            norm: LayerNorm2d::new(channels),
            query: Conv2d::pointwise(init, channels, channels),
            key: Conv2d::pointwise(init, channels, channels),
            value: Conv2d::pointwise(init, channels, channels),
            out_proj: Conv2d::pointwise(init, channels, channels),
        }
    }
}

impl<T: Real> TokenMixer<T> for AttentionMixer<T> {
    fn name(&self) -> &'static str {
        SELF_ATTENTION
    }

    fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let n = self.norm.forward(x, ctx)?;
        let (_, _, h, w) = n.value().dims4();
        let order: Rc<[usize]> = ScanDirection::RowForward.order(h, w).into();
        let tokens =
            |proj: &Conv2d<T>| -> Result<Var<'t, T>> { Ok(proj.forward(&n, ctx)?.to_sequence(Rc::clone(&order))) };
        let attended = tokens(&self.query)?.attention(&tokens(&self.key)?, &tokens(&self.value)?);
        self.out_proj.forward(&attended.from_sequence(order, h, w), ctx)
    }

    fn zero_output(&mut self) {
        self.out_proj.zero_all();
    }
}
