use serde::{Deserialize, Serialize};
use skinmamba_tensor::{Real, Var};

use super::mixer::MixerRegistry;
use super::srssb::Srssb;
use super::BlockConfig;
use crate::ctx::Ctx;
use crate::error::{shape, Result};
use crate::init::Init;
use crate::layers::{BatchNorm2d, Conv2d};
use crate::module::impl_module;

/// How a decoder stage fuses the upsampled path with the encoder skip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    Add,
    #[default]
    Concat,
}

/// `relu(bn(conv3x3(srssb(x))))`; the result is both the skip and the
/// output (downsampling happens outside).
pub struct EncoderBlock<T: Real> {
    pub srssb: Option<Srssb<T>>,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl_module!(EncoderBlock { srssb, conv, bn });

impl<T: Real> EncoderBlock<T> {
    pub fn new(init: &mut Init, cfg: &BlockConfig, registry: &MixerRegistry<T>) -> Result<Self> {
        let c = cfg.channels;
        let srssb = if cfg.use_srssb { Some(Srssb::new(init, cfg, registry)?) } else { None };
        Ok(Self { srssb, conv: Conv2d::same(init, c, c, 3), bn: BatchNorm2d::new(c) })
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let mixed = match &self.srssb {
            Some(s) => s.forward(x, ctx)?,
            None => x.clone(),
        };
        let y = self.bn.forward(&self.conv.forward(&mixed, ctx)?, ctx)?.relu();
        Ok((y.clone(), y))
    }
}

/// Fuses the upsampled path with the skip, then `relu(bn(conv3x3(.)))`
/// back to the stage width, then the residual state-space block.
pub struct DecoderBlock<T: Real> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub srssb: Option<Srssb<T>>,
    mode: SkipMode,
}

impl_module!(DecoderBlock { conv, bn, srssb });

impl<T: Real> DecoderBlock<T> {
    pub fn new(init: &mut Init, cfg: &BlockConfig, mode: SkipMode, registry: &MixerRegistry<T>) -> Result<Self> {
        let c = cfg.channels;
        let fused = match mode {
            SkipMode::Concat => 2 * c,
            SkipMode::Add => c,
        };
        let conv = Conv2d::same(init, fused, c, 3);
        let srssb = if cfg.use_srssb { Some(Srssb::new(init, cfg, registry)?) } else { None };
        Ok(Self { conv, bn: BatchNorm2d::new(c), srssb, mode })
    }

    pub fn forward<'t>(&self, up: &Var<'t, T>, skip: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        if up.shape() != skip.shape() {
            return Err(shape(format!("cannot fuse upsampled {:?} with skip {:?}", up.shape(), skip.shape())));
        }
        let fused = match self.mode {
            SkipMode::Concat => Var::concat_channels(&[up, skip]),
            SkipMode::Add => up.add(skip),
        };
        let y = self.bn.forward(&self.conv.forward(&fused, ctx)?, ctx)?.relu();
        match &self.srssb {
            Some(s) => s.forward(&y, ctx),
            None => Ok(y),
        }
    }
}

pub fn encoder_block_forward<'t, T: Real>(
    x: &Var<'t, T>,
    block: &EncoderBlock<T>,
    ctx: &Ctx<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    block.forward(x, ctx)
}

pub fn decoder_block_forward<'t, T: Real>(
    up: &Var<'t, T>,
    skip: &Var<'t, T>,
    block: &DecoderBlock<T>,
    ctx: &Ctx<'t, T>,
) -> Result<Var<'t, T>> {
    block.forward(up, skip, ctx)
}
