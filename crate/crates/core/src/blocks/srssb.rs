use skinmamba_tensor::{Real, Var};

use super::mixer::{MixerRegistry, TokenMixer};
use super::smffl::Smffl;
use super::BlockConfig;
use crate::ctx::Ctx;
use crate::error::Result;
use crate::init::Init;
use crate::module::impl_module;

/// Scale residual state-space block: `x' = x + mixer(x)`, then the
/// feed-forward layer, which carries its own normalization and residual.
pub struct Srssb<T: Real> {
    pub mixer: Box<dyn TokenMixer<T>>,
    pub smffl: Smffl<T>,
}

impl_module!(Srssb { mixer, smffl });

impl<T: Real> Srssb<T> {
    pub fn new(init: &mut Init, cfg: &BlockConfig, registry: &MixerRegistry<T>) -> Result<Self> {
        Ok(Self { mixer: registry.build(cfg, init)?, smffl: Smffl::new(init, cfg.channels, cfg.smffl_hidden_ratio)? })
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let mixed = x.add(&self.mixer.forward(x, ctx)?);
        self.smffl.forward(&mixed, ctx)
    }

    /// Zero the final affine layer of both residual branches.
    pub fn zero_output(&mut self) {
        self.mixer.zero_output();
        self.smffl.zero_output();
    }
}

pub fn srssb_forward<'t, T: Real>(x: &Var<'t, T>, block: &Srssb<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    block.forward(x, ctx)
}
