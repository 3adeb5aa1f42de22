use skinmamba_tensor::{Real, Var};

use super::csffl::Csffl;
use super::ffgml::Ffgml;
use crate::ctx::Ctx;
use crate::error::Result;
use crate::init::Init;
use crate::layers::LayerNorm2d;
use crate::module::{impl_module, Module};

/// Frequency boundary guided module: `k' = k + ffgml(ln1(k))`,
/// `out = k' + csffl(ln2(k'))`.
pub struct Fbgm<T: Real> {
    pub norm1: LayerNorm2d<T>,
    pub ffgml: Ffgml<T>,
    pub norm2: LayerNorm2d<T>,
    pub csffl: Csffl<T>,
}

impl_module!(Fbgm { norm1, ffgml, norm2, csffl });

impl<T: Real> Fbgm<T> {
    pub fn new(init: &mut Init, channels: usize, expansion: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm2d::new(channels),
            ffgml: Ffgml::new(init, channels),
            norm2: LayerNorm2d::new(channels),
            csffl: Csffl::new(init, channels, expansion)?,
        })
    }

    pub fn forward<'t>(&self, k: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let guided = k.add(&self.ffgml.forward(&self.norm1.forward(k, ctx)?, ctx)?);
        Ok(guided.add(&self.csffl.forward(&self.norm2.forward(&guided, ctx)?, ctx)?))
    }

    /// Make both residual branches output exact zeros. The gating branch
    /// multiplies its own input, so its input normalization is the affine
    /// layer that gets zeroed.
    pub fn zero_output(&mut self) {
        self.norm1.zero_all();
        self.csffl.zero_output();
    }
}

pub fn fbgm_forward<'t, T: Real>(k: &Var<'t, T>, block: &Fbgm<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    block.forward(k, ctx)
}
