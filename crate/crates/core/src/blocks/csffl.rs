use skinmamba_tensor::{Real, Var};

use crate::ctx::Ctx;
use crate::error::{config, Result};
use crate::init::Init;
use crate::layers::Conv2d;
use crate::module::{impl_module, Module};

/// Compact feed-forward layer: 3x3 conv widening by `expansion`, GELU,
/// pointwise conv back to the input width.
pub struct Csffl<T: Real> {
    pub expand: Conv2d<T>,
    pub project: Conv2d<T>,
}

impl_module!(Csffl { expand, project });

impl<T: Real> Csffl<T> {
    pub fn new(init: &mut Init, channels: usize, expansion: usize) -> Result<Self> {
        if expansion == 0 {
            return Err(config("feed-forward expansion must be at least 1"));
        }
        let wide = channels * expansion;
        Ok(Self { expand: Conv2d::same(init, channels, wide, 3), project: Conv2d::pointwise(init, wide, channels) })
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let wide = self.expand.forward(x, ctx)?;
        ctx.trace("csffl.hidden", wide.shape());
        self.project.forward(&wide.gelu(), ctx)
    }

    pub fn zero_output(&mut self) {
        self.project.zero_all();
    }
}

pub fn csffl_forward<'t, T: Real>(x: &Var<'t, T>, layer: &Csffl<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    layer.forward(x, ctx)
}
