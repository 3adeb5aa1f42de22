use skinmamba_tensor::{Real, Var};

use super::mixer::{TokenMixer, VSSB};
use super::BlockConfig;
use crate::ctx::Ctx;
use crate::error::{config, Result};
use crate::init::Init;
use crate::layers::{Conv2d, LayerNorm2d};
use crate::module::{impl_module, Module};
use crate::scan_core::{ss2d, Ss2d};

/// Visual state-space block.
///
/// One shared projection of the normalized input feeds two streams: a
/// depthwise conv, SiLU and 2-D selective scan stream (normalized after the
/// scan), and a SiLU gate. Their product is projected back to `C` channels.
pub struct Vssb<T: Real> {
    pub norm: LayerNorm2d<T>,
    pub in_proj: Conv2d<T>,
    pub dwconv: Conv2d<T>,
    pub ss2d: Ss2d<T>,
    pub out_proj: Conv2d<T>,
}

impl_module!(Vssb { norm, in_proj, dwconv, ss2d, out_proj });

impl<T: Real> Vssb<T> {
    pub fn new(init: &mut Init, cfg: &BlockConfig) -> Result<Self> {
        let c = cfg.channels;
        if c == 0 || cfg.ssm_state_dim == 0 {
            return Err(config(format!(
                "state-space block needs channels and state_dim >= 1, got {c} and {}",
                cfg.ssm_state_dim
            )));
        }
        Ok(Self {
            norm: LayerNorm2d::new(c),
            in_proj: Conv2d::pointwise(init, c, c),
            dwconv: Conv2d::depthwise(init, c, 3),
            ss2d: Ss2d::new(init, c, cfg.ssm_state_dim),
            out_proj: Conv2d::pointwise(init, c, c),
        })
    }

    pub fn channels(&self) -> usize {
        self.in_proj.out_channels()
    }

    /// The refined stream and the gate stream, before their product.
    pub fn streams<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let c = self.channels();
        if x.shape().get(1) != Some(&c) {
            return Err(config(format!("state-space block has {c} channels, input is {:?}", x.shape())));
        }
        let f = self.in_proj.forward(&self.norm.forward(x, ctx)?, ctx)?;
        let local = self.dwconv.forward(&f, ctx)?.silu();
        let refined = self.ss2d.out_norm.forward(&ss2d(&local, &self.ss2d, ctx)?, ctx)?;
        Ok((refined, f.silu()))
    }
}

impl<T: Real> TokenMixer<T> for Vssb<T> {
    fn name(&self) -> &'static str {
        VSSB
    }

    fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let (refined, gate) = self.streams(x, ctx)?;
        self.out_proj.forward(&refined.mul(&gate), ctx)
    }

    fn zero_output(&mut self) {
        self.out_proj.zero_all();
    }
}

/// Forward pass of a [`Vssb`].
pub fn vssb_forward<'t, T: Real>(x: &Var<'t, T>, block: &Vssb<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    block.forward(x, ctx)
}
