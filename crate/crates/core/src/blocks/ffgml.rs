use skinmamba_tensor::{Real, Var};

use crate::ctx::Ctx;
use crate::error::{shape, Error, Result};
use crate::init::Init;
use crate::layers::Conv2d;
use crate::module::{impl_module, Module};

/// Frequency feature guidance modulation layer.
///
/// The spectrum of the input, held as `2C` real channels (real parts then
/// imaginary parts), passes through pointwise conv, ReLU, pointwise conv;
/// the real part of its inverse transform is squashed by a sigmoid and gates
/// the input.
pub struct Ffgml<T: Real> {
    pub pw1: Conv2d<T>,
    pub pw2: Conv2d<T>,
}

impl_module!(Ffgml { pw1, pw2 });

impl<T: Real> Ffgml<T> {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        Self {
            pw1: Conv2d::pointwise(init, 2 * channels, 2 * channels),
            pw2: Conv2d::pointwise(init, 2 * channels, 2 * channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.pw1.in_channels() / 2
    }

    /// The modulation gate, strictly inside `(0, 1)` for finite inputs.
    pub fn gate<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        match x.shape() {
            [_, c, h, w] if *c == self.channels() => {
                if h * w == 0 {
                    return Err(Error::Empty(format!("frequency transform of a {h}x{w} map")));
                }
            }
            s => return Err(shape(format!("frequency layer expects (B, {}, H, W), got {s:?}", self.channels()))),
        }
        let spectrum = x.fft2_stacked();
        let filtered = self.pw2.forward(&self.pw1.forward(&spectrum, ctx)?.relu(), ctx)?;
        Ok(filtered.ifft2_real().sigmoid())
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.gate(x, ctx)?.mul(x))
    }

    pub fn zero_weights(&mut self) {
        self.zero_all();
    }
}

pub fn ffgml_forward<'t, T: Real>(x: &Var<'t, T>, layer: &Ffgml<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    layer.forward(x, ctx)
}
