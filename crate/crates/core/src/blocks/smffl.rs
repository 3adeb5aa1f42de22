use skinmamba_tensor::{Real, Var};

use crate::ctx::Ctx;
use crate::error::{config, Result};
use crate::init::Init;
use crate::layers::{Conv2d, LayerNorm2d};
use crate::module::{impl_module, Module};

/// Scale-mixed feed-forward layer with its own residual connection.
///
/// The normalized input is projected to a reduced width by two separate
/// linear maps, filtered by a 3x3 and a 5x5 convolution, concatenated,
/// activated and projected back.
pub struct Smffl<T: Real> {
    pub norm: LayerNorm2d<T>,
    pub proj3: Conv2d<T>,
    pub proj5: Conv2d<T>,
    pub conv3: Conv2d<T>,
    pub conv5: Conv2d<T>,
    pub out_proj: Conv2d<T>,
}

impl_module!(Smffl { norm, proj3, proj5, conv3, conv5, out_proj });

impl<T: Real> Smffl<T> {
    pub fn new(init: &mut Init, channels: usize, hidden_ratio: f64) -> Result<Self> {
        let hidden = (channels as f64 * hidden_ratio).round();
        if !(hidden >= 1.0) {
            return Err(config(format!("feed-forward hidden width {channels} x {hidden_ratio} is below 1")));
        }
        let h = hidden as usize;
        Ok(Self {
            norm: LayerNorm2d::new(channels),
            proj3: Conv2d::pointwise(init, channels, h),
            proj5: Conv2d::pointwise(init, channels, h),
            conv3: Conv2d::same(init, h, h, 3),
            conv5: Conv2d::same(init, h, h, 5),
            out_proj: Conv2d::pointwise(init, 2 * h, channels),
        })
    }

    pub fn hidden(&self) -> usize {
        self.proj3.out_channels()
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let n = self.norm.forward(x, ctx)?;
        let b3 = self.conv3.forward(&self.proj3.forward(&n, ctx)?, ctx)?;
        let b5 = self.conv5.forward(&self.proj5.forward(&n, ctx)?, ctx)?;
        ctx.trace("smffl.branch3", b3.shape());
        ctx.trace("smffl.branch5", b5.shape());
        let mixed = Var::concat_channels(&[&b3, &b5]).gelu();
        Ok(self.out_proj.forward(&mixed, ctx)?.add(x))
    }

    /// Zero the output projection, making the layer an exact identity.
    pub fn zero_output(&mut self) {
        self.out_proj.zero_all();
    }
}

pub fn smffl_forward<'t, T: Real>(x: &Var<'t, T>, layer: &Smffl<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    layer.forward(x, ctx)
}

#[cfg(test)]
mod tests {
    use skinmamba_tensor::gradcheck::check_unary;
    use skinmamba_tensor::{Tape, Tensor};

    use super::*;

    fn input(shape: [usize; 4]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 3.0) * 0.381966).fract() * 4.0 - 2.0)
    }

    #[test]
    fn preserves_shape_with_matching_branches() {
        let l: Smffl<f64> = Smffl::new(&mut Init::new(0), 16, 0.5).unwrap();
        assert_eq!(l.hidden(), 8);
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape).with_trace();
        let y = smffl_forward(&tape.constant(input([1, 16, 8, 8])), &l, &ctx).unwrap();
        assert_eq!(y.shape(), [1, 16, 8, 8]);
        assert_eq!(ctx.find("smffl.branch3"), Some(vec![1, 8, 8, 8]));
        assert_eq!(ctx.find("smffl.branch3"), ctx.find("smffl.branch5"));
    }

    #[test]
    fn zeroed_output_is_exact_identity() {
        let mut l: Smffl<f64> = Smffl::new(&mut Init::new(1), 6, 0.5).unwrap();
        l.zero_output();
        let x = input([2, 6, 5, 5]);
        let tape = Tape::no_grad();
        let y = smffl_forward(&tape.constant(x.clone()), &l, &Ctx::eval(&tape)).unwrap();
        assert_eq!(y.value(), &x);
    }

    #[test]
    fn hidden_width_below_one_is_rejected() {
        assert!(Smffl::<f64>::new(&mut Init::new(0), 1, 0.25).is_err());
        assert!(Smffl::<f64>::new(&mut Init::new(0), 4, f64::NAN).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let l: Smffl<f64> = Smffl::new(&mut Init::new(2), 4, 0.5).unwrap();
        check_unary(&input([1, 4, 6, 6]), |x| smffl_forward(x, &l, &Ctx::eval(x.tape())).unwrap(), 1e-5);
    }
}
