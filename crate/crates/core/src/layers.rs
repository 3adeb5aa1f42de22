//! Parameterized building blocks shared by every block: convolutions
//! (including the per-pixel linear map), layer norm and batch norm.

use skinmamba_tensor::{Conv2dSpec, Param, Real, Tensor, Var};

use crate::ctx::Ctx;
use crate::error::{shape, Result};
use crate::init::Init;
use crate::module::impl_module;

fn expect_channels<T: Real>(x: &Var<'_, T>, channels: usize, what: &str) -> Result<()> {
    match x.shape() {
        [_, c, h, w] if *c == channels && *h > 0 && *w > 0 => Ok(()),
        s => Err(shape(format!("{what} expects (B, {channels}, H, W), got {s:?}"))),
    }
}

/// 2-D convolution with bias. A 1x1 instance is the per-pixel linear map
/// used wherever the architecture applies a linear layer to a feature map.
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    spec: Conv2dSpec,
}

impl_module!(Conv2d { weight, bias });

impl<T: Real> Conv2d<T> {
    pub fn new(init: &mut Init, cin: usize, cout: usize, kernel: usize, spec: Conv2dSpec) -> Self {
        let cin_g = if spec.groups == 1 { cin } else { 1 };
        let fan_in = cin_g * kernel * kernel;
        Self {
            weight: init.kaiming_uniform([cout, cin_g, kernel, kernel], fan_in),
            bias: init.kaiming_uniform([cout], fan_in),
            spec,
        }
    }

    /// Stride-1 convolution padded to keep `H x W`.
    pub fn same(init: &mut Init, cin: usize, cout: usize, kernel: usize) -> Self {
        Self::new(init, cin, cout, kernel, Conv2dSpec::same(kernel))
    }

    pub fn pointwise(init: &mut Init, cin: usize, cout: usize) -> Self {
        Self::same(init, cin, cout, 1)
    }

    pub fn depthwise(init: &mut Init, channels: usize, kernel: usize) -> Self {
        Self::new(init, channels, channels, kernel, Conv2dSpec::depthwise(kernel, channels))
    }

    pub fn in_channels(&self) -> usize {
        if self.spec.groups == 1 {
            self.weight.value.shape()[1]
        } else {
            self.spec.groups
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        expect_channels(x, self.in_channels(), "conv")?;
        let (_, _, h, w) = x.value().dims4();
        let k = self.kernel();
        if h + 2 * self.spec.padding < k || w + 2 * self.spec.padding < k {
            return Err(shape(format!("{k}x{k} kernel larger than padded {h}x{w} input")));
        }
        Ok(x.conv2d(&ctx.param(&self.weight), Some(&ctx.param(&self.bias)), self.spec))
    }
}

/// Layer norm over the channel axis at every pixel.
pub struct LayerNorm2d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl_module!(LayerNorm2d { gamma, beta });

pub const NORM_EPS: f64 = 1e-5;

impl<T: Real> LayerNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self { gamma: Param::new(Tensor::ones([channels])), beta: Param::new(Tensor::zeros([channels])) }
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        expect_channels(x, self.gamma.numel(), "layer norm")?;
        Ok(x.layer_norm_channels(&ctx.param(&self.gamma), &ctx.param(&self.beta), T::lit(NORM_EPS)))
    }
}

/// Batch norm with running statistics for evaluation.
///
/// Training-mode forward normalizes with batch statistics and queues the
/// running-average update on the [`Ctx`]; the caller folds it in with
/// [`crate::module::apply_buffer_updates`] after the step.
pub struct BatchNorm2d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
}

impl_module!(BatchNorm2d { gamma, beta, running_mean, running_var });

pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::ones([channels])),
            beta: Param::new(Tensor::zeros([channels])),
            running_mean: Param::buffer(Tensor::zeros([channels])),
            running_var: Param::buffer(Tensor::ones([channels])),
        }
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
        let c = self.gamma.numel();
        expect_channels(x, c, "batch norm")?;
        let eps = T::lit(NORM_EPS);
        if ctx.is_training() {
            let (y, stats) = x.batch_norm_train(&ctx.param(&self.gamma), &ctx.param(&self.beta), eps);
            if stats.count > 1 {
                let unbias = T::from_usize(stats.count).unwrap() / T::from_usize(stats.count - 1).unwrap();
                let var = stats.var.iter().map(|&v| v * unbias).collect();
                ctx.push_buffer_update(self.running_mean.id(), Tensor::new([c], stats.mean));
                ctx.push_buffer_update(self.running_var.id(), Tensor::new([c], var));
            }
            return Ok(y);
        }
        let (scale, shift): (Vec<T>, Vec<T>) = (0..c)
            .map(|i| {
                let s = self.gamma.value.data()[i] / (self.running_var.value.data()[i] + eps).sqrt();
                (s, self.beta.value.data()[i] - self.running_mean.value.data()[i] * s)
            })
            .unzip();
        Ok(x.channel_affine(&scale, &shift))
    }
}

#[cfg(test)]
mod tests {
    use skinmamba_tensor::Tape;

    use super::*;
    use crate::module::{apply_buffer_updates, Module};

    #[test]
    fn pointwise_matches_matrix_product() {
        let mut init = Init::new(3);
        let conv: Conv2d<f64> = Conv2d::pointwise(&mut init, 3, 2);
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape);
        let x = Tensor::from_fn([1, 3, 2, 2], |i| i as f64 * 0.1);
        let y = conv.forward(&tape.constant(x.clone()), &ctx).unwrap();
        let w = conv.weight.value.data();
        for o in 0..2 {
            for pix in 0..4 {
                let want: f64 =
                    (0..3).map(|i| w[o * 3 + i] * x.data()[i * 4 + pix]).sum::<f64>() + conv.bias.value.data()[o];
                assert!((y.value().data()[o * 4 + pix] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let conv: Conv2d<f64> = Conv2d::same(&mut Init::new(0), 4, 4, 3);
        let tape = Tape::no_grad();
        let err = conv.forward(&tape.constant(Tensor::zeros([1, 3, 5, 5])), &Ctx::eval(&tape));
        assert!(matches!(err, Err(crate::Error::Shape(_))));
    }

    #[test]
    fn batch_norm_running_stats_use_unbiased_variance() {
        let mut bn: BatchNorm2d<f64> = BatchNorm2d::new(1);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape);
        let x = Tensor::new([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        bn.forward(&tape.constant(x), &ctx).unwrap();
        apply_buffer_updates(&mut bn, &ctx.take_buffer_updates(), BN_MOMENTUM);
        assert!((bn.running_mean.value.data()[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((bn.running_var.value.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut bn: BatchNorm2d<f64> = BatchNorm2d::new(1);
        bn.running_mean.value = Tensor::full([1], 2.0);
        bn.running_var.value = Tensor::full([1], 4.0 - NORM_EPS);
        let tape = Tape::no_grad();
        let y = bn.forward(&tape.constant(Tensor::full([1, 1, 1, 1], 6.0)), &Ctx::eval(&tape)).unwrap();
        assert!((y.value().data()[0] - 2.0).abs() < 1e-12);
        assert_eq!(bn.parameter_count(), 2);
    }
}
