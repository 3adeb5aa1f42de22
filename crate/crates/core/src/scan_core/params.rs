use skinmamba_tensor::{scalar, Param, Real, Tensor};

use crate::error::{shape, Result};
use crate::init::Init;
use crate::module::impl_module;

pub const DEFAULT_STATE_DIM: usize = 16;
const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

/// Parameters of one selective state-space recurrence over `C` channels
/// with `N` states per channel.
///
/// `A = -exp(a_log)` is `(C, N)`; the step size is
/// `softplus(x delta_weight^T + delta_bias)`; `[B, C] = x bc_weight^T + bc_bias`
/// gives the input and output matrices, `N` values each.
#[derive(Clone)]
pub struct SelectiveScanParams<T: Real> {
    pub a_log: Param<T>,
    pub d: Param<T>,
    pub delta_weight: Param<T>,
    pub delta_bias: Param<T>,
    pub bc_weight: Param<T>,
    pub bc_bias: Param<T>,
}

impl_module!(SelectiveScanParams { a_log, d, delta_weight, delta_bias, bc_weight, bc_bias });

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<T: Real> SelectiveScanParams<T> {
    /// `a_log[c, n] = ln(n + 1)`, `D = 1`, step-size bias set so the initial
    /// step is log-uniform in `[1e-3, 1e-1]`.
    pub fn new(init: &mut Init, channels: usize, state_dim: usize) -> Self {
        let a_log = Tensor::from_fn([channels, state_dim], |i| T::lit(((i % state_dim) + 1) as f64).ln());
        let delta_bias = Tensor::from_fn([channels], |_| {
            let u = init.unit();
            let dt = (DT_MIN.ln() + u * (DT_MAX.ln() - DT_MIN.ln())).exp();
            T::lit(inverse_softplus(dt))
        });
        Self {
            a_log: Param::new(a_log),
            d: Param::new(Tensor::ones([channels])),
            delta_weight: init.kaiming_uniform([channels, channels], channels),
            delta_bias: Param::new(delta_bias),
            bc_weight: init.kaiming_uniform([2 * state_dim, channels], channels),
            bc_bias: init.kaiming_uniform([2 * state_dim], channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.d.numel()
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.value.shape()[1]
    }

    /// The negative state matrix `A = -exp(a_log)`.
    pub fn a(&self) -> Tensor<T> {
        self.a_log.value.map(|v| -v.exp())
    }

    pub fn check(&self) -> Result<()> {
        let (c, n) = (self.channels(), self.state_dim());
        let expect = [
            ("a_log", &self.a_log, vec![c, n]),
            ("delta_weight", &self.delta_weight, vec![c, c]),
            ("delta_bias", &self.delta_bias, vec![c]),
            ("bc_weight", &self.bc_weight, vec![2 * n, c]),
            ("bc_bias", &self.bc_bias, vec![2 * n]),
        ];
        for (name, p, want) in expect {
            if p.value.shape() != want.as_slice() {
                return Err(shape(format!("scan parameter {name} is {:?}, expected {want:?}", p.value.shape())));
            }
        }
        Ok(())
    }

    /// Step sizes for one token, `softplus(W x + b)`, evaluated in `f64`.
    pub(crate) fn step_sizes_f64(&self, x: &[f64]) -> Vec<f64> {
        let c = self.channels();
        let w = self.delta_weight.value.data();
        let b = self.delta_bias.value.data();
        (0..c)
            .map(|o| {
                let pre: f64 = b[o].to_f64_lossy() + (0..c).map(|i| w[o * c + i].to_f64_lossy() * x[i]).sum::<f64>();
                scalar::softplus(pre)
            })
            .collect()
    }

    /// Input and output matrices for one token, evaluated in `f64`.
    pub(crate) fn bc_f64(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (c, n) = (self.channels(), self.state_dim());
        let w = self.bc_weight.value.data();
        let b = self.bc_bias.value.data();
        let row = |o: usize| b[o].to_f64_lossy() + (0..c).map(|i| w[o * c + i].to_f64_lossy() * x[i]).sum::<f64>();
        ((0..n).map(row).collect(), (n..2 * n).map(row).collect())
    }
}
