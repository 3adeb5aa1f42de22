use std::collections::BTreeMap;

use skinmamba_tensor::{Gradients, Tensor};

use crate::module::Module;

/// Adam with decoupled weight decay. Moments are keyed by parameter name,
/// so state survives rebuilding the model from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps: 1e-8, weight_decay, step: 0, moments: BTreeMap::new() }
    }

    /// One update at learning rate `lr`. Trainable parameters without a
    /// gradient are left untouched, weight decay included.
    pub fn step(&mut self, module: &mut (impl Module<f32> + ?Sized), grads: &Gradients<f32>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let (b1f, b2f) = (b1 as f32, b2 as f32);
        let (lr_c1, sqrt_c2, eps) = ((lr / c1) as f32, c2.sqrt() as f32, self.eps as f32);
        let moments = &mut self.moments;
        module.visit_mut("", &mut |name, p| {
            if !p.is_trainable() {
                return;
            }
            let Some(g) = grads.param(p) else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(p.value.shape().to_vec()), Tensor::zeros(p.value.shape().to_vec())));
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1f * m[i] + (1.0 - b1f) * gi;
                v[i] = b2f * v[i] + (1.0 - b2f) * gi * gi;
                *w = *w * decay - lr_c1 * m[i] / (v[i].sqrt() / sqrt_c2 + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use skinmamba_tensor::{Param, Tape};

    use super::*;

    fn grads_for(p: &Param<f32>, g: Tensor<f32>) -> Gradients<f32> {
        let tape = Tape::new();
        let v = tape.param(p);
        let loss = v.dot_const(&g);
        tape.backward(&loss)
    }

    #[test]
    fn zero_gradient_without_decay_changes_nothing() {
        let mut p = Param::new(Tensor::new([3], vec![1.0f32, -2.0, 0.5]));
        let before = p.value.clone();
        let grads = grads_for(&p, Tensor::zeros([3]));
        let mut opt = AdamW::new(0.9, 0.999, 0.0);
        for _ in 0..5 {
            opt.step(&mut p, &grads, 1e-3);
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_gradient() {
        let mut p = Param::new(Tensor::new([2], vec![0.0f32, 0.0]));
        let grads = grads_for(&p, Tensor::new([2], vec![3.0, -0.5]));
        AdamW::new(0.9, 0.999, 0.0).step(&mut p, &grads, 0.01);
        // Bias-corrected moments give m / sqrt(v) = sign(g).
        assert!((p.value.data()[0] + 0.01).abs() < 1e-7);
        assert!((p.value.data()[1] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn decay_is_decoupled_from_the_gradient() {
        let mut p = Param::new(Tensor::new([1], vec![2.0f32]));
        let grads = grads_for(&p, Tensor::zeros([1]));
        AdamW::new(0.9, 0.999, 0.1).step(&mut p, &grads, 0.5);
        assert!((p.value.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-6);
    }

    #[test]
    fn matches_a_reference_loop_over_several_steps() {
        let gs = [0.3f64, -1.2, 0.05, 2.0];
        let (lr, b1, b2, wd, eps) = (0.02, 0.9, 0.999, 1e-2, 1e-8);
        let (mut w, mut m, mut v) = (1.0f64, 0.0, 0.0);
        let mut p = Param::new(Tensor::new([1], vec![1.0f32]));
        let mut opt = AdamW::new(b1, b2, wd);
        for (t, &g) in gs.iter().enumerate() {
            let t = t as i32 + 1;
            w *= 1.0 - lr * wd;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            let grads = grads_for(&p, Tensor::new([1], vec![g as f32]));
            opt.step(&mut p, &grads, lr);
        }
        assert!((f64::from(p.value.data()[0]) - w).abs() < 1e-5);
        assert_eq!(opt.step, 4);
        assert!(opt.moments.contains_key(""));
    }

    #[test]
    fn buffers_are_never_updated() {
        let mut b = Param::buffer(Tensor::new([1], vec![1.0f32]));
        let grads = grads_for(&Param::new(Tensor::zeros([1])), Tensor::ones([1]));
        AdamW::new(0.9, 0.999, 0.5).step(&mut b, &grads, 1.0);
        assert_eq!(b.value.data(), [1.0]);
    }
}
