use skinmamba_tensor::scalar::sigmoid;
use skinmamba_tensor::{Real, Tensor, Var};

use crate::error::{shape, Error, Result};

pub const DICE_EPS: f64 = 1e-5;

/// Terms of the combined loss, in `f64`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub bce: f64,
    pub dice: f64,
    pub total: f64,
}

/// `max(z, 0) - z g + ln(1 + e^{-|z|})`, exact for any finite `z`.
fn bce_with_logits(z: f64, g: f64) -> f64 {
    z.max(0.0) - z * g + (-z.abs()).exp().ln_1p()
}

/// Mean BCE, soft Dice over the whole batch, and their equal-weight sum
/// `0.5 bce + 0.5 (1 - dice)`.
pub fn loss_parts<T: Real>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<LossParts> {
    if logits.shape() != target.shape() {
        return Err(shape(format!("logits {:?} vs target {:?}", logits.shape(), target.shape())));
    }
    let n = logits.numel();
    if n == 0 {
        return Err(Error::Empty("loss over zero pixels".into()));
    }
    let (mut bce, mut pg, mut ps, mut gs) = (0.0, 0.0, 0.0, 0.0);
    for (&z, &g) in logits.data().iter().zip(target.data()) {
        let (z, g) = (z.to_f64_lossy(), g.to_f64_lossy());
        let p = sigmoid(z);
        bce += bce_with_logits(z, g);
        pg += p * g;
        ps += p;
        gs += g;
    }
    let bce = bce / n as f64;
    let dice = (2.0 * pg + DICE_EPS) / (ps + gs + DICE_EPS);
    let total = 0.5 * bce + 0.5 * (1.0 - dice);
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss is {total}")));
    }
    Ok(LossParts { bce, dice, total })
}

/// Scalar loss on the tape with its analytic gradient:
/// `dL/dz = 0.5 (p - g) / N - 0.5 dD/dp p (1 - p)` with
/// `dD/dp_i = (2 g_i den - num) / den^2`.
pub fn loss_bce_dice<'t, T: Real>(logits: &Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
    let parts = loss_parts(logits.value(), target)?;
    let z = logits.value_rc();
    let g = target.clone();
    let tape = logits.tape();
    Ok(tape.record(Tensor::scalar(T::lit(parts.total)), &[logits], move |up, needs| {
        if !needs[0] {
            return vec![None];
        }
        let up = up.data()[0].to_f64_lossy();
        let n = z.numel() as f64;
        let (mut pg, mut ps, mut gs) = (0.0, 0.0, 0.0);
        let probs: Vec<f64> = z.data().iter().map(|&v| sigmoid(v.to_f64_lossy())).collect();
        for (&p, &t) in probs.iter().zip(g.data()) {
            let t = t.to_f64_lossy();
            pg += p * t;
            ps += p;
            gs += t;
        }
        let num = 2.0 * pg + DICE_EPS;
        let den = ps + gs + DICE_EPS;
        let grad = probs
            .iter()
            .zip(g.data())
            .map(|(&p, &t)| {
                let t = t.to_f64_lossy();
                let d_dice = (2.0 * t * den - num) / (den * den);
                T::lit(up * (0.5 * (p - t) / n - 0.5 * d_dice * p * (1.0 - p)))
            })
            .collect();
        vec![Some(Tensor::new(z.shape().to_vec(), grad))]
    }))
}

#[cfg(test)]
mod tests {
    use skinmamba_tensor::gradcheck::check_unary;
    use skinmamba_tensor::Tape;

    use super::*;

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let z = Tensor::full([1, 1, 4, 4], 20.0f64);
        assert!(loss_parts(&z, &Tensor::ones([1, 1, 4, 4])).unwrap().total < 1e-3);
    }

    #[test]
    fn zero_logits_on_half_foreground_match_closed_form() {
        let z = Tensor::zeros([1, 1, 2, 2]);
        let g = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]);
        let parts = loss_parts(&z, &g).unwrap();
        assert!((parts.bce - std::f64::consts::LN_2).abs() < 1e-15);
        // p = 1/2 everywhere: sum(pg) = 1, sum(p) = 2, sum(g) = 2.
        let dice = (2.0 + DICE_EPS) / (4.0 + DICE_EPS);
        assert!((parts.total - (0.5 * std::f64::consts::LN_2 + 0.5 * (1.0 - dice))).abs() < 1e-15);
    }

    #[test]
    fn loss_is_nonnegative_and_finite_at_extremes() {
        let z = Tensor::new([4], vec![-1e4, 1e4, -30.0, 30.0]);
        let g = Tensor::new([4], vec![1.0, 0.0, 0.0, 1.0]);
        let parts = loss_parts(&z, &g).unwrap();
        assert!(parts.total.is_finite() && parts.total >= 0.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        assert!(loss_parts(&Tensor::<f64>::zeros([2, 2]), &Tensor::zeros([4])).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = Tensor::from_fn([1, 1, 4, 4], |i| f64::from(u8::from(i % 3 == 0)));
        let z = Tensor::from_fn([1, 1, 4, 4], |i| ((i as f64) * 0.77).sin() * 2.0);
        check_unary(&z, |v| loss_bce_dice(v, &g).unwrap(), 1e-6);
    }

    #[test]
    fn empty_foreground_still_has_gradient() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::full([1, 1, 2, 2], 0.3f64));
        let loss = loss_bce_dice(&z, &Tensor::zeros([1, 1, 2, 2])).unwrap();
        let grad = tape.backward(&loss).wrt(&z).unwrap().clone();
        assert!(grad.data().iter().all(|&d| d > 0.0));
    }
}
