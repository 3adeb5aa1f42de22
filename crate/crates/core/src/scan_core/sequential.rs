//! Step-by-step reference evaluation of the selective scan in `f64`.

use skinmamba_tensor::{Real, Tensor};

use super::discretize::discretize_scalar;
use super::params::SelectiveScanParams;
use crate::error::{shape, Error, Result};

/// Run the recurrence `h_t = a_bar_t h_{t-1} + b_bar_t x_t`,
/// `y_t = c_t . h_t + d x_t` for one channel from `h_0 = 0`.
///
/// `a_bar`, `b_bar` and `c` are `(L, N)` row-major; returns the states
/// `(L, N)` and outputs `(L)`.
pub fn scan_recurrence(x: &[f64], a_bar: &[f64], b_bar: &[f64], c: &[f64], d: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = x.len();
    if l == 0 || a_bar.len() % l != 0 {
        return Err(shape(format!("recurrence over {l} steps with {} transition values", a_bar.len())));
    }
    let n = a_bar.len() / l;
    if b_bar.len() != l * n || c.len() != l * n {
        return Err(shape("recurrence operands disagree on (L, N)"));
    }
    let mut h = vec![0.0; n];
    let mut states = Vec::with_capacity(l * n);
    let mut y = Vec::with_capacity(l);
    for t in 0..l {
        let mut acc = d * x[t];
        for s in 0..n {
            let k = t * n + s;
            h[s] = a_bar[k] * h[s] + b_bar[k] * x[t];
            acc += c[k] * h[s];
        }
        if !acc.is_finite() {
            return Err(Error::Numeric(format!("non-finite scan output at step {t}")));
        }
        states.extend_from_slice(&h);
        y.push(acc);
    }
    Ok((states, y))
}

/// Reference selective scan of a `(B, L, C)` sequence, evaluated in double
/// precision directly from the raw parameters, one step at a time.
pub fn selective_scan_sequential<T: Real>(x: &Tensor<T>, p: &SelectiveScanParams<T>) -> Result<Tensor<f64>> {
    p.check()?;
    let (b, l, c) = match x.shape() {
        [b, l, c] if *c == p.channels() && *l > 0 => (*b, *l, *c),
        s => return Err(shape(format!("scan input must be (B, L>0, {}), got {s:?}", p.channels()))),
    };
    let n = p.state_dim();
    let a: Vec<f64> = p.a_log.value.data().iter().map(|v| -v.to_f64_lossy().exp()).collect();
    let d: Vec<f64> = p.d.value.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut out = vec![0.0; b * l * c];
    for bi in 0..b {
        let tokens: Vec<Vec<f64>> =
            (0..l).map(|t| x.data()[(bi * l + t) * c..][..c].iter().map(|v| v.to_f64_lossy()).collect()).collect();
        let deltas: Vec<Vec<f64>> = tokens.iter().map(|tok| p.step_sizes_f64(tok)).collect();
        let bcs: Vec<(Vec<f64>, Vec<f64>)> = tokens.iter().map(|tok| p.bc_f64(tok)).collect();
        for ch in 0..c {
            let xs: Vec<f64> = tokens.iter().map(|tok| tok[ch]).collect();
            let mut a_bar = Vec::with_capacity(l * n);
            let mut b_bar = Vec::with_capacity(l * n);
            let mut cs = Vec::with_capacity(l * n);
            for t in 0..l {
                for s in 0..n {
                    let (ab, bb) = discretize_scalar(deltas[t][ch], a[ch * n + s], bcs[t].0[s]);
                    a_bar.push(ab);
                    b_bar.push(bb);
                    cs.push(bcs[t].1[s]);
                }
            }
            let (_, y) = scan_recurrence(&xs, &a_bar, &b_bar, &cs, d[ch])?;
            for (t, v) in y.into_iter().enumerate() {
                out[(bi * l + t) * c + ch] = v;
            }
        }
    }
    Ok(Tensor::new([b, l, c], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Init;

    #[test]
    fn zero_input_gives_zero_output() {
        let p = SelectiveScanParams::<f64>::new(&mut Init::new(5), 3, 4);
        let y = selective_scan_sequential(&Tensor::zeros([2, 7, 3]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_unrolled_two_steps() {
        let (h, y) = scan_recurrence(&[1.0, 0.0], &[0.5, 0.5], &[1.0, 1.0], &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(h, [1.0, 0.5]);
        assert_eq!(y, [1.0, 0.5]);
    }

    #[test]
    fn hand_unrolled_two_steps_through_parameters() {
        // A = -1 and delta = ln 2 give a_bar = 0.5; B = 1 / ln 2 gives b_bar = 1
        let ln2 = std::f64::consts::LN_2;
        let mut p = SelectiveScanParams::<f64>::new(&mut Init::new(0), 1, 1);
        p.a_log.value = Tensor::zeros([1, 1]);
        p.d.value = Tensor::zeros([1]);
        p.delta_weight.value = Tensor::zeros([1, 1]);
        p.delta_bias.value = Tensor::full([1], ln2.exp_m1().ln());
        p.bc_weight.value = Tensor::zeros([2, 1]);
        p.bc_bias.value = Tensor::new([2], vec![1.0 / ln2, 1.0]);
        let y = selective_scan_sequential(&Tensor::new([1, 2, 1], vec![1.0, 0.0]), &p).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_step_closed_form() {
        let p = SelectiveScanParams::<f64>::new(&mut Init::new(9), 3, 5);
        let x = Tensor::new([1, 1, 3], vec![0.3, -1.2, 0.8]);
        let y = selective_scan_sequential(&x, &p).unwrap();
        let delta = p.step_sizes_f64(x.data());
        let (bm, cm) = p.bc_f64(x.data());
        for ch in 0..3 {
            let xv = x.data()[ch];
            let want = (0..5).map(|s| cm[s] * delta[ch] * bm[s] * xv).sum::<f64>() + p.d.value.data()[ch] * xv;
            assert!((y.data()[ch] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_mid_scan_names_the_step() {
        let x = [1.0, 1.0, f64::NAN, 1.0];
        let ones = [1.0; 4];
        let err = scan_recurrence(&x, &[0.5; 4], &ones, &ones, 0.0).unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let p = SelectiveScanParams::<f64>::new(&mut Init::new(0), 3, 2);
        assert!(selective_scan_sequential(&Tensor::zeros([1, 4, 2]), &p).is_err());
    }
}
