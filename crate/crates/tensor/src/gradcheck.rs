//! Central finite differences against the tape's analytic gradients.

use crate::{Tape, Tensor, Var};

/// Relative error with an absolute floor, so coordinates whose true gradient
/// is numerically zero do not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, 1e-7)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Per-coordinate comparison of analytic and numeric derivatives.
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
}

impl GradReport {
    pub fn push(&mut self, analytic: f64, numeric: f64) {
        self.analytic.push(analytic);
        self.numeric.push(numeric);
        self.rel_errors.push(relative_error(analytic, numeric));
    }

    pub fn extend(&mut self, other: GradReport) {
        self.analytic.extend(other.analytic);
        self.numeric.extend(other.numeric);
        self.rel_errors.extend(other.rel_errors);
    }

    pub fn len(&self) -> usize {
        self.rel_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rel_errors.is_empty()
    }

    pub fn max_rel(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.rel_errors.is_empty() {
            return 1.0;
        }
        self.rel_errors.iter().filter(|&&e| e <= tol).count() as f64 / self.rel_errors.len() as f64
    }

    /// `fraction` of coordinates within `tol`, and none above `hard_max`.
    pub fn passes(&self, tol: f64, fraction: f64, hard_max: f64) -> bool {
        !self.is_empty() && self.fraction_within(tol) >= fraction && self.max_rel() <= hard_max
    }
}

/// Central differences of `f` at the listed flat coordinates of `x`.
pub fn central_differences(
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    coords: &[usize],
    eps: f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Compare a provided analytic gradient with central differences.
pub fn compare(
    analytic: &Tensor<f64>,
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    coords: &[usize],
    eps: f64,
) -> GradReport {
    assert_eq!(analytic.shape(), x.shape());
    let numeric = central_differences(f, x, coords, eps);
    let mut report = GradReport::default();
    for (&i, n) in coords.iter().zip(numeric) {
        report.push(analytic.data()[i], n);
    }
    report
}

/// Evenly spread coordinate sample of at most `max` indices out of `n`.
pub fn sample_coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let stride = n as f64 / max as f64;
    (0..max).map(|i| ((i as f64 + 0.5) * stride) as usize).collect()
}

/// Deterministic pseudo-random projection weights.
pub fn projection(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5)
}

/// Check an op of one input: the scalar is `sum(op(x) * w)` for fixed `w`.
pub fn check_unary(x: &Tensor<f64>, op: impl for<'t> Fn(&Var<'t, f64>) -> Var<'t, f64>, tol: f64) {
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = op(&leaf);
    let w = projection(out.shape());
    let loss = out.dot_const(&w);
    let grads = tape.backward(&loss);
    let analytic = grads.wrt(&leaf).expect("input gradient").clone();
    let mut f = |probe: &Tensor<f64>| {
        let tape = Tape::no_grad();
        let v = op(&tape.constant(probe.clone()));
        v.value().data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let coords = sample_coords(x.numel(), 256);
    let report = compare(&analytic, &mut f, x, &coords, 1e-5);
    // finite-difference rounding noise scales with the largest derivative
    let floor = 1e-4 * report.numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let worst = report
        .analytic
        .iter()
        .zip(&report.numeric)
        .map(|(&a, &n)| relative_error_with_floor(a, n, floor))
        .fold(0.0, f64::max);
    assert!(
        worst <= tol,
        "gradient mismatch: max rel {worst} (analytic {:?} vs numeric {:?})",
        &report.analytic[..report.len().min(6)],
        &report.numeric[..report.len().min(6)]
    );
}
