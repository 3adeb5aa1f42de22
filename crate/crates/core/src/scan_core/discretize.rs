use skinmamba_tensor::{Real, Tensor};

use crate::error::{shape, Error, Result};

/// Zero-order hold for the state matrix and Euler for the input matrix:
/// `(exp(delta a), delta b)`.
#[inline]
pub fn discretize_scalar<T: Real>(delta: T, a: T, b: T) -> (T, T) {
    ((delta * a).exp(), delta * b)
}

/// Discretize a whole sequence. `delta` is `(L, C)`, `a` is `(C, N)` and `b`
/// is `(L, N)`; both results are `(L, C, N)`.
///
/// Every step size must be strictly positive.
pub fn discretize<T: Real>(delta: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if let Some((i, v)) = delta.data().iter().enumerate().find(|(_, v)| !v.is_nan() && **v <= T::zero()) {
        return Err(Error::Contract(format!("step size must be positive, delta[{i}] = {v}")));
    }
    discretize_unchecked(delta, a, b)
}

/// [`discretize`] without the positivity precondition; used to probe the
/// `delta = 0` boundary.
pub fn discretize_unchecked<T: Real>(
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (l, c) = match delta.shape() {
        [l, c] => (*l, *c),
        s => return Err(shape(format!("delta must be (L, C), got {s:?}"))),
    };
    let n = match a.shape() {
        [ac, n] if *ac == c => *n,
        s => return Err(shape(format!("A must be ({c}, N), got {s:?}"))),
    };
    if b.shape() != [l, n] {
        return Err(shape(format!("B must be ({l}, {n}), got {:?}", b.shape())));
    }
    for (name, t) in [("delta", delta), ("A", a), ("B", b)] {
        if !t.all_finite() {
            return Err(Error::Numeric(format!("{name} contains NaN or infinity")));
        }
    }
    let mut a_bar = Vec::with_capacity(l * c * n);
    let mut b_bar = Vec::with_capacity(l * c * n);
    for t in 0..l {
        for ch in 0..c {
            let dt = delta.data()[t * c + ch];
            for s in 0..n {
                let (ab, bb) = discretize_scalar(dt, a.data()[ch * n + s], b.data()[t * n + s]);
                a_bar.push(ab);
                b_bar.push(bb);
            }
        }
    }
    Ok((Tensor::new([l, c, n], a_bar), Tensor::new([l, c, n], b_bar)))
}
