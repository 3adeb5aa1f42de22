use std::rc::Rc;

use crate::{Real, Tensor, Var};

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow for large x
    if x > T::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn scalar_sigmoid<T: Real>(x: T) -> T {
    sigmoid(x)
}

pub fn scalar_softplus<T: Real>(x: T) -> T {
    softplus(x)
}

impl<'t, T: Real> Var<'t, T> {
    /// Elementwise map with derivative `df(x, y)` expressed in terms of the
    /// input and the output.
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let x = self.value_rc();
        let y = Rc::new(x.map(f));
        let y_keep = Rc::clone(&y);
        self.tape().record(y, &[self], move |g, _| {
            let data =
                g.data().iter().zip(x.data().iter().zip(y_keep.data())).map(|(&g, (&x, &y))| g * df(x, y)).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data))]
        })
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(|x| x.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn silu(&self) -> Var<'t, T> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Var<'t, T> {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::FRAC_1_SQRT_2();
        let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
        self.unary(
            move |x| half * x * (T::one() + (x * inv_sqrt2).erf()),
            move |x, _| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                cdf + x * pdf
            },
        )
    }

    pub fn softplus(&self) -> Var<'t, T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: T) -> Var<'t, T> {
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn add(&self, other: &Var<'t, T>) -> Var<'t, T> {
        let value = self.value().zip_map(other.value(), |a, b| a + b);
        self.tape()
            .record(value, &[self, other], |g, needs| vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())])
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Var<'t, T> {
        let value = self.value().zip_map(other.value(), |a, b| a - b);
        self.tape().record(value, &[self, other], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))]
        })
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Var<'t, T> {
        let a = self.value_rc();
        let b = other.value_rc();
        let value = a.zip_map(&b, |x, y| x * y);
        self.tape().record(value, &[self, other], move |g, needs| {
            vec![needs[0].then(|| g.zip_map(&b, |g, y| g * y)), needs[1].then(|| g.zip_map(&a, |g, x| g * x))]
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Var<'t, T> {
        let shape = self.shape().to_vec();
        let value = Tensor::scalar(self.value().sum());
        self.tape().record(value, &[self], move |g, _| vec![Some(Tensor::full(shape, g.data()[0]))])
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = T::from_usize(self.value().numel()).unwrap();
        self.sum().scale(T::one() / n)
    }

    /// `sum(self * weights)` for a constant weight tensor; used to project
    /// an arbitrary output onto a scalar in gradient checks.
    pub fn dot_const(&self, weights: &Tensor<T>) -> Var<'t, T> {
        assert_eq!(self.shape(), weights.shape(), "dot_const shape mismatch");
        let w = weights.clone();
        let value = Tensor::scalar(self.value().data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum());
        self.tape().record(value, &[self], move |g, _| {
            let s = g.data()[0];
            vec![Some(w.map(|v| v * s))]
        })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Var<'t, T> {
        let old = self.shape().to_vec();
        let value = self.value().clone().reshape(shape);
        self.tape().record(value, &[self], move |g, _| vec![Some(g.clone().reshape(old))])
    }
}
