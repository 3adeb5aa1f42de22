use crate::{gemm, Real, Tensor, Var};

impl<'t, T: Real> Var<'t, T> {
    /// Affine map over the last axis: `y = x W^T + b` with `W` of shape
    /// `[out, in]`.
    pub fn linear(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>) -> Var<'t, T> {
        let x = self.value_rc();
        let w = weight.value_rc();
        let (n_out, k) = match w.shape() {
            [o, i] => (*o, *i),
            s => panic!("linear weight must be rank 2, got {s:?}"),
        };
        let in_shape = x.shape().to_vec();
        assert_eq!(*in_shape.last().unwrap(), k, "linear: input {in_shape:?} vs weight {:?}", w.shape());
        let rows = x.numel() / k;
        let mut out = vec![T::zero(); rows * n_out];
        gemm(false, true, rows, n_out, k, T::one(), x.data(), w.data(), T::zero(), &mut out);
        if let Some(b) = bias {
            let b = b.value();
            assert_eq!(b.shape(), [n_out], "linear bias shape");
            for row in out.chunks_exact_mut(n_out) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let mut out_shape = in_shape.clone();
        *out_shape.last_mut().unwrap() = n_out;
        let value = Tensor::new(out_shape, out);

        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let has_bias = bias.is_some();
        self.tape().record(value, &inputs, move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); rows * k];
                gemm(false, false, rows, k, n_out, T::one(), gd, w.data(), T::zero(), &mut dx);
                Tensor::new(in_shape.clone(), dx)
            });
            let dw = needs[1].then(|| {
                let mut dw = vec![T::zero(); n_out * k];
                gemm(true, false, n_out, k, rows, T::one(), gd, x.data(), T::zero(), &mut dw);
                Tensor::new([n_out, k], dw)
            });
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut db = vec![T::zero(); n_out];
                    for row in gd.chunks_exact(n_out) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    Tensor::new([n_out], db)
                }));
            }
            grads
        })
    }
}
