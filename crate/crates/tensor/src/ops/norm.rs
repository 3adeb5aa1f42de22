use crate::{Real, Tensor, Var};

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

impl<'t, T: Real> Var<'t, T> {
    /// Layer norm across the channel axis of an NCHW map, independently at
    /// every pixel, with per-channel affine `gamma`, `beta`.
    pub fn layer_norm_channels(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: T) -> Var<'t, T> {
        let (b, c, h, w) = self.value().dims4();
        assert_eq!(gamma.shape(), [c], "layer norm gamma");
        assert_eq!(beta.shape(), [c], "layer norm beta");
        let p = h * w;
        let x = self.value().data();
        let gv = gamma.value().data().to_vec();
        let bv = beta.value().data();
        let inv_c = T::one() / T::from_usize(c).unwrap();
        let mut xhat = vec![T::zero(); b * c * p];
        let mut rstd = vec![T::zero(); b * p];
        let mut out = vec![T::zero(); b * c * p];
        let mut mean = vec![T::zero(); p];
        let mut var = vec![T::zero(); p];
        for bi in 0..b {
            let base = bi * c * p;
            mean.iter_mut().for_each(|v| *v = T::zero());
            var.iter_mut().for_each(|v| *v = T::zero());
            for ch in 0..c {
                for (m, &v) in mean.iter_mut().zip(&x[base + ch * p..base + (ch + 1) * p]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_c);
            for ch in 0..c {
                for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(&x[base + ch * p..base + (ch + 1) * p]) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            let rs = &mut rstd[bi * p..(bi + 1) * p];
            for (r, &v) in rs.iter_mut().zip(&var) {
                *r = T::one() / (v * inv_c + eps).sqrt();
            }
            for ch in 0..c {
                let range = base + ch * p..base + (ch + 1) * p;
                for (((xh, o), &v), (&m, &r)) in xhat[range.clone()]
                    .iter_mut()
                    .zip(&mut out[range.clone()])
                    .zip(&x[range])
                    .zip(mean.iter().zip(rs.iter()))
                {
                    *xh = (v - m) * r;
                    *o = *xh * gv[ch] + bv[ch];
                }
            }
        }
        let value = Tensor::new([b, c, h, w], out);
        self.tape().record(value, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = needs[0].then(|| vec![T::zero(); b * c * p]);
            let mut m1 = vec![T::zero(); p];
            let mut m2 = vec![T::zero(); p];
            for bi in 0..b {
                let base = bi * c * p;
                m1.iter_mut().for_each(|v| *v = T::zero());
                m2.iter_mut().for_each(|v| *v = T::zero());
                for ch in 0..c {
                    let range = base + ch * p..base + (ch + 1) * p;
                    let (mut sg, mut sb) = (T::zero(), T::zero());
                    for (k, (&gy, &xh)) in gd[range.clone()].iter().zip(&xhat[range]).enumerate() {
                        sg += gy * xh;
                        sb += gy;
                        let dxh = gy * gv[ch];
                        m1[k] += dxh;
                        m2[k] += dxh * xh;
                    }
                    dgamma[ch] += sg;
                    dbeta[ch] += sb;
                }
                if let Some(dx) = dx.as_mut() {
                    let rs = &rstd[bi * p..(bi + 1) * p];
                    for ch in 0..c {
                        let range = base + ch * p..base + (ch + 1) * p;
                        for (k, ((d, &gy), &xh)) in
                            dx[range.clone()].iter_mut().zip(&gd[range.clone()]).zip(&xhat[range]).enumerate()
                        {
                            let dxh = gy * gv[ch];
                            *d = rs[k] * (dxh - m1[k] * inv_c - xh * m2[k] * inv_c);
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::new([b, c, h, w], d)),
                needs[1].then(|| Tensor::new([c], dgamma)),
                needs[2].then(|| Tensor::new([c], dbeta)),
            ]
        })
    }

    /// Training-mode batch norm over `(batch, height, width)` per channel.
    pub fn batch_norm_train(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: T) -> (Var<'t, T>, BatchStats<T>) {
        let (b, c, h, w) = self.value().dims4();
        assert_eq!(gamma.shape(), [c], "batch norm gamma");
        assert_eq!(beta.shape(), [c], "batch norm beta");
        let p = h * w;
        let n = b * p;
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let x = self.value().data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                let s: T = x[(bi * c + ch) * p..][..p].iter().copied().sum();
                mean[ch] += s;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_n);
        for bi in 0..b {
            for ch in 0..c {
                let m = mean[ch];
                let s: T = x[(bi * c + ch) * p..][..p].iter().map(|&v| (v - m) * (v - m)).sum();
                var[ch] += s;
            }
        }
        var.iter_mut().for_each(|v| *v *= inv_n);
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = gamma.value().data().to_vec();
        let bv = beta.value().data().to_vec();
        let mut xhat = vec![T::zero(); b * c * p];
        let mut out = vec![T::zero(); b * c * p];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * p;
                for k in off..off + p {
                    xhat[k] = (x[k] - mean[ch]) * rstd[ch];
                    out[k] = xhat[k] * gv[ch] + bv[ch];
                }
            }
        }
        let stats = BatchStats { mean, var, count: n };
        let value = Tensor::new([b, c, h, w], out);
        let y = self.tape().record(value, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for bi in 0..b {
                for ch in 0..c {
                    let off = (bi * c + ch) * p;
                    for k in off..off + p {
                        sum_g[ch] += gd[k];
                        sum_gx[ch] += gd[k] * xhat[k];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); b * c * p];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * p;
                        let scale = gv[ch] * rstd[ch];
                        let mg = sum_g[ch] * inv_n;
                        let mgx = sum_gx[ch] * inv_n;
                        for k in off..off + p {
                            dx[k] = scale * (gd[k] - mg - xhat[k] * mgx);
                        }
                    }
                }
                Tensor::new([b, c, h, w], dx)
            });
            vec![dx, needs[1].then(|| Tensor::new([c], sum_gx)), needs[2].then(|| Tensor::new([c], sum_g))]
        });
        (y, stats)
    }

    /// `y[b, c] = x[b, c] * scale[c] + shift[c]` with constant coefficients.
    pub fn channel_affine(&self, scale: &[T], shift: &[T]) -> Var<'t, T> {
        let (b, c, h, w) = self.value().dims4();
        assert_eq!(scale.len(), c);
        assert_eq!(shift.len(), c);
        let p = h * w;
        let mut out = self.value().data().to_vec();
        for bi in 0..b {
            for ch in 0..c {
                for v in &mut out[(bi * c + ch) * p..][..p] {
                    *v = *v * scale[ch] + shift[ch];
                }
            }
        }
        let scale = scale.to_vec();
        self.tape().record(Tensor::new([b, c, h, w], out), &[self], move |g, _| {
            let mut dx = g.data().to_vec();
            for bi in 0..b {
                for ch in 0..c {
                    for v in &mut dx[(bi * c + ch) * p..][..p] {
                        *v *= scale[ch];
                    }
                }
            }
            vec![Some(Tensor::new([b, c, h, w], dx))]
        })
    }
}
