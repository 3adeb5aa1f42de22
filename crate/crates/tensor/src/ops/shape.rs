use std::rc::Rc;

use crate::{Real, Tensor, Var};

fn to_seq<T: Real>(x: &[T], b: usize, c: usize, p: usize, perm: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); b * p * c];
    for bi in 0..b {
        let xb = &x[bi * c * p..(bi + 1) * c * p];
        let ob = &mut out[bi * p * c..(bi + 1) * p * c];
        for (t, &pix) in perm.iter().enumerate() {
            let row = &mut ob[t * c..(t + 1) * c];
            for (ch, v) in row.iter_mut().enumerate() {
                *v = xb[ch * p + pix];
            }
        }
    }
    out
}

fn from_seq<T: Real>(y: &[T], b: usize, c: usize, p: usize, perm: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); b * c * p];
    for bi in 0..b {
        let yb = &y[bi * p * c..(bi + 1) * p * c];
        let ob = &mut out[bi * c * p..(bi + 1) * c * p];
        for (t, &pix) in perm.iter().enumerate() {
            for (ch, &v) in yb[t * c..(t + 1) * c].iter().enumerate() {
                ob[ch * p + pix] = v;
            }
        }
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    /// Concatenate NCHW maps along the channel axis.
    pub fn concat_channels(parts: &[&Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let (b, _, h, w) = parts[0].value().dims4();
        let p = h * w;
        let widths: Vec<usize> = parts
            .iter()
            .map(|v| {
                let (vb, vc, vh, vw) = v.value().dims4();
                assert_eq!(
                    (vb, vh, vw),
                    (b, h, w),
                    "concat: incompatible shapes {:?} vs {:?}",
                    v.shape(),
                    parts[0].shape()
                );
                vc
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(b * total * p);
        for bi in 0..b {
            for (v, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&v.value().data()[bi * c * p..(bi + 1) * c * p]);
            }
        }
        let tape = parts[0].tape();
        tape.record(Tensor::new([b, total, h, w], out), parts, move |g, needs| {
            let mut offset = 0;
            widths
                .iter()
                .zip(needs)
                .map(|(&c, &need)| {
                    let start = offset;
                    offset += c;
                    need.then(|| {
                        let mut d = Vec::with_capacity(b * c * p);
                        for bi in 0..b {
                            d.extend_from_slice(&g.data()[(bi * total + start) * p..(bi * total + start + c) * p]);
                        }
                        Tensor::new([b, c, h, w], d)
                    })
                })
                .collect()
        })
    }

    /// Channels `start..start + len` of an NCHW map.
    pub fn slice_channels(&self, start: usize, len: usize) -> Var<'t, T> {
        let (b, c, h, w) = self.value().dims4();
        assert!(start + len <= c, "slice {start}..{} of {c} channels", start + len);
        let p = h * w;
        let mut out = Vec::with_capacity(b * len * p);
        for bi in 0..b {
            out.extend_from_slice(&self.value().data()[(bi * c + start) * p..(bi * c + start + len) * p]);
        }
        self.tape().record(Tensor::new([b, len, h, w], out), &[self], move |g, _| {
            let mut d = vec![T::zero(); b * c * p];
            for bi in 0..b {
                d[(bi * c + start) * p..(bi * c + start + len) * p]
                    .copy_from_slice(&g.data()[bi * len * p..(bi + 1) * len * p]);
            }
            vec![Some(Tensor::new([b, c, h, w], d))]
        })
    }

    /// Flatten an NCHW map into a `(batch, length, channels)` sequence whose
    /// step `t` is pixel `order[t]` (row-major pixel index).
    pub fn to_sequence(&self, order: Rc<[usize]>) -> Var<'t, T> {
        let (b, c, h, w) = self.value().dims4();
        let p = h * w;
        assert_eq!(order.len(), p, "scan order covers {} of {p} pixels", order.len());
        let out = to_seq(self.value().data(), b, c, p, &order);
        self.tape().record(Tensor::new([b, p, c], out), &[self], move |g, _| {
            vec![Some(Tensor::new([b, c, h, w], from_seq(g.data(), b, c, p, &order)))]
        })
    }

    /// Inverse of [`Var::to_sequence`].
    pub fn from_sequence(&self, order: Rc<[usize]>, height: usize, width: usize) -> Var<'t, T> {
        let (b, p, c) = self.value().dims3();
        assert_eq!(p, height * width);
        assert_eq!(order.len(), p);
        let out = from_seq(self.value().data(), b, c, p, &order);
        self.tape().record(Tensor::new([b, c, height, width], out), &[self], move |g, _| {
            vec![Some(Tensor::new([b, p, c], to_seq(g.data(), b, c, p, &order)))]
        })
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample_nearest2x(&self) -> Var<'t, T> {
        let (b, c, h, w) = self.value().dims4();
        let (h2, w2) = (2 * h, 2 * w);
        let x = self.value().data();
        let mut out = vec![T::zero(); b * c * h2 * w2];
        for plane in 0..b * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.tape().record(Tensor::new([b, c, h2, w2], out), &[self], move |g, _| {
            let mut d = vec![T::zero(); b * c * h * w];
            for plane in 0..b * c {
                let src = &g.data()[plane * h2 * w2..(plane + 1) * h2 * w2];
                let dst = &mut d[plane * h * w..(plane + 1) * h * w];
                for y in 0..h2 {
                    for xx in 0..w2 {
                        dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
                    }
                }
            }
            vec![Some(Tensor::new([b, c, h, w], d))]
        })
    }
}
