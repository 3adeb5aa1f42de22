use crate::{gemm, Real, Tensor, Var};

/// Stride, zero padding and grouping of a 2-D convolution.
///
/// Only `groups == 1` and depthwise (`groups == in_channels == out_channels`)
/// are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub const fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, groups: 1 }
    }

    pub const fn depthwise(kernel: usize, channels: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, groups: channels }
    }

    pub const fn strided(stride: usize) -> Self {
        Self { stride, padding: 0, groups: 1 }
    }

    pub fn output_size(&self, size: usize, kernel: usize) -> usize {
        assert!(size + 2 * self.padding >= kernel, "kernel {kernel} larger than padded input {size}");
        (size + 2 * self.padding - kernel) / self.stride + 1
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

/// Unfold one `(c, h, w)` image into a `(c * kh * kw, ho * wo)` patch matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let g = Geometry { c, h, w, kh, kw, ho, wo, stride, pad };
    let mut cols = vec![T::zero(); c * kh * kw * ho * wo];
    unfold(x, &g, &mut cols);
    cols
}

/// Adjoint of [`im2col`]: accumulate a patch matrix back onto an image.
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let g = Geometry { c, h, w, kh, kw, ho, wo, stride, pad };
    let mut x = vec![T::zero(); c * h * w];
    fold(cols, &g, &mut x);
    x
}

fn unfold<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.ho * g.wo;
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ch * g.kh + ky) * g.kw + kx) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // contiguous run with zero fill at the borders
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox + kx) as isize - g.pad as isize;
                            *v = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { T::zero() };
                        }
                    } else {
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *v = if ix >= 0 && ix < g.w as isize { src[ix as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

fn fold<T: Real>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let p = g.ho * g.wo;
    for ch in 0..g.c {
        let plane = &mut x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ch * g.kh + ky) * g.kw + kx) * p;
                let src = &cols[row..row + p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// 2-D convolution of an NCHW input with an `[out, in / groups, kh, kw]`
    /// kernel.
    pub fn conv2d(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>, spec: Conv2dSpec) -> Var<'t, T> {
        let (b, cin, h, w) = self.value().dims4();
        let (cout, cin_g, kh, kw) = weight.value().dims4();
        if spec.groups == 1 {
            assert_eq!(cin, cin_g, "conv2d: input has {cin} channels, kernel expects {cin_g}");
        } else {
            assert!(
                spec.groups == cin && cin == cout && cin_g == 1,
                "conv2d: only depthwise grouping is supported (groups {}, in {cin}, out {cout}, kernel {:?})",
                spec.groups,
                weight.shape()
            );
        }
        if let Some(bias) = bias {
            assert_eq!(bias.shape(), [cout], "conv2d bias shape");
        }
        let g = Geometry {
            c: cin,
            h,
            w,
            kh,
            kw,
            ho: spec.output_size(h, kh),
            wo: spec.output_size(w, kw),
            stride: spec.stride,
            pad: spec.padding,
        };
        let x = self.value_rc();
        let wt = weight.value_rc();
        let bias_vals: Option<Vec<T>> = bias.map(|b| b.value().data().to_vec());
        let out = if spec.groups == 1 {
            dense_forward(&x, &wt, bias_vals.as_deref(), &g, b, cout)
        } else {
            depthwise_forward(&x, &wt, bias_vals.as_deref(), &g, b)
        };

        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let has_bias = bias.is_some();
        let depthwise = spec.groups != 1;
        self.tape().record(out, &inputs, move |gy, needs| {
            let (dx, dw) = if depthwise {
                depthwise_backward(&x, &wt, gy, &g, b, needs[0], needs[1])
            } else {
                dense_backward(&x, &wt, gy, &g, b, cout, needs[0], needs[1])
            };
            let mut grads = vec![dx, dw];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let p = g.ho * g.wo;
                    let mut db = vec![T::zero(); cout];
                    for bi in 0..b {
                        for (co, d) in db.iter_mut().enumerate() {
                            let off = (bi * cout + co) * p;
                            *d += gy.data()[off..off + p].iter().copied().sum::<T>();
                        }
                    }
                    Tensor::new([cout], db)
                }));
            }
            grads
        })
    }
}

fn is_pointwise(g: &Geometry) -> bool {
    g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0
}

fn dense_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    g: &Geometry,
    batch: usize,
    cout: usize,
) -> Tensor<T> {
    let p = g.ho * g.wo;
    let kdim = g.c * g.kh * g.kw;
    let mut out = vec![T::zero(); batch * cout * p];
    let mut cols = if is_pointwise(g) { Vec::new() } else { vec![T::zero(); kdim * p] };
    for bi in 0..batch {
        let xb = &x.data()[bi * g.c * g.h * g.w..(bi + 1) * g.c * g.h * g.w];
        let ob = &mut out[bi * cout * p..(bi + 1) * cout * p];
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                ob[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let src: &[T] = if is_pointwise(g) {
            xb
        } else {
            unfold(xb, g, &mut cols);
            &cols
        };
        gemm(false, false, cout, p, kdim, T::one(), w.data(), src, beta, ob);
    }
    Tensor::new([batch, cout, g.ho, g.wo], out)
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    g: &Geometry,
    batch: usize,
    cout: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let p = g.ho * g.wo;
    let kdim = g.c * g.kh * g.kw;
    let plane = g.c * g.h * g.w;
    let mut dx = need_x.then(|| vec![T::zero(); batch * plane]);
    let mut dw = need_w.then(|| vec![T::zero(); cout * kdim]);
    let pointwise = is_pointwise(g);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); kdim * p] };
    let mut dcols = if need_x && !pointwise { vec![T::zero(); kdim * p] } else { Vec::new() };
    for bi in 0..batch {
        let gyb = &gy.data()[bi * cout * p..(bi + 1) * cout * p];
        let xb = &x.data()[bi * plane..(bi + 1) * plane];
        if let Some(dw) = dw.as_mut() {
            let src: &[T] = if pointwise {
                xb
            } else {
                unfold(xb, g, &mut cols);
                &cols
            };
            gemm(false, true, cout, kdim, p, T::one(), gyb, src, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[bi * plane..(bi + 1) * plane];
            if pointwise {
                gemm(true, false, kdim, p, cout, T::one(), w.data(), gyb, T::zero(), dxb);
            } else {
                gemm(true, false, kdim, p, cout, T::one(), w.data(), gyb, T::zero(), &mut dcols);
                fold(&dcols, g, dxb);
            }
        }
    }
    (dx.map(|d| Tensor::new([batch, g.c, g.h, g.w], d)), dw.map(|d| Tensor::new([cout, g.c, g.kh, g.kw], d)))
}

fn depthwise_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&[T]>,
    g: &Geometry,
    batch: usize,
) -> Tensor<T> {
    let mut out = vec![T::zero(); batch * g.c * g.ho * g.wo];
    for bi in 0..batch {
        for ch in 0..g.c {
            let xp = &x.data()[(bi * g.c + ch) * g.h * g.w..][..g.h * g.w];
            let kp = &w.data()[ch * g.kh * g.kw..][..g.kh * g.kw];
            let op = &mut out[(bi * g.c + ch) * g.ho * g.wo..][..g.ho * g.wo];
            let b0 = bias.map_or(T::zero(), |b| b[ch]);
            op.iter_mut().for_each(|v| *v = b0);
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let k = kp[ky * g.kw + kx];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let row = &xp[iy as usize * g.w..][..g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                op[oy * g.wo + ox] += k * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([batch, g.c, g.ho, g.wo], out)
}

fn depthwise_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    g: &Geometry,
    batch: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let mut dx = need_x.then(|| vec![T::zero(); batch * g.c * g.h * g.w]);
    let mut dw = need_w.then(|| vec![T::zero(); g.c * g.kh * g.kw]);
    for bi in 0..batch {
        for ch in 0..g.c {
            let xoff = (bi * g.c + ch) * g.h * g.w;
            let xp = &x.data()[xoff..xoff + g.h * g.w];
            let kp = &w.data()[ch * g.kh * g.kw..][..g.kh * g.kw];
            let gp = &gy.data()[(bi * g.c + ch) * g.ho * g.wo..][..g.ho * g.wo];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let k = kp[ky * g.kw + kx];
                    let mut acc = T::zero();
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let gv = gp[oy * g.wo + ox];
                                acc += gv * xp[iy * g.w + ix as usize];
                                if let Some(dx) = dx.as_mut() {
                                    dx[xoff + iy * g.w + ix as usize] += gv * k;
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        dw[(ch * g.kh + ky) * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    (dx.map(|d| Tensor::new([batch, g.c, g.h, g.w], d)), dw.map(|d| Tensor::new([g.c, 1, g.kh, g.kw], d)))
}

#[cfg(test)]
mod tests {
    use crate::gradcheck::{compare, projection, sample_coords};
    use crate::{Tape, Tensor};

    use super::*;

    /// Direct six-loop convolution, independent of im2col.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, spec: Conv2dSpec) -> Tensor<f64> {
        let (b, cin, h, wd) = x.dims4();
        let (cout, cg, kh, kw) = w.dims4();
        let ho = spec.output_size(h, kh);
        let wo = spec.output_size(wd, kw);
        Tensor::from_fn([b, cout, ho, wo], |i| {
            let ox = i % wo;
            let oy = (i / wo) % ho;
            let co = (i / (wo * ho)) % cout;
            let bi = i / (wo * ho * cout);
            let mut s = 0.0;
            for ci in 0..cg {
                let src_c = if spec.groups == 1 { ci } else { co };
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            s += x.at(&[bi, src_c, iy as usize, ix as usize]) * w.at(&[co, ci, ky, kx]);
                        }
                    }
                }
            }
            let _ = cin;
            s
        })
    }

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, spec: Conv2dSpec) -> Tensor<f64> {
        let tape = Tape::no_grad();
        tape.constant(x.clone()).conv2d(&tape.constant(w.clone()), None, spec).value().clone()
    }

    #[test]
    fn matches_naive_for_all_used_geometries() {
        let cases = [
            (3, 4, 3, Conv2dSpec::same(3)),
            (4, 4, 5, Conv2dSpec::same(5)),
            (4, 6, 1, Conv2dSpec::same(1)),
            (4, 8, 2, Conv2dSpec::strided(2)),
            (5, 5, 3, Conv2dSpec::depthwise(3, 5)),
        ];
        for (cin, cout, k, spec) in cases {
            let x = projection(&[2, cin, 6, 6]);
            let cg = if spec.groups == 1 { cin } else { 1 };
            let w = projection(&[cout, cg, k, k]).map(|v| v * 1.7);
            let got = run(&x, &w, spec);
            let want = naive_conv(&x, &w, spec);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "spec {spec:?}");
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = projection(&[3, 5, 4]);
        let cols = im2col(x.data(), 3, 5, 4, 3, 3, 2, 1);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let back = col2im(&y, 3, 5, 4, 3, 3, 2, 1);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_gradients() {
        for (cin, cout, k, spec) in [
            (2, 3, 3, Conv2dSpec::same(3)),
            (3, 3, 3, Conv2dSpec::depthwise(3, 3)),
            (2, 4, 2, Conv2dSpec::strided(2)),
            (3, 2, 1, Conv2dSpec::same(1)),
        ] {
            let cg = if spec.groups == 1 { cin } else { 1 };
            let x0 = projection(&[2, cin, 4, 4]);
            let w0 = projection(&[cout, cg, k, k]).map(|v| v + 0.05);
            let b0 = projection(&[cout]);
            let tape = Tape::new();
            let (x, w, b) = (tape.leaf(x0.clone()), tape.leaf(w0.clone()), tape.leaf(b0.clone()));
            let y = x.conv2d(&w, Some(&b), spec);
            let proj = projection(y.shape()).map(|v| v * 2.0 + 0.1);
            let grads = tape.backward(&y.dot_const(&proj));
            let eval = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
                let t = Tape::no_grad();
                let y = t.constant(x.clone()).conv2d(&t.constant(w.clone()), Some(&t.constant(b.clone())), spec);
                y.value().data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let rx =
                compare(grads.wrt(&x).unwrap(), &mut |p| eval(p, &w0, &b0), &x0, &sample_coords(x0.numel(), 40), 1e-6);
            let rw =
                compare(grads.wrt(&w).unwrap(), &mut |p| eval(&x0, p, &b0), &w0, &sample_coords(w0.numel(), 40), 1e-6);
            let rb = compare(grads.wrt(&b).unwrap(), &mut |p| eval(&x0, &w0, p), &b0, &sample_coords(cout, 8), 1e-6);
            assert!(rx.max_rel() < 1e-6, "{spec:?} dx {}", rx.max_rel());
            assert!(rw.max_rel() < 1e-6, "{spec:?} dw {}", rw.max_rel());
            assert!(rb.max_rel() < 1e-6, "{spec:?} db {}", rb.max_rel());
        }
    }
}
