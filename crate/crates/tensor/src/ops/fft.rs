use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Real, Tensor, Var};

/// Unnormalized 2-D DFT of `planes` contiguous `h x w` complex planes, in
/// place. `inverse` flips the exponent sign (no `1 / (h w)` factor).
fn dft2_in_place<T: Real>(buf: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    // every plane's rows in one call
    row.process(buf);
    if h == 1 {
        return;
    }
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); col.get_inplace_scratch_len()];
    for plane in buf.chunks_exact_mut(h * w) {
        for x in 0..w {
            for (y, v) in column.iter_mut().enumerate() {
                *v = plane[y * w + x];
            }
            col.process_with_scratch(&mut column, &mut scratch);
            for (y, v) in column.iter().enumerate() {
                plane[y * w + x] = *v;
            }
        }
    }
}

fn real_to_complex<T: Real>(x: &[T]) -> Vec<Complex<T>> {
    x.iter().map(|&v| Complex::new(v, T::zero())).collect()
}

/// Forward 2-D FFT of every `(h, w)` plane of a real NCHW tensor; returns the
/// real and imaginary parts.
pub fn fft2_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (_, _, h, w) = x.dims4();
    let mut buf = real_to_complex(x.data());
    dft2_in_place(&mut buf, h, w, false);
    let re = buf.iter().map(|c| c.re).collect();
    let im = buf.iter().map(|c| c.im).collect();
    (Tensor::new(x.shape().to_vec(), re), Tensor::new(x.shape().to_vec(), im))
}

/// Real part of the normalized inverse 2-D FFT of `re + i im`.
pub fn ifft2_real_part<T: Real>(re: &Tensor<T>, im: &Tensor<T>) -> Tensor<T> {
    assert_eq!(re.shape(), im.shape());
    let (_, _, h, w) = re.dims4();
    let mut buf: Vec<Complex<T>> = re.data().iter().zip(im.data()).map(|(&r, &i)| Complex::new(r, i)).collect();
    dft2_in_place(&mut buf, h, w, true);
    let norm = T::one() / T::from_usize(h * w).unwrap();
    Tensor::new(re.shape().to_vec(), buf.iter().map(|c| c.re * norm).collect())
}

/// Interleave per-batch `[re channels, im channels]` into one `2C` map.
fn stack<T: Real>(re: &[T], im: &[T], b: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * re.len());
    for bi in 0..b {
        out.extend_from_slice(&re[bi * c * p..(bi + 1) * c * p]);
        out.extend_from_slice(&im[bi * c * p..(bi + 1) * c * p]);
    }
    out
}

fn unstack<T: Real>(z: &[T], b: usize, c: usize, p: usize) -> (Vec<T>, Vec<T>) {
    let mut re = Vec::with_capacity(b * c * p);
    let mut im = Vec::with_capacity(b * c * p);
    for bi in 0..b {
        let zb = &z[bi * 2 * c * p..(bi + 1) * 2 * c * p];
        re.extend_from_slice(&zb[..c * p]);
        im.extend_from_slice(&zb[c * p..]);
    }
    (re, im)
}

impl<'t, T: Real> Var<'t, T> {
    /// 2-D FFT over the spatial axes; the complex result is returned as a
    /// real map with `2C` channels, real parts first.
    pub fn fft2_stacked(&self) -> Var<'t, T> {
        let (b, c, h, w) = self.value().dims4();
        let p = h * w;
        let (re, im) = fft2_forward(self.value());
        let value = Tensor::new([b, 2 * c, h, w], stack(re.data(), im.data(), b, c, p));
        self.tape().record(value, &[self], move |g, _| {
            // adjoint of the real-input DFT: Re(sum_k conj(F_kn) g_k)
            let (gr, gi) = unstack(g.data(), b, c, p);
            let mut buf: Vec<Complex<T>> = gr.iter().zip(&gi).map(|(&r, &i)| Complex::new(r, i)).collect();
            dft2_in_place(&mut buf, h, w, true);
            vec![Some(Tensor::new([b, c, h, w], buf.iter().map(|z| z.re).collect()))]
        })
    }

    /// Real part of the inverse 2-D FFT of a stacked `[re, im]` map produced
    /// by [`Var::fft2_stacked`] (or any `2C`-channel map).
    pub fn ifft2_real(&self) -> Var<'t, T> {
        let (b, c2, h, w) = self.value().dims4();
        assert!(c2 % 2 == 0, "ifft2_real expects an even channel count, got {c2}");
        let c = c2 / 2;
        let p = h * w;
        let (re, im) = unstack(self.value().data(), b, c, p);
        let out = ifft2_real_part(&Tensor::new([b, c, h, w], re), &Tensor::new([b, c, h, w], im));
        self.tape().record(out, &[self], move |g, _| {
            let (fr, fi) = fft2_forward(g);
            let norm = T::one() / T::from_usize(p).unwrap();
            let re: Vec<T> = fr.data().iter().map(|&v| v * norm).collect();
            let im: Vec<T> = fi.data().iter().map(|&v| v * norm).collect();
            vec![Some(Tensor::new([b, c2, h, w], stack(&re, &im, b, c, p)))]
        })
    }
}
