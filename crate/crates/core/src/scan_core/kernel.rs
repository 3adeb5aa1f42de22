//! Production selective scan: one fused tape operation whose backward pass
//! recomputes states from per-chunk checkpoints instead of storing all of
//! them.

use skinmamba_tensor::{Real, Tensor, Var};

use super::params::SelectiveScanParams;
use crate::ctx::Ctx;
use crate::error::{shape, Error, Result};

/// Steps between stored hidden states.
const CHUNK: usize = 64;

/// `(B, L, C)` to `(B, C, L)`.
fn to_channel_major<T: Real>(v: &[T], b: usize, l: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    for bi in 0..b {
        for t in 0..l {
            for ch in 0..c {
                out[(bi * c + ch) * l + t] = v[(bi * l + t) * c + ch];
            }
        }
    }
    out
}

fn to_token_major<T: Real>(v: &[T], b: usize, l: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    for bi in 0..b {
        for ch in 0..c {
            for t in 0..l {
                out[(bi * l + t) * c + ch] = v[(bi * c + ch) * l + t];
            }
        }
    }
    out
}

struct Dims {
    b: usize,
    l: usize,
    c: usize,
    n: usize,
}

impl Dims {
    fn chunks(&self) -> usize {
        self.l.div_ceil(CHUNK)
    }
}

/// Forward recurrence. `x` and `delta` are channel-major `(B, C, L)`, `bc` is
/// `(B, L, 2N)`. Returns channel-major outputs and, when `keep` is set, the
/// state at the start of every chunk, `(B, C, chunks, N)`.
fn scan_forward<T: Real>(x: &[T], delta: &[T], a: &[T], bc: &[T], d: &[T], dm: &Dims, keep: bool) -> (Vec<T>, Vec<T>) {
    let Dims { b, l, c, n } = *dm;
    let nc = dm.chunks();
    let mut y = vec![T::zero(); b * c * l];
    let mut ckpt = if keep { vec![T::zero(); b * c * nc * n] } else { Vec::new() };
    let mut h = vec![T::zero(); n];
    for bi in 0..b {
        let bc_b = &bc[bi * l * 2 * n..(bi + 1) * l * 2 * n];
        for ch in 0..c {
            let row = (bi * c + ch) * l;
            let xs = &x[row..row + l];
            let ds = &delta[row..row + l];
            let a_c = &a[ch * n..(ch + 1) * n];
            let d_c = d[ch];
            h.iter_mut().for_each(|v| *v = T::zero());
            for t in 0..l {
                if keep && t % CHUNK == 0 {
                    let at = ((bi * c + ch) * nc + t / CHUNK) * n;
                    ckpt[at..at + n].copy_from_slice(&h);
                }
                let dt = ds[t];
                let xv = xs[t];
                let dx = dt * xv;
                let bt = &bc_b[t * 2 * n..t * 2 * n + n];
                let ct = &bc_b[t * 2 * n + n..(t + 1) * 2 * n];
                let mut acc = d_c * xv;
                for s in 0..n {
                    let hs = (dt * a_c[s]).fast_exp() * h[s] + dx * bt[s];
                    h[s] = hs;
                    acc += ct[s] * hs;
                }
                y[row + t] = acc;
            }
        }
    }
    (y, ckpt)
}

struct ScanGrads<T> {
    x: Vec<T>,
    delta: Vec<T>,
    a: Vec<T>,
    bc: Vec<T>,
    d: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn scan_backward<T: Real>(
    x: &[T],
    delta: &[T],
    a: &[T],
    bc: &[T],
    d: &[T],
    ckpt: &[T],
    gy: &[T],
    dm: &Dims,
) -> ScanGrads<T> {
    let Dims { b, l, c, n } = *dm;
    let nc = dm.chunks();
    let mut g = ScanGrads {
        x: vec![T::zero(); b * c * l],
        delta: vec![T::zero(); b * c * l],
        a: vec![T::zero(); c * n],
        bc: vec![T::zero(); b * l * 2 * n],
        d: vec![T::zero(); c],
    };
    // states[k] is the state after local step k - 1; states[0] the chunk start
    let mut states = vec![T::zero(); (CHUNK + 1) * n];
    let mut decay = vec![T::zero(); CHUNK * n];
    let mut carry = vec![T::zero(); n];
    for bi in 0..b {
        let bc_b = &bc[bi * l * 2 * n..(bi + 1) * l * 2 * n];
        let gbc_off = bi * l * 2 * n;
        for ch in 0..c {
            let row = (bi * c + ch) * l;
            let a_c = &a[ch * n..(ch + 1) * n];
            let d_c = d[ch];
            let mut ga = vec![T::zero(); n];
            let mut gd = T::zero();
            carry.iter_mut().for_each(|v| *v = T::zero());
            for k in (0..nc).rev() {
                let t0 = k * CHUNK;
                let t1 = (t0 + CHUNK).min(l);
                let at = ((bi * c + ch) * nc + k) * n;
                states[..n].copy_from_slice(&ckpt[at..at + n]);
                for t in t0..t1 {
                    let j = t - t0;
                    let dt = delta[row + t];
                    let dx = dt * x[row + t];
                    let bt = &bc_b[t * 2 * n..t * 2 * n + n];
                    for s in 0..n {
                        let e = (dt * a_c[s]).fast_exp();
                        decay[j * n + s] = e;
                        states[(j + 1) * n + s] = e * states[j * n + s] + dx * bt[s];
                    }
                }
                for t in (t0..t1).rev() {
                    let j = t - t0;
                    let gyt = gy[row + t];
                    let dt = delta[row + t];
                    let xv = x[row + t];
                    let bt = &bc_b[t * 2 * n..t * 2 * n + n];
                    let ct = &bc_b[t * 2 * n + n..(t + 1) * 2 * n];
                    let gb = gbc_off + t * 2 * n;
                    gd += gyt * xv;
                    let mut gx = gyt * d_c;
                    let mut gdt = T::zero();
                    for s in 0..n {
                        let prev = states[j * n + s];
                        let cur = states[(j + 1) * n + s];
                        let e = decay[j * n + s];
                        let gh = gyt * ct[s] + carry[s];
                        g.bc[gb + n + s] += gyt * cur;
                        let ghe = gh * e * prev;
                        gdt += ghe * a_c[s] + gh * bt[s] * xv;
                        ga[s] += ghe * dt;
                        g.bc[gb + s] += gh * dt * xv;
                        gx += gh * dt * bt[s];
                        carry[s] = gh * e;
                    }
                    g.x[row + t] = gx;
                    g.delta[row + t] = gdt;
                }
            }
            for s in 0..n {
                g.a[ch * n + s] += ga[s];
            }
            g.d[ch] += gd;
        }
    }
    g
}

/// Fused recurrence over already-projected operands: `x` and `delta` are
/// `(B, L, C)`, `a` is `(C, N)`, `bc` is `(B, L, 2N)` (B then C), `d` is
/// `(C)`.
fn scan_op<'t, T: Real>(
    x: &Var<'t, T>,
    delta: &Var<'t, T>,
    a: &Var<'t, T>,
    bc: &Var<'t, T>,
    d: &Var<'t, T>,
) -> Var<'t, T> {
    let (b, l, c) = x.value().dims3();
    let n = a.shape()[1];
    let dm = Dims { b, l, c, n };
    let xt = to_channel_major(x.value().data(), b, l, c);
    let dt = to_channel_major(delta.value().data(), b, l, c);
    let av = a.value_rc();
    let bcv = bc.value_rc();
    let dv = d.value_rc();
    let tracked = x.tape().is_recording() && [x, delta, a, bc, d].iter().any(|v| v.is_tracked());
    let (yt, ckpt) = scan_forward(&xt, &dt, av.data(), bcv.data(), dv.data(), &dm, tracked);
    let y = Tensor::new([b, l, c], to_token_major(&yt, b, l, c));
    x.tape().record(y, &[x, delta, a, bc, d], move |gy, _| {
        let gyt = to_channel_major(gy.data(), b, l, c);
        let g = scan_backward(&xt, &dt, av.data(), bcv.data(), dv.data(), &ckpt, &gyt, &dm);
        vec![
            Some(Tensor::new([b, l, c], to_token_major(&g.x, b, l, c))),
            Some(Tensor::new([b, l, c], to_token_major(&g.delta, b, l, c))),
            Some(Tensor::new([c, n], g.a)),
            Some(Tensor::new([b, l, 2 * n], g.bc)),
            Some(Tensor::new([c], g.d)),
        ]
    })
}

/// Selective scan of a `(B, L, C)` sequence.
pub fn selective_scan<'t, T: Real>(x: &Var<'t, T>, p: &SelectiveScanParams<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    p.check()?;
    let (_, l, c) = match x.shape() {
        [b, l, c] if *c == p.channels() && *l > 0 => (*b, *l, *c),
        s => return Err(shape(format!("scan input must be (B, L>0, {}), got {s:?}", p.channels()))),
    };
    if let Some(i) = x.value().data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite scan input at step {}", (i / c) % l)));
    }
    let delta = x.linear(&ctx.param(&p.delta_weight), Some(&ctx.param(&p.delta_bias))).softplus();
    let bc = x.linear(&ctx.param(&p.bc_weight), Some(&ctx.param(&p.bc_bias)));
    let a = ctx.param(&p.a_log).exp().scale(-T::one());
    let y = scan_op(x, &delta, &a, &bc, &ctx.param(&p.d));
    if let Some(i) = y.value().data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite scan output at step {}", (i / c) % l)));
    }
    Ok(y)
}
