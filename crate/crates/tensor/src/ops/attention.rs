use crate::{gemm, Real, Tensor, Var};

/// Query rows processed per block; bounds the score buffer to
/// `BLOCK x length` regardless of sequence length.
const BLOCK: usize = 128;

impl<'t, T: Real> Var<'t, T> {
    /// Single-head scaled dot-product attention on `(batch, length, dim)`
    /// queries, keys and values.
    ///
    /// Scores are never materialized for the full sequence: forward keeps
    /// only the output and per-row log-sum-exp, and backward recomputes the
    /// score blocks.
    pub fn attention(&self, key: &Var<'t, T>, value: &Var<'t, T>) -> Var<'t, T> {
        let (b, l, d) = self.value().dims3();
        assert_eq!(key.value().dims3(), (b, l, d), "attention key shape");
        assert_eq!(value.value().dims3(), (b, l, d), "attention value shape");
        let scale = T::one() / T::from_usize(d).unwrap().sqrt();
        let q = self.value_rc();
        let k = key.value_rc();
        let v = value.value_rc();
        let mut out = vec![T::zero(); b * l * d];
        let mut lse = vec![T::zero(); b * l];
        let mut scores = vec![T::zero(); BLOCK.min(l) * l];
        let mut inv_sums = vec![T::zero(); BLOCK.min(l)];
        for bi in 0..b {
            let qb = &q.data()[bi * l * d..(bi + 1) * l * d];
            let kb = &k.data()[bi * l * d..(bi + 1) * l * d];
            let vb = &v.data()[bi * l * d..(bi + 1) * l * d];
            for r0 in (0..l).step_by(BLOCK) {
                let rows = BLOCK.min(l - r0);
                let s = &mut scores[..rows * l];
                gemm(false, true, rows, l, d, scale, &qb[r0 * d..(r0 + rows) * d], kb, T::zero(), s);
                for (i, row) in s.chunks_exact_mut(l).enumerate() {
                    let m = lane_max(row);
                    row.iter_mut().for_each(|x| *x = (*x - m).fast_exp());
                    let sum = lane_sum(row);
                    inv_sums[i] = T::one() / sum;
                    lse[bi * l + r0 + i] = m + sum.ln();
                }
                let ob = &mut out[(bi * l + r0) * d..(bi * l + r0 + rows) * d];
                gemm(false, false, rows, d, l, T::one(), s, vb, T::zero(), ob);
                // scores were left unnormalized
                for (orow, &inv) in ob.chunks_exact_mut(d).zip(&inv_sums) {
                    orow.iter_mut().for_each(|x| *x *= inv);
                }
            }
        }
        let out = Tensor::new([b, l, d], out);
        let out_keep = out.clone();
        self.tape().record(out, &[self, key, value], move |g, needs| {
            let mut dq = vec![T::zero(); b * l * d];
            let mut dk = vec![T::zero(); b * l * d];
            let mut dv = vec![T::zero(); b * l * d];
            let mut p = vec![T::zero(); BLOCK.min(l) * l];
            let mut dp = vec![T::zero(); BLOCK.min(l) * l];
            for bi in 0..b {
                let span = bi * l * d..(bi + 1) * l * d;
                let (qb, kb, vb) = (&q.data()[span.clone()], &k.data()[span.clone()], &v.data()[span.clone()]);
                let gb = &g.data()[span.clone()];
                let ob = &out_keep.data()[span.clone()];
                let (dqb, dkb, dvb) = (&mut dq[span.clone()], &mut dk[span.clone()], &mut dv[span]);
                for r0 in (0..l).step_by(BLOCK) {
                    let rows = BLOCK.min(l - r0);
                    let qblk = &qb[r0 * d..(r0 + rows) * d];
                    let gblk = &gb[r0 * d..(r0 + rows) * d];
                    let pb = &mut p[..rows * l];
                    gemm(false, true, rows, l, d, scale, qblk, kb, T::zero(), pb);
                    for (i, row) in pb.chunks_exact_mut(l).enumerate() {
                        let m = lse[bi * l + r0 + i];
                        row.iter_mut().for_each(|x| *x = (*x - m).fast_exp());
                    }
                    // dV += P^T dO
                    gemm(true, false, l, d, rows, T::one(), pb, gblk, T::one(), dvb);
                    let dpb = &mut dp[..rows * l];
                    gemm(false, true, rows, l, d, T::one(), gblk, vb, T::zero(), dpb);
                    for i in 0..rows {
                        let di: T = (0..d).map(|j| gblk[i * d + j] * ob[(r0 + i) * d + j]).sum();
                        for (dpv, &pv) in dpb[i * l..(i + 1) * l].iter_mut().zip(&pb[i * l..(i + 1) * l]) {
                            *dpv = pv * (*dpv - di);
                        }
                    }
                    gemm(false, false, rows, d, l, scale, dpb, kb, T::zero(), &mut dqb[r0 * d..(r0 + rows) * d]);
                    gemm(true, false, l, d, rows, scale, dpb, qblk, T::one(), dkb);
                }
            }
            vec![
                needs[0].then(|| Tensor::new([b, l, d], dq)),
                needs[1].then(|| Tensor::new([b, l, d], dk)),
                needs[2].then(|| Tensor::new([b, l, d], dv)),
            ]
        })
    }
}

/// Reduce with eight independent accumulators, which lets the loop
/// vectorize.
#[inline(always)]
fn lane_reduce<T: Real>(xs: &[T], init: T, f: impl Fn(T, T) -> T) -> T {
    let mut acc = [init; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder().iter().fold(init, |a, &x| f(a, x));
    for c in chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a = f(*a, x);
        }
    }
    acc.iter().fold(tail, |a, &x| f(a, x))
}

fn lane_sum<T: Real>(xs: &[T]) -> T {
    lane_reduce(xs, T::zero(), |a, b| a + b)
}

fn lane_max<T: Real>(xs: &[T]) -> T {
    lane_reduce(xs, T::neg_infinity(), |a, b| if b > a { b } else { a })
}
