use std::rc::Rc;

use skinmamba_tensor::{Real, Tensor, Var};

use super::kernel::selective_scan;
use super::params::SelectiveScanParams;
use super::sequential::selective_scan_sequential;
use crate::ctx::Ctx;
use crate::error::{shape, Error, Result};
use crate::init::Init;
use crate::layers::LayerNorm2d;
use crate::module::impl_module;

/// Order in which a 2-D map is flattened into a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    RowForward,
    RowReverse,
    ColumnForward,
    ColumnReverse,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [Self::RowForward, Self::RowReverse, Self::ColumnForward, Self::ColumnReverse];

    /// `order[t]` is the row-major pixel index visited at step `t`.
    pub fn order(self, height: usize, width: usize) -> Vec<usize> {
        let p = height * width;
        let column = |t: usize| (t % height) * width + t / height;
        match self {
            Self::RowForward => (0..p).collect(),
            Self::RowReverse => (0..p).rev().collect(),
            Self::ColumnForward => (0..p).map(column).collect(),
            Self::ColumnReverse => (0..p).rev().map(column).collect(),
        }
    }
}

/// Four directional scans over a shared channel width, merged by summation,
/// plus the normalization applied to the merged result.
pub struct Ss2d<T: Real> {
    pub row_fwd: SelectiveScanParams<T>,
    pub row_rev: SelectiveScanParams<T>,
    pub col_fwd: SelectiveScanParams<T>,
    pub col_rev: SelectiveScanParams<T>,
    pub out_norm: LayerNorm2d<T>,
}

impl_module!(Ss2d { row_fwd, row_rev, col_fwd, col_rev, out_norm });

impl<T: Real> Ss2d<T> {
    pub fn new(init: &mut Init, channels: usize, state_dim: usize) -> Self {
        Self {
            row_fwd: SelectiveScanParams::new(init, channels, state_dim),
            row_rev: SelectiveScanParams::new(init, channels, state_dim),
            col_fwd: SelectiveScanParams::new(init, channels, state_dim),
            col_rev: SelectiveScanParams::new(init, channels, state_dim),
            out_norm: LayerNorm2d::new(channels),
        }
    }

    pub fn direction(&self, d: ScanDirection) -> &SelectiveScanParams<T> {
        match d {
            ScanDirection::RowForward => &self.row_fwd,
            ScanDirection::RowReverse => &self.row_rev,
            ScanDirection::ColumnForward => &self.col_fwd,
            ScanDirection::ColumnReverse => &self.col_rev,
        }
    }

    pub fn channels(&self) -> usize {
        self.row_fwd.channels()
    }
}

fn map_dims(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    match shape {
        [_, c, h, w] if *c == channels => {
            if h * w == 0 {
                Err(Error::Empty(format!("2-D scan over a {h}x{w} map")))
            } else {
                Ok((*h, *w))
            }
        }
        s => Err(shape_err(s, channels)),
    }
}

fn shape_err(s: &[usize], channels: usize) -> Error {
    shape(format!("2-D scan expects (B, {channels}, H, W), got {s:?}"))
}

/// Sum of the four directional selective scans of `f`, each mapped back to
/// the spatial layout. Shape is preserved; the output normalization is not
/// applied here.
pub fn ss2d<'t, T: Real>(f: &Var<'t, T>, p: &Ss2d<T>, ctx: &Ctx<'t, T>) -> Result<Var<'t, T>> {
    let (h, w) = map_dims(f.shape(), p.channels())?;
    let mut total: Option<Var<'t, T>> = None;
    for d in ScanDirection::ALL {
        let order: Rc<[usize]> = d.order(h, w).into();
        let seq = f.to_sequence(Rc::clone(&order));
        let y = selective_scan(&seq, p.direction(d), ctx)?.from_sequence(order, h, w);
        total = Some(match total {
            Some(acc) => acc.add(&y),
            None => y,
        });
    }
    Ok(total.expect("four directions"))
}

/// Double-precision reference for [`ss2d`] built on the sequential scan.
pub fn ss2d_sequential<T: Real>(f: &Tensor<T>, p: &Ss2d<T>) -> Result<Tensor<f64>> {
    let (h, w) = map_dims(f.shape(), p.channels())?;
    let (b, c, _, _) = f.dims4();
    let hw = h * w;
    let mut out = vec![0.0; b * c * hw];
    for d in ScanDirection::ALL {
        let order = d.order(h, w);
        let mut seq = Vec::with_capacity(b * hw * c);
        for bi in 0..b {
            for &pix in &order {
                for ch in 0..c {
                    seq.push(f.data()[(bi * c + ch) * hw + pix]);
                }
            }
        }
        let y = selective_scan_sequential(&Tensor::new([b, hw, c], seq), p.direction(d))?;
        for bi in 0..b {
            for (t, &pix) in order.iter().enumerate() {
                for ch in 0..c {
                    out[(bi * c + ch) * hw + pix] += y.data()[(bi * hw + t) * c + ch];
                }
            }
        }
    }
    Ok(Tensor::new([b, c, h, w], out))
}

#[cfg(test)]
mod tests {
    use skinmamba_tensor::Tape;

    use super::*;

    fn run(f: &Tensor<f64>, p: &Ss2d<f64>) -> Tensor<f64> {
        let tape = Tape::no_grad();
        ss2d(&tape.constant(f.clone()), p, &Ctx::eval(&tape)).unwrap().value().clone()
    }

    fn params(seed: u64, c: usize) -> Ss2d<f64> {
        Ss2d::new(&mut Init::new(seed), c, 4)
    }

    fn map(shape: [usize; 4], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + seed) * 0.7548776662).fract() * 2.0 - 1.0)
    }

    fn transpose(f: &Tensor<f64>) -> Tensor<f64> {
        let (b, c, h, w) = f.dims4();
        let mut out = vec![0.0; f.numel()];
        for plane in 0..b * c {
            for y in 0..h {
                for x in 0..w {
                    out[plane * h * w + x * h + y] = f.data()[plane * h * w + y * w + x];
                }
            }
        }
        Tensor::new([b, c, w, h], out)
    }

    fn rotate180(f: &Tensor<f64>) -> Tensor<f64> {
        let (b, c, h, w) = f.dims4();
        let p = h * w;
        let mut out = f.data().to_vec();
        for plane in out.chunks_exact_mut(p) {
            plane.reverse();
        }
        Tensor::new([b, c, h, w], out)
    }

    #[test]
    fn orders_are_bijections() {
        for (h, w) in [(1, 1), (3, 5), (4, 4), (7, 2)] {
            for d in ScanDirection::ALL {
                let mut o = d.order(h, w);
                o.sort_unstable();
                assert_eq!(o, (0..h * w).collect::<Vec<_>>(), "{d:?} on {h}x{w}");
            }
        }
    }

    #[test]
    fn column_order_walks_down_columns() {
        assert_eq!(ScanDirection::ColumnForward.order(2, 3), [0, 3, 1, 4, 2, 5]);
        assert_eq!(ScanDirection::ColumnReverse.order(2, 3), [5, 2, 4, 1, 3, 0]);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let y = run(&Tensor::zeros([1, 3, 4, 5]), &params(1, 3));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_is_sum_of_four_single_steps() {
        let p = params(2, 3);
        let f = map([1, 3, 1, 1], 0.3);
        let token: Vec<f64> = f.data().to_vec();
        let mut want = [0.0; 3];
        for d in ScanDirection::ALL {
            let q = p.direction(d);
            let delta = q.step_sizes_f64(&token);
            let (bm, cm) = q.bc_f64(&token);
            for ch in 0..3 {
                let x = token[ch];
                want[ch] +=
                    (0..q.state_dim()).map(|s| cm[s] * delta[ch] * bm[s] * x).sum::<f64>() + q.d.value.data()[ch] * x;
            }
        }
        let got = run(&f, &p);
        for ch in 0..3 {
            assert!((got.data()[ch] - want[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_sequential_reference() {
        let p = params(3, 2);
        let f = map([2, 2, 5, 3], 0.1);
        assert!(run(&f, &p).max_abs_diff(&ss2d_sequential(&f, &p).unwrap()) < 1e-10);
    }

    #[test]
    fn transpose_symmetry_swaps_row_and_column_parameters() {
        let p = params(4, 2);
        let f = map([1, 2, 4, 4], 0.2);
        let q = Ss2d {
            row_fwd: p.col_fwd.clone(),
            row_rev: p.col_rev.clone(),
            col_fwd: p.row_fwd.clone(),
            col_rev: p.row_rev.clone(),
            out_norm: LayerNorm2d::new(2),
        };
        let lhs = run(&transpose(&f), &q);
        let rhs = transpose(&run(&f, &p));
        assert!(lhs.max_abs_diff(&rhs) < 1e-5);
    }

    #[test]
    fn rotation_symmetry_swaps_forward_and_reverse_parameters() {
        let p = params(5, 2);
        let f = map([1, 2, 3, 5], 0.4);
        let q = Ss2d {
            row_fwd: p.row_rev.clone(),
            row_rev: p.row_fwd.clone(),
            col_fwd: p.col_rev.clone(),
            col_rev: p.col_fwd.clone(),
            out_norm: LayerNorm2d::new(2),
        };
        let lhs = run(&rotate180(&f), &q);
        let rhs = rotate180(&run(&f, &p));
        assert!(lhs.max_abs_diff(&rhs) < 1e-5);
    }

    #[test]
    fn empty_map_is_rejected() {
        let p = params(0, 2);
        let tape = Tape::<f64>::no_grad();
        let err = ss2d(&tape.constant(Tensor::zeros([1, 2, 0, 3])), &p, &Ctx::eval(&tape));
        assert!(matches!(err, Err(Error::Empty(_))));
    }
}
