use image::imageops::{self, FilterType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skinmamba_tensor::Tensor;

use super::Sample;
use crate::error::{shape, Error, Result};

const ORDER_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Per-channel statistics of `[0, 1]`-scaled train images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.0; 3], std: [1.0; 3] }
    }
}

impl Normalization {
    /// Population mean and standard deviation over every pixel. A channel
    /// with no spread keeps unit scale.
    pub fn from_prepared(items: &[Prepared]) -> Result<Self> {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0u64;
        for p in items {
            for px in p.image.chunks_exact(3) {
                for c in 0..3 {
                    let v = f64::from(px[c]) / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += (p.width * p.height) as u64;
        }
        if n == 0 {
            return Err(Error::Empty("normalization needs at least one pixel".into()));
        }
        let mut out = Self::default();
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let std = (sq[c] / n as f64 - mean * mean).max(0.0).sqrt();
            out.mean[c] = mean as f32;
            out.std[c] = if std > 1e-6 { std as f32 } else { 1.0 };
        }
        Ok(out)
    }
}

/// A sample resized to the network input size: interleaved RGB bytes and
/// a 0/1 mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub image: Vec<u8>,
    pub mask: Vec<u8>,
}

/// Bilinear resize for the image, nearest for the mask. Inputs already at
/// `size` are copied unchanged.
pub fn resize_pair(s: &Sample, size: [usize; 2]) -> Result<Prepared> {
    let (w, h) = s.image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Empty(format!("{}: image has no pixels", s.id)));
    }
    let [th, tw] = size;
    if th == 0 || tw == 0 {
        return Err(shape(format!("cannot resize {} to {th}x{tw}", s.id)));
    }
    let (image, mask) = if (h as usize, w as usize) == (th, tw) {
        (s.image.as_raw().clone(), s.mask.as_raw().clone())
    } else {
        (
            imageops::resize(&s.image, tw as u32, th as u32, FilterType::Triangle).into_raw(),
            imageops::resize(&s.mask, tw as u32, th as u32, FilterType::Nearest).into_raw(),
        )
    };
    Ok(Prepared { id: s.id.clone(), height: th, width: tw, image, mask })
}

/// Channel-first `(3, H, W)` normalized image and `(1, H, W)` 0/1 mask.
pub fn to_tensors(p: &Prepared, norm: &Normalization) -> (Tensor<f32>, Tensor<f32>) {
    let hw = p.height * p.width;
    let mut img = vec![0f32; 3 * hw];
    for (i, px) in p.image.chunks_exact(3).enumerate() {
        for c in 0..3 {
            img[c * hw + i] = (f32::from(px[c]) / 255.0 - norm.mean[c]) / norm.std[c];
        }
    }
    let mask = p.mask.iter().map(|&m| f32::from(u8::from(m > 0))).collect();
    (Tensor::new([3, p.height, p.width], img), Tensor::new([1, p.height, p.width], mask))
}

pub fn preprocess(s: &Sample, size: [usize; 2], norm: &Normalization) -> Result<(Tensor<f32>, Tensor<f32>)> {
    Ok(to_tensors(&resize_pair(s, size)?, norm))
}

/// Flips followed by counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Geometric {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Geometric {
    pub const IDENTITY: Self = Self { hflip: false, vflip: false, quarter_turns: 0 };

    /// Each flip with probability 1/2 and a uniform number of quarter
    /// turns. Non-square inputs only take half turns so shapes survive.
    pub fn sample(rng: &mut impl Rng, square: bool) -> Self {
        let hflip = rng.gen_bool(0.5);
        let vflip = rng.gen_bool(0.5);
        let quarter_turns = if square { rng.gen_range(0..4) } else { 2 * rng.gen_range(0..2) };
        Self { hflip, vflip, quarter_turns }
    }

    /// Apply to a `(C, H, W)` tensor.
    pub fn apply(&self, t: &Tensor<f32>) -> Tensor<f32> {
        let (c, h, w) = t.dims3();
        let src = t.data();
        let turns = self.quarter_turns % 4;
        let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
        Tensor::from_fn([c, oh, ow], |i| {
            let (ch, y, x) = (i / (oh * ow), (i / ow) % oh, i % ow);
            // Undo the rotation, then the flips.
            let (mut sy, mut sx) = match turns {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            if self.vflip {
                sy = h - 1 - sy;
            }
            if self.hflip {
                sx = w - 1 - sx;
            }
            src[(ch * h + sy) * w + sx]
        })
    }
}

/// The same random geometric transform applied to a `(3, H, W)` image and
/// its `(1, H, W)` mask.
pub fn augment(image: &Tensor<f32>, mask: &Tensor<f32>, rng: &mut impl Rng) -> (Tensor<f32>, Tensor<f32>) {
    let (_, h, w) = image.dims3();
    let g = Geometric::sample(rng, h == w);
    (g.apply(image), g.apply(mask))
}

/// Augmentation randomness for one sample in one epoch, independent of
/// batch composition and worker count.
pub fn augment_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Sample visiting order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ORDER_STREAM_SALT);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Stack `(C, H, W)` pairs into `(B, C, H, W)` batches.
pub fn batch(items: &[(Tensor<f32>, Tensor<f32>)]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (first_x, first_y) = items.first().ok_or_else(|| Error::Empty("cannot batch zero samples".into()))?;
    let mut xs = Vec::with_capacity(items.len() * first_x.numel());
    let mut ys = Vec::with_capacity(items.len() * first_y.numel());
    for (x, y) in items {
        if x.shape() != first_x.shape() || y.shape() != first_y.shape() {
            return Err(shape(format!("batch mixes {:?} with {:?}", first_x.shape(), x.shape())));
        }
        xs.extend_from_slice(x.data());
        ys.extend_from_slice(y.data());
    }
    let with_batch = |s: &[usize]| [&[items.len()][..], s].concat();
    Ok((Tensor::new(with_batch(first_x.shape()), xs), Tensor::new(with_batch(first_y.shape()), ys)))
}

#[cfg(test)]
mod tests {
    use image::{GrayImage, Luma, Rgb, RgbImage};
    use proptest::prelude::*;

    use super::*;

    fn sample(w: u32, h: u32) -> Sample {
        let image = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 + y * 3) as u8, (x * y) as u8, 200]));
        let mask = GrayImage::from_fn(w, h, |x, y| Luma([if (x + y) % 3 == 0 { 255 } else { 0 }]));
        Sample::new("s", image, mask).unwrap()
    }

    fn chw(c: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn([c, h, w], |i| i as f32)
    }

    #[test]
    fn preprocess_produces_channel_first_tensors() {
        let (x, y) = preprocess(&sample(300, 200), [224, 224], &Normalization::default()).unwrap();
        assert_eq!(x.shape(), [3, 224, 224]);
        assert_eq!(y.shape(), [1, 224, 224]);
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn full_mask_stays_full_after_resize() {
        let s = Sample::new("f", RgbImage::new(37, 53), GrayImage::from_pixel(37, 53, Luma([255]))).unwrap();
        let (_, y) = preprocess(&s, [224, 224], &Normalization::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn resize_is_identity_at_target_size() {
        let s = sample(32, 24);
        let p = resize_pair(&s, [24, 32]).unwrap();
        assert_eq!(p.image, *s.image.as_raw());
        assert_eq!(p.mask, *s.mask.as_raw());
    }

    #[test]
    fn empty_image_is_rejected() {
        let s = Sample::new("e", RgbImage::new(0, 0), GrayImage::new(0, 0)).unwrap();
        assert!(resize_pair(&s, [8, 8]).is_err());
    }

    #[test]
    fn normalization_centers_the_train_pixels() {
        let prepared: Vec<Prepared> = (5..9).map(|w| resize_pair(&sample(w, 6), [6, 6]).unwrap()).collect();
        let norm = Normalization::from_prepared(&prepared).unwrap();
        assert_eq!(norm.std[2], 1.0);
        let mut mean = [0f64; 3];
        let mut count = 0.0;
        for p in &prepared {
            let (x, _) = to_tensors(p, &norm);
            for c in 0..3 {
                mean[c] += x.data()[c * 36..(c + 1) * 36].iter().map(|&v| f64::from(v)).sum::<f64>();
            }
            count += 36.0;
        }
        for m in mean {
            assert!((m / count).abs() < 1e-5, "{m}");
        }
    }

    #[test]
    fn identity_transform_is_a_no_op() {
        let t = chw(2, 3, 5);
        assert_eq!(Geometric::IDENTITY.apply(&t), t);
    }

    #[test]
    fn some_seed_takes_the_identity_branch() {
        let t = chw(3, 4, 4);
        let hit = (0..64).find(|&s| Geometric::sample(&mut augment_rng(s, 0, 0), true) == Geometric::IDENTITY).unwrap();
        let (x, m) = augment(&t, &t, &mut augment_rng(hit, 0, 0));
        assert_eq!((x, m), (t.clone(), t));
    }

    #[test]
    fn double_flip_is_identity() {
        let t = chw(1, 4, 6);
        let h = Geometric { hflip: true, ..Geometric::IDENTITY };
        assert_ne!(h.apply(&t), t);
        assert_eq!(h.apply(&h.apply(&t)), t);
    }

    #[test]
    fn four_quarter_turns_are_identity_and_one_turn_is_counter_clockwise() {
        let t = chw(1, 2, 3);
        let r = Geometric { quarter_turns: 1, ..Geometric::IDENTITY };
        let once = r.apply(&t);
        assert_eq!(once.shape(), [1, 3, 2]);
        // [[0 1 2] [3 4 5]] turned left is [[2 5] [1 4] [0 3]].
        assert_eq!(once.data(), [2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
        assert_eq!(r.apply(&r.apply(&r.apply(&once))), t);
    }

    #[test]
    fn non_square_inputs_keep_their_shape() {
        let t = chw(3, 4, 6);
        for s in 0..32 {
            let (x, m) = augment(&t, &chw(1, 4, 6), &mut augment_rng(s, 1, 2));
            assert_eq!((x.shape(), m.shape()), ([3, 4, 6].as_slice(), [1, 4, 6].as_slice()));
        }
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(20, 42, 3);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(20, 42, 3));
        assert_ne!(a, epoch_order(20, 42, 4));
    }

    #[test]
    fn batching_stacks_and_rejects_mixed_shapes() {
        let (x, y) = batch(&[(chw(3, 2, 2), chw(1, 2, 2)), (chw(3, 2, 2), chw(1, 2, 2))]).unwrap();
        assert_eq!((x.shape(), y.shape()), ([2, 3, 2, 2].as_slice(), [2, 1, 2, 2].as_slice()));
        assert!(batch(&[(chw(3, 2, 2), chw(1, 2, 2)), (chw(3, 4, 2), chw(1, 4, 2))]).is_err());
        assert!(batch(&[]).is_err());
    }

    proptest! {
        #[test]
        fn augmentation_keeps_mask_aligned_and_binary(seed: u64, epoch in 0usize..10, idx in 0usize..100, n in 2usize..9) {
            let image = Tensor::from_fn([3, n, n], |i| ((i as f32 * 0.618).fract() - 0.5) * 4.0);
            let mask = Tensor::from_fn([1, n, n], |i| f32::from(u8::from(image.data()[i] > 0.0)));
            let (x, m) = augment(&image, &mask, &mut augment_rng(seed, epoch, idx));
            for i in 0..n * n {
                prop_assert!(m.data()[i] == 0.0 || m.data()[i] == 1.0);
                prop_assert_eq!(m.data()[i], f32::from(u8::from(x.data()[i] > 0.0)));
            }
        }
    }
}
