use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;

/// Dark disks on a lighter noisy background, with the disk as the mask.
/// Centers keep the whole disk inside the frame.
pub fn synthetic_disks(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    (0..n)
        .map(|i| {
            let r = rng.gen_range(0.15 * s..0.3 * s);
            let cx = rng.gen_range(r..s - r);
            let cy = rng.gen_range(r..s - r);
            let skin = [rng.gen_range(190..235u8), rng.gen_range(150..190u8), rng.gen_range(130..170u8)];
            let lesion = [rng.gen_range(70..120u8), rng.gen_range(40..80u8), rng.gen_range(30..60u8)];
            let mut image = RgbImage::new(size as u32, size as u32);
            let mut mask = GrayImage::new(size as u32, size as u32);
            for y in 0..size as u32 {
                for x in 0..size as u32 {
                    let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                    let inside = dx * dx + dy * dy <= r * r;
                    let base = if inside { lesion } else { skin };
                    let px = base.map(|c| (i16::from(c) + rng.gen_range(-12..=12i16)).clamp(0, 255) as u8);
                    image.put_pixel(x, y, Rgb(px));
                    mask.put_pixel(x, y, Luma([if inside { 255 } else { 0 }]));
                }
            }
            Sample::new(format!("disk_{i:03}"), image, mask).expect("image and mask share dimensions")
        })
        .collect()
}
