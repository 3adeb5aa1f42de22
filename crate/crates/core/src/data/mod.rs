//! Dataset ingestion for the `root/images`, `root/masks` layout, seeded
//! train/test splitting, resizing, normalization and paired augmentation.

mod split;
mod synthetic;
mod transform;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

pub use split::{split, split_counts, SplitManifest};
pub use synthetic::synthetic_disks;
pub use transform::{
    augment, augment_rng, batch, epoch_order, preprocess, resize_pair, to_tensors, Geometric, Normalization, Prepared,
};

use crate::error::{Error, Result};

pub const IMAGE_DIR: &str = "images";
pub const MASK_DIR: &str = "masks";
pub const MASK_SUFFIX: &str = "_segmentation";
const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// An RGB image and its mask. Mask pixels are 0 or 1; [`Sample::new`]
/// takes an 8-bit mask and thresholds it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub mask: GrayImage,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: RgbImage, mask: GrayImage) -> Result<Self> {
        let id = id.into();
        if image.dimensions() != mask.dimensions() {
            return Err(Error::Shape(format!(
                "{id}: image is {:?} but mask is {:?}",
                image.dimensions(),
                mask.dimensions()
            )));
        }
        Ok(Self { id, image, mask: binarize(mask) })
    }
}

/// Threshold at 127: brighter pixels are foreground.
pub fn binarize(mut mask: GrayImage) -> GrayImage {
    for p in mask.pixels_mut() {
        p.0[0] = u8::from(p.0[0] > 127);
    }
    mask
}

/// A matched image and mask file sharing an id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedFiles {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem_and_ext(p: &Path) -> Option<(String, String)> {
    Some((p.file_stem()?.to_str()?.to_string(), p.extension()?.to_str()?.to_ascii_lowercase()))
}

/// Pair `images/<id>.{jpg,jpeg,png}` with `masks/<id>.png` or
/// `masks/<id>_segmentation.png`. Files are not decoded.
pub fn scan_pairs(root: &Path) -> Result<Vec<PairedFiles>> {
    let image_dir = root.join(IMAGE_DIR);
    let mask_dir = root.join(MASK_DIR);
    let mut images = BTreeMap::new();
    for p in list_dir(&image_dir)? {
        if let Some((stem, ext)) = stem_and_ext(&p) {
            if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                if let Some(prev) = images.insert(stem.clone(), p.clone()) {
                    return Err(Error::Pairing(format!(
                        "{stem} has two images: {} and {}",
                        prev.display(),
                        p.display()
                    )));
                }
            }
        }
    }
    let mut masks = BTreeMap::new();
    for p in list_dir(&mask_dir)? {
        if let Some((stem, ext)) = stem_and_ext(&p) {
            if ext == "png" {
                let id = stem.strip_suffix(MASK_SUFFIX).unwrap_or(&stem).to_string();
                if let Some(prev) = masks.insert(id.clone(), p.clone()) {
                    return Err(Error::Pairing(format!("{id} has two masks: {} and {}", prev.display(), p.display())));
                }
            }
        }
    }
    if images.is_empty() && masks.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let orphan_images: Vec<&str> = images.keys().filter(|k| !masks.contains_key(*k)).map(String::as_str).collect();
    let orphan_masks: Vec<&str> = masks.keys().filter(|k| !images.contains_key(*k)).map(String::as_str).collect();
    if !orphan_images.is_empty() || !orphan_masks.is_empty() {
        return Err(Error::Pairing(format!(
            "images without masks: [{}]; masks without images: [{}]",
            orphan_images.join(", "),
            orphan_masks.join(", ")
        )));
    }
    Ok(images
        .into_iter()
        .map(|(id, image)| PairedFiles { mask: masks.remove(&id).expect("paired above"), id, image })
        .collect())
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| image_error(path, e))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(decode(path)?.to_rgb8())
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image { path: path.to_path_buf(), message: other.to_string() },
    }
}

pub fn load_pair(files: &PairedFiles) -> Result<Sample> {
    let image = read_rgb(&files.image)?;
    let mask = decode(&files.mask)?.to_luma8();
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Image { path: files.image.clone(), message: "image has no pixels".into() });
    }
    Sample::new(files.id.clone(), image, mask).map_err(|e| match e {
        Error::Shape(m) => Error::Image { path: files.mask.clone(), message: m },
        other => other,
    })
}

pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    scan_pairs(root)?.iter().map(load_pair).collect()
}

/// Write samples in the layout `scan_pairs` reads, masks as 0/255 PNGs.
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for dir in [IMAGE_DIR, MASK_DIR] {
        fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
    }
    for s in samples {
        let ip = root.join(IMAGE_DIR).join(format!("{}.png", s.id));
        s.image.save(&ip).map_err(|e| image_error(&ip, e))?;
        let mp = root.join(MASK_DIR).join(format!("{}{MASK_SUFFIX}.png", s.id));
        let mut m = s.mask.clone();
        for p in m.pixels_mut() {
            p.0[0] = if p.0[0] > 0 { 255 } else { 0 };
        }
        m.save(&mp).map_err(|e| image_error(&mp, e))?;
    }
    Ok(())
}
