//! Run orchestration shared by the command-line tool: data preparation,
//! training into a run directory, and reloading trained models.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::blocks::mixer::{CONV3X3, SELF_ATTENTION};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    load_dataset, resize_pair, split, synthetic_disks, to_tensors, Normalization, Prepared, Sample, SplitManifest,
};
use crate::error::{config, Error, Result};
use crate::network::Network;
use crate::training::{self, predict_probs, PreparedSet, RunDir, RunManifest, CONFIG_FILE};

pub const SPLIT_FILE: &str = "split.txt";

/// What a checkpoint needs to be used on new images: the resolved
/// configuration and the train-split normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSnapshot {
    pub config: RunConfig,
    pub normalization: Normalization,
}

pub struct PreparedData {
    pub split: SplitManifest,
    pub train: Vec<Prepared>,
    pub test: Vec<Prepared>,
}

impl PreparedData {
    pub fn norm(&self) -> &Normalization {
        self.split.normalization.as_ref().expect("set by prepare_data")
    }

    pub fn train_set(&self) -> PreparedSet<'_> {
        PreparedSet { name: format!("{}/train", self.split.dataset_name), items: &self.train, norm: self.norm() }
    }

    pub fn test_set(&self) -> PreparedSet<'_> {
        PreparedSet { name: format!("{}/test", self.split.dataset_name), items: &self.test, norm: self.norm() }
    }
}

pub fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    match (&cfg.dataset.synthetic, &cfg.dataset.root) {
        (Some(s), _) => Ok(synthetic_disks(s.count, s.size, cfg.train.seed)),
        (None, Some(root)) => load_dataset(root),
        (None, None) => Err(config("set dataset.root or dataset.synthetic")),
    }
}

/// Load, split with the training seed, resize to the network input and
/// compute normalization over the train split.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let samples = load_samples(cfg)?;
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let mut manifest = split(&cfg.dataset.name, &ids, cfg.dataset.split_ratio, cfg.train.seed)?;
    let by_id = |wanted: &[String]| -> Result<Vec<Prepared>> {
        wanted
            .iter()
            .map(|id| {
                let s = samples.iter().find(|s| &s.id == id).expect("split ids come from samples");
                resize_pair(s, cfg.network.input_size)
            })
            .collect()
    };
    let train = by_id(&manifest.train_ids)?;
    let test = by_id(&manifest.test_ids)?;
    manifest.normalization = Some(Normalization::from_prepared(&train)?);
    Ok(PreparedData { split: manifest, train, test })
}

/// Train into `run`: the resolved configuration and a started manifest are
/// written before the model is built.
pub fn run_training(cfg: &RunConfig, run: &RunDir) -> Result<RunManifest> {
    cfg.validate()?;
    run.write_json(CONFIG_FILE, cfg)?;
    run.write_manifest(&RunManifest::new(serde_json::to_value(cfg)?))?;
    let data = prepare_data(cfg)?;
    data.split.save(&run.path(SPLIT_FILE))?;
    run.log(&format!("dataset {}: {} train / {} test", data.split.dataset_name, data.train.len(), data.test.len()))?;
    let snapshot = RunSnapshot { config: cfg.clone(), normalization: data.norm().clone() };
    let mut model = Network::<f32>::build(&cfg.network, cfg.train.seed)?;
    run.log(&format!("parameters: {}", crate::Module::parameter_count(&model)))?;
    training::train(
        &mut model,
        &data.train_set(),
        &data.test_set(),
        &cfg.train,
        Some(run),
        serde_json::to_value(&snapshot)?,
    )
}

/// Rebuild the network stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<(Network<f32>, RunSnapshot)> {
    let ck = Checkpoint::load(path)?;
    let snapshot: RunSnapshot = serde_json::from_str(&ck.config_json)
        .map_err(|e| Error::Checkpoint(format!("{}: configuration snapshot: {e}", path.display())))?;
    let mut model = Network::<f32>::build(&snapshot.config.network, snapshot.config.train.seed)?;
    ck.restore_into(&mut model)?;
    Ok((model, snapshot))
}

/// Binary mask (0/255) at the image's own size: the image is resized to
/// the network input, and the thresholded prediction is resized back with
/// nearest-neighbour sampling.
pub fn predict_mask(model: &Network<f32>, snapshot: &RunSnapshot, image: &RgbImage) -> Result<GrayImage> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Empty("image has no pixels".into()));
    }
    let [ih, iw] = snapshot.config.network.input_size;
    let blank = GrayImage::new(w, h);
    let sample = Sample::new("predict", image.clone(), blank)?;
    let (x, _) = to_tensors(&resize_pair(&sample, [ih, iw])?, &snapshot.normalization);
    let probs = predict_probs(model, x.reshape([1, 3, ih, iw]))?;
    let threshold = snapshot.config.train.threshold as f32;
    let small = GrayImage::from_fn(iw as u32, ih as u32, |x, y| {
        Luma([if probs.data()[y as usize * iw + x as usize] > threshold { 255 } else { 0 }])
    });
    Ok(if (w as usize, h as usize) == (iw, ih) { small } else { imageops::resize(&small, w, h, FilterType::Nearest) })
}

/// The image with predicted foreground tinted red.
pub fn overlay(image: &RgbImage, mask: &GrayImage) -> RgbImage {
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let Rgb([r, g, b]) = *image.get_pixel(x, y);
        if mask.get_pixel(x, y).0[0] > 0 {
            Rgb([((u16::from(r) + 255) / 2) as u8, g / 2, b / 2])
        } else {
            Rgb([r, g, b])
        }
    })
}

/// The module-toggle grid in the order Ver1 (neither block), Ver2 (state
/// space only), Ver3 (frequency only), Ver4 (both), followed by the two
/// token-mixer substitutions with both blocks on.
pub fn ablation_cells(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let with = |srssb: bool, fbgm: bool, variant: Option<&str>| {
        let mut c = base.clone();
        c.network.block.use_srssb = srssb;
        c.network.block.use_fbgm = fbgm;
        if let Some(v) = variant {
            c.network.block.variant = v.to_string();
        }
        c
    };
    vec![
        ("ver1".into(), with(false, false, None)),
        ("ver2".into(), with(true, false, None)),
        ("ver3".into(), with(false, true, None)),
        ("ver4".into(), with(true, true, None)),
        (CONV3X3.into(), with(true, true, Some(CONV3X3))),
        (SELF_ATTENTION.into(), with(true, true, Some(SELF_ATTENTION))),
    ]
}
