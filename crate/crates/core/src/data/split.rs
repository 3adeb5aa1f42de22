use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Normalization;
use crate::error::{config, Error, Result};

/// ISIC 2017 and 2018 dataset sizes, whose conventional 7:3 train counts
/// differ from plain rounding.
const REFERENCE_TRAIN_COUNTS: [(usize, usize); 2] = [(2150, 1500), (2694, 1886)];
const REFERENCE_RATIO: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset_name: String,
    pub seed: u64,
    pub ratio: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub normalization: Option<Normalization>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dataset_name: String,
    seed: u64,
    ratio: f64,
    train: usize,
    test: usize,
    normalization: Option<Normalization>,
}

/// `(train, test)` sizes for `n` samples.
pub fn split_counts(n: usize, ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(config(format!("split ratio must lie strictly between 0 and 1, got {ratio}")));
    }
    if n < 2 {
        return Err(Error::Empty(format!("splitting needs at least 2 samples, got {n}")));
    }
    if ratio == REFERENCE_RATIO {
        if let Some(&(_, train)) = REFERENCE_TRAIN_COUNTS.iter().find(|(total, _)| *total == n) {
            return Ok((train, n - train));
        }
    }
    let train = ((n as f64) * ratio).round().clamp(1.0, (n - 1) as f64) as usize;
    Ok((train, n - train))
}

/// Sort ids, shuffle them with a generator seeded by `seed`, and cut.
pub fn split<S: AsRef<str>>(dataset_name: &str, ids: &[S], ratio: f64, seed: u64) -> Result<SplitManifest> {
    let (train, _) = split_counts(ids.len(), ratio)?;
    let mut sorted: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Contract(format!("duplicate sample id {}", w[0])));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids = sorted.split_off(train);
    Ok(SplitManifest {
        dataset_name: dataset_name.to_string(),
        seed,
        ratio,
        train_ids: sorted,
        test_ids,
        normalization: None,
    })
}

impl SplitManifest {
    pub fn is_disjoint(&self) -> bool {
        let train: BTreeSet<&String> = self.train_ids.iter().collect();
        self.test_ids.iter().all(|t| !train.contains(t))
    }

    /// A JSON header line followed by one `id,split` line per sample.
    pub fn to_text(&self) -> String {
        let header = Header {
            dataset_name: self.dataset_name.clone(),
            seed: self.seed,
            ratio: self.ratio,
            train: self.train_ids.len(),
            test: self.test_ids.len(),
            normalization: self.normalization.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serialization is infallible");
        out.push('\n');
        for (ids, tag) in [(&self.train_ids, "train"), (&self.test_ids, "test")] {
            for id in ids {
                writeln!(out, "{id},{tag}").expect("writing to a String is infallible");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Header = serde_json::from_str(lines.next().unwrap_or_default())?;
        let mut m = SplitManifest {
            dataset_name: header.dataset_name,
            seed: header.seed,
            ratio: header.ratio,
            train_ids: Vec::new(),
            test_ids: Vec::new(),
            normalization: header.normalization,
        };
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match line.rsplit_once(',') {
                Some((id, "train")) => m.train_ids.push(id.to_string()),
                Some((id, "test")) => m.test_ids.push(id.to_string()),
                _ => {
                    return Err(config(format!(
                        "manifest line {}: expected `id,train` or `id,test`, got {line:?}",
                        i + 2
                    )))
                }
            }
        }
        if m.train_ids.len() != header.train || m.test_ids.len() != header.test {
            return Err(config("manifest header counts disagree with its rows"));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
