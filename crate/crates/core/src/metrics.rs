//! Pixel confusion counts and the five segmentation metrics derived from
//! them. Counts are summed over every evaluated pixel before any ratio is
//! taken (micro-averaging); "mIoU" is the foreground IoU.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Add the pixelwise comparison of two binary masks. Nonzero is
    /// foreground.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(shape(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

pub fn accumulate(pred: &[u8], gt: &[u8], counts: ConfusionCounts) -> Result<ConfusionCounts> {
    let mut c = counts;
    c.accumulate(pred, gt)?;
    Ok(c)
}

/// Each metric is `None` when its denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub miou: Option<f64>,
    pub dsc: Option<f64>,
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        miou: ratio(c.tp, c.tp + c.fp + c.fn_),
        dsc: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        acc: ratio(c.tp + c.tn, c.total()),
        sen: ratio(c.tp, c.tp + c.fn_),
        spe: ratio(c.tn, c.tn + c.fp),
    }
}

impl Metrics {
    /// `DSC = 2 mIoU / (1 + mIoU)` whenever both are defined.
    pub fn dice_iou_consistent(&self, tol: f64) -> bool {
        match (self.miou, self.dsc) {
            (Some(j), Some(d)) => (d - 2.0 * j / (1.0 + j)).abs() <= tol && j <= d + tol,
            (None, None) => true,
            _ => false,
        }
    }
}

fn percent(v: Option<f64>) -> Option<f64> {
    v.map(|x| (x * 10000.0).round() / 100.0)
}

/// Metrics in percent with two decimals, `null` when undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub aggregation: String,
    pub threshold: f64,
    pub images: usize,
    #[serde(rename = "mIoU")]
    pub miou: Option<f64>,
    #[serde(rename = "DSC")]
    pub dsc: Option<f64>,
    #[serde(rename = "Acc")]
    pub acc: Option<f64>,
    #[serde(rename = "Sen")]
    pub sen: Option<f64>,
    #[serde(rename = "Spe")]
    pub spe: Option<f64>,
    pub counts: ConfusionCounts,
}

impl MetricReport {
    pub fn new(dataset: impl Into<String>, images: usize, threshold: f64, counts: ConfusionCounts) -> Self {
        let m = compute_metrics(&counts);
        Self {
            dataset: dataset.into(),
            aggregation: "micro".into(),
            threshold,
            images,
            miou: percent(m.miou),
            dsc: percent(m.dsc),
            acc: percent(m.acc),
            sen: percent(m.sen),
            spe: percent(m.spe),
            counts,
        }
    }

    pub fn metrics(&self) -> Metrics {
        compute_metrics(&self.counts)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}
