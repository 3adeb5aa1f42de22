//! Optimization: the combined loss, AdamW, cosine learning-rate schedule,
//! per-epoch evaluation with early stopping, and checkpointing.

mod loss;
mod optim;
mod run;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use skinmamba_tensor::{Tape, Tensor};

pub use loss::{loss_bce_dice, loss_parts, LossParts, DICE_EPS};
pub use optim::AdamW;
pub use run::{RunDir, BEST_CHECKPOINT, CONFIG_FILE, LAST_CHECKPOINT, LOG_FILE, MANIFEST_FILE};

use crate::checkpoint::{Checkpoint, TrainState};
use crate::ctx::Ctx;
use crate::data::{augment, augment_rng, batch, epoch_order, to_tensors, Normalization, Prepared};
use crate::error::{config, Error, Result};
use crate::layers::BN_MOMENTUM;
use crate::metrics::{ConfusionCounts, MetricReport};
use crate::module::apply_buffer_updates;
use crate::network::Network;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    BceDice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub loss: LossKind,
    /// Probability above which a pixel is predicted foreground.
    pub threshold: f64,
    pub augment: bool,
    /// Execution is single-threaded with a fixed reduction order either
    /// way; the flag is recorded so runs state the mode they claim.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            lr0: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            seed: 42,
            early_stop_patience: 50,
            loss: LossKind::BceDice,
            threshold: 0.5,
            augment: true,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config("epochs and batch_size must be positive"));
        }
        if self.early_stop_patience == 0 {
            return Err(config("early_stop_patience must be at least 1"));
        }
        if !(self.lr_min >= 0.0 && self.lr0 >= 0.0 && (self.lr_min < self.lr0 || self.lr0 == 0.0)) {
            return Err(config(format!("need 0 <= lr_min < lr0, got lr_min={} lr0={}", self.lr_min, self.lr0)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(config("threshold must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

/// `lr_min + (lr0 - lr_min) (1 + cos(pi t / epochs)) / 2` for
/// `0 <= t <= epochs`.
pub fn cosine_lr(t: usize, cfg: &TrainConfig) -> Result<f64> {
    if t > cfg.epochs {
        return Err(config(format!("epoch {t} is past the schedule end {}", cfg.epochs)));
    }
    let frac = t as f64 / cfg.epochs as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub seconds: f64,
    pub report: MetricReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Started,
    Running,
    Completed,
    EarlyStopped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub status: RunStatus,
    pub history: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Best selection metric (mIoU, fraction) over `history`.
    pub best_miou: Option<f64>,
    pub best_checkpoint: Option<String>,
    pub last_checkpoint: Option<String>,
    pub total_seconds: f64,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            config,
            status: RunStatus::Started,
            history: Vec::new(),
            step_losses: Vec::new(),
            best_epoch: None,
            best_miou: None,
            best_checkpoint: None,
            last_checkpoint: None,
            total_seconds: 0.0,
            error: None,
        }
    }
}

/// Samples already resized to the network input, with the normalization
/// computed on the train split.
#[derive(Clone, Debug)]
pub struct PreparedSet<'a> {
    pub name: String,
    pub items: &'a [Prepared],
    pub norm: &'a Normalization,
}

/// Threshold the model's probabilities and accumulate confusion counts
/// over the whole set, in eval mode.
pub fn evaluate(
    model: &Network<f32>,
    set: &PreparedSet<'_>,
    batch_size: usize,
    threshold: f64,
) -> Result<MetricReport> {
    if set.items.is_empty() {
        return Err(Error::Empty(format!("evaluation split {} has no samples", set.name)));
    }
    let mut counts = ConfusionCounts::default();
    for chunk in set.items.chunks(batch_size.max(1)) {
        let pairs: Vec<_> = chunk.iter().map(|p| to_tensors(p, set.norm)).collect();
        let (x, y) = batch(&pairs)?;
        let probs = predict_probs(model, x)?;
        let pred: Vec<u8> = probs.data().iter().map(|&p| u8::from(f64::from(p) > threshold)).collect();
        let gt: Vec<u8> = y.data().iter().map(|&g| u8::from(g > 0.5)).collect();
        counts.accumulate(&pred, &gt)?;
    }
    Ok(MetricReport::new(set.name.clone(), set.items.len(), threshold, counts))
}

/// Foreground probabilities `(B, 1, H, W)` for a normalized batch.
pub fn predict_probs(model: &Network<f32>, x: Tensor<f32>) -> Result<Tensor<f32>> {
    let tape = Tape::no_grad();
    let ctx = Ctx::eval(&tape);
    let logits = model.forward(&tape.constant(x), &ctx)?;
    Ok(logits.sigmoid().value().clone())
}

fn checkpoint(model: &Network<f32>, config_json: &str, opt: &AdamW, epoch: usize, best: &Best) -> Checkpoint {
    let mut ck = Checkpoint::from_module(config_json, model);
    ck.train_state = Some(TrainState {
        epoch: epoch as u64,
        step: opt.step,
        best_metric: best.metric,
        best_epoch: best.epoch.map(|e| e as u64),
        moments: opt.moments.clone(),
    });
    ck
}

#[derive(Default)]
struct Best {
    epoch: Option<usize>,
    metric: Option<f64>,
}

impl Best {
    /// Strict improvement; an undefined metric ranks below any value and
    /// the first epoch always counts.
    fn offer(&mut self, epoch: usize, metric: Option<f64>) -> bool {
        let key = |m: Option<f64>| m.unwrap_or(f64::NEG_INFINITY);
        if self.epoch.is_none() || key(metric) > key(self.metric) {
            self.epoch = Some(epoch);
            self.metric = metric;
            true
        } else {
            false
        }
    }
}

/// Train `model` on `train`, evaluating on `test` after every epoch. With a
/// run directory, the manifest is rewritten after each epoch, `last.ckpt`
/// every epoch and `best.ckpt` whenever test mIoU improves.
pub fn train(
    model: &mut Network<f32>,
    train: &PreparedSet<'_>,
    test: &PreparedSet<'_>,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
    config_snapshot: serde_json::Value,
) -> Result<RunManifest> {
    cfg.validate()?;
    if train.items.is_empty() {
        return Err(Error::Empty(format!("training split {} has no samples", train.name)));
    }
    let config_json = serde_json::to_string(&config_snapshot)?;
    let mut manifest = RunManifest::new(config_snapshot);
    manifest.status = RunStatus::Running;
    if let Some(r) = run {
        r.write_manifest(&manifest)?;
    }
    let started = Instant::now();
    let result = train_loop(model, train, test, cfg, run, &config_json, &mut manifest, started);
    manifest.total_seconds = started.elapsed().as_secs_f64();
    if let Err(e) = &result {
        manifest.status = RunStatus::Failed;
        manifest.error = Some(e.to_string());
    }
    if let Some(r) = run {
        r.write_manifest(&manifest)?;
    }
    result.map(|()| manifest)
}

#[allow(clippy::too_many_arguments)]
fn train_loop(
    model: &mut Network<f32>,
    train: &PreparedSet<'_>,
    test: &PreparedSet<'_>,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
    config_json: &str,
    manifest: &mut RunManifest,
    started: Instant,
) -> Result<()> {
    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut best = Best::default();
    let mut since_best = 0;
    manifest.status = RunStatus::Completed;
    for e in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let epoch = e + 1;
        let lr = cosine_lr(e, cfg)?;
        let order = epoch_order(train.items.len(), cfg.seed, e);
        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let (x, y) = to_tensors(&train.items[i], train.norm);
                    if cfg.augment {
                        augment(&x, &y, &mut augment_rng(cfg.seed, e, i))
                    } else {
                        (x, y)
                    }
                })
                .collect();
            let (x, y) = batch(&pairs)?;
            let tape = Tape::new();
            let ctx = Ctx::train(&tape);
            let at = |err| match err {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {}: {m}", b + 1)),
                other => other,
            };
            let logits = model.forward(&tape.constant(x), &ctx).map_err(at)?;
            let loss = loss_bce_dice(&logits, &y).map_err(at)?;
            let value = f64::from(loss.value().data()[0]);
            let grads = tape.backward(&loss);
            let updates = ctx.take_buffer_updates();
            opt.step(model, &grads, lr);
            apply_buffer_updates(model, &updates, BN_MOMENTUM as f32);
            losses.push(value);
            manifest.step_losses.push(value);
        }
        let report = evaluate(model, test, cfg.batch_size, cfg.threshold)?;
        let improved = best.offer(epoch, report.metrics().miou);
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if let Some(r) = run {
            let ck = checkpoint(model, config_json, &opt, epoch, &best);
            if improved {
                ck.save(&r.path(BEST_CHECKPOINT))?;
                manifest.best_checkpoint = Some(r.path(BEST_CHECKPOINT).display().to_string());
            }
            ck.save(&r.path(LAST_CHECKPOINT))?;
            manifest.last_checkpoint = Some(r.path(LAST_CHECKPOINT).display().to_string());
            r.log(&format!(
                "epoch {epoch}/{} lr {lr:.3e} loss {train_loss:.6} test mIoU {} DSC {}",
                cfg.epochs,
                fmt_pct(report.miou),
                fmt_pct(report.dsc)
            ))?;
        }
        manifest.history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            seconds: epoch_start.elapsed().as_secs_f64(),
            report,
        });
        manifest.best_epoch = best.epoch;
        manifest.best_miou = best.metric;
        manifest.total_seconds = started.elapsed().as_secs_f64();
        if let Some(r) = run {
            r.write_manifest(manifest)?;
        }
        since_best = if improved { 0 } else { since_best + 1 };
        if since_best >= cfg.early_stop_patience {
            manifest.status = RunStatus::EarlyStopped;
            break;
        }
    }
    Ok(())
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.2}"))
}
