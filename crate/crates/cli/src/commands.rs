use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use skinmamba::checkpoint::Checkpoint;
use skinmamba::config::RunConfig;
use skinmamba::data::read_rgb;
use skinmamba::metrics::MetricReport;
use skinmamba::network::Network;
use skinmamba::pipeline::{ablation_cells, load_model, overlay, predict_mask, prepare_data, run_training};
use skinmamba::training::{evaluate as evaluate_set, PreparedSet, RunDir, RunManifest, RunStatus};
use skinmamba::Module;

use crate::{ConfigArgs, Outcome, SplitChoice};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn apply_overrides(mut cfg: RunConfig, args: &ConfigArgs) -> Result<RunConfig> {
    for spec in &args.set {
        cfg.apply_override(spec)?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if args.deterministic {
        cfg.train.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(base, args)
}

fn summarize(manifest: &RunManifest) -> String {
    let best = match (manifest.best_epoch, manifest.best_miou) {
        (Some(e), Some(m)) => format!("best mIoU {:.2}% at epoch {e}", m * 100.0),
        (Some(e), None) => format!("best epoch {e} (mIoU undefined)"),
        _ => "no completed epoch".to_string(),
    };
    format!("{:?} after {} epochs, {best}", manifest.status, manifest.history.len())
}

pub fn train(args: &ConfigArgs, run_dir: Option<PathBuf>) -> Result<Outcome> {
    let cfg = resolve_config(args)?;
    let root = run_dir.unwrap_or_else(|| Path::new("runs").join(&cfg.dataset.name));
    let run = RunDir::create(&root)?;
    let manifest = run_training(&cfg, &run).with_context(|| format!("training into {}", root.display()))?;
    println!("{}: {}", root.display(), summarize(&manifest));
    Ok(Outcome::Success)
}

pub fn evaluate(args: &ConfigArgs, checkpoint: &Path, split: SplitChoice, out: Option<PathBuf>) -> Result<Outcome> {
    let (model, snapshot) = load_model(checkpoint)?;
    let cfg = apply_overrides(snapshot.config.clone(), args)?;
    if cfg.network != snapshot.config.network {
        return Err(skinmamba::Error::Config(
            "network settings cannot be overridden when evaluating a checkpoint".into(),
        )
        .into());
    }
    let data = prepare_data(&cfg)?;
    let (suffix, items) = match split {
        SplitChoice::Train => ("train", &data.train),
        SplitChoice::Test => ("test", &data.test),
    };
    let set = PreparedSet { name: format!("{}/{suffix}", cfg.dataset.name), items, norm: &snapshot.normalization };
    let report = evaluate_set(&model, &set, cfg.train.batch_size, cfg.train.threshold)?;
    let text = report.to_json();
    println!("{text}");
    if let Some(path) = out {
        fs::write(&path, format!("{text}\n")).map_err(|e| skinmamba::Error::io(&path, e))?;
    }
    Ok(Outcome::Success)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| skinmamba::Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| skinmamba::Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(skinmamba::Error::EmptyDataset(dir.to_path_buf()).into());
    }
    Ok(files)
}

pub fn predict(checkpoint: &Path, image_dir: &Path, out_dir: &Path) -> Result<Outcome> {
    let (model, snapshot) = load_model(checkpoint)?;
    let files = image_files(image_dir)?;
    let overlay_dir = out_dir.join("overlays");
    fs::create_dir_all(&overlay_dir).map_err(|e| skinmamba::Error::io(&overlay_dir, e))?;
    let mut failed = 0usize;
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let image = match read_rgb(path) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("warning: skipping {e}");
                failed += 1;
                continue;
            }
        };
        let mask = predict_mask(&model, &snapshot, &image)?;
        let mask_path = out_dir.join(format!("{stem}.png"));
        mask.save(&mask_path).with_context(|| format!("writing {}", mask_path.display()))?;
        let overlay_path = overlay_dir.join(format!("{stem}.png"));
        overlay(&image, &mask).save(&overlay_path).with_context(|| format!("writing {}", overlay_path.display()))?;
    }
    println!("{} of {} images written to {}", files.len() - failed, files.len(), out_dir.display());
    Ok(if failed == 0 { Outcome::Success } else { Outcome::Partial })
}

#[derive(Serialize)]
struct CellResult {
    cell: String,
    status: Option<RunStatus>,
    best_epoch: Option<usize>,
    report: Option<MetricReport>,
    error: Option<String>,
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

fn ablation_table(results: &[CellResult]) -> String {
    let mut md = String::from("| cell | mIoU | DSC | Acc | Sen | Spe | best epoch |\n|---|---|---|---|---|---|---|\n");
    for r in results {
        match (&r.report, &r.error) {
            (Some(m), _) => md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} |\n",
                r.cell,
                fmt_pct(m.miou),
                fmt_pct(m.dsc),
                fmt_pct(m.acc),
                fmt_pct(m.sen),
                fmt_pct(m.spe),
                r.best_epoch.map_or_else(|| "n/a".to_string(), |e| e.to_string()),
            )),
            (None, e) => md.push_str(&format!(
                "| {} | failed: {} | | | | | |\n",
                r.cell,
                e.as_deref().unwrap_or("unknown").replace('|', "/")
            )),
        }
    }
    md
}

pub fn ablate(args: &ConfigArgs, run_dir: Option<PathBuf>) -> Result<Outcome> {
    let base = resolve_config(args)?;
    let root = run_dir.unwrap_or_else(|| Path::new("runs").join(format!("{}-ablation", base.dataset.name)));
    fs::create_dir_all(&root).map_err(|e| skinmamba::Error::io(&root, e))?;
    let mut results = Vec::new();
    for (cell, cfg) in ablation_cells(&base) {
        eprintln!("ablation cell {cell}");
        let outcome = RunDir::create(&root.join(&cell)).and_then(|run| run_training(&cfg, &run));
        results.push(match outcome {
            Ok(m) => {
                let report =
                    m.best_epoch.and_then(|e| m.history.iter().find(|h| h.epoch == e)).map(|h| h.report.clone());
                CellResult { cell, status: Some(m.status), best_epoch: m.best_epoch, report, error: None }
            }
            Err(e) => {
                eprintln!("warning: cell {cell} failed: {e}");
                CellResult { cell, status: None, best_epoch: None, report: None, error: Some(e.to_string()) }
            }
        });
    }
    let json_path = root.join("ablation.json");
    fs::write(&json_path, serde_json::to_string_pretty(&results)? + "\n")
        .map_err(|e| skinmamba::Error::io(&json_path, e))?;
    let table = ablation_table(&results);
    let md_path = root.join("ablation.md");
    fs::write(&md_path, &table).map_err(|e| skinmamba::Error::io(&md_path, e))?;
    print!("{table}");
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if failed == results.len() {
        bail!("all {failed} ablation cells failed");
    }
    Ok(if failed == 0 { Outcome::Success } else { Outcome::Partial })
}

fn inspect_checkpoint(path: &Path) -> Result<()> {
    let ck = Checkpoint::load(path)?;
    let config: serde_json::Value = serde_json::from_str(&ck.config_json)
        .map_err(|e| skinmamba::Error::Checkpoint(format!("{}: configuration snapshot: {e}", path.display())))?;
    let elements: usize = ck.tensors.iter().map(|(_, t)| t.data().len()).sum();
    let state = ck.train_state.as_ref().map(|s| {
        json!({
            "epoch": s.epoch,
            "step": s.step,
            "best_metric": s.best_metric,
            "best_epoch": s.best_epoch,
            "moment_tensors": s.moments.len(),
        })
    });
    let summary = json!({
        "checkpoint": path.display().to_string(),
        "tensors": ck.tensors.len(),
        "elements": elements,
        "train_state": state,
        "snapshot": config,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn inspect(args: &ConfigArgs, checkpoint: Option<PathBuf>, no_trace: bool) -> Result<Outcome> {
    if let Some(path) = checkpoint {
        inspect_checkpoint(&path)?;
        return Ok(Outcome::Success);
    }
    let cfg = resolve_config(args)?;
    let model = Network::<f32>::build(&cfg.network, cfg.train.seed)?;
    let expected = cfg.network.expected_ledger();
    let mut summary = json!({
        "config": cfg,
        "parameters": model.parameter_count(),
        "expected_ledger": expected,
    });
    if !no_trace {
        let [h, w] = cfg.network.input_size;
        let (traced, _) = model.trace_ledger(h, w)?;
        if traced != expected {
            bail!("traced stage shapes differ from the expected ledger: {traced:?}");
        }
        summary["traced_ledger_matches"] = json!(true);
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome::Success)
}
