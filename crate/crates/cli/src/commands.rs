use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use motrack_core::config::{DatasetFormat, ExperimentConfig};
use motrack_core::data::{
    generate_dataset, load_kitti_tracklets, make_training_pairs, read_native_split, write_native, Split, Tracklet,
};
use motrack_core::eval::{
    distractor_protocol, format_sweep, format_table, read_predictions, run_tracker, runs_from_predictions, score_runs,
    to_predictions, write_predictions, KalmanCv, MotionTracker, Tracker, ZeroMotion,
};
use motrack_core::nn::{checkpoint, Model};
use motrack_core::pipeline;

use crate::{Baseline, Common, TrackerArgs};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

pub enum Outcome {
    Success,
    /// Outputs were written but part of the work failed.
    Partial(String),
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match common.config.as_str() {
        "desk" | "paper" => ExperimentConfig::preset(&common.config)?,
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("in config {path}"))?
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &common.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn snapshot(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(CONFIG_SNAPSHOT);
    fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<Tracklet>> {
    ensure!(cfg.dataset.exists(), "dataset {} does not exist", cfg.dataset.display());
    let tracklets = match cfg.dataset_format {
        DatasetFormat::Native => read_native_split(&cfg.dataset, split)?,
        DatasetFormat::Kitti => {
            let mut all = Vec::new();
            for seq in &cfg.kitti_sequences {
                all.extend(load_kitti_tracklets(&cfg.dataset, seq)?);
            }
            all
        }
    };
    ensure!(!tracklets.is_empty(), "no {split:?} tracklets in {}", cfg.dataset.display());
    Ok(tracklets)
}

pub fn generate(common: &Common) -> Result<Outcome> {
    let mut cfg = resolve(common)?;
    if let Some(o) = &common.out {
        cfg.dataset = o.clone();
    }
    let spec = cfg.scene_spec();
    let root = cfg.dataset.clone();
    let splits = [
        (Split::Train, cfg.train_tracklets),
        (Split::Val, cfg.val_tracklets),
        (Split::Test, cfg.test_tracklets),
    ];
    let (mut first, mut frames, mut dynamic, mut pairs, mut written) = (0, 0, 0, 0, 0);
    for (split, count) in splits {
        let ts = generate_dataset(&spec, first, count).map_err(anyhow::Error::msg)?;
        first += count;
        for t in &ts {
            frames += t.len();
            if let Some(a) = &t.annotations {
                dynamic += a.dynamic.iter().filter(|d| **d).count();
                pairs += a.dynamic.len();
            }
        }
        written += ts.len();
        write_native(&ts, &root, split).with_context(|| format!("writing {split:?} split"))?;
    }
    snapshot(&cfg, &root)?;
    let ratio = if pairs == 0 { 0.0 } else { dynamic as f64 / pairs as f64 };
    println!(
        "{written} tracklets, {frames} frames, {dynamic} dynamic / {} static pairs ({:.1}% dynamic) -> {}",
        pairs - dynamic,
        100.0 * ratio,
        root.display()
    );
    Ok(Outcome::Success)
}

pub fn train(common: &Common, resume: Option<&Path>) -> Result<Outcome> {
    let cfg = resolve(common)?;
    let tracklets = load_split(&cfg, Split::Train)?;
    let pairs = make_training_pairs(&tracklets);
    ensure!(!pairs.is_empty(), "train split has no consecutive frame pairs");
    let out = cfg.out_dir.clone();
    snapshot(&cfg, &out)?;
    let (model, start) = match resume {
        Some(p) => {
            let (m, header) = checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            check_compatible(&cfg, &m)?;
            (m, header.epochs_completed)
        }
        None => (Model::new(cfg.model_config())?, 0),
    };
    let tcfg = cfg.train_config();
    println!(
        "training on {} pairs from {} tracklets, epochs {}..{}",
        pairs.len(),
        tracklets.len(),
        start,
        tcfg.epochs
    );
    let metrics_path = out.join(METRICS_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let mut io_error = None;
    let outcome = pipeline::train(model, &pairs, &tcfg, start, |m, model| {
        println!(
            "epoch {:>3}  lr {:.1e}  loss {:.5}  seg acc {:.3}  motion acc {:.3}",
            m.epoch, m.lr, m.loss.total, m.seg_accuracy, m.motion_accuracy
        );
        let line = serde_json::to_string(m).expect("metrics serialize");
        let res = writeln!(log, "{line}")
            .map_err(anyhow::Error::from)
            .and_then(|_| checkpoint::save(&ckpt, model, m.epoch + 1).map_err(anyhow::Error::from));
        if let Err(e) = res {
            io_error.get_or_insert(e);
        }
    })
    .context("training aborted")?;
    if let Some(e) = io_error {
        return Err(e.context("writing training outputs"));
    }
    checkpoint::save(&ckpt, &outcome.model, outcome.epochs_completed)?;
    println!("checkpoint {} ({} epochs)", ckpt.display(), outcome.epochs_completed);
    Ok(Outcome::Success)
}

fn check_compatible(cfg: &ExperimentConfig, m: &Model<f32>) -> Result<()> {
    let want = cfg.model_config();
    if m.config.point_widths != want.point_widths || m.config.head_hidden != want.head_hidden {
        bail!(
            "checkpoint widths {:?}/{} do not match config {:?}/{}",
            m.config.point_widths,
            m.config.head_hidden,
            want.point_widths,
            want.head_hidden
        );
    }
    Ok(())
}

fn build_tracker(cfg: &ExperimentConfig, args: &TrackerArgs) -> Result<Box<dyn Tracker>> {
    match (&args.checkpoint, args.baseline) {
        (_, Some(Baseline::ZeroMotion)) => Ok(Box::new(ZeroMotion)),
        (_, Some(Baseline::KalmanCv)) => Ok(Box::new(KalmanCv::new(cfg.kalman_config()))),
        (Some(path), None) => {
            let (model, _) = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            check_compatible(cfg, &model)?;
            Ok(Box::new(MotionTracker::new(model, cfg.tracker_config(), cfg.track_seed(), "motion-network")))
        }
        (None, None) => bail!("need --checkpoint or --baseline"),
    }
}

pub fn track(common: &Common, args: &TrackerArgs) -> Result<Outcome> {
    let cfg = resolve(common)?;
    let tracker = build_tracker(&cfg, args)?;
    let tracklets = load_split(&cfg, Split::Test)?;
    let runs = run_tracker(tracker.as_ref(), &tracklets)?;
    let records = to_predictions(&runs);
    snapshot(&cfg, &cfg.out_dir)?;
    let path = cfg.out_dir.join(PREDICTIONS_FILE);
    write_predictions(&path, &records)?;
    let timed: Vec<f64> = runs.iter().flat_map(|r| r.wall_ms.iter().skip(1).copied()).collect();
    let mean = if timed.is_empty() { 0.0 } else { timed.iter().sum::<f64>() / timed.len() as f64 };
    println!(
        "{}: {} tracklets, {} frames, mean {:.3} ms/frame -> {}",
        tracker.name(),
        runs.len(),
        records.len(),
        mean,
        path.display()
    );
    let failed: Vec<&str> = runs.iter().filter(|r| r.failure.is_some()).map(|r| r.id.as_str()).collect();
    if failed.is_empty() {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Partial(format!("tracker failed on {}", failed.join(", "))))
    }
}

fn write_report<T: serde::Serialize>(dir: &Path, stem: &str, value: &T, table: &str) -> Result<PathBuf> {
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", json.display()))?;
    fs::write(dir.join(format!("{stem}.txt")), table)?;
    Ok(json)
}

pub fn eval(
    common: &Common,
    args: &TrackerArgs,
    predictions: Option<&Path>,
    sweep: Option<&[usize]>,
) -> Result<Outcome> {
    let cfg = resolve(common)?;
    let tracklets = load_split(&cfg, Split::Test)?;
    let tracker = match predictions {
        Some(_) => None,
        None => Some(build_tracker(&cfg, args)?),
    };
    let report = match (predictions, &tracker) {
        (Some(path), _) => {
            let records = read_predictions(path)?;
            let runs = runs_from_predictions(&records, &tracklets)?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            score_runs(&name, &runs, &tracklets)?
        }
        (None, Some(t)) => score_runs(t.name(), &run_tracker(t.as_ref(), &tracklets)?, &tracklets)?,
        (None, None) => unreachable!("tracker built above"),
    };
    snapshot(&cfg, &cfg.out_dir)?;
    let table = format_table(&report);
    print!("{table}");
    let path = write_report(&cfg.out_dir, "report", &report, &table)?;
    println!("report -> {}", path.display());

    if let Some(ks) = sweep {
        let Some(t) = &tracker else {
            bail!("--distractor-sweep regenerates scenes and needs --checkpoint or --baseline");
        };
        let first = cfg.train_tracklets + cfg.val_tracklets;
        let rows = distractor_protocol(t.as_ref(), &cfg.scene_spec(), first, cfg.test_tracklets, ks)?;
        let table = format_sweep(&rows);
        print!("{table}");
        let path = write_report(&cfg.out_dir, "sweep", &rows, &table)?;
        println!("sweep -> {}", path.display());
    }
    if report.failures > 0 {
        return Ok(Outcome::Partial(format!("{} tracklets failed", report.failures)));
    }
    Ok(Outcome::Success)
}
