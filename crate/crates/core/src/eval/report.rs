use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::Tracker;
use super::metrics::{precision_auc, success_auc, PRECISION_MAX_ERR};
use super::EvalError;
use crate::data::{generate_dataset, SceneSpec, Tracklet};
use crate::geometry::{center_distance, iou3d, Box3D};

/// Raw tracker output for one tracklet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRun {
    pub id: String,
    pub category: String,
    pub boxes: Vec<Box3D>,
    pub dynamic: Vec<bool>,
    pub wall_ms: Vec<f64>,
    /// Set when the tracker gave up; frames without a box score zero.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub id: String,
    pub category: String,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
    pub overlaps: Vec<f64>,
    pub errors: Vec<f64>,
    pub failure: Option<String>,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: String,
    pub tracklets: usize,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub tracker: String,
    pub frames: usize,
    /// Frame-weighted mean of the per-category values.
    pub success: f64,
    pub precision: f64,
    pub failures: usize,
    /// Mean over tracked frames; the initial frame is not timed.
    pub mean_wall_ms: f64,
    pub categories: Vec<CategoryResult>,
    pub sequences: Vec<SequenceResult>,
}

/// Runs `tracker` on every tracklet, in parallel. Trackers only receive
/// the frames and the first ground-truth box.
pub fn run_tracker<T: Tracker + ?Sized>(tracker: &T, tracklets: &[Tracklet]) -> Result<Vec<SequenceRun>, EvalError> {
    if let Some(t) = tracklets.iter().find(|t| t.is_empty()) {
        return Err(EvalError::LengthMismatch {
            id: t.id.clone(),
            expected: 1,
            found: 0,
        });
    }
    Ok(tracklets
        .par_iter()
        .map(|t| {
            let initial = t.gt_boxes[0];
            match tracker.track(&t.frames, &initial) {
                Ok(out) => SequenceRun {
                    id: t.id.clone(),
                    category: t.category.clone(),
                    boxes: out.boxes,
                    dynamic: out.dynamic,
                    wall_ms: out.wall_ms,
                    failure: None,
                },
                Err(msg) => SequenceRun {
                    id: t.id.clone(),
                    category: t.category.clone(),
                    boxes: vec![initial],
                    dynamic: vec![false],
                    wall_ms: vec![0.0],
                    failure: Some(msg),
                },
            }
        })
        .collect())
}

fn score_sequence(run: &SequenceRun, t: &Tracklet) -> Result<SequenceResult, EvalError> {
    if run.id != t.id || run.boxes.len() > t.len() {
        return Err(EvalError::LengthMismatch {
            id: t.id.clone(),
            expected: t.len(),
            found: run.boxes.len(),
        });
    }
    let mut overlaps = Vec::with_capacity(t.len());
    let mut errors = Vec::with_capacity(t.len());
    for (i, gt) in t.gt_boxes.iter().enumerate() {
        match run.boxes.get(i) {
            Some(b) => {
                let o = iou3d(b, gt);
                overlaps.push(if o.is_finite() { o.clamp(0.0, 1.0) } else { 0.0 });
                let e = center_distance(b, gt);
                errors.push(if e.is_finite() { e } else { PRECISION_MAX_ERR });
            }
            None => {
                overlaps.push(0.0);
                errors.push(PRECISION_MAX_ERR);
            }
        }
    }
    let failure = run.failure.clone().or_else(|| {
        (run.boxes.len() < t.len()).then(|| format!("{} of {} frames tracked", run.boxes.len(), t.len()))
    });
    let timed: Vec<f64> = run.wall_ms.iter().skip(1).copied().collect();
    Ok(SequenceResult {
        id: t.id.clone(),
        category: t.category.clone(),
        frames: t.len(),
        success: success_auc(&overlaps)?,
        precision: precision_auc(&errors, PRECISION_MAX_ERR)?,
        overlaps,
        errors,
        failure,
        mean_wall_ms: if timed.is_empty() { 0.0 } else { timed.iter().sum::<f64>() / timed.len() as f64 },
    })
}

/// Scores runs (in tracklet order) against ground truth.
pub fn score_runs(tracker: &str, runs: &[SequenceRun], tracklets: &[Tracklet]) -> Result<OpeReport, EvalError> {
    if tracklets.is_empty() {
        return Err(EvalError::EmptyInput("tracklets"));
    }
    if runs.len() != tracklets.len() {
        return Err(EvalError::LengthMismatch {
            id: "<dataset>".into(),
            expected: tracklets.len(),
            found: runs.len(),
        });
    }
    let sequences = runs
        .iter()
        .zip(tracklets)
        .map(|(r, t)| score_sequence(r, t))
        .collect::<Result<Vec<_>, _>>()?;

    let mut by_cat: BTreeMap<&str, Vec<&SequenceResult>> = BTreeMap::new();
    for s in &sequences {
        by_cat.entry(s.category.as_str()).or_default().push(s);
    }
    let mut categories = Vec::new();
    for (cat, seqs) in by_cat {
        let overlaps: Vec<f64> = seqs.iter().flat_map(|s| s.overlaps.iter().copied()).collect();
        let errors: Vec<f64> = seqs.iter().flat_map(|s| s.errors.iter().copied()).collect();
        categories.push(CategoryResult {
            category: cat.to_string(),
            tracklets: seqs.len(),
            frames: overlaps.len(),
            success: success_auc(&overlaps)?,
            precision: precision_auc(&errors, PRECISION_MAX_ERR)?,
        });
    }
    let frames: usize = categories.iter().map(|c| c.frames).sum();
    let weighted = |f: fn(&CategoryResult) -> f64| {
        categories.iter().map(|c| c.frames as f64 * f(c)).sum::<f64>() / frames as f64
    };
    let timed: usize = runs.iter().map(|r| r.wall_ms.len().saturating_sub(1)).sum();
    let wall: f64 = runs.iter().flat_map(|r| r.wall_ms.iter().skip(1)).sum();
    Ok(OpeReport {
        tracker: tracker.to_string(),
        frames,
        success: weighted(|c| c.success),
        precision: weighted(|c| c.precision),
        failures: sequences.iter().filter(|s| s.failure.is_some()).count(),
        mean_wall_ms: if timed == 0 { 0.0 } else { wall / timed as f64 },
        categories,
        sequences,
    })
}

pub fn run_ope<T: Tracker + ?Sized>(tracker: &T, tracklets: &[Tracklet]) -> Result<OpeReport, EvalError> {
    let runs = run_tracker(tracker, tracklets)?;
    score_runs(tracker.name(), &runs, tracklets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distractors: usize,
    pub report: OpeReport,
}

/// Regenerates scenes `first..first + count` of `base` once per distractor
/// count and evaluates `tracker` on each set.
pub fn distractor_protocol<T: Tracker + ?Sized>(
    tracker: &T,
    base: &SceneSpec,
    first: usize,
    count: usize,
    ks: &[usize],
) -> Result<Vec<SweepRow>, EvalError> {
    ks.iter()
        .map(|&k| {
            let spec = SceneSpec {
                distractors: k,
                ..base.clone()
            };
            let tracklets = generate_dataset(&spec, first, count).map_err(EvalError::Scene)?;
            Ok(SweepRow {
                distractors: k,
                report: run_ope(tracker, &tracklets)?,
            })
        })
        .collect()
}

pub fn format_table(r: &OpeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tracker: {}", r.tracker);
    let _ = writeln!(s, "{:<14}{:>10}{:>8}{:>10}{:>11}", "category", "tracklets", "frames", "success", "precision");
    for c in &r.categories {
        let _ = writeln!(
            s,
            "{:<14}{:>10}{:>8}{:>10.2}{:>11.2}",
            c.category, c.tracklets, c.frames, c.success, c.precision
        );
    }
    let _ = writeln!(
        s,
        "{:<14}{:>10}{:>8}{:>10.2}{:>11.2}",
        "overall",
        r.sequences.len(),
        r.frames,
        r.success,
        r.precision
    );
    let _ = writeln!(s, "failures: {}  mean frame time: {:.3} ms", r.failures, r.mean_wall_ms);
    s
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    if let Some(first) = rows.first() {
        let _ = writeln!(s, "tracker: {}", first.report.tracker);
    }
    let _ = writeln!(s, "{:>4}{:>8}{:>10}{:>11}", "K", "frames", "success", "precision");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>4}{:>8}{:>10.2}{:>11.2}",
            r.distractors, r.report.frames, r.report.success, r.report.precision
        );
    }
    s
}
