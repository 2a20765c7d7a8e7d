//! Line-delimited JSON export of tracker output, one record per frame.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::SequenceRun;
use super::EvalError;
use crate::data::Tracklet;
use crate::geometry::Box3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub tracklet: String,
    pub frame: usize,
    /// `[x, y, z, width, length, height, yaw]`.
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub dynamic: bool,
    pub wall_ms: f64,
}

pub fn to_predictions(runs: &[SequenceRun]) -> Vec<PredictionRecord> {
    runs.iter()
        .flat_map(|r| {
            r.boxes.iter().enumerate().map(move |(i, b)| PredictionRecord {
                tracklet: r.id.clone(),
                frame: i,
                bbox: b.to_array(),
                dynamic: r.dynamic.get(i).copied().unwrap_or(false),
                wall_ms: r.wall_ms.get(i).copied().unwrap_or(0.0),
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), EvalError> {
    let io = |e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Groups records into one run per ground-truth tracklet, in dataset order.
/// Every tracklet needs exactly one record per frame.
pub fn runs_from_predictions(records: &[PredictionRecord], tracklets: &[Tracklet]) -> Result<Vec<SequenceRun>, EvalError> {
    let known: HashMap<&str, usize> = tracklets.iter().map(|t| (t.id.as_str(), t.len())).collect();
    let mut grouped: HashMap<&str, BTreeMap<usize, &PredictionRecord>> = HashMap::new();
    for r in records {
        let &len = known
            .get(r.tracklet.as_str())
            .ok_or_else(|| EvalError::UnknownTracklet(r.tracklet.clone()))?;
        let slot = grouped.entry(r.tracklet.as_str()).or_default();
        if r.frame >= len || slot.insert(r.frame, r).is_some() {
            return Err(EvalError::FrameIndex {
                id: r.tracklet.clone(),
                frame: r.frame,
            });
        }
    }
    tracklets
        .iter()
        .map(|t| {
            let frames = grouped.remove(t.id.as_str()).unwrap_or_default();
            if frames.len() != t.len() {
                return Err(EvalError::LengthMismatch {
                    id: t.id.clone(),
                    expected: t.len(),
                    found: frames.len(),
                });
            }
            let boxes = frames
                .values()
                .map(|r| {
                    Box3D::from_array(r.bbox).map_err(|e| EvalError::OutOfRange(format!("{} frame {}: {e}", t.id, r.frame)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SequenceRun {
                id: t.id.clone(),
                category: t.category.clone(),
                boxes,
                dynamic: frames.values().map(|r| r.dynamic).collect(),
                wall_ms: frames.values().map(|r| r.wall_ms).collect(),
                failure: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SceneSpec};
    use crate::eval::{run_tracker, score_runs, ZeroMotion};

    #[test]
    fn export_round_trip_scores_identically() {
        let ts = generate_dataset(&SceneSpec::car(4), 0, 3).unwrap();
        let runs = run_tracker(&ZeroMotion, &ts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        write_predictions(&path, &to_predictions(&runs)).unwrap();
        let records = read_predictions(&path).unwrap();
        assert_eq!(records.len(), ts.iter().map(|t| t.len()).sum::<usize>());
        let back = runs_from_predictions(&records, &ts).unwrap();
        assert_eq!(back, runs);
        assert_eq!(score_runs("z", &back, &ts).unwrap(), score_runs("z", &runs, &ts).unwrap());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let ts = generate_dataset(&SceneSpec::car(4), 0, 2).unwrap();
        let mut records = to_predictions(&run_tracker(&ZeroMotion, &ts).unwrap());
        records.pop();
        assert!(matches!(runs_from_predictions(&records, &ts), Err(EvalError::LengthMismatch { .. })));
        let mut dup = to_predictions(&run_tracker(&ZeroMotion, &ts).unwrap());
        dup[1].frame = 0;
        assert!(matches!(runs_from_predictions(&dup, &ts), Err(EvalError::FrameIndex { .. })));
        let mut stray = to_predictions(&run_tracker(&ZeroMotion, &ts).unwrap());
        stray[0].tracklet = "nope".into();
        assert!(matches!(runs_from_predictions(&stray, &ts), Err(EvalError::UnknownTracklet(_))));
    }

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"tracklet\":\"a\"}\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(EvalError::Parse { line: 1, .. })));
    }
}
