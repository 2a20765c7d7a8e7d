//! One-pass evaluation: run a tracker from the first ground-truth box, score
//! every frame against ground truth, aggregate per category.

pub mod baselines;
pub mod metrics;
pub mod predictions;
pub mod report;

use thiserror::Error;

pub use baselines::{CvFilter, KalmanConfig, KalmanCv, MotionTracker, TrackOutput, Tracker, ZeroMotion};
pub use metrics::{precision_auc, precision_score, success_auc, PRECISION_MAX_ERR};
pub use predictions::{read_predictions, runs_from_predictions, to_predictions, write_predictions, PredictionRecord};
pub use report::{
    distractor_protocol, format_sweep, format_table, run_ope, run_tracker, score_runs, CategoryResult, OpeReport,
    SequenceResult, SequenceRun, SweepRow,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("tracklet {id}: {expected} ground-truth frames but {found} predictions")]
    LengthMismatch { id: String, expected: usize, found: usize },
    #[error("prediction for unknown tracklet {0}")]
    UnknownTracklet(String),
    #[error("tracklet {id}: bad frame index {frame}")]
    FrameIndex { id: String, frame: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("scene generation: {0}")]
    Scene(String),
}
