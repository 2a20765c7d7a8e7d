//! Tracklet datasets: synthetic scenes, the native on-disk layout and KITTI
//! tracking ingestion.

pub mod kitti;
pub mod native;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{infer_rtm, Box3D, Rtm};
use crate::pointcloud::Frame;

pub use kitti::{load_kitti_tracklets, KittiCalib};
pub use native::{read_native, read_native_split, write_native, DatasetManifest, ManifestEntry};
pub use synthetic::{generate_dataset, generate_synthetic_tracklet, MotionKind, MotionSpec, SceneSpec};

/// A target counts as dynamic when its center moves more than this between
/// consecutive frames (meters, full 3D displacement).
pub const DYNAMIC_THRESHOLD: f64 = 0.15;

pub fn is_dynamic(prev: &Box3D, cur: &Box3D) -> bool {
    infer_rtm(prev, cur).displacement() > DYNAMIC_THRESHOLD
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("missing calibration: {0}")]
    MissingCalib(String),
    #[error("invalid tracklet {id}: {reason}")]
    InvalidTracklet { id: String, reason: String },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn corrupt(path: &std::path::Path, reason: impl Into<String>) -> Self {
        DataError::Corrupt {
            path: path.display().to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Kitti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Ground truth that only a synthetic generator can provide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAnnotations {
    /// Per frame, per point: generated from the target's surface.
    pub target_labels: Vec<Vec<bool>>,
    /// `rtms[t]` is the motion from frame `t` to `t + 1`.
    pub rtms: Vec<Rtm>,
    pub dynamic: Vec<bool>,
    pub motion: MotionKind,
    /// One box track per distractor instance.
    pub distractors: Vec<Vec<Box3D>>,
}

/// One target's contiguous sequence of frames and ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: String,
    pub category: String,
    pub source: Source,
    pub frames: Vec<Frame>,
    pub gt_boxes: Vec<Box3D>,
    pub annotations: Option<OracleAnnotations>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: &str| DataError::InvalidTracklet {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.frames.is_empty() {
            return Err(bad("no frames"));
        }
        if self.frames.len() != self.gt_boxes.len() {
            return Err(bad("frame and box counts differ"));
        }
        if self
            .frames
            .windows(2)
            .any(|w| w[1].timestamp <= w[0].timestamp)
        {
            return Err(bad("timestamps not strictly increasing"));
        }
        Ok(())
    }
}

/// Two consecutive annotated frames of one tracklet.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub tracklet: &'a Tracklet,
    /// Index of the current frame; the previous one is `index - 1`.
    pub index: usize,
    pub prev_box: Box3D,
    pub cur_box: Box3D,
    pub rtm: Rtm,
    pub dynamic: bool,
}

impl<'a> TrainingPair<'a> {
    pub fn prev_frame(&self) -> &'a Frame {
        &self.tracklet.frames[self.index - 1]
    }

    pub fn cur_frame(&self) -> &'a Frame {
        &self.tracklet.frames[self.index]
    }
}

pub fn make_training_pairs(tracklets: &[Tracklet]) -> Vec<TrainingPair<'_>> {
    tracklets
        .iter()
        .flat_map(|t| {
            (1..t.len()).map(move |i| {
                let prev_box = t.gt_boxes[i - 1];
                let cur_box = t.gt_boxes[i];
                TrainingPair {
                    tracklet: t,
                    index: i,
                    prev_box,
                    cur_box,
                    rtm: infer_rtm(&prev_box, &cur_box),
                    dynamic: is_dynamic(&prev_box, &cur_box),
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Size3;
    use nalgebra::Vector3;

    fn tracklet(xs: &[f64]) -> Tracklet {
        let boxes: Vec<Box3D> = xs
            .iter()
            .map(|&x| Box3D::new(Vector3::new(x, 0.0, 0.0), Size3::new(1.0, 1.0, 1.0), 0.0).unwrap())
            .collect();
        Tracklet {
            id: "t".into(),
            category: "car".into(),
            source: Source::Synthetic,
            frames: (0..xs.len() as i64).map(|t| Frame::new(vec![], t)).collect(),
            gt_boxes: boxes,
            annotations: None,
        }
    }

    #[test]
    fn pair_counts() {
        assert_eq!(make_training_pairs(&[tracklet(&[0.0, 1.0, 2.0, 3.0])]).len(), 3);
        assert!(make_training_pairs(&[tracklet(&[0.0])]).is_empty());
    }

    #[test]
    fn dynamic_label_threshold() {
        let pairs_src = [tracklet(&[0.0, 0.2, 0.3])];
        let pairs = make_training_pairs(&pairs_src);
        assert!(pairs[0].dynamic);
        assert!(!pairs[1].dynamic);
        assert_eq!(pairs[0].rtm.dx, 0.2);
    }

    #[test]
    fn validation() {
        assert!(tracklet(&[0.0, 1.0]).validate().is_ok());
        let mut t = tracklet(&[0.0, 1.0]);
        t.frames[1].timestamp = 0;
        assert!(t.validate().is_err());
        let mut t = tracklet(&[0.0, 1.0]);
        t.gt_boxes.pop();
        assert!(t.validate().is_err());
    }
}
