//! Experiment configuration: one flat TOML table layered over a preset.
//!
//! ```toml
//! preset = "desk"        # or "paper"; defaults to desk
//! seed = 7
//! epochs = 10
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::data::{MotionKind, MotionSpec, SceneSpec};
use crate::eval::KalmanConfig;
use crate::nn::ModelConfig;
use crate::pipeline::{LossWeights, TrainConfig, TrackerConfig};
use crate::rng::derive_seed;

const SCENE_STREAM: u64 = 10;
const TRAIN_STREAM: u64 = 11;
const INIT_STREAM: u64 = 12;
const TRACK_STREAM: u64 = 13;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset {0:?} (expected \"desk\" or \"paper\")")]
    UnknownPreset(String),
    #[error("config parse: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Native,
    Kitti,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: PathBuf,
    pub dataset_format: DatasetFormat,
    /// KITTI sequences to load, e.g. `["0000", "0001"]`.
    pub kitti_sequences: Vec<String>,

    pub train_tracklets: usize,
    pub val_tracklets: usize,
    pub test_tracklets: usize,
    /// `car` or `pedestrian`.
    pub scene_category: String,
    pub frames: usize,
    pub distractors: usize,
    pub motion: MotionKind,
    pub speed_min: f64,
    pub speed_max: f64,
    pub yaw_rate_max_deg: f64,
    pub clutter_density: f64,
    pub surface_density: f64,
    pub noise_sigma: f64,
    pub range_min: f64,
    pub range_max: f64,

    pub point_widths: Vec<usize>,
    pub head_hidden: usize,

    pub batch_size: usize,
    pub epochs: u32,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u32,

    pub points_per_frame: usize,
    pub crop_margin: f64,

    pub aug_flip_prob: f64,
    pub aug_rot_deg: f64,
    pub aug_trans: f64,
    pub aug_prev_shift: f64,
    pub aug_prev_yaw_deg: f64,

    pub loss_cls_target: f64,
    pub loss_cls_motion: f64,
    pub loss_regression: f64,

    pub kalman_process_noise: f64,
    pub kalman_measurement_noise: f64,
    pub kalman_gate_margin: f64,

    pub distractor_sweep: Vec<usize>,
}

impl ExperimentConfig {
    /// Single-core friendly: 128 points per frame, batch 32, 40 epochs.
    pub fn desk() -> Self {
        let aug = AugmentConfig::default();
        let kal = KalmanConfig::default();
        let w = LossWeights::default();
        Self {
            seed: 0,
            out_dir: "runs".into(),
            dataset: "data/synthetic".into(),
            dataset_format: DatasetFormat::Native,
            kitti_sequences: Vec::new(),
            train_tracklets: 400,
            val_tracklets: 0,
            test_tracklets: 100,
            scene_category: "car".into(),
            frames: 20,
            distractors: 3,
            motion: MotionKind::Mixed,
            speed_min: 0.0,
            speed_max: 2.0,
            yaw_rate_max_deg: 5.0,
            clutter_density: 0.3,
            surface_density: 30.0,
            noise_sigma: 0.02,
            range_min: 6.0,
            range_max: 25.0,
            point_widths: vec![64, 128, 256],
            head_hidden: 128,
            batch_size: 32,
            epochs: 40,
            lr: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 20,
            points_per_frame: 128,
            crop_margin: 2.0,
            aug_flip_prob: aug.flip_prob,
            aug_rot_deg: aug.rot_range.to_degrees(),
            aug_trans: aug.trans_range,
            aug_prev_shift: aug.prev_box_shift,
            aug_prev_yaw_deg: aug.prev_box_yaw_shift.to_degrees(),
            loss_cls_target: w.cls_target,
            loss_cls_motion: w.cls_motion,
            loss_regression: w.regression,
            kalman_process_noise: kal.process_noise,
            kalman_measurement_noise: kal.measurement_noise,
            kalman_gate_margin: kal.gate_margin,
            distractor_sweep: vec![0, 2, 4],
        }
    }

    /// Batch 256, 1024 points per frame, lr 1e-3 decayed tenfold every
    /// 20 epochs.
    pub fn paper() -> Self {
        let t = TrainConfig::paper();
        Self {
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            lr_decay: t.lr_decay,
            lr_decay_every: t.lr_decay_every,
            points_per_frame: t.tracker.points_per_frame,
            crop_margin: t.tracker.margin,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::UnknownPreset(other.into())),
        }
    }

    /// Parses a TOML document whose keys override the named `preset`.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let preset = match table.remove("preset") {
            None => "desk".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(v) => return Err(ConfigError::Parse(format!("preset must be a string, got {v}"))),
        };
        let mut merged = toml::Table::try_from(Self::preset(&preset)?).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merged.extend(table);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !matches!(self.scene_category.as_str(), "car" | "pedestrian") {
            return invalid(format!("scene_category {:?}", self.scene_category));
        }
        if self.dataset_format == DatasetFormat::Kitti && self.kitti_sequences.is_empty() {
            return invalid("kitti dataset needs kitti_sequences".into());
        }
        self.scene_spec().validate().map_err(ConfigError::Invalid)?;
        self.model_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train_config().validate().map_err(ConfigError::Invalid)?;
        self.kalman_config().validate().map_err(ConfigError::Invalid)?;
        let w = self.loss_weights();
        if [w.cls_target, w.cls_motion, w.regression].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("loss weights must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        let base = if self.scene_category == "pedestrian" {
            SceneSpec::pedestrian(0)
        } else {
            SceneSpec::car(0)
        };
        let yr = self.yaw_rate_max_deg.to_radians();
        SceneSpec {
            motion: MotionSpec {
                kind: self.motion,
                speed_range: [self.speed_min, self.speed_max],
                yaw_rate_range: [-yr, yr],
                initial_yaw: None,
            },
            frames: self.frames,
            distractors: self.distractors,
            clutter_density: self.clutter_density,
            surface_density: self.surface_density,
            noise_sigma: self.noise_sigma,
            range: [self.range_min, self.range_max],
            seed: derive_seed(self.seed, SCENE_STREAM),
            ..base
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            point_widths: self.point_widths.clone(),
            head_hidden: self.head_hidden,
            init_seed: derive_seed(self.seed, INIT_STREAM),
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            margin: self.crop_margin,
            points_per_frame: self.points_per_frame,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            flip_prob: self.aug_flip_prob,
            rot_range: self.aug_rot_deg.to_radians(),
            trans_range: self.aug_trans,
            prev_box_shift: self.aug_prev_shift,
            prev_box_yaw_shift: self.aug_prev_yaw_deg.to_radians(),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            cls_target: self.loss_cls_target,
            cls_motion: self.loss_cls_motion,
            regression: self.loss_regression,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
            seed: derive_seed(self.seed, TRAIN_STREAM),
            augment: self.augment_config(),
            weights: self.loss_weights(),
            tracker: self.tracker_config(),
        }
    }

    pub fn kalman_config(&self) -> KalmanConfig {
        KalmanConfig {
            process_noise: self.kalman_process_noise,
            measurement_noise: self.kalman_measurement_noise,
            gate_margin: self.kalman_gate_margin,
            ..KalmanConfig::default()
        }
    }

    /// Seed of the crop sampling during inference.
    pub fn track_seed(&self) -> u64 {
        derive_seed(self.seed, TRACK_STREAM)
    }
}
