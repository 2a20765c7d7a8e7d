//! Trackers evaluated under OPE: the learned pipeline and two motion-only
//! references.

use std::time::Instant;

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Point3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::data::is_dynamic;
use crate::geometry::Box3D;
use crate::pipeline::{track_sequence, MotionModel, TrackerConfig};
use crate::pointcloud::Frame;

/// Boxes for every frame of a sequence, starting with the initial box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub boxes: Vec<Box3D>,
    pub dynamic: Vec<bool>,
    pub wall_ms: Vec<f64>,
}

/// A single-object tracker. It sees the point frames and the first box,
/// nothing else; ground truth stays with the evaluator.
pub trait Tracker: Sync {
    fn name(&self) -> &str;
    fn track(&self, frames: &[Frame], initial: &Box3D) -> Result<TrackOutput, String>;
}

/// Echoes the previous box forever.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroMotion;

impl Tracker for ZeroMotion {
    fn name(&self) -> &str {
        "zero-motion"
    }

    fn track(&self, frames: &[Frame], initial: &Box3D) -> Result<TrackOutput, String> {
        let n = frames.len();
        Ok(TrackOutput {
            boxes: vec![*initial; n],
            dynamic: vec![false; n],
            wall_ms: vec![0.0; n],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// White-acceleration spectral density, m²/frame³.
    pub process_noise: f64,
    /// Variance of each measured center coordinate, m².
    pub measurement_noise: f64,
    /// Prior variance of each velocity component, (m/frame)².
    pub initial_velocity_var: f64,
    /// Enlargement of the predicted box when gathering measurement points.
    pub gate_margin: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.5,
            measurement_noise: 0.05,
            initial_velocity_var: 4.0,
            gate_margin: 1.0,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<(), String> {
        let v = [self.process_noise, self.measurement_noise, self.initial_velocity_var];
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) || !(self.gate_margin >= 0.0) {
            return Err("kalman noise terms must be > 0 and gate_margin >= 0".into());
        }
        Ok(())
    }
}

/// Constant-velocity filter on a 3D position, unit time step.
#[derive(Debug, Clone, PartialEq)]
pub struct CvFilter {
    pub state: Vector6<f64>,
    pub cov: Matrix6<f64>,
    f: Matrix6<f64>,
    q: Matrix6<f64>,
    r: Matrix3<f64>,
}

impl CvFilter {
    pub fn new(position: Vector3<f64>, cfg: &KalmanConfig) -> Self {
        let mut state = Vector6::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(&position);
        let mut cov = Matrix6::zeros();
        for i in 0..3 {
            cov[(i, i)] = cfg.measurement_noise;
            cov[(i + 3, i + 3)] = cfg.initial_velocity_var;
        }
        let mut f = Matrix6::identity();
        let mut q = Matrix6::zeros();
        let s = cfg.process_noise;
        for i in 0..3 {
            f[(i, i + 3)] = 1.0;
            q[(i, i)] = s / 3.0;
            q[(i, i + 3)] = s / 2.0;
            q[(i + 3, i)] = s / 2.0;
            q[(i + 3, i + 3)] = s;
        }
        Self {
            state,
            cov,
            f,
            q,
            r: Matrix3::identity() * cfg.measurement_noise,
        }
    }

    fn h() -> Matrix3x6<f64> {
        Matrix3x6::identity()
    }

    pub fn position(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(3).into()
    }

    pub fn predict(&mut self) {
        self.state = self.f * self.state;
        self.cov = self.f * self.cov * self.f.transpose() + self.q;
    }

    /// Joseph-form update, which keeps the covariance symmetric PD.
    pub fn update(&mut self, z: &Vector3<f64>) {
        let h = Self::h();
        let s = h * self.cov * h.transpose() + self.r;
        let Some(s_inv) = s.try_inverse() else {
            return;
        };
        let k = self.cov * h.transpose() * s_inv;
        self.state += k * (z - h * self.state);
        let i_kh = Matrix6::identity() - k * h;
        let cov = i_kh * self.cov * i_kh.transpose() + k * self.r * k.transpose();
        self.cov = (cov + cov.transpose()) * 0.5;
    }
}

fn gated_centroid(points: &[Point3<f64>], gate: &Box3D) -> Option<Vector3<f64>> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for p in points.iter().filter(|p| gate.contains(p)) {
        sum += p.coords;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Constant-velocity Kalman filter on the box center. The measurement is
/// the centroid of the points inside the predicted box (enlarged by the
/// gate margin), corrected by the centroid-to-center offset observed in the
/// first frame. Size and yaw stay at their initial values.
#[derive(Debug, Clone, Copy, Default)]
pub struct KalmanCv {
    pub cfg: KalmanConfig,
}

impl KalmanCv {
    pub fn new(cfg: KalmanConfig) -> Self {
        Self { cfg }
    }
}

impl Tracker for KalmanCv {
    fn name(&self) -> &str {
        "kalman-cv"
    }

    fn track(&self, frames: &[Frame], initial: &Box3D) -> Result<TrackOutput, String> {
        self.cfg.validate()?;
        let mut out = TrackOutput {
            boxes: Vec::with_capacity(frames.len()),
            dynamic: Vec::with_capacity(frames.len()),
            wall_ms: Vec::with_capacity(frames.len()),
        };
        let Some(first) = frames.first() else {
            return Ok(out);
        };
        let offset = gated_centroid(&first.points, &initial.enlarged(self.cfg.gate_margin))
            .map(|c| c - initial.center)
            .unwrap_or_else(Vector3::zeros);
        let mut filter = CvFilter::new(initial.center, &self.cfg);
        out.boxes.push(*initial);
        out.dynamic.push(false);
        out.wall_ms.push(0.0);
        for frame in &frames[1..] {
            let start = Instant::now();
            filter.predict();
            let gate = Box3D {
                center: filter.position(),
                ..*initial
            }
            .enlarged(self.cfg.gate_margin);
            if let Some(c) = gated_centroid(&frame.points, &gate) {
                filter.update(&(c - offset));
            }
            let b = Box3D {
                center: filter.position(),
                ..*initial
            };
            if !b.center.iter().all(|v| v.is_finite()) {
                return Err("filter diverged".into());
            }
            out.dynamic.push(is_dynamic(out.boxes.last().expect("non-empty"), &b));
            out.boxes.push(b);
            out.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok(out)
    }
}

/// The two-stage pipeline around any motion model.
pub struct MotionTracker<M> {
    pub model: M,
    pub cfg: TrackerConfig,
    pub seed: u64,
    pub label: String,
}

impl<M: MotionModel> MotionTracker<M> {
    pub fn new(model: M, cfg: TrackerConfig, seed: u64, label: impl Into<String>) -> Self {
        Self {
            model,
            cfg,
            seed,
            label: label.into(),
        }
    }
}

impl<M: MotionModel> Tracker for MotionTracker<M> {
    fn name(&self) -> &str {
        &self.label
    }

    fn track(&self, frames: &[Frame], initial: &Box3D) -> Result<TrackOutput, String> {
        let r = track_sequence(&self.model, frames, initial, &self.cfg, self.seed);
        Ok(TrackOutput {
            dynamic: r.diagnostics.iter().map(|d| d.dynamic).collect(),
            boxes: r.boxes,
            wall_ms: r.wall_ms,
        })
    }
}
