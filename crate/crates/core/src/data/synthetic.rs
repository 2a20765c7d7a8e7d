//! Synthetic LiDAR scenes: one tracked box, optional same-size distractors
//! and static clutter, observed from a sensor at the origin.
//!
//! Surface points are drawn on the faces whose outward normal points toward
//! the sensor, with density falling off with range. Every coordinate is
//! rounded to `f32` so scenes survive the native format bit-for-bit.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{is_dynamic, OracleAnnotations, Source, Tracklet};
use crate::geometry::{bev_intersection_area, infer_rtm, rotate_z, wrap, Box3D, Size3};
use crate::pointcloud::Frame;
use crate::rng::derive_seed;

/// Height of the ground plane below the sensor, meters.
pub const GROUND_Z: f64 = -1.7;
/// Range at which `surface_density` applies undiminished, meters.
pub const REFERENCE_RANGE: f64 = 10.0;
/// Every visible face receives at least this many points.
pub const MIN_FACE_POINTS: usize = 3;
/// Clutter covers the target trajectory's bounding rectangle grown by this.
pub const CLUTTER_PAD: f64 = 8.0;
/// Height band of clutter points above the ground.
pub const CLUTTER_HEIGHT: f64 = 2.0;

const STREAM_TARGET_MOTION: u64 = 1;
const STREAM_TARGET_POINTS: u64 = 2;
const STREAM_CLUTTER: u64 = 3;
const STREAM_DISTRACTOR_BASE: u64 = 1000;

pub const CAR_SIZE: Size3 = Size3::new(1.8, 4.0, 1.6);
pub const PEDESTRIAN_SIZE: Size3 = Size3::new(0.8, 0.6, 1.7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Static,
    ConstantVelocity,
    Turning,
    /// Each scene draws one of the three kinds uniformly.
    Mixed,
}

impl std::str::FromStr for MotionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Self::Static),
            "constant_velocity" | "cv" => Ok(Self::ConstantVelocity),
            "turning" => Ok(Self::Turning),
            "mixed" => Ok(Self::Mixed),
            other => Err(format!("unknown motion kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub kind: MotionKind,
    /// Meters per frame, sampled once per scene.
    pub speed_range: [f64; 2],
    /// Radians per frame, sampled once per scene (turning only).
    pub yaw_rate_range: [f64; 2],
    /// Fixes the initial heading instead of sampling it.
    pub initial_yaw: Option<f64>,
}

impl Default for MotionSpec {
    fn default() -> Self {
        let five = 5f64.to_radians();
        Self {
            kind: MotionKind::Mixed,
            speed_range: [0.0, 2.0],
            yaw_rate_range: [-five, five],
            initial_yaw: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub category: String,
    pub target_size: Size3,
    pub motion: MotionSpec,
    pub frames: usize,
    /// Number of distractor boxes, the K of the robustness sweep.
    pub distractors: usize,
    /// Static clutter points per square meter of scene extent.
    pub clutter_density: f64,
    /// Surface points per square meter at [`REFERENCE_RANGE`].
    pub surface_density: f64,
    pub noise_sigma: f64,
    /// Initial target distance from the sensor, meters.
    pub range: [f64; 2],
    pub seed: u64,
}

impl SceneSpec {
    pub fn car(seed: u64) -> Self {
        Self {
            category: "car".into(),
            target_size: CAR_SIZE,
            motion: MotionSpec::default(),
            frames: 20,
            distractors: 0,
            clutter_density: 0.3,
            surface_density: 30.0,
            noise_sigma: 0.02,
            range: [6.0, 25.0],
            seed,
        }
    }

    pub fn pedestrian(seed: u64) -> Self {
        Self {
            category: "pedestrian".into(),
            target_size: PEDESTRIAN_SIZE,
            motion: MotionSpec {
                speed_range: [0.0, 0.5],
                ..MotionSpec::default()
            },
            surface_density: 120.0,
            ..Self::car(seed)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.target_size.validate().map_err(|e| e.to_string())?;
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.frames == 0 {
            return Err("frames must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err("noise_sigma must be finite and >= 0".into());
        }
        if !(self.clutter_density >= 0.0 && self.surface_density >= 0.0) {
            return Err("densities must be >= 0".into());
        }
        if !ordered(self.motion.speed_range) || self.motion.speed_range[0] < 0.0 {
            return Err("speed_range must be an ordered pair of non-negative values".into());
        }
        if !ordered(self.motion.yaw_rate_range) {
            return Err("yaw_rate_range must be an ordered pair".into());
        }
        if !ordered(self.range) || self.range[0] < 0.0 {
            return Err("range must be an ordered pair of non-negative values".into());
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn angle<R: Rng>(rng: &mut R) -> f64 {
    wrap(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

/// Rolls out a box trajectory: each step advances along the current heading
/// by `speed`, then turns by `yaw_rate`.
fn trajectory(start: Box3D, speed: f64, yaw_rate: f64, frames: usize) -> Vec<Box3D> {
    let mut out = Vec::with_capacity(frames);
    let mut b = start;
    for _ in 0..frames {
        out.push(b);
        let step = Vector3::new(b.yaw.cos(), b.yaw.sin(), 0.0) * speed;
        b = Box3D {
            center: b.center + step,
            size: b.size,
            yaw: wrap(b.yaw + yaw_rate),
        };
    }
    out
}

fn sample_motion<R: Rng>(motion: &MotionSpec, rng: &mut R) -> (MotionKind, f64, f64) {
    let kind = match motion.kind {
        MotionKind::Mixed => match rng.random_range(0..3) {
            0 => MotionKind::Static,
            1 => MotionKind::ConstantVelocity,
            _ => MotionKind::Turning,
        },
        k => k,
    };
    let (speed, yaw_rate) = match kind {
        MotionKind::Static => (0.0, 0.0),
        MotionKind::ConstantVelocity => (uniform(rng, motion.speed_range), 0.0),
        _ => (
            uniform(rng, motion.speed_range),
            uniform(rng, motion.yaw_rate_range),
        ),
    };
    (kind, speed, yaw_rate)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Samples noisy points on the sensor-facing faces of `b`.
fn surface_points<R: Rng>(b: &Box3D, spec: &SceneSpec, rng: &mut R, out: &mut Vec<Point3<f64>>) {
    let h = b.size.half_extents();
    let range = b.center.norm().max(1e-6);
    let falloff = (REFERENCE_RANGE / range).powi(2).min(1.0);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut normal = Vector3::zeros();
            normal[axis] = sign;
            let face_center = b.center + rotate_z(&normal.component_mul(&h), b.yaw);
            let normal_world = rotate_z(&normal, b.yaw);
            if normal_world.dot(&(-face_center)) <= 0.0 {
                continue;
            }
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let area = 4.0 * h[u] * h[v];
            let count = ((area * spec.surface_density * falloff).round() as usize).max(MIN_FACE_POINTS);
            for _ in 0..count {
                let mut local = Vector3::zeros();
                local[axis] = sign * h[axis];
                local[u] = rng.random_range(-h[u]..=h[u]);
                local[v] = rng.random_range(-h[v]..=h[v]);
                let mut p = b.center + rotate_z(&local, b.yaw);
                if spec.noise_sigma > 0.0 {
                    p += Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
                }
                out.push(Point3::new(round_f32(p.x), round_f32(p.y), round_f32(p.z)));
            }
        }
    }
}

fn tracks_overlap(a: &[Box3D], b: &[Box3D], clearance: f64) -> bool {
    a.iter()
        .zip(b)
        .any(|(x, y)| bev_intersection_area(&x.enlarged(clearance), y) > 0.0)
}

/// Clearance kept between the target and any distractor, meters.
const DISTRACTOR_CLEARANCE: f64 = 0.5;
const DISTRACTOR_ATTEMPTS: usize = 16;

/// Places a distractor near the target start with its own motion; when every
/// attempt collides with the target it instead drives alongside the target
/// at a fixed lateral offset.
fn distractor_track(spec: &SceneSpec, target: &[Box3D], index: usize) -> Vec<Box3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_DISTRACTOR_BASE + index as u64));
    let start = target[0];
    for attempt in 0..DISTRACTOR_ATTEMPTS {
        let dist = rng.random_range(3.5..8.0) + attempt as f64;
        let dir = angle(&mut rng);
        let center = start.center + Vector3::new(dir.cos(), dir.sin(), 0.0) * dist;
        let b = Box3D {
            center,
            size: spec.target_size,
            yaw: angle(&mut rng),
        };
        let (_, speed, yaw_rate) = sample_motion(
            &MotionSpec {
                kind: MotionKind::Mixed,
                ..spec.motion
            },
            &mut rng,
        );
        let track = trajectory(b, speed, yaw_rate, spec.frames);
        if !tracks_overlap(target, &track, DISTRACTOR_CLEARANCE) {
            return track;
        }
    }
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let offset = side * (spec.target_size.width + 1.5 + index as f64 * (spec.target_size.width + 1.0));
    target
        .iter()
        .map(|t| Box3D {
            center: t.center + rotate_z(&Vector3::new(0.0, offset, 0.0), t.yaw),
            ..*t
        })
        .collect()
}

fn clutter_points(spec: &SceneSpec, target: &[Box3D]) -> Vec<Point3<f64>> {
    if spec.clutter_density <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_CLUTTER));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for b in target {
        for k in 0..2 {
            lo[k] = lo[k].min(b.center[k] - CLUTTER_PAD);
            hi[k] = hi[k].max(b.center[k] + CLUTTER_PAD);
        }
    }
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let count = (area * spec.clutter_density).round() as usize;
    (0..count)
        .map(|_| {
            Point3::new(
                round_f32(rng.random_range(lo[0]..hi[0])),
                round_f32(rng.random_range(lo[1]..hi[1])),
                round_f32(rng.random_range(GROUND_Z..GROUND_Z + CLUTTER_HEIGHT)),
            )
        })
        .collect()
}

/// Generates one scene. Target points come first in every frame, then
/// distractor points, then clutter. The target, each distractor and the
/// clutter draw from separate random streams, so changing the distractor
/// count leaves the target and clutter untouched.
pub fn generate_synthetic_tracklet(spec: &SceneSpec) -> Result<Tracklet, String> {
    spec.validate()?;
    let mut motion_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_TARGET_MOTION));
    let r = uniform(&mut motion_rng, spec.range);
    let az = angle(&mut motion_rng);
    let yaw0 = match spec.motion.initial_yaw {
        Some(y) => wrap(y),
        None => angle(&mut motion_rng),
    };
    let (kind, speed, yaw_rate) = sample_motion(&spec.motion, &mut motion_rng);
    let start = Box3D {
        center: Vector3::new(r * az.cos(), r * az.sin(), GROUND_Z + spec.target_size.height / 2.0),
        size: spec.target_size,
        yaw: yaw0,
    };
    let target = trajectory(start, speed, yaw_rate, spec.frames);
    let distractors: Vec<Vec<Box3D>> = (0..spec.distractors)
        .map(|i| distractor_track(spec, &target, i))
        .collect();
    let clutter = clutter_points(spec, &target);

    let mut target_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_TARGET_POINTS));
    let mut distractor_rngs: Vec<ChaCha8Rng> = (0..spec.distractors)
        .map(|i| {
            ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                STREAM_DISTRACTOR_BASE + 500 + i as u64,
            ))
        })
        .collect();
    let mut frames = Vec::with_capacity(spec.frames);
    let mut labels = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut pts = Vec::new();
        surface_points(&target[t], spec, &mut target_rng, &mut pts);
        let n_target = pts.len();
        for (track, rng) in distractors.iter().zip(&mut distractor_rngs) {
            surface_points(&track[t], spec, rng, &mut pts);
        }
        let solid: Vec<Box3D> = std::iter::once(target[t])
            .chain(distractors.iter().map(|d| d[t]))
            .map(|b| b.enlarged(0.1))
            .collect();
        pts.extend(clutter.iter().filter(|p| !solid.iter().any(|b| b.contains(p))));
        let mut frame_labels = vec![false; pts.len()];
        frame_labels[..n_target].iter_mut().for_each(|l| *l = true);
        labels.push(frame_labels);
        frames.push(Frame::new(pts, t as i64));
    }
    let rtms = target.windows(2).map(|w| infer_rtm(&w[0], &w[1])).collect();
    let dynamic = target.windows(2).map(|w| is_dynamic(&w[0], &w[1])).collect();
    Ok(Tracklet {
        id: format!("syn_{:016x}", spec.seed),
        category: spec.category.clone(),
        source: Source::Synthetic,
        frames,
        gt_boxes: target,
        annotations: Some(OracleAnnotations {
            target_labels: labels,
            rtms,
            dynamic,
            motion: kind,
            distractors,
        }),
    })
}

/// Generates `count` scenes with indices `first..first + count`. Scene `i`
/// uses the seed derived from `(spec.seed, i)` and is named `syn_{i:05}`.
pub fn generate_dataset(spec: &SceneSpec, first: usize, count: usize) -> Result<Vec<Tracklet>, String> {
    spec.validate()?;
    (first..first + count)
        .into_par_iter()
        .map(|i| {
            let scene = SceneSpec {
                seed: derive_seed(spec.seed, i as u64),
                ..spec.clone()
            };
            let mut t = generate_synthetic_tracklet(&scene)?;
            t.id = format!("syn_{i:05}");
            Ok(t)
        })
        .collect()
}
