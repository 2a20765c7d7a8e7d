//! Training-time perturbations: a jittered previous box to mimic tracking
//! error, and motion augmentation of the two target instances.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap, Box3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Per-frame yaw jitter bound, radians.
    pub rot_range: f64,
    /// Per-frame, per-axis translation bound, meters.
    pub trans_range: f64,
    /// Horizontal shift bound of the perturbed previous box, meters.
    pub prev_box_shift: f64,
    /// Yaw shift bound of the perturbed previous box, radians.
    pub prev_box_yaw_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let ten_deg = 10f64.to_radians();
        Self {
            flip_prob: 0.5,
            rot_range: ten_deg,
            trans_range: 0.3,
            prev_box_shift: 0.3,
            prev_box_yaw_shift: ten_deg,
        }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        flip_prob: 0.0,
        rot_range: 0.0,
        trans_range: 0.0,
        prev_box_shift: 0.0,
        prev_box_yaw_shift: 0.0,
    };

    pub fn validate(&self) -> Result<(), String> {
        let ranges = [
            self.rot_range,
            self.trans_range,
            self.prev_box_shift,
            self.prev_box_yaw_shift,
        ];
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        if ranges.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err("augmentation ranges must be finite and >= 0".into());
        }
        Ok(())
    }
}

fn symmetric<R: Rng>(rng: &mut R, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

/// Shifts the center horizontally and the yaw by bounded uniform offsets.
/// Size and height are never changed.
pub fn perturb_prev_box<R: Rng>(b: &Box3D, cfg: &AugmentConfig, rng: &mut R) -> Box3D {
    let dx = symmetric(rng, cfg.prev_box_shift);
    let dy = symmetric(rng, cfg.prev_box_shift);
    let dyaw = symmetric(rng, cfg.prev_box_yaw_shift);
    Box3D {
        center: b.center + Vector3::new(dx, dy, 0.0),
        size: b.size,
        yaw: wrap(b.yaw + dyaw),
    }
}

/// Mirror across the vertical plane `y = axis_y`.
pub fn mirror_y(p: &Point3<f64>, axis_y: f64) -> Point3<f64> {
    Point3::new(p.x, 2.0 * axis_y - p.y, p.z)
}

pub fn mirror_box_y(b: &Box3D, axis_y: f64) -> Box3D {
    Box3D {
        center: Vector3::new(b.center.x, 2.0 * axis_y - b.center.y, b.center.z),
        size: b.size,
        yaw: wrap(-b.yaw),
    }
}

/// Rigid yaw rotation about `pivot` followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMotion {
    pub yaw: f64,
    pub translation: Vector3<f64>,
}

impl FrameMotion {
    pub fn apply_point(&self, p: &Point3<f64>, pivot: &Vector3<f64>) -> Point3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - pivot.x;
        let dy = p.y - pivot.y;
        Point3::new(
            pivot.x + c * dx - s * dy + self.translation.x,
            pivot.y + s * dx + c * dy + self.translation.y,
            p.z + self.translation.z,
        )
    }

    /// Rotating about the box's own center leaves the center in place.
    pub fn apply_box(&self, b: &Box3D) -> Box3D {
        Box3D {
            center: b.center + self.translation,
            size: b.size,
            yaw: wrap(b.yaw + self.yaw),
        }
    }
}

/// The transforms drawn by one [`motion_augment`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedAugment {
    /// Mirror plane `y = axis` when the pair was flipped.
    pub flip_axis_y: Option<f64>,
    pub prev: FrameMotion,
    pub cur: FrameMotion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub prev_points: Vec<Point3<f64>>,
    pub prev_box: Box3D,
    pub cur_points: Vec<Point3<f64>>,
    pub cur_box: Box3D,
    pub applied: AppliedAugment,
}

/// Motion augmentation of a pair of target instances.
///
/// With probability `flip_prob` both frames are mirrored across the same
/// vertical plane `y = prev_box.center.y`. Then, independently per frame,
/// the target points and box are rotated about that frame's box center by a
/// yaw drawn from `[-rot_range, rot_range]` and translated by per-axis
/// offsets from `[-trans_range, trans_range]`.
pub fn motion_augment<R: Rng>(
    prev_points: &[Point3<f64>],
    prev_box: &Box3D,
    cur_points: &[Point3<f64>],
    cur_box: &Box3D,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> AugmentedPair {
    let flip = cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob);
    let axis = prev_box.center.y;
    let mut draw = || FrameMotion {
        yaw: symmetric(rng, cfg.rot_range),
        translation: Vector3::new(
            symmetric(rng, cfg.trans_range),
            symmetric(rng, cfg.trans_range),
            symmetric(rng, cfg.trans_range),
        ),
    };
    let prev_motion = draw();
    let cur_motion = draw();

    let frame = |points: &[Point3<f64>], b: &Box3D, motion: &FrameMotion| {
        let (pts, b) = if flip {
            (
                points.iter().map(|p| mirror_y(p, axis)).collect::<Vec<_>>(),
                mirror_box_y(b, axis),
            )
        } else {
            (points.to_vec(), *b)
        };
        let pts = pts
            .iter()
            .map(|p| motion.apply_point(p, &b.center))
            .collect::<Vec<_>>();
        (pts, motion.apply_box(&b))
    };
    let (prev_points, prev_out) = frame(prev_points, prev_box, &prev_motion);
    let (cur_points, cur_out) = frame(cur_points, cur_box, &cur_motion);
    AugmentedPair {
        prev_points,
        prev_box: prev_out,
        cur_points,
        cur_box: cur_out,
        applied: AppliedAugment {
            flip_axis_y: flip.then_some(axis),
            prev: prev_motion,
            cur: cur_motion,
        },
    }
}
