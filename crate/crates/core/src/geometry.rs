//! Oriented boxes, 4-DOF relative motion and rotated IoU.
//!
//! Conventions used throughout the crate:
//!
//! * the up-axis is world `z`; yaw is a counter-clockwise rotation about it;
//! * in a box's canonical frame, **length** runs along local `x` (the heading
//!   direction), **width** along local `y`, **height** along local `z`;
//! * a relative target motion (RTM) translates the box center in the world
//!   frame and increments the yaw about the box's own center, so
//!   [`apply_rtm`] and [`infer_rtm`] are exact inverses.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack applied to box containment tests so that points lying on a face
/// (including corners produced by rotating and un-rotating) count as inside.
pub const CONTAINMENT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite angle {0}")]
    NonFiniteAngle(f64),
    #[error("invalid box size ({width}, {length}, {height}); all components must be finite and > 0")]
    InvalidSize { width: f64, length: f64, height: f64 },
    #[error("non-finite box parameter")]
    NonFinite,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFiniteAngle(a));
    }
    Ok(wrap(a))
}

/// Infallible wrap for angles already known to be finite.
pub(crate) fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Size3 {
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

impl Size3 {
    pub const fn new(width: f64, length: f64, height: f64) -> Self {
        Self {
            width,
            length,
            height,
        }
    }

    pub fn volume(&self) -> f64 {
        self.width * self.length * self.height
    }

    /// Half extents in canonical-frame axis order (x = length, y = width, z = height).
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.length / 2.0, self.width / 2.0, self.height / 2.0)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.width) && ok(self.length) && ok(self.height) {
            Ok(())
        } else {
            Err(GeometryError::InvalidSize {
                width: self.width,
                length: self.length,
                height: self.height,
            })
        }
    }
}

/// Oriented 3D bounding box: 7 parameters (center, size, yaw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub size: Size3,
    /// Radians about the up-axis, kept in `(-pi, pi]`.
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, size: Size3, yaw: f64) -> Result<Self, GeometryError> {
        size.validate()?;
        if !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            center,
            size,
            yaw: wrap_angle(yaw)?,
        })
    }

    /// The 7 parameters in export order: `x y z width length height yaw`.
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.width,
            self.size.length,
            self.size.height,
            self.yaw,
        ]
    }

    pub fn from_array(p: [f64; 7]) -> Result<Self, GeometryError> {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Size3::new(p[3], p[4], p[5]),
            p[6],
        )
    }

    /// Same box with every dimension grown by `2 * margin` (margin on each side).
    pub fn enlarged(&self, margin: f64) -> Self {
        Self {
            size: Size3::new(
                self.size.width + 2.0 * margin,
                self.size.length + 2.0 * margin,
                self.size.height + 2.0 * margin,
            ),
            ..*self
        }
    }

    /// Corners of the box footprint in the xy plane, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size.length / 2.0;
        let hw = self.size.width / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| [self.center.x + c * x - s * y, self.center.y + s * x + c * y])
    }

    pub fn z_range(&self) -> (f64, f64) {
        let hh = self.size.height / 2.0;
        (self.center.z - hh, self.center.z + hh)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let q = to_canonical(p, self);
        let h = self.size.half_extents();
        q.x.abs() <= h.x + CONTAINMENT_EPS
            && q.y.abs() <= h.y + CONTAINMENT_EPS
            && q.z.abs() <= h.z + CONTAINMENT_EPS
    }
}

/// Relative target motion between two boxes: world-frame center offset and
/// yaw increment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rtm {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dtheta: f64,
}

impl Rtm {
    pub const IDENTITY: Rtm = Rtm {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
        dtheta: 0.0,
    };

    /// Builds an RTM, wrapping `dtheta`. Non-finite values are rejected.
    pub fn new(dx: f64, dy: f64, dz: f64, dtheta: f64) -> Result<Self, GeometryError> {
        if !(dx.is_finite() && dy.is_finite() && dz.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            dx,
            dy,
            dz,
            dtheta: wrap_angle(dtheta)?,
        })
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dz, self.dtheta]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dz)
    }

    /// The inverse motion. Under the center-translation convention this is a
    /// plain negation.
    pub fn negate(&self) -> Self {
        Self {
            dx: -self.dx,
            dy: -self.dy,
            dz: -self.dz,
            dtheta: wrap(-self.dtheta),
        }
    }

    /// Horizontal plus vertical displacement of the box center.
    pub fn displacement(&self) -> f64 {
        self.translation().norm()
    }
}

pub fn apply_rtm(b: &Box3D, m: &Rtm) -> Box3D {
    Box3D {
        center: b.center + m.translation(),
        size: b.size,
        yaw: wrap(b.yaw + m.dtheta),
    }
}

pub fn infer_rtm(prev: &Box3D, cur: &Box3D) -> Rtm {
    let d = cur.center - prev.center;
    Rtm {
        dx: d.x,
        dy: d.y,
        dz: d.z,
        dtheta: wrap(cur.yaw - prev.yaw),
    }
}

/// Eight corners followed by the center.
///
/// Corner `i` (0..8) has canonical coordinates
/// `(sx * l/2, sy * w/2, sz * h/2)` where the signs `(sx, sy, sz)` enumerate
/// `(-,-,-), (-,-,+), (-,+,-), (-,+,+), (+,-,-), (+,-,+), (+,+,-), (+,+,+)`,
/// i.e. bit 2 of `i` selects `sx`, bit 1 `sy`, bit 0 `sz`.
pub fn box_key_points(b: &Box3D) -> [Point3<f64>; 9] {
    let h = b.size.half_extents();
    let mut out = [Point3::from(b.center); 9];
    for (i, slot) in out.iter_mut().take(8).enumerate() {
        let sign = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
        let local = Point3::new(sign(2) * h.x, sign(1) * h.y, sign(0) * h.z);
        *slot = to_world(&local, b);
    }
    out
}

pub fn points_in_box(points: &[Point3<f64>], b: &Box3D) -> Vec<bool> {
    points.iter().map(|p| b.contains(p)).collect()
}

#[inline]
pub fn to_canonical(p: &Point3<f64>, b: &Box3D) -> Point3<f64> {
    let (s, c) = b.yaw.sin_cos();
    let d = p.coords - b.center;
    Point3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
}

#[inline]
pub fn to_world(p: &Point3<f64>, b: &Box3D) -> Point3<f64> {
    let (s, c) = b.yaw.sin_cos();
    Point3::new(
        c * p.x - s * p.y + b.center.x,
        s * p.x + c * p.y + b.center.y,
        p.z + b.center.z,
    )
}

pub fn world_to_canonical(points: &[Point3<f64>], b: &Box3D) -> Vec<Point3<f64>> {
    points.iter().map(|p| to_canonical(p, b)).collect()
}

pub fn canonical_to_world(points: &[Point3<f64>], b: &Box3D) -> Vec<Point3<f64>> {
    points.iter().map(|p| to_world(p, b)).collect()
}

/// Rotates a horizontal vector by `yaw` about the up-axis.
#[inline]
pub fn rotate_z(v: &Vector3<f64>, yaw: f64) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

/// Sutherland–Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        // > 0 means left of edge a->b, i.e. inside for a ccw polygon
        let side = |p: &[f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let sc = side(&cur);
            let sp = side(&prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of two box footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    let area = polygon_area(&poly);
    if area > 1e-12 {
        area
    } else {
        0.0
    }
}

/// Exact rotated 3D IoU.
pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.size.volume() + b.size.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn center_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.center - b.center).norm()
}
