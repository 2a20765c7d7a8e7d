//! Spatial-temporal network inputs: cropping, temporal merging, the prior
//! targetness map, the box-aware distance map and motion-assisted merging.

use nalgebra::Point3;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_key_points, to_canonical, Box3D, Rtm};

/// Number of per-point input channels of the segmentation network:
/// `x y z t` (4) + targetness (1) + distance map (9).
pub const FEATURE_DIM: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointCloudError {
    #[error("crop region around the box contains no points")]
    EmptyRegion,
    #[error("invalid crop parameters: margin {margin}, count {count}")]
    InvalidCrop { margin: f64, count: usize },
    #[error("mask length {mask} does not match cloud size {cloud}")]
    MaskLength { mask: usize, cloud: usize },
}

/// One LiDAR sweep in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub points: Vec<Point3<f64>>,
    pub timestamp: i64,
}

impl Frame {
    pub fn new(points: Vec<Point3<f64>>, timestamp: i64) -> Self {
        Self { points, timestamp }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Previous and current frame merged into one cloud with a temporal channel.
///
/// Rows `0..n_prev` come from the previous frame (t = 0), the rest from the
/// current frame (t = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct StCloud {
    pub points: Vec<[f64; 4]>,
    pub n_prev: usize,
    pub targetness: Vec<f64>,
    pub distmap: Vec<[f64; 9]>,
}

impl StCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_prev(&self, i: usize) -> bool {
        i < self.n_prev
    }

    pub fn xyz(&self, i: usize) -> Point3<f64> {
        let p = self.points[i];
        Point3::new(p[0], p[1], p[2])
    }

    /// Fills the targetness and distance-map channels for `b_prev`.
    pub fn annotate(&mut self, b_prev: &Box3D) {
        self.targetness = prior_targetness_map(self, b_prev);
        self.distmap = box_aware_distmap(self, b_prev);
    }

    /// Network input rows: `x y z t | targetness | distmap`, with `xyz`
    /// expressed in the canonical frame of `frame_box` so the network sees
    /// translation- and heading-normalized coordinates.
    ///
    /// Requires [`StCloud::annotate`] to have been called.
    pub fn features(&self, frame_box: &Box3D) -> Vec<[f64; FEATURE_DIM]> {
        assert_eq!(self.targetness.len(), self.len(), "cloud not annotated");
        (0..self.len())
            .map(|i| {
                let c = to_canonical(&self.xyz(i), frame_box);
                let mut row = [0.0; FEATURE_DIM];
                row[0] = c.x;
                row[1] = c.y;
                row[2] = c.z;
                row[3] = self.points[i][3];
                row[4] = self.targetness[i];
                row[5..].copy_from_slice(&self.distmap[i]);
                row
            })
            .collect()
    }
}

fn cmp_points(a: &Point3<f64>, b: &Point3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Crops `f` to `b` grown by `margin` on every side and samples exactly `n`
/// points: uniformly without replacement when enough candidates exist,
/// otherwise every candidate once plus uniform draws with replacement.
///
/// Candidates are sorted before sampling, so the result does not depend on
/// the order of points in `f`.
pub fn crop_and_sample(
    f: &Frame,
    b: &Box3D,
    margin: f64,
    n: usize,
    seed: u64,
) -> Result<Frame, PointCloudError> {
    if !(margin >= 0.0) || n == 0 {
        return Err(PointCloudError::InvalidCrop { margin, count: n });
    }
    let region = b.enlarged(margin);
    let mut candidates: Vec<Point3<f64>> =
        f.points.iter().filter(|p| region.contains(p)).copied().collect();
    if candidates.is_empty() {
        return Err(PointCloudError::EmptyRegion);
    }
    candidates.sort_by(cmp_points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = if candidates.len() >= n {
        index::sample(&mut rng, candidates.len(), n)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    } else {
        let mut out = candidates.clone();
        while out.len() < n {
            out.push(candidates[rng.random_range(0..candidates.len())]);
        }
        out
    };
    Ok(Frame::new(points, f.timestamp))
}

/// Concatenates two frames with a temporal channel (0 = prev, 1 = cur).
/// The feature channels are left empty; see [`StCloud::annotate`].
pub fn build_st_cloud(prev: &Frame, cur: &Frame) -> StCloud {
    let points: Vec<[f64; 4]> = prev
        .points
        .iter()
        .map(|p| [p.x, p.y, p.z, 0.0])
        .chain(cur.points.iter().map(|p| [p.x, p.y, p.z, 1.0]))
        .collect();
    StCloud {
        points,
        n_prev: prev.len(),
        targetness: Vec::new(),
        distmap: Vec::new(),
    }
}

/// 1 for previous-frame points inside `b_prev`, 0 for those outside, 0.5 for
/// every current-frame point.
pub fn prior_targetness_map(st: &StCloud, b_prev: &Box3D) -> Vec<f64> {
    (0..st.len())
        .map(|i| {
            if !st.is_prev(i) {
                0.5
            } else if b_prev.contains(&st.xyz(i)) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Distances from previous-frame points to the 9 key points of `b_prev`
/// (order of [`box_key_points`]); current-frame rows are zero.
pub fn box_aware_distmap(st: &StCloud, b_prev: &Box3D) -> Vec<[f64; 9]> {
    let kp = box_key_points(b_prev);
    (0..st.len())
        .map(|i| {
            let mut row = [0.0; 9];
            if st.is_prev(i) {
                let p = st.xyz(i);
                for (d, k) in row.iter_mut().zip(kp.iter()) {
                    *d = (p - k).norm();
                }
            }
            row
        })
        .collect()
}

/// Routes masked points to the previous or current target set by their
/// temporal channel.
pub fn split_by_time(
    st: &StCloud,
    mask: &[bool],
) -> Result<(Vec<Point3<f64>>, Vec<Point3<f64>>), PointCloudError> {
    if mask.len() != st.len() {
        return Err(PointCloudError::MaskLength {
            mask: mask.len(),
            cloud: st.len(),
        });
    }
    let mut prev = Vec::new();
    let mut cur = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            if st.is_prev(i) {
                prev.push(st.xyz(i));
            } else {
                cur.push(st.xyz(i));
            }
        }
    }
    Ok((prev, cur))
}

/// Moves a point rigidly with a box under `m`: rotation by `dtheta` about
/// `pivot`, then translation by `(dx, dy, dz)`.
#[inline]
pub fn transform_point(p: &Point3<f64>, m: &Rtm, pivot: &nalgebra::Vector3<f64>) -> Point3<f64> {
    let (s, c) = m.dtheta.sin_cos();
    let dx = p.x - pivot.x;
    let dy = p.y - pivot.y;
    Point3::new(
        pivot.x + c * dx - s * dy + m.dx,
        pivot.y + s * dx + c * dy + m.dy,
        p.z + m.dz,
    )
}

/// Motion-assisted shape completion: carries the previous target points to
/// the current timestamp (dynamic targets only) and appends the current ones.
pub fn motion_assisted_merge(
    p_prev: &[Point3<f64>],
    p_cur: &[Point3<f64>],
    m: &Rtm,
    prev_box: &Box3D,
    dynamic: bool,
) -> Vec<Point3<f64>> {
    let mut out = Vec::with_capacity(p_prev.len() + p_cur.len());
    if dynamic {
        out.extend(p_prev.iter().map(|p| transform_point(p, m, &prev_box.center)));
    } else {
        out.extend_from_slice(p_prev);
    }
    out.extend_from_slice(p_cur);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_rtm, Size3};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn frame(points: &[[f64; 3]], ts: i64) -> Frame {
        Frame::new(points.iter().map(|p| Point3::from(*p)).collect(), ts)
    }

    fn unit_box() -> Box3D {
        Box3D::new(Vector3::zeros(), Size3::new(1.0, 1.0, 1.0), 0.0).unwrap()
    }

    fn key(p: &Point3<f64>) -> [u64; 3] {
        [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
    }

    #[test]
    fn crop_downsamples_without_replacement() {
        let pts: Vec<[f64; 3]> = (0..5000)
            .map(|i| {
                let t = i as f64 / 5000.0;
                [t - 0.5, (t * 37.0).fract() - 0.5, (t * 91.0).fract() - 0.5]
            })
            .collect();
        let f = frame(&pts, 0);
        let out = crop_and_sample(&f, &unit_box(), 2.0, 1024, 7).unwrap();
        assert_eq!(out.len(), 1024);
        let distinct: HashSet<_> = out.points.iter().map(key).collect();
        assert_eq!(distinct.len(), 1024);
    }

    #[test]
    fn crop_upsamples_with_replacement() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [0.1 * i as f64, 0.0, 0.0]).collect();
        let f = frame(&pts, 3);
        let out = crop_and_sample(&f, &unit_box(), 2.0, 1024, 1).unwrap();
        assert_eq!(out.len(), 1024);
        assert_eq!(out.timestamp, 3);
        let seen: HashSet<_> = out.points.iter().map(key).collect();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn crop_empty_region_is_an_error() {
        let f = frame(&[[100.0, 0.0, 0.0]], 0);
        assert_eq!(
            crop_and_sample(&f, &unit_box(), 2.0, 16, 0),
            Err(PointCloudError::EmptyRegion)
        );
        assert!(crop_and_sample(&f, &unit_box(), -1.0, 16, 0).is_err());
        assert!(crop_and_sample(&f, &unit_box(), 1.0, 0, 0).is_err());
    }

    #[test]
    fn crop_margin_applies_on_each_side() {
        // unit box + 2 m margin -> half extent 2.5
        let f = frame(&[[2.4, 0.0, 0.0], [2.6, 0.0, 0.0]], 0);
        let out = crop_and_sample(&f, &unit_box(), 2.0, 1, 0).unwrap();
        assert_eq!(out.points[0], Point3::new(2.4, 0.0, 0.0));
    }

    #[test]
    fn st_cloud_layout() {
        let prev = frame(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], 0);
        let cur = frame(&[[7.0, 8.0, 9.0], [0.5, 0.25, 0.125], [1.0, 1.0, 1.0]], 1);
        let st = build_st_cloud(&prev, &cur);
        assert_eq!(st.len(), 5);
        let t: Vec<f64> = st.points.iter().map(|p| p[3]).collect();
        assert_eq!(t, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(st.points[3][..3], [0.5, 0.25, 0.125]);

        let st = build_st_cloud(&frame(&[], 0), &cur);
        assert!(st.points.iter().all(|p| p[3] == 1.0));
    }

    #[test]
    fn targetness_and_distmap_fixture() {
        let b = unit_box();
        let prev = frame(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.5, 0.5, 0.5]], 0);
        let cur = frame(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.3, 0.3, 0.3]], 1);
        let mut st = build_st_cloud(&prev, &cur);
        st.annotate(&b);
        assert_eq!(st.targetness, vec![1.0, 0.0, 1.0, 0.5, 0.5, 0.5]);
        assert_eq!(st.distmap[0][8], 0.0);
        // corner (+,+,+) is key point 7
        assert_eq!(st.distmap[2][7], 0.0);
        assert!((st.distmap[2][8] - 0.75f64.sqrt()).abs() < 1e-12);
        for row in &st.distmap[3..] {
            assert_eq!(row, &[0.0; 9]);
        }
        let feats = st.features(&b);
        assert_eq!(feats[1][..5], [10.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(feats[4][3..5], [1.0, 0.5]);
    }

    #[test]
    fn split_by_time_cases() {
        let prev = frame(&[[0.0; 3], [1.0; 3]], 0);
        let cur = frame(&[[2.0; 3], [3.0; 3], [4.0; 3]], 1);
        let st = build_st_cloud(&prev, &cur);
        let (a, b) = split_by_time(&st, &[true; 5]).unwrap();
        assert_eq!((a.len(), b.len()), (2, 3));
        let (a, b) = split_by_time(&st, &[false; 5]).unwrap();
        assert!(a.is_empty() && b.is_empty());
        let (a, b) = split_by_time(&st, &[true, true, false, false, false]).unwrap();
        assert_eq!(a.len(), 2);
        assert!(b.is_empty());
        assert!(split_by_time(&st, &[true]).is_err());
    }

    #[test]
    fn merge_cases() {
        let b = unit_box();
        let prev = vec![Point3::new(0.1, 0.2, 0.3), Point3::new(-0.2, 0.0, 0.1)];
        let cur = vec![Point3::new(1.0, 0.0, 0.0)];
        let m = Rtm::new(1.0, 0.0, 0.0, 0.0).unwrap();

        let merged = motion_assisted_merge(&prev, &cur, &m, &b, false);
        assert_eq!(merged, [prev.clone(), cur.clone()].concat());

        let merged = motion_assisted_merge(&prev, &cur, &m, &b, true);
        assert_eq!(merged[0], Point3::new(1.1, 0.2, 0.3));
        assert_eq!(merged[2], cur[0]);

        let same = motion_assisted_merge(&prev, &cur, &Rtm::IDENTITY, &b, true);
        assert_eq!(same, motion_assisted_merge(&prev, &cur, &Rtm::IDENTITY, &b, false));
    }

    #[test]
    fn merge_moves_points_with_their_box() {
        let b = Box3D::new(Vector3::new(3.0, 1.0, 0.0), Size3::new(1.8, 4.0, 1.6), 0.4).unwrap();
        let m = Rtm::new(0.7, -1.2, 0.05, 0.3).unwrap();
        let moved = apply_rtm(&b, &m);
        for kp in box_key_points(&b) {
            let q = transform_point(&kp, &m, &b.center);
            let local_before = to_canonical(&kp, &b);
            let local_after = to_canonical(&q, &moved);
            assert!((local_before - local_after).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prop_feature_invariants(
            prev in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 0..40),
            cur in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 0..40),
            yaw in -3.0..3.0f64,
        ) {
            let b = Box3D::new(Vector3::new(0.2, -0.1, 0.0), Size3::new(1.0, 2.0, 1.5), yaw).unwrap();
            let mut st = build_st_cloud(&frame(&prev, 0), &frame(&cur, 1));
            st.annotate(&b);
            for i in 0..st.len() {
                let s = st.targetness[i];
                prop_assert!(s == 0.0 || s == 0.5 || s == 1.0);
                prop_assert!(st.distmap[i].iter().all(|d| *d >= 0.0));
                if st.is_prev(i) {
                    prop_assert_eq!(s == 1.0, b.contains(&st.xyz(i)));
                } else {
                    prop_assert_eq!(s, 0.5);
                    prop_assert_eq!(st.distmap[i], [0.0; 9]);
                }
            }
        }

        #[test]
        fn prop_crop_is_reproducible_and_order_free(
            pts in prop::collection::vec(prop::array::uniform3(-4.0..4.0f64), 1..200),
            n in 1usize..64,
            seed in any::<u64>(),
        ) {
            let f = frame(&pts, 0);
            let b = unit_box();
            let a = crop_and_sample(&f, &b, 0.5, n, seed);
            prop_assert_eq!(a.clone(), crop_and_sample(&f, &b, 0.5, n, seed));
            let mut rev = f.clone();
            rev.points.reverse();
            prop_assert_eq!(a, crop_and_sample(&rev, &b, 0.5, n, seed));
        }
    }
}
