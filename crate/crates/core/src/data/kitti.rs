//! KITTI tracking layout:
//!
//! ```text
//! <root>/velodyne/<seq>/<frame:06>.bin   f32 LE x y z reflectance
//! <root>/label_02/<seq>.txt              one object per row, camera frame
//! <root>/calib/<seq>.txt                 Tr_velo_cam (3x4), R_rect (3x3)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::native::decode_points;
use super::{DataError, Source, Tracklet};
use crate::geometry::{wrap, Box3D, Size3};
use crate::pointcloud::Frame;

/// LiDAR to rectified-camera transform: `p_cam = rot * p_velo + trans`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KittiCalib {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
    rot_inv: Matrix3<f64>,
}

/// A box as written in a label row: camera-frame bottom-face center,
/// KITTI dimension order and `rotation_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBox {
    pub height: f64,
    pub width: f64,
    pub length: f64,
    pub location: Vector3<f64>,
    pub rotation_y: f64,
}

fn parse_floats(line: &str) -> Option<Vec<f64>> {
    line.split_whitespace().map(|v| v.parse().ok()).collect()
}

impl KittiCalib {
    pub fn new(velo_to_cam: [[f64; 4]; 3], r_rect: Matrix3<f64>) -> Result<Self, DataError> {
        let r = Matrix3::from_fn(|i, j| velo_to_cam[i][j]);
        let t = Vector3::new(velo_to_cam[0][3], velo_to_cam[1][3], velo_to_cam[2][3]);
        let rot = r_rect * r;
        let rot_inv = rot
            .try_inverse()
            .ok_or_else(|| DataError::MissingCalib("singular LiDAR-to-camera rotation".into()))?;
        Ok(Self {
            rot,
            trans: r_rect * t,
            rot_inv,
        })
    }

    /// Parses a tracking calib file. Accepts `Tr_velo_cam`/`Tr_velo_to_cam`
    /// and `R_rect`/`R0_rect`; a missing rectification defaults to identity.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut tr = None;
        let mut r_rect = Matrix3::identity();
        for line in text.lines() {
            let line = line.trim();
            let (key, rest) = match line.split_once(':') {
                Some(kv) => kv,
                None => match line.split_once(char::is_whitespace) {
                    Some(kv) => kv,
                    None => continue,
                },
            };
            let values = parse_floats(rest);
            match (key.trim(), values) {
                ("Tr_velo_cam" | "Tr_velo_to_cam", Some(v)) if v.len() == 12 => {
                    tr = Some([
                        [v[0], v[1], v[2], v[3]],
                        [v[4], v[5], v[6], v[7]],
                        [v[8], v[9], v[10], v[11]],
                    ]);
                }
                ("R_rect" | "R0_rect", Some(v)) if v.len() == 9 => {
                    r_rect = Matrix3::from_row_slice(&v);
                }
                _ => {}
            }
        }
        let tr = tr.ok_or_else(|| DataError::MissingCalib("no Tr_velo_cam entry".into()))?;
        Self::new(tr, r_rect)
    }

    pub fn velo_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    pub fn cam_to_velo(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot_inv * (p - self.trans)
    }

    /// Converts a label box to a LiDAR-frame box. The center is the
    /// bottom-face center lifted by half the height (camera y points down);
    /// the yaw is the LiDAR-frame heading of the camera direction
    /// `(cos ry, 0, -sin ry)`.
    pub fn label_to_box(&self, c: &CameraBox) -> Result<Box3D, DataError> {
        let center_cam = c.location - Vector3::new(0.0, c.height / 2.0, 0.0);
        let center = self.cam_to_velo(&center_cam);
        let heading = self.rot_inv * Vector3::new(c.rotation_y.cos(), 0.0, -c.rotation_y.sin());
        let yaw = heading.y.atan2(heading.x);
        Box3D::new(center, Size3::new(c.width, c.length, c.height), yaw)
            .map_err(|e| DataError::Corrupt {
                path: "label".into(),
                reason: e.to_string(),
            })
    }

    /// Exact inverse of [`KittiCalib::label_to_box`]: `rotation_y` is solved
    /// so that its LiDAR-frame heading points along the box yaw.
    pub fn box_to_camera(&self, b: &Box3D) -> CameraBox {
        let location = self.velo_to_cam(&b.center) + Vector3::new(0.0, b.size.height / 2.0, 0.0);
        let u = self.rot_inv * Vector3::x();
        let v = -(self.rot_inv * Vector3::z());
        let (s, c) = b.yaw.sin_cos();
        let normal = (-s, c);
        let un = u.x * normal.0 + u.y * normal.1;
        let vn = v.x * normal.0 + v.y * normal.1;
        let mut ry = (-un).atan2(vn);
        let dir = u * ry.cos() + v * ry.sin();
        if dir.x * c + dir.y * s < 0.0 {
            ry += std::f64::consts::PI;
        }
        CameraBox {
            height: b.size.height,
            width: b.size.width,
            length: b.size.length,
            location,
            rotation_y: wrap(ry),
        }
    }
}

struct LabelRow {
    frame: usize,
    track: i64,
    kind: String,
    cam: CameraBox,
}

fn parse_label_row(line: &str) -> Option<LabelRow> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 17 {
        return None;
    }
    let num = |i: usize| f[i].parse::<f64>().ok();
    Some(LabelRow {
        frame: f[0].parse().ok()?,
        track: f[1].parse().ok()?,
        kind: f[2].to_string(),
        cam: CameraBox {
            height: num(10)?,
            width: num(11)?,
            length: num(12)?,
            location: Vector3::new(num(13)?, num(14)?, num(15)?),
            rotation_y: num(16)?,
        },
    })
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

/// Loads one tracklet per track id of sequence `seq` (e.g. `"0000"`).
///
/// `DontCare` rows are skipped. Each tracklet starts at the track's first
/// labeled frame and ends at the first frame without a label. A 0-byte point
/// file is an empty frame.
pub fn load_kitti_tracklets(root: &Path, seq: &str) -> Result<Vec<Tracklet>, DataError> {
    let calib_path = root.join("calib").join(format!("{seq}.txt"));
    if !calib_path.is_file() {
        return Err(DataError::MissingCalib(calib_path.display().to_string()));
    }
    let calib = KittiCalib::parse(&read_text(&calib_path)?)?;
    let label_path = root.join("label_02").join(format!("{seq}.txt"));
    let mut tracks: BTreeMap<i64, BTreeMap<usize, LabelRow>> = BTreeMap::new();
    for (lineno, line) in read_text(&label_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_label_row(line)
            .ok_or_else(|| DataError::corrupt(&label_path, format!("malformed row {}", lineno + 1)))?;
        if row.kind == "DontCare" || row.track < 0 {
            continue;
        }
        tracks.entry(row.track).or_default().insert(row.frame, row);
    }

    let velo_dir = root.join("velodyne").join(seq);
    let mut cache: HashMap<usize, Frame> = HashMap::new();
    let mut out = Vec::with_capacity(tracks.len());
    for (track, rows) in tracks {
        let mut frames = Vec::new();
        let mut boxes = Vec::new();
        let mut category = String::new();
        let mut expected = None;
        for (&frame, row) in &rows {
            if expected.is_some_and(|e| e != frame) {
                break;
            }
            expected = Some(frame + 1);
            if category.is_empty() {
                category = row.kind.to_lowercase();
            }
            if !cache.contains_key(&frame) {
                let path = velo_dir.join(format!("{frame:06}.bin"));
                let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
                let points = decode_points(&path, &bytes, 4)?;
                cache.insert(frame, Frame::new(points, frame as i64));
            }
            frames.push(cache[&frame].clone());
            boxes.push(calib.label_to_box(&row.cam)?);
        }
        out.push(Tracklet {
            id: format!("{seq}_{track}"),
            category,
            source: Source::Kitti,
            frames,
            gt_boxes: boxes,
            annotations: None,
        });
    }
    Ok(out)
}
