//! Native dataset layout:
//!
//! ```text
//! <root>/manifest.json          tracklet directories with split tags
//! <root>/<id>/meta.json         id, category, frames, boxes, annotations
//! <root>/<id>/<frame>.bin       packed little-endian f32 xyz
//! ```

use std::fs;
use std::path::Path;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, MotionKind, OracleAnnotations, Source, Split, Tracklet};
use crate::geometry::{Box3D, Rtm};
use crate::pointcloud::Frame;

pub const NATIVE_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub tracklets: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Option<Self>, DataError> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DataError::corrupt(&path, e.to_string()))?;
        check_version(&path, m.format_version)?;
        Ok(Some(m))
    }

    pub fn save(&self, root: &Path) -> Result<(), DataError> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| DataError::io(&path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    timestamp: i64,
    file: String,
    num_points: usize,
}

#[derive(Serialize, Deserialize)]
struct AnnotationMeta {
    /// One `0`/`1` string per frame.
    target_labels: Vec<String>,
    rtms: Vec<[f64; 4]>,
    dynamic: Vec<bool>,
    motion: MotionKind,
    distractors: Vec<Vec<[f64; 7]>>,
}

#[derive(Serialize, Deserialize)]
struct TrackletMeta {
    format_version: u32,
    id: String,
    category: String,
    source: Source,
    frames: Vec<FrameMeta>,
    gt_boxes: Vec<[f64; 7]>,
    annotations: Option<AnnotationMeta>,
}

fn check_version(path: &Path, found: u32) -> Result<(), DataError> {
    if found != NATIVE_FORMAT_VERSION {
        return Err(DataError::Version {
            path: path.display().to_string(),
            found,
            expected: NATIVE_FORMAT_VERSION,
        });
    }
    Ok(())
}

fn encode_points(points: &[Point3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 12);
    for p in points {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes packed little-endian f32 records of `stride` floats, keeping the
/// first three as xyz.
pub(crate) fn decode_points(path: &Path, bytes: &[u8], stride: usize) -> Result<Vec<Point3<f64>>, DataError> {
    let record = 4 * stride;
    if bytes.len() % record != 0 {
        return Err(DataError::corrupt(
            path,
            format!("{} bytes is not a multiple of {record}", bytes.len()),
        ));
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    let points: Vec<Point3<f64>> = bytes
        .chunks_exact(record)
        .map(|r| Point3::new(f(&r[0..4]), f(&r[4..8]), f(&r[8..12])))
        .collect();
    if points.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
        return Err(DataError::corrupt(path, "non-finite coordinate"));
    }
    Ok(points)
}

fn labels_to_string(labels: &[bool]) -> String {
    labels.iter().map(|&l| if l { '1' } else { '0' }).collect()
}

fn box_from(path: &Path, a: [f64; 7]) -> Result<Box3D, DataError> {
    Box3D::from_array(a).map_err(|e| DataError::corrupt(path, format!("invalid box: {e}")))
}

fn write_tracklet(t: &Tracklet, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut frames = Vec::with_capacity(t.frames.len());
    for (i, f) in t.frames.iter().enumerate() {
        let file = format!("{i:06}.bin");
        let path = dir.join(&file);
        fs::write(&path, encode_points(&f.points)).map_err(|e| DataError::io(&path, e))?;
        frames.push(FrameMeta {
            timestamp: f.timestamp,
            file,
            num_points: f.points.len(),
        });
    }
    let annotations = t.annotations.as_ref().map(|a| AnnotationMeta {
        target_labels: a.target_labels.iter().map(|l| labels_to_string(l)).collect(),
        rtms: a.rtms.iter().map(Rtm::to_array).collect(),
        dynamic: a.dynamic.clone(),
        motion: a.motion,
        distractors: a
            .distractors
            .iter()
            .map(|d| d.iter().map(Box3D::to_array).collect())
            .collect(),
    });
    let meta = TrackletMeta {
        format_version: NATIVE_FORMAT_VERSION,
        id: t.id.clone(),
        category: t.category.clone(),
        source: t.source,
        frames,
        gt_boxes: t.gt_boxes.iter().map(Box3D::to_array).collect(),
        annotations,
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string(&meta).expect("meta serializes");
    fs::write(&path, text).map_err(|e| DataError::io(&path, e))
}

fn read_tracklet(dir: &Path) -> Result<Tracklet, DataError> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| DataError::io(&meta_path, e))?;
    let meta: TrackletMeta =
        serde_json::from_str(&text).map_err(|e| DataError::corrupt(&meta_path, e.to_string()))?;
    check_version(&meta_path, meta.format_version)?;
    let mut frames = Vec::with_capacity(meta.frames.len());
    for fm in &meta.frames {
        let path = dir.join(&fm.file);
        let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
        let points = decode_points(&path, &bytes, 3)?;
        if points.len() != fm.num_points {
            return Err(DataError::corrupt(
                &path,
                format!("expected {} points, found {}", fm.num_points, points.len()),
            ));
        }
        frames.push(Frame::new(points, fm.timestamp));
    }
    let gt_boxes = meta
        .gt_boxes
        .iter()
        .map(|&a| box_from(&meta_path, a))
        .collect::<Result<Vec<_>, _>>()?;
    let annotations = match meta.annotations {
        None => None,
        Some(a) => {
            let target_labels = a
                .target_labels
                .iter()
                .map(|s| {
                    s.chars()
                        .map(|c| match c {
                            '0' => Ok(false),
                            '1' => Ok(true),
                            _ => Err(DataError::corrupt(&meta_path, "bad label character")),
                        })
                        .collect::<Result<Vec<bool>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let rtms = a
                .rtms
                .iter()
                .map(|&r| Rtm::from_array(r).map_err(|e| DataError::corrupt(&meta_path, e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let distractors = a
                .distractors
                .iter()
                .map(|d| d.iter().map(|&b| box_from(&meta_path, b)).collect())
                .collect::<Result<Vec<Vec<Box3D>>, _>>()?;
            Some(OracleAnnotations {
                target_labels,
                rtms,
                dynamic: a.dynamic,
                motion: a.motion,
                distractors,
            })
        }
    };
    let t = Tracklet {
        id: meta.id,
        category: meta.category,
        source: meta.source,
        frames,
        gt_boxes,
        annotations,
    };
    t.validate()?;
    Ok(t)
}

/// Writes each tracklet to `<root>/<id>/` and records it in the manifest
/// under `split`, replacing any earlier entry for the same directory.
pub fn write_native(tracklets: &[Tracklet], root: &Path, split: Split) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(|e| DataError::io(root, e))?;
    tracklets
        .par_iter()
        .try_for_each(|t| write_tracklet(t, &root.join(&t.id)))?;
    let mut manifest = DatasetManifest::load(root)?.unwrap_or(DatasetManifest {
        format_version: NATIVE_FORMAT_VERSION,
        tracklets: Vec::new(),
    });
    for t in tracklets {
        manifest.tracklets.retain(|e| e.dir != t.id);
        manifest.tracklets.push(ManifestEntry {
            dir: t.id.clone(),
            split,
        });
    }
    manifest.save(root)
}

fn read_dirs(root: &Path, dirs: Vec<String>) -> Result<Vec<Tracklet>, DataError> {
    dirs.par_iter().map(|d| read_tracklet(&root.join(d))).collect()
}

/// Reads every tracklet listed in the manifest, in manifest order. Without a
/// manifest, every subdirectory holding a `meta.json` is read in name order;
/// an empty directory gives an empty dataset.
pub fn read_native(root: &Path) -> Result<Vec<Tracklet>, DataError> {
    if let Some(m) = DatasetManifest::load(root)? {
        return read_dirs(root, m.tracklets.into_iter().map(|e| e.dir).collect());
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| DataError::io(root, e))? {
        let entry = entry.map_err(|e| DataError::io(root, e))?;
        if entry.path().join(META_FILE).is_file() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    read_dirs(root, dirs)
}

/// Reads the tracklets the manifest tags with `split`.
pub fn read_native_split(root: &Path, split: Split) -> Result<Vec<Tracklet>, DataError> {
    let m = DatasetManifest::load(root)?.ok_or_else(|| {
        DataError::corrupt(&root.join(MANIFEST_FILE), "manifest required to select a split")
    })?;
    read_dirs(
        root,
        m.tracklets
            .into_iter()
            .filter(|e| e.split == split)
            .map(|e| e.dir)
            .collect(),
    )
}
