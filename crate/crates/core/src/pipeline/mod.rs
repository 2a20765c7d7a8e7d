//! The two-stage tracker: target segmentation, Stage-I motion prediction and
//! Stage-II refinement over a completed target cloud, plus the frame loop,
//! the training loss and the training driver.

pub mod loss;
pub mod train;

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{is_dynamic, Tracklet};
use crate::geometry::{apply_rtm, infer_rtm, rotate_z, to_canonical, wrap, Box3D, Rtm};
use crate::nn::{Model, NnError, Scalar, Tensor};
use crate::pointcloud::{
    build_st_cloud, crop_and_sample, motion_assisted_merge, split_by_time, Frame, PointCloudError, StCloud,
};
use crate::rng::derive_seed;

pub use loss::{sample_loss, total_loss, LossBreakdown, LossWeights, SampleGrads, SampleOutputs, SampleTargets};
pub use train::{train, EpochMetrics, PreparedSample, TrainConfig, TrainOutcome, Trainer};

/// Logit column of the target class (segmentation) and of the dynamic
/// class (motion state). Ties resolve to column 0.
pub const POSITIVE: usize = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no target points to track")]
    DegenerateTarget,
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model produced non-finite output")]
    NonFinite,
    #[error("model failure: {0}")]
    Model(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: u32, batch: usize },
}

/// Crop and sampling parameters shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Crop margin around the previous box on every side, meters.
    pub margin: f64,
    /// Points sampled from each of the two frames.
    pub points_per_frame: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            margin: 2.0,
            points_per_frame: 1024,
        }
    }
}

/// What a model sees besides point data: the previous box (tracker output,
/// never ground truth) and the two frame timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairContext {
    pub prev_timestamp: i64,
    pub cur_timestamp: i64,
    pub b_prev: Box3D,
}

/// Stage-I head outputs with motions already in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Raw {
    pub rtm: Rtm,
    pub motion_logits: [f64; 2],
    pub prev_correction: Rtm,
}

/// The learned parts of the tracker. Implemented by [`Model`] and by the
/// ground-truth [`OracleModel`] used to verify the plumbing.
pub trait MotionModel: Sync {
    /// Per-point `[background, target]` logits.
    fn segment_logits(&self, ctx: &PairContext, st: &StCloud) -> Result<Vec<[f64; 2]>, PipelineError>;

    fn stage1(
        &self,
        ctx: &PairContext,
        prev_targets: &[Point3<f64>],
        cur_targets: &[Point3<f64>],
    ) -> Result<Stage1Raw, PipelineError>;

    /// Correction `dx dy dz dtheta` in the coarse box's canonical frame;
    /// `canonical` is the completed target cloud in that frame.
    fn stage2(&self, ctx: &PairContext, canonical: &[Point3<f64>], coarse: &Box3D) -> Result<[f64; 4], PipelineError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Output {
    pub rtm: Rtm,
    pub motion_logits: [f64; 2],
    pub refined_prev_box: Box3D,
    pub coarse_box: Box3D,
}

impl Stage1Output {
    pub fn dynamic(&self) -> bool {
        argmax2(&self.motion_logits) == POSITIVE
    }
}

pub fn argmax2(logits: &[f64; 2]) -> usize {
    usize::from(logits[1] > logits[0])
}

/// Rotates a canonical-frame motion vector of a box with heading `yaw` into
/// a world-frame RTM.
pub fn canonical_to_world_rtm(v: &[f64; 4], yaw: f64) -> Result<Rtm, PipelineError> {
    let t = rotate_z(&Vector3::new(v[0], v[1], v[2]), yaw);
    Rtm::new(t.x, t.y, t.z, v[3]).map_err(|_| PipelineError::NonFinite)
}

pub fn world_to_canonical_rtm(m: &Rtm, yaw: f64) -> [f64; 4] {
    let t = rotate_z(&m.translation(), -yaw);
    [t.x, t.y, t.z, m.dtheta]
}

/// Applies a correction expressed in `b`'s canonical frame.
pub fn apply_box_correction(b: &Box3D, corr: &[f64; 4]) -> Box3D {
    Box3D {
        center: b.center + rotate_z(&Vector3::new(corr[0], corr[1], corr[2]), b.yaw),
        size: b.size,
        yaw: wrap(b.yaw + corr[3]),
    }
}

/// The correction that [`apply_box_correction`] needs to turn `from` into
/// `to` (sizes aside).
pub fn canonical_residual(from: &Box3D, to: &Box3D) -> [f64; 4] {
    let c = to_canonical(&Point3::from(to.center), from);
    [c.x, c.y, c.z, wrap(to.yaw - from.yaw)]
}

/// Refined previous box and coarse current box from Stage-I outputs: the
/// RTM is applied only when the motion state is dynamic.
pub fn decode_stage1(b_prev: &Box3D, raw: &Stage1Raw) -> Stage1Output {
    let refined = apply_rtm(b_prev, &raw.prev_correction);
    let dynamic = argmax2(&raw.motion_logits) == POSITIVE;
    let coarse = if dynamic { apply_rtm(&refined, &raw.rtm) } else { refined };
    Stage1Output {
        rtm: raw.rtm,
        motion_logits: raw.motion_logits,
        refined_prev_box: refined,
        coarse_box: coarse,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: Vec<bool>,
    pub used_fallback: bool,
}

/// Previous-frame points inside `b_prev` and current-frame points inside
/// `b_prev` grown by `margin`.
pub fn fallback_mask(st: &StCloud, b_prev: &Box3D, margin: f64) -> Vec<bool> {
    let grown = b_prev.enlarged(margin);
    (0..st.len())
        .map(|i| {
            let p = st.xyz(i);
            if st.is_prev(i) {
                b_prev.contains(&p)
            } else {
                grown.contains(&p)
            }
        })
        .collect()
}

/// Argmax target mask, falling back to the box prior when nothing is
/// classified as target.
pub fn segment_target<M: MotionModel + ?Sized>(
    model: &M,
    ctx: &PairContext,
    st: &StCloud,
    margin: f64,
) -> Result<Segmentation, PipelineError> {
    let logits = model.segment_logits(ctx, st)?;
    if logits.len() != st.len() {
        return Err(PipelineError::Model(format!(
            "{} logits for {} points",
            logits.len(),
            st.len()
        )));
    }
    let mask: Vec<bool> = logits.iter().map(|l| argmax2(l) == POSITIVE).collect();
    if mask.iter().any(|&m| m) {
        return Ok(Segmentation {
            mask,
            used_fallback: false,
        });
    }
    let mask = fallback_mask(st, &ctx.b_prev, margin);
    if !mask.iter().any(|&m| m) {
        return Err(PipelineError::DegenerateTarget);
    }
    Ok(Segmentation {
        mask,
        used_fallback: true,
    })
}

pub fn stage1_predict<M: MotionModel + ?Sized>(
    model: &M,
    ctx: &PairContext,
    prev_targets: &[Point3<f64>],
    cur_targets: &[Point3<f64>],
) -> Result<Stage1Output, PipelineError> {
    if prev_targets.is_empty() && cur_targets.is_empty() {
        return Err(PipelineError::DegenerateTarget);
    }
    let raw = model.stage1(ctx, prev_targets, cur_targets)?;
    if !raw.motion_logits.iter().all(|v| v.is_finite()) {
        return Err(PipelineError::NonFinite);
    }
    Ok(decode_stage1(&ctx.b_prev, &raw))
}

/// Completes the target with motion-compensated previous points, regresses
/// a correction in the coarse box's frame and applies it. An empty
/// completed cloud leaves the coarse box unchanged.
pub fn stage2_refine<M: MotionModel + ?Sized>(
    model: &M,
    ctx: &PairContext,
    prev_targets: &[Point3<f64>],
    cur_targets: &[Point3<f64>],
    s1: &Stage1Output,
) -> Result<Box3D, PipelineError> {
    let merged = motion_assisted_merge(prev_targets, cur_targets, &s1.rtm, &s1.refined_prev_box, s1.dynamic());
    if merged.is_empty() {
        return Ok(s1.coarse_box);
    }
    let canonical: Vec<Point3<f64>> = merged.iter().map(|p| to_canonical(p, &s1.coarse_box)).collect();
    let corr = model.stage2(ctx, &canonical, &s1.coarse_box)?;
    if !corr.iter().all(|v| v.is_finite()) {
        return Err(PipelineError::NonFinite);
    }
    Ok(apply_box_correction(&s1.coarse_box, &corr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    EmptyCurrentCrop,
    EmptyTargetSet,
    NonFiniteOutput,
    ModelFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub prev_targets: usize,
    pub cur_targets: usize,
    pub dynamic: bool,
    pub used_fallback: bool,
    pub empty_prev_crop: bool,
    /// Set when the frame fell back to the previous box.
    pub degenerate: Option<Degenerate>,
    pub refined_prev: Option<Box3D>,
    pub coarse: Option<Box3D>,
}

fn crop_seeds(seed: u64, timestamp: i64) -> (u64, u64) {
    let s = derive_seed(seed, timestamp as u64);
    (derive_seed(s, 0), derive_seed(s, 1))
}

/// One tracking step from `b_prev` to a box in `cur`. Degenerate inputs
/// return `b_prev` with the reason recorded in the diagnostics.
pub fn track_frame<M: MotionModel + ?Sized>(
    model: &M,
    prev: &Frame,
    cur: &Frame,
    b_prev: &Box3D,
    cfg: &TrackerConfig,
    seed: u64,
) -> (Box3D, FrameDiagnostics) {
    let mut diag = FrameDiagnostics::default();
    match track_frame_inner(model, prev, cur, b_prev, cfg, seed, &mut diag) {
        Ok(b) => (b, diag),
        Err(e) => {
            diag.degenerate = Some(match e {
                PipelineError::PointCloud(PointCloudError::EmptyRegion) => Degenerate::EmptyCurrentCrop,
                PipelineError::DegenerateTarget => Degenerate::EmptyTargetSet,
                PipelineError::NonFinite => Degenerate::NonFiniteOutput,
                _ => Degenerate::ModelFailure,
            });
            log::debug!("frame {}: keeping previous box ({e})", cur.timestamp);
            (*b_prev, diag)
        }
    }
}

fn track_frame_inner<M: MotionModel + ?Sized>(
    model: &M,
    prev: &Frame,
    cur: &Frame,
    b_prev: &Box3D,
    cfg: &TrackerConfig,
    seed: u64,
    diag: &mut FrameDiagnostics,
) -> Result<Box3D, PipelineError> {
    let (prev_seed, cur_seed) = crop_seeds(seed, cur.timestamp);
    let cur_crop = crop_and_sample(cur, b_prev, cfg.margin, cfg.points_per_frame, cur_seed)?;
    let prev_crop = match crop_and_sample(prev, b_prev, cfg.margin, cfg.points_per_frame, prev_seed) {
        Ok(f) => f,
        Err(PointCloudError::EmptyRegion) => {
            diag.empty_prev_crop = true;
            Frame::new(vec![Point3::from(b_prev.center)], prev.timestamp)
        }
        Err(e) => return Err(e.into()),
    };
    let mut st = build_st_cloud(&prev_crop, &cur_crop);
    st.annotate(b_prev);
    let ctx = PairContext {
        prev_timestamp: prev.timestamp,
        cur_timestamp: cur.timestamp,
        b_prev: *b_prev,
    };
    let seg = segment_target(model, &ctx, &st, cfg.margin)?;
    diag.used_fallback = seg.used_fallback;
    let (prev_t, cur_t) = split_by_time(&st, &seg.mask)?;
    diag.prev_targets = prev_t.len();
    diag.cur_targets = cur_t.len();
    let s1 = stage1_predict(model, &ctx, &prev_t, &cur_t)?;
    diag.dynamic = s1.dynamic();
    diag.refined_prev = Some(s1.refined_prev_box);
    diag.coarse = Some(s1.coarse_box);
    let out = stage2_refine(model, &ctx, &prev_t, &cur_t, &s1)?;
    if !(out.center.iter().all(|v| v.is_finite()) && out.yaw.is_finite()) {
        return Err(PipelineError::NonFinite);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub boxes: Vec<Box3D>,
    pub diagnostics: Vec<FrameDiagnostics>,
    /// Per-frame wall time in milliseconds (0 for the initial frame).
    pub wall_ms: Vec<f64>,
}

/// Tracks from `initial` through `frames`, feeding each output box forward
/// as the next frame's previous box. Only point data is consumed.
pub fn track_sequence<M: MotionModel + ?Sized>(
    model: &M,
    frames: &[Frame],
    initial: &Box3D,
    cfg: &TrackerConfig,
    seed: u64,
) -> TrackResult {
    let mut boxes = vec![*initial];
    let mut diagnostics = vec![FrameDiagnostics::default()];
    let mut wall_ms = vec![0.0];
    for w in frames.windows(2) {
        let start = Instant::now();
        let (b, d) = track_frame(model, &w[0], &w[1], boxes.last().expect("non-empty"), cfg, seed);
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        boxes.push(b);
        diagnostics.push(d);
    }
    if frames.is_empty() {
        return TrackResult {
            boxes: Vec::new(),
            diagnostics: Vec::new(),
            wall_ms: Vec::new(),
        };
    }
    TrackResult {
        boxes,
        diagnostics,
        wall_ms,
    }
}

/// Network input of Stage I: target points in the frame of `frame_box`
/// with a temporal flag.
pub fn stage1_rows(prev: &[Point3<f64>], cur: &[Point3<f64>], frame_box: &Box3D) -> Vec<[f64; 4]> {
    let row = |p: &Point3<f64>, t: f64| {
        let c = to_canonical(p, frame_box);
        [c.x, c.y, c.z, t]
    };
    prev.iter()
        .map(|p| row(p, 0.0))
        .chain(cur.iter().map(|p| row(p, 1.0)))
        .collect()
}

pub fn stage2_rows(canonical: &[Point3<f64>]) -> Vec<[f64; 3]> {
    canonical.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn first4<T: Scalar>(v: &[T]) -> [f64; 4] {
    [v[0].as_f64(), v[1].as_f64(), v[2].as_f64(), v[3].as_f64()]
}

impl<T: Scalar> MotionModel for Model<T> {
    fn segment_logits(&self, ctx: &PairContext, st: &StCloud) -> Result<Vec<[f64; 2]>, PipelineError> {
        let x = Tensor::<T>::from_rows(&st.features(&ctx.b_prev));
        let tape = self.seg.forward(&x)?;
        let l = tape.logits();
        Ok((0..l.rows()).map(|i| [l.row(i)[0].as_f64(), l.row(i)[1].as_f64()]).collect())
    }

    fn stage1(
        &self,
        ctx: &PairContext,
        prev_targets: &[Point3<f64>],
        cur_targets: &[Point3<f64>],
    ) -> Result<Stage1Raw, PipelineError> {
        let x = Tensor::<T>::from_rows(&stage1_rows(prev_targets, cur_targets, &ctx.b_prev));
        let tape = self.stage1.forward(&x)?;
        let m = tape.motion();
        let yaw = ctx.b_prev.yaw;
        Ok(Stage1Raw {
            rtm: canonical_to_world_rtm(&first4(m), yaw)?,
            motion_logits: [m[4].as_f64(), m[5].as_f64()],
            prev_correction: canonical_to_world_rtm(&first4(tape.prev_correction()), yaw)?,
        })
    }

    fn stage2(&self, _ctx: &PairContext, canonical: &[Point3<f64>], _coarse: &Box3D) -> Result<[f64; 4], PipelineError> {
        let x = Tensor::<T>::from_rows(&stage2_rows(canonical));
        let tape = self.stage2.forward(&x)?;
        Ok(first4(tape.correction()))
    }
}

/// Ground truth injected in place of every network: in-box segmentation,
/// the true RTM and motion state, and zero corrections. Boxes are looked up
/// by frame timestamp.
#[derive(Debug, Clone, Default)]
pub struct OracleModel {
    boxes: HashMap<i64, Box3D>,
}

impl OracleModel {
    pub fn from_tracklet(t: &Tracklet) -> Self {
        Self {
            boxes: t
                .frames
                .iter()
                .map(|f| f.timestamp)
                .zip(t.gt_boxes.iter().copied())
                .collect(),
        }
    }

    fn gt(&self, ts: i64) -> Result<&Box3D, PipelineError> {
        self.boxes
            .get(&ts)
            .ok_or_else(|| PipelineError::Model(format!("no ground truth at timestamp {ts}")))
    }
}

fn one_hot(positive: bool) -> [f64; 2] {
    if positive {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

impl MotionModel for OracleModel {
    fn segment_logits(&self, ctx: &PairContext, st: &StCloud) -> Result<Vec<[f64; 2]>, PipelineError> {
        let prev = self.gt(ctx.prev_timestamp)?;
        let cur = self.gt(ctx.cur_timestamp)?;
        Ok((0..st.len())
            .map(|i| {
                let b = if st.is_prev(i) { prev } else { cur };
                one_hot(b.contains(&st.xyz(i)))
            })
            .collect())
    }

    fn stage1(&self, ctx: &PairContext, _: &[Point3<f64>], _: &[Point3<f64>]) -> Result<Stage1Raw, PipelineError> {
        let prev = self.gt(ctx.prev_timestamp)?;
        let cur = self.gt(ctx.cur_timestamp)?;
        Ok(Stage1Raw {
            rtm: infer_rtm(prev, cur),
            motion_logits: one_hot(is_dynamic(prev, cur)),
            prev_correction: Rtm::IDENTITY,
        })
    }

    fn stage2(&self, _: &PairContext, _: &[Point3<f64>], _: &Box3D) -> Result<[f64; 4], PipelineError> {
        Ok([0.0; 4])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_tracklet, MotionKind, MotionSpec, SceneSpec};
    use crate::geometry::{iou3d, Size3};
    use crate::nn::ModelConfig;

    /// Fixed outputs for every head.
    struct Scripted {
        seg: f64,
        rtm: Rtm,
        logits: [f64; 2],
        corr: Rtm,
        stage2: [f64; 4],
    }

    impl MotionModel for Scripted {
        fn segment_logits(&self, _: &PairContext, st: &StCloud) -> Result<Vec<[f64; 2]>, PipelineError> {
            Ok(vec![[0.0, self.seg]; st.len()])
        }
        fn stage1(&self, _: &PairContext, _: &[Point3<f64>], _: &[Point3<f64>]) -> Result<Stage1Raw, PipelineError> {
            Ok(Stage1Raw {
                rtm: self.rtm,
                motion_logits: self.logits,
                prev_correction: self.corr,
            })
        }
        fn stage2(&self, _: &PairContext, _: &[Point3<f64>], _: &Box3D) -> Result<[f64; 4], PipelineError> {
            Ok(self.stage2)
        }
    }

    fn scripted() -> Scripted {
        Scripted {
            seg: 1.0,
            rtm: Rtm::new(0.7, -0.2, 0.0, 0.1).unwrap(),
            logits: [0.0, 1.0],
            corr: Rtm::IDENTITY,
            stage2: [0.0; 4],
        }
    }

    fn car(x: f64, y: f64, yaw: f64) -> Box3D {
        Box3D::new(Vector3::new(x, y, -0.9), Size3::new(1.8, 4.0, 1.6), yaw).unwrap()
    }

    fn ctx(b: Box3D) -> PairContext {
        PairContext {
            prev_timestamp: 0,
            cur_timestamp: 1,
            b_prev: b,
        }
    }

    fn pair_scene(seed: u64) -> Tracklet {
        generate_synthetic_tracklet(&SceneSpec {
            frames: 6,
            distractors: 2,
            motion: MotionSpec {
                kind: MotionKind::Turning,
                speed_range: [0.5, 1.5],
                ..MotionSpec::default()
            },
            ..SceneSpec::car(seed)
        })
        .unwrap()
    }

    #[test]
    fn static_state_keeps_refined_box() {
        let b = car(3.0, 1.0, 0.3);
        let mut m = scripted();
        m.logits = [2.0, -1.0];
        m.corr = Rtm::new(0.1, 0.0, 0.0, 0.05).unwrap();
        let s1 = stage1_predict(&m, &ctx(b), &[Point3::origin()], &[]).unwrap();
        assert!(!s1.dynamic());
        assert_eq!(s1.coarse_box, s1.refined_prev_box);
        assert_eq!(s1.refined_prev_box, apply_rtm(&b, &m.corr));
        m.logits = [1.0, 1.0];
        assert!(!stage1_predict(&m, &ctx(b), &[Point3::origin()], &[]).unwrap().dynamic());
    }

    #[test]
    fn stage1_oracle_heads_give_gt() {
        let prev = car(3.0, 1.0, 0.3);
        let cur = car(4.1, 1.7, 0.45);
        let mut m = scripted();
        m.rtm = infer_rtm(&prev, &cur);
        let s1 = stage1_predict(&m, &ctx(prev), &[Point3::origin()], &[]).unwrap();
        assert!((s1.coarse_box.center - cur.center).norm() < 1e-12);
        assert!(wrap(s1.coarse_box.yaw - cur.yaw).abs() < 1e-12);
        assert!(matches!(
            stage1_predict(&m, &ctx(prev), &[], &[]),
            Err(PipelineError::DegenerateTarget)
        ));
    }

    #[test]
    fn stage2_residual_recovers_gt() {
        let coarse = car(3.0, 1.0, 2.9);
        let gt = car(3.4, 0.8, -3.0);
        let mut m = scripted();
        m.stage2 = canonical_residual(&coarse, &gt);
        let s1 = Stage1Output {
            rtm: Rtm::IDENTITY,
            motion_logits: [1.0, 0.0],
            refined_prev_box: coarse,
            coarse_box: coarse,
        };
        let out = stage2_refine(&m, &ctx(coarse), &[Point3::origin()], &[], &s1).unwrap();
        assert!((out.center - gt.center).norm() < 1e-9);
        assert!(wrap(out.yaw - gt.yaw).abs() < 1e-9);
        m.stage2 = [0.0; 4];
        assert_eq!(stage2_refine(&m, &ctx(coarse), &[Point3::origin()], &[], &s1).unwrap(), coarse);
        m.stage2 = [5.0; 4];
        assert_eq!(stage2_refine(&m, &ctx(coarse), &[], &[], &s1).unwrap(), coarse);
    }

    #[test]
    fn background_logits_fall_back_to_prior() {
        let t = pair_scene(2);
        let b = t.gt_boxes[0];
        let mut st = build_st_cloud(&t.frames[0], &t.frames[1]);
        st.annotate(&b);
        let mut m = scripted();
        m.seg = -1.0;
        let seg = segment_target(&m, &ctx(b), &st, 2.0).unwrap();
        assert!(seg.used_fallback);
        assert_eq!(seg.mask, fallback_mask(&st, &b, 2.0));
        assert_eq!(seg.mask.len(), st.len());
    }

    #[test]
    fn oracle_mask_matches_in_box_labels() {
        let t = pair_scene(4);
        let oracle = OracleModel::from_tracklet(&t);
        let mut st = build_st_cloud(&t.frames[0], &t.frames[1]);
        st.annotate(&t.gt_boxes[0]);
        let seg = segment_target(&oracle, &ctx(t.gt_boxes[0]), &st, 2.0).unwrap();
        let expect: Vec<bool> = crate::geometry::points_in_box(&t.frames[0].points, &t.gt_boxes[0])
            .into_iter()
            .chain(crate::geometry::points_in_box(&t.frames[1].points, &t.gt_boxes[1]))
            .collect();
        assert_eq!(seg.mask, expect);
    }

    #[test]
    fn oracle_sequence_reproduces_gt() {
        for seed in 0..4 {
            let t = pair_scene(seed);
            let oracle = OracleModel::from_tracklet(&t);
            let r = track_sequence(&oracle, &t.frames, &t.gt_boxes[0], &TrackerConfig::default(), 1);
            assert_eq!(r.boxes.len(), t.len());
            for (p, g) in r.boxes.iter().zip(&t.gt_boxes) {
                assert!(iou3d(p, g) >= 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn target_leaving_range_keeps_previous_box() {
        let t = pair_scene(5);
        let far = car(500.0, 0.0, 0.0);
        let (b, d) = track_frame(&OracleModel::from_tracklet(&t), &t.frames[0], &t.frames[1], &far, &TrackerConfig::default(), 0);
        assert_eq!(b, far);
        assert_eq!(d.degenerate, Some(Degenerate::EmptyCurrentCrop));
    }

    #[test]
    fn single_frame_sequence() {
        let t = pair_scene(6);
        let r = track_sequence(&scripted(), &t.frames[..1], &t.gt_boxes[0], &TrackerConfig::default(), 0);
        assert_eq!(r.boxes, vec![t.gt_boxes[0]]);
    }

    #[test]
    fn network_tracking_is_deterministic_and_order_invariant() {
        let model = Model::<f32>::new(ModelConfig {
            point_widths: vec![16, 32],
            head_hidden: 16,
            init_seed: 3,
        })
        .unwrap();
        let t = pair_scene(7);
        let cfg = TrackerConfig {
            margin: 2.0,
            points_per_frame: 128,
        };
        let a = track_frame(&model, &t.frames[0], &t.frames[1], &t.gt_boxes[0], &cfg, 9);
        let b = track_frame(&model, &t.frames[0], &t.frames[1], &t.gt_boxes[0], &cfg, 9);
        assert_eq!(a, b);
        let mut shuffled = t.frames.clone();
        for f in &mut shuffled {
            f.points.reverse();
            let n = f.points.len();
            f.points.rotate_left(n / 3);
        }
        let c = track_frame(&model, &shuffled[0], &shuffled[1], &t.gt_boxes[0], &cfg, 9);
        assert_eq!(a, c);
    }

    #[test]
    fn changing_future_ground_truth_does_not_change_predictions() {
        let model = Model::<f32>::new(ModelConfig {
            point_widths: vec![8, 16],
            head_hidden: 8,
            init_seed: 1,
        })
        .unwrap();
        let t = pair_scene(8);
        let cfg = TrackerConfig {
            margin: 2.0,
            points_per_frame: 64,
        };
        let a = track_sequence(&model, &t.frames, &t.gt_boxes[0], &cfg, 0);
        let mut t2 = t.clone();
        t2.gt_boxes[3] = car(0.0, 0.0, 0.0);
        let b = track_sequence(&model, &t2.frames, &t2.gt_boxes[0], &cfg, 0);
        assert_eq!(a.boxes, b.boxes);
    }

    #[test]
    fn rtm_frame_conversions_invert() {
        let m = Rtm::new(0.3, -1.2, 0.1, 0.4).unwrap();
        let v = world_to_canonical_rtm(&m, 2.5);
        let back = canonical_to_world_rtm(&v, 2.5).unwrap();
        for (a, b) in back.to_array().iter().zip(m.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
