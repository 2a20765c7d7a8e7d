//! Training objective: two classification terms and four Huber regression
//! terms, combined as `l1 * cls_target + l2 * cls_motion + l3 * (regs)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{apply_box_correction, argmax2, canonical_to_world_rtm, world_to_canonical_rtm, PipelineError, POSITIVE};
use crate::geometry::{apply_rtm, infer_rtm, rotate_z, wrap, Box3D};
use crate::nn::{cross_entropy, huber, Tensor, HUBER_DELTA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls_target: f64,
    pub cls_motion: f64,
    pub regression: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls_target: 0.1,
            cls_motion: 0.1,
            regression: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_target: f64,
    pub cls_motion: f64,
    pub reg_motion: f64,
    pub reg_refine_prev: f64,
    pub reg_1st: f64,
    pub reg_2nd: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn terms(&self) -> [f64; 6] {
        [
            self.cls_target,
            self.cls_motion,
            self.reg_motion,
            self.reg_refine_prev,
            self.reg_1st,
            self.reg_2nd,
        ]
    }

    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.cls_target * self.cls_target
            + w.cls_motion * self.cls_motion
            + w.regression * (self.reg_motion + self.reg_refine_prev + self.reg_1st + self.reg_2nd)
    }
}

/// Raw network outputs for one training pair. Motion and correction
/// vectors are in the canonical frame of the input box `b_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutputs {
    pub b_in: Box3D,
    pub seg_logits: Vec<[f64; 2]>,
    /// `dx dy dz dtheta` then the static/dynamic logits.
    pub motion: [f64; 6],
    pub prev_correction: [f64; 4],
    /// Stage-II correction in the coarse box's frame; `None` when the
    /// completed cloud was empty.
    pub stage2: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTargets {
    pub seg_labels: Vec<bool>,
    pub dynamic: bool,
    pub gt_prev: Box3D,
    pub gt_cur: Box3D,
}

/// Weighted gradients of one sample's loss with respect to its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrads {
    pub seg_logits: Vec<[f64; 2]>,
    pub motion: [f64; 6],
    pub prev_correction: [f64; 4],
    pub stage2: [f64; 4],
}

fn head4(v: &[f64]) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

fn box_residual(pred: &Box3D, gt: &Box3D) -> [f64; 4] {
    let d = pred.center - gt.center;
    [d.x, d.y, d.z, wrap(pred.yaw - gt.yaw)]
}

/// World-frame residual gradient mapped back to a correction expressed in
/// the frame of a box with heading `yaw`.
fn to_frame(g: &[f64], yaw: f64) -> [f64; 4] {
    let t = rotate_z(&Vector3::new(g[0], g[1], g[2]), -yaw);
    [t.x, t.y, t.z, g[3]]
}

/// The boxes implied by a sample's Stage-I outputs: refined previous box,
/// coarse current box and the predicted motion state.
pub fn stage1_boxes(out: &SampleOutputs) -> Result<(Box3D, Box3D, bool), PipelineError> {
    let yaw = out.b_in.yaw;
    let corr = canonical_to_world_rtm(&out.prev_correction, yaw)?;
    let rtm = canonical_to_world_rtm(&head4(&out.motion), yaw)?;
    let refined = apply_rtm(&out.b_in, &corr);
    let dynamic = argmax2(&[out.motion[4], out.motion[5]]) == POSITIVE;
    let coarse = if dynamic { apply_rtm(&refined, &rtm) } else { refined };
    Ok((refined, coarse, dynamic))
}

/// Unweighted terms (with the weighted total) and weighted gradients.
///
/// The Stage-I and Stage-II regression terms are Huber losses on the
/// residual `(center delta, wrapped yaw delta)` between the stage's box and
/// the ground-truth current box. The coarse box is treated as a constant
/// input of the Stage-II term.
pub fn sample_loss(
    out: &SampleOutputs,
    tgt: &SampleTargets,
    w: &LossWeights,
) -> Result<(LossBreakdown, SampleGrads), PipelineError> {
    let labels: Vec<usize> = tgt.seg_labels.iter().map(|&l| usize::from(l)).collect();
    let (cls_target, g_seg) = cross_entropy(&Tensor::<f64>::from_rows(&out.seg_logits), &labels)?;
    let (cls_motion, g_mot) = cross_entropy(
        &Tensor::<f64>::from_rows(&[[out.motion[4], out.motion[5]]]),
        &[usize::from(tgt.dynamic)],
    )?;

    let yaw = out.b_in.yaw;
    let rtm_target = world_to_canonical_rtm(&infer_rtm(&tgt.gt_prev, &tgt.gt_cur), yaw);
    let corr_target = world_to_canonical_rtm(&infer_rtm(&out.b_in, &tgt.gt_prev), yaw);
    let (reg_motion, g_rtm) = huber(&out.motion[..4], &rtm_target, HUBER_DELTA);
    let (reg_refine_prev, g_corr) = huber(&out.prev_correction, &corr_target, HUBER_DELTA);

    let (_, coarse, dynamic) = stage1_boxes(out)?;
    let (reg_1st, g1) = huber(&box_residual(&coarse, &tgt.gt_cur), &[0.0; 4], HUBER_DELTA);
    let g1 = to_frame(&g1, yaw);

    let (reg_2nd, g2) = match out.stage2 {
        Some(c) => {
            let fin = apply_box_correction(&coarse, &c);
            let (l, g) = huber(&box_residual(&fin, &tgt.gt_cur), &[0.0; 4], HUBER_DELTA);
            (l, to_frame(&g, coarse.yaw))
        }
        None => (huber(&box_residual(&coarse, &tgt.gt_cur), &[0.0; 4], HUBER_DELTA).0, [0.0; 4]),
    };

    let mut b = LossBreakdown {
        cls_target,
        cls_motion,
        reg_motion,
        reg_refine_prev,
        reg_1st,
        reg_2nd,
        total: 0.0,
    };
    b.total = b.weighted_total(w);

    let l3 = w.regression;
    let seg_logits = (0..g_seg.rows())
        .map(|i| [w.cls_target * g_seg.row(i)[0], w.cls_target * g_seg.row(i)[1]])
        .collect();
    let mut motion = [0.0; 6];
    for k in 0..4 {
        motion[k] = l3 * (g_rtm[k] + if dynamic { g1[k] } else { 0.0 });
    }
    motion[4] = w.cls_motion * g_mot.data()[0];
    motion[5] = w.cls_motion * g_mot.data()[1];
    let mut prev_correction = [0.0; 4];
    for k in 0..4 {
        prev_correction[k] = l3 * (g_corr[k] + g1[k]);
    }
    let stage2 = g2.map(|g| l3 * g);
    Ok((
        b,
        SampleGrads {
            seg_logits,
            motion,
            prev_correction,
            stage2,
        },
    ))
}

/// Batch-mean loss breakdown; `total` is the weighted sum of the means.
pub fn total_loss(
    outputs: &[SampleOutputs],
    targets: &[SampleTargets],
    w: &LossWeights,
) -> Result<LossBreakdown, PipelineError> {
    if outputs.is_empty() || outputs.len() != targets.len() {
        return Err(PipelineError::Model(format!(
            "total_loss: {} outputs vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut sum = [0.0; 6];
    for (o, t) in outputs.iter().zip(targets) {
        let (b, _) = sample_loss(o, t, w)?;
        for (s, v) in sum.iter_mut().zip(b.terms()) {
            *s += v;
        }
    }
    let n = outputs.len() as f64;
    let mut b = LossBreakdown {
        cls_target: sum[0] / n,
        cls_motion: sum[1] / n,
        reg_motion: sum[2] / n,
        reg_refine_prev: sum[3] / n,
        reg_1st: sum[4] / n,
        reg_2nd: sum[5] / n,
        total: 0.0,
    };
    b.total = b.weighted_total(w);
    Ok(b)
}
