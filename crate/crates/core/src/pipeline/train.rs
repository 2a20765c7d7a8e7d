//! Training driver: sample preparation with augmentation, per-sample
//! forward/backward through all three networks, and Adam over batches.

use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{sample_loss, stage1_boxes, LossBreakdown, LossWeights, SampleOutputs, SampleTargets};
use super::{argmax2, canonical_to_world_rtm, fallback_mask, stage1_rows, stage2_rows, PipelineError, TrackerConfig, POSITIVE};
use crate::augment::{motion_augment, perturb_prev_box, AugmentConfig};
use crate::data::{is_dynamic, TrainingPair};
use crate::geometry::{to_canonical, Box3D};
use crate::nn::{Adam, Model, Scalar, Tensor};
use crate::pointcloud::{
    build_st_cloud, crop_and_sample, motion_assisted_merge, split_by_time, Frame, PointCloudError, StCloud,
    FEATURE_DIM,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u32,
    pub lr: f64,
    /// Multiplicative decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: u32,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub weights: LossWeights,
    pub tracker: TrackerConfig,
}

impl TrainConfig {
    /// Batch 256, learning rate 1e-3 decayed tenfold every 20 epochs.
    pub fn paper() -> Self {
        Self {
            batch_size: 256,
            epochs: 60,
            lr: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 20,
            seed: 0,
            augment: AugmentConfig::default(),
            weights: LossWeights::default(),
            tracker: TrackerConfig::default(),
        }
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err("lr must be > 0 and lr_decay in (0, 1]".into());
        }
        if self.tracker.points_per_frame == 0 || !(self.tracker.margin >= 0.0) {
            return Err("points_per_frame must be >= 1 and margin >= 0".into());
        }
        self.augment.validate()
    }
}

/// One augmented, cropped training pair ready for the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub b_in: Box3D,
    pub st: StCloud,
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub targets: SampleTargets,
}

fn crop_or_center(f: &Frame, b: &Box3D, cfg: &TrackerConfig, seed: u64) -> Result<Frame, PointCloudError> {
    match crop_and_sample(f, b, cfg.margin, cfg.points_per_frame, seed) {
        Err(PointCloudError::EmptyRegion) => Ok(Frame::new(vec![Point3::from(b.center)], f.timestamp)),
        other => other,
    }
}

/// Motion-augments the target instances (points inside the ground-truth
/// boxes), jitters the augmented previous box into the network's input box,
/// then crops both frames around it. Returns `None` when the current crop
/// is empty.
pub fn prepare_sample(pair: &TrainingPair<'_>, cfg: &TrainConfig, seed: u64) -> Option<PreparedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = |f: &Frame, b: &Box3D| -> (Vec<Point3<f64>>, Vec<Point3<f64>>) {
        f.points.iter().partition(|p| b.contains(p))
    };
    let (prev_t, prev_bg) = split(pair.prev_frame(), &pair.prev_box);
    let (cur_t, cur_bg) = split(pair.cur_frame(), &pair.cur_box);
    let aug = motion_augment(&prev_t, &pair.prev_box, &cur_t, &pair.cur_box, &cfg.augment, &mut rng);
    let compose = |target: Vec<Point3<f64>>, bg: Vec<Point3<f64>>, b: &Box3D, ts: i64| {
        let mut pts = target;
        pts.extend(bg.into_iter().filter(|p| !b.contains(p)));
        Frame::new(pts, ts)
    };
    let prev = compose(aug.prev_points, prev_bg, &aug.prev_box, pair.prev_frame().timestamp);
    let cur = compose(aug.cur_points, cur_bg, &aug.cur_box, pair.cur_frame().timestamp);
    let b_in = perturb_prev_box(&aug.prev_box, &cfg.augment, &mut rng);
    let cur_crop = crop_and_sample(&cur, &b_in, cfg.tracker.margin, cfg.tracker.points_per_frame, rng.random()).ok()?;
    let prev_crop = crop_or_center(&prev, &b_in, &cfg.tracker, rng.random()).ok()?;
    let mut st = build_st_cloud(&prev_crop, &cur_crop);
    st.annotate(&b_in);
    let features = st.features(&b_in);
    let seg_labels = (0..st.len())
        .map(|i| {
            let b = if st.is_prev(i) { &aug.prev_box } else { &aug.cur_box };
            b.contains(&st.xyz(i))
        })
        .collect();
    Some(PreparedSample {
        b_in,
        st,
        features,
        targets: SampleTargets {
            seg_labels,
            dynamic: is_dynamic(&aug.prev_box, &aug.cur_box),
            gt_prev: aug.prev_box,
            gt_cur: aug.cur_box,
        },
    })
}

/// Loss breakdown, accuracy counts and parameter gradients of one sample.
pub struct SampleResult<T> {
    pub loss: LossBreakdown,
    pub seg_correct: usize,
    pub seg_total: usize,
    pub motion_correct: bool,
    pub grads: Model<T>,
}

fn vec4<T: Scalar>(v: &[T]) -> [f64; 4] {
    [v[0].as_f64(), v[1].as_f64(), v[2].as_f64(), v[3].as_f64()]
}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

/// Runs segmentation, Stage I and Stage II the way the tracker does
/// (argmax mask with the box-prior fallback, motion state gating) and
/// backpropagates the weighted loss into a fresh gradient model.
pub fn forward_backward<T: Scalar>(
    model: &Model<T>,
    s: &PreparedSample,
    cfg: &TrainConfig,
) -> Result<SampleResult<T>, PipelineError> {
    let seg_tape = model.seg.forward(&Tensor::<T>::from_rows(&s.features))?;
    let l = seg_tape.logits();
    let seg_logits: Vec<[f64; 2]> = (0..l.rows()).map(|i| [l.row(i)[0].as_f64(), l.row(i)[1].as_f64()]).collect();
    let mut mask: Vec<bool> = seg_logits.iter().map(|r| argmax2(r) == POSITIVE).collect();
    let seg_correct = mask.iter().zip(&s.targets.seg_labels).filter(|(a, b)| a == b).count();
    if !mask.iter().any(|&m| m) {
        mask = fallback_mask(&s.st, &s.b_in, cfg.tracker.margin);
    }
    let (prev_t, cur_t) = split_by_time(&s.st, &mask)?;
    if prev_t.is_empty() && cur_t.is_empty() {
        return Err(PipelineError::DegenerateTarget);
    }
    let s1_tape = model
        .stage1
        .forward(&Tensor::<T>::from_rows(&stage1_rows(&prev_t, &cur_t, &s.b_in)))?;
    let m = s1_tape.motion();
    let motion = [
        m[0].as_f64(),
        m[1].as_f64(),
        m[2].as_f64(),
        m[3].as_f64(),
        m[4].as_f64(),
        m[5].as_f64(),
    ];
    let mut out = SampleOutputs {
        b_in: s.b_in,
        seg_logits,
        motion,
        prev_correction: vec4(s1_tape.prev_correction()),
        stage2: None,
    };
    let (refined, coarse, dynamic) = stage1_boxes(&out)?;
    let rtm = canonical_to_world_rtm(&[motion[0], motion[1], motion[2], motion[3]], s.b_in.yaw)?;
    let merged = motion_assisted_merge(&prev_t, &cur_t, &rtm, &refined, dynamic);
    let canonical: Vec<Point3<f64>> = merged.iter().map(|p| to_canonical(p, &coarse)).collect();
    let s2_tape = if canonical.is_empty() {
        None
    } else {
        let t = model.stage2.forward(&Tensor::<T>::from_rows(&stage2_rows(&canonical)))?;
        out.stage2 = Some(vec4(t.correction()));
        Some(t)
    };

    let (loss, g) = sample_loss(&out, &s.targets, &cfg.weights)?;
    let mut grads = model.zeros_like();
    let dlogits = Tensor::<T>::from_rows(&g.seg_logits);
    model.seg.backward(&seg_tape, dlogits, &mut grads.seg);
    model
        .stage1
        .backward(&s1_tape, &to_t::<T>(&g.motion), &to_t::<T>(&g.prev_correction), &mut grads.stage1);
    if let Some(t) = &s2_tape {
        model.stage2.backward(t, &to_t::<T>(&g.stage2), &mut grads.stage2);
    }
    Ok(SampleResult {
        loss,
        seg_correct,
        seg_total: mask.len(),
        motion_correct: dynamic == s.targets.dynamic,
        grads,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub lr: f64,
    /// Sample-weighted mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub seg_accuracy: f64,
    pub motion_accuracy: f64,
    pub samples: usize,
    /// Pairs dropped because the current crop was empty.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default)]
struct Accum {
    loss: [f64; 7],
    seg_correct: usize,
    seg_total: usize,
    motion_correct: usize,
    samples: usize,
}

impl Accum {
    fn add(&mut self, l: &LossBreakdown, seg_correct: usize, seg_total: usize, motion_ok: bool) {
        let v = [
            l.cls_target,
            l.cls_motion,
            l.reg_motion,
            l.reg_refine_prev,
            l.reg_1st,
            l.reg_2nd,
            l.total,
        ];
        for (a, b) in self.loss.iter_mut().zip(v) {
            *a += b;
        }
        self.seg_correct += seg_correct;
        self.seg_total += seg_total;
        self.motion_correct += usize::from(motion_ok);
        self.samples += 1;
    }

    fn merge(&mut self, o: &Accum) {
        for (a, b) in self.loss.iter_mut().zip(o.loss) {
            *a += b;
        }
        self.seg_correct += o.seg_correct;
        self.seg_total += o.seg_total;
        self.motion_correct += o.motion_correct;
        self.samples += o.samples;
    }

    fn mean(&self) -> LossBreakdown {
        let n = self.samples.max(1) as f64;
        let l = self.loss.map(|v| v / n);
        LossBreakdown {
            cls_target: l[0],
            cls_motion: l[1],
            reg_motion: l[2],
            reg_refine_prev: l[3],
            reg_1st: l[4],
            reg_2nd: l[5],
            total: l[6],
        }
    }
}

/// Exclusive owner of the model and optimizer state during training.
pub struct Trainer {
    pub model: Model<f32>,
    pub cfg: TrainConfig,
    pub epochs_completed: u32,
    adam: Adam<f32>,
}

impl Trainer {
    pub fn new(model: Model<f32>, cfg: TrainConfig, epochs_completed: u32) -> Result<Self, PipelineError> {
        cfg.validate().map_err(PipelineError::Model)?;
        let adam = Adam::new(&model);
        Ok(Self {
            model,
            cfg,
            epochs_completed,
            adam,
        })
    }

    fn step_inner(&mut self, batch: &[PreparedSample], lr: f64) -> Result<Accum, PipelineError> {
        let results: Vec<Result<SampleResult<f32>, PipelineError>> = batch
            .par_iter()
            .map(|s| forward_backward(&self.model, s, &self.cfg))
            .collect();
        let mut acc = Accum::default();
        let mut total: Option<Model<f32>> = None;
        // fixed reduction order keeps updates independent of thread count
        for r in results {
            let r = match r {
                Ok(r) => r,
                Err(PipelineError::DegenerateTarget) => continue,
                Err(e) => return Err(e),
            };
            if !r.loss.total.is_finite() {
                return Err(PipelineError::NonFinite);
            }
            acc.add(&r.loss, r.seg_correct, r.seg_total, r.motion_correct);
            match total.as_mut() {
                Some(t) => t.add_assign(&r.grads),
                None => total = Some(r.grads),
            }
        }
        if let Some(mut g) = total {
            g.scale(1.0 / acc.samples as f32);
            self.adam.step(&mut self.model, &g, lr)?;
        }
        Ok(acc)
    }

    /// One Adam update on the batch mean; returns the batch-mean loss
    /// evaluated before the update.
    pub fn step(&mut self, batch: &[PreparedSample], lr: f64) -> Result<LossBreakdown, PipelineError> {
        Ok(self.step_inner(batch, lr)?.mean())
    }

    /// One pass over `pairs` in a seeded random order. Samples are prepared
    /// with seeds derived from `(seed, epoch, pair index)`.
    pub fn run_epoch(&mut self, pairs: &[TrainingPair<'_>]) -> Result<EpochMetrics, PipelineError> {
        let epoch = self.epochs_completed;
        let lr = self.cfg.lr_at(epoch);
        let epoch_seed = derive_seed(self.cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut acc = Accum::default();
        let mut skipped = 0;
        for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<Option<PreparedSample>> = chunk
                .par_iter()
                .map(|&i| prepare_sample(&pairs[i], &self.cfg, derive_seed(epoch_seed, i as u64)))
                .collect();
            skipped += batch.iter().filter(|s| s.is_none()).count();
            let batch: Vec<PreparedSample> = batch.into_iter().flatten().collect();
            if batch.is_empty() {
                continue;
            }
            let a = self.step_inner(&batch, lr).map_err(|e| match e {
                PipelineError::NonFinite | PipelineError::Nn(crate::nn::NnError::NonFinite(_)) => {
                    PipelineError::NonFiniteLoss { epoch, batch: bi }
                }
                other => other,
            })?;
            acc.merge(&a);
        }
        self.epochs_completed += 1;
        Ok(EpochMetrics {
            epoch,
            lr,
            loss: acc.mean(),
            seg_accuracy: acc.seg_correct as f64 / acc.seg_total.max(1) as f64,
            motion_accuracy: acc.motion_correct as f64 / acc.samples.max(1) as f64,
            samples: acc.samples,
            skipped,
        })
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub epochs_completed: u32,
}

/// Trains from epoch `start_epoch` up to `cfg.epochs`, calling `on_epoch`
/// after every epoch (for logging and checkpointing).
pub fn train<F>(
    model: Model<f32>,
    pairs: &[TrainingPair<'_>],
    cfg: &TrainConfig,
    start_epoch: u32,
    mut on_epoch: F,
) -> Result<TrainOutcome, PipelineError>
where
    F: FnMut(&EpochMetrics, &Model<f32>),
{
    let mut trainer = Trainer::new(model, cfg.clone(), start_epoch)?;
    let mut metrics = Vec::new();
    while trainer.epochs_completed < cfg.epochs {
        let m = trainer.run_epoch(pairs)?;
        on_epoch(&m, &trainer.model);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        metrics,
        epochs_completed: trainer.epochs_completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, make_training_pairs, SceneSpec};
    use crate::nn::ModelConfig;

    fn small_model(seed: u64) -> Model<f32> {
        Model::new(ModelConfig {
            point_widths: vec![16, 32],
            head_hidden: 16,
            init_seed: seed,
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 2,
            lr: 1e-3,
            tracker: TrackerConfig {
                margin: 2.0,
                points_per_frame: 48,
            },
            ..TrainConfig::paper()
        }
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::paper();
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(19), 1e-3);
        assert!((c.lr_at(20) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(45) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn labels_match_augmented_boxes() {
        let spec = SceneSpec {
            frames: 3,
            distractors: 1,
            ..SceneSpec::car(2)
        };
        let ts = generate_dataset(&spec, 0, 2).unwrap();
        let pairs = make_training_pairs(&ts);
        let cfg = small_cfg();
        let s = prepare_sample(&pairs[0], &cfg, 5).unwrap();
        assert_eq!(s.features.len(), 2 * cfg.tracker.points_per_frame);
        assert_eq!(s.targets.seg_labels.len(), s.st.len());
        assert!(s.targets.seg_labels.iter().any(|&l| l));
        assert_eq!(prepare_sample(&pairs[0], &cfg, 5), Some(s));
    }

    #[test]
    fn same_seed_same_metrics() {
        let spec = SceneSpec {
            frames: 3,
            ..SceneSpec::car(1)
        };
        let ts = generate_dataset(&spec, 0, 4).unwrap();
        let pairs = make_training_pairs(&ts);
        let run = || train(small_model(0), &pairs, &small_cfg(), 0, |_, _| {}).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model, b.model);
        assert_eq!(a.epochs_completed, 2);
        let c = train(
            small_model(0),
            &pairs,
            &TrainConfig {
                seed: 9,
                ..small_cfg()
            },
            0,
            |_, _| {},
        )
        .unwrap();
        assert_ne!(a.metrics, c.metrics);
    }

    #[test]
    fn resume_continues_epoch_counter() {
        let spec = SceneSpec {
            frames: 2,
            ..SceneSpec::car(3)
        };
        let ts = generate_dataset(&spec, 0, 2).unwrap();
        let pairs = make_training_pairs(&ts);
        let out = train(small_model(0), &pairs, &small_cfg(), 1, |_, _| {}).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].epoch, 1);
    }

    #[test]
    fn parameters_move_and_stay_finite() {
        let spec = SceneSpec {
            frames: 3,
            ..SceneSpec::car(4)
        };
        let ts = generate_dataset(&spec, 0, 3).unwrap();
        let pairs = make_training_pairs(&ts);
        let before = small_model(2);
        let out = train(before.clone(), &pairs, &small_cfg(), 0, |_, _| {}).unwrap();
        assert!(out.model.is_finite());
        assert_ne!(out.model, before);
    }
}
