//! The three learned networks of the tracker.
//!
//! * [`SegNet`]: per-point MLP, max-pooled global feature broadcast back to
//!   every point, per-point 2-class head.
//! * [`Stage1Net`]: PointNet encoder over segmented target points, a motion
//!   head (4 RTM values + 2 motion-state logits) and a head regressing a
//!   correction of the previous box.
//! * [`Stage2Net`]: PointNet encoder over the completed, canonicalized
//!   target cloud and a head regressing a box correction.

use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{maxpool_backward, maxpool_points, relu_backward_inplace, relu_inplace, Mlp, MlpTape};
use super::tensor::{gemm_acc, gemm_acc_t, Scalar, Tensor};
use super::NnError;
use crate::pointcloud::FEATURE_DIM;

/// Input channels of the Stage-I encoder: canonical `xyz` + temporal flag.
pub const STAGE1_INPUT_DIM: usize = 4;
/// Input channels of the Stage-II encoder: canonical `xyz`.
pub const STAGE2_INPUT_DIM: usize = 3;
/// Motion head outputs: `dx dy dz dtheta` then `static, dynamic` logits.
pub const MOTION_OUTPUTS: usize = 6;
pub const BOX_CORRECTION_OUTPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Widths of every per-point MLP (segmentation and both encoders).
    pub point_widths: Vec<usize>,
    /// Hidden width of every head.
    pub head_hidden: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            point_widths: vec![64, 128, 256],
            head_hidden: 128,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.point_widths.is_empty()
            || self.point_widths.iter().any(|&w| w == 0)
            || self.head_hidden == 0
        {
            return Err(NnError::Config(format!("bad widths {:?} / {}", self.point_widths, self.head_hidden)));
        }
        Ok(())
    }

    fn feature_width(&self) -> usize {
        *self.point_widths.last().expect("validated")
    }

    fn widths(&self, input: usize) -> Vec<usize> {
        std::iter::once(input).chain(self.point_widths.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegNet<T> {
    pub point_mlp: Mlp<T>,
    /// First layer takes `[per-point feature | global feature]`.
    pub head: Mlp<T>,
}

pub struct SegTape<T> {
    point: MlpTape<T>,
    argmax: Vec<usize>,
    pooled: Tensor<T>,
    hidden: Tensor<T>,
    tail: MlpTape<T>,
}

impl<T: Scalar> SegTape<T> {
    pub fn logits(&self) -> &Tensor<T> {
        &self.tail.output
    }

    fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        self.point.hash_pattern(h);
        self.argmax.hash(h);
        for v in self.hidden.data() {
            (*v > T::zero()).hash(h);
        }
        self.tail.hash_pattern(h);
    }
}

impl<T: Scalar> SegNet<T> {
    fn split_first(&self) -> (&[T], &[T], &[T]) {
        let c = self.point_mlp.out_dim();
        let first = &self.head.layers[0];
        let h = first.fan_out();
        let (top, bottom) = first.weight.data().split_at(c * h);
        (top, bottom, first.bias.data())
    }

    /// `features`: `N x 14` rows laid out as in `StCloud::features`.
    pub fn forward(&self, features: &Tensor<T>) -> Result<SegTape<T>, NnError> {
        if features.rows() == 0 {
            return Err(NnError::EmptyInput);
        }
        let point = self.point_mlp.forward(features)?;
        let (pooled, argmax) = maxpool_points(&point.output)?;
        let n = features.rows();
        let c = self.point_mlp.out_dim();
        let (top, bottom, bias) = self.split_first();
        let h = bias.len();
        // the global half of the first head layer is shared by every point
        let mut shared = bias.to_vec();
        gemm_acc(pooled.data(), 1, c, bottom, h, &mut shared);
        let mut hidden = Tensor::zeros(&[n, h]);
        for i in 0..n {
            hidden.row_mut(i).copy_from_slice(&shared);
        }
        gemm_acc(point.output.data(), n, c, top, h, hidden.data_mut());
        relu_inplace(&mut hidden);
        let tail = self.head.forward_from(1, hidden.clone())?;
        Ok(SegTape {
            point,
            argmax,
            pooled,
            hidden,
            tail,
        })
    }

    pub fn backward(&self, tape: &SegTape<T>, dlogits: Tensor<T>, grads: &mut SegNet<T>) {
        let n = tape.hidden.rows();
        let c = self.point_mlp.out_dim();
        let mut dh = self
            .head
            .backward_from(1, &tape.tail, dlogits, &mut grads.head, true)
            .expect("dx requested");
        relu_backward_inplace(&mut dh, &tape.hidden);
        let h = dh.cols();
        let mut col_sum = vec![T::zero(); h];
        for i in 0..n {
            for (s, &g) in col_sum.iter_mut().zip(dh.row(i)) {
                *s = *s + g;
            }
        }
        {
            let first = &mut grads.head.layers[0];
            let (gtop, gbottom) = first.weight.data_mut().split_at_mut(c * h);
            gemm_acc_t(tape.point.output.data(), true, c, n, dh.data(), false, h, gtop);
            gemm_acc(tape.pooled.data(), c, 1, &col_sum, h, gbottom);
            for (b, &g) in first.bias.data_mut().iter_mut().zip(&col_sum) {
                *b = *b + g;
            }
        }
        let (top, bottom, _) = self.split_first();
        let mut dlocal = Tensor::zeros(&[n, c]);
        gemm_acc_t(dh.data(), false, n, h, top, true, c, dlocal.data_mut());
        let mut dpool = vec![T::zero(); c];
        gemm_acc_t(&col_sum, false, 1, h, bottom, true, c, &mut dpool);
        maxpool_backward(&dpool, &tape.argmax, &mut dlocal);
        self.point_mlp
            .backward(&tape.point, dlocal, &mut grads.point_mlp, false);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Net<T> {
    pub encoder: Mlp<T>,
    pub motion_head: Mlp<T>,
    pub prev_refine_head: Mlp<T>,
}

pub struct Stage1Tape<T> {
    encoder: MlpTape<T>,
    argmax: Vec<usize>,
    motion: MlpTape<T>,
    refine: MlpTape<T>,
}

impl<T: Scalar> Stage1Tape<T> {
    /// `dx dy dz dtheta` followed by the two motion-state logits.
    pub fn motion(&self) -> &[T] {
        self.motion.output.data()
    }

    pub fn prev_correction(&self) -> &[T] {
        self.refine.output.data()
    }

    fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        self.encoder.hash_pattern(h);
        self.argmax.hash(h);
        self.motion.hash_pattern(h);
        self.refine.hash_pattern(h);
    }
}

impl<T: Scalar> Stage1Net<T> {
    /// `points`: `M x 4` canonical `xyz` + temporal flag of the target points.
    pub fn forward(&self, points: &Tensor<T>) -> Result<Stage1Tape<T>, NnError> {
        if points.rows() == 0 {
            return Err(NnError::EmptyInput);
        }
        let encoder = self.encoder.forward(points)?;
        let (emb, argmax) = maxpool_points(&encoder.output)?;
        let motion = self.motion_head.forward(&emb)?;
        let refine = self.prev_refine_head.forward(&emb)?;
        Ok(Stage1Tape {
            encoder,
            argmax,
            motion,
            refine,
        })
    }

    pub fn backward(
        &self,
        tape: &Stage1Tape<T>,
        dmotion: &[T],
        drefine: &[T],
        grads: &mut Stage1Net<T>,
    ) {
        let dm = Tensor::from_vec(&[1, MOTION_OUTPUTS], dmotion.to_vec()).expect("6 outputs");
        let dr = Tensor::from_vec(&[1, BOX_CORRECTION_OUTPUTS], drefine.to_vec()).expect("4 outputs");
        let mut demb = self
            .motion_head
            .backward(&tape.motion, dm, &mut grads.motion_head, true)
            .expect("dx requested");
        let demb_r = self
            .prev_refine_head
            .backward(&tape.refine, dr, &mut grads.prev_refine_head, true)
            .expect("dx requested");
        demb.add_assign(&demb_r);
        let mut dpoints = Tensor::zeros(tape.encoder.output.shape());
        maxpool_backward(demb.data(), &tape.argmax, &mut dpoints);
        self.encoder
            .backward(&tape.encoder, dpoints, &mut grads.encoder, false);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Net<T> {
    pub encoder: Mlp<T>,
    pub head: Mlp<T>,
}

pub struct Stage2Tape<T> {
    encoder: MlpTape<T>,
    argmax: Vec<usize>,
    head: MlpTape<T>,
}

impl<T: Scalar> Stage2Tape<T> {
    pub fn correction(&self) -> &[T] {
        self.head.output.data()
    }

    fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        self.encoder.hash_pattern(h);
        self.argmax.hash(h);
        self.head.hash_pattern(h);
    }
}

impl<T: Scalar> Stage2Net<T> {
    /// `points`: `M x 3` completed target cloud in the coarse box's frame.
    pub fn forward(&self, points: &Tensor<T>) -> Result<Stage2Tape<T>, NnError> {
        if points.rows() == 0 {
            return Err(NnError::EmptyInput);
        }
        let encoder = self.encoder.forward(points)?;
        let (emb, argmax) = maxpool_points(&encoder.output)?;
        let head = self.head.forward(&emb)?;
        Ok(Stage2Tape {
            encoder,
            argmax,
            head,
        })
    }

    pub fn backward(&self, tape: &Stage2Tape<T>, dcorr: &[T], grads: &mut Stage2Net<T>) {
        let d = Tensor::from_vec(&[1, BOX_CORRECTION_OUTPUTS], dcorr.to_vec()).expect("4 outputs");
        let demb = self
            .head
            .backward(&tape.head, d, &mut grads.head, true)
            .expect("dx requested");
        let mut dpoints = Tensor::zeros(tape.encoder.output.shape());
        maxpool_backward(demb.data(), &tape.argmax, &mut dpoints);
        self.encoder
            .backward(&tape.encoder, dpoints, &mut grads.encoder, false);
    }
}

/// All learnable parameters of the tracker. Also used as the gradient
/// accumulator (same layout, zero-initialized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub seg: SegNet<T>,
    pub stage1: Stage1Net<T>,
    pub stage2: Stage2Net<T>,
}

/// Output-layer weight scale for freshly initialized heads.
const HEAD_GAIN: f64 = 0.01;

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let c = config.feature_width();
        let h = config.head_hidden;
        let seg = SegNet {
            point_mlp: Mlp::init(&config.widths(FEATURE_DIM), &mut rng),
            head: Mlp::init_head(&[2 * c, h, 2], HEAD_GAIN, &mut rng),
        };
        let stage1 = Stage1Net {
            encoder: Mlp::init(&config.widths(STAGE1_INPUT_DIM), &mut rng),
            motion_head: Mlp::init_head(&[c, h, MOTION_OUTPUTS], HEAD_GAIN, &mut rng),
            prev_refine_head: Mlp::init_head(&[c, h, BOX_CORRECTION_OUTPUTS], HEAD_GAIN, &mut rng),
        };
        let stage2 = Stage2Net {
            encoder: Mlp::init(&config.widths(STAGE2_INPUT_DIM), &mut rng),
            head: Mlp::init_head(&[c, h, BOX_CORRECTION_OUTPUTS], HEAD_GAIN, &mut rng),
        };
        Ok(Self {
            config,
            seg,
            stage1,
            stage2,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            seg: SegNet {
                point_mlp: self.seg.point_mlp.zeros_like(),
                head: self.seg.head.zeros_like(),
            },
            stage1: Stage1Net {
                encoder: self.stage1.encoder.zeros_like(),
                motion_head: self.stage1.motion_head.zeros_like(),
                prev_refine_head: self.stage1.prev_refine_head.zeros_like(),
            },
            stage2: Stage2Net {
                encoder: self.stage2.encoder.zeros_like(),
                head: self.stage2.head.zeros_like(),
            },
        }
    }

    /// Parameter tensors in declaration order (the checkpoint order).
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = self.seg.point_mlp.params();
        out.extend(self.seg.head.params());
        out.extend(self.stage1.encoder.params());
        out.extend(self.stage1.motion_head.params());
        out.extend(self.stage1.prev_refine_head.params());
        out.extend(self.stage2.encoder.params());
        out.extend(self.stage2.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.seg.point_mlp.params_mut();
        out.extend(self.seg.head.params_mut());
        out.extend(self.stage1.encoder.params_mut());
        out.extend(self.stage1.motion_head.params_mut());
        out.extend(self.stage1.prev_refine_head.params_mut());
        out.extend(self.stage2.encoder.params_mut());
        out.extend(self.stage2.head.params_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for p in self.params_mut() {
            p.scale(s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::new(self.config.clone()).expect("validated config");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }
}

/// Folds the activation pattern (ReLU gates and max-pool winners) of a set
/// of tapes into a hash.
pub fn activation_pattern<T: Scalar>(
    seg: Option<&SegTape<T>>,
    s1: Option<&Stage1Tape<T>>,
    s2: Option<&Stage2Tape<T>>,
) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    if let Some(t) = seg {
        t.hash_pattern(&mut h);
    }
    if let Some(t) = s1 {
        t.hash_pattern(&mut h);
    }
    if let Some(t) = s2 {
        t.hash_pattern(&mut h);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            point_widths: vec![8, 16],
            head_hidden: 8,
            init_seed: 5,
        }
    }

    fn random_rows<const C: usize>(n: usize, seed: u64) -> Vec<[f64; C]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn seg_output_shape_and_equivariance() {
        let model = Model::<f64>::new(small_config()).unwrap();
        for n in [1, 5, 17] {
            let rows = random_rows::<FEATURE_DIM>(n, n as u64);
            let out = model.seg.forward(&Tensor::from_rows(&rows)).unwrap();
            assert_eq!(out.logits().shape(), &[n, 2]);
        }
        let rows = random_rows::<FEATURE_DIM>(12, 1);
        let base = model.seg.forward(&Tensor::from_rows(&rows)).unwrap();
        let perm: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
        let shuffled: Vec<_> = perm.iter().map(|&i| rows[i]).collect();
        let out = model.seg.forward(&Tensor::from_rows(&shuffled)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((out.logits().row(k)[c] - base.logits().row(i)[c]).abs() < 1e-12);
            }
        }
        assert!(model.seg.forward(&Tensor::zeros(&[0, FEATURE_DIM])).is_err());
    }

    #[test]
    fn stage_encoders_are_permutation_invariant() {
        let model = Model::<f64>::new(small_config()).unwrap();
        let rows = random_rows::<4>(9, 2);
        let mut rev = rows.clone();
        rev.reverse();
        let a = model.stage1.forward(&Tensor::from_rows(&rows)).unwrap();
        let b = model.stage1.forward(&Tensor::from_rows(&rev)).unwrap();
        assert_eq!(a.motion(), b.motion());
        assert_eq!(a.prev_correction(), b.prev_correction());

        let rows = random_rows::<3>(9, 3);
        let mut rev = rows.clone();
        rev.reverse();
        let a = model.stage2.forward(&Tensor::from_rows(&rows)).unwrap();
        let b = model.stage2.forward(&Tensor::from_rows(&rev)).unwrap();
        assert_eq!(a.correction(), b.correction());
    }

    #[test]
    fn init_is_seeded_and_cast_round_trips() {
        let a = Model::<f64>::new(small_config()).unwrap();
        let b = Model::<f64>::new(small_config()).unwrap();
        assert_eq!(a, b);
        assert!(a.stage2.head.layers[0].bias.data().iter().all(|v| *v == 0.0));
        let f = a.cast::<f32>();
        assert_eq!(f.cast::<f64>().cast::<f32>(), f);
        assert_eq!(a.num_params(), a.zeros_like().num_params());
    }

    #[test]
    fn all_three_networks_pass_gradient_check() {
        use crate::nn::gradcheck::{grad_check, GradCheckConfig};
        let model = Model::<f64>::new(small_config()).unwrap();
        let seg_x = Tensor::from_rows(&random_rows::<FEATURE_DIM>(7, 11));
        let s1_x = Tensor::from_rows(&random_rows::<4>(6, 12));
        let s2_x = Tensor::from_rows(&random_rows::<3>(5, 13));
        // L = sum of squared outputs / 2, so each output's gradient is itself
        let loss = |m: &Model<f64>| {
            let mut g = m.zeros_like();
            let seg = m.seg.forward(&seg_x).unwrap();
            let s1 = m.stage1.forward(&s1_x).unwrap();
            let s2 = m.stage2.forward(&s2_x).unwrap();
            let sq = |v: &[f64]| v.iter().map(|x| x * x / 2.0).sum::<f64>();
            let l = sq(seg.logits().data()) + sq(s1.motion()) + sq(s1.prev_correction()) + sq(s2.correction());
            m.seg.backward(&seg, seg.logits().clone(), &mut g.seg);
            m.stage1.backward(&s1, s1.motion(), s1.prev_correction(), &mut g.stage1);
            m.stage2.backward(&s2, s2.correction(), &mut g.stage2);
            (l, activation_pattern(Some(&seg), Some(&s1), Some(&s2)), g)
        };
        let (_, _, analytic) = loss(&model);
        let all: Vec<usize> = (0..model.params().len()).collect();
        let report = grad_check(&model, &analytic, &all, |m| {
            let (l, h, _) = loss(m);
            (l, h)
        }, GradCheckConfig::default());
        assert!(report.checked > 100);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
