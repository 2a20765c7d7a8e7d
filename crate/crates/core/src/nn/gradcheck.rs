//! Central finite-difference verification of backpropagated gradients.
//!
//! Protocol: every listed parameter tensor contributes up to
//! `per_tensor` randomly chosen entries. An entry whose `±epsilon`
//! perturbation changes the activation pattern (any ReLU gate or max-pool
//! winner) sits on a kink of the piecewise-linear network; it is skipped and
//! counted rather than compared.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub per_tensor: usize,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            per_tensor: 24,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// `(tensor, entry, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (gradients of `loss` at `model`) against central
/// differences for the parameter tensors listed in `tensors`.
///
/// `loss` returns the scalar loss and the activation-pattern hash of the
/// forward pass that produced it.
pub fn grad_check<F>(
    model: &Model<f64>,
    analytic: &Model<f64>,
    tensors: &[usize],
    loss: F,
    cfg: GradCheckConfig,
) -> GradCheckReport
where
    F: Fn(&Model<f64>) -> (f64, u64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, base_pattern) = loss(model);
    let grads = analytic.params();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    for &ti in tensors {
        let len = grads[ti].len();
        let picks = index::sample(&mut rng, len, cfg.per_tensor.min(len));
        for ei in picks {
            let original = probe.params()[ti].data()[ei];
            let mut eval_at = |v: f64| {
                probe.params_mut()[ti].data_mut()[ei] = v;
                loss(&probe)
            };
            let (lp, pp) = eval_at(original + cfg.epsilon);
            let (lm, pm) = eval_at(original - cfg.epsilon);
            probe.params_mut()[ti].data_mut()[ei] = original;
            if pp != base_pattern || pm != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * cfg.epsilon);
            let a = grads[ti].data()[ei];
            let err = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    report
}
