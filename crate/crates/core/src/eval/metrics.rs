//! Success and Precision as exact areas under the OPE curves.

use super::EvalError;

/// Center-error range of the precision curve, meters.
pub const PRECISION_MAX_ERR: f64 = 2.0;

/// Area under the success curve, in percent. For a single frame
/// `∫₀¹ 1[o ≥ τ] dτ = o`, so the area is the mean overlap.
pub fn success_auc(overlaps: &[f64]) -> Result<f64, EvalError> {
    if overlaps.is_empty() {
        return Err(EvalError::EmptyInput("overlaps"));
    }
    if let Some(&o) = overlaps.iter().find(|o| !(0.0..=1.0).contains(*o)) {
        return Err(EvalError::OutOfRange(format!("overlap {o} outside [0, 1]")));
    }
    Ok(100.0 * overlaps.iter().sum::<f64>() / overlaps.len() as f64)
}

/// Per-frame contribution to the precision area.
pub fn precision_score(error: f64, max_err: f64) -> f64 {
    (max_err - error.min(max_err)) / max_err
}

/// Area under the precision curve over thresholds `[0, max_err]`,
/// normalized to percent.
pub fn precision_auc(errors: &[f64], max_err: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput("errors"));
    }
    if !(max_err > 0.0 && max_err.is_finite()) {
        return Err(EvalError::OutOfRange(format!("max_err {max_err}")));
    }
    if let Some(&e) = errors.iter().find(|e| !(**e >= 0.0)) {
        return Err(EvalError::OutOfRange(format!("center error {e} is negative or NaN")));
    }
    Ok(100.0 * errors.iter().map(|&e| precision_score(e, max_err)).sum::<f64>() / errors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Riemann sum of the success-rate curve on a fine threshold grid.
    fn success_grid(overlaps: &[f64], bins: usize) -> f64 {
        let mut area = 0.0;
        for k in 0..bins {
            let tau = (k as f64 + 0.5) / bins as f64;
            let rate = overlaps.iter().filter(|&&o| o >= tau).count() as f64 / overlaps.len() as f64;
            area += rate / bins as f64;
        }
        100.0 * area
    }

    #[test]
    fn fixtures() {
        assert_eq!(success_auc(&[1.0; 7]).unwrap(), 100.0);
        assert_eq!(success_auc(&[0.5; 9]).unwrap(), 50.0);
        assert_eq!(success_auc(&[1.0, 0.0]).unwrap(), 50.0);
        assert_eq!(precision_auc(&[0.0; 4], 2.0).unwrap(), 100.0);
        assert_eq!(precision_auc(&[1.0; 4], 2.0).unwrap(), 50.0);
        assert_eq!(precision_auc(&[2.0, 3.5, 100.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(success_auc(&[]), Err(EvalError::EmptyInput(_))));
        assert!(matches!(precision_auc(&[], 2.0), Err(EvalError::EmptyInput(_))));
        assert!(success_auc(&[1.2]).is_err());
        assert!(precision_auc(&[-0.1], 2.0).is_err());
        assert!(precision_auc(&[f64::NAN], 2.0).is_err());
    }

    proptest! {
        #[test]
        fn success_matches_threshold_sweep(o in prop::collection::vec(0.0..=1.0f64, 1..40)) {
            let exact = success_auc(&o).unwrap();
            prop_assert!((exact - success_grid(&o, 20_000)).abs() < 0.01);
        }

        #[test]
        fn precision_bounded(e in prop::collection::vec(0.0..10.0f64, 1..40)) {
            let p = precision_auc(&e, PRECISION_MAX_ERR).unwrap();
            prop_assert!((0.0..=100.0).contains(&p));
        }
    }
}
