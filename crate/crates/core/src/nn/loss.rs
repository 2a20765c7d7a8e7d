use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Default Huber transition point (smooth-L1 convention).
pub const HUBER_DELTA: f64 = 1.0;

/// Mean two-class cross-entropy over rows of `logits` (`N x 2`), with the
/// gradient with respect to the logits. Log-sum-exp stabilized.
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    if logits.shape().len() != 2 || logits.cols() != 2 || logits.rows() != labels.len() {
        return Err(NnError::Shape(format!(
            "cross_entropy: logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let n = labels.len();
    if n == 0 {
        return Err(NnError::EmptyInput);
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(&[n, 2]);
    for (i, &label) in labels.iter().enumerate() {
        if label > 1 {
            return Err(NnError::Label(label));
        }
        let row = logits.row(i);
        let m = row[0].max(row[1]);
        let e0 = (row[0] - m).exp();
        let e1 = (row[1] - m).exp();
        let z = e0 + e1;
        let lse = m + z.ln();
        loss = loss + (lse - row[label]) * inv_n;
        let g = grad.row_mut(i);
        g[0] = e0 / z * inv_n;
        g[1] = e1 / z * inv_n;
        g[label] = g[label] - inv_n;
    }
    Ok((loss, grad))
}

/// Mean Huber loss over components and its gradient with respect to `pred`.
pub fn huber<T: Scalar>(pred: &[T], target: &[T], delta: T) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len(), "huber: length mismatch");
    if pred.is_empty() {
        return (T::zero(), Vec::new());
    }
    let inv_k = T::one() / T::from_f64(pred.len() as f64);
    let half = T::from_f64(0.5);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - t;
            if r.abs() <= delta {
                loss = loss + half * r * r * inv_k;
                r * inv_k
            } else {
                loss = loss + delta * (r.abs() - half * delta) * inv_k;
                delta * r.signum() * inv_k
            }
        })
        .collect();
    (loss, grad)
}
