use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: ArrayView2<'_, T>, targets: ArrayView2<'_, T>) -> Result<(T, Array2<T>)> {
    if logits.dim() != targets.dim() {
        return Err(shape_err(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logits"));
    }
    let batch = T::of(logits.nrows().max(1) as f64);
    let mut grad = Array2::zeros(logits.dim());
    let mut total = T::zero();
    for ((z, t), mut g) in logits
        .axis_iter(Axis(0))
        .zip(targets.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        // -sum_c t_c * log softmax_c
        total += Zip::from(&z).and(&t).fold(T::zero(), |acc, &zc, &tc| acc + tc * (log_sum - zc));
        Zip::from(&mut g)
            .and(&z)
            .and(&t)
            .for_each(|g, &zc, &tc| *g = ((zc - log_sum).exp() - tc) / batch);
    }
    Ok((total / batch, grad))
}
