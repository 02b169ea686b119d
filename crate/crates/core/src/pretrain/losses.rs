use ndarray::{Array2, ArrayView2};

use crate::scalar::{sigmoid, softplus, Scalar};

/// A loss value together with how many items it averages over.
/// `skipped` is set when there was nothing to average; the value is then 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub count: usize,
    pub skipped: bool,
}

impl<T: Scalar> LossValue<T> {
    fn skipped() -> Self {
        Self {
            value: T::zero(),
            count: 0,
            skipped: true,
        }
    }
}

/// Binary cross-entropy from probabilities: the mean over valid rows of the
/// mean over concepts of `-(y ln p + (1 - y) ln(1 - p))`.
pub fn ecp_loss<T: Scalar>(probs: ArrayView2<'_, T>, targets: ArrayView2<'_, T>, valid: &[bool]) -> LossValue<T> {
    assert_eq!(probs.dim(), targets.dim(), "probabilities and targets differ in shape");
    assert_eq!(probs.nrows(), valid.len(), "one validity flag per mention");
    let mut total = T::zero();
    let mut count = 0;
    for ((p, y), _) in probs.rows().into_iter().zip(targets.rows()).zip(valid).filter(|(_, &v)| v) {
        let row: T = p
            .iter()
            .zip(y)
            .map(|(&p, &y)| -(y * p.ln() + (T::one() - y) * (T::one() - p).ln()))
            .sum();
        total += row / T::of_usize(p.len());
        count += 1;
    }
    if count == 0 {
        return LossValue::skipped();
    }
    LossValue {
        value: total / T::of_usize(count),
        count,
        skipped: false,
    }
}

/// Same loss from pre-sigmoid scores, computed stably, with its gradient
/// with respect to the scores (zero on invalid rows).
pub fn ecp_loss_with_logits<T: Scalar>(
    logits: ArrayView2<'_, T>,
    targets: ArrayView2<'_, T>,
    valid: &[bool],
) -> (LossValue<T>, Array2<T>) {
    assert_eq!(logits.dim(), targets.dim(), "logits and targets differ in shape");
    assert_eq!(logits.nrows(), valid.len(), "one validity flag per mention");
    let mut grad = Array2::zeros(logits.raw_dim());
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return (LossValue::skipped(), grad);
    }
    let c = T::of_usize(logits.ncols());
    let scale = T::one() / (c * T::of_usize(count));
    let mut total = T::zero();
    for (((z, y), mut g), _) in logits
        .rows()
        .into_iter()
        .zip(targets.rows())
        .zip(grad.rows_mut())
        .zip(valid)
        .filter(|(_, &v)| v)
    {
        let mut row = T::zero();
        for ((&z, &y), g) in z.iter().zip(y).zip(g.iter_mut()) {
            // -(y ln s(z) + (1-y) ln(1-s(z))) = softplus(z) - y z
            row += softplus(z) - y * z;
            *g = (sigmoid(z) - y) * scale;
        }
        total += row / c;
    }
    let value = total / T::of_usize(count);
    (
        LossValue {
            value,
            count,
            skipped: false,
        },
        grad,
    )
}

/// Mean cross-entropy over rows that carry a label.
pub fn mlm_loss<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[Option<u32>]) -> LossValue<T> {
    mlm_loss_with_grad(logits, labels).0
}

/// Cross-entropy and its gradient with respect to the logits.
pub fn mlm_loss_with_grad<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[Option<u32>]) -> (LossValue<T>, Array2<T>) {
    assert_eq!(logits.nrows(), labels.len(), "one label slot per logits row");
    let mut grad = Array2::zeros(logits.raw_dim());
    let count = labels.iter().filter(|l| l.is_some()).count();
    if count == 0 {
        return (LossValue::skipped(), grad);
    }
    let inv = T::one() / T::of_usize(count);
    let mut total = T::zero();
    for ((z, label), mut g) in logits.rows().into_iter().zip(labels).zip(grad.rows_mut()) {
        let Some(label) = *label else { continue };
        let label = label as usize;
        assert!(label < z.len(), "label {label} outside vocabulary of {}", z.len());
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        total += log_norm - z[label];
        for (gk, &zk) in g.iter_mut().zip(z) {
            *gk = (zk - log_norm).exp() * inv;
        }
        g[label] -= inv;
    }
    (
        LossValue {
            value: total * inv,
            count,
            skipped: false,
        },
        grad,
    )
}
