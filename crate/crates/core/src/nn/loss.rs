//! Losses. Values are accumulated and returned in f64 regardless of the
//! tensor element type; gradients come back in the tensor's own type.

use super::{NnError, Scalar, Tensor4};

/// Mean over all elements of the squared difference.
pub fn mse_loss<F: Scalar>(pred: &Tensor4<F>, target: &Tensor4<F>) -> Result<f64, NnError> {
    if pred.dims() != target.dims() {
        return Err(NnError::ShapeMismatch(format!(
            "mse dims {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let mut acc = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data().iter()) {
        let d = p.as_f64() - t.as_f64();
        acc += d * d;
    }
    Ok(acc / pred.numel() as f64)
}

/// MSE and its gradient 2 (pred - target) / numel.
pub fn mse_loss_grad<F: Scalar>(
    pred: &Tensor4<F>,
    target: &Tensor4<F>,
) -> Result<(f64, Tensor4<F>), NnError> {
    let loss = mse_loss(pred, target)?;
    let scale = F::from_f64(2.0 / pred.numel() as f64);
    let (b, c, h, w) = pred.dims();
    let data = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(&p, &t)| (p - t) * scale)
        .collect();
    Ok((loss, Tensor4::from_vec(b, c, h, w, data).expect("same dims")))
}

/// Softmax cross-entropy over (b, classes, 1, 1) logits, averaged over the
/// batch. Numerically stabilized by max-subtraction.
pub fn cross_entropy_loss<F: Scalar>(
    logits: &Tensor4<F>,
    labels: &[usize],
) -> Result<f64, NnError> {
    Ok(cross_entropy_loss_grad(logits, labels)?.0)
}

/// Cross-entropy and its gradient (softmax - onehot) / batch.
pub fn cross_entropy_loss_grad<F: Scalar>(
    logits: &Tensor4<F>,
    labels: &[usize],
) -> Result<(f64, Tensor4<F>), NnError> {
    let (b, classes, h, w) = logits.dims();
    if h != 1 || w != 1 || b != labels.len() {
        return Err(NnError::ShapeMismatch(format!(
            "cross entropy expects (b, classes, 1, 1) logits with b == labels, got {:?} and {} labels",
            logits.dims(),
            labels.len()
        )));
    }
    let mut grad = Tensor4::zeros(b, classes, 1, 1);
    let mut loss = 0.0f64;
    let inv_b = 1.0 / b as f64;
    for n in 0..b {
        let label = labels[n];
        if label >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let row = &logits.data()[n * classes..(n + 1) * classes];
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0f64;
        for v in row {
            denom += (v.as_f64() - max).exp();
        }
        let lse = max + denom.ln();
        loss += (lse - row[label].as_f64()) * inv_b;
        for c in 0..classes {
            let p = (row[c].as_f64() - max).exp() / denom;
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad.set(n, c, 0, 0, F::from_f64((p - onehot) * inv_b));
        }
    }
    Ok((loss, grad))
}
