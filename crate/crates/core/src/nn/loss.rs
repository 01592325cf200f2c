use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Mean-reduced loss with its gradient with respect to the prediction.
///
/// `count` is the number of elements (rows for `cce`) in the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub count: usize,
}

fn check(op: &'static str, pred: &[f64], target: &[f64], valid: Option<&[bool]>) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(op, pred.len(), target.len()));
    }
    if let Some(v) = valid {
        if v.len() != pred.len() {
            return Err(Error::shape(op, pred.len(), v.len()));
        }
    }
    Ok(())
}

fn reduce(
    op: &'static str,
    pred: &[f64],
    target: &[f64],
    valid: Option<&[bool]>,
    f: impl Fn(f64, f64) -> (f64, f64),
) -> Result<LossValue> {
    check(op, pred, target, valid)?;
    let count = valid.map_or(pred.len(), |v| v.iter().filter(|&&b| b).count());
    if count == 0 {
        return Err(Error::EmptyLoss(op));
    }
    let n = count as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut total = 0.0;
    for i in 0..pred.len() {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        let (l, g) = f(pred[i], target[i]);
        total += l;
        grad[i] = g / n;
    }
    Ok(LossValue {
        value: total / n,
        grad,
        count,
    })
}

/// Mean squared error over the `valid` elements.
pub fn mse(pred: &[f64], target: &[f64], valid: Option<&[bool]>) -> Result<LossValue> {
    reduce("mse", pred, target, valid, |p, y| {
        let e = p - y;
        (e * e, 2.0 * e)
    })
}

/// Binary cross entropy on logits, `target` in `[0, 1]`.
pub fn bce_with_logits(logits: &[f64], target: &[f64], valid: Option<&[bool]>) -> Result<LossValue> {
    reduce("bce", logits, target, valid, |z, y| {
        let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let sigma = 1.0 / (1.0 + (-z).exp());
        (loss, sigma - y)
    })
}

/// Categorical cross entropy on row logits against row target distributions.
pub fn cce_with_logits(
    logits: &Matrix,
    target: &Matrix,
    valid_rows: Option<&[bool]>,
) -> Result<LossValue> {
    if !logits.same_shape(target) {
        return Err(Error::shape(
            "cce",
            alloc::format!("{:?}", logits.shape()),
            alloc::format!("{:?}", target.shape()),
        ));
    }
    if let Some(v) = valid_rows {
        if v.len() != logits.rows() {
            return Err(Error::shape("cce", logits.rows(), v.len()));
        }
    }
    let count = valid_rows.map_or(logits.rows(), |v| v.iter().filter(|&&b| b).count());
    if count == 0 {
        return Err(Error::EmptyLoss("cce"));
    }
    let n = count as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    let k = logits.cols();
    for r in 0..logits.rows() {
        if valid_rows.is_some_and(|v| !v[r]) {
            continue;
        }
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let y = target.row(r);
        let ysum: f64 = y.iter().sum();
        for c in 0..k {
            total += -y[c] * (z[c] - lse);
            grad[r * k + c] = ((z[c] - lse).exp() * ysum - y[c]) / n;
        }
    }
    Ok(LossValue {
        value: total / n,
        grad,
        count,
    })
}
