use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Additive surrogate for minus infinity in attention masks.
pub const MASK_NEG: f64 = -1e9;

pub fn relu(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    y
}

/// Gradient of relu given its *input* `x`.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Row-wise softmax of `x + additive_mask`.
///
/// Mask entries are `0` or [`MASK_NEG`]. A row whose entries are all masked
/// produces an all-zero row.
pub fn softmax_rows(x: &Matrix, additive_mask: Option<&Matrix>) -> Result<Matrix> {
    if let Some(m) = additive_mask {
        if !m.same_shape(x) {
            return Err(Error::shape(
                "softmax_rows mask",
                alloc::format!("{:?}", x.shape()),
                alloc::format!("{:?}", m.shape()),
            ));
        }
    }
    let mut y = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let mr = additive_mask.map(|m| m.row(r));
        let masked = |c: usize| mr.is_some_and(|m| m[c] <= 0.5 * MASK_NEG);
        if (0..x.cols()).all(masked) {
            continue;
        }
        let logit = |c: usize| xr[c] + mr.map_or(0.0, |m| m[c]);
        let max = (0..x.cols())
            .filter(|&c| !masked(c))
            .map(logit)
            .fold(f64::NEG_INFINITY, f64::max);
        let yr = y.row_mut(r);
        let mut total = 0.0;
        for (c, out) in yr.iter_mut().enumerate() {
            let e = (logit(c) - max).exp();
            *out = e;
            total += e;
        }
        yr.iter_mut().for_each(|v| *v /= total);
    }
    Ok(y)
}

/// Gradient of a row-wise softmax with output `p`.
pub fn softmax_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let (pr, dr) = (p.row(r), dp.row(r));
        let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (o, (a, b)) in dx.row_mut(r).iter_mut().zip(pr.iter().zip(dr)) {
            *o = a * (b - inner);
        }
    }
    dx
}

/// Per-element scale factors drawn by [`dropout`]: `0` or `1/(1-p)`.
#[derive(Debug, Clone)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn identity() -> Self {
        Self(None)
    }
}

/// Inverted dropout; identity when `train` is false or `p == 0`.
pub fn dropout<R: Rng + ?Sized>(
    x: &Matrix,
    p: f64,
    train: bool,
    rng: &mut R,
) -> (Matrix, DropoutMask) {
    debug_assert!((0.0..1.0).contains(&p));
    if !train || p == 0.0 {
        return (x.clone(), DropoutMask(None));
    }
    let keep = 1.0 / (1.0 - p);
    let scales: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, s) in y.as_mut_slice().iter_mut().zip(&scales) {
        *v *= s;
    }
    (y, DropoutMask(Some(scales)))
}

pub fn dropout_backward(mask: &DropoutMask, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    if let Some(scales) = &mask.0 {
        for (v, s) in dx.as_mut_slice().iter_mut().zip(scales) {
            *v *= s;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_row_gives_uniform_weights() {
        let p = softmax_rows(&Matrix::filled(2, 4, 3.0), None).unwrap();
        for v in p.as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_unmasked_slot_gets_all_weight() {
        let x = Matrix::from_fn(1, 3, |_, c| c as f64);
        let mask = Matrix::from_vec(1, 3, alloc::vec![MASK_NEG, 0.0, MASK_NEG]).unwrap();
        let p = softmax_rows(&x, Some(&mask)).unwrap();
        assert_eq!(p[(0, 1)], 1.0);
        assert!(p[(0, 0)] < 1e-30 && p[(0, 2)] < 1e-30);
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let x = Matrix::from_fn(2, 3, |r, c| (r + c) as f64);
        let mut mask = Matrix::zeros(2, 3);
        mask.row_mut(1).iter_mut().for_each(|v| *v = MASK_NEG);
        let p = softmax_rows(&x, Some(&mask)).unwrap();
        assert!(p.row(1).iter().all(|&v| v == 0.0));
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let x = Matrix::from_fn(3, 5, |r, c| ((r * 5 + c) as f64).sin() * 4.0);
        let mut shifted = x.clone();
        shifted.as_mut_slice().iter_mut().for_each(|v| *v += 17.25);
        let a = softmax_rows(&x, None).unwrap();
        let b = softmax_rows(&shifted, None).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(4, 4, |r, c| (r * c) as f64);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).0, x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).0, x);
    }

    #[test]
    fn dropout_keep_rate_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = 0.1;
        let x = Matrix::filled(1, 100_000, 1.0);
        let (y, _) = dropout(&x, p, true, &mut rng);
        let kept = y.as_slice().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((kept - (1.0 - p)).abs() < 0.01 * (1.0 - p), "keep rate {kept}");
        let scaled = y.as_slice().iter().find(|&&v| v != 0.0).unwrap();
        assert!((scaled - 1.0 / 0.9).abs() < 1e-12);
    }
}
