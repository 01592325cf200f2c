#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const LN_EPS: f64 = 1e-5;

/// Per-row normalization over the feature dimension followed by an affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub shift: Matrix,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Matrix,
    inv_std: alloc::vec::Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Matrix::filled(1, dim, 1.0),
            shift: Matrix::zeros(1, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Matrix::zeros(1, dim),
            shift: Matrix::zeros(1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let d = self.dim();
        if x.cols() != d || d < 2 {
            return Err(Error::shape("layer_norm", d, x.cols()));
        }
        let mut xhat = Matrix::zeros(x.rows(), d);
        let mut y = Matrix::zeros(x.rows(), d);
        let mut inv_std = alloc::vec::Vec::with_capacity(x.rows());
        let (g, b) = (self.gain.row(0), self.shift.row(0));
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(r);
            for (o, v) in xr.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let yr = y.row_mut(r);
            for c in 0..d {
                yr[c] = xhat[(r, c)] * g[c] + b[c];
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grad: &mut LayerNorm) -> Matrix {
        let d = self.dim();
        let n = d as f64;
        let g = self.gain.row(0);
        let mut dx = Matrix::zeros(dy.rows(), d);
        for r in 0..dy.rows() {
            let dyr = dy.row(r);
            let xr = cache.xhat.row(r);
            {
                let gg = grad.gain.row_mut(0);
                for c in 0..d {
                    gg[c] += dyr[c] * xr[c];
                }
            }
            {
                let gs = grad.shift.row_mut(0);
                for c in 0..d {
                    gs[c] += dyr[c];
                }
            }
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for c in 0..d {
                let dxh = dyr[c] * g[c];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xr[c];
            }
            mean_dxhat /= n;
            mean_dxhat_xhat /= n;
            let is = cache.inv_std[r];
            let out = dx.row_mut(r);
            for c in 0..d {
                out[c] = is * (dyr[c] * g[c] - mean_dxhat - xr[c] * mean_dxhat_xhat);
            }
        }
        dx
    }

    pub fn param_count(&self) -> usize {
        self.gain.len() + self.shift.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_yields_shift() {
        let mut ln = LayerNorm::new(4);
        ln.shift = Matrix::from_fn(1, 4, |_, c| c as f64 - 1.5);
        let (y, _) = ln.forward(&Matrix::filled(3, 4, 2.5)).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((y[(r, c)] - ln.shift[(0, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_affine_gives_zero_mean_unit_variance() {
        let ln = LayerNorm::new(5);
        let x = Matrix::from_fn(3, 5, |r, c| ((r * 7 + c * 3) % 11) as f64 * 1.7 - 4.0);
        let (y, _) = ln.forward(&x).unwrap();
        for r in 0..3 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
