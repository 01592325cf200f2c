use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Affine map `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / num_traits::Float::sqrt(inputs as f64);
        let weight = Matrix::from_fn(inputs, outputs, |_, _| rng.random_range(-bound..bound));
        let bias = Matrix::from_fn(1, outputs, |_, _| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::shape("linear", self.inputs(), x.cols()));
        }
        let mut y = x.matmul(&self.weight)?;
        let b = self.bias.row(0);
        for r in 0..y.rows() {
            for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }

    /// Accumulates `dW = x^T dy`, `db = sum_rows dy` into `grad`; returns `dx = dy W^T`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Result<Matrix> {
        if dy.cols() != self.outputs() || dy.rows() != x.rows() {
            return Err(Error::shape("linear backward", self.outputs(), dy.cols()));
        }
        grad.weight.add_assign(&x.t_matmul(dy)?)?;
        let gb = grad.bias.row_mut(0);
        for r in 0..dy.rows() {
            for (g, d) in gb.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        dy.matmul_t(&self.weight)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let layer = Linear {
            weight: Matrix::identity(3),
            bias: Matrix::zeros(1, 3),
        };
        let x = Matrix::from_fn(2, 3, |r, c| (r + 2 * c) as f64);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Linear::new(4, 2, &mut rng);
        let y = layer.forward(&Matrix::zeros(3, 4)).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), layer.bias.row(0));
        }
    }

    #[test]
    fn random_case_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Linear::new(4, 2, &mut rng);
        let x = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = layer.forward(&x).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = layer.bias[(0, j)];
                for k in 0..4 {
                    s += x[(i, k)] * layer.weight[(k, j)];
                }
                assert!((y[(i, j)] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let layer = Linear::zeros(4, 2);
        assert!(layer.forward(&Matrix::zeros(1, 3)).is_err());
    }
}
