//! Symmetric positive-definite banded systems solved by banded Cholesky.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;

/// Lower band of a symmetric `n x n` matrix: `entry(i, k)` holds `A[i][i-k]`
/// for `k <= bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBanded {
    n: usize,
    bandwidth: usize,
    band: Vec<f64>,
}

/// The factorization hit a non-positive pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    pub row: usize,
}

impl SymBanded {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            band: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// `A[i][j]`, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = i - j;
        if k > self.bandwidth {
            0.0
        } else {
            self.band[i * (self.bandwidth + 1) + k]
        }
    }

    /// Adds `v` to `A[i][j]` (and, implicitly, `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = i - j;
        assert!(k <= self.bandwidth, "entry ({i}, {j}) outside band");
        self.band[i * (self.bandwidth + 1) + k] += v;
    }

    /// Adds `weight * D^T D` where `D` is the difference operator with the
    /// given stencil (one row per admissible offset).
    pub fn add_gram_of_stencil(&mut self, stencil: &[f64], weight: f64) {
        if weight == 0.0 || self.n < stencil.len() {
            return;
        }
        for r in 0..=(self.n - stencil.len()) {
            for (a, ca) in stencil.iter().enumerate() {
                for (b, cb) in stencil.iter().enumerate().take(a + 1) {
                    self.add(r + a, r + b, weight * ca * cb);
                }
            }
        }
    }

    /// Banded Cholesky `A = L L^T`, O(n p^2). Pivots at or below
    /// `rel_tol * max|diag|` are reported as singular.
    pub fn cholesky(&self, rel_tol: f64) -> Result<BandedCholesky, Singular> {
        let p = self.bandwidth;
        let w = p + 1;
        let scale = (0..self.n)
            .map(|i| self.get(i, i).abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let tol = rel_tol * scale;
        let mut l = vec![0.0; self.n * w];
        for i in 0..self.n {
            let lo = i.saturating_sub(p);
            for k in lo..=i {
                let mut s = self.band[i * w + (i - k)];
                for j in lo.max(k.saturating_sub(p))..k {
                    s -= l[i * w + (i - j)] * l[k * w + (k - j)];
                }
                if k == i {
                    if s <= tol || !s.is_finite() {
                        return Err(Singular { row: i });
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - k)] = s / l[k * w];
                }
            }
        }
        Ok(BandedCholesky { n: self.n, bandwidth: p, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        let w = self.bandwidth + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bandwidth);
            let mut s = rhs[i];
            for j in lo..i {
                s -= self.l[i * w + (i - j)] * rhs[j];
            }
            rhs[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bandwidth).min(self.n - 1);
            let mut s = rhs[i];
            for j in (i + 1)..=hi {
                s -= self.l[j * w + (j - i)] * rhs[j];
            }
            rhs[i] = s / self.l[i * w];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] -> x = [1 1 1]
        let mut a = SymBanded::zeros(3, 1);
        for i in 0..3 {
            a.add(i, i, 2.0);
        }
        a.add(1, 0, -1.0);
        a.add(2, 1, -1.0);
        let f = a.cholesky(1e-12).unwrap();
        let mut x = vec![1.0, 0.0, 1.0];
        f.solve_in_place(&mut x);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_pivot_is_singular() {
        let mut a = SymBanded::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(2, 2, 1.0);
        assert_eq!(a.cholesky(1e-12).unwrap_err(), Singular { row: 1 });
    }
}
