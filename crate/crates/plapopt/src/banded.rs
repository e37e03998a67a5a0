//! Banded symmetric positive-definite linear algebra.
//!
//! The P1 stiffness matrices of structured interval/rectangle meshes have
//! small bandwidth under row-major node numbering (1 in 1D, grid width + 2
//! in 2D), so a dense-band Cholesky factorization is both simple and fast:
//! O(n b^2) to factor, O(n b) per solve. This is the workhorse behind the
//! variable-metric descent in the eigensolver.

use crate::{Error, Result};

/// Symmetric matrix stored as its lower band: entry `(i, j)` with
/// `i - bw <= j <= i` lives at `data[i * (bw + 1) + bw - (i - j)]`.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    pub n: usize,
    pub bw: usize,
    pub data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Add `v` to entry `(i, j)`; only the lower triangle is stored, so the
    /// caller passes each symmetric pair once with `i >= j`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.data[self.idx(hi, lo)]
        }
    }

    /// In-place Cholesky factorization `A = L L^T`. Fails on a non-positive
    /// pivot, i.e. when the assembled matrix is not positive definite.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut sum = self.data[i * w + bw - (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= self.data[i * w + bw - (i - k)] * self.data[j * w + bw - (j - k)];
                }
                if j == i {
                    if sum <= 0.0 {
                        return Err(Error::Admissibility(format!(
                            "matrix is not positive definite (pivot {sum} at row {i})"
                        )));
                    }
                    self.data[i * w + bw] = sum.sqrt();
                } else {
                    self.data[i * w + bw - (i - j)] = sum / self.data[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n: self.n, bw, data: self.data })
    }
}

/// Cholesky factor of a banded SPD matrix.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let bw = self.bw;
        let w = bw + 1;
        // Forward: L y = b.
        for i in 0..self.n {
            let j0 = i.saturating_sub(bw);
            let mut sum = b[i];
            for j in j0..i {
                sum -= self.data[i * w + bw - (i - j)] * b[j];
            }
            b[i] = sum / self.data[i * w + bw];
        }
        // Backward: L^T x = y.
        for i in (0..self.n).rev() {
            let mut sum = b[i];
            let hi = (i + bw).min(self.n - 1);
            for j in (i + 1)..=hi {
                sum -= self.data[j * w + bw - (j - i)] * b[j];
            }
            b[i] = sum / self.data[i * w + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
