//! Orthonormal block DCT used by the quantizing codec.

use std::f64::consts::PI;

/// `n x n` orthonormal DCT-II basis, row `u` holding frequency `u`.
#[derive(Debug, Clone)]
pub struct DctBasis {
    n: usize,
    m: Vec<f64>,
}

impl DctBasis {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "empty DCT");
        let mut m = vec![0.0; n * n];
        for u in 0..n {
            let a = if u == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for x in 0..n {
                m[u * n + x] = a * ((2 * x + 1) as f64 * u as f64 * PI / (2 * n) as f64).cos();
            }
        }
        Self { n, m }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// `C B C^T` for a row-major block.
    pub fn forward(&self, block: &[f64]) -> Vec<f64> {
        self.sandwich(block, false)
    }

    /// `C^T B C`, the inverse of [`forward`](Self::forward).
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        self.sandwich(coeffs, true)
    }

    fn sandwich(&self, b: &[f64], transpose: bool) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n * n, "block size");
        let c = |i: usize, j: usize| if transpose { self.m[j * n + i] } else { self.m[i * n + j] };
        let mut tmp = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                tmp[i * n + j] = (0..n).map(|k| c(i, k) * b[k * n + j]).sum();
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| tmp[i * n + k] * c(j, k)).sum();
            }
        }
        out
    }

    /// Quantize-dequantize one block; the result is not clipped.
    pub fn requantize(&self, block: &[f64], qstep: f64) -> Vec<f64> {
        let coeffs: Vec<f64> = self
            .forward(block)
            .into_iter()
            .map(|c| (c / qstep).round() * qstep)
            .collect();
        self.inverse(&coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn basis_is_orthonormal() {
        let d = DctBasis::new(8);
        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = (0..8).map(|k| d.m[a * 8 + k] * d.m[b * 8 + k]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = DctBasis::new(8);
        let b: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..255.0)).collect();
        let r = d.inverse(&d.forward(&b));
        for (x, y) in b.iter().zip(&r) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dc_coefficient_is_scaled_mean() {
        let d = DctBasis::new(8);
        let c = d.forward(&[10.0; 64]);
        assert!((c[0] - 80.0).abs() < 1e-10);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-10));
    }
}
