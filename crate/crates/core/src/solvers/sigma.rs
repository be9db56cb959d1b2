use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Pair distribution behind a [`SigmaOperator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaKind {
    /// `(y, y')` i.i.d. uniform over `n` arms.
    UniformPairs(usize),
    /// `(y, y')` i.i.d. from `mu`.
    ProductPairs(Vec<f64>),
}

/// `Σ(ρ) = E_{(y,y')∼ρ}[(e_y − e_{y'})(e_y − e_{y'})ᵀ]`, realized as a dense
/// symmetric matrix. Rows sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaOperator {
    kind: SigmaKind,
    n: usize,
    matrix: Vec<f64>,
}

impl SigmaOperator {
    /// `(2/n²)(n I − 𝟙𝟙ᵀ)`.
    pub fn uniform_pairs(n: usize) -> Self {
        let nf = n as f64;
        let c = 2.0 / (nf * nf);
        let mut matrix = vec![-c; n * n];
        for i in 0..n {
            matrix[i * n + i] = c * (nf - 1.0);
        }
        Self {
            kind: SigmaKind::UniformPairs(n),
            n,
            matrix,
        }
    }

    /// `2(diag μ − μμᵀ)`.
    pub fn product_pairs(mu: &[f64]) -> Self {
        let n = mu.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                matrix[i * n + j] = -2.0 * mu[i] * mu[j];
            }
            matrix[i * n + i] += 2.0 * mu[i];
        }
        Self {
            kind: SigmaKind::ProductPairs(mu.to_vec()),
            n,
            matrix,
        }
    }

    pub fn kind(&self) -> &SigmaKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, v.len())?;
        Ok(self
            .matrix
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// `Σ(π^s) v` without forming the matrix.
pub(crate) fn apply_uniform(v: &[f64]) -> Vec<f64> {
    let nf = v.len() as f64;
    let s: f64 = v.iter().sum();
    let c = 2.0 / (nf * nf);
    v.iter().map(|x| c * (nf * x - s)).collect()
}

/// `Σ(μ × μ) v` without forming the matrix.
pub(crate) fn apply_product(mu: &[f64], v: &[f64]) -> Vec<f64> {
    let m: f64 = mu.iter().zip(v).map(|(a, b)| a * b).sum();
    mu.iter().zip(v).map(|(p, x)| 2.0 * p * (x - m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Σ by enumerating all ordered pairs with their weights.
    fn enumerate(n: usize, weight: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for y in 0..n {
            for z in 0..n {
                let w = weight(y, z);
                let mut d = vec![0.0; n];
                d[y] += 1.0;
                d[z] -= 1.0;
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] += w * d[i] * d[j];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn uniform_two_arm_values() {
        let s = SigmaOperator::uniform_pairs(2);
        assert_eq!(s.matrix(), &[0.5, -0.5, -0.5, 0.5]);
    }

    #[test]
    fn uniform_four_arm_matches_enumeration() {
        let s = SigmaOperator::uniform_pairs(4);
        let want = enumerate(4, |_, _| 1.0 / 16.0);
        for (a, b) in s.matrix().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        // (2/16)(4I − 𝟙𝟙ᵀ): diagonal 3/8, off-diagonal −1/8
        assert!((s.get(0, 0) - 0.375).abs() < 1e-15 && (s.get(0, 1) + 0.125).abs() < 1e-15);
    }

    #[test]
    fn product_matches_enumeration_and_fast_paths() {
        let mu = [0.1, 0.2, 0.3, 0.4];
        let s = SigmaOperator::product_pairs(&mu);
        let want = enumerate(4, |y, z| mu[y] * mu[z]);
        for (a, b) in s.matrix().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        let v = [1.0, -2.0, 0.5, 3.0];
        let dense = s.apply(&v).unwrap();
        for (a, b) in dense.iter().zip(apply_product(&mu, &v)) {
            assert!((a - b).abs() < 1e-14);
        }
        let dense = SigmaOperator::uniform_pairs(4).apply(&v).unwrap();
        for (a, b) in dense.iter().zip(apply_uniform(&v)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rows_sum_to_zero_and_symmetric() {
        for s in [
            SigmaOperator::uniform_pairs(5),
            SigmaOperator::product_pairs(&[0.5, 0.25, 0.125, 0.125]),
        ] {
            let n = s.n();
            for i in 0..n {
                let row: f64 = (0..n).map(|j| s.get(i, j)).sum();
                assert!(row.abs() < 1e-15);
                for j in 0..n {
                    assert_eq!(s.get(i, j), s.get(j, i));
                }
            }
        }
    }
}
