//! Gaussian fits of embedding sets and the Fréchet distance between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to covariance diagonals before the matrix square root.
pub const COV_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance; needs more samples than dimensions.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map_or(0, Vec::len);
        if d == 0 || n < d + 1 {
            return Err(Error::invalid(format!("{n} samples cannot fit a {d}-dimensional covariance")));
        }
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::dims("embeddings of differing length"));
        }
        let mut mean = vec![0.0; d];
        for s in samples {
            mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(Self { mean, cov })
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and row-major eigenvectors (column `k` is vector `k`).
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

/// PSD square root via eigen-decomposition; small negative eigenvalues are
/// treated as zero, larger ones are an error.
fn psd_sqrt(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let (vals, vecs) = symmetric_eigen(a, n);
    let tol = 1e-9 * vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out = vec![0.0; n * n];
    for (k, &lambda) in vals.iter().enumerate() {
        if lambda < -tol {
            return Err(Error::invalid(format!("matrix is not positive semidefinite (eigenvalue {lambda:e})")));
        }
        let r = lambda.max(0.0).sqrt();
        for i in 0..n {
            let vi = vecs[i * n + k] * r;
            for j in 0..n {
                out[i * n + j] += vi * vecs[j * n + k];
            }
        }
    }
    Ok(out)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`, with `COV_EPS * I`
/// added to both covariances.
///
/// The trace term uses `tr((S1 S2)^(1/2)) = tr((R S2 R)^(1/2))`, `R = S1^(1/2)`,
/// which keeps every square root symmetric.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<f64> {
    let n = s1.dim();
    if s2.dim() != n || s1.cov.len() != n * n || s2.cov.len() != n * n {
        return Err(Error::dims("Gaussian stats of differing dimension"));
    }
    let reg = |c: &[f64]| {
        let mut c = c.to_vec();
        for i in 0..n {
            c[i * n + i] += COV_EPS;
        }
        c
    };
    let (c1, c2) = (reg(&s1.cov), reg(&s2.cov));
    let r = psd_sqrt(&c1, n)?;
    let mut m = matmul(&matmul(&r, &c2, n), &r, n);
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let (vals, _) = symmetric_eigen(&m, n);
    let tol = 1e-9 * vals.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if let Some(bad) = vals.iter().find(|&&v| v < -tol) {
        return Err(Error::invalid(format!("covariance product is not positive semidefinite ({bad:e})")));
    }
    let tr_sqrt: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let mean_term: f64 = s1.mean.iter().zip(&s2.mean).map(|(a, b)| (a - b).powi(2)).sum();
    let trace: f64 = (0..n).map(|i| c1[i * n + i] + c2[i * n + i]).sum();
    Ok((mean_term + trace - 2.0 * tr_sqrt).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_a_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let (mut vals, _) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let r = psd_sqrt(&a, 3).unwrap();
        let back = matmul(&r, &r, 3);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let s = GaussianStats { mean: vec![0.0, 0.0], cov: vec![1.0, 0.0, 0.0, -1.0] };
        assert!(frechet_distance(&s, &s).is_err());
    }

    #[test]
    fn fit_needs_enough_samples() {
        assert!(GaussianStats::fit(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        let s = GaussianStats::fit(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(s.mean, vec![2.0 / 3.0, 2.0 / 3.0]);
        assert!((s.cov[1] - s.cov[2]).abs() == 0.0);
    }
}
