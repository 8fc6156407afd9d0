//! One-sided (Hestenes) Jacobi SVD for small dense matrices.

use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Sweep cap before the decomposition is declared non-convergent.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Relative off-diagonal threshold: a column pair is considered orthogonal
/// once `|<u_p, u_q>| <= OFF_DIAG_TOL * |u_p| * |u_q|`.
const OFF_DIAG_TOL: f64 = 1e-12;

/// Thin SVD `input = u * diag(sigma) * v^T` with `r = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub sigma: Vec<f64>,
    /// `cols x r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    /// `u * diag(sigma) * v^T`.
    pub fn reconstruct(&self) -> Matrix {
        self.truncated(self.sigma.len())
    }

    /// Rank-`k` reconstruction from the leading `k` triplets.
    pub fn truncated(&self, k: usize) -> Matrix {
        let k = k.min(self.sigma.len());
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for t in 0..k {
            let s = self.sigma[t];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let us = self.u[(i, t)] * s;
                if us == 0.0 {
                    continue;
                }
                let row = out.row_mut(i);
                for (j, o) in row.iter_mut().enumerate() {
                    *o += us * self.v[(j, t)];
                }
            }
        }
        out
    }
}

/// Singular value decomposition by one-sided Jacobi rotations.
///
/// Fails with [`Error::Numerical`] on non-finite input or when the sweep cap
/// is hit before every column pair is orthogonal.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::Numerical("svd input contains NaN or Inf".into()));
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(SvdResult { u: t.v, sigma: t.sigma, v: t.u });
    }
    svd_tall(a)
}

// rows >= cols
fn svd_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // Work on columns stored contiguously.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= OFF_DIAG_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!("Jacobi SVD did not converge within {MAX_JACOBI_SWEEPS} sweeps")));
    }

    let sigma: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let negligible = smax * f64::EPSILON * m.max(n) as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sorted_sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = sigma[j];
        if s > negligible && s > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / s).collect());
            sorted_sigma.push(s);
        } else {
            u_cols.push(vec![0.0; m]);
            sorted_sigma.push(0.0);
            missing.push(slot);
        }
        v_cols.push(v[j].clone());
    }
    complete_basis(&mut u_cols, &missing);

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let vm = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Ok(SvdResult { u, sigma: sorted_sigma, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the `missing` slots with unit vectors orthogonal to every other column
/// (Gram-Schmidt over the standard basis, re-orthogonalized twice).
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut filled: Vec<bool> = vec![true; cols.len()];
    for &k in missing {
        filled[k] = false;
    }
    for &k in missing {
        let mut best: Option<Vec<f64>> = None;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for (idx, c) in cols.iter().enumerate() {
                    if !filled[idx] {
                        continue;
                    }
                    let proj = dot(&cand, c);
                    cand.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let len = dot(&cand, &cand).sqrt();
            if len > 0.5 {
                cand.iter_mut().for_each(|x| *x /= len);
                best = Some(cand);
                break;
            } else if len > 1e-6 && best.is_none() {
                cand.iter_mut().for_each(|x| *x /= len);
                best = Some(cand);
            }
        }
        cols[k] = best.expect("column space exhausted while completing basis");
        filled[k] = true;
    }
}
