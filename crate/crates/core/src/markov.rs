//! Finite row-stochastic matrices: compressed rows, left products and the
//! stationary vector.

use rayon::prelude::*;

use crate::error::{LabError, Result};

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    /// Assembles from per-row `(col, value)` lists; columns are sorted and
    /// duplicates merged.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                match cols.last() {
                    Some(&last) if last == c && cols.len() > *row_ptr.last().unwrap_or(&0) => {
                        *vals.last_mut().expect("nonempty") += v;
                    }
                    _ => {
                        cols.push(c);
                        vals.push(v);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|e| e.1).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// `out = v·M`.
    pub fn left_mul_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[k]] += vi * self.vals[k];
            }
        }
    }

    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.left_mul_into(v, &mut out);
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for (i, j, v) in self.triplets() {
            d[i * self.n + j] += v;
        }
        d
    }

    /// `‖v·M − v‖₁`.
    pub fn fixed_point_residual(&self, v: &[f64]) -> f64 {
        self.left_mul(v).iter().zip(v).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Stationary vector of an irreducible stochastic matrix (row-major dense)
/// by Grassmann–Taksar–Heyman elimination, which avoids subtractions and
/// so stays accurate when the spectral gap is tiny.
pub fn stationary_gth(mut a: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    for k in (1..n).rev() {
        let (top, rest) = a.split_at_mut(k * n);
        let row_k = &rest[..n];
        let s: f64 = row_k[..k].iter().sum();
        if !(s > 0.0) {
            return Err(LabError::GridMismatch(format!("chain is reducible at state {k}")));
        }
        top.par_chunks_mut(n).for_each(|row| {
            let f = row[k] / s;
            row[k] = f;
            if f != 0.0 {
                for (x, &y) in row[..k].iter_mut().zip(&row_k[..k]) {
                    *x += f * y;
                }
            }
        });
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * a[i * n + k]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Stationary vector with a residual check; a few power steps are applied
/// when elimination round-off leaves the residual above `polish_tol`.
pub fn stationary(m: &SparseRows, tol: f64, polish_tol: f64) -> Result<(Vec<f64>, f64)> {
    let mut pi = stationary_gth(m.to_dense(), m.dim())?;
    let mut res = m.fixed_point_residual(&pi);
    let mut steps = 0;
    while res > polish_tol && steps < 100 {
        pi = m.left_mul(&pi);
        let t: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= t);
        res = m.fixed_point_residual(&pi);
        steps += 1;
    }
    if res > tol || pi.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(LabError::NonConvergence {
            iterations: steps,
            residual: res,
        });
    }
    Ok((pi, res))
}
