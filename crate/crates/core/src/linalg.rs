//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cholesky factor of `k`, adding diagonal jitter in decades when the plain
/// factorization fails. Returns the factor and the jitter actually used.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, base: f64) -> Result<(DMatrix<f64>, f64)> {
    let scale = (0..k.nrows()).map(|i| k[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for attempt in 0..8 {
        let mut m = k.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.l(), jitter));
        }
        jitter = base.max(1e-12) * scale * 10f64.powi(attempt);
    }
    Err(Error::NotPsd("cholesky failed after jitter escalation".into()))
}

/// Lower-triangular `F` with `F Fᵀ = c` for a positive semi-definite `c`.
/// Pivots below a relative tolerance are treated as exact zeros, so rank
/// deficient inputs (zero variances, duplicated points) factor cleanly.
pub fn psd_factor(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let scale = (0..n).map(|i| c[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(1e-300);
    let mut f = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = c[(j, j)];
        for l in 0..j {
            d -= f[(j, l)] * f[(j, l)];
        }
        if d <= tol {
            continue;
        }
        let djj = d.sqrt();
        f[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = c[(i, j)];
            for l in 0..j {
                s -= f[(i, l)] * f[(j, l)];
            }
            f[(i, j)] = s / djj;
        }
    }
    f
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

/// Solve `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_upper_t(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// Row-major matrix document with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixDoc {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            shape: [m.nrows(), m.ncols()],
            data,
        }
    }
}

impl TryFrom<&MatrixDoc> for DMatrix<f64> {
    type Error = Error;

    fn try_from(doc: &MatrixDoc) -> Result<Self> {
        let [r, c] = doc.shape;
        if r * c != doc.data.len() {
            return Err(Error::Parse(format!(
                "matrix shape {r}x{c} does not match {} entries",
                doc.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r, c, &doc.data))
    }
}
