//! Minimal dense linear algebra: row-major `f64` matrices, the handful of
//! products the networks need, and a power-iteration spectral norm for the
//! small symmetric matrices that show up in the orthogonality regularizer.

use crate::error::{Error, Result};
use crate::rng::{tags, Prng};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix. `data[r * cols + c]` is entry (r, c).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// y = A x. `y` must have length `rows`, `x` length `cols`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// y = Aᵀ x. `x` must have length `rows`, result has length `cols`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            for (c, yc) in y.iter_mut().enumerate() {
                *yc += self.get(r, c) * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// AᵀA (cols × cols).
    pub fn gram_columns(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for r in 0..self.rows {
                    s += self.get(r, i) * self.get(r, j);
                }
                g.set(i, j, s);
            }
        }
        g
    }

    /// AAᵀ (rows × rows).
    pub fn gram_rows(&self) -> Matrix {
        let n = self.rows;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g.set(i, j, dot(self.row(i), self.row(j)));
            }
        }
        g
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// self − s·I (square matrices only).
    pub fn sub_scaled_identity(&self, s: f64) -> Matrix {
        debug_assert_eq!(self.rows, self.cols);
        let mut m = self.clone();
        for i in 0..self.rows {
            m.data[i * self.cols + i] -= s;
        }
        m
    }

    fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                let a = self.get(r, c);
                let b = self.get(c, r);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return false;
                }
            }
        }
        true
    }
}

/// Dot product with a fixed four-lane summation tree. The lane structure is
/// part of the numerical definition (deterministic), and it lets the
/// reduction vectorize, which plain sequential accumulation cannot.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder().iter()) {
        s += xa * xb;
    }
    s
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest-magnitude eigenvalue (in absolute value) of a symmetric matrix via
/// power iteration with a deterministic seeded start vector.
///
/// The iterate estimate is ‖A v‖ with ‖v‖ = 1, which for symmetric A converges
/// to max|λ| even when the extreme eigenvalues come in ± pairs.
pub fn spectral_norm_sym(a: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    if a.rows != a.cols {
        return Err(Error::Dimension(format!(
            "spectral_norm_sym: matrix is {}x{}, expected square",
            a.rows, a.cols
        )));
    }
    if !a.is_symmetric() {
        return Err(Error::InvalidArgument("spectral_norm_sym: matrix is not symmetric".into()));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidArgument("spectral_norm_sym: tol must be > 0".into()));
    }
    let n = a.rows;
    if n == 0 {
        return Ok(0.0);
    }

    let mut rng = Prng::derived(0x5eed, tags::POWER_ITER);
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let nv = norm2(&v);
    for x in v.iter_mut() {
        *x /= nv;
    }

    let mut av = vec![0.0; n];
    let mut sigma = 0.0;
    for _ in 0..max_iters {
        a.matvec_into(&v, &mut av);
        let s = norm2(&av);
        if s == 0.0 {
            return Ok(0.0);
        }
        for (vi, &avi) in v.iter_mut().zip(av.iter()) {
            *vi = avi / s;
        }
        if (s - sigma).abs() <= tol * s.max(1.0) {
            return Ok(s);
        }
        sigma = s;
    }
    Ok(sigma)
}

/// Defaults used throughout the crate for the small matrices at hand.
pub const POWER_ITER_TOL: f64 = 1e-10;
pub const POWER_ITER_MAX: usize = 5000;

/// Spectral norm ‖W‖₂ of a general matrix: √λmax(WᵀW), with the Gram taken on
/// the smaller dimension.
pub fn spectral_norm(w: &Matrix) -> Result<f64> {
    let g = if w.cols <= w.rows { w.gram_columns() } else { w.gram_rows() };
    Ok(spectral_norm_sym(&g, POWER_ITER_TOL, POWER_ITER_MAX)?.max(0.0).sqrt())
}

/// Semi-orthogonal matrix of the given shape, scaled by `gain`: the thin QR
/// factor of a Gaussian matrix, so the Gram on the smaller dimension equals
/// gain²·I.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Prng) -> Matrix {
    let (n, m) = (rows.max(cols), rows.min(cols));
    // Columns of a tall n×m Gaussian matrix, orthonormalized by modified
    // Gram-Schmidt with re-orthogonalization.
    let mut cols_v: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
    for j in 0..m {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = dot(&cols_v[j], &cols_v[k]);
                let prev = cols_v[k].clone();
                for (x, p) in cols_v[j].iter_mut().zip(prev.iter()) {
                    *x -= proj * p;
                }
            }
        }
        let nn = norm2(&cols_v[j]);
        if nn < 1e-12 {
            // Degenerate draw; replace with a unit basis vector.
            for x in cols_v[j].iter_mut() {
                *x = 0.0;
            }
            cols_v[j][j % n] = 1.0;
        } else {
            for x in cols_v[j].iter_mut() {
                *x /= nn;
            }
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    if rows >= cols {
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, gain * cols_v[c][r]);
            }
        }
    } else {
        // Wide target: transpose the tall factor so rows are orthonormal.
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, gain * cols_v[r][c]);
            }
        }
    }
    out
}
