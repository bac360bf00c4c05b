//! Small dense matrix support: storage, products, a one-sided Jacobi SVD and
//! a certified upper estimate of the spectral norm.
//!
//! Everything here is deliberately plain. The matrices that show up in the
//! pursuit are unfoldings with one short side (tens of rows), so an O(n^3)
//! Jacobi sweep or an explicit Gram matrix is cheap, and having the code in
//! the tree keeps the power-iteration route and the SVD route visibly
//! independent of each other.

use crate::par;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn min_dim(&self) -> usize {
        self.rows.min(self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        par::sum_sq(&self.data).sqrt()
    }

    /// y = A x. Each output row is one task, so results do not depend on the
    /// thread count.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let cols = self.cols;
        let data = &self.data;
        par::fill_indexed(self.rows, |r| {
            data[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// y = A^T x.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "tr_matvec dimension mismatch");
        let cols = self.cols;
        let rows = self.rows;
        let data = &self.data;
        par::fill_indexed(cols, |c| {
            (0..rows).map(|r| data[r * cols + c] * x[r]).sum()
        })
    }

    /// C = A B, plain triple loop. Used on small matrices only.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// Gram matrix on the shorter side: A A^T if rows <= cols, else A^T A.
    /// Returns the symmetric positive semidefinite factor and its side length.
    pub fn short_gram(&self) -> Mat {
        if self.rows <= self.cols {
            let mut g = Mat::zeros(self.rows, self.rows);
            for i in 0..self.rows {
                for j in i..self.rows {
                    let v = par::dot(self.row(i), self.row(j));
                    g.set(i, j, v);
                    g.set(j, i, v);
                }
            }
            g
        } else {
            let t = self.transpose();
            t.short_gram()
        }
    }
}

/// Upper estimate of the spectral norm, certified: the returned value is
/// always >= sigma_1(m) in exact arithmetic.
///
/// Starts from the Frobenius bound and tightens it with iterated squaring of
/// the short-side Gram matrix G: for every j >= 0,
/// sigma_1(m) <= ||G^(2^j)||_F^(1 / 2^(j+1)),
/// and the sequence is non-increasing in j. The squarings run on a normalized
/// copy with the scale tracked in log space, so large norms cannot overflow.
/// When the Gram matrix is too expensive the Frobenius bound is returned,
/// which is still valid, just looser.
pub fn spectral_norm_upper(m: &Mat) -> f64 {
    let frob = m.frob_norm();
    if frob == 0.0 || !frob.is_finite() {
        return frob;
    }
    let short = m.min_dim();
    let long = m.rows().max(m.cols());
    // Gram construction costs short^2 * long; squaring costs short^3 each.
    if short > 128 || short * short * long > 200_000_000 {
        return frob;
    }
    let g = m.short_gram();
    let mut best = frob;
    let s0 = g.frob_norm();
    if s0 == 0.0 || !s0.is_finite() {
        return best;
    }
    best = best.min(s0.sqrt());
    // Invariant: G^(2^j) = h * exp(log_scale) with ||h||_F = 1.
    let mut h = g;
    let inv = 1.0 / s0;
    for v in h.data_mut() {
        *v *= inv;
    }
    let mut log_scale = s0.ln();
    for j in 1..=12 {
        let mut t = h.matmul(&h);
        let tn = t.frob_norm();
        if tn <= 0.0 || !tn.is_finite() {
            break;
        }
        log_scale = 2.0 * log_scale + tn.ln();
        let inv = 1.0 / tn;
        for v in t.data_mut() {
            *v *= inv;
        }
        h = t;
        let exponent = log_scale / (1u64 << (j + 1)) as f64;
        let bound = exponent.exp();
        if bound >= best {
            break;
        }
        let gain = best - bound;
        best = bound;
        if gain < 1e-14 * best {
            break;
        }
    }
    best
}

/// Full SVD of a dense matrix, A = U diag(sigma) V^T with singular values in
/// descending order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub v: Mat,
}

/// One-sided Jacobi SVD. Orthogonalizes the columns of a working copy by
/// plane rotations; singular values are the final column norms. Intended for
/// matrices whose short side is small (the caller guards the size).
pub fn jacobi_svd(m: &Mat) -> Svd {
    if m.cols > m.rows {
        // Work on the transpose so the rotated side is the short one.
        let t = jacobi_svd(&m.transpose());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    let rows = m.rows;
    let cols = m.cols;
    // Column-major working copy: b[c] is column c of the evolving matrix.
    let mut b: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| m.get(r, c)).collect())
        .collect();
    let mut v = vec![vec![0.0; cols]; cols];
    for (c, col) in v.iter_mut().enumerate() {
        col[c] = 1.0;
    }
    let eps = 1e-15;
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for r in 0..rows {
                    app += b[p][r] * b[p][r];
                    aqq += b[q][r] * b[q][r];
                    apq += b[p][r] * b[q][r];
                }
                if apq.abs() <= eps * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..rows {
                    let bp = b[p][r];
                    let bq = b[q][r];
                    b[p][r] = cs * bp - sn * bq;
                    b[q][r] = sn * bp + cs * bq;
                }
                for k in 0..cols {
                    let vp = v[p][k];
                    let vq = v[q][k];
                    v[p][k] = cs * vp - sn * vq;
                    v[q][k] = sn * vp + cs * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = b.iter().map(|col| par::sum_sq_seq(col).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));
    let mut u = Mat::zeros(rows, cols);
    let mut vt = Mat::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    for (k, &c) in order.iter().enumerate() {
        let s = norms[c];
        sigma.push(s);
        let mut ucol: Vec<f64> = b[c].clone();
        let mut vcol: Vec<f64> = v[c].clone();
        if s > 0.0 {
            for x in ucol.iter_mut() {
                *x /= s;
            }
        }
        // Deterministic sign: first entry of u with magnitude above a relative
        // threshold is made positive.
        let lead = ucol.iter().find(|x| x.abs() > 1e-12);
        if let Some(&l) = lead {
            if l < 0.0 {
                for x in ucol.iter_mut() {
                    *x = -*x;
                }
                for x in vcol.iter_mut() {
                    *x = -*x;
                }
            }
        }
        for r in 0..rows {
            u.set(r, k, ucol[r]);
        }
        for r in 0..cols {
            vt.set(r, k, vcol[r]);
        }
    }
    Svd { u, sigma, v: vt }
}
