//! Dense kernels shared by the solvers and the calibration routines.
//!
//! Design matrices are stored row-major with one sample per row, so the
//! transposed product is accumulated row by row instead of walking columns.

use faer::linalg::solvers::SolveLstsq;
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// `X t` for a row-major `X`.
pub fn matvec(x: ArrayView2<f64>, t: ArrayView1<f64>) -> Array1<f64> {
    x.rows().into_iter().map(|row| row.dot(&t)).collect()
}

/// `Xᵀ r` accumulated over the rows of `X`.
pub fn rmatvec(x: ArrayView2<f64>, r: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(x.ncols());
    for (row, &ri) in x.rows().into_iter().zip(r.iter()) {
        if ri != 0.0 {
            out.scaled_add(ri, &row);
        }
    }
    out
}

pub fn norm2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn norm1(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(v: ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `ℓ_p` norm for `p ∈ [1, ∞]`, computed on entries divided by the largest one.
pub fn norm_p(v: ArrayView1<f64>, p: f64) -> f64 {
    if p == 1.0 {
        return norm1(v);
    }
    if p.is_infinite() {
        return norm_inf(v);
    }
    let scale = norm_inf(v);
    if scale == 0.0 {
        return 0.0;
    }
    let sum: f64 = v.iter().map(|x| (x.abs() / scale).powf(p)).sum();
    scale * sum.powf(1.0 / p)
}

/// Conjugate exponent `p/(p-1)` with the usual conventions at 1 and ∞.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Indices of `v` sorted by decreasing magnitude; ties keep the lower index first.
pub fn order_by_magnitude(v: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx
}

fn to_faer(flat: ArrayView1<f64>, rows: usize, cols: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols, |i, j| flat[i * cols + j])
}

fn dense_to_faer(a: &Array2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Thin singular value decomposition of a row-major flattened matrix.
#[derive(Clone, Debug)]
pub struct Svd {
    u: Mat<f64>,
    v: Mat<f64>,
    pub singular_values: Vec<f64>,
}

impl Svd {
    pub fn new(flat: ArrayView1<f64>, rows: usize, cols: usize) -> Self {
        let svd = to_faer(flat, rows, cols)
            .thin_svd()
            .expect("SVD of a finite matrix converges");
        Svd {
            u: svd.U().to_owned(),
            v: svd.V().to_owned(),
            singular_values: svd.S().column_vector().iter().copied().collect(),
        }
    }

    /// `U diag(s) Vᵀ`, flattened row-major.
    pub fn compose(&self, s: &[f64]) -> Array1<f64> {
        let (rows, cols) = (self.u.nrows(), self.v.nrows());
        let mut out = Array1::zeros(rows * cols);
        for (k, &sk) in s.iter().enumerate() {
            if sk == 0.0 {
                continue;
            }
            for i in 0..rows {
                let uik = sk * self.u[(i, k)];
                for j in 0..cols {
                    out[i * cols + j] += uik * self.v[(j, k)];
                }
            }
        }
        out
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = dense_to_faer(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("symmetric eigensolver converges");
    values.sort_by(f64::total_cmp);
    values
}

/// Symmetric square root of a positive semidefinite matrix via its eigendecomposition.
/// Negative eigenvalues within round-off are clamped to zero.
pub fn psd_sqrt(sigma: &Array2<f64>) -> Array2<f64> {
    let d = sigma.nrows();
    let eig = dense_to_faer(sigma)
        .self_adjoint_eigen(Side::Lower)
        .expect("symmetric eigensolver converges");
    let (vecs, vals) = (eig.U(), eig.S().column_vector());
    Array2::from_shape_fn((d, d), |(i, j)| {
        (0..d).map(|k| vals[k].max(0.0).sqrt() * vecs[(i, k)] * vecs[(j, k)]).sum()
    })
}

/// Least-squares solution of `A x ≈ b` by Householder QR; `A` must have full column rank.
pub fn least_squares(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let fa = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
    let fb = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = fa.qr().solve_lstsq(&fb);
    Array1::from_shape_fn(a.ncols(), |i| x[(i, 0)])
}

/// Quadratic form `uᵀ Σ u`.
pub fn quad_form(sigma: &Array2<f64>, u: ArrayView1<f64>) -> f64 {
    u.dot(&matvec(sigma.view(), u))
}
