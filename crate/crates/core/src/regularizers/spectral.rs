//! Schatten norms: the vector `ℓp` machinery applied to singular values.

use ndarray::{Array1, ArrayView1};

use super::lp::{lmo_lp, project_lq_ball, prox_lp};
use crate::linalg::{conjugate, norm_p, Svd};

pub(crate) fn singular_values(t: ArrayView1<f64>, m: usize, cols: usize) -> Vec<f64> {
    Svd::new(t, m, cols).singular_values
}

pub(crate) fn schatten_norm(t: ArrayView1<f64>, p: f64, m: usize, cols: usize) -> f64 {
    norm_p(Array1::from(singular_values(t, m, cols)).view(), p)
}

/// Applies a map on the vector of singular values and rebuilds the matrix.
fn spectral(t: ArrayView1<f64>, m: usize, cols: usize, f: impl FnOnce(ArrayView1<f64>) -> Array1<f64>) -> Array1<f64> {
    let svd = Svd::new(t, m, cols);
    let mapped = f(ArrayView1::from(&svd.singular_values));
    svd.compose(mapped.as_slice().expect("contiguous"))
}

pub(crate) fn schatten_prox(v: ArrayView1<f64>, p: f64, m: usize, cols: usize, tau: f64) -> Array1<f64> {
    spectral(v, m, cols, |s| prox_lp(s, p, tau))
}

pub(crate) fn schatten_projection(v: ArrayView1<f64>, p: f64, m: usize, cols: usize, radius: f64) -> Array1<f64> {
    spectral(v, m, cols, |s| project_lq_ball(s, p, radius))
}

pub(crate) fn schatten_dual(g: ArrayView1<f64>, p: f64, m: usize, cols: usize) -> f64 {
    schatten_norm(g, conjugate(p), m, cols)
}

pub(crate) fn schatten_lmo(g: ArrayView1<f64>, p: f64, m: usize, cols: usize, radius: f64) -> Array1<f64> {
    spectral(g, m, cols, |s| lmo_lp(s, p, radius))
}
