//! Penalties defined on the nonincreasing rearrangement `|t|*`: the sorted
//! `ℓ1` (SLOPE) norm and the weak-`ℓp` quasi-norm.

use ndarray::{Array1, ArrayView1};

use crate::linalg::{order_by_magnitude, sign};

/// `Σ λ_j |t|*_j`.
pub(crate) fn slope_value(weights: &[f64], t: ArrayView1<f64>) -> f64 {
    let order = order_by_magnitude(t);
    order.iter().zip(weights).map(|(&j, &w)| w * t[j].abs()).sum()
}

/// `max_k (Σ_{j≤k} |g|*_j) / (Σ_{j≤k} λ_j)`, together with the first maximizing `k`.
fn slope_dual_with_index(weights: &[f64], g: ArrayView1<f64>) -> (f64, usize) {
    let order = order_by_magnitude(g);
    let (mut partial_g, mut partial_w) = (0.0, 0.0);
    let mut best = (0.0, 1);
    for (k, (&j, &w)) in order.iter().zip(weights).enumerate() {
        partial_g += g[j].abs();
        partial_w += w;
        let ratio = partial_g / partial_w;
        if ratio > best.0 {
            best = (ratio, k + 1);
        }
    }
    best
}

pub(crate) fn slope_dual(weights: &[f64], g: ArrayView1<f64>) -> f64 {
    slope_dual_with_index(weights, g).0
}

/// Proximal map of `τ Σ λ_j |x|*_j` by pool-adjacent-violators.
///
/// On the sorted magnitudes the problem is an isotonic regression of
/// `|v|* − τλ` onto nonincreasing sequences followed by clipping at zero.
pub(crate) fn slope_prox(weights: &[f64], v: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let order = order_by_magnitude(v);
    // blocks of (start, length, sum)
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(v.len());
    for (i, (&j, &w)) in order.iter().zip(weights).enumerate() {
        blocks.push((i, 1, v[j].abs() - tau * w));
        while blocks.len() > 1 {
            let (_, len_top, sum_top) = blocks[blocks.len() - 1];
            let (start_prev, len_prev, sum_prev) = blocks[blocks.len() - 2];
            if sum_prev / len_prev as f64 > sum_top / len_top as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (start_prev, len_prev + len_top, sum_prev + sum_top);
        }
    }
    let mut out = Array1::zeros(v.len());
    for (start, len, sum) in blocks {
        let level = (sum / len as f64).max(0.0);
        for &j in &order[start..start + len] {
            out[j] = sign(v[j]) * level;
        }
    }
    out
}

/// Maximizer of `⟨g, t⟩` over the SLOPE ball: the signs of the top-`k` entries
/// scaled by `radius / Σ_{j≤k} λ_j` for the maximizing `k`.
pub(crate) fn slope_lmo(weights: &[f64], g: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    let mut out = Array1::zeros(g.len());
    let (best, k) = slope_dual_with_index(weights, g);
    if best == 0.0 {
        return out;
    }
    let mass: f64 = weights[..k].iter().sum();
    for &j in &order_by_magnitude(g)[..k] {
        out[j] = sign(g[j]) * radius / mass;
    }
    out
}

/// `max_j j^{1/p} |t|*_j`.
pub(crate) fn weak_lp_value(p: f64, t: ArrayView1<f64>) -> f64 {
    order_by_magnitude(t)
        .iter()
        .enumerate()
        .map(|(i, &j)| ((i + 1) as f64).powf(1.0 / p) * t[j].abs())
        .fold(0.0, f64::max)
}

/// Maximizer of `⟨g, t⟩` over the weak-`ℓp` ball: the extreme point
/// `j^{-1/p}` profile placed on the decreasing rearrangement of `|g|`.
pub(crate) fn weak_lp_lmo(p: f64, g: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    let mut out = Array1::zeros(g.len());
    for (i, &j) in order_by_magnitude(g).iter().enumerate() {
        out[j] = sign(g[j]) * radius * ((i + 1) as f64).powf(-1.0 / p);
    }
    out
}

/// Euclidean projection onto the (nonconvex) weak-`ℓp` ball of radius `r`:
/// the `j`-th largest magnitude is clipped at `r j^{-1/p}`, keeping signs and order.
pub(crate) fn weak_lp_projection(p: f64, v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    let mut out = v.to_owned();
    for (i, &j) in order_by_magnitude(v).iter().enumerate() {
        let cap = radius * ((i + 1) as f64).powf(-1.0 / p);
        out[j] = sign(v[j]) * v[j].abs().min(cap);
    }
    out
}
