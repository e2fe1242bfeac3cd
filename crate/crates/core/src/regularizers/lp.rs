//! `ℓp` penalties: proximal maps and Euclidean projections onto `ℓp` balls.

use ndarray::{Array1, ArrayView1};

use crate::linalg::{conjugate, norm1, norm2, norm_p, sign};

/// Relative width at which the multiplier bisection stops.
const MULTIPLIER_TOL: f64 = 1e-13;

pub(crate) fn soft_threshold(v: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    v.mapv(|x| sign(x) * (x.abs() - tau).max(0.0))
}

/// `prox_{τ‖·‖₂}`: shrink the whole vector towards zero.
pub(crate) fn block_shrink(v: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let n = norm2(v);
    if n <= tau {
        Array1::zeros(v.len())
    } else {
        v.mapv(|x| x * (1.0 - tau / n))
    }
}

/// Euclidean projection onto `{‖x‖₁ ≤ radius}` by the sort-and-threshold rule.
pub(crate) fn project_l1_ball(v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    if norm1(v) <= radius {
        return v.to_owned();
    }
    if radius == 0.0 {
        return Array1::zeros(v.len());
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (k as f64 + 1.0);
        if m > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    soft_threshold(v, theta)
}

pub(crate) fn project_l2_ball(v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    let n = norm2(v);
    if n <= radius {
        v.to_owned()
    } else {
        v.mapv(|x| x * radius / n)
    }
}

pub(crate) fn project_linf_ball(v: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    v.mapv(|x| x.clamp(-radius, radius))
}

/// Solves `s + μ q s^{q-1} = a` for `s ∈ [0, a]` by safeguarded Newton.
fn shrink_magnitude(a: f64, mu: f64, q: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, a);
    let mut s = a / (1.0 + mu * q * a.powf(q - 2.0)).max(1.0);
    for _ in 0..200 {
        let f = s + mu * q * s.powf(q - 1.0) - a;
        if f == 0.0 {
            return s;
        }
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        if hi - lo <= 4.0 * f64::EPSILON * a {
            break;
        }
        let df = 1.0 + mu * q * (q - 1.0) * s.powf(q - 2.0);
        let newton = s - f / df;
        s = if newton > lo && newton < hi && df.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    s
}

/// Euclidean projection onto `{‖x‖_q ≤ radius}` for `q ∈ [1, ∞]`.
///
/// For `1 < q < ∞` the KKT conditions give `x_i = sign(v_i) s_i(μ)` with
/// `s_i + μ q s_i^{q-1} = |v_i|`; the multiplier `μ` is bisected until
/// `Σ s_i^q = 1` (after rescaling to the unit ball). The returned point is
/// taken on the feasible side of the bracket.
pub(crate) fn project_lq_ball(v: ArrayView1<f64>, q: f64, radius: f64) -> Array1<f64> {
    if q == 1.0 {
        return project_l1_ball(v, radius);
    }
    if q.is_infinite() {
        return project_linf_ball(v, radius);
    }
    if q == 2.0 {
        return project_l2_ball(v, radius);
    }
    if norm_p(v, q) <= radius {
        return v.to_owned();
    }
    if radius == 0.0 {
        return Array1::zeros(v.len());
    }
    let a: Vec<f64> = v.iter().map(|x| x.abs() / radius).collect();
    let mass = |mu: f64| -> f64 { a.iter().map(|&ai| shrink_magnitude(ai, mu, q).powf(q)).sum::<f64>() };

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while mass(hi) > 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        if hi - lo <= MULTIPLIER_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Array1::from_iter(
        v.iter()
            .zip(&a)
            .map(|(&vi, &ai)| sign(vi) * radius * shrink_magnitude(ai, hi, q)),
    )
}

/// `prox_{τ‖·‖_p}` for `p ∈ [1, ∞]`.
///
/// Closed forms at `p ∈ {1, 2}`; otherwise the Moreau decomposition
/// `prox(v) = v − τ·Π_{B_{p'}}(v/τ)` with the dual-ball projection above.
pub(crate) fn prox_lp(v: ArrayView1<f64>, p: f64, tau: f64) -> Array1<f64> {
    if p == 1.0 {
        return soft_threshold(v, tau);
    }
    if p == 2.0 {
        return block_shrink(v, tau);
    }
    let q = conjugate(p);
    let scaled = v.mapv(|x| x / tau);
    let proj = project_lq_ball(scaled.view(), q, 1.0);
    &v - &(proj * tau)
}

/// A maximizer of `⟨g, t⟩` over `{‖t‖_p ≤ radius}`.
pub(crate) fn lmo_lp(g: ArrayView1<f64>, p: f64, radius: f64) -> Array1<f64> {
    let mut out = Array1::zeros(g.len());
    if p == 1.0 {
        if let Some(j) = first_argmax_abs(g) {
            out[j] = radius * sign(g[j]);
        }
        return out;
    }
    if p.is_infinite() {
        return g.mapv(|x| radius * sign(x));
    }
    let q = conjugate(p);
    let nq = norm_p(g, q);
    if nq == 0.0 {
        return out;
    }
    g.mapv(|x| radius * sign(x) * (x.abs() / nq).powf(q - 1.0))
}

/// Lowest index attaining the largest magnitude, `None` for a zero vector.
pub(crate) fn first_argmax_abs(g: ArrayView1<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &x) in g.iter().enumerate() {
        if x != 0.0 && best.is_none_or(|(_, b)| x.abs() > b) {
            best = Some((j, x.abs()));
        }
    }
    best.map(|(j, _)| j)
}
