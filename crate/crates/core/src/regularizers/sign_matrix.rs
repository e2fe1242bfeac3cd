//! The convex hull of rank-one sign matrices `u vᵀ`, `u ∈ {±1}^m`, `v ∈ {±1}^T`,
//! used as the max-norm ball.
//!
//! Its support function is the `‖·‖_{∞→1}` norm, computed exactly by
//! enumerating the sign vectors of the shorter side. The gauge is recovered
//! from the support function by a cutting-plane linear program.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// Relative violation below which a cutting plane is not added.
const CUT_TOL: f64 = 1e-10;

/// The best sign pair for `G` (row-major `m × cols`): `(⟨G, u vᵀ⟩, u, v)`.
///
/// Patterns are enumerated with the first entry of the enumerated side fixed
/// to `+1`; the other side is `sign(·)` with `sign(0) = +1`. The first maximum
/// in enumeration order wins.
pub(crate) fn best_sign_pair(g: ArrayView1<f64>, m: usize, cols: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let entry = |i: usize, j: usize| g[i * cols + j];
    let rows_shorter = m <= cols;
    let (short, long) = if rows_shorter { (m, cols) } else { (cols, m) };
    let mut best = (f64::NEG_INFINITY, vec![], vec![]);
    let mut acc = vec![0.0; long];
    for mask in 0u64..(1u64 << (short - 1)) {
        let pattern: Vec<f64> = (0..short)
            .map(|k| if k > 0 && mask >> (k - 1) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (k, &s) in pattern.iter().enumerate() {
            for (l, a) in acc.iter_mut().enumerate() {
                let gij = if rows_shorter { entry(k, l) } else { entry(l, k) };
                *a += s * gij;
            }
        }
        let value: f64 = acc.iter().map(|a| a.abs()).sum();
        if value > best.0 {
            let other: Vec<f64> = acc.iter().map(|&a| if a >= 0.0 { 1.0 } else { -1.0 }).collect();
            best = if rows_shorter {
                (value, pattern, other)
            } else {
                (value, other, pattern)
            };
        }
    }
    best
}

pub(crate) fn outer(u: &[f64], v: &[f64]) -> Array1<f64> {
    Array1::from_iter(u.iter().flat_map(|&ui| v.iter().map(move |&vj| ui * vj)))
}

/// Gauge of `conv{u vᵀ}` at `t`.
///
/// Solves `max ⟨g, t⟩` over the polar body `{g : ⟨g, u vᵀ⟩ ≤ 1 ∀ u, v}` by
/// adding violated sign-pair constraints one at a time. The box
/// `|g_ij| ≤ 1` is implied by the full constraint set and keeps every
/// relaxation bounded. The returned value is `⟨g, t⟩ / max(1, support(g))`
/// for the final iterate, a certified lower bound that matches the
/// relaxation's upper bound up to `CUT_TOL`.
pub(crate) fn sign_hull_gauge(t: ArrayView1<f64>, m: usize, cols: usize) -> Result<f64> {
    if t.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let lp_err = |e: microlp::Error| Error::LinearProgram(e.to_string());
    let interrupted = |_| Error::LinearProgram("solve interrupted".into());

    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = t.iter().map(|&tij| problem.add_var(tij, (-1.0, 1.0))).collect();
    let mut solution = problem.solve().map_err(lp_err)?.into_solution().map_err(interrupted)?;
    for _ in 0..10_000 {
        let g = Array1::from_iter(vars.iter().map(|&v| solution[v]));
        let (support, u, v) = best_sign_pair(g.view(), m, cols);
        let value = g.dot(&t);
        if support <= 1.0 + CUT_TOL {
            return Ok(value / support.max(1.0));
        }
        let cut = outer(&u, &v);
        let expr: Vec<_> = vars.iter().zip(cut.iter()).map(|(&var, &c)| (var, c)).collect();
        solution = solution
            .add_constraint(expr.as_slice(), ComparisonOp::Le, 1.0)
            .map_err(lp_err)?
            .into_solution()
            .map_err(interrupted)?;
    }
    Err(Error::LinearProgram("cutting planes did not terminate".into()))
}
