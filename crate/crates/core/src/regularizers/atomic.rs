//! Gauge of the convex hull of a finite symmetric atom set.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

/// `inf{Σ c_a : t = Σ c_a a, c ≥ 0}`, or `+∞` when `t` is outside the span of the atoms.
pub(crate) fn atomic_gauge(atoms: &[Vec<f64>], t: ArrayView1<f64>) -> Result<f64> {
    if t.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let coefs: Vec<_> = atoms.iter().map(|_| problem.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for (j, &tj) in t.iter().enumerate() {
        let expr: Vec<_> = coefs
            .iter()
            .zip(atoms)
            .filter(|(_, a)| a[j] != 0.0)
            .map(|(&c, a)| (c, a[j]))
            .collect();
        problem.add_constraint(expr.as_slice(), ComparisonOp::Eq, tj);
    }
    match problem.solve() {
        Ok(outcome) => outcome
            .into_solution()
            .map(|s| s.objective())
            .map_err(|_| Error::LinearProgram("solve interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(f64::INFINITY),
        Err(e) => Err(Error::LinearProgram(e.to_string())),
    }
}

/// Index of the first atom maximizing `⟨g, a⟩`.
pub(crate) fn best_atom(atoms: &[Vec<f64>], g: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, a) in atoms.iter().enumerate() {
        let value: f64 = a.iter().zip(g.iter()).map(|(x, y)| x * y).sum();
        if value > best.1 {
            best = (k, value);
        }
    }
    best
}

pub(crate) fn atomic_lmo(atoms: &[Vec<f64>], g: ArrayView1<f64>, radius: f64) -> Array1<f64> {
    let (k, _) = best_atom(atoms, g);
    Array1::from_iter(atoms[k].iter().map(|&x| radius * x))
}
