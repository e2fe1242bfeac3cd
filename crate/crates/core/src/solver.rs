//! Minimization of `(1/N) Σ (Y_i − ⟨X_i, t⟩)² + λ Ψ(t)` and of the same
//! squared loss over a ball `{Ψ ≤ r}`.
//!
//! Penalties with a proximal map use accelerated proximal gradient with
//! backtracking and a monotone restart. Constrained problems use projected
//! accelerated gradient where a projection exists and Frank–Wolfe with exact
//! line search otherwise. Penalized problems without a prox are reduced to a
//! one-dimensional search over the constraint radius.

use std::io::Write;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{matvec, norm2, rmatvec};
use crate::model::ProblemInstance;
use crate::regularizers::Regularizer;

/// Golden-section ratio `(√5 − 1)/2`.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Relative objective change below which the optimality certificate is checked.
    pub rel_tol: f64,
    /// Certificate tolerance, relative to the scale of the problem.
    pub cert_tol: f64,
    /// Factor applied to the step when the sufficient-decrease test fails.
    pub backtrack_shrink: f64,
    /// Factor applied to the step at the start of every iteration.
    pub step_growth: f64,
    pub monotone: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 5000,
            rel_tol: 1e-9,
            cert_tol: 1e-7,
            backtrack_shrink: 0.5,
            step_growth: 1.1,
            monotone: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        if !(self.rel_tol > 0.0 && self.cert_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return Err(invalid("backtracking shrink must lie in (0, 1)"));
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return Err(invalid("step growth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    IterationCap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution {
    pub t_hat: Array1<f64>,
    /// Objective at the starting point followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
    /// Per-iteration certificate; `NaN` where none was computed.
    pub certificate_trace: Vec<f64>,
    pub status: Status,
    /// Gradient-mapping norm (penalized) or Frank–Wolfe gap (constrained) at `t_hat`.
    pub certificate: f64,
    /// Threshold the certificate was compared against.
    pub tolerance: f64,
    /// Set when the result comes from the radius search or a nonconvex ball.
    pub approximate: bool,
    pub iterations: usize,
}

impl Solution {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace starts with the initial objective")
    }

    /// Writes `iteration,objective,certificate` rows; missing certificates are left empty.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["iteration", "objective", "certificate"])?;
        for (k, (f, c)) in self.objective_trace.iter().zip(&self.certificate_trace).enumerate() {
            let cert = if c.is_nan() { String::new() } else { c.to_string() };
            out.write_record([k.to_string(), f.to_string(), cert])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The empirical squared loss `(1/N)‖Y − X t‖²`.
#[derive(Clone, Copy, Debug)]
pub struct LeastSquares<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
}

impl<'a> LeastSquares<'a> {
    pub fn new(x: ArrayView2<'a, f64>, y: ArrayView1<'a, f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(mismatch(format!("X has {} rows but Y has {} entries", x.nrows(), y.len())));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(mismatch("empty design"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design or response contains NaN or infinity".into()));
        }
        Ok(LeastSquares { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    pub fn fitted(&self, t: ArrayView1<f64>) -> Array1<f64> {
        matvec(self.x, t)
    }

    /// Loss from the fitted values `X t`.
    fn loss_at_fitted(&self, xt: &Array1<f64>) -> f64 {
        xt.iter().zip(self.y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.n()
    }

    pub fn loss(&self, t: ArrayView1<f64>) -> f64 {
        self.loss_at_fitted(&self.fitted(t))
    }

    /// Gradient `(2/N) Xᵀ(X t − Y)` from the fitted values.
    fn gradient_at_fitted(&self, xt: &Array1<f64>) -> Array1<f64> {
        let residual = xt - &self.y;
        rmatvec(self.x, residual.view()) * (2.0 / self.n())
    }

    pub fn gradient(&self, t: ArrayView1<f64>) -> Array1<f64> {
        self.gradient_at_fitted(&self.fitted(t))
    }

    /// A lower estimate of the gradient's Lipschitz constant, `(2/N)‖X‖_F²/D`.
    fn initial_lipschitz(&self) -> f64 {
        let frob: f64 = self.x.iter().map(|v| v * v).sum();
        (2.0 * frob / (self.n() * self.dim() as f64)).max(1e-12)
    }
}

/// `(1/N) Σ (Y_i − ⟨X_i, t⟩)² + λ Ψ(t)`.
pub fn rerm_objective(instance: &ProblemInstance, reg: &Regularizer, lambda: f64, t: ArrayView1<f64>) -> Result<f64> {
    let ls = LeastSquares::new(instance.x.view(), instance.y.view())?;
    let penalty = if lambda == 0.0 { 0.0 } else { lambda * reg.value(t)? };
    Ok(ls.loss(t) + penalty)
}

pub fn solve_rerm(instance: &ProblemInstance, reg: &Regularizer, lambda: f64, config: &SolverConfig) -> Result<Solution> {
    solve_rerm_data(instance.x.view(), instance.y.view(), reg, lambda, config)
}

pub fn solve_constrained(
    instance: &ProblemInstance,
    reg: &Regularizer,
    radius: f64,
    config: &SolverConfig,
) -> Result<Solution> {
    solve_constrained_data(instance.x.view(), instance.y.view(), reg, radius, config)
}

/// Penalized least squares on raw data.
pub fn solve_rerm_data(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    reg: &Regularizer,
    lambda: f64,
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    let ls = LeastSquares::new(x, y)?;
    reg.check_dim(ls.dim())?;
    if !lambda.is_finite() {
        return Err(Error::NonFinite(format!("lambda = {lambda}")));
    }
    if lambda < 0.0 {
        return Err(invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let start = Array1::zeros(ls.dim());
    let scale = norm2(ls.gradient(start.view()).view()).max(1.0);
    let tol = config.cert_tol * scale;
    if lambda == 0.0 {
        let prox = |v: ArrayView1<f64>, _step: f64| Ok(v.to_owned());
        let penalty = |_: ArrayView1<f64>| Ok(0.0);
        let cert = |_: ArrayView1<f64>, g: &Array1<f64>, _l: f64| Ok(norm2(g.view()));
        return accelerated(&ls, start, prox, penalty, cert, config, tol);
    }
    if reg.capabilities().has_prox {
        let prox = |v: ArrayView1<f64>, step: f64| reg.prox(v, lambda * step);
        let penalty = |t: ArrayView1<f64>| Ok(lambda * reg.value(t)?);
        let cert = |t: ArrayView1<f64>, g: &Array1<f64>, l: f64| {
            let moved = reg.prox((&t - &(g / l)).view(), lambda / l)?;
            Ok(l * norm2((&t - &moved).view()))
        };
        return accelerated(&ls, start, prox, penalty, cert, config, tol);
    }
    radius_search(&ls, reg, lambda, config)
}

/// Least squares over `{Ψ ≤ radius}` on raw data.
pub fn solve_constrained_data(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    reg: &Regularizer,
    radius: f64,
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    let ls = LeastSquares::new(x, y)?;
    reg.check_dim(ls.dim())?;
    if !radius.is_finite() {
        return Err(Error::NonFinite(format!("radius = {radius}")));
    }
    if radius < 0.0 {
        return Err(invalid(format!("radius must be nonnegative, got {radius}")));
    }
    constrained(&ls, reg, radius, Array1::zeros(ls.dim()), config)
}

fn constrained(
    ls: &LeastSquares,
    reg: &Regularizer,
    radius: f64,
    start: Array1<f64>,
    config: &SolverConfig,
) -> Result<Solution> {
    let tol = config.cert_tol * ls.loss(Array1::zeros(ls.dim()).view()).max(1.0);
    match reg {
        Regularizer::MaxNorm { .. } | Regularizer::Atomic { .. } => frank_wolfe(ls, reg, radius, start, config, tol),
        Regularizer::WeakLp { .. } => {
            // The weak-ℓp ball is not convex: certify stationarity of projected gradient instead of a gap.
            let prox = |v: ArrayView1<f64>, _step: f64| reg.project(v, radius);
            let penalty = |_: ArrayView1<f64>| Ok(0.0);
            let cert = |t: ArrayView1<f64>, g: &Array1<f64>, l: f64| {
                let moved = reg.project((&t - &(g / l)).view(), radius)?;
                Ok(l * norm2((&t - &moved).view()))
            };
            let tol = config.cert_tol * norm2(ls.gradient(Array1::zeros(ls.dim()).view()).view()).max(1.0);
            let mut sol = accelerated(ls, start, prox, penalty, cert, config, tol)?;
            sol.approximate = true;
            Ok(sol)
        }
        _ => {
            let prox = |v: ArrayView1<f64>, _step: f64| reg.project(v, radius);
            let penalty = |_: ArrayView1<f64>| Ok(0.0);
            let cert = |t: ArrayView1<f64>, g: &Array1<f64>, _l: f64| frank_wolfe_gap(reg, radius, t, g);
            accelerated(ls, start, prox, penalty, cert, config, tol)
        }
    }
}

/// `max_{Ψ(s) ≤ r} ⟨∇f(t), t − s⟩`.
fn frank_wolfe_gap(reg: &Regularizer, radius: f64, t: ArrayView1<f64>, grad: &Array1<f64>) -> Result<f64> {
    let s = reg.lmo((-grad).view(), radius)?;
    Ok(grad.dot(&(&t - &s)).max(0.0))
}

struct Step {
    point: Array1<f64>,
    fitted: Array1<f64>,
    loss: f64,
    lipschitz: f64,
    residual: f64,
}

/// One backtracked proximal-gradient step from `y` with fitted values `xy`.
fn prox_step<P>(ls: &LeastSquares, y: &Array1<f64>, xy: &Array1<f64>, mut l: f64, shrink: f64, prox: &P) -> Result<Step>
where
    P: Fn(ArrayView1<f64>, f64) -> Result<Array1<f64>>,
{
    let grad = ls.gradient_at_fitted(xy);
    loop {
        let point = prox((y - &(&grad / l)).view(), 1.0 / l)?;
        let fitted = ls.fitted(point.view());
        let diff = &point - y;
        let diff_sq = diff.dot(&diff);
        let fitted_diff = &fitted - xy;
        // for a quadratic the descent lemma reduces to (1/N)‖X d‖² ≤ (L/2)‖d‖²
        if fitted_diff.dot(&fitted_diff) / ls.n() <= 0.5 * l * diff_sq * (1.0 + 1e-12) {
            let loss = ls.loss_at_fitted(&fitted);
            return Ok(Step { point, fitted, loss, lipschitz: l, residual: l * diff_sq.sqrt() });
        }
        l /= shrink;
        if !l.is_finite() {
            return Err(Error::NonFinite("step size underflow during backtracking".into()));
        }
    }
}

fn accelerated<P, Q, C>(
    ls: &LeastSquares,
    start: Array1<f64>,
    prox: P,
    penalty: Q,
    certificate: C,
    config: &SolverConfig,
    tol: f64,
) -> Result<Solution>
where
    P: Fn(ArrayView1<f64>, f64) -> Result<Array1<f64>>,
    Q: Fn(ArrayView1<f64>) -> Result<f64>,
    C: Fn(ArrayView1<f64>, &Array1<f64>, f64) -> Result<f64>,
{
    let mut x = start;
    let mut xx = ls.fitted(x.view());
    let mut x_prev = x.clone();
    let mut xx_prev = xx.clone();
    let mut objective = ls.loss_at_fitted(&xx) + penalty(x.view())?;
    let mut l = ls.initial_lipschitz();
    let mut theta = 1.0_f64;
    let mut objective_trace = vec![objective];
    let mut certificate_trace = vec![f64::NAN];
    let mut status = Status::IterationCap;
    let mut iterations = 0;

    for k in 1..=config.max_iter {
        iterations = k;
        let mut theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        let y = &x + &((&x - &x_prev) * beta);
        let xy = &xx + &((&xx - &xx_prev) * beta);
        l /= config.step_growth;
        let step = prox_step(ls, &y, &xy, l, config.backtrack_shrink, &prox)?;
        l = step.lipschitz;
        let mut residual = step.residual;
        let value = step.loss + penalty(step.point.view())?;
        let mut candidate = (step.point, step.fitted, value);

        if config.monotone && candidate.2 > objective {
            theta_next = 1.0;
            let restart = prox_step(ls, &x, &xx, l, config.backtrack_shrink, &prox)?;
            l = restart.lipschitz;
            residual = restart.residual;
            let value = restart.loss + penalty(restart.point.view())?;
            candidate = if value <= objective {
                (restart.point, restart.fitted, value)
            } else {
                (x.clone(), xx.clone(), objective)
            };
        }
        theta = theta_next;
        let change = (objective - candidate.2).abs();
        x_prev = std::mem::replace(&mut x, candidate.0);
        xx_prev = std::mem::replace(&mut xx, candidate.1);
        objective = candidate.2;
        objective_trace.push(objective);
        certificate_trace.push(residual);

        if change <= config.rel_tol * objective.abs() || k % 50 == 0 {
            let grad = ls.gradient_at_fitted(&xx);
            if certificate(x.view(), &grad, l)? <= tol {
                status = Status::Converged;
                break;
            }
        }
    }
    let certificate = certificate(x.view(), &ls.gradient_at_fitted(&xx), l)?;
    if certificate > tol {
        status = Status::IterationCap;
    }
    Ok(Solution {
        t_hat: x,
        objective_trace,
        certificate_trace,
        status,
        certificate,
        tolerance: tol,
        approximate: false,
        iterations,
    })
}

/// Frank–Wolfe over `{Ψ ≤ r}` with exact line search on the quadratic.
fn frank_wolfe(
    ls: &LeastSquares,
    reg: &Regularizer,
    radius: f64,
    start: Array1<f64>,
    config: &SolverConfig,
    tol: f64,
) -> Result<Solution> {
    let mut x = start;
    let mut xx = ls.fitted(x.view());
    let mut objective = ls.loss_at_fitted(&xx);
    let mut objective_trace = vec![objective];
    let mut certificate_trace = vec![f64::NAN];
    let mut status = Status::IterationCap;
    let mut iterations = 0;
    let mut gap = f64::INFINITY;

    for k in 1..=config.max_iter {
        let grad = ls.gradient_at_fitted(&xx);
        let s = reg.lmo((-&grad).view(), radius)?;
        gap = grad.dot(&(&x - &s)).max(0.0);
        if gap <= tol {
            status = Status::Converged;
            break;
        }
        iterations = k;
        let xs = ls.fitted(s.view());
        let direction_fit = &xs - &xx;
        let curvature = direction_fit.dot(&direction_fit);
        if curvature == 0.0 {
            break;
        }
        let residual = &xx - &ls.y;
        let gamma = (-residual.dot(&direction_fit) / curvature).clamp(0.0, 1.0);
        x = &x + &((&s - &x) * gamma);
        xx = &xx + &(direction_fit * gamma);
        objective = objective.min(ls.loss_at_fitted(&xx));
        objective_trace.push(objective);
        certificate_trace.push(gap);
    }
    if status != Status::Converged {
        let grad = ls.gradient_at_fitted(&xx);
        gap = frank_wolfe_gap(reg, radius, x.view(), &grad)?;
        if gap <= tol {
            status = Status::Converged;
        }
    }
    Ok(Solution {
        t_hat: x,
        objective_trace,
        certificate_trace,
        status,
        certificate: gap,
        tolerance: tol,
        approximate: false,
        iterations,
    })
}

/// Penalized problem for penalties without a prox: golden-section search of
/// `φ(r) = min_{Ψ ≤ r} f + λ r` over `r ∈ [0, f(0)/λ]`, each inner problem
/// warm-started from the best solution found so far rescaled to the new radius.
fn radius_search(ls: &LeastSquares, reg: &Regularizer, lambda: f64, config: &SolverConfig) -> Result<Solution> {
    let zero = Array1::zeros(ls.dim());
    let f0 = ls.loss(zero.view());
    let mut best = Candidate { value: f0, radius: 0.0, solution: None };
    let mut trace = vec![f0];
    let mut iterations = 0;
    let mut evaluate = |r: f64, best: &mut Candidate, trace: &mut Vec<f64>| -> Result<f64> {
        let warm = match &best.solution {
            Some(sol) if best.radius > 0.0 => &sol.t_hat * (r / best.radius),
            _ => zero.clone(),
        };
        let sol = constrained(ls, reg, r, warm, config)?;
        iterations += sol.iterations;
        let value = sol.objective() + lambda * r;
        if value < best.value {
            *best = Candidate { value, radius: r, solution: Some(sol) };
        }
        trace.push(best.value);
        Ok(value)
    };

    let (mut lo, mut hi) = (0.0, f0 / lambda);
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = evaluate(a, &mut best, &mut trace)?;
    let mut fb = evaluate(b, &mut best, &mut trace)?;
    let mut bracketed = false;
    for _ in 0..100 {
        if hi - lo <= 1e-7 * (1.0 + hi) {
            bracketed = true;
            break;
        }
        if fa <= fb {
            (hi, b, fb) = (b, a, fa);
            a = hi - INV_PHI * (hi - lo);
            fa = evaluate(a, &mut best, &mut trace)?;
        } else {
            (lo, a, fa) = (a, b, fb);
            b = lo + INV_PHI * (hi - lo);
            fb = evaluate(b, &mut best, &mut trace)?;
        }
    }

    let Some(inner) = best.solution else {
        return Ok(Solution {
            t_hat: zero,
            certificate_trace: vec![f64::NAN; trace.len()],
            objective_trace: trace,
            status: if bracketed { Status::Converged } else { Status::IterationCap },
            certificate: 0.0,
            tolerance: config.cert_tol,
            approximate: true,
            iterations,
        });
    };
    // the penalized objective at the returned point can only be below φ(r)
    let exact = ls.loss(inner.t_hat.view()) + lambda * reg.value(inner.t_hat.view())?;
    let last = trace.last().copied().expect("nonempty");
    trace.push(exact.min(last));
    Ok(Solution {
        t_hat: inner.t_hat,
        certificate_trace: vec![f64::NAN; trace.len()],
        objective_trace: trace,
        status: if bracketed && inner.status == Status::Converged { Status::Converged } else { Status::IterationCap },
        certificate: inner.certificate,
        tolerance: inner.tolerance,
        approximate: true,
        iterations,
    })
}

struct Candidate {
    value: f64,
    radius: f64,
    solution: Option<Solution>,
}
