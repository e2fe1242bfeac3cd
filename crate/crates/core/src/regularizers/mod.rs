//! The penalty catalog.
//!
//! Every penalty is a [`Regularizer`] value that knows how to evaluate itself,
//! its dual norm, its proximal map, a linear-minimization oracle over its
//! balls and its Gaussian mean-width. Matrix-valued penalties act on
//! row-major flattened `m × T` matrices.

mod atomic;
mod lp;
mod sign_matrix;
mod sorted;
mod spectral;

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{conjugate, matvec, norm1, norm_inf, norm_p};
use crate::model::Shape;

/// Default bound on `m + T` for exhaustive sign-pattern enumeration.
pub const DEFAULT_BRUTE_FORCE_CAP: usize = 24;

/// Grothendieck's constant as used when reporting max-norm values.
pub const GROTHENDIECK_CONSTANT: f64 = 1.782;

/// Samples per Monte Carlo chunk; each chunk owns an RNG stream.
const WIDTH_CHUNK: usize = 256;

/// Seed for the internal Monte Carlo width of atomic gauges.
const ATOMIC_WIDTH_SEED: u64 = 0x5eed_a70c;
const ATOMIC_WIDTH_SAMPLES: usize = 20_000;

pub const WIDTH_CONVENTION: &str = "constants normalized to 1";

/// Cones supported by the MMP construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cone", rename_all = "kebab-case")]
pub enum Cone {
    NonnegOrthant,
    /// Disjoint groups covering `0..D` (zero-based coordinates).
    GroupPartition { groups: Vec<Vec<usize>> },
}

/// A penalty `Ψ` with its parameters.
///
/// Serializes as `{"kind": ..., "params": {...}}`. An infinite `ℓp` exponent
/// is written as the string `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Regularizer {
    L1,
    Lp {
        #[serde(with = "exponent")]
        p: f64,
    },
    /// `max_j j^{1/p} |t|*_j` for `p ∈ (0, 1]`; `eta` is the quasi-triangle
    /// constant and must be supplied.
    WeakLp { p: f64, eta: f64 },
    Slope { weights: Vec<f64> },
    MmpCone(Cone),
    Schatten {
        #[serde(with = "exponent")]
        p: f64,
        m: usize,
        t: usize,
    },
    MaxNorm {
        m: usize,
        t: usize,
        #[serde(default = "default_cap")]
        brute_force_cap: usize,
    },
    Atomic { atoms: Vec<Vec<f64>> },
}

fn default_cap() -> usize {
    DEFAULT_BRUTE_FORCE_CAP
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub has_prox: bool,
    pub has_lmo: bool,
    pub has_width_formula: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum WidthMethod {
    ClosedForm { formula: String },
    MonteCarlo { samples: usize, stderr: f64 },
}

/// A Gaussian mean-width value together with how it was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    pub value: f64,
    #[serde(flatten)]
    pub method: WidthMethod,
    pub convention: String,
}

impl WidthEstimate {
    pub fn closed_form(value: f64, formula: impl Into<String>) -> Self {
        WidthEstimate {
            value,
            method: WidthMethod::ClosedForm { formula: formula.into() },
            convention: WIDTH_CONVENTION.to_string(),
        }
    }

    pub fn stderr(&self) -> Option<f64> {
        match self.method {
            WidthMethod::MonteCarlo { stderr, .. } => Some(stderr),
            WidthMethod::ClosedForm { .. } => None,
        }
    }
}

impl Regularizer {
    pub fn lp(p: f64) -> Result<Self> {
        let reg = Regularizer::Lp { p };
        reg.validate()?;
        Ok(reg)
    }

    pub fn weak_lp(p: f64, eta: f64) -> Result<Self> {
        let reg = Regularizer::WeakLp { p, eta };
        reg.validate()?;
        Ok(reg)
    }

    pub fn slope(weights: Vec<f64>) -> Result<Self> {
        let reg = Regularizer::Slope { weights };
        reg.validate()?;
        Ok(reg)
    }

    pub fn groups(groups: Vec<Vec<usize>>) -> Result<Self> {
        let reg = Regularizer::MmpCone(Cone::GroupPartition { groups });
        reg.validate()?;
        Ok(reg)
    }

    pub fn schatten(p: f64, m: usize, t: usize) -> Result<Self> {
        let reg = Regularizer::Schatten { p, m, t };
        reg.validate()?;
        Ok(reg)
    }

    pub fn max_norm(m: usize, t: usize) -> Result<Self> {
        let reg = Regularizer::MaxNorm { m, t, brute_force_cap: DEFAULT_BRUTE_FORCE_CAP };
        reg.validate()?;
        Ok(reg)
    }

    pub fn atomic(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let reg = Regularizer::Atomic { atoms };
        reg.validate()?;
        Ok(reg)
    }

    /// Short kind name, as used in JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Regularizer::L1 => "l1",
            Regularizer::Lp { .. } => "lp",
            Regularizer::WeakLp { .. } => "weak-lp",
            Regularizer::Slope { .. } => "slope",
            Regularizer::MmpCone(_) => "mmp-cone",
            Regularizer::Schatten { .. } => "schatten",
            Regularizer::MaxNorm { .. } => "max-norm",
            Regularizer::Atomic { .. } => "atomic",
        }
    }

    /// Quasi-triangle constant: `Ψ(s + t) ≤ η (Ψ(s) + Ψ(t))`.
    pub fn eta(&self) -> f64 {
        match self {
            Regularizer::WeakLp { eta, .. } => *eta,
            _ => 1.0,
        }
    }

    pub fn is_norm(&self) -> bool {
        !matches!(self, Regularizer::WeakLp { .. })
    }

    pub fn capabilities(&self) -> Capabilities {
        let has_prox = !matches!(
            self,
            Regularizer::WeakLp { .. } | Regularizer::MaxNorm { .. } | Regularizer::Atomic { .. }
        );
        Capabilities {
            has_prox,
            has_lmo: true,
            has_width_formula: !matches!(self, Regularizer::Atomic { .. }),
        }
    }

    /// Checks parameters that do not depend on the ambient dimension.
    pub fn validate(&self) -> Result<()> {
        match self {
            Regularizer::L1 => Ok(()),
            Regularizer::Lp { p } => {
                if !(*p >= 1.0) {
                    return Err(invalid(format!("lp exponent must be ≥ 1, got {p}")));
                }
                Ok(())
            }
            Regularizer::WeakLp { p, eta } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(invalid(format!("weak-lp exponent must lie in (0, 1], got {p}")));
                }
                if !(*eta >= 1.0 && eta.is_finite()) {
                    return Err(invalid(format!("weak-lp needs a finite eta ≥ 1, got {eta}")));
                }
                Ok(())
            }
            Regularizer::Slope { weights } => {
                if weights.is_empty() {
                    return Err(invalid("slope weights are empty"));
                }
                if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(invalid("slope weights must be finite and strictly positive"));
                }
                if weights.windows(2).any(|w| w[1] > w[0]) {
                    return Err(invalid("slope weights must be nonincreasing"));
                }
                Ok(())
            }
            Regularizer::MmpCone(Cone::NonnegOrthant) => Ok(()),
            Regularizer::MmpCone(Cone::GroupPartition { groups }) => {
                let d: usize = groups.iter().map(Vec::len).sum();
                let mut seen = vec![false; d];
                for g in groups {
                    if g.is_empty() {
                        return Err(invalid("empty group"));
                    }
                    for &j in g {
                        if j >= d || seen[j] {
                            return Err(invalid(format!("groups must be a disjoint cover of 0..{d}; bad index {j}")));
                        }
                        seen[j] = true;
                    }
                }
                Ok(())
            }
            Regularizer::Schatten { p, m, t } => {
                if !(*p >= 1.0) {
                    return Err(invalid(format!("schatten exponent must be ≥ 1, got {p}")));
                }
                Shape::matrix(*m, *t).validate()
            }
            Regularizer::MaxNorm { m, t, .. } => Shape::matrix(*m, *t).validate(),
            Regularizer::Atomic { atoms } => {
                let first = atoms.first().ok_or_else(|| invalid("atom set is empty"))?;
                if first.is_empty() || atoms.iter().any(|a| a.len() != first.len()) {
                    return Err(invalid("atoms must be nonempty vectors of one length"));
                }
                if atoms.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(invalid("atoms must be finite"));
                }
                for a in atoms {
                    let closed = atoms.iter().any(|b| a.iter().zip(b).all(|(x, y)| *x == -*y));
                    if !closed {
                        return Err(invalid("atom set must be closed under negation"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Checks that a vector of length `len` fits the penalty's shape requirements.
    pub fn check_dim(&self, len: usize) -> Result<()> {
        let expected = match self {
            Regularizer::Slope { weights } => Some(weights.len()),
            Regularizer::MmpCone(Cone::GroupPartition { groups }) => Some(groups.iter().map(Vec::len).sum()),
            Regularizer::Schatten { m, t, .. } | Regularizer::MaxNorm { m, t, .. } => Some(m * t),
            Regularizer::Atomic { atoms } => Some(atoms[0].len()),
            _ => None,
        };
        match expected {
            Some(e) if e != len => Err(mismatch(format!("{} expects dimension {e}, got {len}", self.kind()))),
            _ if len == 0 => Err(mismatch("empty vector")),
            _ => Ok(()),
        }
    }

    fn check_shape(&self, shape: &Shape) -> Result<()> {
        shape.validate()?;
        self.check_dim(shape.dim())?;
        if let Regularizer::Schatten { m, t, .. } | Regularizer::MaxNorm { m, t, .. } = self {
            if shape.as_matrix() != Some((*m, *t)) {
                return Err(mismatch(format!("{} needs a {m}×{t} matrix shape", self.kind())));
            }
        }
        Ok(())
    }

    fn unsupported(&self, operation: &'static str) -> Error {
        Error::Unsupported { kind: self.kind(), operation }
    }

    fn check_sign_cap(&self) -> Result<()> {
        if let Regularizer::MaxNorm { m, t, brute_force_cap } = self {
            if m + t > *brute_force_cap {
                let patterns = 2f64.powi(*m.min(t) as i32 - 1);
                return Err(Error::Refused(format!(
                    "exact sign-pattern search for a {m}×{t} matrix enumerates {patterns:.0} patterns \
                     of cost {} each; m + T = {} exceeds the configured cap {brute_force_cap}",
                    m * t,
                    m + t
                )));
            }
        }
        Ok(())
    }

    /// `Ψ(t)`.
    pub fn value(&self, t: ArrayView1<f64>) -> Result<f64> {
        self.check_dim(t.len())?;
        Ok(match self {
            Regularizer::L1 | Regularizer::MmpCone(Cone::NonnegOrthant) => norm1(t),
            Regularizer::Lp { p } => norm_p(t, *p),
            Regularizer::WeakLp { p, .. } => sorted::weak_lp_value(*p, t),
            Regularizer::Slope { weights } => sorted::slope_value(weights, t),
            Regularizer::MmpCone(Cone::GroupPartition { groups }) => groups
                .iter()
                .map(|g| (g.len() as f64).sqrt() * g.iter().map(|&j| t[j] * t[j]).sum::<f64>().sqrt())
                .sum(),
            Regularizer::Schatten { p, m, t: cols } => spectral::schatten_norm(t, *p, *m, *cols),
            Regularizer::MaxNorm { m, t: cols, .. } => {
                self.check_sign_cap()?;
                sign_matrix::sign_hull_gauge(t, *m, *cols)?
            }
            Regularizer::Atomic { atoms } => atomic::atomic_gauge(atoms, t)?,
        })
    }

    /// `Ψ*(g) = sup{⟨g, t⟩ : Ψ(t) ≤ 1}`.
    pub fn dual_norm(&self, g: ArrayView1<f64>) -> Result<f64> {
        self.check_dim(g.len())?;
        Ok(match self {
            Regularizer::L1 | Regularizer::MmpCone(Cone::NonnegOrthant) => norm_inf(g),
            Regularizer::Lp { p } => norm_p(g, conjugate(*p)),
            Regularizer::WeakLp { .. } => return Err(self.unsupported("dual norm")),
            Regularizer::Slope { weights } => sorted::slope_dual(weights, g),
            Regularizer::MmpCone(Cone::GroupPartition { groups }) => groups
                .iter()
                .map(|grp| (grp.iter().map(|&j| g[j] * g[j]).sum::<f64>() / grp.len() as f64).sqrt())
                .fold(0.0, f64::max),
            Regularizer::Schatten { p, m, t } => spectral::schatten_dual(g, *p, *m, *t),
            Regularizer::MaxNorm { m, t, .. } => {
                self.check_sign_cap()?;
                sign_matrix::best_sign_pair(g, *m, *t).0
            }
            Regularizer::Atomic { atoms } => atomic::best_atom(atoms, g).1.max(0.0),
        })
    }

    /// `argmin_x ½‖x − v‖² + τ Ψ(x)`.
    pub fn prox(&self, v: ArrayView1<f64>, tau: f64) -> Result<Array1<f64>> {
        self.check_dim(v.len())?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("prox step must be positive and finite, got {tau}")));
        }
        Ok(match self {
            Regularizer::L1 | Regularizer::MmpCone(Cone::NonnegOrthant) => lp::soft_threshold(v, tau),
            Regularizer::Lp { p } => lp::prox_lp(v, *p, tau),
            Regularizer::Slope { weights } => sorted::slope_prox(weights, v, tau),
            Regularizer::MmpCone(Cone::GroupPartition { groups }) => {
                let mut out = Array1::zeros(v.len());
                for g in groups {
                    let block = Array1::from_iter(g.iter().map(|&j| v[j]));
                    let shrunk = lp::block_shrink(block.view(), tau * (g.len() as f64).sqrt());
                    for (&j, x) in g.iter().zip(shrunk) {
                        out[j] = x;
                    }
                }
                out
            }
            Regularizer::Schatten { p, m, t } => spectral::schatten_prox(v, *p, *m, *t, tau),
            Regularizer::WeakLp { .. } | Regularizer::MaxNorm { .. } | Regularizer::Atomic { .. } => {
                return Err(self.unsupported("proximal map"))
            }
        })
    }

    /// A maximizer of `⟨g, t⟩` over `{Ψ(t) ≤ radius}`; ties go to the lowest index.
    pub fn lmo(&self, g: ArrayView1<f64>, radius: f64) -> Result<Array1<f64>> {
        self.check_dim(g.len())?;
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(invalid(format!("radius must be nonnegative and finite, got {radius}")));
        }
        Ok(match self {
            Regularizer::L1 | Regularizer::MmpCone(Cone::NonnegOrthant) => lp::lmo_lp(g, 1.0, radius),
            Regularizer::Lp { p } => lp::lmo_lp(g, *p, radius),
            Regularizer::WeakLp { p, .. } => sorted::weak_lp_lmo(*p, g, radius),
            Regularizer::Slope { weights } => sorted::slope_lmo(weights, g, radius),
            Regularizer::MmpCone(Cone::GroupPartition { groups }) => {
                let mut best: Option<(f64, &Vec<usize>)> = None;
                for grp in groups {
                    let score = (grp.iter().map(|&j| g[j] * g[j]).sum::<f64>() / grp.len() as f64).sqrt();
                    if score > 0.0 && best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, grp));
                    }
                }
                let mut out = Array1::zeros(g.len());
                if let Some((score, grp)) = best {
                    let scale = radius / (score * grp.len() as f64);
                    for &j in grp {
                        out[j] = g[j] * scale;
                    }
                }
                out
            }
            Regularizer::Schatten { p, m, t } => spectral::schatten_lmo(g, *p, *m, *t, radius),
            Regularizer::MaxNorm { m, t, .. } => {
                self.check_sign_cap()?;
                let (_, u, v) = sign_matrix::best_sign_pair(g, *m, *t);
                sign_matrix::outer(&u, &v) * radius
            }
            Regularizer::Atomic { atoms } => atomic::atomic_lmo(atoms, g, radius),
        })
    }

    /// Support function of the unit ball, `sup{⟨g, t⟩ : Ψ(t) ≤ 1}`, through the
    /// dual norm when one is available and through the oracle otherwise.
    pub fn support(&self, g: ArrayView1<f64>) -> Result<f64> {
        match self.dual_norm(g) {
            Err(Error::Unsupported { .. }) => Ok(g.dot(&self.lmo(g, 1.0)?)),
            other => other,
        }
    }

    /// Euclidean projection onto `{Ψ ≤ radius}`.
    ///
    /// Available for prox-capable penalties and for weak-`ℓp`, whose ball is
    /// not convex but still has an explicit nearest-point map.
    pub fn project(&self, v: ArrayView1<f64>, radius: f64) -> Result<Array1<f64>> {
        self.check_dim(v.len())?;
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(invalid(format!("radius must be nonnegative and finite, got {radius}")));
        }
        match self {
            Regularizer::WeakLp { p, .. } => return Ok(sorted::weak_lp_projection(*p, v, radius)),
            Regularizer::MaxNorm { .. } | Regularizer::Atomic { .. } => return Err(self.unsupported("projection")),
            Regularizer::L1 | Regularizer::MmpCone(Cone::NonnegOrthant) => return Ok(lp::project_l1_ball(v, radius)),
            Regularizer::Lp { p } => return Ok(lp::project_lq_ball(v, *p, radius)),
            Regularizer::Schatten { p, m, t } => return Ok(spectral::schatten_projection(v, *p, *m, *t, radius)),
            _ => {}
        }
        if self.value(v)? <= radius {
            return Ok(v.to_owned());
        }
        if radius == 0.0 {
            return Ok(Array1::zeros(v.len()));
        }
        // Ψ(prox_{θΨ}(v)) decreases in θ and vanishes once θ ≥ Ψ*(v).
        let (mut lo, mut hi) = (0.0, self.dual_norm(v)?);
        let mut best = Array1::zeros(v.len());
        for _ in 0..200 {
            if hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let candidate = self.prox(v, mid)?;
            if self.value(candidate.view())? <= radius {
                hi = mid;
                best = candidate;
            } else {
                lo = mid;
            }
        }
        Ok(best)
    }

    /// Closed-form Gaussian mean-width of the unit ball for `shape`, with
    /// every absolute constant set to one. Atomic gauges fall back to a
    /// fixed-seed Monte Carlo estimate.
    pub fn mean_width_formula(&self, shape: &Shape) -> Result<WidthEstimate> {
        self.check_shape(shape)?;
        let d = shape.dim();
        let df = d as f64;
        let needs_log = !matches!(
            self,
            Regularizer::Schatten { .. } | Regularizer::MaxNorm { .. } | Regularizer::Atomic { .. }
        );
        if needs_log && d < 2 {
            return Err(invalid(format!("width formula needs dimension ≥ 2, got {d}")));
        }
        let log_ed = (std::f64::consts::E * df).ln();
        let est = match self {
            Regularizer::L1 => WidthEstimate::closed_form(log_ed.sqrt(), "sqrt(log(e d))"),
            Regularizer::Lp { p } => {
                if *p <= 1.0 + 1.0 / df.ln() {
                    WidthEstimate::closed_form(log_ed.sqrt(), "sqrt(log(e d))")
                } else {
                    let value = if p.is_infinite() { df } else { (p / (p - 1.0)).sqrt() * df.powf((p - 1.0) / p) };
                    WidthEstimate::closed_form(value, "sqrt(p/(p-1)) d^((p-1)/p)")
                }
            }
            Regularizer::WeakLp { p, .. } => {
                if *p < 1.0 {
                    WidthEstimate::closed_form(df.ln().sqrt() / (1.0 - p), "sqrt(log d)/(1-p)")
                } else {
                    WidthEstimate::closed_form(df.ln().powf(1.5), "(log d)^(3/2)")
                }
            }
            Regularizer::Slope { weights } => {
                let value = weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| (std::f64::consts::E * df / (j + 1) as f64).ln().sqrt() / w)
                    .fold(0.0, f64::max);
                WidthEstimate::closed_form(value, "max_j sqrt(log(e d/j))/lambda_j")
            }
            Regularizer::MmpCone(cone) => {
                let (extreme, m) = match cone {
                    Cone::NonnegOrthant => (d, 1.0),
                    Cone::GroupPartition { groups } => {
                        let smallest = groups.iter().map(Vec::len).min().expect("validated");
                        (groups.len(), 1.0 / (smallest as f64).sqrt())
                    }
                };
                if extreme == 1 {
                    WidthEstimate::closed_form(1.0, "1 (single extreme point)")
                } else {
                    WidthEstimate::closed_form(m * (2.0 * (extreme as f64).ln()).sqrt(), "M sqrt(2 log|Ex|)")
                }
            }
            Regularizer::Schatten { p, m, t } => {
                let k = (*m).min(*t) as f64;
                let exponent = if p.is_infinite() { 1.0 } else { 1.0 - 1.0 / p };
                WidthEstimate::closed_form(
                    k.powf(exponent) * ((m + t) as f64).sqrt(),
                    "min(m,T)^(1-1/p) sqrt(m+T)",
                )
            }
            Regularizer::MaxNorm { m, t, .. } => {
                WidthEstimate::closed_form(((m * t * (m + t)) as f64).sqrt(), "sqrt(m T (m+T))")
            }
            Regularizer::Atomic { .. } => {
                monte_carlo_width(self, shape, ATOMIC_WIDTH_SAMPLES, ATOMIC_WIDTH_SEED, None)?
            }
        };
        Ok(est)
    }
}

/// Monte Carlo estimate of `E sup_{Ψ(t) ≤ 1} ⟨Σ^{1/2} G, t⟩` for standard Gaussian `G`.
///
/// Draws are split into fixed-size chunks, chunk `k` using stream `k` of a
/// generator seeded with `seed`, so the estimate does not depend on how
/// chunks are scheduled across threads.
pub fn monte_carlo_width(
    reg: &Regularizer,
    shape: &Shape,
    samples: usize,
    seed: u64,
    sqrt_sigma: Option<&Array2<f64>>,
) -> Result<WidthEstimate> {
    reg.check_shape(shape)?;
    if samples < 2 {
        return Err(invalid("Monte Carlo width needs at least two samples"));
    }
    let d = shape.dim();
    if let Some(root) = sqrt_sigma {
        if root.dim() != (d, d) {
            return Err(mismatch(format!("covariance root must be {d}×{d}")));
        }
    }
    let chunks = samples.div_ceil(WIDTH_CHUNK);
    let partial: Vec<Result<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let count = WIDTH_CHUNK.min(samples - k * WIDTH_CHUNK);
            let mut g = Array1::zeros(d);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                g.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
                let value = match sqrt_sigma {
                    Some(root) => reg.support(matvec(root.view(), g.view()).view())?,
                    None => reg.support(g.view())?,
                };
                sum += value;
                sum_sq += value * value;
            }
            Ok((sum, sum_sq))
        })
        .collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for part in partial {
        let (s, q) = part?;
        sum += s;
        sum_sq += q;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(WidthEstimate {
        value: mean,
        method: WidthMethod::MonteCarlo { samples, stderr: (var / n).sqrt() },
        convention: WIDTH_CONVENTION.to_string(),
    })
}

/// Benjamini–Hochberg type SLOPE weights `λ_i = Φ^{-1}(1 − i q / (2d))`.
pub fn slope_weights_bhq(d: usize, q: f64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("q must lie in (0, 1), got {q}")));
    }
    let normal = Normal::standard();
    let weights: Vec<f64> = (1..=d)
        .map(|i| normal.inverse_cdf(1.0 - i as f64 * q / (2.0 * d as f64)))
        .collect();
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("weights are not all positive"));
    }
    Ok(weights)
}

/// Reads one weight per row.
pub fn read_weights_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    Ok(read_rows(reader)?.into_iter().flatten().collect())
}

/// Reads one atom per row.
pub fn read_atoms_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    read_rows(reader)
}

pub fn load_weights_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_weights_csv(std::fs::File::open(path)?)
}

pub fn load_atoms_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    read_atoms_csv(std::fs::File::open(path)?)
}

fn read_rows<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record?;
        let row = record
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|e| invalid(format!("bad number {f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Exponents in `[1, ∞]` with `∞` written as `"inf"`.
mod exponent {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(p) => Ok(p),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}
