//! Synthetic problem generation and population-level error evaluation.
//!
//! An instance stores the design matrix row-major (one sample per row) and
//! carries the shape of the unknown; matrix unknowns are flattened row-major
//! into vectors of length `m·T`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg;

const DESIGN_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Ambient shape of the unknown parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Vector { d: usize },
    Matrix { m: usize, t: usize },
}

impl Shape {
    pub fn vector(d: usize) -> Self {
        Shape::Vector { d }
    }

    pub fn matrix(m: usize, t: usize) -> Self {
        Shape::Matrix { m, t }
    }

    /// Ambient dimension `D` (`d` or `m·T`).
    pub fn dim(&self) -> usize {
        match *self {
            Shape::Vector { d } => d,
            Shape::Matrix { m, t } => m * t,
        }
    }

    pub fn as_matrix(&self) -> Option<(usize, usize)> {
        match *self {
            Shape::Matrix { m, t } => Some((m, t)),
            Shape::Vector { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(invalid("shape must have ambient dimension at least 1"));
        }
        Ok(())
    }
}

/// Law of a single design vector `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum DesignLaw {
    GaussianIsotropic,
    Rademacher,
    /// Independent Student-t coordinates rescaled to unit variance.
    StudentT { dof: f64 },
    /// Centered Gaussian with covariance `Σ` (row-major `D × D`).
    ExplicitCovariance { sigma: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(flatten)]
    pub law: DesignLaw,
    pub shape: Shape,
}

impl DesignSpec {
    pub fn new(law: DesignLaw, shape: Shape) -> Result<Self> {
        let spec = DesignSpec { law, shape };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(shape: Shape) -> Self {
        DesignSpec {
            law: DesignLaw::GaussianIsotropic,
            shape,
        }
    }

    pub fn rademacher(shape: Shape) -> Self {
        DesignSpec {
            law: DesignLaw::Rademacher,
            shape,
        }
    }

    pub fn student_t(shape: Shape, dof: f64) -> Result<Self> {
        Self::new(DesignLaw::StudentT { dof }, shape)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        let dim = self.shape.dim();
        match &self.law {
            DesignLaw::StudentT { dof } if !(*dof > 2.0) => Err(invalid(format!(
                "student-t design needs dof > 2 for a finite covariance, got {dof}"
            ))),
            DesignLaw::ExplicitCovariance { sigma } => {
                if sigma.len() != dim || sigma.iter().any(|row| row.len() != dim) {
                    return Err(mismatch(format!("covariance must be {dim}×{dim}")));
                }
                for i in 0..dim {
                    for j in 0..i {
                        let (a, b) = (sigma[i][j], sigma[j][i]);
                        if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                            return Err(invalid("covariance must be symmetric"));
                        }
                    }
                }
                let eig = linalg::symmetric_eigenvalues(&Array2::from_shape_fn((dim, dim), |(i, j)| sigma[i][j]));
                let scale = eig.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                if eig.iter().any(|&v| v < -1e-10 * scale) {
                    return Err(invalid("covariance must be positive semidefinite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Covariance of the law, `None` meaning the identity.
    pub fn covariance(&self) -> Option<Array2<f64>> {
        match &self.law {
            DesignLaw::ExplicitCovariance { sigma } => {
                let d = sigma.len();
                Some(Array2::from_shape_fn((d, d), |(i, j)| sigma[i][j]))
            }
            _ => None,
        }
    }

    pub fn is_isotropic(&self) -> bool {
        !matches!(self.law, DesignLaw::ExplicitCovariance { .. })
    }

    /// Draws `n` i.i.d. design vectors as the rows of an `n × D` matrix.
    pub fn sample<R: RngExt + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let dim = self.shape.dim();
        match &self.law {
            DesignLaw::GaussianIsotropic => Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal)),
            DesignLaw::Rademacher => {
                Array2::from_shape_simple_fn((n, dim), || if rng.random::<bool>() { 1.0 } else { -1.0 })
            }
            DesignLaw::StudentT { dof } => {
                let law = StudentT::new(*dof).expect("validated dof");
                let unit = ((dof - 2.0) / dof).sqrt();
                Array2::from_shape_simple_fn((n, dim), || unit * law.sample(rng))
            }
            DesignLaw::ExplicitCovariance { .. } => {
                let root = linalg::psd_sqrt(&self.covariance().expect("explicit covariance"));
                let z: Array2<f64> = Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal));
                z.dot(&root)
            }
        }
    }
}

/// Law of the additive noise `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum NoiseLaw {
    Gaussian,
    /// Student-t rescaled to unit variance, then multiplied by `scale`.
    StudentT { dof: f64 },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
struct NoiseSpecRaw {
    #[serde(flatten)]
    law: NoiseLaw,
    #[serde(default)]
    scale: f64,
    #[serde(default = "default_q")]
    q: f64,
}

fn default_q() -> f64 {
    4.0
}

/// Noise specification; `sigma_q = ‖ξ‖_{L_q}` is derived, never supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseSpecRaw")]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub law: NoiseLaw,
    pub scale: f64,
    pub q: f64,
    pub sigma_q: f64,
}

impl TryFrom<NoiseSpecRaw> for NoiseSpec {
    type Error = Error;

    fn try_from(raw: NoiseSpecRaw) -> Result<Self> {
        NoiseSpec::new(raw.law, raw.scale, raw.q)
    }
}

impl NoiseSpec {
    pub fn new(law: NoiseLaw, scale: f64, q: f64) -> Result<Self> {
        if !(q > 2.0) {
            return Err(invalid(format!("moment order q must exceed 2, got {q}")));
        }
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(invalid(format!("noise scale must be finite and nonnegative, got {scale}")));
        }
        let sigma_q = match law {
            NoiseLaw::None => {
                if scale != 0.0 {
                    return Err(invalid("noise law `none` requires scale 0"));
                }
                0.0
            }
            NoiseLaw::Gaussian => scale * gaussian_abs_moment(q).powf(1.0 / q),
            NoiseLaw::StudentT { dof } => {
                if !(dof > q) {
                    return Err(invalid(format!(
                        "student-t noise with dof {dof} has no finite moment of order q = {q}; \
                         the L_q assumption on the noise would be violated"
                    )));
                }
                scale * unit_student_t_abs_moment(dof, q).powf(1.0 / q)
            }
        };
        Ok(NoiseSpec {
            law,
            scale,
            q,
            sigma_q,
        })
    }

    pub fn gaussian(scale: f64) -> Self {
        Self::new(NoiseLaw::Gaussian, scale, default_q()).expect("valid gaussian noise")
    }

    pub fn none() -> Self {
        Self::new(NoiseLaw::None, 0.0, default_q()).expect("valid noise-free spec")
    }

    pub fn is_noise_free(&self) -> bool {
        matches!(self.law, NoiseLaw::None) || self.scale == 0.0
    }

    fn sample<R: RngExt + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.law {
            NoiseLaw::None => 0.0,
            NoiseLaw::Gaussian => self.scale * rng.sample::<f64, _>(StandardNormal),
            NoiseLaw::StudentT { dof } => {
                let unit = ((dof - 2.0) / dof).sqrt();
                self.scale * unit * StudentT::new(dof).expect("validated dof").sample(rng)
            }
        }
    }
}

/// `E|g|^q` for a standard Gaussian.
pub fn gaussian_abs_moment(q: f64) -> f64 {
    (0.5 * q * std::f64::consts::LN_2 + ln_gamma(0.5 * (q + 1.0)) - 0.5 * std::f64::consts::PI.ln()).exp()
}

/// `E|T|^q` for a Student-t with `dof` degrees of freedom rescaled to unit variance.
pub fn unit_student_t_abs_moment(dof: f64, q: f64) -> f64 {
    let raw = 0.5 * q * dof.ln() + ln_gamma(0.5 * (q + 1.0)) + ln_gamma(0.5 * (dof - q))
        - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma(0.5 * dof);
    let variance = dof / (dof - 2.0);
    (raw - 0.5 * q * variance.ln()).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetKind {
    /// The first `s` coordinates equal `magnitude`, the rest vanish.
    Sparse { s: usize, magnitude: f64 },
    /// Every coordinate equals `rho / D`, so `‖t*‖₁ = rho`.
    DenseSpread { rho: f64 },
    /// `scale · Σ_k u_k v_kᵀ` with Gaussian factors of unit expected norm.
    LowRank { rank: usize, scale: f64 },
    /// `Y = ⟨X,t0⟩ + curvature·(⟨X,t0⟩² − E⟨X,t0⟩²) + ξ`. For the symmetric
    /// design laws offered here the best linear predictor is still `t0`.
    MisspecifiedQuadratic { curvature: f64 },
}

/// Generating target: its kind plus the materialized linear oracle `t*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    #[serde(flatten)]
    pub kind: TargetKind,
    pub t_star: Vec<f64>,
}

impl TargetSpec {
    pub fn sparse(shape: Shape, s: usize, magnitude: f64) -> Result<Self> {
        let dim = shape.dim();
        if s == 0 || s > dim {
            return Err(invalid(format!("support size {s} must lie in 1..={dim}")));
        }
        if magnitude == 0.0 || !magnitude.is_finite() {
            return Err(invalid("sparse target magnitude must be finite and nonzero"));
        }
        let t_star = (0..dim).map(|j| if j < s { magnitude } else { 0.0 }).collect();
        Ok(TargetSpec {
            kind: TargetKind::Sparse { s, magnitude },
            t_star,
        })
    }

    pub fn dense_spread(shape: Shape, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(invalid("dense target budget must be finite and nonnegative"));
        }
        let dim = shape.dim();
        Ok(TargetSpec {
            kind: TargetKind::DenseSpread { rho },
            t_star: vec![rho / dim as f64; dim],
        })
    }

    pub fn low_rank(shape: Shape, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        let (m, t) = shape
            .as_matrix()
            .ok_or_else(|| mismatch("low-rank targets need a matrix shape"))?;
        if rank == 0 || rank > m.min(t) {
            return Err(invalid(format!("rank {rank} must lie in 1..={}", m.min(t))));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::<f64>::zeros((m, t));
        for _ in 0..rank {
            let u: Array1<f64> = Array1::from_shape_simple_fn(m, || rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt());
            let v: Array1<f64> = Array1::from_shape_simple_fn(t, || rng.sample::<f64, _>(StandardNormal) / (t as f64).sqrt());
            for i in 0..m {
                for j in 0..t {
                    a[[i, j]] += scale * u[i] * v[j];
                }
            }
        }
        Ok(TargetSpec {
            kind: TargetKind::LowRank { rank, scale },
            t_star: a.iter().copied().collect(),
        })
    }

    pub fn misspecified_quadratic(t0: Vec<f64>, curvature: f64) -> Self {
        TargetSpec {
            kind: TargetKind::MisspecifiedQuadratic { curvature },
            t_star: t0,
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, TargetKind::MisspecifiedQuadratic { .. })
    }

    pub fn t_star(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.t_star)
    }

    fn validate(&self) -> Result<()> {
        if let TargetKind::Sparse { s, .. } = self.kind {
            let nnz = self.t_star.iter().filter(|v| **v != 0.0).count();
            if nnz != s {
                return Err(invalid(format!("sparse target declares {s} nonzeros but carries {nnz}")));
            }
        }
        if let TargetKind::DenseSpread { .. } = self.kind {
            let first = self.t_star.first().map(|v| v.abs()).unwrap_or(0.0);
            if self.t_star.iter().any(|v| v.abs() != first) {
                return Err(invalid("dense-spread target must have equal magnitudes"));
            }
        }
        if self.t_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target contains non-finite entries".into()));
        }
        Ok(())
    }
}

/// A sample `(X_i, Y_i)_{i≤N}` together with the specification that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub design: DesignSpec,
    pub target: TargetSpec,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl ProblemInstance {
    pub fn shape(&self) -> Shape {
        self.design.shape
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn t_star(&self) -> ArrayView1<'_, f64> {
        self.target.t_star()
    }

    /// Builds an instance from externally supplied data.
    pub fn from_parts(
        design: DesignSpec,
        target: TargetSpec,
        noise: NoiseSpec,
        seed: u64,
        x: Array2<f64>,
        y: Array1<f64>,
    ) -> Result<Self> {
        design.validate()?;
        target.validate()?;
        let dim = design.shape.dim();
        if x.ncols() != dim || target.t_star.len() != dim {
            return Err(mismatch(format!(
                "design has {} columns and target {} entries, shape needs {dim}",
                x.ncols(),
                target.t_star.len()
            )));
        }
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(mismatch(format!("{} design rows but {} responses", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("instance data contains NaN or infinity".into()));
        }
        Ok(ProblemInstance {
            design,
            target,
            noise,
            seed,
            x,
            y,
        })
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            shape: self.design.shape,
            design: self.design.clone(),
            target: self.target.clone(),
            noise: self.noise,
            n: self.n(),
            seed: self.seed,
            x: self.x.iter().copied().collect(),
            y: self.y.to_vec(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<InstanceRecord>(s)?.into_instance()
    }
}

/// Serialized form of an instance; `X` is flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub shape: Shape,
    pub design: DesignSpec,
    pub target: TargetSpec,
    pub noise: NoiseSpec,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    #[serde(rename = "Y")]
    pub y: Vec<f64>,
}

impl InstanceRecord {
    pub fn into_instance(self) -> Result<ProblemInstance> {
        if self.shape != self.design.shape {
            return Err(mismatch("record shape disagrees with the design shape"));
        }
        let dim = self.shape.dim();
        let x = Array2::from_shape_vec((self.n, dim), self.x)
            .map_err(|e| mismatch(format!("X does not hold N×D = {}×{dim} values: {e}", self.n)))?;
        ProblemInstance::from_parts(self.design, self.target, self.noise, self.seed, x, Array1::from(self.y))
    }
}

/// Draws `N` samples from the design law and forms the responses.
///
/// Design rows and noise come from two independent ChaCha streams of the same
/// seed, so instances that differ only in their target share `X` and `ξ`.
pub fn generate_dataset(
    design: &DesignSpec,
    target: &TargetSpec,
    noise: &NoiseSpec,
    n: usize,
    seed: u64,
) -> Result<ProblemInstance> {
    design.validate()?;
    target.validate()?;
    let dim = design.shape.dim();
    if target.t_star.len() != dim {
        return Err(mismatch(format!(
            "target has {} entries but the design shape has dimension {dim}",
            target.t_star.len()
        )));
    }
    if let TargetKind::LowRank { .. } = target.kind {
        if design.shape.as_matrix().is_none() {
            return Err(mismatch("low-rank targets need a matrix-shaped design"));
        }
    }
    if n == 0 {
        return Err(invalid("sample size N must be at least 1"));
    }
    if let NoiseLaw::StudentT { dof } = noise.law {
        if !(dof > noise.q) {
            return Err(invalid(format!("student-t noise dof {dof} must exceed q = {}", noise.q)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DESIGN_STREAM);
    let x = design.sample(n, &mut rng);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(NOISE_STREAM);

    let t_star = target.t_star();
    let signal = linalg::matvec(x.view(), t_star);
    let y = match target.kind {
        TargetKind::MisspecifiedQuadratic { curvature } => {
            let energy = match design.covariance() {
                Some(sigma) => linalg::quad_form(&sigma, t_star),
                None => t_star.dot(&t_star),
            };
            signal.mapv(|s| s + curvature * (s * s - energy) + noise.sample(&mut noise_rng))
        }
        _ => signal.mapv(|s| s + noise.sample(&mut noise_rng)),
    };

    Ok(ProblemInstance {
        design: design.clone(),
        target: target.clone(),
        noise: *noise,
        seed,
        x,
        y,
    })
}

/// `E⟨X, t̂ − t*⟩²` under the design law.
pub fn population_error(t_hat: ArrayView1<f64>, t_star: ArrayView1<f64>, design: &DesignSpec) -> Result<f64> {
    if t_hat.len() != t_star.len() || t_hat.len() != design.shape.dim() {
        return Err(mismatch(format!(
            "estimate has {} entries, target {}, design dimension {}",
            t_hat.len(),
            t_star.len(),
            design.shape.dim()
        )));
    }
    let diff = &t_hat - &t_star;
    let value = match design.covariance() {
        Some(sigma) => linalg::quad_form(&sigma, diff.view()),
        None => diff.dot(&diff),
    };
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn shape(d: usize) -> Shape {
        Shape::vector(d)
    }

    #[test]
    fn generation_is_seeded() {
        let design = DesignSpec::gaussian(shape(5));
        let target = TargetSpec::sparse(shape(5), 2, 1.5).unwrap();
        let noise = NoiseSpec::gaussian(0.3);
        let a = generate_dataset(&design, &target, &noise, 20, 7).unwrap();
        let b = generate_dataset(&design, &target, &noise, 20, 7).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_dataset(&design, &target, &noise, 20, 8).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn noise_free_response_is_exact() {
        let design = DesignSpec::student_t(shape(4), 5.0).unwrap();
        let target = TargetSpec::sparse(shape(4), 1, 1.0).unwrap();
        let inst = generate_dataset(&design, &target, &NoiseSpec::none(), 50, 3).unwrap();
        for i in 0..50 {
            assert_eq!(inst.y[i], inst.x[[i, 0]]);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let design = DesignSpec::gaussian(shape(5));
        let target = TargetSpec::sparse(shape(4), 1, 1.0).unwrap();
        assert!(matches!(
            generate_dataset(&design, &target, &NoiseSpec::none(), 10, 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn heavy_noise_without_q_moment_is_refused() {
        let err = NoiseSpec::new(NoiseLaw::StudentT { dof: 3.0 }, 1.0, 4.0).unwrap_err();
        assert!(err.to_string().contains("no finite moment"));
        assert!(NoiseSpec::new(NoiseLaw::StudentT { dof: 5.0 }, 1.0, 4.0).is_ok());
        assert!(NoiseSpec::new(NoiseLaw::None, 1.0, 4.0).is_err());
    }

    #[test]
    fn sigma_q_matches_closed_forms() {
        // E g^4 = 3
        let n = NoiseSpec::new(NoiseLaw::Gaussian, 2.0, 4.0).unwrap();
        assert_relative_eq!(n.sigma_q, 2.0 * 3f64.powf(0.25), epsilon = 1e-12);
        // unit-variance t(6): E T^4 = 3 (ν-2)/(ν-4) = 6
        let t = NoiseSpec::new(NoiseLaw::StudentT { dof: 6.0 }, 1.0, 4.0).unwrap();
        assert_relative_eq!(t.sigma_q, 6f64.powf(0.25), epsilon = 1e-10);
        // second moment of the unit-variance law is 1
        assert_relative_eq!(unit_student_t_abs_moment(7.5, 2.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(gaussian_abs_moment(2.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_design_is_isotropic() {
        let design = DesignSpec::gaussian(shape(10));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = design.sample(100_000, &mut rng);
        let cov = x.t().dot(&x) / 100_000.0;
        for i in 0..10 {
            for j in 0..10 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((cov[[i, j]] - expected).abs() < 0.05, "entry ({i},{j}) = {}", cov[[i, j]]);
            }
        }
    }

    #[test]
    fn gaussian_coordinate_moments_converge() {
        let design = DesignSpec::gaussian(shape(2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = design.sample(1_000_000, &mut rng);
        for q in [2.0, 3.0, 4.0, 5.0, 6.0] {
            for col in x.columns() {
                let emp = col.iter().map(|v| v.abs().powf(q)).sum::<f64>() / col.len() as f64;
                let exact = gaussian_abs_moment(q);
                assert!(((emp - exact) / exact).abs() < 0.05, "q = {q}: {emp} vs {exact}");
            }
        }
    }

    #[test]
    fn student_t_design_has_unit_variance() {
        let design = DesignSpec::student_t(shape(1), 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = design.sample(400_000, &mut rng);
        let var = x.iter().map(|v| v * v).sum::<f64>() / 400_000.0;
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn population_error_cases() {
        let design = DesignSpec::gaussian(shape(3));
        let t = array![1.0, -2.0, 0.5];
        assert_eq!(population_error(t.view(), t.view(), &design).unwrap(), 0.0);
        let s = array![0.0, 0.0, 0.0];
        assert_relative_eq!(population_error(t.view(), s.view(), &design).unwrap(), 5.25);

        let cov = DesignSpec::new(
            DesignLaw::ExplicitCovariance {
                sigma: vec![vec![4.0, 0.0], vec![0.0, 1.0]],
            },
            shape(2),
        )
        .unwrap();
        let u = array![1.0, 1.0];
        let zero = array![0.0, 0.0];
        assert_relative_eq!(population_error(u.view(), zero.view(), &cov).unwrap(), 5.0);
        assert!(population_error(u.view(), t.view(), &cov).is_err());
    }

    #[test]
    fn explicit_covariance_quadratic_form_matches_monte_carlo() {
        let cov = DesignSpec::new(
            DesignLaw::ExplicitCovariance {
                sigma: vec![vec![4.0, 0.0], vec![0.0, 1.0]],
            },
            shape(2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = cov.sample(200_000, &mut rng);
        let mc = x.rows().into_iter().map(|r| (r[0] + r[1]).powi(2)).sum::<f64>() / 200_000.0;
        assert!((mc - 5.0).abs() < 0.1, "monte carlo {mc}");
    }

    #[test]
    fn covariance_must_be_psd() {
        let bad = DesignSpec::new(
            DesignLaw::ExplicitCovariance {
                sigma: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            },
            shape(2),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn misspecified_target_keeps_linear_projection() {
        let design = DesignSpec::gaussian(shape(3));
        let target = TargetSpec::misspecified_quadratic(vec![1.0, 0.0, -0.5], 0.7);
        let inst = generate_dataset(&design, &target, &NoiseSpec::none(), 200_000, 2).unwrap();
        // least squares on a large sample recovers t0
        let sol = linalg::least_squares(inst.x.view(), inst.y.view());
        assert!((sol[0] - 1.0).abs() < 0.03 && sol[1].abs() < 0.03 && (sol[2] + 0.5).abs() < 0.03);
        assert!(!target.is_linear());
    }

    #[test]
    fn instance_json_round_trip() {
        let shape = Shape::matrix(2, 3);
        let design = DesignSpec::gaussian(shape);
        let target = TargetSpec::low_rank(shape, 1, 2.0, 4).unwrap();
        let noise = NoiseSpec::new(NoiseLaw::StudentT { dof: 7.0 }, 0.5, 3.0).unwrap();
        let inst = generate_dataset(&design, &target, &noise, 6, 99).unwrap();
        let json = inst.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["shape", "design", "target", "noise", "N", "seed", "X", "Y"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(ProblemInstance::from_json(&json).unwrap(), inst);
    }
}
