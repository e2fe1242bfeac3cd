use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use statrs::distribution::{ContinuousCDF, Normal};

use super::*;
use crate::model::{generate_dataset, DesignLaw, NoiseSpec, TargetSpec};
use crate::regularizers::slope_weights_bhq;

fn constants(alpha: f64, beta: Option<f64>) -> CalibrationConstants {
    CalibrationConstants { alpha, beta, gamma: 1.0, theta: 1.0, tau: 1.0, c_user: 1.0 }
}

fn within_stderr(est: &WidthEstimate, truth: f64) {
    let se = est.stderr().expect("monte carlo estimate");
    assert!((est.value - truth).abs() <= 3.0 * se, "{} vs {truth} (stderr {se})", est.value);
}

#[test]
fn constants_follow_their_definitions() {
    let c = CalibrationConstants::new(0.5, 0.6, 2.0, 2.0, 4.0).unwrap();
    assert_eq!(c.alpha, 0.5 * 0.6 / 4.0);
    assert_eq!(c.beta, Some(0.25 * 0.6 / 8.0));
    assert_eq!(c.gamma, 16.0);
    assert_eq!(c.theta, 0.25 * 0.6 / 16.0);
    assert_eq!(c.tau, 3.0 / 640.0);
    assert_eq!(CalibrationConstants::new(0.5, 0.6, 1.0, 0.0, 1.0).unwrap().beta, None);
    assert!(CalibrationConstants::new(0.0, 0.6, 1.0, 1.0, 1.0).is_err());
    assert!(CalibrationConstants::new(0.5, 1.5, 1.0, 1.0, 1.0).is_err());
    assert!(CalibrationConstants::new(0.5, 0.5, 0.5, 1.0, 1.0).is_err());
    assert!(CalibrationConstants::new(0.5, 0.5, 1.0, -1.0, 1.0).is_err());
}

#[test]
fn mc_width_examples() {
    let w = estimate_mean_width_mc(&Regularizer::lp(2.0).unwrap(), &Shape::vector(1), 40_000, 1).unwrap();
    within_stderr(&w, (2.0 / std::f64::consts::PI).sqrt());
    let w = estimate_mean_width_mc(&Regularizer::lp(f64::INFINITY).unwrap(), &Shape::vector(10), 40_000, 2).unwrap();
    within_stderr(&w, 10.0 * (2.0 / std::f64::consts::PI).sqrt());
    let w = estimate_mean_width_mc(&Regularizer::L1, &Shape::vector(1024), 4_000, 3).unwrap();
    let ratio = w.value / (2.0 * 1024f64.ln()).sqrt();
    assert!((0.7..=1.3).contains(&ratio), "{ratio}");
    let again = estimate_mean_width_mc(&Regularizer::L1, &Shape::vector(1024), 4_000, 3).unwrap();
    assert_eq!(w, again);
}

#[test]
fn design_width_whitens_explicit_covariance() {
    let shape = Shape::vector(2);
    let design = DesignSpec::new(
        DesignLaw::ExplicitCovariance { sigma: vec![vec![4.0, 0.0], vec![0.0, 0.0]] },
        shape,
    )
    .unwrap();
    // sup over the Euclidean ball of ⟨Σ^{1/2}G, t⟩ = 2|g₁|
    let w = estimate_mean_width_for_design(&Regularizer::lp(2.0).unwrap(), &design, 40_000, 4).unwrap();
    within_stderr(&w, 2.0 * (2.0 / std::f64::consts::PI).sqrt());
    let iso = estimate_mean_width_for_design(&Regularizer::L1, &DesignSpec::gaussian(shape), 1000, 5).unwrap();
    assert_eq!(iso, estimate_mean_width_mc(&Regularizer::L1, &shape, 1000, 5).unwrap());
}

#[test]
fn width_formulas_track_monte_carlo_across_dimensions() {
    let dims = [16usize, 64, 256, 1024];
    let kinds: Vec<(&str, Box<dyn Fn(usize) -> (Regularizer, Shape)>)> = vec![
        ("l1", Box::new(|d| (Regularizer::L1, Shape::vector(d)))),
        ("l1.5", Box::new(|d| (Regularizer::lp(1.5).unwrap(), Shape::vector(d)))),
        ("l2", Box::new(|d| (Regularizer::lp(2.0).unwrap(), Shape::vector(d)))),
        ("l4", Box::new(|d| (Regularizer::lp(4.0).unwrap(), Shape::vector(d)))),
        ("linf", Box::new(|d| (Regularizer::lp(f64::INFINITY).unwrap(), Shape::vector(d)))),
        ("weak-l0.5", Box::new(|d| (Regularizer::weak_lp(0.5, 4.0).unwrap(), Shape::vector(d)))),
        ("weak-l1", Box::new(|d| (Regularizer::weak_lp(1.0, 2.0).unwrap(), Shape::vector(d)))),
        ("slope", Box::new(|d| (Regularizer::slope(slope_weights_bhq(d, 0.1).unwrap()).unwrap(), Shape::vector(d)))),
        (
            "groups",
            Box::new(|d| {
                let groups = (0..d / 4).map(|g| (4 * g..4 * g + 4).collect()).collect();
                (Regularizer::groups(groups).unwrap(), Shape::vector(d))
            }),
        ),
        ("orthant", Box::new(|d| (Regularizer::MmpCone(crate::regularizers::Cone::NonnegOrthant), Shape::vector(d)))),
        (
            "nuclear",
            Box::new(|d| {
                let m = (d as f64).sqrt() as usize;
                (Regularizer::schatten(1.0, m, m).unwrap(), Shape::matrix(m, m))
            }),
        ),
        (
            "operator",
            Box::new(|d| {
                let m = (d as f64).sqrt() as usize;
                (Regularizer::schatten(f64::INFINITY, m, m).unwrap(), Shape::matrix(m, m))
            }),
        ),
    ];
    for (name, build) in kinds {
        let ratios: Vec<f64> = dims
            .iter()
            .map(|&d| {
                let (reg, shape) = build(d);
                let mc = estimate_mean_width_mc(&reg, &shape, 600, 7).unwrap();
                mc.value / reg.mean_width_formula(&shape).unwrap().value
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0_f64), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi / lo < 2.0, "{name}: ratios {ratios:?}");
    }
}

#[test]
fn fixed_point_examples() {
    let width_k = WidthEstimate::closed_form(1.0, "test");
    let width_e = WidthEstimate::closed_form(1.0, "test");
    let c = constants(1.0, Some(0.5));
    let zero = fixed_point_r(0.0, 100, &c, &width_k, &width_e).unwrap();
    assert_eq!(zero.r_squared, 0.0);
    let large = fixed_point_r(2.0, 100, &c, &width_k, &width_e).unwrap();
    assert!((large.r_squared - 0.4).abs() < 1e-15);
    assert_eq!(large.regime, Regime::LargeSample);

    // N = 100 < (ℓ*(E)/α)² = 400; Λ = 3, Λ²/α² = 9 > Λ/β = 6
    let wide_e = WidthEstimate::closed_form(20.0, "test");
    let small = fixed_point_r(30.0, 100, &constants(1.0, Some(0.5)), &width_k, &wide_e).unwrap();
    assert_eq!(small.regime, Regime::QuadraticDominated);
    assert!((small.r_squared - 9.0).abs() < 1e-12);
    let linear = fixed_point_r(1.0, 100, &constants(1.0, Some(0.5)), &width_k, &wide_e).unwrap();
    assert_eq!(linear.regime, Regime::LinearDominated);
    assert!((linear.r_squared - 0.2).abs() < 1e-15);

    let noiseless = fixed_point_r(2.0, 100, &constants(0.5, None), &width_k, &width_e).unwrap();
    assert_eq!(noiseless.regime, Regime::NoiseFree);
    assert!((noiseless.r_squared - 0.16).abs() < 1e-15);
    assert!(fixed_point_r(-1.0, 100, &c, &width_k, &width_e).is_err());
}

#[test]
fn fixed_point_is_monotone_on_grids() {
    let rhos: Vec<f64> = (0..40).map(|i| 0.25 * i as f64).collect();
    let ns: Vec<usize> = (1..60).map(|i| 10 * i).collect();
    for beta in [Some(0.3), Some(2.0), None] {
        let c = constants(0.4, beta);
        for &n in &ns {
            let map = FixedPointMap::new(n, &c, 3.0, 12.0).unwrap();
            let values: Vec<f64> = rhos.iter().map(|&r| map.evaluate(r).unwrap().r_squared).collect();
            assert!(values.windows(2).all(|w| w[0] <= w[1]));
        }
        for &rho in &rhos {
            let values: Vec<f64> = ns
                .iter()
                .map(|&n| FixedPointMap::new(n, &c, 3.0, 12.0).unwrap().evaluate(rho).unwrap().r_squared)
                .collect();
            assert!(values.windows(2).all(|w| w[1] <= w[0]), "rho {rho}: {values:?}");
        }
    }
}

#[test]
fn lambda_examples() {
    let shape = Shape::vector(100);
    let reg = Regularizer::L1;
    let unit = constants(1.0, Some(1.0));
    let zero = lambda_rerm(&reg, &shape, 25, 0.0, &unit, &LambdaTrack::MeanWidth).unwrap();
    assert_eq!(zero.lambda, 0.0);
    assert!(zero.noise_free);
    let mw = lambda_from_width(&reg, &shape, 400, 1.0, &unit, &LambdaTrack::MeanWidth, 2.0).unwrap();
    assert!((mw.lambda - 0.1).abs() < 1e-15);
    assert!(!mw.noise_free);
    let lm = lambda_rerm(&reg, &shape, 25, 1.0, &unit, &LambdaTrack::LimitedMoment { m: 1.0 }).unwrap();
    assert!((lm.lambda - (100f64.ln() / 25.0).sqrt()).abs() < 1e-15);
    assert!((lm.lambda - 0.429).abs() < 1e-3);
    let slope = Regularizer::slope(vec![1.0; 100]).unwrap();
    assert!(lambda_rerm(&slope, &shape, 25, 1.0, &unit, &LambdaTrack::LimitedMoment { m: 1.0 }).is_err());
}

#[test]
fn lambda_scales_with_eta_cubed() {
    let shape = Shape::vector(50);
    let reg = Regularizer::weak_lp(0.5, 2.0).unwrap();
    let unit = constants(1.0, Some(1.0));
    let a = lambda_from_width(&reg, &shape, 100, 1.0, &unit, &LambdaTrack::MeanWidth, 1.0).unwrap();
    assert!((a.lambda - 0.8).abs() < 1e-15);
}

proptest! {
    #[test]
    fn lambda_is_homogeneous_in_sigma(sigma in 0.0..10.0f64, c in 0.01..100.0f64, n in 1usize..10_000) {
        let shape = Shape::vector(64);
        let consts = constants(1.0, Some(1.0));
        for track in [LambdaTrack::MeanWidth, LambdaTrack::LimitedMoment { m: 1.3 }] {
            let base = lambda_rerm(&Regularizer::L1, &shape, n, sigma, &consts, &track).unwrap().lambda;
            let scaled = lambda_rerm(&Regularizer::L1, &shape, n, c * sigma, &consts, &track).unwrap().lambda;
            prop_assert!((scaled - c * base).abs() <= 1e-12 * scaled.abs().max(1e-300));
        }
    }
}

#[test]
fn calibration_result_round_trips_through_json() {
    let shape = Shape::vector(200);
    let consts = CalibrationConstants::gaussian(1.0).unwrap();
    let result = calibrate(&Regularizer::L1, &shape, 100, 1.0, &consts, &LambdaTrack::MeanWidth).unwrap();
    assert!((result.width_e.value - 200f64.sqrt()).abs() < 1e-12);
    assert!((result.lambda - result.width_k.value / 10.0).abs() < 1e-15);
    let back: CalibrationResult = serde_json::from_str(&result.to_json().unwrap()).unwrap();
    assert_eq!(back, result);
    let noise_free = calibrate(
        &Regularizer::L1,
        &shape,
        100,
        0.0,
        &CalibrationConstants::gaussian(0.0).unwrap(),
        &LambdaTrack::MeanWidth,
    )
    .unwrap();
    assert!(noise_free.noise_free && noise_free.lambda == 0.0);
    assert_eq!(noise_free.r_of_rho.evaluate(1.0).unwrap().regime, Regime::NoiseFree);
}

#[test]
fn small_ball_gaussian() {
    let report = estimate_small_ball(&DesignSpec::gaussian(Shape::vector(10)), 0.5, 50, 100_000, 8).unwrap();
    let truth = 2.0 * Normal::standard().cdf(-0.5);
    assert!((report.eps_hat - truth).abs() <= 0.02, "{}", report.eps_hat);
    assert_eq!(report.directions_tested, 50);
    assert!((norm2(Array1::from(report.min_direction.clone()).view()) - 1.0).abs() < 1e-12);
}

#[test]
fn small_ball_rademacher_along_a_coordinate() {
    let design = DesignSpec::rademacher(Shape::vector(4));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = design.sample(2000, &mut rng);
    let e1 = array![1.0, 0.0, 0.0, 0.0];
    for kappa in [0.1, 0.5, 1.0] {
        let report = small_ball_along(x.view(), std::slice::from_ref(&e1), kappa, Norming::Identity).unwrap();
        assert_eq!(report.eps_hat, 1.0);
    }
}

#[test]
fn small_ball_student_t_matches_an_independent_oracle() {
    let design = DesignSpec::student_t(Shape::vector(5), 3.0).unwrap();
    let report = estimate_small_ball(&design, 0.5, 10, 20_000, 10).unwrap();
    let dir = Array1::from(report.min_direction.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let oracle_x = design.sample(1_000_000, &mut rng);
    let oracle = small_ball_frequency(oracle_x.view(), dir.view(), 0.5, Norming::Identity).unwrap();
    assert!((report.eps_hat - oracle).abs() <= 0.02, "{} vs {oracle}", report.eps_hat);
}

#[test]
fn small_ball_excludes_degenerate_directions_and_checks_inputs() {
    let mut x = Array2::zeros((1000, 2));
    for (i, v) in x.column_mut(0).iter_mut().enumerate() {
        *v = if i % 2 == 0 { 1.0 } else { -1.0 };
    }
    let dirs = vec![array![0.0, 1.0], array![1.0, 0.0]];
    let report = small_ball_along(x.view(), &dirs, 0.5, Norming::Empirical).unwrap();
    assert_eq!(report.directions_excluded, 1);
    assert_eq!(report.directions_tested, 1);
    assert_eq!(report.min_direction, vec![1.0, 0.0]);
    assert!(small_ball_along(x.view(), &dirs[..1], 0.5, Norming::Empirical).is_err());
    assert!(small_ball_along(x.slice(ndarray::s![..999, ..]), &dirs, 0.5, Norming::Empirical).is_err());
    assert!(small_ball_along(x.view(), &dirs, 0.0, Norming::Empirical).is_err());
    let empirical = estimate_small_ball_from_samples(x.view(), 0.5, 5, 1).unwrap();
    assert!(empirical.eps_hat > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn small_ball_is_nonincreasing_in_kappa(seed in 0u64..1000, k1 in 0.01..1.0f64, k2 in 0.01..1.0f64) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let design = DesignSpec::student_t(Shape::vector(3), 5.0).unwrap();
        let a = estimate_small_ball(&design, lo, 8, 1000, seed).unwrap();
        let b = estimate_small_ball(&design, hi, 8, 1000, seed).unwrap();
        prop_assert!(b.eps_hat <= a.eps_hat);
    }
}

fn student_t_columns(n: usize, cols: usize, dof: f64, seed: u64) -> Array2<f64> {
    let law = StudentT::new(dof).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, cols), || law.sample(&mut rng))
}

#[test]
fn moment_grid_is_geometric() {
    let grid = moment_grid(8.0);
    assert_eq!(grid.len(), MOMENT_GRID_POINTS);
    assert_eq!(grid[0], 2.0);
    assert_eq!(*grid.last().unwrap(), 8.0);
    let r = grid[1] / grid[0];
    assert!(grid.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
    assert_eq!(moment_grid(2.0), vec![2.0]);
    assert!((default_p0(100, 2.0) - 2.0 * 100f64.ln()).abs() < 1e-15);
}

#[test]
fn rademacher_ratio_is_one_over_root_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = DesignSpec::rademacher(Shape::vector(3)).sample(5000, &mut rng);
    let report = moment_growth_diagnostic(x.view(), 8.0).unwrap();
    for r in &report.per_coordinate_ratio {
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }
    assert!(!report.violated);
    assert_eq!(report.m, 1.0);
    assert!(report.unreliable);
}

#[test]
fn gaussian_coordinates_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = DesignSpec::gaussian(Shape::vector(3)).sample(40_000, &mut rng);
    let report = moment_growth_diagnostic(x.view(), 8.0).unwrap();
    assert!(report.kappa0_hat <= 1.0 + 0.05, "{}", report.kappa0_hat);
    assert!(report.per_coordinate_ratio.iter().all(|&r| r >= 1.0 / 8f64.sqrt()));
    assert!(!report.violated, "{report:?}");
    assert!(!report.unreliable);
}

#[test]
fn heavy_tails_are_flagged() {
    for seed in 0..3 {
        let x = student_t_columns(20_000, 2, 4.0, 100 + seed);
        let report = moment_growth_diagnostic(x.view(), 6.0).unwrap();
        assert!(report.violated, "{report:?}");
        assert!(report.tail_index.iter().all(|&a| a < 6.0));
    }
}

#[test]
fn heavy_tail_ratio_grows_with_sample_size() {
    let small = moment_growth_diagnostic(student_t_columns(1_000, 1, 4.0, 14).view(), 6.0).unwrap();
    let large = moment_growth_diagnostic(student_t_columns(1_000_000, 1, 4.0, 14).view(), 6.0).unwrap();
    assert!(large.kappa0_hat > small.kappa0_hat, "{} vs {}", large.kappa0_hat, small.kappa0_hat);
}

#[test]
fn moment_diagnostic_rejects_bad_input() {
    let x = Array2::<f64>::zeros((10, 2));
    assert!(moment_growth_diagnostic(x.view(), 8.0).is_err());
    let x = student_t_columns(100, 1, 5.0, 1);
    assert!(moment_growth_diagnostic(x.view(), 1.0).is_err());
    let mut y = x.clone();
    y[[0, 0]] = f64::NAN;
    assert!(moment_growth_diagnostic(y.view(), 4.0).is_err());
}

fn noisy_instance(seed: u64) -> ProblemInstance {
    let shape = Shape::vector(8);
    let target = TargetSpec::sparse(shape, 2, 1.0).unwrap();
    generate_dataset(&DesignSpec::gaussian(shape), &target, &NoiseSpec::gaussian(0.7), 30, seed).unwrap()
}

#[test]
fn decomposition_examples() {
    let inst = noisy_instance(1);
    let zero = excess_loss_decomposition(&inst, inst.t_star(), inst.t_star()).unwrap();
    assert_eq!((zero.pn_q, zero.pn_m, zero.pn_l), (0.0, 0.0, 0.0));

    let shape = Shape::vector(8);
    let target = TargetSpec::sparse(shape, 2, 1.0).unwrap();
    let clean = generate_dataset(&DesignSpec::gaussian(shape), &target, &NoiseSpec::none(), 30, 2).unwrap();
    let t = Array1::from_elem(8, 0.3);
    let parts = excess_loss_decomposition(&clean, t.view(), clean.t_star()).unwrap();
    assert_eq!(parts.pn_m, 0.0);
    assert!(parts.pn_q >= 0.0 && parts.pn_l == parts.pn_q);
    assert!(excess_loss_decomposition(&clean, Array1::zeros(3).view(), clean.t_star()).is_err());
}

proptest! {
    #[test]
    fn decomposition_matches_direct_loss_difference(seed in 0u64..10_000, t in proptest::collection::vec(-3.0..3.0f64, 8)) {
        let inst = noisy_instance(seed);
        let t = Array1::from(t);
        let parts = excess_loss_decomposition(&inst, t.view(), inst.t_star()).unwrap();
        let n = inst.n() as f64;
        let r_t = &inst.y - &inst.x.dot(&t);
        let r_star = &inst.y - &inst.x.dot(&inst.t_star());
        let direct = (r_t.mapv(|v| v * v).sum() - r_star.mapv(|v| v * v).sum()) / n;
        prop_assert!((parts.pn_l - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        prop_assert_eq!(parts.pn_l, parts.pn_q - 2.0 * parts.pn_m);
    }
}

#[test]
fn width_csv_has_the_documented_columns() {
    let rows = width_table(
        &[(Regularizer::L1, Shape::vector(16)), (Regularizer::atomic(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(), Shape::vector(2))],
        500,
        1,
    )
    .unwrap();
    assert!(rows[0].formula.is_some());
    assert!(rows[1].formula.is_none());
    let mut buf = Vec::new();
    write_width_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("kind,dimension,formula,mc_estimate,stderr"));
    assert_eq!(text.lines().count(), 3);
}
