//! Distributional checks of the samplers against independent ground truth:
//! quadrature oracles, exact rejection draws, and closed-form reductions.

use logcoup::densities::{log_target_unnorm, reverse_conditional_hessian, xi_score, AuxiliaryPoint};
use logcoup::model::{uniform_l1_coordinate_variance, Activation, ActivationKind};
use logcoup::samplers::{
    draw_posterior_weight, empirical_covariance, forward_coupled_xi, run_xi_chain,
    sample_posterior, sample_reverse_conditional,
};
use logcoup::util::derive_rng;
use logcoup::verification::{
    ks_against_cdf, ks_two_sample, log_marginal_xi_unnorm, quadrature_oracle, rejection_oracle,
    GridSpec, OracleTarget,
};
use logcoup::{ChainConfig, DensitySpec, PriorSpec};
use nalgebra::{DMatrix, DVector};

fn tanh_act() -> Activation {
    Activation::new(ActivationKind::Tanh)
}

/// d=1, n=2 instance used by several oracle comparisons.
fn small_1d_spec(prior: PriorSpec) -> DensitySpec {
    DensitySpec::new(
        DMatrix::from_row_slice(2, 1, &[0.9, -0.7]),
        DVector::from_vec(vec![1.3, -0.8]),
        tanh_act(),
        0.5,
        prior,
    )
    .unwrap()
}

#[test]
fn reverse_conditional_gaussian_zero_residual_is_exactly_the_prior() {
    // r = 0 degenerates the coupling: target is N(0, σ₀² I)
    let sigma0_sq = 0.6;
    let spec = DensitySpec::new(
        DMatrix::from_row_slice(2, 1, &[0.4, -0.2]),
        DVector::zeros(2),
        tanh_act(),
        0.5,
        PriorSpec::Gaussian { sigma0_sq },
    )
    .unwrap();
    let xi = AuxiliaryPoint::new(DVector::from_vec(vec![0.3, -1.1])).unwrap();
    let cfg = ChainConfig {
        step_size: sigma0_sq / 2.0,
        burn_in: 500,
        thinning: 3,
        n_steps: 30_000,
        inner_budget: 1,
        seed: 101,
        warm_start: false,
        inner_step_size: None,
        inner_burn_in: None,
    };
    let (samples, diag) = sample_reverse_conditional(&spec, &xi, &cfg).unwrap();
    assert_eq!(samples.len(), 10_000);
    assert!(diag.acceptance_rate > 0.3);

    let xs: Vec<f64> = samples.iter().map(|w| w[0]).collect();
    let sd = sigma0_sq.sqrt();
    let ks = ks_against_cdf(&xs, |x| standard_normal_cdf(x / sd));
    assert!(ks <= 0.02, "KS vs N(0, σ₀²) = {ks}");
}

#[test]
fn reverse_conditional_uniform_zero_residual_matches_ball_variance() {
    let spec = DensitySpec::new(
        DMatrix::from_row_slice(2, 3, &[0.4, -0.2, 0.1, 0.0, 0.3, -0.5]),
        DVector::zeros(2),
        tanh_act(),
        0.5,
        PriorSpec::UniformL1,
    )
    .unwrap();
    let xi = AuxiliaryPoint::new(DVector::from_vec(vec![1.0, -0.4])).unwrap();
    let cfg = ChainConfig {
        step_size: 1.0,
        burn_in: 500,
        thinning: 2,
        n_steps: 60_000,
        inner_budget: 1,
        seed: 7,
        warm_start: false,
        inner_step_size: None,
        inner_burn_in: None,
    };
    let (samples, _) = sample_reverse_conditional(&spec, &xi, &cfg).unwrap();
    let cov = empirical_covariance(&samples).unwrap();
    let expected = uniform_l1_coordinate_variance(3);
    for j in 0..3 {
        let rel = (cov[(j, j)] - expected).abs() / expected;
        assert!(rel < 0.05, "coord {j}: var {} vs {expected}", cov[(j, j)]);
    }
}

#[test]
fn reverse_conditional_matches_quadrature_inverse_cdf() {
    // non-degenerate d=1, n=2 spec against the tabulated conditional
    for prior in [PriorSpec::UniformL1, PriorSpec::Gaussian { sigma0_sq: 0.5 }] {
        let spec = small_1d_spec(prior);
        let mut rng = derive_rng(33, &[1]);
        let (_, xi) = forward_coupled_xi(&spec, &mut rng);

        let grid = match prior {
            PriorSpec::UniformL1 => GridSpec::symmetric(1.0, 1, 8001).unwrap(),
            PriorSpec::Gaussian { .. } => GridSpec::symmetric(6.0, 1, 8001).unwrap(),
        };
        let oracle =
            quadrature_oracle(&spec, &OracleTarget::ReverseWGivenXi(xi.clone()), &grid).unwrap();

        let cfg = ChainConfig {
            step_size: ChainConfig::default_inner_step(&spec),
            burn_in: 500,
            thinning: 2,
            n_steps: 20_000,
            inner_budget: 1,
            seed: 55,
            warm_start: false,
            inner_step_size: None,
            inner_burn_in: None,
        };
        let (samples, _) = sample_reverse_conditional(&spec, &xi, &cfg).unwrap();
        let xs: Vec<f64> = samples.iter().map(|w| w[0]).collect();
        let ks = ks_against_cdf(&xs, |x| oracle.cdf_1d(x).unwrap());
        assert!(ks <= 0.03, "{prior:?}: KS vs conditional oracle = {ks}");
    }
}

#[test]
fn xi_chain_trace_matches_quadrature_marginal() {
    // n=1, d=1: total variation between the thinned trace histogram and the
    // quadrature-normalized p(ξ) stays below 0.05
    let spec = DensitySpec::new(
        DMatrix::from_row_slice(1, 1, &[0.8]),
        DVector::from_vec(vec![1.4]),
        tanh_act(),
        0.6,
        PriorSpec::UniformL1,
    )
    .unwrap();
    let cfg = ChainConfig {
        step_size: 0.1,
        burn_in: 2000,
        thinning: 10,
        n_steps: 400_000,
        inner_budget: 8,
        seed: 11,
        warm_start: true,
        inner_step_size: None,
        inner_burn_in: Some(50),
    };
    let (_, trace, diag) = run_xi_chain(&spec, &cfg).unwrap();
    assert_eq!(trace.len(), 40_000);
    assert!(diag.effective_sample_size > 1000.0);

    let grid = GridSpec::symmetric(5.0, 1, 60).unwrap();
    let oracle = quadrature_oracle(&spec, &OracleTarget::MarginalXi, &grid).unwrap();
    let xs: Vec<f64> = trace.iter().map(|v| v[0]).collect();
    let tv = oracle.total_variation_1d(&xs).unwrap();
    assert!(tv <= 0.05, "TV(trace, p(ξ)) = {tv}");
}

#[test]
fn plug_in_score_matches_finite_differences_of_quadrature_marginal() {
    // n=2, d=1: the Monte Carlo score against central differences of the
    // nested-quadrature log p(ξ) at forward-coupled ξ points
    let spec = small_1d_spec(PriorSpec::UniformL1);
    let w_grid = GridSpec::symmetric(1.0, 1, 4001).unwrap();
    let h = 1e-3;

    let mut rng = derive_rng(71, &[2]);
    let mut worst_rel: f64 = 0.0;
    for rep in 0..5u64 {
        let (_, xi) = forward_coupled_xi(&spec, &mut rng);
        let cfg = ChainConfig {
            step_size: 1.0,
            burn_in: 500,
            thinning: 2,
            n_steps: 20_000,
            inner_budget: 1,
            seed: 900 + rep,
            warm_start: false,
            inner_step_size: None,
            inner_burn_in: None,
        };
        let (samples, _) = sample_reverse_conditional(&spec, &xi, &cfg).unwrap();
        let score = xi_score(&spec, &xi, &samples).unwrap();

        let mut fd = DVector::zeros(2);
        for j in 0..2 {
            let mut plus = xi.as_vector().clone();
            let mut minus = xi.as_vector().clone();
            plus[j] += h;
            minus[j] -= h;
            let lp = log_marginal_xi_unnorm(&spec, &AuxiliaryPoint::new(plus).unwrap(), &w_grid)
                .unwrap();
            let lm = log_marginal_xi_unnorm(&spec, &AuxiliaryPoint::new(minus).unwrap(), &w_grid)
                .unwrap();
            fd[j] = (lp - lm) / (2.0 * h);
        }
        let rel = (score - &fd).norm() / fd.norm();
        worst_rel = worst_rel.max(rel);
    }
    assert!(worst_rel <= 0.02, "score vs quadrature FD rel error {worst_rel}");
}

#[test]
fn pipeline_matches_target_oracle_on_a_nonconcave_1d_instance() {
    // the central two-stage claim at desk scale: log p(w) has a positive
    // second derivative somewhere, yet the pipeline reproduces p(w)
    let spec = DensitySpec::new(
        DMatrix::from_row_slice(3, 1, &[1.0, 0.85, -0.9]),
        DVector::from_vec(vec![-1.6, 1.1, 0.9]),
        tanh_act(),
        0.7,
        PriorSpec::UniformL1,
    )
    .unwrap();
    assert!(
        max_second_derivative_1d(&spec) > 1e-3,
        "instance is unexpectedly concave"
    );

    let grid = GridSpec::symmetric(1.0, 1, 8001).unwrap();
    let oracle = quadrature_oracle(&spec, &OracleTarget::TargetW, &grid).unwrap();

    let cfg = ChainConfig {
        step_size: 0.5 * ChainConfig::default_outer_step(&spec),
        burn_in: 800,
        thinning: 25,
        n_steps: 1,
        inner_budget: 8,
        seed: 2024,
        warm_start: true,
        inner_step_size: None,
        inner_burn_in: Some(50),
    };
    let (draws, _) = sample_posterior(&spec, &cfg, 2000).unwrap();
    let xs: Vec<f64> = draws.iter().map(|w| w[0]).collect();
    let ks = ks_against_cdf(&xs, |x| oracle.cdf_1d(x).unwrap());
    assert!(ks <= 0.05, "pipeline KS vs oracle = {ks}");

    // cross-check through the two-sample path against stratified oracle draws
    let oracle_draws: Vec<f64> = oracle.stratified_sample_1d(10_000).unwrap();
    let ks2 = ks_two_sample(&xs, &oracle_draws);
    assert!(ks2 <= 0.05, "two-sample KS vs oracle = {ks2}");
}

#[test]
fn pipeline_alpha_zero_returns_prior_moments() {
    let spec = DensitySpec::new(
        DMatrix::from_row_slice(3, 2, &[0.3, -0.6, 0.2, 0.9, -0.5, 0.1]),
        DVector::from_vec(vec![0.7, -0.4, 1.1]),
        tanh_act(),
        0.0,
        PriorSpec::UniformL1,
    )
    .unwrap();
    let cfg = ChainConfig {
        step_size: 0.4,
        burn_in: 200,
        thinning: 8,
        n_steps: 1,
        inner_budget: 4,
        seed: 31,
        warm_start: true,
        inner_step_size: None,
        inner_burn_in: Some(50),
    };
    let (draws, _) = sample_posterior(&spec, &cfg, 20_000).unwrap();
    let cov = empirical_covariance(&draws).unwrap();
    let expected = uniform_l1_coordinate_variance(2);
    for j in 0..2 {
        let rel = (cov[(j, j)] - expected).abs() / expected;
        assert!(rel < 0.05, "coord {j}: {} vs {expected}", cov[(j, j)]);
    }
}

#[test]
fn single_draw_pipeline_is_well_distributed() {
    // 400 fully independent draw_posterior_weight pipelines, d=1
    let spec = small_1d_spec(PriorSpec::UniformL1);
    let grid = GridSpec::symmetric(1.0, 1, 8001).unwrap();
    let oracle = quadrature_oracle(&spec, &OracleTarget::TargetW, &grid).unwrap();
    let mut xs = Vec::with_capacity(400);
    for rep in 0..400u64 {
        let cfg = ChainConfig {
            step_size: 0.5 * ChainConfig::default_outer_step(&spec),
            burn_in: 400,
            thinning: 1,
            n_steps: 1,
            inner_budget: 8,
            seed: 5000 + rep,
            warm_start: true,
            inner_step_size: None,
            inner_burn_in: Some(50),
        };
        let (w, _) = draw_posterior_weight(&spec, &cfg).unwrap();
        xs.push(w[0]);
    }
    let ks = ks_against_cdf(&xs, |x| oracle.cdf_1d(x).unwrap());
    // KS 99th percentile at n=400 is ≈ 0.0815
    assert!(ks <= 0.085, "independent-pipeline KS = {ks}");
}

#[test]
fn rejection_oracle_agrees_with_pipeline_on_gaussian_prior() {
    let spec = small_1d_spec(PriorSpec::Gaussian { sigma0_sq: 0.35 });
    let rejection = rejection_oracle(&spec, 10_000, 3).unwrap();
    let cfg = ChainConfig {
        step_size: 0.5 * ChainConfig::default_outer_step(&spec),
        burn_in: 800,
        thinning: 25,
        n_steps: 1,
        inner_budget: 8,
        seed: 77,
        warm_start: true,
        inner_step_size: None,
        inner_burn_in: Some(60),
    };
    let (draws, _) = sample_posterior(&spec, &cfg, 2000).unwrap();
    let a: Vec<f64> = draws.iter().map(|w| w[0]).collect();
    let b: Vec<f64> = rejection.iter().map(|w| w[0]).collect();
    let ks = ks_two_sample(&a, &b);
    assert!(ks <= 0.05, "pipeline vs rejection oracle KS = {ks}");
}

/// Largest value of d²/dw² log p(w) over a dense grid (d = 1 only).
fn max_second_derivative_1d(spec: &DensitySpec) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for i in 0..2001 {
        let w = DVector::from_vec(vec![-0.999 + 1.998 * (i as f64) / 2000.0]);
        let h = reverse_conditional_hessian(spec, &w).unwrap();
        // log p and log p(w|ξ) share the curvature of the data term up to
        // the (αc|R|)-quadratic; recompute the target Hessian directly
        let _ = h;
        let hh = 1e-4;
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[0] += hh;
        wm[0] -= hh;
        let f = log_target_unnorm(spec, &w).unwrap();
        let fp = log_target_unnorm(spec, &wp).unwrap();
        let fm = log_target_unnorm(spec, &wm).unwrap();
        if f.is_finite() && fp.is_finite() && fm.is_finite() {
            best = best.max((fp - 2.0 * f + fm) / (hh * hh));
        }
    }
    best
}

fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Abramowitz–Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}
