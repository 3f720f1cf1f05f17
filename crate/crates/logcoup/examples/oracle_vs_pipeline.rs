//! Compare two-stage pipeline draws against quadrature and rejection ground
//! truth on a one-dimensional target whose log-density is not concave.
//!
//! ```bash
//! cargo run --release --example oracle_vs_pipeline
//! ```

use logcoup::densities::{log_target_unnorm, DensitySpec};
use logcoup::model::{Activation, ActivationKind, PriorSpec};
use logcoup::samplers::{sample_posterior, ChainConfig};
use logcoup::verification::{
    ks_against_cdf, ks_two_sample, quadrature_oracle, rejection_oracle, GridSpec, OracleTarget,
};
use nalgebra::{DMatrix, DVector};

fn main() {
    let spec = DensitySpec::new(
        DMatrix::from_row_slice(3, 1, &[1.0, 0.85, -0.9]),
        DVector::from_vec(vec![-1.6, 1.1, 0.9]),
        Activation::new(ActivationKind::Tanh),
        0.7,
        PriorSpec::UniformL1,
    )
    .unwrap();

    // show that log p(w) really is non-concave: positive second difference
    let mut max_dd = f64::NEG_INFINITY;
    let h = 1e-4;
    for i in 0..=400 {
        let w = -0.98 + 1.96 * (i as f64) / 400.0;
        let f = |t: f64| log_target_unnorm(&spec, &DVector::from_vec(vec![t])).unwrap();
        max_dd = max_dd.max((f(w + h) - 2.0 * f(w) + f(w - h)) / (h * h));
    }
    println!("largest second difference of log p(w): {max_dd:.3} (positive ⇒ not concave)");

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
    let start = std::time::Instant::now();
    let (draws, _) = sample_posterior(&spec, &cfg, 2000).unwrap();
    let xs: Vec<f64> = draws.iter().map(|w| w[0]).collect();
    println!("2000 pipeline draws in {:.1} s", start.elapsed().as_secs_f64());

    let ks_quadrature = ks_against_cdf(&xs, |x| oracle.cdf_1d(x).unwrap());
    println!("KS(pipeline, quadrature oracle)  = {ks_quadrature:.4}");

    let rejection = rejection_oracle(&spec, 10_000, 5).unwrap();
    let rs: Vec<f64> = rejection.iter().map(|w| w[0]).collect();
    println!(
        "KS(pipeline, rejection oracle)   = {:.4}",
        ks_two_sample(&xs, &rs)
    );
    println!(
        "KS(rejection, quadrature oracle) = {:.4}",
        ks_against_cdf(&rs, |x| oracle.cdf_1d(x).unwrap())
    );
}
