//! Run the log-concavity verification battery on a Gaussian-prior instance
//! at the spectral variance threshold and print every report.
//!
//! ```bash
//! cargo run --release --example verify_checks
//! ```

use logcoup::densities::{build_lemma3, DensitySpec};
use logcoup::model::{Activation, ActivationKind, PriorSpec};
use logcoup::samplers::ChainConfig;
use logcoup::util::derive_rng;
use logcoup::verification::{
    check_cov_domination, check_lemma3_bound, check_reverse_logconcavity,
    check_xi_strict_logconcavity, holder_ratio,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn main() {
    let (n, d) = (10, 4);
    let mut rng = derive_rng(42, &[1]);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let r = DVector::from_fn(n, |_, _| rng.random_range(-1.2..1.2_f64));
    let act = Activation::new(ActivationKind::Tanh);
    let alpha = 0.3;

    // place the prior variance exactly at the threshold 1/(αc‖r‖∞λ_max)
    let probe = DensitySpec::new(x.clone(), r.clone(), act, alpha, PriorSpec::UniformL1).unwrap();
    let l3 = build_lemma3(&probe, &DVector::zeros(d)).unwrap();
    let sigma0_sq = l3.threshold_sigma0_sq(&probe);
    println!("threshold σ₀² = {sigma0_sq:.5}\n");

    let spec = DensitySpec::new(x, r, act, alpha, PriorSpec::Gaussian { sigma0_sq }).unwrap();
    let inner_cfg = ChainConfig {
        step_size: ChainConfig::default_inner_step(&spec),
        burn_in: 300,
        thinning: 2,
        n_steps: 8000,
        inner_budget: 1,
        seed: 99,
        warm_start: false,
        inner_step_size: None,
        inner_burn_in: None,
    };

    let reports = vec![
        check_reverse_logconcavity(&spec, 1000, 1),
        check_cov_domination(&spec, 10, &inner_cfg).unwrap(),
        check_xi_strict_logconcavity(&spec, 10, &inner_cfg).unwrap(),
        check_lemma3_bound(
            &spec,
            100,
            &[0.25 * sigma0_sq, 0.5 * sigma0_sq, sigma0_sq],
            2,
        )
        .unwrap(),
    ];
    for report in &reports {
        println!(
            "{:26} {}  margin {:+.4e}\n  {}\n",
            report.check_name,
            if report.passed { "pass" } else { "FAIL" },
            report.margin,
            report.details
        );
    }

    let ratio = holder_ratio(alpha, spec.activation().curvature(), n, spec.r_inf(), d);
    println!("holder dimension ratio 20(αcn‖r‖∞)²/d = {ratio:.3} (log-concavity route needs < 1)");
    println!("\nJSON form of the first report:");
    println!("{}", serde_json::to_string_pretty(&reports[0]).unwrap());
}
