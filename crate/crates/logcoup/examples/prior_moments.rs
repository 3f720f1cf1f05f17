//! Empirical moments of the uniform prior over the solid ℓ₁ ball against
//! the Dirichlet-construction formulas.
//!
//! ```bash
//! cargo run --release --example prior_moments
//! ```

use logcoup::model::{uniform_l1_coordinate_variance, PriorSpec};
use logcoup::samplers::{empirical_covariance, sample_prior};

fn main() {
    let count = 100_000;
    println!("{count} draws per dimension\n");
    println!("  d   Var(w_j) empirical   2/((d+1)(d+2))   rel err   max |off-diag cov|");
    for d in [1usize, 2, 5, 10] {
        let draws = sample_prior(&PriorSpec::UniformL1, d, count, 42);
        let cov = empirical_covariance(&draws).unwrap();
        let mean_var = (0..d).map(|j| cov[(j, j)]).sum::<f64>() / d as f64;
        let expected = uniform_l1_coordinate_variance(d);
        let mut max_off: f64 = 0.0;
        for j in 0..d {
            for k in 0..j {
                max_off = max_off.max(cov[(j, k)].abs());
            }
        }
        println!(
            "  {d:2}   {mean_var:.6}             {expected:.6}        {:+.3}%    {max_off:.2e}",
            100.0 * (mean_var - expected) / expected
        );
    }
    println!("\nevery draw satisfies ‖w‖₁ ≤ 1 by construction:");
    let draws = sample_prior(&PriorSpec::UniformL1, 6, 10_000, 7);
    let max_l1 = draws
        .iter()
        .map(|w| w.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    println!("largest ‖w‖₁ over 10⁴ draws at d=6: {max_l1:.9}");
}
