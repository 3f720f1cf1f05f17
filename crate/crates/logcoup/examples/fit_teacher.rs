//! Fit the Greedy Bayes estimator to data from a 2-neuron tanh teacher on a
//! replicated design and print the training curve.
//!
//! ```bash
//! cargo run --release --example fit_teacher
//! ```

use logcoup::greedy_bayes::fit_parallel;
use logcoup::model::{Activation, ActivationKind, Dataset, HyperParams, PriorSpec};
use logcoup::samplers::ChainConfig;
use logcoup::util::derive_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() {
    let n = 50;
    let d = 5;
    let n_distinct = 10;
    let noise_sd = 0.05;
    let seed = 20240;

    // teacher: f*(x) = 0.8 tanh(v1·x) − 0.6 tanh(v2·x)
    let v1 = DVector::from_vec(vec![0.35, -0.25, 0.2, 0.1, -0.1]);
    let v2 = DVector::from_vec(vec![-0.15, 0.3, -0.05, 0.25, 0.25]);
    let teacher = |x: &DVector<f64>| 0.8 * x.dot(&v1).tanh() - 0.6 * x.dot(&v2).tanh();

    // replicated design: 10 distinct covariate points, 5 replicas each,
    // round-robin ordered so every prefix covers the design
    let mut rng = derive_rng(seed, &[1]);
    let points: Vec<DVector<f64>> = (0..n_distinct)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0_f64)))
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| points[i % n_distinct][j]);
    let y = DVector::from_fn(n, |i, _| {
        teacher(&points[i % n_distinct]) + noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let ds = Dataset::new(x, y).unwrap();

    let hyper = HyperParams::with_default_alpha(n, 0.2, 20, 200).unwrap();
    let act = Activation::new(ActivationKind::Tanh);
    let prior = PriorSpec::Gaussian { sigma0_sq: 8.0 };

    let cfg = ChainConfig {
        step_size: 0.15,
        burn_in: 400,
        thinning: 2,
        n_steps: 400,
        inner_budget: 24,
        seed,
        warm_start: true,
        inner_step_size: Some(0.5),
        inner_burn_in: Some(100),
    };

    let start = std::time::Instant::now();
    let model = fit_parallel(&ds, &hyper, &act, &prior, &cfg).expect("fit failed");
    let elapsed = start.elapsed().as_secs_f64();

    let curve = model.training_curve(&ds).unwrap();
    println!("stage,mse");
    for (k, mse) in curve.iter().enumerate() {
        println!("{k},{mse:.6}");
    }
    println!();
    println!("fit wall time: {elapsed:.1} s");
    println!(
        "zero-predictor mse {:.5} -> final mse {:.5} (ratio {:.3})",
        curve[0],
        curve[curve.len() - 1],
        curve[curve.len() - 1] / curve[0]
    );

    // out-of-sample check at fresh points
    let mut rng = derive_rng(seed, &[2]);
    let mut se = 0.0;
    let m_test = 200;
    for _ in 0..m_test {
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0_f64));
        let err: f64 = model.predict(&x).unwrap() - teacher(&x);
        se += err * err;
    }
    println!("held-out mse at {m_test} fresh points: {:.5}", se / m_test as f64);
}
