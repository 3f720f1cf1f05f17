//! Log-concave MCMC for the coupled model: the inner `w|ξ` samplers
//! (hit-and-run over the ℓ₁ ball, MALA under the Gaussian prior), the outer
//! unadjusted Langevin chain on ξ driven by the Monte Carlo score, and the
//! two-stage pipeline whose output is marginally distributed as `p(w)`.
//!
//! The outer chain is unadjusted (no Metropolis correction) because its
//! score is only available as a Monte Carlo estimate; bias is controlled by
//! the step size, which defaults to `0.5/(1 + αcn‖r‖∞)`, the strong-concavity
//! scale of the marginal.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::densities::{xi_score, AuxiliaryPoint, DensitySpec};
use crate::error::{Error, Result};
use crate::model::PriorSpec;
use crate::util::{
    derive_rng, STREAM_FINAL_DRAW, STREAM_INNER, STREAM_OUTER, STREAM_OUTER_INNER, STREAM_PRIOR,
};

/// Knobs of one chain. When a config drives the two-stage pipeline, the
/// primary fields describe the outer ξ chain and the `inner_*` fields (plus
/// `inner_budget`, the number of draws per score evaluation) describe the
/// inner `w|ξ` chains it spawns. When a config is handed directly to
/// [`sample_reverse_conditional`], the primary fields describe that chain
/// itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub step_size: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_steps: usize,
    /// Inner draws per score evaluation (M).
    pub inner_budget: usize,
    pub seed: u64,
    /// Continue inner chains across outer steps instead of restarting from a
    /// fresh prior draw (trades a little bias for a lot of speed).
    pub warm_start: bool,
    /// Step size for spawned inner MALA chains; default `σ₀²/d`.
    pub inner_step_size: Option<f64>,
    /// Burn-in for spawned inner chains; default 500 (10 when warm).
    pub inner_burn_in: Option<usize>,
}

/// Default burn-in of an inner chain spawned by the pipeline.
const DEFAULT_INNER_BURN_IN: usize = 500;
/// Inner-chain refresh steps between outer steps when warm-starting.
const WARM_REFRESH_STEPS: usize = 10;
/// Outer chain divergence guard.
const XI_DIVERGENCE_NORM: f64 = 1e6;
/// Abort threshold for a MALA chain that accepts nothing.
const ZERO_ACCEPT_LIMIT: u64 = 1000;

impl ChainConfig {
    /// Pipeline defaults for a spec: outer step `0.5/(1 + αcn‖r‖∞)`,
    /// burn-in 1000, thinning 5, inner burn-in 500.
    pub fn for_spec(spec: &DensitySpec, seed: u64) -> Self {
        ChainConfig {
            step_size: Self::default_outer_step(spec),
            burn_in: 1000,
            thinning: 5,
            n_steps: 2000,
            inner_budget: 32,
            seed,
            warm_start: false,
            inner_step_size: None,
            inner_burn_in: None,
        }
    }

    /// Defaults for driving [`sample_reverse_conditional`] directly.
    pub fn for_inner(spec: &DensitySpec, seed: u64) -> Self {
        ChainConfig {
            step_size: Self::default_inner_step(spec),
            burn_in: DEFAULT_INNER_BURN_IN,
            thinning: 5,
            n_steps: 5000,
            inner_budget: 1,
            seed,
            warm_start: false,
            inner_step_size: None,
            inner_burn_in: None,
        }
    }

    /// `0.5/(1 + αcn‖r‖∞)`, the strong-concavity scale of `log p(ξ)`.
    pub fn default_outer_step(spec: &DensitySpec) -> f64 {
        let scale = spec.alpha()
            * spec.activation().curvature()
            * spec.n_rows() as f64
            * spec.r_inf();
        0.5 / (1.0 + scale)
    }

    /// `σ₀²/d` under the Gaussian prior; hit-and-run ignores step sizes.
    pub fn default_inner_step(spec: &DensitySpec) -> f64 {
        match spec.prior() {
            PriorSpec::Gaussian { sigma0_sq } => sigma0_sq / spec.dim() as f64,
            PriorSpec::UniformL1 => 1.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be ≥ 1".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be ≥ 1".into()));
        }
        if self.inner_budget == 0 {
            return Err(Error::Config("inner_budget must be ≥ 1".into()));
        }
        if let Some(s) = self.inner_step_size {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("inner_step_size must be positive, got {s}")));
            }
        }
        Ok(())
    }

    fn inner_step(&self, spec: &DensitySpec) -> f64 {
        self.inner_step_size.unwrap_or_else(|| Self::default_inner_step(spec))
    }

    fn inner_burn(&self) -> usize {
        self.inner_burn_in.unwrap_or(DEFAULT_INNER_BURN_IN)
    }
}

/// Chain health counters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    /// Fraction of accepted proposals (1.0 for rejection-free kernels).
    pub acceptance_rate: f64,
    /// Minimum over coordinates of the per-coordinate effective sample size
    /// of the retained draws.
    pub effective_sample_size: f64,
    /// Density/gradient evaluations performed.
    pub n_evals: u64,
}

/// One i.i.d. draw from the prior.
pub fn draw_prior_once(prior: &PriorSpec, d: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
    match prior {
        PriorSpec::Gaussian { sigma0_sq } => {
            let s = sigma0_sq.sqrt();
            DVector::from_fn(d, |_, _| s * rng.sample::<f64, _>(StandardNormal))
        }
        PriorSpec::UniformL1 => {
            // First d coordinates of a Dirichlet(1,…,1) point on the
            // (d+1)-simplex are uniform on the solid simplex; independent
            // random signs spread that over the 2^d orthants of the ball.
            // The implicit (d+1)-th coordinate is the radial slack that
            // makes the draw uniform over the solid ball.
            let mut exps = Vec::with_capacity(d + 1);
            for _ in 0..=d {
                exps.push(rng.sample::<f64, _>(Exp1));
            }
            let total: f64 = exps.iter().sum();
            DVector::from_fn(d, |j, _| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * exps[j] / total
            })
        }
    }
}

/// `count` i.i.d. prior draws.
pub fn sample_prior(prior: &PriorSpec, d: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = derive_rng(seed, &[STREAM_PRIOR]);
    (0..count).map(|_| draw_prior_once(prior, d, &mut rng)).collect()
}

/// Forward-coupled auxiliary draw: `w₀ ~ p₀`, `ξ = (αc|R|)^{1/2}Xw₀ + Z`.
pub fn forward_coupled_xi(
    spec: &DensitySpec,
    rng: &mut ChaCha12Rng,
) -> (DVector<f64>, AuxiliaryPoint) {
    let w0 = draw_prior_once(spec.prior(), spec.dim(), rng);
    let mut xi = spec.scaled_design() * &w0;
    for i in 0..xi.len() {
        xi[i] += rng.sample::<f64, _>(StandardNormal);
    }
    let xi = AuxiliaryPoint::new(xi).expect("forward coupling is finite");
    (w0, xi)
}

struct InnerRun {
    samples: Vec<DVector<f64>>,
    last: DVector<f64>,
    accepted: u64,
    proposed: u64,
    n_evals: u64,
}

/// Precomputed per-row constants of the reverse-conditional exponent
/// `φ(w) = Σᵢ α rᵢ ψ(uᵢ) − (αc|rᵢ|/2) uᵢ² + ζᵢ uᵢ`, `uᵢ = xᵢ·w`,
/// `ζᵢ = (αc|rᵢ|)^{1/2} ξᵢ`.
struct ReverseExponent<'a> {
    spec: &'a DensitySpec,
    zeta: DVector<f64>,
}

impl<'a> ReverseExponent<'a> {
    fn new(spec: &'a DensitySpec, xi: &AuxiliaryPoint) -> Self {
        let c = spec.activation().curvature();
        let zeta = DVector::from_fn(spec.n_rows(), |i, _| {
            (spec.alpha() * c * spec.residuals()[i].abs()).sqrt() * xi.as_vector()[i]
        });
        ReverseExponent { spec, zeta }
    }

    /// φ along the chord `u + t q` given precomputed `u = Xw`, `q = Xv`
    /// (prior term excluded; the chord never leaves the support).
    fn phi_along(&self, u: &DVector<f64>, q: &DVector<f64>, t: f64) -> f64 {
        let spec = self.spec;
        let ac = spec.alpha() * spec.activation().curvature();
        let mut s = 0.0;
        for i in 0..spec.n_rows() {
            let ui = u[i] + t * q[i];
            s += spec.alpha() * spec.residuals()[i] * spec.activation().psi(ui)
                - 0.5 * ac * spec.residuals()[i].abs() * ui * ui
                + self.zeta[i] * ui;
        }
        s
    }

    /// Full log-density and gradient including the Gaussian prior term.
    fn logp_grad(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let spec = self.spec;
        let d = spec.dim();
        let ac = spec.alpha() * spec.activation().curvature();
        let u = spec.x_slice() * w;
        let mut value = 0.0;
        let mut grad = DVector::zeros(d);
        for i in 0..spec.n_rows() {
            let (psi, psi1, _) = spec.activation().eval_raw(u[i]);
            let ri = spec.residuals()[i];
            value +=
                spec.alpha() * ri * psi - 0.5 * ac * ri.abs() * u[i] * u[i] + self.zeta[i] * u[i];
            let coef = spec.alpha() * ri * psi1 - ac * ri.abs() * u[i] + self.zeta[i];
            for a in 0..d {
                grad[a] += coef * spec.x_slice()[(i, a)];
            }
        }
        value += spec.prior().log_unnorm(w);
        grad += spec.prior().grad_log_unnorm(w);
        (value, grad)
    }
}

/// Metropolis-adjusted Langevin chain for the Gaussian-prior reverse
/// conditional (strictly log-concave, unbounded support).
#[allow(clippy::too_many_arguments)]
fn mala_chain(
    spec: &DensitySpec,
    xi: &AuxiliaryPoint,
    init: DVector<f64>,
    step: f64,
    burn_in: usize,
    keep: usize,
    thinning: usize,
    rng: &mut ChaCha12Rng,
) -> Result<InnerRun> {
    let exponent = ReverseExponent::new(spec, xi);
    let d = spec.dim();
    let mut w = init;
    let (mut logp, mut grad) = exponent.logp_grad(&w);
    let mut n_evals: u64 = 1;
    if !logp.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampler(
            "non-finite density or gradient at MALA start".into(),
        ));
    }

    let mut accepted: u64 = 0;
    let mut proposed: u64 = 0;
    let mut samples = Vec::with_capacity(keep);
    let total = burn_in + keep * thinning;
    let half = 0.5 * step;
    let noise = step.sqrt();
    for t in 0..total {
        let mut proposal = DVector::zeros(d);
        for a in 0..d {
            proposal[a] = w[a] + half * grad[a] + noise * rng.sample::<f64, _>(StandardNormal);
        }
        proposed += 1;
        let (logp_new, grad_new) = exponent.logp_grad(&proposal);
        n_evals += 1;
        if grad_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Sampler(format!(
                "non-finite gradient in MALA proposal at step {t} (step size {step})"
            )));
        }
        // q(b|a) = N(b; a + (step/2)∇logp(a), step·I)
        let log_q_forward = {
            let mut s = 0.0;
            for a in 0..d {
                let diff = proposal[a] - w[a] - half * grad[a];
                s -= diff * diff;
            }
            s / (2.0 * step)
        };
        let log_q_backward = {
            let mut s = 0.0;
            for a in 0..d {
                let diff = w[a] - proposal[a] - half * grad_new[a];
                s -= diff * diff;
            }
            s / (2.0 * step)
        };
        let log_accept = logp_new - logp + log_q_backward - log_q_forward;
        if rng.random::<f64>().ln() < log_accept {
            w = proposal;
            logp = logp_new;
            grad = grad_new;
            accepted += 1;
        }
        if proposed >= ZERO_ACCEPT_LIMIT && accepted == 0 {
            return Err(Error::Sampler(format!(
                "zero MALA acceptance over {proposed} steps; step size {step} is too large"
            )));
        }
        if t >= burn_in && (t - burn_in + 1) % thinning == 0 {
            samples.push(w.clone());
        }
    }
    Ok(InnerRun {
        last: w,
        samples,
        accepted,
        proposed,
        n_evals,
    })
}

/// Hit-and-run for the uniform-prior reverse conditional: a uniformly random
/// chord through the current point, then an exact draw from the restriction
/// of the density to that chord.
///
/// The restriction has a concave exponent, so the slice `{t : φ(t) ≥ y}` at
/// level `y = φ(0) + log U` is an interval whose endpoints bisection pins
/// down to machine precision; a uniform draw from that interval is a slice
/// sampling step that leaves the conditional invariant.
fn hit_and_run_chain(
    spec: &DensitySpec,
    xi: &AuxiliaryPoint,
    init: DVector<f64>,
    burn_in: usize,
    keep: usize,
    thinning: usize,
    rng: &mut ChaCha12Rng,
) -> Result<InnerRun> {
    let exponent = ReverseExponent::new(spec, xi);
    let d = spec.dim();
    let mut w = init;
    if !spec.prior().in_support(&w) {
        return Err(Error::Sampler("hit-and-run started outside the ℓ₁ ball".into()));
    }
    let mut u = spec.x_slice() * &w;
    let mut n_evals: u64 = 0;
    let mut steps_since_refresh = 0usize;

    let mut samples = Vec::with_capacity(keep);
    let total = burn_in + keep * thinning;
    let mut t_step = 0usize;
    while t_step < total {
        // uniformly random direction
        let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        v /= norm;
        let q = spec.x_slice() * &v;

        // chord {t : ‖w + t v‖₁ ≤ 1}; the norm is convex in t, so each
        // endpoint comes from bisection on a bracketed crossing
        let l1 = |t: f64| -> f64 {
            let mut s = 0.0;
            for a in 0..d {
                s += (w[a] + t * v[a]).abs();
            }
            s
        };
        let bound = (1.0 + l1(0.0)) / v.iter().map(|x| x.abs()).sum::<f64>();
        let t_plus = bisect_boundary(&l1, bound);
        let t_minus = -bisect_boundary(&|t| l1(-t), bound);

        // exact slice draw along the chord
        let phi0 = exponent.phi_along(&u, &q, 0.0);
        n_evals += 1;
        let level = phi0 + rng.random::<f64>().ln();
        let phi = |t: f64| exponent.phi_along(&u, &q, t);
        let (a, evals_a) = slice_endpoint(&phi, level, t_minus);
        let (b, evals_b) = slice_endpoint(&phi, level, t_plus);
        n_evals += evals_a + evals_b;
        let t_new = a + (b - a) * rng.random::<f64>();

        for idx in 0..d {
            w[idx] += t_new * v[idx];
        }
        // incremental update of u = Xw, refreshed periodically against drift
        steps_since_refresh += 1;
        if steps_since_refresh >= 64 {
            u = spec.x_slice() * &w;
            steps_since_refresh = 0;
        } else {
            u += &q * t_new;
        }

        if t_step >= burn_in && (t_step - burn_in + 1) % thinning == 0 {
            samples.push(w.clone());
        }
        t_step += 1;
    }
    let proposed = total as u64;
    Ok(InnerRun {
        last: w,
        samples,
        accepted: proposed,
        proposed,
        n_evals,
    })
}

/// Largest `t ∈ [0, hi]` with `f(t) ≤ 1`, for convex `f` with `f(0) ≤ 1`.
fn bisect_boundary<F: Fn(f64) -> f64>(f: &F, hi: f64) -> f64 {
    if f(hi) <= 1.0 {
        return hi;
    }
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Endpoint of `{t : φ(t) ≥ level}` between 0 (where φ ≥ level) and
/// `outside`, for concave φ. Returns the endpoint and the evaluation count.
fn slice_endpoint<F: Fn(f64) -> f64>(phi: &F, level: f64, outside: f64) -> (f64, u64) {
    let mut evals: u64 = 1;
    if phi(outside) >= level {
        return (outside, evals);
    }
    let (mut good, mut bad) = (0.0, outside);
    for _ in 0..48 {
        let mid = 0.5 * (good + bad);
        evals += 1;
        if phi(mid) >= level {
            good = mid;
        } else {
            bad = mid;
        }
    }
    (good, evals)
}

#[allow(clippy::too_many_arguments)]
fn run_inner(
    spec: &DensitySpec,
    xi: &AuxiliaryPoint,
    init: Option<DVector<f64>>,
    step: f64,
    burn_in: usize,
    keep: usize,
    thinning: usize,
    rng: &mut ChaCha12Rng,
) -> Result<InnerRun> {
    let init = init.unwrap_or_else(|| draw_prior_once(spec.prior(), spec.dim(), rng));
    match spec.prior() {
        PriorSpec::Gaussian { .. } => {
            mala_chain(spec, xi, init, step, burn_in, keep, thinning, rng)
        }
        PriorSpec::UniformL1 => hit_and_run_chain(spec, xi, init, burn_in, keep, thinning, rng),
    }
}

/// Sample `p(w|ξ)`: MALA under the Gaussian prior, hit-and-run with exact
/// chord slice draws under the uniform prior. Retains
/// `n_steps / thinning` draws after `burn_in` steps.
pub fn sample_reverse_conditional(
    spec: &DensitySpec,
    xi: &AuxiliaryPoint,
    cfg: &ChainConfig,
) -> Result<(Vec<DVector<f64>>, SamplerDiagnostics)> {
    cfg.validate()?;
    if xi.len() != spec.n_rows() {
        return Err(Error::Input(format!(
            "auxiliary point has {} entries, spec has {} rows",
            xi.len(),
            spec.n_rows()
        )));
    }
    let keep = cfg.n_steps / cfg.thinning;
    if keep == 0 {
        return Err(Error::Config("n_steps / thinning must be ≥ 1".into()));
    }
    let mut rng = derive_rng(cfg.seed, &[STREAM_INNER]);
    let run = run_inner(
        spec,
        xi,
        None,
        cfg.step_size,
        cfg.burn_in,
        keep,
        cfg.thinning,
        &mut rng,
    )?;
    let diag = SamplerDiagnostics {
        acceptance_rate: acceptance_of(run.accepted, run.proposed),
        effective_sample_size: min_coordinate_ess(&run.samples),
        n_evals: run.n_evals,
    };
    Ok((run.samples, diag))
}

fn acceptance_of(accepted: u64, proposed: u64) -> f64 {
    if proposed == 0 {
        1.0
    } else {
        accepted as f64 / proposed as f64
    }
}

struct OuterRun {
    final_xi: AuxiliaryPoint,
    trace: Vec<DVector<f64>>,
    paired_w: Vec<DVector<f64>>,
    inner_accepted: u64,
    inner_proposed: u64,
    n_evals: u64,
}

/// Unadjusted Langevin on ξ with the plug-in Monte Carlo score. At outer
/// step `t` the inner chain targets `p(w|ξ_t)`; collection happens before
/// the ξ update so each recorded `(ξ_t, w)` pair is coherent.
fn outer_chain(spec: &DensitySpec, cfg: &ChainConfig, min_collect: usize) -> Result<OuterRun> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.seed, &[STREAM_OUTER]);
    let m = spec.n_rows();

    let (w0, mut xi) = forward_coupled_xi(spec, &mut rng);
    let mut warm_w: Option<DVector<f64>> = cfg.warm_start.then_some(w0);

    let inner_step = cfg.inner_step(spec);
    let cold_burn = cfg.inner_burn();
    let n_steps = cfg.n_steps.max(min_collect * cfg.thinning);
    let total = cfg.burn_in + n_steps;

    let mut trace = Vec::new();
    let mut paired_w = Vec::new();
    let mut inner_accepted: u64 = 0;
    let mut inner_proposed: u64 = 0;
    let mut n_evals: u64 = 0;

    let half = 0.5 * cfg.step_size;
    let noise = cfg.step_size.sqrt();
    for t in 0..total {
        let mut inner_rng = derive_rng(cfg.seed, &[STREAM_OUTER_INNER, t as u64]);
        let (init, burn) = match warm_w.take() {
            Some(w) if t > 0 => (Some(w), WARM_REFRESH_STEPS),
            other => (other, cold_burn),
        };
        let run = run_inner(
            spec,
            &xi,
            init,
            inner_step,
            burn,
            cfg.inner_budget,
            1,
            &mut inner_rng,
        )
        .map_err(|e| Error::Sampler(format!("inner chain at outer step {t}: {e}")))?;
        inner_accepted += run.accepted;
        inner_proposed += run.proposed;
        n_evals += run.n_evals;

        if t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thinning == 0 {
            trace.push(xi.as_vector().clone());
            paired_w.push(run.last.clone());
        }
        if cfg.warm_start {
            warm_w = Some(run.last);
        }

        let score = xi_score(spec, &xi, &run.samples)?;
        let mut next = xi.into_vector();
        for i in 0..m {
            next[i] += half * score[i] + noise * rng.sample::<f64, _>(StandardNormal);
        }
        if next.norm() > XI_DIVERGENCE_NORM {
            return Err(Error::Sampler(format!(
                "ξ chain diverged (‖ξ‖ > {XI_DIVERGENCE_NORM:.0e}) at step {t}; step size {} too large",
                cfg.step_size
            )));
        }
        xi = AuxiliaryPoint::new(next)
            .map_err(|e| Error::Sampler(format!("ξ chain produced non-finite state: {e}")))?;
    }

    Ok(OuterRun {
        final_xi: xi,
        trace,
        paired_w,
        inner_accepted,
        inner_proposed,
        n_evals,
    })
}

/// Run the outer Langevin chain on ξ; returns the final state as the ξ draw
/// plus the thinned post-burn-in trace.
pub fn run_xi_chain(
    spec: &DensitySpec,
    cfg: &ChainConfig,
) -> Result<(AuxiliaryPoint, Vec<DVector<f64>>, SamplerDiagnostics)> {
    let run = outer_chain(spec, cfg, 0)?;
    let diag = SamplerDiagnostics {
        acceptance_rate: acceptance_of(run.inner_accepted, run.inner_proposed),
        effective_sample_size: min_coordinate_ess(&run.trace),
        n_evals: run.n_evals,
    };
    Ok((run.final_xi, run.trace, diag))
}

/// One two-stage draw: run the ξ chain, then one fresh reverse-conditional
/// chain at its final state. The marginal law of the output approximates
/// the target `p(w)`.
pub fn draw_posterior_weight(
    spec: &DensitySpec,
    cfg: &ChainConfig,
) -> Result<(DVector<f64>, SamplerDiagnostics)> {
    let run = outer_chain(spec, cfg, 0)?;
    let mut rng = derive_rng(cfg.seed, &[STREAM_FINAL_DRAW]);
    let inner = run_inner(
        spec,
        &run.final_xi,
        None,
        cfg.inner_step(spec),
        cfg.inner_burn(),
        1,
        1,
        &mut rng,
    )?;
    let diag = SamplerDiagnostics {
        acceptance_rate: acceptance_of(
            run.inner_accepted + inner.accepted,
            run.inner_proposed + inner.proposed,
        ),
        effective_sample_size: 1.0,
        n_evals: run.n_evals + inner.n_evals,
    };
    let w = inner.samples.into_iter().next().expect("keep = 1");
    Ok((w, diag))
}

/// `count` two-stage draws harvested from a single outer chain: at every
/// thinned outer step the current inner draw (targeting `p(w|ξ_t)`) is
/// recorded, so each output is marginally a posterior draw at a fraction of
/// the cost of independent pipelines.
pub fn sample_posterior(
    spec: &DensitySpec,
    cfg: &ChainConfig,
    count: usize,
) -> Result<(Vec<DVector<f64>>, SamplerDiagnostics)> {
    if count == 0 {
        return Ok((
            Vec::new(),
            SamplerDiagnostics {
                acceptance_rate: 1.0,
                effective_sample_size: 0.0,
                n_evals: 0,
            },
        ));
    }
    let mut run_cfg = cfg.clone();
    run_cfg.n_steps = count * cfg.thinning;
    let run = outer_chain(spec, &run_cfg, count)?;
    let mut draws = run.paired_w;
    draws.truncate(count);
    let diag = SamplerDiagnostics {
        acceptance_rate: acceptance_of(run.inner_accepted, run.inner_proposed),
        effective_sample_size: min_coordinate_ess(&draws),
        n_evals: run.n_evals,
    };
    Ok((draws, diag))
}

/// Effective sample size of a scalar series via Geyer's initial positive
/// sequence of autocorrelation pairs, capped at the series length.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    if var <= 1e-300 {
        return nf;
    }
    let autocov = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (series[i] - mean) * (series[i + lag] - mean);
        }
        s / nf
    };
    let mut tau = -1.0;
    let mut m = 0;
    loop {
        if 2 * m + 1 >= n {
            break;
        }
        let pair = (autocov(2 * m) + autocov(2 * m + 1)) / var;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    (nf / tau.max(1.0 / nf)).min(nf)
}

/// Minimum per-coordinate ESS across a vector-valued chain.
pub fn min_coordinate_ess(samples: &[DVector<f64>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let d = samples[0].len();
    if d == 0 {
        return samples.len() as f64;
    }
    let mut min_ess = f64::INFINITY;
    for coord in 0..d {
        let series: Vec<f64> = samples.iter().map(|s| s[coord]).collect();
        min_ess = min_ess.min(effective_sample_size(&series));
    }
    min_ess
}

/// Empirical covariance matrix of a set of vectors (unbiased denominator).
pub fn empirical_covariance(samples: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if samples.len() < 2 {
        return Err(Error::Input("covariance needs at least two samples".into()));
    }
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= samples.len() as f64;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (samples.len() - 1) as f64;
    Ok(cov)
}
