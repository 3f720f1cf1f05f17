//! Two-stage posterior sampling for single-hidden-layer neural networks via a
//! log-concave auxiliary-variable coupling, plus the recursive Greedy Bayes
//! estimator built on top of it.
//!
//! The target density over a neuron weight vector `w` is
//!
//! ```text
//! p(w) ∝ exp(α Σᵢ rᵢ ψ(xᵢ·w)) p₀(w)
//! ```
//!
//! which is in general multimodal. Coupling `w` with the auxiliary variable
//! `ξᵢ = (αc|rᵢ|)^{1/2} xᵢ·w + Zᵢ` splits the joint into a log-concave reverse
//! conditional `p(w|ξ)` and a marginal `p(ξ)` whose score is a conditional
//! expectation under `p(w|ξ)`. Both pieces are sampled with standard
//! log-concave MCMC (hit-and-run over the ℓ₁ ball, MALA for Gaussian priors,
//! Langevin for the outer ξ chain), and one final draw of `w|ξ` lands on the
//! original posterior.
//!
//! Crate layout:
//!
//! - [`model`]: datasets, activations, priors, hyperparameters, residuals.
//! - [`densities`]: log-densities, gradients, Hessians, and the spectral
//!   matrix constructions used by the covariance bounds.
//! - [`samplers`]: the inner `w|ξ` samplers, the outer ξ chain, and the
//!   two-stage pipeline.
//! - [`greedy_bayes`]: the recursive estimator, sample stores, persistence.
//! - [`verification`]: quadrature/rejection oracles and empirical
//!   log-concavity certificates.
//! - [`cli`]: the `fit` / `sample` / `verify` command surface.
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability.

pub mod cli;
pub mod densities;
pub mod error;
pub mod greedy_bayes;
pub mod model;
pub mod report;
pub mod samplers;
pub mod util;
pub mod verification;

pub use densities::{AuxiliaryPoint, DensitySpec};
pub use error::{Error, Result};
pub use greedy_bayes::GreedyBayesModel;
pub use samplers::{ChainConfig, SamplerDiagnostics};
pub use model::{Activation, ActivationKind, Dataset, HyperParams, PriorSpec};
pub use report::CheckReport;

