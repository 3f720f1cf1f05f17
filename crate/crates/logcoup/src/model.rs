//! Data, activation functions, priors, hyperparameters, and residual
//! bookkeeping.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::CheckReport;

/// Supported neuron activation kinds. Both have `|ψ″| ≤ c` everywhere, the
/// property that makes the coupled exponent `g(w)` concave.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    SquaredRelu,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Tanh => write!(f, "tanh"),
            ActivationKind::SquaredRelu => write!(f, "squared_relu"),
        }
    }
}

/// The tight uniform bound on `|ψ″|` for a supported activation.
///
/// tanh: `|ψ″|` is maximized where `tanh(u) = 1/√3`, giving `4/(3√3)`.
/// Hard-coded rather than estimated so threshold constants are reproducible
/// bit-for-bit. Squared ReLU: `ψ″ ∈ {0, 2}` everywhere it exists.
pub fn curvature_constant(kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Tanh => 4.0 / (3.0 * 3.0_f64.sqrt()),
        ActivationKind::SquaredRelu => 2.0,
    }
}

/// An activation function together with its curvature bound `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activation {
    kind: ActivationKind,
    c: f64,
}

impl Activation {
    /// Activation with the tight curvature constant for `kind`.
    pub fn new(kind: ActivationKind) -> Self {
        Activation {
            kind,
            c: curvature_constant(kind),
        }
    }

    /// Activation with an explicit curvature constant, taken as-is.
    ///
    /// Exists for negative controls: passing `c < sup|ψ″|` deliberately
    /// violates the invariant so concavity checks are expected to fail.
    pub fn with_curvature(kind: ActivationKind, c: f64) -> Self {
        Activation { kind, c }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    /// The curvature bound `c` carried by this activation.
    pub fn curvature(&self) -> f64 {
        self.c
    }

    /// `(ψ(u), ψ′(u), ψ″(u))`, validating that `u` is finite.
    pub fn eval(&self, u: f64) -> Result<(f64, f64, f64)> {
        if !u.is_finite() {
            return Err(Error::Input(format!("activation input not finite: {u}")));
        }
        Ok(self.eval_raw(u))
    }

    /// `(ψ(u), ψ′(u), ψ″(u))` without the finiteness check; hot path for
    /// density evaluations whose inputs are finite by construction.
    ///
    /// Squared ReLU second derivative at `u = 0` is defined as 0 (left
    /// value); a measure-zero choice that never affects integrals or `c`.
    #[inline]
    pub fn eval_raw(&self, u: f64) -> (f64, f64, f64) {
        match self.kind {
            ActivationKind::Tanh => {
                let t = u.tanh();
                let sech2 = 1.0 - t * t;
                (t, sech2, -2.0 * t * sech2)
            }
            ActivationKind::SquaredRelu => {
                if u > 0.0 {
                    (u * u, 2.0 * u, 2.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }

    /// `ψ(u)` alone.
    #[inline]
    pub fn psi(&self, u: f64) -> f64 {
        self.eval_raw(u).0
    }
}

/// Prior over neuron weights: uniform on the solid ℓ₁ ball
/// `C = {w : ‖w‖₁ ≤ 1}`, or `N(0, σ₀² I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    UniformL1,
    Gaussian { sigma0_sq: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::UniformL1 => Ok(()),
            PriorSpec::Gaussian { sigma0_sq } => {
                if sigma0_sq.is_finite() && *sigma0_sq > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "gaussian prior requires sigma0_sq > 0, got {sigma0_sq}"
                    )))
                }
            }
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, PriorSpec::Gaussian { .. })
    }

    /// Unnormalized log prior density. Uniform: 0 inside the ball, `−∞`
    /// outside (a sentinel, never an error). Gaussian: `−‖w‖²/(2σ₀²)`.
    pub fn log_unnorm(&self, w: &DVector<f64>) -> f64 {
        match self {
            PriorSpec::UniformL1 => {
                if w.iter().map(|v| v.abs()).sum::<f64>() <= 1.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorSpec::Gaussian { sigma0_sq } => -0.5 * w.norm_squared() / sigma0_sq,
        }
    }

    /// Gradient of the log prior density (the smooth part; zero in the
    /// uniform case where the density is flat on its support).
    pub fn grad_log_unnorm(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            PriorSpec::UniformL1 => DVector::zeros(w.len()),
            PriorSpec::Gaussian { sigma0_sq } => w * (-1.0 / sigma0_sq),
        }
    }

    /// Coefficient `h` such that `∇² log p₀ = h·I` (0 uniform, `−1/σ₀²`
    /// gaussian).
    pub fn hessian_coeff(&self) -> f64 {
        match self {
            PriorSpec::UniformL1 => 0.0,
            PriorSpec::Gaussian { sigma0_sq } => -1.0 / sigma0_sq,
        }
    }

    /// `true` if `w` lies in the prior's support.
    pub fn in_support(&self, w: &DVector<f64>) -> bool {
        match self {
            PriorSpec::UniformL1 => w.iter().map(|v| v.abs()).sum::<f64>() <= 1.0,
            PriorSpec::Gaussian { .. } => w.iter().all(|v| v.is_finite()),
        }
    }
}

/// Per-coordinate variance of the uniform draw over the solid ℓ₁ ball,
/// derived from the Dirichlet construction: a ball draw is `εⱼ·sⱼ` with
/// `s ~ Dirichlet(1,…,1)` over `d+1` categories and random signs `εⱼ`, so
/// `Var(wⱼ) = E[sⱼ²] = 2/((d+1)(d+2))`, with zero off-diagonal covariance.
pub fn uniform_l1_coordinate_variance(d: usize) -> f64 {
    let df = d as f64;
    2.0 / ((df + 1.0) * (df + 2.0))
}

/// Design matrix and responses: `n` observations of `d` covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Data(format!(
                "dataset must have n ≥ 1 and d ≥ 1, got {}×{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.nrows() != y.len() {
            return Err(Error::Data(format!(
                "design matrix has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite entries".into()));
        }
        Ok(Dataset { x, y })
    }

    /// Read a dataset from CSV with header `x1,...,xd,y`, one observation per
    /// row. Ragged rows are rejected.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;

        let headers = reader
            .headers()
            .map_err(|e| Error::Data(format!("bad header in {}: {e}", path.display())))?
            .clone();
        let cols = headers.len();
        if cols < 2 {
            return Err(Error::Data("CSV needs at least columns x1,y".into()));
        }
        let d = cols - 1;
        for (j, name) in headers.iter().enumerate() {
            let expected = if j < d { format!("x{}", j + 1) } else { "y".to_string() };
            if name != expected {
                return Err(Error::Data(format!(
                    "CSV header column {} is '{name}', expected '{expected}'",
                    j + 1
                )));
            }
        }

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| Error::Data(format!("row {}: {e}", idx + 2)))?;
            let mut row = Vec::with_capacity(cols);
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::Data(format!("row {}: '{field}': {e}", idx + 2)))?;
                row.push(v);
            }
            ys.push(row.pop().expect("width checked"));
            xs.extend_from_slice(&row);
        }
        let n = ys.len();
        if n == 0 {
            return Err(Error::Data("CSV contains no observations".into()));
        }
        Dataset::new(DMatrix::from_row_slice(n, d, &xs), DVector::from_vec(ys))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Covariate row `i` (0-based) as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}

/// Check load-time dataset invariants against the chosen prior.
///
/// The entry bound `|x_{i,j}| ≤ 1` is required only with the uniform prior;
/// violations are reported, not thrown. Performed eagerly at load; sampling
/// never re-validates.
pub fn validate_dataset(ds: &Dataset, prior: &PriorSpec) -> CheckReport {
    let digest = crate::report::digest_parts(&[
        &ds.x.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
        &ds.y.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
        format!("{prior:?}").as_bytes(),
    ]);
    match prior {
        PriorSpec::Gaussian { .. } => CheckReport::from_margin(
            "dataset_valid",
            0.0,
            "gaussian prior imposes no entry bound".to_string(),
            digest,
            0,
        ),
        PriorSpec::UniformL1 => {
            let mut max_abs: f64 = 0.0;
            let mut violations = Vec::new();
            for i in 0..ds.n() {
                for j in 0..ds.dim() {
                    let v = ds.x[(i, j)].abs();
                    if v > max_abs {
                        max_abs = v;
                    }
                    if v > 1.0 {
                        violations.push(format!("({},{})={}", i + 1, j + 1, ds.x[(i, j)]));
                    }
                }
            }
            let details = if violations.is_empty() {
                format!("all |x_ij| ≤ 1 (max {max_abs})")
            } else {
                format!("entries exceeding 1: {}", violations.join(", "))
            };
            CheckReport::from_margin("dataset_valid", 1.0 - max_abs, details, digest, 0)
        }
    }
}

/// Posterior scaling, mixture weight, greedy order, and store size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Posterior scaling α ∈ (0,1).
    pub alpha: f64,
    /// Mixture weight β ∈ (0,1).
    pub beta: f64,
    /// Greedy order K.
    pub k: usize,
    /// Stored samples per posterior L.
    pub l: usize,
}

impl HyperParams {
    pub fn new(alpha: f64, beta: f64, k: usize, l: usize) -> Result<Self> {
        let hp = HyperParams { alpha, beta, k, l };
        hp.validate()?;
        Ok(hp)
    }

    /// Hyperparameters with the default scaling `α = n^{−1/2}`.
    pub fn with_default_alpha(n: usize, beta: f64, k: usize, l: usize) -> Result<Self> {
        Self::new(HyperParams::default_alpha(n), beta, k, l)
    }

    pub fn default_alpha(n: usize) -> f64 {
        (n as f64).powf(-0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "beta must lie in (0,1), got {}",
                self.beta
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("greedy order K must be ≥ 1".into()));
        }
        if self.l == 0 {
            return Err(Error::Config("store size L must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Fits and residuals for one stage: `rᵢ = yᵢ − (1−β) f̂ᵢ` holds exactly
/// after every update.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualState {
    pub fits: DVector<f64>,
    pub residuals: DVector<f64>,
}

impl ResidualState {
    /// State for the zero fit: residuals equal the responses.
    pub fn initial(y: &DVector<f64>) -> Self {
        ResidualState {
            fits: DVector::zeros(y.len()),
            residuals: y.clone(),
        }
    }
}

/// Recompute residuals from the fits in `state`: `rᵢ = yᵢ − (1−β) f̂ᵢ`.
pub fn update_residuals(
    state: &ResidualState,
    y: &DVector<f64>,
    beta: f64,
) -> Result<ResidualState> {
    if state.fits.len() != y.len() {
        return Err(Error::Input(format!(
            "fit vector has {} entries but response has {}",
            state.fits.len(),
            y.len()
        )));
    }
    let residuals = y - &state.fits * (1.0 - beta);
    Ok(ResidualState {
        fits: state.fits.clone(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tanh_at_zero() {
        let act = Activation::new(ActivationKind::Tanh);
        let (v, d1, d2) = act.eval(0.0).unwrap();
        assert_eq!((v, d1, d2), (0.0, 1.0, 0.0));
    }

    #[test]
    fn squared_relu_on_negative_half_line() {
        let act = Activation::new(ActivationKind::SquaredRelu);
        assert_eq!(act.eval(-1.0).unwrap(), (0.0, 0.0, 0.0));
        // left value at the kink
        assert_eq!(act.eval(0.0).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn non_finite_input_rejected() {
        let act = Activation::new(ActivationKind::Tanh);
        assert!(act.eval(f64::NAN).is_err());
        assert!(act.eval(f64::INFINITY).is_err());
    }

    #[test]
    fn tanh_curvature_attained_at_stationary_point() {
        // |ψ″| is maximized where tanh(u) = 1/√3.
        let act = Activation::new(ActivationKind::Tanh);
        let u_star = (1.0 / 3.0_f64.sqrt()).atanh();
        let (_, _, d2) = act.eval(u_star).unwrap();
        assert_relative_eq!(d2.abs(), 4.0 / (3.0 * 3.0_f64.sqrt()), epsilon = 1e-15);
    }

    #[test]
    fn curvature_constants_match_dense_grid_maximum() {
        // 10⁶-point grid oracle: c must dominate |ψ″| everywhere, and the
        // numeric maximum must agree with the hard-coded constant.
        for kind in [ActivationKind::Tanh, ActivationKind::SquaredRelu] {
            let act = Activation::new(kind);
            let c = act.curvature();
            let mut grid_max: f64 = 0.0;
            for i in 0..1_000_000 {
                let u = -10.0 + 20.0 * (i as f64) / 999_999.0;
                let (_, _, d2) = act.eval_raw(u);
                grid_max = grid_max.max(d2.abs());
                assert!(d2.abs() <= c + 1e-12, "|ψ″({u})| = {} > c = {c}", d2.abs());
            }
            assert!(grid_max <= c + 1e-12);
            // The grid comes within 1e-9 of the supremum for both kinds.
            assert!(c - grid_max < 1e-9, "c={c} grid_max={grid_max}");
        }
    }

    #[test]
    fn tanh_curvature_grid_maximization_matches_formula_closely() {
        // Fine grid around the stationary point, 1e-12 agreement.
        let act = Activation::new(ActivationKind::Tanh);
        let u_star = (1.0 / 3.0_f64.sqrt()).atanh();
        let mut best: f64 = 0.0;
        for i in 0..200_001 {
            let u = u_star - 1e-3 + 2e-3 * (i as f64) / 200_000.0;
            best = best.max(act.eval_raw(u).2.abs());
        }
        assert_relative_eq!(best, curvature_constant(ActivationKind::Tanh), epsilon = 1e-12);
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let mut rng = crate::util::derive_rng(7, &[1]);
        use rand::Rng;
        let h = 1e-5;
        for kind in [ActivationKind::Tanh, ActivationKind::SquaredRelu] {
            let act = Activation::new(kind);
            for _ in 0..1000 {
                let u: f64 = rng.random_range(-4.0..4.0);
                // keep squared relu away from its kink where ψ″ jumps
                if kind == ActivationKind::SquaredRelu && u.abs() < 1e-2 {
                    continue;
                }
                let (_, d1, d2) = act.eval_raw(u);
                let (vp, d1p, _) = act.eval_raw(u + h);
                let (vm, d1m, _) = act.eval_raw(u - h);
                let fd1 = (vp - vm) / (2.0 * h);
                let fd2 = (d1p - d1m) / (2.0 * h);
                assert_relative_eq!(d1, fd1, epsilon = 1e-6, max_relative = 1e-6);
                assert_relative_eq!(d2, fd2, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn residual_update_matches_definition() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let state = ResidualState {
            fits: DVector::from_vec(vec![1.0, 1.0]),
            residuals: DVector::zeros(2),
        };
        let updated = update_residuals(&state, &y, 0.5).unwrap();
        assert_eq!(updated.residuals.as_slice(), &[0.5, 1.5]);
    }

    #[test]
    fn residual_update_zero_fit_and_beta_one_edge_cases() {
        let y = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        let zero = ResidualState::initial(&y);
        let r = update_residuals(&zero, &y, 0.25).unwrap();
        assert_eq!(r.residuals, y);

        let state = ResidualState {
            fits: DVector::from_vec(vec![9.0, 9.0, 9.0]),
            residuals: DVector::zeros(3),
        };
        let r = update_residuals(&state, &y, 1.0).unwrap();
        assert_eq!(r.residuals, y);
    }

    #[test]
    fn residual_update_rejects_length_mismatch() {
        let y = DVector::from_vec(vec![1.0]);
        let state = ResidualState::initial(&DVector::from_vec(vec![1.0, 2.0]));
        assert!(update_residuals(&state, &y, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn residual_update_is_idempotent(
            fits in proptest::collection::vec(-5.0_f64..5.0, 1..20),
            beta in 0.01_f64..0.99,
        ) {
            let n = fits.len();
            let y = DVector::from_fn(n, |i, _| (i as f64) - 1.5);
            let state = ResidualState {
                fits: DVector::from_vec(fits),
                residuals: DVector::zeros(n),
            };
            let once = update_residuals(&state, &y, beta).unwrap();
            let twice = update_residuals(&once, &y, beta).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn dataset_csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "x1,x2,y\n0.5,-0.25,1.0\n-1.0,1.0,2.0\n").unwrap();
        let ds = Dataset::from_csv(&path).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.y().as_slice(), &[1.0, 2.0]);
        assert_eq!(ds.x()[(1, 0)], -1.0);

        let report = validate_dataset(&ds, &PriorSpec::UniformL1);
        assert!(report.passed);
    }

    #[test]
    fn dataset_csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "x1,x2,y\n0.5,1.0,1.0\n0.5,1.0\n").unwrap();
        assert!(Dataset::from_csv(&path).is_err());
    }

    #[test]
    fn dataset_entry_bound_is_prior_specific() {
        let x = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        let y = DVector::from_vec(vec![0.0, 0.0]);
        let ds = Dataset::new(x, y).unwrap();

        let uniform = validate_dataset(&ds, &PriorSpec::UniformL1);
        assert!(!uniform.passed);
        assert!(uniform.details.contains("(1,1)"));
        assert!(uniform.margin < 0.0);

        let gaussian = validate_dataset(&ds, &PriorSpec::Gaussian { sigma0_sq: 1.0 });
        assert!(gaussian.passed);
    }

    #[test]
    fn hyperparams_validated() {
        assert!(HyperParams::new(0.5, 0.5, 1, 1).is_ok());
        assert!(HyperParams::new(1.5, 0.5, 1, 1).is_err());
        assert!(HyperParams::new(0.5, 0.0, 1, 1).is_err());
        assert!(HyperParams::new(0.5, 0.5, 0, 1).is_err());
        let hp = HyperParams::with_default_alpha(100, 0.2, 3, 10).unwrap();
        assert_relative_eq!(hp.alpha, 0.1);
    }

    #[test]
    fn uniform_ball_variance_constant() {
        assert_relative_eq!(uniform_l1_coordinate_variance(1), 1.0 / 3.0);
        assert_relative_eq!(uniform_l1_coordinate_variance(2), 1.0 / 6.0);
        assert_relative_eq!(uniform_l1_coordinate_variance(5), 2.0 / 42.0);
    }
}
