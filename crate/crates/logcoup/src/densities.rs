//! Log-densities, gradients, and Hessians of the coupled model, plus the
//! spectral matrix constructions behind the covariance bounds.
//!
//! All log-densities are unnormalized: samplers only need differences and
//! gradients, and normalizing constants are recovered (when needed at all)
//! by the verification quadrature oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Activation, PriorSpec};

/// Frozen bundle defining `p(w)`, `p(w|ξ)`, and `p(ξ)` for one Greedy Bayes
/// step: the active design rows, their residuals, the activation, the
/// posterior scale α, and the prior.
///
/// The scaled design `(αc|R|)^{1/2} X` is precomputed once: it appears in
/// the reverse conditional, the ξ-score, and the Hessian diagnostic.
#[derive(Clone, Debug)]
pub struct DensitySpec {
    x_slice: DMatrix<f64>,
    r: DVector<f64>,
    act: Activation,
    alpha: f64,
    prior: PriorSpec,
    scaled_design: DMatrix<f64>,
}

impl DensitySpec {
    pub fn new(
        x_slice: DMatrix<f64>,
        r: DVector<f64>,
        act: Activation,
        alpha: f64,
        prior: PriorSpec,
    ) -> Result<Self> {
        if x_slice.nrows() != r.len() {
            return Err(Error::Input(format!(
                "design slice has {} rows but residual vector has {}",
                x_slice.nrows(),
                r.len()
            )));
        }
        if x_slice.ncols() == 0 {
            return Err(Error::Input("design slice needs d ≥ 1 columns".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Input(format!("alpha must be finite and ≥ 0, got {alpha}")));
        }
        if x_slice.iter().any(|v| !v.is_finite()) || r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("design slice or residuals contain non-finite entries".into()));
        }
        prior.validate()?;

        let c = act.curvature();
        let mut scaled_design = x_slice.clone();
        for i in 0..x_slice.nrows() {
            let scale = (alpha * c * r[i].abs()).sqrt();
            for j in 0..x_slice.ncols() {
                scaled_design[(i, j)] *= scale;
            }
        }
        Ok(DensitySpec {
            x_slice,
            r,
            act,
            alpha,
            prior,
            scaled_design,
        })
    }

    /// Number of active rows (may be zero: the posterior is then the prior).
    pub fn n_rows(&self) -> usize {
        self.x_slice.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x_slice.ncols()
    }

    pub fn x_slice(&self) -> &DMatrix<f64> {
        &self.x_slice
    }

    pub fn residuals(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn activation(&self) -> &Activation {
        &self.act
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    /// `(αc|R|)^{1/2} X`, one row per active observation.
    pub fn scaled_design(&self) -> &DMatrix<f64> {
        &self.scaled_design
    }

    /// `‖r‖∞` over the active rows; 0 when there are none.
    pub fn r_inf(&self) -> f64 {
        self.r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_w(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::Input(format!(
                "weight vector has {} entries, spec dimension is {}",
                w.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_xi(&self, xi: &AuxiliaryPoint) -> Result<()> {
        if xi.len() != self.n_rows() {
            return Err(Error::Input(format!(
                "auxiliary point has {} entries, spec has {} rows",
                xi.len(),
                self.n_rows()
            )));
        }
        Ok(())
    }
}

/// A value ξ ∈ ℝⁿ of the coupled auxiliary variable.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryPoint {
    xi: DVector<f64>,
}

impl AuxiliaryPoint {
    pub fn new(xi: DVector<f64>) -> Result<Self> {
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("auxiliary point contains non-finite entries".into()));
        }
        Ok(AuxiliaryPoint { xi })
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.len() == 0
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.xi
    }
}

/// `g(w) = Σᵢ α rᵢ ψ(xᵢ·w) − (αc|rᵢ|/2)(xᵢ·w)²` with gradient and Hessian.
///
/// The Hessian `α Σᵢ |rᵢ|(sign(rᵢ)ψ″(xᵢ·w) − c) xᵢxᵢᵀ` is a sum of
/// nonpositive multiples of rank-one matrices, hence negative semidefinite.
pub fn g_value_grad_hess(
    spec: &DensitySpec,
    w: &DVector<f64>,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    spec.check_w(w)?;
    let d = spec.dim();
    let ac = spec.alpha * spec.act.curvature();
    let u = &spec.x_slice * w;

    let mut value = 0.0;
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..spec.n_rows() {
        let (psi, psi1, psi2) = spec.act.eval_raw(u[i]);
        let ri = spec.r[i];
        let abs_ri = ri.abs();
        value += spec.alpha * ri * psi - 0.5 * ac * abs_ri * u[i] * u[i];
        let gcoef = spec.alpha * ri * psi1 - ac * abs_ri * u[i];
        let hcoef = spec.alpha * abs_ri * (ri.signum() * psi2 - spec.act.curvature());
        for a in 0..d {
            let xa = spec.x_slice[(i, a)];
            grad[a] += gcoef * xa;
            for b in 0..=a {
                let inc = hcoef * xa * spec.x_slice[(i, b)];
                hess[(a, b)] += inc;
                if a != b {
                    hess[(b, a)] += inc;
                }
            }
        }
    }
    Ok((value, grad, hess))
}

/// Unnormalized log target `α Σᵢ rᵢ ψ(xᵢ·w) + log p₀(w)`.
///
/// With the uniform prior the value is `−∞` outside `C`; constrained
/// samplers treat that sentinel as rejection, never as an error.
pub fn log_target_unnorm(spec: &DensitySpec, w: &DVector<f64>) -> Result<f64> {
    spec.check_w(w)?;
    let prior = spec.prior.log_unnorm(w);
    if prior == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let u = &spec.x_slice * w;
    let mut s = 0.0;
    for i in 0..spec.n_rows() {
        s += spec.r[i] * spec.act.psi(u[i]);
    }
    Ok(spec.alpha * s + prior)
}

/// Unnormalized log reverse conditional
/// `g(w) + ((αc|R|)^{1/2}Xw)·ξ + log p₀(w)` and its gradient in `w`.
///
/// Outside the uniform prior's support the value is `−∞` and the returned
/// gradient is that of the smooth part only.
pub fn log_reverse_conditional_unnorm(
    spec: &DensitySpec,
    w: &DVector<f64>,
    xi: &AuxiliaryPoint,
) -> Result<(f64, DVector<f64>)> {
    spec.check_w(w)?;
    spec.check_xi(xi)?;
    let (g, g_grad, _) = g_value_grad_hess_no_hess(spec, w)?;
    let coupling = (&spec.scaled_design * w).dot(xi.as_vector());
    let value = g + coupling + spec.prior.log_unnorm(w);
    let grad = g_grad + spec.scaled_design.transpose() * xi.as_vector()
        + spec.prior.grad_log_unnorm(w);
    Ok((value, grad))
}

// Value and gradient of g without assembling the Hessian; shared hot path.
fn g_value_grad_hess_no_hess(
    spec: &DensitySpec,
    w: &DVector<f64>,
) -> Result<(f64, DVector<f64>, ())> {
    spec.check_w(w)?;
    let d = spec.dim();
    let ac = spec.alpha * spec.act.curvature();
    let u = &spec.x_slice * w;
    let mut value = 0.0;
    let mut grad = DVector::zeros(d);
    for i in 0..spec.n_rows() {
        let (psi, psi1, _) = spec.act.eval_raw(u[i]);
        let ri = spec.r[i];
        value += spec.alpha * ri * psi - 0.5 * ac * ri.abs() * u[i] * u[i];
        let gcoef = spec.alpha * ri * psi1 - ac * ri.abs() * u[i];
        for a in 0..d {
            grad[a] += gcoef * spec.x_slice[(i, a)];
        }
    }
    Ok((value, grad, ()))
}

/// Hessian of `log p(w|ξ)`: `∇²g(w) + ∇² log p₀(w)`, independent of ξ.
pub fn reverse_conditional_hessian(spec: &DensitySpec, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (_, _, mut hess) = g_value_grad_hess(spec, w)?;
    let h = spec.prior.hessian_coeff();
    for a in 0..spec.dim() {
        hess[(a, a)] += h;
    }
    Ok(hess)
}

/// Monte Carlo estimate of the ξ-score
/// `∇ log p(ξ) = −ξ + E[(αc|R|)^{1/2}Xw | ξ]`, using the supplied draws
/// from `p(w|ξ)`.
pub fn xi_score(
    spec: &DensitySpec,
    xi: &AuxiliaryPoint,
    w_samples: &[DVector<f64>],
) -> Result<DVector<f64>> {
    spec.check_xi(xi)?;
    if w_samples.is_empty() {
        return Err(Error::Input("xi_score needs at least one w sample".into()));
    }
    let mut mean = DVector::zeros(spec.n_rows());
    for w in w_samples {
        spec.check_w(w)?;
        mean += &spec.scaled_design * w;
    }
    mean /= w_samples.len() as f64;
    Ok(mean - xi.as_vector())
}

/// `−I + Cov[(αc|R|)^{1/2}Xw]` with the covariance estimated empirically
/// (unbiased `M−1` denominator) over the supplied draws. The verification
/// module tests that the covariance part has largest eigenvalue below 1.
pub fn xi_hessian_diagnostic(
    spec: &DensitySpec,
    w_samples: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    if w_samples.len() < 2 {
        return Err(Error::Input(format!(
            "covariance estimate needs ≥ 2 samples, got {}",
            w_samples.len()
        )));
    }
    let n = spec.n_rows();
    let mut projected = Vec::with_capacity(w_samples.len());
    for w in w_samples {
        spec.check_w(w)?;
        projected.push(&spec.scaled_design * w);
    }
    let mut mean = DVector::zeros(n);
    for p in &projected {
        mean += p;
    }
    mean /= projected.len() as f64;

    let mut cov = DMatrix::zeros(n, n);
    for p in &projected {
        let centered = p - &mean;
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= (projected.len() - 1) as f64;
    for i in 0..n {
        cov[(i, i)] -= 1.0;
    }
    Ok(cov)
}

/// Thin SVD factors of the active design and the matrices of the
/// Brascamp–Lieb covariance bound on `∇² log p(ξ)`.
#[derive(Clone, Debug)]
pub struct Lemma3Matrices {
    /// Left singular vectors, rank-truncated, one column per kept value.
    pub u: DMatrix<f64>,
    /// Kept singular values of the design slice.
    pub lambda: DVector<f64>,
    /// Right singular vectors matching `lambda`.
    pub v: DMatrix<f64>,
    /// Largest squared singular value of the design slice.
    pub lambda_max: f64,
    /// `(αc|R|)^{1/2} U`.
    pub a: DMatrix<f64>,
    /// `Uᵀ (αc|R|) U`.
    pub b: DMatrix<f64>,
    /// Diagonal of `S(w)`: `ψ″(xᵢ·w)` per active row.
    pub s_of_w: DVector<f64>,
    /// `α Uᵀ R S(w) U`.
    pub c_of_w: DMatrix<f64>,
    /// Rank deficiency was detected; the bound is evaluated on the
    /// positive-rank subspace only.
    pub degenerate: bool,
}

impl Lemma3Matrices {
    /// The bracketed bound term `−B⁻¹ + ((1/σ₀²)Λ⁻² − C(w) + B)⁻¹`.
    ///
    /// At `σ₀² = 1/(αc‖r‖∞ λ_max)` the term is negative semidefinite for
    /// every `w`.
    pub fn bound_term(&self, sigma0_sq: f64) -> Result<DMatrix<f64>> {
        if !(sigma0_sq.is_finite() && sigma0_sq > 0.0) {
            return Err(Error::Input(format!("sigma0_sq must be positive, got {sigma0_sq}")));
        }
        let p = self.lambda.len();
        if p == 0 {
            return Err(Error::Degenerate("design slice has rank zero".into()));
        }
        let b_inv = nalgebra::Cholesky::new(self.b.clone())
            .ok_or_else(|| Error::Degenerate("B = Uᵀ(αc|R|)U is singular".into()))?
            .inverse();
        let mut inner = self.b.clone() - &self.c_of_w;
        for i in 0..p {
            inner[(i, i)] += 1.0 / (sigma0_sq * self.lambda[i] * self.lambda[i]);
        }
        let inner_inv = inner
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("(1/σ₀²)Λ⁻² − C(w) + B is singular".into()))?;
        let term = inner_inv - b_inv;
        // kill roundoff asymmetry before any eigenvalue use downstream
        Ok(symmetrize(&term))
    }

    /// Lemma 2 variance threshold `1/(αc‖r‖∞ λ_max)` for this design;
    /// infinite when the exponent vanishes (α = 0 or r = 0).
    pub fn threshold_sigma0_sq(&self, spec: &DensitySpec) -> f64 {
        1.0 / (spec.alpha() * spec.activation().curvature() * spec.r_inf() * self.lambda_max)
    }
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric matrix (explicitly symmetrized first).
pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = symmetrize(m);
    let eig = nalgebra::SymmetricEigen::new(sym);
    eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Build the Lemma 3 factor bundle at `w`.
///
/// Singular values below `1e−12 · λ_max(Λ)` are dropped; if any are, the
/// bundle is flagged degenerate and the bound applies on the kept subspace.
pub fn build_lemma3(spec: &DensitySpec, w: &DVector<f64>) -> Result<Lemma3Matrices> {
    spec.check_w(w)?;
    let m = spec.n_rows();
    let d = spec.dim();
    if m == 0 {
        return Ok(Lemma3Matrices {
            u: DMatrix::zeros(0, 0),
            lambda: DVector::zeros(0),
            v: DMatrix::zeros(d, 0),
            lambda_max: 0.0,
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 0),
            s_of_w: DVector::zeros(0),
            c_of_w: DMatrix::zeros(0, 0),
            degenerate: true,
        });
    }

    let svd = spec.x_slice.clone().svd(true, true);
    let u_full = svd.u.ok_or_else(|| Error::Degenerate("SVD did not return U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD did not return Vᵀ".into()))?;
    let sv = svd.singular_values;
    let sv_max = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    let kept: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > sv_max * 1e-12).collect();
    let degenerate = kept.len() < sv.len() || sv_max == 0.0;

    let p = kept.len();
    let mut u = DMatrix::zeros(m, p);
    let mut v = DMatrix::zeros(d, p);
    let mut lambda = DVector::zeros(p);
    for (col, &idx) in kept.iter().enumerate() {
        lambda[col] = sv[idx];
        for row in 0..m {
            u[(row, col)] = u_full[(row, idx)];
        }
        for row in 0..d {
            v[(row, col)] = v_t[(idx, row)];
        }
    }
    let lambda_max = sv_max * sv_max;

    let ac = spec.alpha * spec.act.curvature();
    let mut a = u.clone();
    for i in 0..m {
        let s = (ac * spec.r[i].abs()).sqrt();
        for j in 0..p {
            a[(i, j)] *= s;
        }
    }

    // B = Uᵀ diag(αc|rᵢ|) U and C(w) = α Uᵀ diag(rᵢ ψ″(xᵢ·w)) U
    let xw = &spec.x_slice * w;
    let mut s_of_w = DVector::zeros(m);
    let mut scaled_b = u.clone();
    let mut scaled_c = u.clone();
    for i in 0..m {
        let (_, _, psi2) = spec.act.eval_raw(xw[i]);
        s_of_w[i] = psi2;
        let wb = ac * spec.r[i].abs();
        let wc = spec.alpha * spec.r[i] * psi2;
        for j in 0..p {
            scaled_b[(i, j)] *= wb;
            scaled_c[(i, j)] *= wc;
        }
    }
    let b = symmetrize(&(u.transpose() * scaled_b));
    let c_of_w = symmetrize(&(u.transpose() * scaled_c));

    Ok(Lemma3Matrices {
        u,
        lambda,
        v,
        lambda_max,
        a,
        b,
        s_of_w,
        c_of_w,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, ActivationKind, PriorSpec};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_spec(
        n: usize,
        d: usize,
        kind: ActivationKind,
        prior: PriorSpec,
        seed: u64,
    ) -> DensitySpec {
        let mut rng = crate::util::derive_rng(seed, &[99]);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let r = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        DensitySpec::new(x, r, Activation::new(kind), 0.4, prior).unwrap()
    }

    #[test]
    fn scaled_design_row_norms() {
        let spec = random_spec(6, 3, ActivationKind::Tanh, PriorSpec::UniformL1, 1);
        let ac = spec.alpha() * spec.activation().curvature();
        for i in 0..spec.n_rows() {
            let row_sq: f64 = (0..spec.dim()).map(|j| spec.scaled_design()[(i, j)].powi(2)).sum();
            let x_sq: f64 = (0..spec.dim()).map(|j| spec.x_slice()[(i, j)].powi(2)).sum();
            assert_relative_eq!(row_sq, ac * spec.residuals()[i].abs() * x_sq, epsilon = 1e-12);
        }
    }

    #[test]
    fn g_vanishes_with_zero_residuals_and_at_origin() {
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -0.8, 0.5, 0.1]);
        let spec = DensitySpec::new(
            x,
            DVector::zeros(2),
            Activation::new(ActivationKind::Tanh),
            0.5,
            PriorSpec::UniformL1,
        )
        .unwrap();
        let w = DVector::from_vec(vec![0.2, -0.1]);
        let (g, grad, hess) = g_value_grad_hess(&spec, &w).unwrap();
        assert_eq!(g, 0.0);
        assert!(grad.iter().all(|&v| v == 0.0));
        assert!(hess.iter().all(|&v| v == 0.0));

        let spec2 = random_spec(4, 2, ActivationKind::Tanh, PriorSpec::UniformL1, 2);
        let (g0, _, _) = g_value_grad_hess(&spec2, &DVector::zeros(2)).unwrap();
        assert_eq!(g0, 0.0);
    }

    #[test]
    fn g_matches_symbolic_one_dimensional_formula() {
        // n=1, d=1, x=1, r=1, α=0.5, tanh: g(w) = 0.5 tanh(w) − (0.5 c/2) w².
        let spec = DensitySpec::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![1.0]),
            Activation::new(ActivationKind::Tanh),
            0.5,
            PriorSpec::UniformL1,
        )
        .unwrap();
        let c = spec.activation().curvature();
        let w = DVector::from_vec(vec![0.3]);
        let (g, grad, hess) = g_value_grad_hess(&spec, &w).unwrap();
        let expected = 0.5 * 0.3_f64.tanh() - 0.5 * c / 2.0 * 0.09;
        assert_relative_eq!(g, expected, epsilon = 1e-15);
        let t: f64 = 0.3_f64.tanh();
        assert_relative_eq!(grad[0], 0.5 * (1.0 - t * t) - 0.5 * c * 0.3, epsilon = 1e-15);
        assert_relative_eq!(
            hess[(0, 0)],
            0.5 * (-2.0 * t * (1.0 - t * t)) - 0.5 * c,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let h = 1e-6;
        for seed in 0..4u64 {
            let prior = if seed % 2 == 0 {
                PriorSpec::UniformL1
            } else {
                PriorSpec::Gaussian { sigma0_sq: 0.7 }
            };
            let kind = if seed < 2 { ActivationKind::Tanh } else { ActivationKind::SquaredRelu };
            let spec = random_spec(5, 3, kind, prior, 10 + seed);
            let mut rng = crate::util::derive_rng(seed, &[7]);
            for _ in 0..25 {
                let w = DVector::from_fn(3, |_, _| rng.random_range(-0.2..0.2));
                let xi = AuxiliaryPoint::new(DVector::from_fn(5, |_, _| {
                    rng.random_range(-1.0..1.0)
                }))
                .unwrap();

                let (_, g_grad, _) = g_value_grad_hess(&spec, &w).unwrap();
                let (_, rc_grad) = log_reverse_conditional_unnorm(&spec, &w, &xi).unwrap();
                for a in 0..3 {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[a] += h;
                    wm[a] -= h;
                    let (gp, _, _) = g_value_grad_hess(&spec, &wp).unwrap();
                    let (gm, _, _) = g_value_grad_hess(&spec, &wm).unwrap();
                    let fd = (gp - gm) / (2.0 * h);
                    assert_relative_eq!(g_grad[a], fd, epsilon = 1e-6, max_relative = 1e-6);

                    let (rp, _) = log_reverse_conditional_unnorm(&spec, &wp, &xi).unwrap();
                    let (rm, _) = log_reverse_conditional_unnorm(&spec, &wm, &xi).unwrap();
                    if rp.is_finite() && rm.is_finite() {
                        let fd = (rp - rm) / (2.0 * h);
                        assert_relative_eq!(rc_grad[a], fd, epsilon = 1e-5, max_relative = 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn g_hessian_is_negative_semidefinite() {
        let mut rng = crate::util::derive_rng(3, &[5]);
        for seed in 0..10u64 {
            let kind = if seed % 2 == 0 { ActivationKind::Tanh } else { ActivationKind::SquaredRelu };
            let spec = random_spec(6, 4, kind, PriorSpec::UniformL1, 20 + seed);
            for _ in 0..100 {
                let w = DVector::from_fn(4, |_, _| rng.random_range(-0.5..0.5));
                let (_, _, hess) = g_value_grad_hess(&spec, &w).unwrap();
                assert!(max_symmetric_eigenvalue(&hess) <= 1e-10);
            }
        }
    }

    #[test]
    fn reverse_hessian_prior_contributions() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]);
        let r = DVector::zeros(2);
        let uniform = DensitySpec::new(
            x.clone(),
            r.clone(),
            Activation::new(ActivationKind::Tanh),
            0.3,
            PriorSpec::UniformL1,
        )
        .unwrap();
        let w = DVector::from_vec(vec![0.1, 0.1]);
        let h = reverse_conditional_hessian(&uniform, &w).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));

        let gaussian = DensitySpec::new(
            x,
            r,
            Activation::new(ActivationKind::Tanh),
            0.3,
            PriorSpec::Gaussian { sigma0_sq: 0.5 },
        )
        .unwrap();
        let h = reverse_conditional_hessian(&gaussian, &w).unwrap();
        assert_relative_eq!(h[(0, 0)], -2.0, epsilon = 1e-15);
        assert_relative_eq!(h[(1, 1)], -2.0, epsilon = 1e-15);
        assert_eq!(h[(0, 1)], 0.0);
    }

    #[test]
    fn log_target_uniform_support_sentinel() {
        let spec = random_spec(3, 2, ActivationKind::Tanh, PriorSpec::UniformL1, 30);
        let outside = DVector::from_vec(vec![0.9, 0.4]);
        assert_eq!(log_target_unnorm(&spec, &outside).unwrap(), f64::NEG_INFINITY);
        let inside = DVector::from_vec(vec![0.3, 0.3]);
        assert!(log_target_unnorm(&spec, &inside).unwrap().is_finite());
    }

    #[test]
    fn log_target_alpha_zero_reduces_to_prior() {
        let x = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 0.25, 0.75]);
        let r = DVector::from_vec(vec![1.0, -2.0]);
        let spec = DensitySpec::new(
            x,
            r,
            Activation::new(ActivationKind::Tanh),
            0.0,
            PriorSpec::Gaussian { sigma0_sq: 0.8 },
        )
        .unwrap();
        let w1 = DVector::from_vec(vec![0.4, -0.2]);
        let w2 = DVector::from_vec(vec![-0.1, 0.6]);
        let lhs = log_target_unnorm(&spec, &w1).unwrap() - log_target_unnorm(&spec, &w2).unwrap();
        let rhs = spec.prior().log_unnorm(&w1) - spec.prior().log_unnorm(&w2);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn reverse_conditional_xi_zero_equals_g_plus_prior() {
        let spec = random_spec(4, 3, ActivationKind::Tanh, PriorSpec::Gaussian { sigma0_sq: 1.0 }, 40);
        let w = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let xi = AuxiliaryPoint::new(DVector::zeros(4)).unwrap();
        let (v, _) = log_reverse_conditional_unnorm(&spec, &w, &xi).unwrap();
        let (g, _, _) = g_value_grad_hess(&spec, &w).unwrap();
        assert_relative_eq!(v, g + spec.prior().log_unnorm(&w), epsilon = 1e-14);
    }

    #[test]
    fn zero_residuals_degenerate_coupling_is_exactly_prior() {
        let x = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.9]);
        let spec = DensitySpec::new(
            x,
            DVector::zeros(2),
            Activation::new(ActivationKind::Tanh),
            0.4,
            PriorSpec::Gaussian { sigma0_sq: 0.6 },
        )
        .unwrap();
        assert!(spec.scaled_design().iter().all(|&v| v == 0.0));
        let w = DVector::from_vec(vec![0.3, -0.5]);
        let xi = AuxiliaryPoint::new(DVector::from_vec(vec![2.0, -3.0])).unwrap();
        let (v, grad) = log_reverse_conditional_unnorm(&spec, &w, &xi).unwrap();
        assert_relative_eq!(v, spec.prior().log_unnorm(&w), epsilon = 1e-14);
        assert_relative_eq!(
            (grad - spec.prior().grad_log_unnorm(&w)).norm(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn score_with_zero_residuals_is_minus_xi() {
        let x = DMatrix::from_row_slice(2, 1, &[0.4, -0.6]);
        let spec = DensitySpec::new(
            x,
            DVector::zeros(2),
            Activation::new(ActivationKind::Tanh),
            0.4,
            PriorSpec::UniformL1,
        )
        .unwrap();
        let xi = AuxiliaryPoint::new(DVector::from_vec(vec![0.7, -0.2])).unwrap();
        let samples = vec![DVector::from_vec(vec![0.5]), DVector::from_vec(vec![-0.3])];
        let score = xi_score(&spec, &xi, &samples).unwrap();
        assert_relative_eq!((score + xi.as_vector()).norm(), 0.0, epsilon = 1e-15);

        // M=1 with w=0 also gives exactly −ξ
        let spec2 = random_spec(2, 1, ActivationKind::Tanh, PriorSpec::UniformL1, 50);
        let score2 = xi_score(&spec2, &xi, &[DVector::zeros(1)]).unwrap();
        assert_relative_eq!((score2 + xi.as_vector()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn score_plus_xi_is_linear_in_sample_mean() {
        let spec = random_spec(3, 2, ActivationKind::Tanh, PriorSpec::UniformL1, 60);
        let xi = AuxiliaryPoint::new(DVector::from_vec(vec![0.1, 0.2, -0.3])).unwrap();
        let samples = vec![
            DVector::from_vec(vec![0.2, 0.1]),
            DVector::from_vec(vec![-0.1, 0.3]),
        ];
        let doubled: Vec<_> = samples.iter().map(|w| w * 2.0).collect();
        let s1 = xi_score(&spec, &xi, &samples).unwrap() + xi.as_vector();
        let s2 = xi_score(&spec, &xi, &doubled).unwrap() + xi.as_vector();
        assert_relative_eq!((s2 - s1 * 2.0).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn hessian_diagnostic_degenerate_cases() {
        let spec = random_spec(3, 2, ActivationKind::Tanh, PriorSpec::UniformL1, 70);
        let w = DVector::from_vec(vec![0.2, -0.2]);
        let same = vec![w.clone(), w.clone(), w];
        let diag = xi_hessian_diagnostic(&spec, &same).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { -1.0 } else { 0.0 };
                assert_relative_eq!(diag[(i, j)], expected, epsilon = 1e-14);
            }
        }
        assert!(xi_hessian_diagnostic(&spec, &same[..1]).is_err());
    }

    #[test]
    fn lemma3_reconstruction_and_curvature_bound() {
        let mut rng = crate::util::derive_rng(8, &[11]);
        let spec = random_spec(6, 3, ActivationKind::Tanh, PriorSpec::Gaussian { sigma0_sq: 0.4 }, 80);
        let w = DVector::from_vec(vec![0.1, 0.2, -0.1]);
        let l3 = build_lemma3(&spec, &w).unwrap();
        assert!(!l3.degenerate);

        // ‖X − UΛVᵀ‖ ≤ 1e−8 ‖X‖
        let mut recon = &l3.u * DMatrix::from_diagonal(&l3.lambda) * l3.v.transpose();
        recon -= spec.x_slice();
        assert!(recon.norm() <= 1e-8 * spec.x_slice().norm());

        // C(w) ⪯ αc‖r‖∞ I at many w
        let bound = spec.alpha() * spec.activation().curvature() * spec.r_inf();
        for _ in 0..50 {
            let w = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let l3 = build_lemma3(&spec, &w).unwrap();
            let mut shifted = l3.c_of_w.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] -= bound;
            }
            assert!(max_symmetric_eigenvalue(&shifted) <= 1e-8);
        }
    }

    #[test]
    fn lemma3_bound_term_nsd_at_threshold() {
        let mut rng = crate::util::derive_rng(9, &[13]);
        let spec = random_spec(7, 3, ActivationKind::Tanh, PriorSpec::Gaussian { sigma0_sq: 0.4 }, 90);
        for _ in 0..100 {
            let w = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let l3 = build_lemma3(&spec, &w).unwrap();
            let sigma = l3.threshold_sigma0_sq(&spec);
            let term = l3.bound_term(sigma).unwrap();
            assert!(max_symmetric_eigenvalue(&term) <= 1e-8);
        }
    }

    #[test]
    fn lemma3_c_of_w_zero_when_second_derivative_vanishes() {
        // squared relu with all xᵢ·w < 0 ⇒ ψ″ ≡ 0 at the evaluated w
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.3, 0.7, 0.9, 0.1]);
        let r = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let spec = DensitySpec::new(
            x,
            r,
            Activation::new(ActivationKind::SquaredRelu),
            0.3,
            PriorSpec::Gaussian { sigma0_sq: 0.5 },
        )
        .unwrap();
        let w = DVector::from_vec(vec![-1.0, -1.0]);
        let l3 = build_lemma3(&spec, &w).unwrap();
        assert!(l3.s_of_w.iter().all(|&v| v == 0.0));
        assert!(l3.c_of_w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lemma3_rank_deficiency_is_reported() {
        // duplicate column ⇒ rank 1 in a 2-column design
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, -0.2, -0.2, 0.8, 0.8]);
        let r = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let spec = DensitySpec::new(
            x,
            r,
            Activation::new(ActivationKind::Tanh),
            0.3,
            PriorSpec::Gaussian { sigma0_sq: 0.5 },
        )
        .unwrap();
        let l3 = build_lemma3(&spec, &DVector::zeros(2)).unwrap();
        assert!(l3.degenerate);
        assert_eq!(l3.lambda.len(), 1);
        // the bound still evaluates on the kept subspace
        let term = l3.bound_term(l3.threshold_sigma0_sq(&spec)).unwrap();
        assert!(max_symmetric_eigenvalue(&term) <= 1e-8);
    }

    #[test]
    fn dimension_mismatches_are_input_errors() {
        let spec = random_spec(3, 2, ActivationKind::Tanh, PriorSpec::UniformL1, 100);
        let bad_w = DVector::zeros(5);
        assert!(g_value_grad_hess(&spec, &bad_w).is_err());
        assert!(log_target_unnorm(&spec, &bad_w).is_err());
        let bad_xi = AuxiliaryPoint::new(DVector::zeros(9)).unwrap();
        assert!(xi_score(&spec, &bad_xi, &[DVector::zeros(2)]).is_err());
        assert!(xi_score(&spec, &AuxiliaryPoint::new(DVector::zeros(3)).unwrap(), &[]).is_err());
    }
}
