//! Ground-truth machinery at low dimension: grid quadrature of the model
//! densities, exact rejection sampling against the prior, and
//! Kolmogorov–Smirnov distances. Everything here is independent of the
//! sampler implementations it is used to check.

use nalgebra::DVector;

use crate::densities::{log_reverse_conditional_unnorm, log_target_unnorm, AuxiliaryPoint, DensitySpec};
use crate::error::{Error, Result};
use crate::model::PriorSpec;
use crate::samplers::draw_prior_once;
use crate::util::derive_rng;

/// Axis-aligned uniform grid: cell centers are the quadrature nodes.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_dim: usize,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points_per_dim: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Input("grid bounds must be non-empty and of equal length".into()));
        }
        if points_per_dim < 2 {
            return Err(Error::Input("grid needs at least 2 points per dimension".into()));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Input(format!("bad grid interval [{lo}, {hi}]")));
            }
        }
        Ok(GridSpec {
            lower,
            upper,
            points_per_dim,
        })
    }

    /// Symmetric box `[-b, b]^dim`.
    pub fn symmetric(b: f64, dim: usize, points_per_dim: usize) -> Result<Self> {
        GridSpec::new(vec![-b; dim], vec![b; dim], points_per_dim)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_cells(&self) -> usize {
        self.points_per_dim.pow(self.dim() as u32)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.points_per_dim as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Center of cell `idx` (row-major over axes).
    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        let mut point = vec![0.0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let i = rem % self.points_per_dim;
            rem /= self.points_per_dim;
            point[axis] = self.lower[axis] + (i as f64 + 0.5) * self.spacing(axis);
        }
        point
    }
}

/// Which density the oracle tabulates.
#[derive(Clone, Debug)]
pub enum OracleTarget {
    /// `p(w)` on a `d ≤ 2` grid.
    TargetW,
    /// `p(ξ)` on an `n ≤ 2` grid; the inner `w`-integral is done by nested
    /// quadrature (also restricted to `d ≤ 2`).
    MarginalXi,
    /// `p(w|ξ)` at a fixed conditioning value.
    ReverseWGivenXi(AuxiliaryPoint),
}

/// Tabulated unnormalized log-density plus its quadrature normalizer.
#[derive(Clone, Debug)]
pub struct OracleGrid {
    pub grid: GridSpec,
    pub log_density: Vec<f64>,
    /// `Σ exp(log_density) · cell_volume` (midpoint rule), computed stably.
    pub normalizer: f64,
    log_normalizer: f64,
}

impl OracleGrid {
    fn from_values(grid: GridSpec, log_density: Vec<f64>) -> Result<Self> {
        let log_max = log_density
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if log_max == f64::NEG_INFINITY {
            return Err(Error::Capability("density vanishes on the whole grid".into()));
        }
        let sum: f64 = log_density
            .iter()
            .map(|&v| if v.is_finite() { (v - log_max).exp() } else { 0.0 })
            .sum();
        let log_normalizer = log_max + sum.ln() + grid.cell_volume().ln();
        Ok(OracleGrid {
            normalizer: log_normalizer.exp(),
            grid,
            log_density,
            log_normalizer,
        })
    }

    /// Normalized probability mass of each cell; sums to 1.
    pub fn cell_masses(&self) -> Vec<f64> {
        let log_cell = self.grid.cell_volume().ln();
        self.log_density
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    (v + log_cell - self.log_normalizer).exp()
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Normalized log-density at cell `idx`.
    pub fn log_normalized(&self, idx: usize) -> f64 {
        self.log_density[idx] - self.log_normalizer
    }

    /// Piecewise-linear inverse CDF for one-dimensional grids.
    pub fn inverse_cdf_1d(&self, p: f64) -> Result<f64> {
        if self.grid.dim() != 1 {
            return Err(Error::Capability("inverse CDF requires a 1-D grid".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("probability {p} outside [0,1]")));
        }
        let masses = self.cell_masses();
        let h = self.grid.spacing(0);
        let mut cum = 0.0;
        for (i, &m) in masses.iter().enumerate() {
            if cum + m >= p || i == masses.len() - 1 {
                let left = self.grid.lower[0] + i as f64 * h;
                let frac = if m > 0.0 { ((p - cum) / m).clamp(0.0, 1.0) } else { 0.5 };
                return Ok(left + frac * h);
            }
            cum += m;
        }
        unreachable!("cumulative loop covers the final cell")
    }

    /// `count` deterministic stratified draws through the inverse CDF.
    pub fn stratified_sample_1d(&self, count: usize) -> Result<Vec<f64>> {
        (0..count)
            .map(|i| self.inverse_cdf_1d((i as f64 + 0.5) / count as f64))
            .collect()
    }

    /// CDF evaluated at `x` for 1-D grids (piecewise linear over cells).
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        if self.grid.dim() != 1 {
            return Err(Error::Capability("CDF requires a 1-D grid".into()));
        }
        let masses = self.cell_masses();
        let h = self.grid.spacing(0);
        let lo = self.grid.lower[0];
        if x <= lo {
            return Ok(0.0);
        }
        let pos = (x - lo) / h;
        let cell = (pos.floor() as usize).min(masses.len() - 1);
        let within = (pos - cell as f64).clamp(0.0, 1.0);
        let cum: f64 = masses[..cell].iter().sum();
        Ok((cum + masses[cell] * within).min(1.0))
    }

    /// Total variation between the grid's cell masses and the empirical
    /// histogram of `samples` over the same cells (1-D).
    pub fn total_variation_1d(&self, samples: &[f64]) -> Result<f64> {
        if self.grid.dim() != 1 {
            return Err(Error::Capability("total variation requires a 1-D grid".into()));
        }
        if samples.is_empty() {
            return Err(Error::Input("no samples".into()));
        }
        let masses = self.cell_masses();
        let h = self.grid.spacing(0);
        let lo = self.grid.lower[0];
        let mut counts = vec![0.0_f64; masses.len()];
        let mut outside = 0.0;
        for &s in samples {
            let pos = (s - lo) / h;
            if pos < 0.0 || pos >= masses.len() as f64 {
                outside += 1.0;
            } else {
                counts[pos as usize] += 1.0;
            }
        }
        let n = samples.len() as f64;
        let mut tv: f64 = outside / n;
        for (c, m) in counts.iter().zip(&masses) {
            tv += (c / n - m).abs();
        }
        Ok(0.5 * tv)
    }
}

/// Tabulate the requested unnormalized log-density over `grid` and
/// normalize it by the midpoint rule.
pub fn quadrature_oracle(
    spec: &DensitySpec,
    which: &OracleTarget,
    grid: &GridSpec,
) -> Result<OracleGrid> {
    match which {
        OracleTarget::TargetW => {
            check_dim(spec.dim(), grid, "w-density")?;
            let mut values = Vec::with_capacity(grid.n_cells());
            for idx in 0..grid.n_cells() {
                let w = DVector::from_vec(grid.center(idx));
                values.push(log_target_unnorm(spec, &w)?);
            }
            OracleGrid::from_values(grid.clone(), values)
        }
        OracleTarget::ReverseWGivenXi(xi) => {
            check_dim(spec.dim(), grid, "w-density")?;
            let mut values = Vec::with_capacity(grid.n_cells());
            for idx in 0..grid.n_cells() {
                let w = DVector::from_vec(grid.center(idx));
                values.push(log_reverse_conditional_unnorm(spec, &w, xi)?.0);
            }
            OracleGrid::from_values(grid.clone(), values)
        }
        OracleTarget::MarginalXi => {
            if spec.n_rows() > 2 {
                return Err(Error::Capability(format!(
                    "ξ marginal quadrature supports n ≤ 2, spec has {} rows",
                    spec.n_rows()
                )));
            }
            if grid.dim() != spec.n_rows() {
                return Err(Error::Input(format!(
                    "ξ grid dimension {} does not match spec row count {}",
                    grid.dim(),
                    spec.n_rows()
                )));
            }
            let inner = default_w_grid(spec, 2001)?;
            let mut values = Vec::with_capacity(grid.n_cells());
            for idx in 0..grid.n_cells() {
                let xi = AuxiliaryPoint::new(DVector::from_vec(grid.center(idx)))?;
                values.push(log_marginal_xi_unnorm(spec, &xi, &inner)?);
            }
            OracleGrid::from_values(grid.clone(), values)
        }
    }
}

fn check_dim(d: usize, grid: &GridSpec, what: &str) -> Result<()> {
    if d > 2 {
        return Err(Error::Capability(format!(
            "{what} quadrature supports dimension ≤ 2, got {d}"
        )));
    }
    if grid.dim() != d {
        return Err(Error::Input(format!(
            "grid dimension {} does not match density dimension {d}",
            grid.dim()
        )));
    }
    Ok(())
}

/// Default integration box for the weight variable: the ℓ₁ ball's bounding
/// box under the uniform prior, `±8σ₀` under the Gaussian.
pub fn default_w_grid(spec: &DensitySpec, points_per_dim: usize) -> Result<GridSpec> {
    if spec.dim() > 2 {
        return Err(Error::Capability(format!(
            "w quadrature supports d ≤ 2, got {}",
            spec.dim()
        )));
    }
    let half_width = match spec.prior() {
        PriorSpec::UniformL1 => 1.0,
        PriorSpec::Gaussian { sigma0_sq } => 8.0 * sigma0_sq.sqrt(),
    };
    GridSpec::symmetric(half_width, spec.dim(), points_per_dim)
}

/// Pointwise `log p(ξ)` up to a ξ-independent constant:
/// `−½‖ξ‖² + log ∫ exp(g(w) + ((αc|R|)^{1/2}Xw)·ξ) p₀(w) dw`,
/// the inner integral done by the midpoint rule over `w_grid`.
pub fn log_marginal_xi_unnorm(
    spec: &DensitySpec,
    xi: &AuxiliaryPoint,
    w_grid: &GridSpec,
) -> Result<f64> {
    if xi.len() != spec.n_rows() {
        return Err(Error::Input(format!(
            "auxiliary point has {} entries, spec has {} rows",
            xi.len(),
            spec.n_rows()
        )));
    }
    if w_grid.dim() != spec.dim() {
        return Err(Error::Input("w grid dimension mismatch".into()));
    }
    let mut log_terms = Vec::with_capacity(w_grid.n_cells());
    for idx in 0..w_grid.n_cells() {
        let w = DVector::from_vec(w_grid.center(idx));
        // g(w) + coupling + log p₀(w) = log reverse-conditional exponent
        log_terms.push(log_reverse_conditional_unnorm(spec, &w, xi)?.0);
    }
    let log_max = log_terms
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if log_max == f64::NEG_INFINITY {
        return Err(Error::Capability("inner integrand vanishes on the grid".into()));
    }
    let sum: f64 = log_terms
        .iter()
        .map(|&v| if v.is_finite() { (v - log_max).exp() } else { 0.0 })
        .sum();
    let log_integral = log_max + sum.ln() + w_grid.cell_volume().ln();
    Ok(-0.5 * xi.as_vector().norm_squared() + log_integral)
}

/// Exact i.i.d. draws from `p(w)` by rejection against the prior.
///
/// The envelope is `exp(s_max)` with `s_max` an upper bound on the exponent
/// `α Σᵢ rᵢψ(xᵢ·w)` over the prior support, computed as the tighter of an
/// analytic bound and a Lipschitz-padded grid supremum, plus a 1e−6 safety
/// margin.
pub fn rejection_oracle(
    spec: &DensitySpec,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if spec.dim() > 2 {
        return Err(Error::Capability(format!(
            "rejection oracle supports d ≤ 2, got {}",
            spec.dim()
        )));
    }
    let s_max = exponent_upper_bound(spec)? + 1e-6;
    let mut rng = derive_rng(seed, &[crate::util::STREAM_REJECTION]);
    let mut out = Vec::with_capacity(count);
    let mut attempts: u64 = 0;
    let mut accepted: u64 = 0;
    while out.len() < count {
        attempts += 1;
        if attempts >= 1_000_000 && (accepted as f64) / (attempts as f64) < 1e-6 {
            return Err(Error::Capability(format!(
                "rejection acceptance rate below 1e-6 after {attempts} attempts; envelope too loose"
            )));
        }
        let w = draw_prior_once(spec.prior(), spec.dim(), &mut rng);
        let s = exponent_value(spec, &w);
        debug_assert!(s <= s_max, "exponent {s} exceeds computed sup {s_max}");
        let u: f64 = rand::Rng::random(&mut rng);
        if u.ln() < s - s_max {
            accepted += 1;
            out.push(w);
        }
    }
    Ok(out)
}

/// `α Σᵢ rᵢ ψ(xᵢ·w)`: the exponent that tilts the prior into the target.
pub fn exponent_value(spec: &DensitySpec, w: &DVector<f64>) -> f64 {
    let u = spec.x_slice() * w;
    let mut s = 0.0;
    for i in 0..spec.n_rows() {
        s += spec.residuals()[i] * spec.activation().psi(u[i]);
    }
    spec.alpha() * s
}

/// Upper bound on `exponent_value` over the prior support.
fn exponent_upper_bound(spec: &DensitySpec) -> Result<f64> {
    use crate::model::ActivationKind;
    // analytic bound from the activation's range
    let analytic: f64 = match (spec.activation().kind(), spec.prior()) {
        (ActivationKind::Tanh, _) => {
            // |ψ| < 1 ⇒ best case ψ(xᵢ·w) = sign(rᵢ)
            spec.alpha() * spec.residuals().iter().map(|r| r.abs()).sum::<f64>()
        }
        (ActivationKind::SquaredRelu, PriorSpec::UniformL1) => {
            // 0 ≤ ψ(xᵢ·w) ≤ ‖xᵢ‖∞² on the ℓ₁ ball
            let mut s = 0.0;
            for i in 0..spec.n_rows() {
                if spec.residuals()[i] > 0.0 {
                    let row_inf = (0..spec.dim())
                        .map(|j| spec.x_slice()[(i, j)].abs())
                        .fold(0.0_f64, f64::max);
                    s += spec.residuals()[i] * row_inf * row_inf;
                }
            }
            spec.alpha() * s
        }
        (ActivationKind::SquaredRelu, PriorSpec::Gaussian { .. }) => {
            return Err(Error::Capability(
                "rejection envelope is unbounded for squared ReLU with a Gaussian prior".into(),
            ));
        }
    };

    // Lipschitz-padded grid supremum can only tighten the bound
    let grid = default_w_grid(spec, 257)?;
    let mut grid_sup = f64::NEG_INFINITY;
    for idx in 0..grid.n_cells() {
        let w = DVector::from_vec(grid.center(idx));
        grid_sup = grid_sup.max(exponent_value(spec, &w));
    }
    let lipschitz = exponent_lipschitz(spec, &grid);
    let half_diag = 0.5
        * (0..grid.dim())
            .map(|a| grid.spacing(a).powi(2))
            .sum::<f64>()
            .sqrt();
    Ok(analytic.min(grid_sup + lipschitz * half_diag))
}

fn exponent_lipschitz(spec: &DensitySpec, grid: &GridSpec) -> f64 {
    use crate::model::ActivationKind;
    // sup‖∇s‖ ≤ α Σ |rᵢ| sup|ψ′| ‖xᵢ‖
    let sup_d1 = match spec.activation().kind() {
        ActivationKind::Tanh => 1.0,
        ActivationKind::SquaredRelu => {
            // |ψ′(u)| = 2u⁺; bound u over the grid box
            let box_radius: f64 = (0..grid.dim())
                .map(|a| grid.lower[a].abs().max(grid.upper[a].abs()))
                .fold(0.0, f64::max);
            let row_norm_max = (0..spec.n_rows())
                .map(|i| {
                    (0..spec.dim())
                        .map(|j| spec.x_slice()[(i, j)].abs())
                        .sum::<f64>()
                })
                .fold(0.0_f64, f64::max);
            2.0 * row_norm_max * box_radius
        }
    };
    let mut total = 0.0;
    for i in 0..spec.n_rows() {
        let row_norm = (0..spec.dim())
            .map(|j| spec.x_slice()[(i, j)].powi(2))
            .sum::<f64>()
            .sqrt();
        total += spec.residuals()[i].abs() * row_norm;
    }
    spec.alpha() * sup_d1 * total
}

/// Maximum over coordinates of the two-sample Kolmogorov–Smirnov statistic.
pub fn compare_samples(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("both sample sets must be nonempty".into()));
    }
    let d = a[0].len();
    if b[0].len() != d || a.iter().chain(b.iter()).any(|v| v.len() != d) {
        return Err(Error::Input("sample dimension mismatch".into()));
    }
    let mut worst: f64 = 0.0;
    for coord in 0..d {
        let xs: Vec<f64> = a.iter().map(|v| v[coord]).collect();
        let ys: Vec<f64> = b.iter().map(|v| v[coord]).collect();
        worst = worst.max(ks_two_sample(&xs, &ys));
    }
    Ok(worst)
}

/// Two-sample KS statistic for scalars; ties advance both empirical CDFs
/// before the difference is taken.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d.max(1.0 - i as f64 / na).max(1.0 - j as f64 / nb)
}

/// One-sample KS statistic of `samples` against a continuous CDF.
pub fn ks_against_cdf<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}
