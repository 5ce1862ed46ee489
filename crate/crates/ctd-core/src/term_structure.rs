//! Hull-White spread model: analytic marginal moments, pairwise correlations
//! over time, and the conversion of collateral-rate parameters into
//! collateral-spread parameters.
//!
//! Each spread `q_i` follows `dq = kappa (theta(t) - q) dt + xi dW` under the
//! pricing measure, so at every time it is normal with mean and variance in
//! closed form. All operations here are pure functions of their inputs.

use crate::error::{CtdError, Result};
use crate::math::sym;
use nalgebra::DMatrix;

/// Piecewise-constant long-term mean curve `theta(t)`.
///
/// `breaks` holds strictly increasing segment right-endpoints; `values[i]`
/// applies on `(breaks[i-1], breaks[i]]` with an implicit left edge at zero.
/// A constant curve has no breaks and covers `[0, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCurve {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl ThetaCurve {
    /// Constant long-term mean, defined for all horizons.
    pub fn constant(value: f64) -> Self {
        Self {
            breaks: Vec::new(),
            values: vec![value],
        }
    }

    /// Piecewise-constant curve; `breaks` are segment right-endpoints.
    pub fn piecewise(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != values.len() {
            return Err(CtdError::InvalidInput(
                "theta curve needs one value per break".into(),
            ));
        }
        if breaks[0] <= 0.0 || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CtdError::InvalidInput(
                "theta breaks must be positive and strictly increasing".into(),
            ));
        }
        if breaks.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(CtdError::InvalidInput("theta curve must be finite".into()));
        }
        Ok(Self { breaks, values })
    }

    /// End of the curve's domain (`inf` for a constant curve).
    pub fn domain_end(&self) -> f64 {
        self.breaks.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Value at `t` within the domain.
    pub fn value(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t > self.domain_end() {
            return Err(CtdError::Domain(format!(
                "theta curve not defined at t = {t}"
            )));
        }
        if self.breaks.is_empty() {
            return Ok(self.values[0]);
        }
        let idx = self.breaks.partition_point(|&b| b < t);
        Ok(self.values[idx.min(self.values.len() - 1)])
    }

    /// Constant value if the curve is flat.
    pub fn constant_value(&self) -> Option<f64> {
        if self.breaks.is_empty() {
            Some(self.values[0])
        } else {
            None
        }
    }

    /// `kappa * int_0^t theta(s) exp(-(t-s) kappa) ds`, evaluated in closed
    /// form segment by segment.
    pub(crate) fn reverting_integral(&self, t: f64, kappa: f64) -> Result<f64> {
        if t < 0.0 || t > self.domain_end() {
            return Err(CtdError::Domain(format!(
                "theta curve not defined on [0, {t}]"
            )));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        if self.breaks.is_empty() {
            // value * (1 - exp(-kappa t)) without cancellation
            return Ok(self.values[0] * (-(-kappa * t).exp_m1()));
        }
        let mut acc = 0.0;
        let mut seg_start = 0.0;
        for (i, &seg_end) in self.breaks.iter().enumerate() {
            if seg_start >= t {
                break;
            }
            let upper = seg_end.min(t);
            acc +=
                self.values[i] * ((-kappa * (t - upper)).exp() - (-kappa * (t - seg_start)).exp());
            seg_start = seg_end;
        }
        Ok(acc)
    }
}

/// Hull-White parameters of one collateral spread.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadParams {
    /// Speed of mean reversion (1/year), strictly positive.
    pub kappa: f64,
    /// Absolute volatility (1/year^(3/2)), non-negative.
    pub xi: f64,
    /// Long-term mean curve, in rate units.
    pub theta: ThetaCurve,
    /// Initial spread, in rate units.
    pub q0: f64,
}

impl SpreadParams {
    pub fn new(kappa: f64, xi: f64, theta: ThetaCurve, q0: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(CtdError::InvalidInput(format!(
                "kappa must be positive and finite; got {kappa}"
            )));
        }
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(CtdError::InvalidInput(format!(
                "xi must be non-negative and finite; got {xi}"
            )));
        }
        if !q0.is_finite() {
            return Err(CtdError::InvalidInput(format!(
                "q0 must be finite; got {q0}"
            )));
        }
        Ok(Self {
            kappa,
            xi,
            theta,
            q0,
        })
    }

    /// Constant-theta shortcut used by most configurations.
    pub fn with_constant_theta(kappa: f64, xi: f64, theta: f64, q0: f64) -> Result<Self> {
        Self::new(kappa, xi, ThetaCurve::constant(theta), q0)
    }
}

/// `E[q(t)] = q0 e^{-kappa t} + kappa int_0^t theta(s) e^{-(t-s)kappa} ds`.
pub fn spread_mean(p: &SpreadParams, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(CtdError::Domain(format!("negative time t = {t}")));
    }
    Ok(p.q0 * (-p.kappa * t).exp() + p.theta.reverting_integral(t, p.kappa)?)
}

/// `Var[q(t)] = xi^2 / (2 kappa) * (1 - e^{-2 kappa t})`.
pub fn spread_variance(p: &SpreadParams, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(CtdError::Domain(format!("negative time t = {t}")));
    }
    if p.xi == 0.0 {
        return Ok(0.0);
    }
    Ok(p.xi * p.xi / (2.0 * p.kappa) * (-(-2.0 * p.kappa * t).exp_m1()))
}

/// Linear correlation of two spreads at time `t > 0`:
/// `2 rho sqrt(k_i k_j)/(k_i+k_j) * (1-e^{-(k_i+k_j)t}) / sqrt((1-e^{-2k_i t})(1-e^{-2k_j t}))`.
///
/// Constant in `t` exactly when the mean-reversion speeds coincide, and
/// slowly decreasing in `t` otherwise.
pub fn pair_correlation(pi: &SpreadParams, pj: &SpreadParams, rho_ij: f64, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(CtdError::Domain(format!(
            "pair correlation undefined at t = {t}"
        )));
    }
    if pi.xi == 0.0 || pj.xi == 0.0 {
        return Err(CtdError::DegenerateVariance(
            "pair correlation undefined for a zero-volatility spread".into(),
        ));
    }
    let ksum = pi.kappa + pj.kappa;
    let num = -(-ksum * t).exp_m1();
    let den = ((-(-2.0 * pi.kappa * t).exp_m1()) * (-(-2.0 * pj.kappa * t).exp_m1())).sqrt();
    Ok(2.0 * rho_ij * (pi.kappa * pj.kappa).sqrt() / ksum * num / den)
}

/// Instantaneous correlation matrix of the driving Brownian motions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    mat: DMatrix<f64>,
}

impl CorrelationSpec {
    /// Validates symmetry, unit diagonal, entries in `(-1, 1)` off the
    /// diagonal and positive semi-definiteness.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(CtdError::InvalidInput(
                "correlation matrix must be square and non-empty".into(),
            ));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::from_matrix(mat)
    }

    pub(crate) fn from_matrix(mat: DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        for i in 0..n {
            if (mat[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(CtdError::InvalidInput(format!(
                    "correlation diagonal entry ({i},{i}) must be 1; got {}",
                    mat[(i, i)]
                )));
            }
            for j in 0..i {
                let v = mat[(i, j)];
                if (v - mat[(j, i)]).abs() > 1e-12 {
                    return Err(CtdError::InvalidInput(format!(
                        "correlation matrix not symmetric at ({i},{j})"
                    )));
                }
                // The closed boundary is admitted so that degenerate rate
                // systems (perfectly correlated drivers) can be expressed;
                // the base spread model restricts further downstream.
                if !v.is_finite() || v.abs() > 1.0 {
                    return Err(CtdError::InvalidInput(format!(
                        "correlation entry ({i},{j}) must lie in [-1, 1]; got {v}"
                    )));
                }
            }
        }
        if n > 1 && sym::min_eigenvalue(&mat) < -1e-10 {
            return Err(CtdError::InvalidInput(
                "correlation matrix is not positive semi-definite".into(),
            ));
        }
        Ok(Self { mat })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mat: DMatrix::identity(n, n),
        }
    }

    /// Builds a correlation matrix from possibly inconsistent entries by
    /// projecting to the nearest positive semi-definite correlation matrix
    /// (eigenvalue clipping with diagonal rescaling).
    pub fn projected(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(CtdError::InvalidInput(
                "correlation matrix must be square and non-empty".into(),
            ));
        }
        let raw = DMatrix::from_fn(n, n, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
        let mut fixed = sym::nearest_correlation(&raw);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    fixed[(i, j)] = fixed[(i, j)].clamp(-(1.0 - 1e-9), 1.0 - 1e-9);
                }
            }
        }
        Self::from_matrix(fixed)
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// The base (single-group) model admits only non-negative correlations.
    pub fn require_nonnegative(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            for j in 0..i {
                if self.mat[(i, j)] < 0.0 {
                    return Err(CtdError::InvalidInput(format!(
                        "negative correlation at ({i},{j}); route negative correlations \
                         through the two-group model"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Correlation submatrix over the given component indices.
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let mat = DMatrix::from_fn(indices.len(), indices.len(), |i, j| {
            self.mat[(indices[i], indices[j])]
        });
        Self { mat }
    }
}

/// Uniform time grid `t_k = k dt`, `k = 0..=steps`, with `steps * dt = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    maturity: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(maturity: f64, dt: f64) -> Result<Self> {
        if !(maturity.is_finite() && maturity > 0.0) {
            return Err(CtdError::InvalidInput(format!(
                "maturity must be positive; got {maturity}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0 && dt <= maturity) {
            return Err(CtdError::InvalidInput(format!(
                "dt must lie in (0, maturity]; got {dt}"
            )));
        }
        let steps = (maturity / dt).round();
        if steps < 1.0 || (steps * dt - maturity).abs() > 1e-8 * maturity.max(1.0) {
            return Err(CtdError::InvalidInput(format!(
                "maturity {maturity} is not an integer multiple of dt {dt}"
            )));
        }
        Ok(Self {
            maturity,
            dt,
            steps: steps as usize,
        })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps `R`; the grid has `R + 1` points.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `t_k`, with the final point pinned to the maturity exactly.
    pub fn t(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.maturity
        } else {
            k as f64 * self.dt
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.t(k))
    }

    /// Grid index of an intermediate horizon, which must be grid-aligned.
    pub fn horizon_index(&self, horizon: f64) -> Result<usize> {
        let k = (horizon / self.dt).round();
        if k < 1.0 || k > self.steps as f64 || (k * self.dt - horizon).abs() > 1e-8 {
            return Err(CtdError::InvalidInput(format!(
                "horizon {horizon} is not a point of the time grid"
            )));
        }
        Ok(k as usize)
    }
}

/// Hull-White parameters of one FX-adjusted collateral rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub kappa: f64,
    pub xi: f64,
    pub r0: f64,
}

impl RateParams {
    pub fn new(kappa: f64, xi: f64, r0: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) || !(xi.is_finite() && xi >= 0.0) || !r0.is_finite()
        {
            return Err(CtdError::InvalidInput(
                "rate parameters must be finite with kappa > 0 and xi >= 0".into(),
            ));
        }
        Ok(Self { kappa, xi, r0 })
    }
}

/// Result of the rate-to-spread conversion.
#[derive(Debug, Clone)]
pub struct ConvertedSpreads {
    /// Spread parameters, one per non-base rate, with constant theta pinned
    /// to the initial spread.
    pub spreads: Vec<SpreadParams>,
    /// Instantaneous correlations induced between the spreads.
    pub corr: CorrelationSpec,
    /// Initial spreads `r_i(0) - r_0(0)`.
    pub q0: Vec<f64>,
    /// Indices (into `spreads`) whose volatility degenerated to zero.
    pub degenerate: Vec<usize>,
}

/// Converts collateral-rate parameters to collateral-spread parameters.
///
/// Per spread: `kappa_i = (kappa_i^r + kappa_0^r) / 2`,
/// `xi_i = sqrt(2 - 2 rho_{0i}^r) (xi_i^r + xi_0^r) / 2`,
/// `q_i(0) = r_i(0) - r_0(0)`. The induced spread-spread correlation comes
/// from the covariance of the rate increments:
/// `rho_ij = (rho_ij^r xi_i^r xi_j^r - rho_0i^r xi_0^r xi_i^r
///            - rho_0j^r xi_0^r xi_j^r + (xi_0^r)^2) / (xi_i xi_j)`.
///
/// `rate_corr` is the `(N+1) x (N+1)` correlation of the rate drivers with
/// the base rate at index 0.
pub fn rates_to_spreads(
    base: &RateParams,
    others: &[RateParams],
    rate_corr: &CorrelationSpec,
) -> Result<ConvertedSpreads> {
    let n = others.len();
    if n == 0 {
        return Err(CtdError::InvalidInput(
            "at least one non-base rate is required".into(),
        ));
    }
    if rate_corr.n() != n + 1 {
        return Err(CtdError::InvalidInput(format!(
            "rate correlation must be {0} x {0} (base rate at index 0); got {1} x {1}",
            n + 1,
            rate_corr.n()
        )));
    }

    let mut spreads = Vec::with_capacity(n);
    let mut q0 = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for (i, r) in others.iter().enumerate() {
        let kappa = 0.5 * (r.kappa + base.kappa);
        let xi = (2.0 - 2.0 * rate_corr.get(0, i + 1)).max(0.0).sqrt() * 0.5 * (r.xi + base.xi);
        let q = r.r0 - base.r0;
        if xi < 1e-15 {
            degenerate.push(i);
        }
        spreads.push(SpreadParams::with_constant_theta(kappa, xi, q, q)?);
        q0.push(q);
    }

    let mut corr = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let (ri, rj) = (&others[i], &others[j]);
            let num = rate_corr.get(i + 1, j + 1) * ri.xi * rj.xi
                - rate_corr.get(0, i + 1) * base.xi * ri.xi
                - rate_corr.get(0, j + 1) * base.xi * rj.xi
                + base.xi * base.xi;
            let den = spreads[i].xi * spreads[j].xi;
            let rho = if den < 1e-30 {
                0.0
            } else {
                let raw = num / den;
                if raw.abs() > 1.0 + 1e-9 {
                    return Err(CtdError::InvalidInput(format!(
                        "derived spread correlation ({i},{j}) = {raw} is outside [-1, 1]; \
                         the rate inputs are inconsistent"
                    )));
                }
                raw.clamp(-(1.0 - 1e-12), 1.0 - 1e-12)
            };
            corr[(i, j)] = rho;
            corr[(j, i)] = rho;
        }
    }
    let corr = CorrelationSpec::from_matrix(corr)?;

    Ok(ConvertedSpreads {
        spreads,
        corr,
        q0,
        degenerate,
    })
}
