//! Common-factor decomposition of the spreads at a fixed time and the law of
//! the floored maximum.
//!
//! At a grid time the spreads form a correlated Gaussian vector. Replacing it
//! with `q~_i = C + A_i` (a shared centred factor `C` plus independent
//! idiosyncratic factors `A_i`) preserves every marginal and approximates the
//! correlation structure through a single parameter `gamma`. The floored
//! maximum then satisfies `max(0, q~_1, .., q~_N) = max(0, C + max_i A_i)`,
//! whose CDF is the convolution of the density of `C` with the product CDF of
//! the `A_i` — evaluated here on a uniform lattice with the FFT. Moments and
//! maximum probabilities follow by quadrature against that CDF.

use crate::error::{CtdError, Result};
use crate::math::{brent, fft, gauss, normal};
use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Tolerances and grid parameters of the convolution stage.
///
/// All defaults are overridable through the run configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvSettings {
    /// Step of the convolution lattice.
    pub delta: f64,
    /// Tail mass neglected beyond the cutoff `L`.
    pub eps_tail: f64,
    /// Half-width of sampled kernels and quadrature domains, in standard
    /// deviations.
    pub domain_stddevs: f64,
    /// Keep-away distance from the `gamma = 1` boundary.
    pub eps_gamma: f64,
    /// Tolerance for CDF validity (bounds and monotonicity) after the FFT.
    pub tau_cdf: f64,
    /// Tolerance on probability closure of the maximum probabilities.
    pub tau_prob: f64,
    /// Baseline tolerance for the raw-second-moment vs squared-mean
    /// consistency check; scaled up with the lattice step internally.
    pub tau_var: f64,
}

impl Default for ConvSettings {
    fn default() -> Self {
        Self {
            delta: 5e-5,
            eps_tail: 1e-10,
            domain_stddevs: 8.0,
            eps_gamma: 1e-10,
            tau_cdf: 1e-9,
            tau_prob: 1e-8,
            tau_var: 1e-6,
        }
    }
}

impl ConvSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(CtdError::InvalidInput(format!(
                "convolution delta must be positive; got {}",
                self.delta
            )));
        }
        if !(self.eps_tail > 0.0 && self.eps_tail < 0.5) {
            return Err(CtdError::InvalidInput(format!(
                "eps_tail must lie in (0, 0.5); got {}",
                self.eps_tail
            )));
        }
        if self.domain_stddevs < 3.0 {
            return Err(CtdError::InvalidInput(
                "domain_stddevs below 3 cannot capture the required mass".into(),
            ));
        }
        if !(self.eps_gamma > 0.0 && self.eps_gamma < 0.1) {
            return Err(CtdError::InvalidInput("eps_gamma out of range".into()));
        }
        Ok(())
    }
}

/// One idiosyncratic factor `A_i ~ N(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub mean: f64,
    pub variance: f64,
}

/// Per-time common-factor parametrization: `q~_i = C + A_i` with
/// `C ~ N(0, c_variance)`, `c_variance = sigma_min_sq * |gamma|`, and
/// `A_i ~ N(mean_i, variance_i - c_variance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDecomposition {
    gamma: f64,
    c_variance: f64,
    sigma_min_sq: f64,
    components: Vec<Component>,
}

impl FactorDecomposition {
    /// Builds the decomposition from marginal means and variances.
    ///
    /// Components with zero variance are carried as constants; they force
    /// `sigma_min_sq = 0` and hence a vanishing common factor.
    pub fn decompose(means: &[f64], variances: &[f64], gamma: f64) -> Result<Self> {
        if means.is_empty() || means.len() != variances.len() {
            return Err(CtdError::InvalidInput(
                "decomposition needs one variance per mean".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(CtdError::InvalidInput(format!(
                "gamma must lie in [0, 1); got {gamma}"
            )));
        }
        if variances.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(CtdError::InvalidInput(
                "marginal variances must be finite and non-negative".into(),
            ));
        }
        let sigma_min_sq = variances.iter().copied().fold(f64::INFINITY, f64::min);
        let c_variance = sigma_min_sq * gamma.abs();
        let components = means
            .iter()
            .zip(variances)
            .map(|(&m, &v)| Component {
                mean: m,
                variance: (v - c_variance).max(0.0),
            })
            .collect();
        Ok(Self {
            gamma,
            c_variance,
            sigma_min_sq,
            components,
        })
    }

    /// Builds a decomposition directly from a common-factor variance and
    /// idiosyncratic components (used by the two-group extension and tests).
    /// `gamma` and `sigma_min_sq` are derived so that the defining identity
    /// `c_variance = sigma_min_sq * gamma` holds.
    pub fn from_parts(c_variance: f64, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(CtdError::InvalidInput("empty decomposition".into()));
        }
        if c_variance < 0.0 || components.iter().any(|c| c.variance < 0.0) {
            return Err(CtdError::InvalidInput(
                "variances must be non-negative".into(),
            ));
        }
        let sigma_min_sq = components
            .iter()
            .map(|c| c.variance)
            .fold(f64::INFINITY, f64::min)
            + c_variance;
        let gamma = if sigma_min_sq > 0.0 {
            c_variance / sigma_min_sq
        } else {
            0.0
        };
        Ok(Self {
            gamma,
            c_variance,
            sigma_min_sq,
            components,
        })
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c_variance(&self) -> f64 {
        self.c_variance
    }

    pub fn sigma_min_sq(&self) -> f64 {
        self.sigma_min_sq
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Marginal variance of `q~_i` (reconstruction identity).
    pub fn marginal_variance(&self, i: usize) -> f64 {
        self.components[i].variance + self.c_variance
    }

    /// True when every factor has zero variance.
    pub fn is_deterministic(&self) -> bool {
        self.c_variance == 0.0 && self.components.iter().all(|c| c.variance == 0.0)
    }
}

/// Outcome of the correlation-parameter optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFit {
    /// Value to use, clamped into `[0, 1 - eps_gamma]`.
    pub gamma: f64,
    /// Unconstrained minimizer of the Frobenius objective.
    pub unclamped: f64,
    /// True when the unconstrained minimizer hit the upper boundary.
    pub clamped: bool,
}

/// Minimizes the Frobenius distance between the common-factor correlation
/// matrix and `target` over `gamma`, returning the fit diagnostics.
///
/// For two components the match is exact in closed form,
/// `gamma = rho * max(sigma) / min(sigma)`; for three or more a bounded
/// scalar search is used (the objective is convex in `gamma`).
pub fn optimize_gamma_fit(
    sigmas: &[f64],
    target: &DMatrix<f64>,
    eps_gamma: f64,
) -> Result<GammaFit> {
    let n = sigmas.len();
    if n == 0 {
        return Err(CtdError::InvalidInput("no components".into()));
    }
    if sigmas.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(CtdError::InvalidInput(
            "standard deviations must be positive".into(),
        ));
    }
    if target.nrows() != n || target.ncols() != n {
        return Err(CtdError::InvalidInput(format!(
            "target correlation must be {n} x {n}"
        )));
    }
    for i in 0..n {
        for j in 0..i {
            if (target[(i, j)] - target[(j, i)]).abs() > 1e-10 {
                return Err(CtdError::InvalidInput(
                    "target correlation matrix is not symmetric".into(),
                ));
            }
        }
    }
    let upper = 1.0 - eps_gamma;
    if n == 1 {
        return Ok(GammaFit {
            gamma: 0.0,
            unclamped: 0.0,
            clamped: false,
        });
    }

    let sigma_min_sq = sigmas.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);

    // Unconstrained least-squares minimizer over the off-diagonal entries;
    // for n = 2 this reduces to the exact-match closed form.
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let a = sigma_min_sq / (sigmas[i] * sigmas[j]);
                num += a * target[(i, j)];
                den += a * a;
            }
        }
    }
    let unclamped = num / den;

    let gamma = if n == 2 || unclamped <= 0.0 || unclamped >= upper {
        // Exact match (n = 2) or a boundary minimizer of the convex
        // objective: the projection of the unconstrained optimum.
        unclamped.clamp(0.0, upper)
    } else {
        let objective = |g: f64| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let d = sigma_min_sq * g.abs() / (sigmas[i] * sigmas[j]) - target[(i, j)];
                        acc += d * d;
                    }
                }
            }
            acc
        };
        brent::minimize(objective, 0.0, upper, 3e-12, 400).clamp(0.0, upper)
    };

    Ok(GammaFit {
        gamma,
        unclamped,
        clamped: unclamped > upper,
    })
}

/// As [`optimize_gamma_fit`], returning only the clamped value.
pub fn optimize_gamma(sigmas: &[f64], target: &DMatrix<f64>, eps_gamma: f64) -> Result<f64> {
    Ok(optimize_gamma_fit(sigmas, target, eps_gamma)?.gamma)
}

/// CDF of `max_i A_i` at `x`: the product of the component CDFs.
/// Zero-variance components contribute indicator factors.
pub fn independent_max_cdf(dec: &FactorDecomposition, x: f64) -> f64 {
    product_cdf(dec.components(), x)
}

fn product_cdf(components: &[Component], x: f64) -> f64 {
    let mut acc = 1.0;
    for c in components {
        if c.variance > 0.0 {
            acc *= normal::cdf_at(x, c.mean, c.variance.sqrt());
        } else if x < c.mean {
            return 0.0;
        }
        if acc == 0.0 {
            return 0.0;
        }
    }
    acc
}

/// A real-valued function sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct GridFunction {
    x_lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(x_lo: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) || values.is_empty() {
            return Err(CtdError::InvalidInput(
                "grid function needs a positive step and at least one value".into(),
            ));
        }
        Ok(Self { x_lo, step, values })
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_lo + self.step * (self.values.len() - 1) as f64
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_lo + self.step * i as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation, clamped to the boundary values outside the grid.
    pub fn interpolate(&self, x: f64) -> f64 {
        let pos = (x - self.x_lo) / self.step;
        if pos <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if pos >= last as f64 {
            return self.values[last];
        }
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Four-point (cubic Lagrange) interpolation; falls back to linear at
    /// the grid edges. Used where the grid resolution bounds a downstream
    /// quadrature error.
    pub fn interpolate_cubic(&self, x: f64) -> f64 {
        let last = self.values.len() - 1;
        let pos = (x - self.x_lo) / self.step;
        if pos <= 1.0 || pos >= (last - 1) as f64 || last < 3 {
            return self.interpolate(x);
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        let (y0, y1, y2, y3) = (
            self.values[i - 1],
            self.values[i],
            self.values[i + 1],
            self.values[i + 2],
        );
        let a = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let b = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let c = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let d = (t + 1.0) * t * (t - 1.0) / 6.0;
        a * y0 + b * y1 + c * y2 + d * y3
    }

    /// Checks CDF validity: values within `[-tol, 1+tol]`, non-decreasing
    /// within `tol`.
    pub fn validate_cdf(&self, tol: f64) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !(-tol..=1.0 + tol).contains(&v) {
                return Err(CtdError::InternalConsistency(format!(
                    "CDF value {v} at grid index {i} outside [0, 1] beyond tolerance {tol}"
                )));
            }
        }
        for (i, w) in self.values.windows(2).enumerate() {
            if w[1] < w[0] - tol {
                return Err(CtdError::InternalConsistency(format!(
                    "CDF decreases by {} at grid index {i}",
                    w[0] - w[1]
                )));
            }
        }
        Ok(())
    }

    /// Clips into `[0, 1]` and enforces monotonicity (running maximum).
    /// Call after `validate_cdf`; this only removes round-off wiggle.
    pub fn clamp_cdf(&mut self) {
        let mut run = 0.0_f64;
        for v in &mut self.values {
            run = run.max(v.clamp(0.0, 1.0));
            *v = run;
        }
    }
}

/// Conservative grid-aligned upper cutoff: beyond it the union bound leaves
/// less than `eps_tail / 2` of mass in any component tail.
fn cutoff_bound(dec: &FactorDecomposition, conv: &ConvSettings) -> f64 {
    let n = dec.n();
    let mut lim = 0.0_f64;
    if dec.is_deterministic() {
        for c in dec.components() {
            lim = lim.max(c.mean);
        }
    } else {
        let z = normal::quantile(1.0 - conv.eps_tail / (2.0 * n as f64));
        for c in dec.components() {
            let sd = (c.variance + dec.c_variance()).sqrt();
            lim = lim.max(c.mean + z * sd);
        }
    }
    lim = lim.max(0.0);
    conv.delta * (lim / conv.delta - 1e-9).ceil().max(0.0)
}

/// Smallest grid point of `h` at which the remaining tail mass drops below
/// `eps_tail`.
pub fn refine_cutoff(h: &GridFunction, eps_tail: f64) -> Result<f64> {
    let threshold = 1.0 - eps_tail;
    match h.values().iter().position(|&v| v > threshold) {
        Some(idx) => Ok(h.x(idx)),
        None => Err(CtdError::InsufficientDomain(format!(
            "tail mass {} at the end of the grid exceeds eps_tail {eps_tail}",
            1.0 - h.values().last().unwrap()
        ))),
    }
}

/// CDF `H(x) = P[C + max_i A_i <= x]` on the lattice `{0, delta, ..., L}`,
/// with `L` from the conservative tail bound.
///
/// The convolution samples the density of `C` on a symmetric lattice and the
/// product CDF of the `A_i` on the widened domain, then multiplies spectra
/// (linear convolution with zero padding). A vanishing common factor bypasses
/// the convolution entirely; a kernel narrower than the lattice step is
/// handled by Gauss-Hermite smoothing instead of sampling it.
pub fn shifted_max_cdf(dec: &FactorDecomposition, conv: &ConvSettings) -> Result<GridFunction> {
    conv.validate()?;
    let l = cutoff_bound(dec, conv);
    let count = (l / conv.delta).round() as usize + 1;
    let values = smoothed_product_cdf(dec.components(), dec.c_variance(), 0, count, conv);
    let mut h = GridFunction::new(0.0, conv.delta, values)?;
    h.validate_cdf(conv.tau_cdf)?;
    h.clamp_cdf();
    Ok(h)
}

/// Samples `(f_{N(0, smear_var)} * F)(x)` at `x = (start_idx + i) * delta`
/// for `i = 0..count`, where `F` is the product CDF of `components`.
fn smoothed_product_cdf(
    components: &[Component],
    smear_var: f64,
    start_idx: i64,
    count: usize,
    conv: &ConvSettings,
) -> Vec<f64> {
    let delta = conv.delta;
    let at = |i: i64| (start_idx + i) as f64 * delta;
    if smear_var <= 0.0 {
        return (0..count as i64)
            .map(|i| product_cdf(components, at(i)))
            .collect();
    }
    let sd = smear_var.sqrt();
    if sd < 2.0 * delta {
        // The sampled kernel would be under-resolved; average the CDF under
        // the narrow Gaussian with a Hermite rule instead.
        let (nodes, weights) = hermite_rule(32);
        let norm: f64 = weights.iter().sum();
        return (0..count as i64)
            .map(|i| {
                let x = at(i);
                nodes
                    .iter()
                    .zip(weights)
                    .map(|(&u, &w)| {
                        w * product_cdf(components, x - std::f64::consts::SQRT_2 * sd * u)
                    })
                    .sum::<f64>()
                    / norm
            })
            .collect();
    }

    let half = (conv.domain_stddevs * sd / delta).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * half)
        .map(|j| normal::pdf_at((j as f64 - half as f64) * delta, 0.0, sd) * delta)
        .collect();
    let mass: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= mass;
    }

    let f_count = count + 2 * half;
    let f_vals: Vec<f64> = (0..f_count as i64)
        .map(|i| product_cdf(components, at(i - half as i64)))
        .collect();

    let full = fft::convolve_linear(&kernel, &f_vals);
    full[2 * half..2 * half + count].to_vec()
}

fn hermite_rule(n: usize) -> (&'static [f64], &'static [f64]) {
    static RULE32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static RULE48: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let cell = match n {
        32 => &RULE32,
        48 => &RULE48,
        _ => unreachable!("unsupported cached Hermite order"),
    };
    let (x, w) = cell.get_or_init(|| gauss::hermite(n));
    (x, w)
}

/// Composition of the conservative bound, the convolution and the grid
/// refinement: the smallest grid point beyond which less than `eps_tail`
/// mass remains.
pub fn tail_cutoff(dec: &FactorDecomposition, conv: &ConvSettings) -> Result<f64> {
    if dec.is_deterministic() {
        return Ok(cutoff_bound(dec, conv));
    }
    let h = shifted_max_cdf(dec, conv)?;
    refine_cutoff(&h, conv.eps_tail)
}

/// `E[max(0, C + max_i A_i)] = int_0^inf (1 - H(x)) dx`, integrated by a
/// left Riemann sum over `[0, L]`; the tail beyond `L` is below
/// `eps_tail * L` by construction and is neglected.
pub fn max_expectation(h: &GridFunction, conv: &ConvSettings) -> Result<f64> {
    moment_tail_check(h, conv)?;
    let vals = h.values();
    let sum: f64 = vals[..vals.len() - 1].iter().map(|&v| 1.0 - v).sum();
    Ok(sum * h.step())
}

/// `E[max(0, C + max_i A_i)^2] = int_0^inf 2x (1 - H(x)) dx` by the same
/// left-sum rule.
pub fn max_raw_second_moment(h: &GridFunction, conv: &ConvSettings) -> Result<f64> {
    moment_tail_check(h, conv)?;
    let vals = h.values();
    let sum: f64 = vals[..vals.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, &v)| 2.0 * h.x(i) * (1.0 - v))
        .sum();
    Ok(sum * h.step())
}

fn moment_tail_check(h: &GridFunction, conv: &ConvSettings) -> Result<()> {
    debug_assert!(h.x_lo() == 0.0);
    let tail = 1.0 - *h.values().last().unwrap();
    if tail >= conv.eps_tail {
        return Err(CtdError::InsufficientDomain(format!(
            "tail mass {tail} at the grid end exceeds eps_tail {}",
            conv.eps_tail
        )));
    }
    Ok(())
}

/// Central variance from the first two moments, floored at zero.
///
/// `tau_var` guards against pipeline bugs: the raw second moment may fall
/// below the squared mean only by quadrature bias, which scales with the
/// lattice step.
pub fn max_variance(mean: f64, raw_second: f64, tau_var: f64) -> Result<f64> {
    if raw_second < mean * mean - tau_var {
        return Err(CtdError::InternalConsistency(format!(
            "raw second moment {raw_second} below squared mean {} beyond tolerance {tau_var}",
            mean * mean
        )));
    }
    Ok((raw_second - mean * mean).max(0.0))
}

/// Step tolerance used by `max_variance` at lattice step `delta`.
pub fn variance_tolerance(conv: &ConvSettings, mean: f64) -> f64 {
    conv.tau_var
        .max(4.0 * conv.delta * (mean.abs() + conv.delta))
}

/// `P[M~ = q~_i]` for every component plus the residual `P[M~ = 0]`.
///
/// Entry `i` is `int f_{A_i}(x) F_C(x) prod_{j != i} F_{A_j}(x) dx`
/// (the `C <-> -C` symmetry moves the common factor into a CDF factor).
/// The residual is `1 - sum_i entry_i` and is cross-checked against the
/// directly computed `P[C + max_i A_i <= 0]`; a gap beyond `tau_prob`
/// reports an insufficient quadrature domain.
pub fn max_probabilities(
    dec: &FactorDecomposition,
    conv: &ConvSettings,
) -> Result<(Vec<f64>, f64)> {
    conv.validate()?;
    let n = dec.n();
    let comps = dec.components();
    let c_var = dec.c_variance();
    let c_sd = c_var.sqrt();

    if dec.is_deterministic() {
        let (probs, residual) = deterministic_probabilities(comps);
        return Ok((probs, residual));
    }

    let w = conv.domain_stddevs;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_sd = 0.0_f64;
    for c in comps {
        lo = lo.min(c.mean);
        hi = hi.max(c.mean);
        max_sd = max_sd.max((c.variance + c_var).sqrt());
    }
    lo -= w * max_sd;
    hi += w * max_sd;

    // Step factors (a degenerate common factor, deterministic components)
    // are handled by exact domain restriction: the integrand vanishes below
    // every step location, and above it the factor is one.
    let det_max = comps
        .iter()
        .filter(|c| c.variance == 0.0)
        .map(|c| c.mean)
        .fold(f64::NEG_INFINITY, f64::max);

    // Sharp smooth features that need local grid refinement.
    let mut features: Vec<(f64, f64)> = Vec::new(); // (center, scale)
    if c_var > 0.0 {
        features.push((0.0, c_sd));
    }
    for c in comps {
        if c.variance > 0.0 {
            features.push((c.mean, c.variance.sqrt()));
        }
    }

    let mut probs = vec![0.0; n];
    for i in 0..n {
        if comps[i].variance == 0.0 {
            // Deterministic component: point mass at its mean. Ties with the
            // zero floor go to the floor; ties with other constants go to
            // the lowest index.
            let x = comps[i].mean;
            let mut p = if c_var > 0.0 {
                normal::cdf(x / c_sd)
            } else if x > 0.0 {
                1.0
            } else {
                0.0
            };
            for (j, c) in comps.iter().enumerate() {
                if j == i {
                    continue;
                }
                if c.variance > 0.0 {
                    p *= normal::cdf_at(x, c.mean, c.variance.sqrt());
                } else if c.mean > x || (c.mean == x && j < i) {
                    p = 0.0;
                }
            }
            probs[i] = p;
            continue;
        }
        let sd_i = comps[i].variance.sqrt();
        let mut lo_i = lo;
        if c_var == 0.0 {
            lo_i = lo_i.max(0.0);
        }
        let det_floor = comps
            .iter()
            .enumerate()
            .filter(|(j, c)| *j != i && c.variance == 0.0)
            .map(|(_, c)| c.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        lo_i = lo_i.max(det_floor);
        let integrand = |x: f64| -> f64 {
            let mut v = normal::pdf_at(x, comps[i].mean, sd_i);
            if c_var > 0.0 {
                v *= normal::cdf(x / c_sd);
            }
            for (j, c) in comps.iter().enumerate() {
                if j != i && c.variance > 0.0 {
                    v *= normal::cdf_at(x, c.mean, c.variance.sqrt());
                }
            }
            v
        };
        probs[i] = adaptive_simpson(&integrand, lo_i, hi, conv.delta, &features);
    }

    let total: f64 = probs.iter().sum();
    let residual = 1.0 - total;

    // Independent route to the residual: P[M~ = 0] = P[C + max_i A_i <= 0].
    let p_zero = if c_var == 0.0 {
        product_cdf(comps, 0.0)
    } else {
        // The product CDF at -z vanishes once -z drops below a deterministic
        // component's mean.
        let z_hi = if det_max > f64::NEG_INFINITY {
            (-det_max).min(w * c_sd)
        } else {
            w * c_sd
        };
        let feats: Vec<(f64, f64)> = features.iter().map(|&(c, s)| (-c, s)).collect();
        let integrand = |z: f64| normal::pdf_at(z, 0.0, c_sd) * product_cdf(comps, -z);
        adaptive_simpson(&integrand, -w * c_sd, z_hi, conv.delta, &feats)
    };
    if (residual - p_zero).abs() > conv.tau_prob {
        return Err(CtdError::InsufficientDomain(format!(
            "maximum probabilities do not close: residual {residual} vs direct P[M=0] {p_zero}"
        )));
    }

    Ok((probs, residual))
}

fn deterministic_probabilities(comps: &[Component]) -> (Vec<f64>, f64) {
    let mut best = 0.0_f64;
    let mut arg: Option<usize> = None;
    for (i, c) in comps.iter().enumerate() {
        if c.mean > best {
            best = c.mean;
            arg = Some(i);
        }
    }
    let mut probs = vec![0.0; comps.len()];
    match arg {
        Some(i) => {
            probs[i] = 1.0;
            (probs, 0.0)
        }
        // Ties with the zero floor go to the residual.
        None => (probs, 1.0),
    }
}

/// Composite Simpson quadrature with local refinement around sharp features.
///
/// The base step is `delta`. Any feature narrower than `100 delta` gets a
/// refined panel `center +- 10 scale` with step `scale / 64`, keeping the
/// per-feature Simpson error far below the closure tolerance while the node
/// count stays bounded. Zero-scale features (step discontinuities) split
/// the domain so no panel straddles a jump.
fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    delta: f64,
    features: &[(f64, f64)],
) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut cuts = vec![lo, hi];
    for &(center, scale) in features {
        if scale == 0.0 {
            cuts.push(center);
        } else if scale < 100.0 * delta {
            cuts.push(center - 10.0 * scale);
            cuts.push(center + 10.0 * scale);
        }
    }
    cuts.retain(|&x| (lo..=hi).contains(&x));
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-300);

    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 1e-300 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let mut step = delta;
        for &(center, scale) in features {
            if scale > 0.0 && scale < 100.0 * delta && (mid - center).abs() <= 10.5 * scale {
                step = step.min((scale / 64.0).max(1e-12));
            }
        }
        let mut n = ((b - a) / step).ceil() as usize;
        n = n.clamp(2, 400_000);
        if n % 2 == 1 {
            n += 1;
        }
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            let x = a + h * k as f64;
            acc += f(x) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += acc * h / 3.0;
    }
    total
}

/// CDF of the two-group maximum `max(0, C1 + H1, C2 + H2)` at `z`, where
/// `H_g` is the maximum of group `g`'s idiosyncratic factors and the common
/// factors `(C1, C2)` are centred normal with correlation `c_corr`.
///
/// Integration runs over independent standard coordinates (the principal
/// axes of the common-factor pair) with a tensor Gauss-Hermite rule, so the
/// rule stays exact-in-structure even as `|c_corr| -> 1`.
pub fn two_group_max_cdf(
    group1: &FactorDecomposition,
    group2: &FactorDecomposition,
    c_corr: f64,
    z: f64,
) -> Result<f64> {
    if !c_corr.is_finite() || c_corr.abs() >= 1.0 {
        return Err(CtdError::InvalidInput(format!(
            "common-factor correlation must lie in (-1, 1); got {c_corr}"
        )));
    }
    if z < 0.0 {
        return Ok(0.0);
    }
    let sd1 = group1.c_variance().sqrt();
    let sd2 = group2.c_variance().sqrt();
    let (nodes, weights) = hermite_rule(48);
    let norm = std::f64::consts::PI.sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;

    // C1 = sd1 * U1, C2 = sd2 * (rho U1 + sqrt(1-rho^2) U2).
    let beta = (1.0 - c_corr * c_corr).sqrt();
    let mut acc = 0.0;
    if sd1 == 0.0 && sd2 == 0.0 {
        return Ok(product_cdf(group1.components(), z) * product_cdf(group2.components(), z));
    }
    for (&u1, &w1) in nodes.iter().zip(weights) {
        let c1 = sd1 * sqrt2 * u1;
        let f1 = product_cdf(group1.components(), z - c1);
        if f1 == 0.0 {
            continue;
        }
        let inner = if sd2 == 0.0 {
            product_cdf(group2.components(), z)
        } else {
            let mut s = 0.0;
            for (&u2, &w2) in nodes.iter().zip(weights) {
                let c2 = sd2 * sqrt2 * (c_corr * u1 + beta * u2);
                s += w2 * product_cdf(group2.components(), z - c2);
            }
            s / norm
        };
        acc += w1 * f1 * inner;
    }
    Ok((acc / norm).clamp(0.0, 1.0))
}

/// Two-group CDF sampled on the moment lattice `{0, delta, ..., L}`.
///
/// Factorization used: conditioning on `U1`, the `C2` remainder is an
/// independent `N(0, (1 - c_corr^2) c_var2)` smear of group 2's product CDF,
/// which is precomputed once on a widened lattice with the FFT machinery.
pub fn two_group_cdf_grid(
    group1: &FactorDecomposition,
    group2: &FactorDecomposition,
    c_corr: f64,
    conv: &ConvSettings,
) -> Result<GridFunction> {
    if !c_corr.is_finite() || c_corr.abs() >= 1.0 {
        return Err(CtdError::InvalidInput(format!(
            "common-factor correlation must lie in (-1, 1); got {c_corr}"
        )));
    }
    conv.validate()?;
    let delta = conv.delta;
    let sd1 = group1.c_variance().sqrt();
    let sd2 = group2.c_variance().sqrt();

    // Conservative cutoff over the union of both groups.
    let pool = pooled_bound(group1, group2, conv);
    let count = (pool / delta).round() as usize + 1;

    let (nodes, weights) = hermite_rule(48);
    let norm = std::f64::consts::PI.sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;
    let reach = sqrt2 * nodes.last().unwrap() * 1.05;

    // Smoothed group-2 CDF: K = f_{N(0, (1-rho^2) var2)} * F2 on a lattice
    // wide enough for every K(z - rho * sd2 * sqrt2 * u) lookup.
    let smear_var = (1.0 - c_corr * c_corr) * sd2 * sd2;
    let margin = (reach * sd2.max(sd1) / delta).ceil() as i64 + 2;
    let k_start = -margin;
    let k_count = count as i64 + 2 * margin;
    let k_vals = smoothed_product_cdf(
        group2.components(),
        smear_var,
        k_start,
        k_count as usize,
        conv,
    );
    let k_grid = GridFunction::new(k_start as f64 * delta, delta, k_vals)?;

    let mut values = Vec::with_capacity(count);
    for m in 0..count {
        let z = m as f64 * delta;
        let mut acc = 0.0;
        for (&u1, &w1) in nodes.iter().zip(weights) {
            let c1 = sd1 * sqrt2 * u1;
            let f1 = product_cdf(group1.components(), z - c1);
            if f1 == 0.0 {
                continue;
            }
            let k = k_grid.interpolate_cubic(z - c_corr * sd2 * sqrt2 * u1);
            acc += w1 * f1 * k;
        }
        values.push((acc / norm).clamp(0.0, 1.0));
    }
    let mut h = GridFunction::new(0.0, delta, values)?;
    h.validate_cdf(conv.tau_cdf.max(1e-7))?;
    h.clamp_cdf();
    Ok(h)
}

fn pooled_bound(
    group1: &FactorDecomposition,
    group2: &FactorDecomposition,
    conv: &ConvSettings,
) -> f64 {
    let n = group1.n() + group2.n();
    let z = normal::quantile(1.0 - conv.eps_tail / (2.0 * n as f64));
    let mut lim = 0.0_f64;
    for (g, c_var) in [(group1, group1.c_variance()), (group2, group2.c_variance())] {
        for c in g.components() {
            let sd = (c.variance + c_var).sqrt();
            lim = lim.max(c.mean + z * sd);
        }
    }
    lim = lim.max(0.0);
    conv.delta * (lim / conv.delta - 1e-9).ceil().max(1.0)
}

/// Per-grid-time moments and maximum probabilities of the common-factor
/// maximum, produced by `estimators::moment_series`.
#[derive(Debug, Clone, Default)]
pub struct MaxMomentSeries {
    /// Grid times `t_k`.
    pub times: Vec<f64>,
    /// `E[M~(t_k)]`.
    pub mean: Vec<f64>,
    /// `E[M~(t_k)^2]` (raw second moment).
    pub raw_second: Vec<f64>,
    /// Central variance `E[M~^2] - E[M~]^2`, floored at zero.
    pub variance: Vec<f64>,
    /// `P[M~(t_k) = q~_i(t_k)]` per component; empty when not requested.
    pub probs: Vec<Vec<f64>>,
    /// `P[M~(t_k) = 0]`.
    pub residual: Vec<f64>,
    /// Refined tail cutoff `L(t_k)`.
    pub cutoff: Vec<f64>,
    /// Fitted correlation parameter per time.
    pub gamma: Vec<f64>,
    /// True where the fitted gamma hit the feasibility boundary.
    pub gamma_clamped: Vec<bool>,
    /// True where the central variance was floored at zero.
    pub variance_floored: Vec<bool>,
}

impl MaxMomentSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn has_probabilities(&self) -> bool {
        !self.probs.is_empty()
    }
}
