//! Assembly of the discount-factor estimators from per-time maximum moments.
//!
//! `CF1 = exp(-sum_k E[M~(t_k)] dt)` is the first-order estimator. The
//! second-order correction `(1 + V/2)` uses one of two integral-variance
//! estimators: the diffusion route `psi` (an Ito process matched to the
//! per-time variances) or the mean-reversion route `chi` (exponentially
//! damped double integral with a probability-weighted reversion speed).

use crate::common_factor::{self as cf, ConvSettings, FactorDecomposition, MaxMomentSeries};
use crate::error::{CtdError, Result};
use crate::term_structure::{
    pair_correlation, spread_mean, spread_variance, CorrelationSpec, SpreadParams, TimeGrid,
};
use nalgebra::DMatrix;
use std::fmt;

/// Which per-time variance feeds the integral-variance estimators.
///
/// `Central` subtracts the squared mean from the raw second moment;
/// `RawSecondMoment` uses the raw second moment directly, reproducing the
/// literal CDF-integral quantity for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    #[default]
    Central,
    RawSecondMoment,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceMode::Central => write!(f, "central"),
            VarianceMode::RawSecondMoment => write!(f, "raw"),
        }
    }
}

/// Audit switch for the inner integrand of the mean-reversion estimator:
/// evaluate the variance at the inner time `s` (default) or at the outer
/// time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerVariable {
    #[default]
    S,
    T,
}

/// Which estimators to compute. Skipping the mean-reversion estimator also
/// skips the maximum-probability integrals, the dominant cost for many
/// currencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorSelection {
    pub cf1: bool,
    pub diffusion: bool,
    pub mean_reversion: bool,
}

impl Default for EstimatorSelection {
    fn default() -> Self {
        Self {
            cf1: true,
            diffusion: true,
            mean_reversion: true,
        }
    }
}

/// Settings of a pricing run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorSettings {
    pub conv: ConvSettings,
    pub variance_mode: VarianceMode,
    pub inner_variable: InnerVariable,
    pub selection: EstimatorSelection,
    /// Optional exogenous base discount factor `P0(0, T)` applied
    /// multiplicatively on top of the spread expectation.
    pub base_discount: Option<f64>,
}

/// Non-fatal conditions surfaced to both human and machine output.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// The correlation parameter hit the feasibility boundary.
    GammaClamped { count: usize, first_time: f64 },
    /// The central variance fell below zero and was floored.
    VarianceFloored { count: usize },
    /// The refined tail cutoff reached the end of the conservative domain.
    TailDomainTight { count: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::GammaClamped { count, first_time } => write!(
                f,
                "gamma clamped at the feasibility boundary at {count} grid time(s), \
                 first at t = {first_time}"
            ),
            Warning::VarianceFloored { count } => {
                write!(
                    f,
                    "central variance floored at zero at {count} grid time(s)"
                )
            }
            Warning::TailDomainTight { count } => write!(
                f,
                "tail cutoff reached the conservative domain end at {count} grid time(s)"
            ),
        }
    }
}

impl Warning {
    /// Stable machine identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Warning::GammaClamped { .. } => "gamma_clamped",
            Warning::VarianceFloored { .. } => "variance_floored",
            Warning::TailDomainTight { .. } => "tail_domain_tight",
        }
    }
}

/// Full result of a pricing run.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    /// First-order estimator of the spread expectation factor, in `(0, 1]`.
    pub cf1: f64,
    /// Diffusion-based integral variance.
    pub psi: f64,
    /// Mean-reversion-based integral variance (when computed).
    pub chi: Option<f64>,
    /// `cf1 * (1 + psi / 2)`.
    pub cf2_diffusion: f64,
    /// `cf1 * (1 + chi / 2)` (when computed).
    pub cf2_mr: Option<f64>,
    pub variance_mode: VarianceMode,
    /// Optional `P0(0, T)` multiplier.
    pub base_discount: Option<f64>,
    pub warnings: Vec<Warning>,
    /// Per-time snapshot of the moment pipeline.
    pub diagnostics: MaxMomentSeries,
}

impl EstimateReport {
    fn discount(&self, v: f64) -> f64 {
        self.base_discount.unwrap_or(1.0) * v
    }

    /// `P0(0,T) * CF1` when a base discount is configured.
    pub fn discounted_cf1(&self) -> f64 {
        self.discount(self.cf1)
    }

    pub fn discounted_cf2_diffusion(&self) -> f64 {
        self.discount(self.cf2_diffusion)
    }

    pub fn discounted_cf2_mr(&self) -> Option<f64> {
        self.cf2_mr.map(|v| self.discount(v))
    }
}

/// Computes per-time moments (and optionally maximum probabilities) of the
/// common-factor maximum over the whole grid.
///
/// `t_0` and any fully deterministic time are handled analytically: the
/// maximum is `max(0, mu_1, .., mu_N)` with zero variance and a one-hot
/// probability vector (ties go to the zero floor).
pub fn moment_series(
    spreads: &[SpreadParams],
    corr: &CorrelationSpec,
    grid: &TimeGrid,
    conv: &ConvSettings,
    with_probabilities: bool,
) -> Result<MaxMomentSeries> {
    validate_inputs(spreads, corr)?;
    conv.validate()?;

    let n = spreads.len();
    let len = grid.len();
    let mut series = MaxMomentSeries {
        times: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        raw_second: Vec::with_capacity(len),
        variance: Vec::with_capacity(len),
        probs: if with_probabilities {
            Vec::with_capacity(len)
        } else {
            Vec::new()
        },
        residual: if with_probabilities {
            Vec::with_capacity(len)
        } else {
            Vec::new()
        },
        cutoff: Vec::with_capacity(len),
        gamma: Vec::with_capacity(len),
        gamma_clamped: Vec::with_capacity(len),
        variance_floored: Vec::with_capacity(len),
    };

    for k in 0..len {
        let t = grid.t(k);
        let mut mus = Vec::with_capacity(n);
        let mut vars = Vec::with_capacity(n);
        for p in spreads {
            mus.push(spread_mean(p, t)?);
            vars.push(spread_variance(p, t)?);
        }
        let stochastic: Vec<usize> = (0..n).filter(|&i| vars[i] > 0.0).collect();

        if stochastic.is_empty() {
            let m = mus.iter().copied().fold(0.0_f64, f64::max);
            series.times.push(t);
            series.mean.push(m);
            series.raw_second.push(m * m);
            series.variance.push(0.0);
            if with_probabilities {
                let (probs, residual) = one_hot_probabilities(&mus);
                series.probs.push(probs);
                series.residual.push(residual);
            }
            series.cutoff.push(m);
            series.gamma.push(0.0);
            series.gamma_clamped.push(false);
            series.variance_floored.push(false);
            continue;
        }

        let fit = if stochastic.len() >= 2 {
            let sigmas: Vec<f64> = stochastic.iter().map(|&i| vars[i].sqrt()).collect();
            let m = stochastic.len();
            let mut target = DMatrix::identity(m, m);
            for a in 0..m {
                for b in 0..a {
                    let (i, j) = (stochastic[a], stochastic[b]);
                    let rho = pair_correlation(&spreads[i], &spreads[j], corr.get(i, j), t)?;
                    target[(a, b)] = rho;
                    target[(b, a)] = rho;
                }
            }
            cf::optimize_gamma_fit(&sigmas, &target, conv.eps_gamma)?
        } else {
            cf::GammaFit {
                gamma: 0.0,
                unclamped: 0.0,
                clamped: false,
            }
        };

        let dec = FactorDecomposition::decompose(&mus, &vars, fit.gamma)?;
        let h = cf::shifted_max_cdf(&dec, conv)?;
        let mean = cf::max_expectation(&h, conv)?;
        let raw_second = cf::max_raw_second_moment(&h, conv)?;
        let tau = cf::variance_tolerance(conv, mean);
        let variance = cf::max_variance(mean, raw_second, tau)?;
        let floored = raw_second < mean * mean;
        if with_probabilities {
            let (probs, residual) = cf::max_probabilities(&dec, conv)?;
            series.probs.push(probs);
            series.residual.push(residual);
        }
        series.times.push(t);
        series.mean.push(mean);
        series.raw_second.push(raw_second);
        series.variance.push(variance);
        series.cutoff.push(cf::refine_cutoff(&h, conv.eps_tail)?);
        series.gamma.push(fit.gamma);
        series.gamma_clamped.push(fit.clamped);
        series.variance_floored.push(floored);
    }

    Ok(series)
}

/// Maximum probabilities alone, over the whole grid. Cheap relative to the
/// full series: no convolution stage is run.
pub fn max_probability_series(
    spreads: &[SpreadParams],
    corr: &CorrelationSpec,
    grid: &TimeGrid,
    conv: &ConvSettings,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    validate_inputs(spreads, corr)?;
    let n = spreads.len();
    let mut probs = Vec::with_capacity(grid.len());
    let mut residuals = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let t = grid.t(k);
        let mut mus = Vec::with_capacity(n);
        let mut vars = Vec::with_capacity(n);
        for p in spreads {
            mus.push(spread_mean(p, t)?);
            vars.push(spread_variance(p, t)?);
        }
        let stochastic: Vec<usize> = (0..n).filter(|&i| vars[i] > 0.0).collect();
        if stochastic.is_empty() {
            let (p, r) = one_hot_probabilities(&mus);
            probs.push(p);
            residuals.push(r);
            continue;
        }
        let fit = if stochastic.len() >= 2 {
            let sigmas: Vec<f64> = stochastic.iter().map(|&i| vars[i].sqrt()).collect();
            let m = stochastic.len();
            let mut target = DMatrix::identity(m, m);
            for a in 0..m {
                for b in 0..a {
                    let (i, j) = (stochastic[a], stochastic[b]);
                    let rho = pair_correlation(&spreads[i], &spreads[j], corr.get(i, j), t)?;
                    target[(a, b)] = rho;
                    target[(b, a)] = rho;
                }
            }
            cf::optimize_gamma_fit(&sigmas, &target, conv.eps_gamma)?
        } else {
            cf::GammaFit {
                gamma: 0.0,
                unclamped: 0.0,
                clamped: false,
            }
        };
        let dec = FactorDecomposition::decompose(&mus, &vars, fit.gamma)?;
        let (p, r) = cf::max_probabilities(&dec, conv)?;
        probs.push(p);
        residuals.push(r);
    }
    Ok((probs, residuals))
}

fn one_hot_probabilities(mus: &[f64]) -> (Vec<f64>, f64) {
    let mut probs = vec![0.0; mus.len()];
    let mut best = 0.0_f64;
    let mut arg = None;
    for (i, &m) in mus.iter().enumerate() {
        if m > best {
            best = m;
            arg = Some(i);
        }
    }
    match arg {
        Some(i) => {
            probs[i] = 1.0;
            (probs, 0.0)
        }
        None => (probs, 1.0),
    }
}

fn validate_inputs(spreads: &[SpreadParams], corr: &CorrelationSpec) -> Result<()> {
    if spreads.is_empty() {
        return Err(CtdError::InvalidInput("no spreads supplied".into()));
    }
    if corr.n() != spreads.len() {
        return Err(CtdError::InvalidInput(format!(
            "correlation is {} x {} but there are {} spreads",
            corr.n(),
            corr.n(),
            spreads.len()
        )));
    }
    corr.require_nonnegative()
}

/// Largest unconstrained correlation-fit parameter over all positive grid
/// times. The configuration is expressible by the single-factor model
/// exactly when this stays below one.
pub fn max_unclamped_gamma(
    spreads: &[SpreadParams],
    corr: &CorrelationSpec,
    grid: &TimeGrid,
) -> Result<f64> {
    validate_inputs(spreads, corr)?;
    let n = spreads.len();
    let mut worst = 0.0_f64;
    for k in 1..grid.len() {
        let t = grid.t(k);
        let stochastic: Vec<usize> = (0..n).filter(|&i| spreads[i].xi > 0.0).collect();
        if stochastic.len() < 2 {
            continue;
        }
        let sigmas: Vec<f64> = stochastic
            .iter()
            .map(|&i| spread_variance(&spreads[i], t).map(f64::sqrt))
            .collect::<Result<_>>()?;
        let m = stochastic.len();
        let mut target = DMatrix::identity(m, m);
        for a in 0..m {
            for b in 0..a {
                let (i, j) = (stochastic[a], stochastic[b]);
                let rho = pair_correlation(&spreads[i], &spreads[j], corr.get(i, j), t)?;
                target[(a, b)] = rho;
                target[(b, a)] = rho;
            }
        }
        let fit = cf::optimize_gamma_fit(&sigmas, &target, 1e-12)?;
        worst = worst.max(fit.unclamped);
    }
    Ok(worst)
}

/// `CF1 = exp(-sum_{k<R} E[M~(t_k)] dt)` (left endpoints).
pub fn cf1(series: &MaxMomentSeries, grid: &TimeGrid) -> f64 {
    let r = grid.steps();
    let acc: f64 = series.mean[..r].iter().sum();
    (-acc * grid.dt()).exp()
}

fn variance_track(series: &MaxMomentSeries, mode: VarianceMode) -> &[f64] {
    match mode {
        VarianceMode::Central => &series.variance,
        VarianceMode::RawSecondMoment => &series.raw_second,
    }
}

/// Diffusion-based integral variance `psi(T)`.
///
/// The auxiliary Ito process is matched so that its variance at every grid
/// point equals the selected per-time variance `V`; the double integral of
/// the integral variance then collapses to
/// `sum_s (sum_{t<=s} V dt) dt + sum_s (T - t_s) V(t_s) dt` with left sums.
pub fn diffusion_variance(series: &MaxMomentSeries, grid: &TimeGrid, mode: VarianceMode) -> f64 {
    let v = variance_track(series, mode);
    let r = grid.steps();
    let dt = grid.dt();
    let maturity = grid.maturity();
    let mut prefix = 0.0;
    let mut psi = 0.0;
    for k in 0..r {
        prefix += v[k] * dt;
        psi += prefix * dt;
        psi += (maturity - grid.t(k)) * v[k] * dt;
    }
    psi
}

/// Probability-weighted reversion speed `kappa~(t_k) = sum_i P[M~ = q~_i] kappa_i`
/// (the zero floor contributes no reversion).
pub fn weighted_kappa(series: &MaxMomentSeries, kappas: &[f64]) -> Result<Vec<f64>> {
    if !series.has_probabilities() {
        return Err(CtdError::InvalidInput(
            "moment series was built without maximum probabilities".into(),
        ));
    }
    Ok(series
        .probs
        .iter()
        .map(|p| p.iter().zip(kappas).map(|(pi, ki)| pi * ki).sum())
        .collect())
}

/// Mean-reversion-based integral variance
/// `chi(T) = 2 int_0^T e^{-K(t)} int_0^t e^{K(s)} V ds dt` with
/// `K(t) = int_0^t kappa~(u) du`, all integrals as left sums. The stable
/// pairwise form `e^{K(s) - K(t)}` is used, so large reversion speeds do not
/// overflow.
pub fn mr_variance(
    series: &MaxMomentSeries,
    kappa_tilde: &[f64],
    grid: &TimeGrid,
    mode: VarianceMode,
    inner: InnerVariable,
) -> f64 {
    let v = variance_track(series, mode);
    let r = grid.steps();
    let dt = grid.dt();
    // K[k] = sum_{j<k} kappa~_j dt.
    let mut big_k = vec![0.0; r + 1];
    for k in 1..=r {
        big_k[k] = big_k[k - 1] + kappa_tilde[k - 1] * dt;
    }
    let mut chi = 0.0;
    for k in 0..r {
        let mut inner_acc = 0.0;
        for j in 0..k {
            let damp = (big_k[j] - big_k[k]).exp();
            let vv = match inner {
                InnerVariable::S => v[j],
                InnerVariable::T => v[k],
            };
            inner_acc += damp * vv * dt;
        }
        chi += inner_acc * dt;
    }
    2.0 * chi
}

/// Runs the full pipeline: moment series, `CF1`, `psi`, `chi` and the
/// second-order estimators `CF2 = CF1 (1 + V/2)`.
pub fn estimate(
    spreads: &[SpreadParams],
    corr: &CorrelationSpec,
    grid: &TimeGrid,
    settings: &EstimatorSettings,
) -> Result<EstimateReport> {
    if let Some(p0) = settings.base_discount {
        if !(p0.is_finite() && p0 > 0.0) {
            return Err(CtdError::InvalidInput(format!(
                "base discount must be positive; got {p0}"
            )));
        }
    }
    let series = moment_series(
        spreads,
        corr,
        grid,
        &settings.conv,
        settings.selection.mean_reversion,
    )?;
    let cf1_value = cf1(&series, grid);
    let psi = diffusion_variance(&series, grid, settings.variance_mode);
    let (chi, cf2_mr) = if settings.selection.mean_reversion {
        let kappas: Vec<f64> = spreads.iter().map(|p| p.kappa).collect();
        let kappa_tilde = weighted_kappa(&series, &kappas)?;
        let chi = mr_variance(
            &series,
            &kappa_tilde,
            grid,
            settings.variance_mode,
            settings.inner_variable,
        );
        (Some(chi), Some(cf1_value * (1.0 + 0.5 * chi)))
    } else {
        (None, None)
    };

    Ok(EstimateReport {
        cf1: cf1_value,
        psi,
        chi,
        cf2_diffusion: cf1_value * (1.0 + 0.5 * psi),
        cf2_mr,
        variance_mode: settings.variance_mode,
        base_discount: settings.base_discount,
        warnings: collect_warnings(&series),
        diagnostics: series,
    })
}

/// Two-group pricing: within-group decompositions with per-group `gamma`
/// fits, cross-group dependence through the common-factor correlation.
/// The mean-reversion estimator is not defined for the grouped model, so
/// `chi` and `cf2_mr` are absent from the report.
pub fn estimate_two_group(
    spreads: &[SpreadParams],
    corr: &CorrelationSpec,
    grid: &TimeGrid,
    split: usize,
    c_corr: f64,
    settings: &EstimatorSettings,
) -> Result<EstimateReport> {
    let n = spreads.len();
    if split == 0 || split >= n {
        return Err(CtdError::InvalidInput(format!(
            "group split must leave both groups non-empty; got split {split} of {n}"
        )));
    }
    if corr.n() != n {
        return Err(CtdError::InvalidInput(
            "correlation dimension does not match the spreads".into(),
        ));
    }
    if !c_corr.is_finite() || c_corr.abs() >= 1.0 {
        return Err(CtdError::InvalidInput(format!(
            "common-factor correlation must lie in (-1, 1); got {c_corr}"
        )));
    }
    let conv = &settings.conv;
    conv.validate()?;

    let groups: [Vec<usize>; 2] = [(0..split).collect(), (split..n).collect()];
    let len = grid.len();
    let mut series = MaxMomentSeries {
        times: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        raw_second: Vec::with_capacity(len),
        variance: Vec::with_capacity(len),
        probs: Vec::new(),
        residual: Vec::new(),
        cutoff: Vec::with_capacity(len),
        gamma: Vec::with_capacity(len),
        gamma_clamped: Vec::with_capacity(len),
        variance_floored: Vec::with_capacity(len),
    };

    for k in 0..len {
        let t = grid.t(k);
        let mut mus = Vec::with_capacity(n);
        let mut vars = Vec::with_capacity(n);
        for p in spreads {
            mus.push(spread_mean(p, t)?);
            vars.push(spread_variance(p, t)?);
        }
        if vars.iter().all(|&v| v == 0.0) {
            let m = mus.iter().copied().fold(0.0_f64, f64::max);
            series.times.push(t);
            series.mean.push(m);
            series.raw_second.push(m * m);
            series.variance.push(0.0);
            series.cutoff.push(m);
            series.gamma.push(0.0);
            series.gamma_clamped.push(false);
            series.variance_floored.push(false);
            continue;
        }

        let mut decs = Vec::with_capacity(2);
        let mut gamma_max = 0.0_f64;
        let mut clamped = false;
        for idx in &groups {
            let g_mus: Vec<f64> = idx.iter().map(|&i| mus[i]).collect();
            let g_vars: Vec<f64> = idx.iter().map(|&i| vars[i]).collect();
            let stoch: Vec<usize> = idx.iter().copied().filter(|&i| vars[i] > 0.0).collect();
            let fit = if stoch.len() >= 2 {
                let sigmas: Vec<f64> = stoch.iter().map(|&i| vars[i].sqrt()).collect();
                let m = stoch.len();
                let mut target = DMatrix::identity(m, m);
                for a in 0..m {
                    for b in 0..a {
                        let (i, j) = (stoch[a], stoch[b]);
                        let rho = pair_correlation(&spreads[i], &spreads[j], corr.get(i, j), t)?;
                        target[(a, b)] = rho;
                        target[(b, a)] = rho;
                    }
                }
                cf::optimize_gamma_fit(&sigmas, &target, conv.eps_gamma)?
            } else {
                // A single-member group has no internal correlation to fit;
                // give its common factor enough variance to carry the
                // cross-group correlation.
                cf::GammaFit {
                    gamma: c_corr.abs().min(1.0 - conv.eps_gamma),
                    unclamped: c_corr.abs(),
                    clamped: false,
                }
            };
            gamma_max = gamma_max.max(fit.gamma);
            clamped |= fit.clamped;
            decs.push(FactorDecomposition::decompose(&g_mus, &g_vars, fit.gamma)?);
        }

        let h = cf::two_group_cdf_grid(&decs[0], &decs[1], c_corr, conv)?;
        let mean = cf::max_expectation(&h, conv)?;
        let raw_second = cf::max_raw_second_moment(&h, conv)?;
        let tau = cf::variance_tolerance(conv, mean);
        let variance = cf::max_variance(mean, raw_second, tau)?;
        series.times.push(t);
        series.variance_floored.push(raw_second < mean * mean);
        series.mean.push(mean);
        series.raw_second.push(raw_second);
        series.variance.push(variance);
        series.cutoff.push(cf::refine_cutoff(&h, conv.eps_tail)?);
        series.gamma.push(gamma_max);
        series.gamma_clamped.push(clamped);
    }

    let cf1_value = cf1(&series, grid);
    let psi = diffusion_variance(&series, grid, settings.variance_mode);
    Ok(EstimateReport {
        cf1: cf1_value,
        psi,
        chi: None,
        cf2_diffusion: cf1_value * (1.0 + 0.5 * psi),
        cf2_mr: None,
        variance_mode: settings.variance_mode,
        base_discount: settings.base_discount,
        warnings: collect_warnings(&series),
        diagnostics: series,
    })
}

fn collect_warnings(series: &MaxMomentSeries) -> Vec<Warning> {
    let mut warnings = Vec::new();
    let clamps = series.gamma_clamped.iter().filter(|&&c| c).count();
    if clamps > 0 {
        let first = series
            .gamma_clamped
            .iter()
            .position(|&c| c)
            .map(|i| series.times[i])
            .unwrap_or(0.0);
        warnings.push(Warning::GammaClamped {
            count: clamps,
            first_time: first,
        });
    }
    let floored = series.variance_floored.iter().filter(|&&f| f).count();
    if floored > 0 {
        warnings.push(Warning::VarianceFloored { count: floored });
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn table_spreads() -> Vec<SpreadParams> {
        vec![
            SpreadParams::with_constant_theta(0.0078, 0.0018, 0.000845, 0.000845).unwrap(),
            SpreadParams::with_constant_theta(0.0076, 0.0023, 0.001514, 0.001514).unwrap(),
        ]
    }

    fn corr(rho: f64) -> CorrelationSpec {
        CorrelationSpec::new(vec![vec![1.0, rho], vec![rho, 1.0]]).unwrap()
    }

    fn coarse_conv() -> ConvSettings {
        ConvSettings {
            delta: 2e-4,
            ..ConvSettings::default()
        }
    }

    #[test]
    fn cf1_of_zero_mean_series_is_one() {
        let grid = TimeGrid::new(2.0, 0.5).unwrap();
        let series = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![0.0; grid.len()],
            ..Default::default()
        };
        assert_eq!(cf1(&series, &grid), 1.0);
    }

    #[test]
    fn cf1_constant_mean_is_exponential() {
        let grid = TimeGrid::new(10.0, 0.1).unwrap();
        let c = 0.0123;
        let series = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![c; grid.len()],
            ..Default::default()
        };
        assert_relative_eq!(cf1(&series, &grid), (-c * 10.0).exp(), max_relative = 1e-13);
    }

    #[test]
    fn psi_zero_when_variances_vanish() {
        let grid = TimeGrid::new(5.0, 0.5).unwrap();
        let series = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![0.001; grid.len()],
            raw_second: vec![1e-6; grid.len()],
            variance: vec![0.0; grid.len()],
            ..Default::default()
        };
        assert_eq!(
            diffusion_variance(&series, &grid, VarianceMode::Central),
            0.0
        );
    }

    #[test]
    fn psi_constant_variance_approaches_v_t_squared() {
        // Oracle: with constant inner integral V, the double integral gives
        // V T^2/2 + V T^2/2 = V T^2.
        let t_mat = 8.0;
        let grid = TimeGrid::new(t_mat, 0.01).unwrap();
        let v = 3.7e-5;
        let series = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![0.0; grid.len()],
            raw_second: vec![v; grid.len()],
            variance: vec![v; grid.len()],
            ..Default::default()
        };
        let psi = diffusion_variance(&series, &grid, VarianceMode::Central);
        let exact = v * t_mat * t_mat;
        assert_abs_diff_eq!(psi, exact, epsilon = 2.0 * v * t_mat * grid.dt());
    }

    #[test]
    fn weighted_kappa_identities() {
        let grid = TimeGrid::new(1.0, 0.5).unwrap();
        let mut series = MaxMomentSeries {
            times: grid.points().collect(),
            probs: vec![vec![1.0, 0.0], vec![0.5, 0.25], vec![0.0, 0.0]],
            residual: vec![0.0, 0.25, 1.0],
            ..Default::default()
        };
        let kappa = weighted_kappa(&series, &[0.01, 0.02]).unwrap();
        assert_abs_diff_eq!(kappa[0], 0.01, epsilon = 1e-18);
        assert_abs_diff_eq!(kappa[1], 0.01, epsilon = 1e-18);
        assert_abs_diff_eq!(kappa[2], 0.0, epsilon = 0.0);

        // Symmetric equal-kappa closure: kappa~ = kappa (1 - residual).
        series.probs = vec![vec![0.4, 0.4]; 3];
        series.residual = vec![0.2; 3];
        let kappa = weighted_kappa(&series, &[0.03, 0.03]).unwrap();
        for k in kappa {
            assert_abs_diff_eq!(k, 0.03 * 0.8, epsilon = 1e-17);
        }
        series.probs.clear();
        assert!(weighted_kappa(&series, &[0.03, 0.03]).is_err());
    }

    #[test]
    fn chi_undamped_when_kappa_zero() {
        let grid = TimeGrid::new(4.0, 0.02).unwrap();
        let v = 2.3e-5;
        let series = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![0.0; grid.len()],
            raw_second: vec![v; grid.len()],
            variance: vec![v; grid.len()],
            ..Default::default()
        };
        let kappa_tilde = vec![0.0; grid.len()];
        let chi = mr_variance(
            &series,
            &kappa_tilde,
            &grid,
            VarianceMode::Central,
            InnerVariable::S,
        );
        // 2 int_0^T int_0^t v ds dt = v T^2.
        let exact = v * 16.0;
        assert_abs_diff_eq!(chi, exact, epsilon = 3.0 * v * 4.0 * grid.dt());
        // V = 0 collapses chi entirely.
        let zero = MaxMomentSeries {
            times: grid.points().collect(),
            variance: vec![0.0; grid.len()],
            raw_second: vec![0.0; grid.len()],
            mean: vec![0.0; grid.len()],
            ..Default::default()
        };
        assert_eq!(
            mr_variance(
                &zero,
                &kappa_tilde,
                &grid,
                VarianceMode::Central,
                InnerVariable::S
            ),
            0.0
        );
    }

    #[test]
    fn chi_inner_variable_switch() {
        // For constant V both placements of the inner variance coincide;
        // for a growing V the audit variant weights later values and comes
        // out larger.
        let grid = TimeGrid::new(2.0, 0.1).unwrap();
        let kappa_tilde = vec![0.5; grid.len()];
        let flat = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![0.0; grid.len()],
            raw_second: vec![1e-5; grid.len()],
            variance: vec![1e-5; grid.len()],
            ..Default::default()
        };
        let s = mr_variance(
            &flat,
            &kappa_tilde,
            &grid,
            VarianceMode::Central,
            InnerVariable::S,
        );
        let t = mr_variance(
            &flat,
            &kappa_tilde,
            &grid,
            VarianceMode::Central,
            InnerVariable::T,
        );
        assert_abs_diff_eq!(s, t, epsilon = 1e-18);

        let growing = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![0.0; grid.len()],
            raw_second: (0..grid.len()).map(|k| 1e-6 * k as f64).collect(),
            variance: (0..grid.len()).map(|k| 1e-6 * k as f64).collect(),
            ..Default::default()
        };
        let s = mr_variance(
            &growing,
            &kappa_tilde,
            &grid,
            VarianceMode::Central,
            InnerVariable::S,
        );
        let t = mr_variance(
            &growing,
            &kappa_tilde,
            &grid,
            VarianceMode::Central,
            InnerVariable::T,
        );
        assert!(t > s && s > 0.0);
    }

    #[test]
    fn chi_constant_inputs_match_closed_form() {
        // Oracle: 2 v (T/kappa - (1 - e^{-kappa T})/kappa^2).
        let t_mat = 6.0;
        let grid = TimeGrid::new(t_mat, 0.005).unwrap();
        let v = 1.9e-5;
        let kappa = 0.8;
        let series = MaxMomentSeries {
            times: grid.points().collect(),
            mean: vec![0.0; grid.len()],
            raw_second: vec![v; grid.len()],
            variance: vec![v; grid.len()],
            ..Default::default()
        };
        let kappa_tilde = vec![kappa; grid.len()];
        let chi = mr_variance(
            &series,
            &kappa_tilde,
            &grid,
            VarianceMode::Central,
            InnerVariable::S,
        );
        let exact = 2.0 * v * (t_mat / kappa - (-(-kappa * t_mat).exp_m1()) / (kappa * kappa));
        assert_relative_eq!(
            chi,
            exact,
            max_relative = 4.0 * grid.dt() / t_mat * kappa * t_mat
        );
        assert_relative_eq!(chi, exact, max_relative = 0.01);
    }

    #[test]
    fn series_deterministic_spreads_are_analytic() {
        let spreads = vec![
            SpreadParams::with_constant_theta(0.01, 0.0, 0.002, -0.001).unwrap(),
            SpreadParams::with_constant_theta(0.02, 0.0, -0.004, 0.0005).unwrap(),
        ];
        let grid = TimeGrid::new(2.0, 0.25).unwrap();
        let series = moment_series(&spreads, &corr(0.0), &grid, &coarse_conv(), true).unwrap();
        for k in 0..grid.len() {
            let t = grid.t(k);
            let m1 = spread_mean(&spreads[0], t).unwrap();
            let m2 = spread_mean(&spreads[1], t).unwrap();
            let m = m1.max(m2).max(0.0);
            assert_abs_diff_eq!(series.mean[k], m, epsilon = 1e-16);
            assert_eq!(series.variance[k], 0.0);
            let total: f64 = series.probs[k].iter().sum::<f64>() + series.residual[k];
            assert_abs_diff_eq!(total, 1.0, epsilon = 0.0);
        }
    }

    #[test]
    fn series_single_spread_matches_shifted_half_normal() {
        // One spread: M~ = max(0, X) with X ~ N(mu(t), sigma^2(t)); compare
        // against direct quadrature of the normal law.
        let spreads =
            vec![SpreadParams::with_constant_theta(0.011, 0.0021, 0.0013, 0.0009).unwrap()];
        let grid = TimeGrid::new(3.0, 0.5).unwrap();
        let conv = ConvSettings {
            delta: 1e-6,
            ..ConvSettings::default()
        };
        let series =
            moment_series(&spreads, &CorrelationSpec::identity(1), &grid, &conv, false).unwrap();
        for k in 1..grid.len() {
            let t = grid.t(k);
            let mu = spread_mean(&spreads[0], t).unwrap();
            let sd = spread_variance(&spreads[0], t).unwrap().sqrt();
            // E[max(0,X)] = mu Phi(mu/sd) + sd phi(mu/sd).
            let z = mu / sd;
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let cdf = 0.5 * statrs::function::erf::erfc(-z * std::f64::consts::FRAC_1_SQRT_2);
            let expect = mu * cdf + sd * phi;
            // The left-sum rule overstates the integral by
            // delta/2 * P[M > 0] + O(delta^2); check against the corrected
            // value tightly and against the plain value at the step scale.
            let bias = 0.5 * conv.delta * cdf;
            assert_abs_diff_eq!(series.mean[k], expect + bias, epsilon = 1e-9);
            assert_abs_diff_eq!(series.mean[k], expect, epsilon = conv.delta);
            let raw = (mu * mu + sd * sd) * cdf + mu * sd * phi;
            assert_abs_diff_eq!(series.raw_second[k], raw, epsilon = 1e-8);
        }
    }

    #[test]
    fn series_jensen_floor_holds() {
        let spreads = table_spreads();
        let grid = TimeGrid::new(20.0, 0.5).unwrap();
        let series = moment_series(&spreads, &corr(0.3), &grid, &coarse_conv(), false).unwrap();
        for k in 0..grid.len() {
            let t = grid.t(k);
            let m1 = spread_mean(&spreads[0], t).unwrap();
            let m2 = spread_mean(&spreads[1], t).unwrap();
            assert!(series.mean[k] >= m1.max(m2).max(0.0) - 1e-12);
        }
    }

    #[test]
    fn series_strongly_negative_drift_is_flat_zero() {
        let spreads = vec![
            SpreadParams::with_constant_theta(0.01, 1e-5, -0.05, -0.04).unwrap(),
            SpreadParams::with_constant_theta(0.012, 1e-5, -0.06, -0.05).unwrap(),
        ];
        let grid = TimeGrid::new(5.0, 0.5).unwrap();
        let series = moment_series(&spreads, &corr(0.2), &grid, &coarse_conv(), false).unwrap();
        for &m in &series.mean {
            assert!(m < 1e-10);
        }
    }

    #[test]
    fn estimate_zero_vol_collapses_estimators() {
        let spreads = vec![
            SpreadParams::with_constant_theta(0.0078, 0.0, 0.000845, 0.000845).unwrap(),
            SpreadParams::with_constant_theta(0.0076, 0.0, 0.001514, 0.001514).unwrap(),
        ];
        let grid = TimeGrid::new(5.0, 0.1).unwrap();
        let settings = EstimatorSettings::default();
        let report = estimate(&spreads, &corr(0.3), &grid, &settings).unwrap();
        assert_eq!(report.psi, 0.0);
        assert_eq!(report.chi, Some(0.0));
        assert_eq!(report.cf1, report.cf2_diffusion);
        assert_eq!(Some(report.cf1), report.cf2_mr);
        // Deterministic value: exp(-sum max(0, mu) dt) with mu = q0.
        let expect = (-(0.001514_f64) * 5.0).exp();
        assert_relative_eq!(report.cf1, expect, max_relative = 1e-12);
    }

    #[test]
    fn estimate_second_order_identities_and_warnings() {
        let spreads = table_spreads();
        let grid = TimeGrid::new(5.0, 0.5).unwrap();
        let settings = EstimatorSettings {
            conv: coarse_conv(),
            ..EstimatorSettings::default()
        };
        let report = estimate(&spreads, &corr(0.3), &grid, &settings).unwrap();
        assert!(report.psi >= 0.0);
        assert!(report.chi.unwrap() >= 0.0);
        assert_abs_diff_eq!(
            report.cf2_diffusion,
            report.cf1 * (1.0 + 0.5 * report.psi),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            report.cf2_mr.unwrap(),
            report.cf1 * (1.0 + 0.5 * report.chi.unwrap()),
            epsilon = 1e-15
        );
        assert!(report.cf1 > 0.0 && report.cf1 <= 1.0);
        assert!(report.warnings.is_empty());

        // Infeasible correlation: gamma clamps and the warning surfaces.
        let report = estimate(&spreads, &corr(0.9), &grid, &settings).unwrap();
        assert!(report
            .warnings
            .iter()
            .any(|w| matches!(w, Warning::GammaClamped { .. })));
    }

    #[test]
    fn estimate_applies_base_discount() {
        let spreads = table_spreads();
        let grid = TimeGrid::new(2.0, 0.5).unwrap();
        let settings = EstimatorSettings {
            conv: coarse_conv(),
            base_discount: Some(0.93),
            ..EstimatorSettings::default()
        };
        let report = estimate(&spreads, &corr(0.3), &grid, &settings).unwrap();
        assert_relative_eq!(
            report.discounted_cf1(),
            0.93 * report.cf1,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            report.discounted_cf2_mr().unwrap(),
            0.93 * report.cf2_mr.unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn estimate_rejects_negative_correlation_in_base_model() {
        let spreads = table_spreads();
        let grid = TimeGrid::new(2.0, 0.5).unwrap();
        let err = estimate(
            &spreads,
            &CorrelationSpec::new(vec![vec![1.0, -0.2], vec![-0.2, 1.0]]).unwrap(),
            &grid,
            &EstimatorSettings::default(),
        );
        assert!(matches!(err, Err(CtdError::InvalidInput(_))));
    }

    #[test]
    fn two_group_report_has_no_mr_estimator() {
        let spreads = table_spreads();
        let grid = TimeGrid::new(2.0, 0.5).unwrap();
        let settings = EstimatorSettings {
            conv: coarse_conv(),
            ..EstimatorSettings::default()
        };
        let corr = CorrelationSpec::new(vec![vec![1.0, -0.3], vec![-0.3, 1.0]]).unwrap();
        let report = estimate_two_group(&spreads, &corr, &grid, 1, -0.3, &settings).unwrap();
        assert!(report.chi.is_none());
        assert!(report.cf2_mr.is_none());
        assert!(report.cf1 > 0.0 && report.cf1 <= 1.0);
        assert!(report.cf2_diffusion >= report.cf1);
        assert!(estimate_two_group(&spreads, &corr, &grid, 0, -0.3, &settings).is_err());
        assert!(estimate_two_group(&spreads, &corr, &grid, 2, -0.3, &settings).is_err());
    }

    #[test]
    fn two_group_with_unit_like_corr_matches_single_group() {
        // c_corr near one and equal common-factor scales: the grouped model
        // must reproduce the base model.
        let spreads = table_spreads();
        let grid = TimeGrid::new(2.0, 0.25).unwrap();
        let settings = EstimatorSettings {
            conv: coarse_conv(),
            selection: EstimatorSelection {
                mean_reversion: false,
                ..EstimatorSelection::default()
            },
            ..EstimatorSettings::default()
        };
        // In the base model gamma matches rho exactly for two spreads; pick
        // rho = 0 so both pipelines share gamma = 0 and independence.
        let base = estimate(&spreads, &corr(0.0), &grid, &settings).unwrap();
        let grouped = estimate_two_group(&spreads, &corr(0.0), &grid, 1, 1e-9, &settings).unwrap();
        assert_abs_diff_eq!(base.cf1, grouped.cf1, epsilon = 5e-7);
        assert_abs_diff_eq!(base.psi, grouped.psi, epsilon = 5e-7);
    }
}
