//! Declarative run configuration: a TOML file with nested sections,
//! resolved into core model types with field-precise error messages.

use crate::error::{CliError, CliResult};
use ctd_core::{
    ConvSettings, CorrelationSpec, EstimatorSelection, EstimatorSettings, InnerVariable,
    McSettings, RateParams, SpreadParams, ThetaCurve, TimeGrid, VarianceMode,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub maturity: Option<f64>,
    pub dt: Option<f64>,
    #[serde(default)]
    pub spread: Vec<RawSpread>,
    pub correlation: Option<RawMatrix>,
    pub convolution: Option<RawConv>,
    pub mc: Option<RawMc>,
    pub estimators: Option<RawEstimators>,
    pub groups: Option<RawGroups>,
    pub base_rate: Option<RawRate>,
    #[serde(default)]
    pub rate: Vec<RawRate>,
    pub rate_correlation: Option<RawMatrix>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSpread {
    pub kappa: f64,
    pub xi: f64,
    pub q0: f64,
    pub theta: ThetaSpec,
}

/// Either a constant level or a piecewise-constant curve given by segment
/// right-endpoints and values.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Constant(f64),
    Curve { breaks: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRate {
    pub kappa: f64,
    pub xi: f64,
    pub r0: f64,
    /// Optional initial-spread override kept alongside the derived value.
    pub q0: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMatrix {
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConv {
    pub delta: Option<f64>,
    pub eps_tail: Option<f64>,
    pub domain_stddevs: Option<f64>,
    pub eps_gamma: Option<f64>,
    pub tau_cdf: Option<f64>,
    pub tau_prob: Option<f64>,
    pub tau_var: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMc {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub antithetic: Option<bool>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEstimators {
    pub variance_mode: Option<String>,
    pub inner_variable: Option<String>,
    pub base_discount: Option<f64>,
    pub selection: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGroups {
    /// Components `0..split` form group 1, the rest group 2.
    pub split: usize,
    /// Correlation of the two group common factors, in `(-1, 1)`.
    pub c_corr: f64,
}

/// Flag-level overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub maturity: Option<f64>,
    pub dt: Option<f64>,
    pub delta: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub variance_mode: Option<String>,
}

impl Overrides {
    fn canonical(&self) -> String {
        format!(
            "maturity={:?};dt={:?};delta={:?};paths={:?};seed={:?};variance_mode={:?}",
            self.maturity, self.dt, self.delta, self.paths, self.seed, self.variance_mode
        )
    }
}

/// A parsed configuration file plus the bytes it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub raw: RawConfig,
    pub text: String,
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> CliResult<LoadedConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| CliError::config(format!("config parse error: {e}")))?;
    Ok(LoadedConfig {
        raw,
        text: text.to_string(),
    })
}

/// Fully resolved pricing run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub maturity: f64,
    pub dt: f64,
    pub spreads: Vec<SpreadParams>,
    pub corr: CorrelationSpec,
    pub conv: ConvSettings,
    pub mc: McSettings,
    pub variance_mode: VarianceMode,
    pub inner_variable: InnerVariable,
    pub selection: EstimatorSelection,
    pub base_discount: Option<f64>,
    pub groups: Option<(usize, f64)>,
    pub config_hash: String,
}

impl RunConfig {
    pub fn grid(&self) -> CliResult<TimeGrid> {
        TimeGrid::new(self.maturity, self.dt).map_err(CliError::from)
    }

    pub fn settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            conv: self.conv,
            variance_mode: self.variance_mode,
            inner_variable: self.inner_variable,
            selection: self.selection,
            base_discount: self.base_discount,
        }
    }
}

/// Resolved rate-conversion input.
#[derive(Debug, Clone)]
pub struct RateConfig {
    pub base: RateParams,
    pub others: Vec<RateParams>,
    pub q0_overrides: Vec<Option<f64>>,
    pub corr: CorrelationSpec,
    pub maturity: Option<f64>,
    pub dt: Option<f64>,
    pub config_hash: String,
}

pub fn resolve_run(loaded: &LoadedConfig, overrides: &Overrides) -> CliResult<RunConfig> {
    let raw = &loaded.raw;
    let maturity = overrides
        .maturity
        .or(raw.maturity)
        .ok_or_else(|| CliError::config("missing field: maturity"))?;
    let dt = overrides
        .dt
        .or(raw.dt)
        .ok_or_else(|| CliError::config("missing field: dt"))?;

    if raw.spread.is_empty() {
        return Err(CliError::config(
            "at least one [[spread]] section is required",
        ));
    }
    let mut spreads = Vec::with_capacity(raw.spread.len());
    for (i, s) in raw.spread.iter().enumerate() {
        let theta = match &s.theta {
            ThetaSpec::Constant(v) => ThetaCurve::constant(*v),
            ThetaSpec::Curve { breaks, values } => {
                ThetaCurve::piecewise(breaks.clone(), values.clone())
                    .map_err(|e| CliError::config(format!("spread[{i}].theta: {e}")))?
            }
        };
        if theta.domain_end() < maturity {
            return Err(CliError::config(format!(
                "spread[{i}].theta covers [0, {}] but the maturity is {maturity}",
                theta.domain_end()
            )));
        }
        spreads.push(
            SpreadParams::new(s.kappa, s.xi, theta, s.q0)
                .map_err(|e| CliError::config(format!("spread[{i}]: {e}")))?,
        );
    }

    let corr = match &raw.correlation {
        Some(m) => CorrelationSpec::new(m.matrix.clone())
            .map_err(|e| CliError::config(format!("correlation.matrix: {e}")))?,
        None if spreads.len() == 1 => CorrelationSpec::identity(1),
        None => {
            return Err(CliError::config(
                "a [correlation] section is required for more than one spread",
            ))
        }
    };
    if corr.n() != spreads.len() {
        return Err(CliError::config(format!(
            "correlation.matrix is {0} x {0} but there are {1} spreads",
            corr.n(),
            spreads.len()
        )));
    }

    let conv = resolve_conv(raw.convolution.clone().unwrap_or_default(), overrides)?;
    let mc = resolve_mc(raw.mc.clone().unwrap_or_default(), overrides)?;

    let est = raw.estimators.clone().unwrap_or_default();
    let variance_mode = parse_variance_mode(
        overrides
            .variance_mode
            .as_deref()
            .or(est.variance_mode.as_deref()),
    )?;
    let inner_variable = match est.inner_variable.as_deref() {
        None | Some("s") => InnerVariable::S,
        Some("t") => InnerVariable::T,
        Some(v) => {
            return Err(CliError::config(format!(
                "estimators.inner_variable must be \"s\" or \"t\"; got \"{v}\""
            )))
        }
    };
    let selection = match &est.selection {
        None => EstimatorSelection::default(),
        Some(names) => {
            let mut sel = EstimatorSelection {
                cf1: false,
                diffusion: false,
                mean_reversion: false,
            };
            for name in names {
                match name.as_str() {
                    "cf1" => sel.cf1 = true,
                    "cf2-diffusion" => sel.diffusion = true,
                    "cf2-mr" => sel.mean_reversion = true,
                    other => {
                        return Err(CliError::config(format!(
                            "estimators.selection: unknown estimator \"{other}\" \
                             (expected cf1, cf2-diffusion, cf2-mr)"
                        )))
                    }
                }
            }
            sel.cf1 = true; // the second-order estimators need it anyway
            sel
        }
    };
    if let Some(p0) = est.base_discount {
        if !(p0.is_finite() && p0 > 0.0) {
            return Err(CliError::config(format!(
                "estimators.base_discount must be positive; got {p0}"
            )));
        }
    }

    let groups = match &raw.groups {
        None => None,
        Some(g) => {
            if g.split == 0 || g.split >= spreads.len() {
                return Err(CliError::config(format!(
                    "groups.split must leave both groups non-empty; got {} of {}",
                    g.split,
                    spreads.len()
                )));
            }
            if !(g.c_corr.is_finite() && g.c_corr.abs() < 1.0) {
                return Err(CliError::config(format!(
                    "groups.c_corr must lie in (-1, 1); got {}",
                    g.c_corr
                )));
            }
            Some((g.split, g.c_corr))
        }
    };
    if groups.is_none() {
        corr.require_nonnegative()
            .map_err(|e| CliError::config(format!("correlation.matrix: {e}")))?;
    }

    Ok(RunConfig {
        maturity,
        dt,
        spreads,
        corr,
        conv,
        mc,
        variance_mode,
        inner_variable,
        selection,
        base_discount: est.base_discount,
        groups,
        config_hash: hash_config(&loaded.text, overrides),
    })
}

pub fn resolve_rates(loaded: &LoadedConfig, overrides: &Overrides) -> CliResult<RateConfig> {
    let raw = &loaded.raw;
    let base = raw
        .base_rate
        .as_ref()
        .ok_or_else(|| CliError::config("missing section: [base_rate]"))?;
    if raw.rate.is_empty() {
        return Err(CliError::config(
            "at least one [[rate]] section is required",
        ));
    }
    let base = RateParams::new(base.kappa, base.xi, base.r0)
        .map_err(|e| CliError::config(format!("base_rate: {e}")))?;
    let mut others = Vec::with_capacity(raw.rate.len());
    let mut q0_overrides = Vec::with_capacity(raw.rate.len());
    for (i, r) in raw.rate.iter().enumerate() {
        others.push(
            RateParams::new(r.kappa, r.xi, r.r0)
                .map_err(|e| CliError::config(format!("rate[{i}]: {e}")))?,
        );
        q0_overrides.push(r.q0);
    }
    let corr = match &raw.rate_correlation {
        Some(m) => CorrelationSpec::new(m.matrix.clone())
            .map_err(|e| CliError::config(format!("rate_correlation.matrix: {e}")))?,
        None => return Err(CliError::config("a [rate_correlation] section is required")),
    };
    Ok(RateConfig {
        base,
        others,
        q0_overrides,
        corr,
        maturity: overrides.maturity.or(raw.maturity),
        dt: overrides.dt.or(raw.dt),
        config_hash: hash_config(&loaded.text, overrides),
    })
}

fn resolve_conv(raw: RawConv, overrides: &Overrides) -> CliResult<ConvSettings> {
    let defaults = ConvSettings::default();
    let conv = ConvSettings {
        delta: overrides.delta.or(raw.delta).unwrap_or(defaults.delta),
        eps_tail: raw.eps_tail.unwrap_or(defaults.eps_tail),
        domain_stddevs: raw.domain_stddevs.unwrap_or(defaults.domain_stddevs),
        eps_gamma: raw.eps_gamma.unwrap_or(defaults.eps_gamma),
        tau_cdf: raw.tau_cdf.unwrap_or(defaults.tau_cdf),
        tau_prob: raw.tau_prob.unwrap_or(defaults.tau_prob),
        tau_var: raw.tau_var.unwrap_or(defaults.tau_var),
    };
    conv.validate()
        .map_err(|e| CliError::config(format!("convolution: {e}")))?;
    Ok(conv)
}

fn resolve_mc(raw: RawMc, overrides: &Overrides) -> CliResult<McSettings> {
    let defaults = McSettings::default();
    let mc = McSettings {
        n_paths: overrides.paths.or(raw.paths).unwrap_or(defaults.n_paths),
        seed: overrides.seed.or(raw.seed).unwrap_or(defaults.seed),
        antithetic: raw.antithetic.unwrap_or(defaults.antithetic),
        batch_size: raw.batch_size.unwrap_or(defaults.batch_size),
    };
    mc.validate()
        .map_err(|e| CliError::config(format!("mc: {e}")))?;
    Ok(mc)
}

pub fn parse_variance_mode(name: Option<&str>) -> CliResult<VarianceMode> {
    match name {
        None | Some("central") => Ok(VarianceMode::Central),
        Some("raw") => Ok(VarianceMode::RawSecondMoment),
        Some(v) => Err(CliError::config(format!(
            "variance mode must be \"central\" or \"raw\"; got \"{v}\""
        ))),
    }
}

fn hash_config(text: &str, overrides: &Overrides) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update(overrides.canonical().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes a spread configuration as a parseable run-configuration file
/// with full-precision numbers (exact round trip through TOML).
pub fn emit_run_config(
    maturity: Option<f64>,
    dt: Option<f64>,
    spreads: &[(f64, f64, f64, f64)], // (kappa, xi, theta, q0)
    corr: &CorrelationSpec,
) -> String {
    let mut out = String::new();
    if let Some(m) = maturity {
        out.push_str(&format!("maturity = {}\n", exact(m)));
    }
    if let Some(d) = dt {
        out.push_str(&format!("dt = {}\n", exact(d)));
    }
    for (kappa, xi, theta, q0) in spreads {
        out.push_str("\n[[spread]]\n");
        out.push_str(&format!("kappa = {}\n", exact(*kappa)));
        out.push_str(&format!("xi = {}\n", exact(*xi)));
        out.push_str(&format!("theta = {}\n", exact(*theta)));
        out.push_str(&format!("q0 = {}\n", exact(*q0)));
    }
    out.push_str("\n[correlation]\nmatrix = [\n");
    for i in 0..corr.n() {
        let row: Vec<String> = (0..corr.n()).map(|j| exact(corr.get(i, j))).collect();
        out.push_str(&format!("  [{}],\n", row.join(", ")));
    }
    out.push_str("]\n");
    out
}

fn exact(v: f64) -> String {
    // 17 significant digits reproduce any f64 exactly.
    format!("{v:.16e}")
}
