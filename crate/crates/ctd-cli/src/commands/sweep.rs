//! `sweep`: estimator accuracy against the Monte Carlo reference along one
//! parameter axis. The correlation axis truncates at the feasibility
//! boundary of the common-factor fit and records the truncation; the
//! reversion-speed and volatility axes scale every spread jointly and report
//! the across-spread average on the axis.

use super::opt_num;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{num, render_record, Rendered, Table};
use ctd_core::estimators::{estimate, max_unclamped_gamma};
use ctd_core::mc::mc_discount_factor;
use ctd_core::{CorrelationSpec, SpreadParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Common instantaneous correlation value.
    Corr,
    /// Joint scale factor on every reversion speed (geometric spacing).
    Kappa,
    /// Joint scale factor on every volatility (linear spacing).
    Vol,
}

impl Axis {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "corr" => Ok(Axis::Corr),
            "kappa" => Ok(Axis::Kappa),
            "vol" => Ok(Axis::Vol),
            other => Err(CliError::config(format!(
                "axis must be corr, kappa or vol; got \"{other}\""
            ))),
        }
    }
}

pub struct SweepRow {
    pub axis_value: f64,
    pub cf1: f64,
    pub cf2_diffusion: f64,
    pub cf2_mr: Option<f64>,
    pub mc_value: f64,
    pub mc_std_error: f64,
}

pub fn run(cfg: &RunConfig, axis: Axis, lo: f64, hi: f64, steps: usize) -> CliResult<Rendered> {
    if cfg.groups.is_some() {
        return Err(CliError::config("sweeps use the single-group model"));
    }
    let (rows, truncated_at) = sweep_rows(cfg, axis, lo, hi, steps)?;
    render(axis, &rows, truncated_at)
}

/// Runs the sweep and returns the data rows plus the axis value at which a
/// correlation sweep was truncated, if any.
pub fn sweep_rows(
    cfg: &RunConfig,
    axis: Axis,
    lo: f64,
    hi: f64,
    steps: usize,
) -> CliResult<(Vec<SweepRow>, Option<f64>)> {
    if steps < 2 {
        return Err(CliError::config("steps must be at least 2"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::config(format!("bad axis range {lo}:{hi}")));
    }
    if axis == Axis::Kappa && lo <= 0.0 {
        return Err(CliError::config("kappa scale factors must be positive"));
    }
    let grid = cfg.grid()?;
    let values: Vec<f64> = (0..steps)
        .map(|i| {
            let w = i as f64 / (steps - 1) as f64;
            match axis {
                Axis::Kappa => lo * (hi / lo).powf(w),
                _ => lo + (hi - lo) * w,
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(steps);
    let mut truncated_at = None;
    for &v in &values {
        let (spreads, corr) = scaled_inputs(cfg, axis, v)?;
        if axis == Axis::Corr {
            let worst = max_unclamped_gamma(&spreads, &corr, &grid)?;
            if worst >= 1.0 - cfg.conv.eps_gamma {
                truncated_at = Some(v);
                break;
            }
        }
        let report = estimate(&spreads, &corr, &grid, &cfg.settings())?;
        let mc = mc_discount_factor(&spreads, &corr, &grid, &cfg.mc)?;
        let axis_value = match axis {
            Axis::Corr => v,
            Axis::Kappa => spreads.iter().map(|p| p.kappa).sum::<f64>() / spreads.len() as f64,
            Axis::Vol => spreads.iter().map(|p| p.xi).sum::<f64>() / spreads.len() as f64,
        };
        rows.push(SweepRow {
            axis_value,
            cf1: report.cf1,
            cf2_diffusion: report.cf2_diffusion,
            cf2_mr: report.cf2_mr,
            mc_value: mc.value,
            mc_std_error: mc.std_error,
        });
    }
    Ok((rows, truncated_at))
}

fn scaled_inputs(
    cfg: &RunConfig,
    axis: Axis,
    value: f64,
) -> CliResult<(Vec<SpreadParams>, CorrelationSpec)> {
    match axis {
        Axis::Corr => {
            if !(0.0..1.0).contains(&value) {
                return Err(CliError::config(format!(
                    "correlation values must lie in [0, 1); got {value}"
                )));
            }
            let n = cfg.spreads.len();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { value }).collect())
                .collect();
            let corr = CorrelationSpec::new(rows)
                .map_err(|e| CliError::config(format!("axis value {value}: {e}")))?;
            Ok((cfg.spreads.clone(), corr))
        }
        Axis::Kappa => {
            let spreads = cfg
                .spreads
                .iter()
                .map(|p| {
                    SpreadParams::new(p.kappa * value, p.xi, p.theta.clone(), p.q0)
                        .map_err(CliError::from)
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok((spreads, cfg.corr.clone()))
        }
        Axis::Vol => {
            let spreads = cfg
                .spreads
                .iter()
                .map(|p| {
                    SpreadParams::new(p.kappa, p.xi * value, p.theta.clone(), p.q0)
                        .map_err(CliError::from)
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok((spreads, cfg.corr.clone()))
        }
    }
}

fn render(axis: Axis, rows: &[SweepRow], truncated_at: Option<f64>) -> CliResult<Rendered> {
    let axis_name = match axis {
        Axis::Corr => "correlation",
        Axis::Kappa => "mean_kappa",
        Axis::Vol => "mean_xi",
    };
    let mut table = Table::new(vec![
        axis_name,
        "cf1",
        "cf2_diffusion",
        "cf2_mr",
        "mc",
        "mc_std_error",
        "abs_err_cf1",
        "abs_err_cf2_diffusion",
        "abs_err_cf2_mr",
    ]);
    for r in rows {
        table.push_row(vec![
            num(r.axis_value),
            num(r.cf1),
            num(r.cf2_diffusion),
            opt_num(r.cf2_mr),
            num(r.mc_value),
            num(r.mc_std_error),
            num((r.cf1 - r.mc_value).abs()),
            num((r.cf2_diffusion - r.mc_value).abs()),
            opt_num(r.cf2_mr.map(|v| (v - r.mc_value).abs())),
        ]);
    }
    if let Some(v) = truncated_at {
        table.push_warning(
            "sweep_truncated",
            format!(
                "correlation sweep truncated at {v}: the common-factor fit \
                 reaches its feasibility boundary"
            ),
        );
    }

    let mut human = format!("Sensitivity sweep over {axis_name}\n\n");
    human.push_str(&table.render_human());

    let mut pairs = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        pairs.push((format!("row.{i}.{axis_name}"), num(r.axis_value)));
        pairs.push((format!("row.{i}.cf1"), num(r.cf1)));
        pairs.push((format!("row.{i}.cf2_diffusion"), num(r.cf2_diffusion)));
        pairs.push((format!("row.{i}.cf2_mr"), opt_num(r.cf2_mr)));
        pairs.push((format!("row.{i}.mc"), num(r.mc_value)));
        pairs.push((format!("row.{i}.mc_std_error"), num(r.mc_std_error)));
    }
    let record = render_record(&pairs, table.warnings());

    Ok(Rendered {
        human,
        csv: table.render_csv(),
        record,
    })
}
