//! `table-moments`: convergence of the moment pipeline in the lattice step.
//! For each (step, maturity) pair the table reports the grid point count in
//! the effective domain, the expectation-integral error and the
//! integral-variance error against one high-path Monte Carlo reference per
//! maturity, in both variance modes.

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{num, render_record, Rendered, Table};
use ctd_core::estimators::{diffusion_variance, moment_series};
use ctd_core::mc::mc_run;
use ctd_core::{ConvSettings, MaxMomentSeries, TimeGrid, VarianceMode};

pub struct MomentRow {
    pub delta: f64,
    pub maturity: f64,
    pub points: usize,
    pub e_integral: f64,
    pub mc_e: f64,
    pub mc_e_std_error: f64,
    pub psi_central: f64,
    pub psi_raw: f64,
    pub mc_var: f64,
    pub mc_var_std_error: f64,
}

pub fn run(cfg: &RunConfig, deltas: &[f64], maturities: &[f64]) -> CliResult<Rendered> {
    let rows = moment_rows(cfg, deltas, maturities)?;
    render(&rows)
}

pub fn moment_rows(
    cfg: &RunConfig,
    deltas: &[f64],
    maturities: &[f64],
) -> CliResult<Vec<MomentRow>> {
    if cfg.groups.is_some() {
        return Err(CliError::config("moment tables use the single-group model"));
    }
    if deltas.is_empty() || maturities.is_empty() {
        return Err(CliError::config("need at least one delta and one maturity"));
    }
    if maturities.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(CliError::config("maturities must be positive and finite"));
    }
    let mut maturities = maturities.to_vec();
    maturities.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_t = *maturities.last().unwrap();
    let grid = TimeGrid::new(max_t, cfg.dt).map_err(CliError::from)?;

    // One Monte Carlo reference per maturity, all horizons from one run.
    let mc = mc_run(&cfg.spreads, &cfg.corr, &grid, &maturities, &cfg.mc)?;

    let mut rows = Vec::new();
    for &delta in deltas {
        let conv = ConvSettings { delta, ..cfg.conv };
        let series = moment_series(&cfg.spreads, &cfg.corr, &grid, &conv, false)?;
        for (h, &t) in maturities.iter().enumerate() {
            let idx = grid.horizon_index(t).map_err(CliError::from)?;
            let sub_grid = TimeGrid::new(t, cfg.dt).map_err(CliError::from)?;
            let sub = truncate_series(&series, idx);
            let e_integral: f64 = sub.mean[..idx].iter().sum::<f64>() * cfg.dt;
            let psi_central = diffusion_variance(&sub, &sub_grid, VarianceMode::Central);
            let psi_raw = diffusion_variance(&sub, &sub_grid, VarianceMode::RawSecondMoment);
            let points = (sub.cutoff[idx] / delta).round() as usize + 1;
            rows.push(MomentRow {
                delta,
                maturity: t,
                points,
                e_integral,
                mc_e: mc[h].integral_mean.value,
                mc_e_std_error: mc[h].integral_mean.std_error,
                psi_central,
                psi_raw,
                mc_var: mc[h].integral_variance.value,
                mc_var_std_error: mc[h].integral_variance.std_error,
            });
        }
    }
    Ok(rows)
}

fn truncate_series(series: &MaxMomentSeries, idx: usize) -> MaxMomentSeries {
    MaxMomentSeries {
        times: series.times[..=idx].to_vec(),
        mean: series.mean[..=idx].to_vec(),
        raw_second: series.raw_second[..=idx].to_vec(),
        variance: series.variance[..=idx].to_vec(),
        probs: Vec::new(),
        residual: Vec::new(),
        cutoff: series.cutoff[..=idx].to_vec(),
        gamma: series.gamma[..=idx].to_vec(),
        gamma_clamped: series.gamma_clamped[..=idx].to_vec(),
        variance_floored: series.variance_floored[..=idx].to_vec(),
    }
}

fn render(rows: &[MomentRow]) -> CliResult<Rendered> {
    let mut table = Table::new(vec![
        "delta",
        "maturity",
        "points_in_domain",
        "e_integral",
        "mc_e_integral",
        "abs_err_e",
        "psi_central",
        "psi_raw",
        "mc_var_integral",
        "abs_err_psi_central",
        "abs_err_psi_raw",
    ]);
    for r in rows {
        table.push_row(vec![
            num(r.delta),
            num(r.maturity),
            r.points.to_string(),
            num(r.e_integral),
            num(r.mc_e),
            num((r.e_integral - r.mc_e).abs()),
            num(r.psi_central),
            num(r.psi_raw),
            num(r.mc_var),
            num((r.psi_central - r.mc_var).abs()),
            num((r.psi_raw - r.mc_var).abs()),
        ]);
    }
    let mut human = String::from("Moment-convergence table\n\n");
    human.push_str(&table.render_human());

    let mut pairs = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        pairs.push((format!("row.{i}.delta"), num(r.delta)));
        pairs.push((format!("row.{i}.maturity"), num(r.maturity)));
        pairs.push((format!("row.{i}.points_in_domain"), r.points.to_string()));
        pairs.push((
            format!("row.{i}.abs_err_e"),
            num((r.e_integral - r.mc_e).abs()),
        ));
        pairs.push((
            format!("row.{i}.abs_err_psi_central"),
            num((r.psi_central - r.mc_var).abs()),
        ));
        pairs.push((
            format!("row.{i}.abs_err_psi_raw"),
            num((r.psi_raw - r.mc_var).abs()),
        ));
    }
    let record = render_record(&pairs, &[]);
    Ok(Rendered {
        human,
        csv: table.render_csv(),
        record,
    })
}
