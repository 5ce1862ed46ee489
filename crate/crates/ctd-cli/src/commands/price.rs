//! `price`: one pricing run, reporting the first- and second-order
//! estimators with optional per-grid-time diagnostics.

use super::{opt_num, warning_pairs};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::{num, render_record, Rendered, Table};
use ctd_core::estimators::{estimate, estimate_two_group};
use ctd_core::EstimateReport;

pub fn run(cfg: &RunConfig, diagnostics: bool) -> CliResult<Rendered> {
    let grid = cfg.grid()?;
    let report = match cfg.groups {
        Some((split, c_corr)) => estimate_two_group(
            &cfg.spreads,
            &cfg.corr,
            &grid,
            split,
            c_corr,
            &cfg.settings(),
        )?,
        None => estimate(&cfg.spreads, &cfg.corr, &grid, &cfg.settings())?,
    };
    Ok(render(cfg, &report, diagnostics))
}

fn render(cfg: &RunConfig, report: &EstimateReport, diagnostics: bool) -> Rendered {
    let warnings = warning_pairs(&report.warnings);

    let mut summary = Table::new(vec!["quantity", "value"]);
    summary.push_row(vec!["maturity".to_string(), num(cfg.maturity)]);
    summary.push_row(vec!["dt".to_string(), num(cfg.dt)]);
    summary.push_row(vec!["delta".to_string(), num(cfg.conv.delta)]);
    summary.push_row(vec![
        "variance_mode".to_string(),
        report.variance_mode.to_string(),
    ]);
    summary.push_row(vec!["cf1".to_string(), num(report.cf1)]);
    summary.push_row(vec!["psi".to_string(), num(report.psi)]);
    summary.push_row(vec!["chi".to_string(), opt_num(report.chi)]);
    summary.push_row(vec!["cf2_diffusion".to_string(), num(report.cf2_diffusion)]);
    summary.push_row(vec!["cf2_mr".to_string(), opt_num(report.cf2_mr)]);
    if let Some(p0) = report.base_discount {
        summary.push_row(vec!["base_discount".to_string(), num(p0)]);
        summary.push_row(vec![
            "discounted_cf1".to_string(),
            num(report.discounted_cf1()),
        ]);
        summary.push_row(vec![
            "discounted_cf2_diffusion".to_string(),
            num(report.discounted_cf2_diffusion()),
        ]);
        summary.push_row(vec![
            "discounted_cf2_mr".to_string(),
            opt_num(report.discounted_cf2_mr()),
        ]);
    }
    for (code, msg) in &warnings {
        summary.push_warning(code.clone(), msg.clone());
    }

    let mut human = String::from("CTD discount-factor estimators\n\n");
    human.push_str(&summary.render_human());

    let record_pairs: Vec<(String, String)> = vec![
        ("maturity".into(), num(cfg.maturity)),
        ("dt".into(), num(cfg.dt)),
        ("delta".into(), num(cfg.conv.delta)),
        ("variance_mode".into(), report.variance_mode.to_string()),
        ("cf1".into(), num(report.cf1)),
        ("psi".into(), num(report.psi)),
        ("chi".into(), opt_num(report.chi)),
        ("cf2_diffusion".into(), num(report.cf2_diffusion)),
        ("cf2_mr".into(), opt_num(report.cf2_mr)),
        ("base_discount".into(), opt_num(report.base_discount)),
    ];
    let record = render_record(&record_pairs, &warnings);

    let csv = if diagnostics {
        let table = diagnostics_table(report, &warnings);
        human.push('\n');
        human.push_str("Per-grid-time diagnostics\n\n");
        human.push_str(&table.render_human());
        table.render_csv()
    } else {
        summary.render_csv()
    };

    Rendered { human, csv, record }
}

fn diagnostics_table(report: &EstimateReport, warnings: &[(String, String)]) -> Table {
    let series = &report.diagnostics;
    let n_probs = series.probs.first().map(|p| p.len()).unwrap_or(0);
    let mut headers = vec![
        "t".to_string(),
        "mean".to_string(),
        "raw_second".to_string(),
        "variance".to_string(),
        "cutoff".to_string(),
        "gamma".to_string(),
        "gamma_clamped".to_string(),
    ];
    for i in 0..n_probs {
        headers.push(format!("prob_{i}"));
    }
    if series.has_probabilities() {
        headers.push("residual".to_string());
    }
    let mut table = Table::new(headers);
    for k in 0..series.len() {
        let mut row = vec![
            num(series.times[k]),
            num(series.mean[k]),
            num(series.raw_second[k]),
            num(series.variance[k]),
            num(series.cutoff[k]),
            num(series.gamma[k]),
            if series.gamma_clamped[k] { "1" } else { "0" }.to_string(),
        ];
        if series.has_probabilities() {
            for p in &series.probs[k] {
                row.push(num(*p));
            }
            row.push(num(series.residual[k]));
        }
        table.push_row(row);
    }
    for (code, msg) in warnings {
        table.push_warning(code.clone(), msg.clone());
    }
    table
}
