//! `mc`: Monte Carlo reference values for the discount factor and the
//! integral moments at the configured maturity.

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{num, render_record, Rendered, Table};
use ctd_core::mc::mc_run;

pub fn run(cfg: &RunConfig) -> CliResult<Rendered> {
    if cfg.groups.is_some() {
        return Err(CliError::config(
            "the Monte Carlo reference does not use the grouped approximation; \
             remove the [groups] section",
        ));
    }
    let grid = cfg.grid()?;
    let out = mc_run(&cfg.spreads, &cfg.corr, &grid, &[grid.maturity()], &cfg.mc)?;
    let h = &out[0];

    let mut table = Table::new(vec!["metric", "value", "std_error", "n_paths", "seed"]);
    let rows = [
        ("discount_factor", h.discount_factor),
        ("integral_mean", h.integral_mean),
        ("integral_variance", h.integral_variance),
    ];
    for (name, est) in rows {
        table.push_row(vec![
            name.to_string(),
            num(est.value),
            num(est.std_error),
            est.n_paths.to_string(),
            cfg.mc.seed.to_string(),
        ]);
    }

    let mut human = format!(
        "Monte Carlo reference at T = {} (antithetic: {})\n\n",
        cfg.maturity, cfg.mc.antithetic
    );
    human.push_str(&table.render_human());

    let record_pairs: Vec<(String, String)> = vec![
        ("maturity".into(), num(cfg.maturity)),
        ("discount_factor".into(), num(h.discount_factor.value)),
        (
            "discount_factor.std_error".into(),
            num(h.discount_factor.std_error),
        ),
        ("integral_mean".into(), num(h.integral_mean.value)),
        (
            "integral_mean.std_error".into(),
            num(h.integral_mean.std_error),
        ),
        ("integral_variance".into(), num(h.integral_variance.value)),
        (
            "integral_variance.std_error".into(),
            num(h.integral_variance.std_error),
        ),
        ("n_paths".into(), cfg.mc.n_paths.to_string()),
        ("seed".into(), cfg.mc.seed.to_string()),
        ("antithetic".into(), cfg.mc.antithetic.to_string()),
    ];
    let record = render_record(&record_pairs, &[]);

    Ok(Rendered {
        human,
        csv: table.render_csv(),
        record,
    })
}
