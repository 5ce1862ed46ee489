//! `convert`: collateral-rate parameters to collateral-spread parameters.
//! The record output is a parseable run-configuration fragment; initial
//! spreads derived from the rate differences are always reported, with a
//! warning wherever a user-supplied override differs.

use crate::config::{emit_run_config, RateConfig};
use crate::error::CliResult;
use crate::output::{num, num_exact, Rendered, Table};
use ctd_core::term_structure::rates_to_spreads;
use std::fmt::Write as _;

pub struct Converted {
    pub rendered: Rendered,
    /// The emitted configuration text (same as the record output).
    pub config_text: String,
}

pub fn run(rcfg: &RateConfig) -> CliResult<Converted> {
    let out = rates_to_spreads(&rcfg.base, &rcfg.others, &rcfg.corr)?;

    let mut warnings: Vec<(String, String)> = Vec::new();
    for &i in &out.degenerate {
        warnings.push((
            "degenerate_spread".to_string(),
            format!("spread {i} has vanishing volatility (perfectly correlated rates)"),
        ));
    }
    // The emitted configuration honours explicit overrides; the derived
    // initial spreads are reported either way.
    let mut q0_used = Vec::with_capacity(out.q0.len());
    for (i, (&derived, over)) in out.q0.iter().zip(&rcfg.q0_overrides).enumerate() {
        match over {
            Some(user) if (user - derived).abs() > 1e-15 => {
                warnings.push((
                    "q0_override".to_string(),
                    format!(
                        "spread {i}: q0 override {user} differs from the rate-difference \
                         value {derived}"
                    ),
                ));
                q0_used.push(*user);
            }
            Some(user) => q0_used.push(*user),
            None => q0_used.push(derived),
        }
    }

    let tuples: Vec<(f64, f64, f64, f64)> = out
        .spreads
        .iter()
        .zip(&q0_used)
        .map(|(s, &q0)| (s.kappa, s.xi, q0, q0))
        .collect();
    let config_text = {
        let mut text =
            String::from("# Spread configuration derived from collateral-rate parameters.\n");
        text.push_str(&emit_run_config(rcfg.maturity, rcfg.dt, &tuples, &out.corr));
        text
    };

    let mut table = Table::new(vec!["spread", "kappa", "xi", "q0_derived", "q0_used"]);
    for (i, s) in out.spreads.iter().enumerate() {
        table.push_row(vec![
            i.to_string(),
            num(s.kappa),
            num(s.xi),
            num(out.q0[i]),
            num(q0_used[i]),
        ]);
    }
    let mut corr_table = Table::new(vec!["i", "j", "rho"]);
    for i in 0..out.corr.n() {
        for j in 0..i {
            corr_table.push_row(vec![i.to_string(), j.to_string(), num(out.corr.get(i, j))]);
        }
    }
    for (code, msg) in &warnings {
        table.push_warning(code.clone(), msg.clone());
    }

    let mut human = String::from("Rate-to-spread conversion\n\n");
    human.push_str(&table.render_human());
    if out.corr.n() > 1 {
        human.push('\n');
        human.push_str("Induced spread correlations\n\n");
        human.push_str(&corr_table.render_human());
    }
    human.push('\n');
    human.push_str("Emitted configuration\n\n");
    human.push_str(&config_text);

    // CSV: spread rows plus correlation rows, then warnings.
    let mut csv = table.render_csv();
    for i in 0..out.corr.n() {
        for j in 0..i {
            let _ = writeln!(csv, "corr,{i},{j},{},", num_exact(out.corr.get(i, j)));
        }
    }

    Ok(Converted {
        rendered: Rendered {
            human,
            csv,
            record: config_text.clone(),
        },
        config_text,
    })
}
