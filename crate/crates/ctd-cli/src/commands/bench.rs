//! `bench`: wall-clock scaling of the second-order estimators in the number
//! of currencies. Extra spreads beyond the configured ones are randomized at
//! comparable magnitudes under a recorded seed; times are reported relative
//! to the smallest currency count. Absolute times are informational only.

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{num, render_record, Rendered, Table};
use ctd_core::estimators::{
    diffusion_variance, max_probability_series, moment_series, mr_variance, weighted_kappa,
};
use ctd_core::{CorrelationSpec, SpreadParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::time::Instant;

pub struct BenchRow {
    pub currencies: usize,
    pub cf2_diffusion_seconds: f64,
    pub cf2_mr_seconds: f64,
    pub cf2_diffusion_relative: f64,
    pub cf2_mr_relative: f64,
    pub moment_share_diffusion: f64,
    pub moment_share_mr: f64,
}

pub fn run(cfg: &RunConfig, counts: &[usize], seed: u64, repeats: usize) -> CliResult<Rendered> {
    let rows = bench_rows(cfg, counts, seed, repeats)?;
    render(&rows, seed)
}

pub fn bench_rows(
    cfg: &RunConfig,
    counts: &[usize],
    seed: u64,
    repeats: usize,
) -> CliResult<Vec<BenchRow>> {
    if counts.is_empty() {
        return Err(CliError::config("no currency counts supplied"));
    }
    let mut counts = counts.to_vec();
    counts.sort_unstable();
    if counts[0] < 3 {
        return Err(CliError::config("currency counts start at 3"));
    }
    if counts[0] - 1 < cfg.spreads.len() {
        return Err(CliError::config(format!(
            "the smallest count must cover the {} configured spreads",
            cfg.spreads.len()
        )));
    }
    let grid = cfg.grid()?;
    let repeats = repeats.max(1);

    let max_spreads = counts.last().unwrap() - 1;
    let (spreads, corr) = randomized_universe(cfg, max_spreads, seed)?;

    let mut rows = Vec::with_capacity(counts.len());
    for &count in &counts {
        let n = count - 1;
        let sub_spreads: Vec<SpreadParams> = spreads[..n].to_vec();
        let idx: Vec<usize> = (0..n).collect();
        let sub_corr = corr.submatrix(&idx);

        let mut best_mom = f64::INFINITY;
        let mut best_psi = f64::INFINITY;
        let mut best_prob = f64::INFINITY;
        let mut best_chi = f64::INFINITY;
        for _ in 0..repeats {
            let t0 = Instant::now();
            let mut series = moment_series(&sub_spreads, &sub_corr, &grid, &cfg.conv, false)?;
            let t_mom = t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let _psi = diffusion_variance(&series, &grid, cfg.variance_mode);
            let t_psi = t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let (probs, residual) =
                max_probability_series(&sub_spreads, &sub_corr, &grid, &cfg.conv)?;
            let t_prob = t0.elapsed().as_secs_f64();

            series.probs = probs;
            series.residual = residual;
            let kappas: Vec<f64> = sub_spreads.iter().map(|p| p.kappa).collect();
            let t0 = Instant::now();
            let kappa_tilde = weighted_kappa(&series, &kappas)?;
            let _chi = mr_variance(
                &series,
                &kappa_tilde,
                &grid,
                cfg.variance_mode,
                cfg.inner_variable,
            );
            let t_chi = t0.elapsed().as_secs_f64();

            best_mom = best_mom.min(t_mom);
            best_psi = best_psi.min(t_psi);
            best_prob = best_prob.min(t_prob);
            best_chi = best_chi.min(t_chi);
        }

        let cf21 = best_mom + best_psi;
        let cf22 = best_mom + best_prob + best_chi;
        rows.push(BenchRow {
            currencies: count,
            cf2_diffusion_seconds: cf21,
            cf2_mr_seconds: cf22,
            cf2_diffusion_relative: 0.0,
            cf2_mr_relative: 0.0,
            moment_share_diffusion: best_mom / cf21,
            moment_share_mr: best_mom / cf22,
        });
    }
    let base21 = rows[0].cf2_diffusion_seconds;
    let base22 = rows[0].cf2_mr_seconds;
    for r in &mut rows {
        r.cf2_diffusion_relative = r.cf2_diffusion_seconds / base21;
        r.cf2_mr_relative = r.cf2_mr_seconds / base22;
    }
    Ok(rows)
}

/// The configured spreads padded with randomized ones of the same magnitude;
/// the correlation matrix keeps the configured block and projects the padded
/// matrix to the nearest valid correlation matrix.
fn randomized_universe(
    cfg: &RunConfig,
    n: usize,
    seed: u64,
) -> CliResult<(Vec<SpreadParams>, CorrelationSpec)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut spreads = cfg.spreads.clone();
    while spreads.len() < n {
        let kappa = rng.gen_range(0.005..0.01);
        let xi = rng.gen_range(0.0015..0.0025);
        let q0 = rng.gen_range(0.0..0.003);
        spreads.push(SpreadParams::with_constant_theta(kappa, xi, q0, q0)?);
    }
    let base = cfg.spreads.len();
    let mut rows = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for i in 0..n {
        for j in 0..i {
            let v = if i < base && j < base {
                cfg.corr.get(i, j)
            } else {
                rng.gen_range(0.1..0.5)
            };
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    let corr = CorrelationSpec::projected(rows)?;
    Ok((spreads, corr))
}

fn render(rows: &[BenchRow], seed: u64) -> CliResult<Rendered> {
    let mut table = Table::new(vec![
        "currencies",
        "cf2_diffusion_rel_time",
        "cf2_mr_rel_time",
        "moment_share_diffusion",
        "moment_share_mr",
        "cf2_diffusion_seconds",
        "cf2_mr_seconds",
    ]);
    for r in rows {
        table.push_row(vec![
            r.currencies.to_string(),
            format!("{:.3}", r.cf2_diffusion_relative),
            format!("{:.3}", r.cf2_mr_relative),
            format!("{:.1}%", 100.0 * r.moment_share_diffusion),
            format!("{:.1}%", 100.0 * r.moment_share_mr),
            format!("{:.4}", r.cf2_diffusion_seconds),
            format!("{:.4}", r.cf2_mr_seconds),
        ]);
    }
    let mut human = format!(
        "Estimator cost scaling in the currency count (extra-spread seed {seed})\n\
         Relative times are against the smallest count; absolute seconds are \
         machine-dependent.\n\n"
    );
    human.push_str(&table.render_human());

    let mut pairs = vec![("seed".to_string(), seed.to_string())];
    for r in rows {
        pairs.push((
            format!("count.{}.cf2_diffusion_rel_time", r.currencies),
            num(r.cf2_diffusion_relative),
        ));
        pairs.push((
            format!("count.{}.cf2_mr_rel_time", r.currencies),
            num(r.cf2_mr_relative),
        ));
    }
    let record = render_record(&pairs, &[]);
    Ok(Rendered {
        human,
        csv: table.render_csv(),
        record,
    })
}
