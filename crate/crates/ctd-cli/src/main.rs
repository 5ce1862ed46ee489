//! `ctd`: pricing harness for the cheapest-to-deliver collateral option.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctd_cli::commands::{bench, convert, mc, price, sweep, table_moments};
use ctd_cli::config::{self, Overrides};
use ctd_cli::output::{self, Format, Meta};
use ctd_cli::{CliError, CliResult};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ctd",
    version,
    about = "Cheapest-to-deliver collateral discount factors from a Hull-White spread model"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Price the collateral choice option with the common-factor estimators.
    Price(PriceArgs),
    /// Sweep one model axis and compare estimators against Monte Carlo.
    Sweep(SweepArgs),
    /// Lattice-step convergence table for the moment integrals.
    TableMoments(TableMomentsArgs),
    /// Convert collateral-rate parameters into spread parameters.
    Convert(ConvertArgs),
    /// Monte Carlo reference values for the configured setup.
    Mc(CommonArgs),
    /// Wall-clock scaling of the second-order estimators in currency count.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run-configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the maturity (years).
    #[arg(long)]
    maturity: Option<f64>,
    /// Override the time-grid step (years).
    #[arg(long)]
    dt: Option<f64>,
    /// Override the convolution lattice step.
    #[arg(long)]
    delta: Option<f64>,
    /// Override the Monte Carlo path count.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Variance fed to the second-order estimators.
    #[arg(long, value_enum)]
    variance_mode: Option<VarianceModeArg>,
    /// Write the machine output to this path (plus a .meta sidecar).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine output format printed to stdout.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct PriceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Include the per-grid-time diagnostic series.
    #[arg(long)]
    diagnostics: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Axis to vary: corr, kappa or vol.
    #[arg(long)]
    axis: String,
    /// Axis range as lo:hi (correlation values, or joint scale factors).
    #[arg(long)]
    range: String,
    /// Number of axis points.
    #[arg(long, default_value_t = 11)]
    steps: usize,
}

#[derive(Args)]
struct TableMomentsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated lattice steps.
    #[arg(long, default_value = "5e-4,5e-5")]
    deltas: String,
    /// Comma-separated maturities (grid-aligned).
    #[arg(long, default_value = "5,10,15,20")]
    maturities: String,
}

#[derive(Args)]
struct ConvertArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated currency counts (at least 3 currencies each).
    #[arg(long, default_value = "3,4,5,6,7,8")]
    counts: String,
    /// Timing repetitions per count (minimum taken).
    #[arg(long, default_value_t = 2)]
    repeats: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Record,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceModeArg {
    Central,
    Raw,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Price(args) => {
            let (cfg, common) = load_run(&args.common)?;
            let rendered = price::run(&cfg, args.diagnostics)?;
            deliver(
                common,
                &rendered,
                &cfg.config_hash,
                Some(cfg.mc.seed),
                Format::Csv,
            )
        }
        Cmd::Sweep(args) => {
            let (cfg, common) = load_run(&args.common)?;
            let axis = sweep::Axis::parse(&args.axis)?;
            let (lo, hi) = parse_range(&args.range)?;
            let rendered = sweep::run(&cfg, axis, lo, hi, args.steps)?;
            deliver(
                common,
                &rendered,
                &cfg.config_hash,
                Some(cfg.mc.seed),
                Format::Csv,
            )
        }
        Cmd::TableMoments(args) => {
            let (cfg, common) = load_run(&args.common)?;
            let deltas = parse_list(&args.deltas, "deltas")?;
            let maturities = parse_list(&args.maturities, "maturities")?;
            let rendered = table_moments::run(&cfg, &deltas, &maturities)?;
            deliver(
                common,
                &rendered,
                &cfg.config_hash,
                Some(cfg.mc.seed),
                Format::Csv,
            )
        }
        Cmd::Convert(args) => {
            let loaded = config::load(&args.common.config)?;
            let overrides = to_overrides(&args.common)?;
            let rcfg = config::resolve_rates(&loaded, &overrides)?;
            let converted = convert::run(&rcfg)?;
            deliver(
                &args.common,
                &converted.rendered,
                &rcfg.config_hash,
                None,
                Format::Record,
            )
        }
        Cmd::Mc(args) => {
            let (cfg, common) = load_run(&args)?;
            let rendered = mc::run(&cfg)?;
            deliver(
                common,
                &rendered,
                &cfg.config_hash,
                Some(cfg.mc.seed),
                Format::Csv,
            )
        }
        Cmd::Bench(args) => {
            let (cfg, common) = load_run(&args.common)?;
            let counts: Vec<usize> = args
                .counts
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::config(format!("bad count \"{s}\"")))
                })
                .collect::<CliResult<_>>()?;
            let seed = cfg.mc.seed;
            let rendered = bench::run(&cfg, &counts, seed, args.repeats)?;
            deliver(common, &rendered, &cfg.config_hash, Some(seed), Format::Csv)
        }
    }
}

type Loaded<'a> = (config::RunConfig, &'a CommonArgs);

fn load_run(common: &CommonArgs) -> CliResult<Loaded<'_>> {
    let loaded = config::load(&common.config)?;
    let overrides = to_overrides(common)?;
    let cfg = config::resolve_run(&loaded, &overrides)?;
    Ok((cfg, common))
}

fn to_overrides(common: &CommonArgs) -> CliResult<Overrides> {
    Ok(Overrides {
        maturity: common.maturity,
        dt: common.dt,
        delta: common.delta,
        paths: common.paths,
        seed: common.seed,
        variance_mode: common.variance_mode.map(|m| {
            match m {
                VarianceModeArg::Central => "central",
                VarianceModeArg::Raw => "raw",
            }
            .to_string()
        }),
    })
}

fn deliver(
    common: &CommonArgs,
    rendered: &output::Rendered,
    config_hash: &str,
    seed: Option<u64>,
    default_format: Format,
) -> CliResult<()> {
    let meta = Meta {
        config_hash: config_hash.to_string(),
        seed,
    };
    let format = common.format.map(|f| match f {
        FormatArg::Csv => Format::Csv,
        FormatArg::Record => Format::Record,
    });
    output::deliver(
        rendered,
        &meta,
        common.out.as_deref(),
        format,
        default_format,
    )
}

fn parse_range(range: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 2 {
        return Err(CliError::config(format!(
            "range must look like lo:hi; got \"{range}\""
        )));
    }
    let lo = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::config(format!("bad range bound \"{}\"", parts[0])))?;
    let hi = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::config(format!("bad range bound \"{}\"", parts[1])))?;
    Ok((lo, hi))
}

fn parse_list(list: &str, what: &str) -> CliResult<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("bad {what} entry \"{s}\"")))
        })
        .collect()
}
