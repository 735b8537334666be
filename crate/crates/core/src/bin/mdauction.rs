use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mdauction::harness::{parse_config, run_experiment, ExperimentConfig, OutputFormat, RunOptions, RunReport};
use mdauction::validation::{myerson_suite, oracle_agreement};
use mdauction::SolverConfig;

#[derive(Parser)]
#[command(name = "mdauction", version, about = "Optimal multi-dimensional auctions by LP plane cutting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// Output directory (overrides the config's `output` key)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// ICC and Border violation tolerance
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for Monte Carlo EBM evaluation
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for separation and EBM search
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pgm,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the optimal auction for every N in the config
    Solve { config: PathBuf },
    /// Optimize exclusive buyer mechanism prices
    Ebm { config: PathBuf },
    /// Optimal auction against the best exclusive buyer mechanism
    Compare { config: PathBuf },
    /// Compare exclusion regions across N
    Exclusion { config: PathBuf },
    /// Run the Myerson and brute-force oracle checks
    Validate,
}

fn load(path: &Path, flags: &Flags) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = parse_config(&text).with_context(|| format!("{}", path.display()))?;
    if let Some(tol) = flags.tol {
        config.solver.violation_tol = tol;
        config.solver.validate().context("--tol")?;
    }
    if let Some(seed) = flags.seed {
        config.ebm.seed = seed;
    }
    Ok(config)
}

fn run(path: &Path, flags: &Flags, optimal: bool, ebm: bool) -> Result<RunReport> {
    let config = load(path, flags)?;
    let options = RunOptions {
        optimal,
        ebm,
        out_dir: flags.out.clone(),
        format: match flags.format {
            Format::Csv => OutputFormat::Csv,
            Format::Pgm => OutputFormat::Pgm,
            Format::Both => OutputFormat::Both,
        },
    };
    let report = run_experiment(&config, &options)?;
    print!("{}", report.summary_text());
    Ok(report)
}

fn validate(flags: &Flags) -> Result<bool> {
    let mut config = SolverConfig::default();
    if let Some(tol) = flags.tol {
        config.violation_tol = tol;
    }
    let mut ok = true;
    for check in myerson_suite(&[1, 2, 3], 20, &config)? {
        let pass = (check.lp_total - check.oracle).abs() <= 0.02 && check.certified;
        ok &= pass;
        println!(
            "{} myerson N={}: LP {:.6} vs continuous {:.6} ({:.2} s)",
            if pass { "PASS" } else { "FAIL" },
            check.buyers,
            check.lp_total,
            check.oracle,
            check.elapsed.as_secs_f64()
        );
    }
    let agreement = oracle_agreement(1000, flags.seed.unwrap_or(0), config.violation_tol);
    for (what, agree) in [
        ("border prefix vs exhaustive", agreement.border_agree),
        ("full ICC scan vs direct rows", agreement.icc_agree),
    ] {
        let pass = agree == agreement.trials;
        ok &= pass;
        println!(
            "{} {what}: {agree}/{} trials agree",
            if pass { "PASS" } else { "FAIL" },
            agreement.trials
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    if let Some(threads) = cli.flags.threads {
        if threads == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let flags = &cli.flags;
    let report = match &cli.command {
        Command::Solve { config } => run(config, flags, true, false)?,
        Command::Ebm { config } => run(config, flags, false, true)?,
        Command::Compare { config } => run(config, flags, true, true)?,
        Command::Exclusion { config } => run(config, flags, true, false)?,
        Command::Validate => return validate(flags),
    };
    if !report.all_certified() {
        eprintln!("error: at least one solve was not certified");
        return Ok(false);
    }
    Ok(true)
}
