//! Command-line front end for the cell-free THP simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cfthp::channel::TauMode;
use cfthp::metrics::SinrForm;
use cfthp::precoders::BetaMode;
use cfthp::sweep::{run_csit_sweep, run_snr_sweep, SweepResult};
use cfthp::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "cfthp",
    about = "Cell-free MU-MIMO downlink sum-rate sweeps with cluster-based THP precoders",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep ergodic sum-rate over an SNR grid.
    SnrSweep(SweepArgs),
    /// Sweep ergodic sum-rate over CSIT quality at fixed SNR.
    CsitSweep(SweepArgs),
    /// Run the built-in verification battery.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario file (key-value format, see README).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rayon worker threads (default: all cores). Output bytes do not
    /// depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Square β^(d) in the decentralized SINR noise term instead of the
    /// published unsquared form.
    #[arg(long)]
    square_beta_d: Option<bool>,
    /// Scale factor convention relating true channel and estimate.
    #[arg(long, value_parser = parse_tau_mode)]
    tau_mode: Option<TauMode>,
    /// Transmit power scaling convention.
    #[arg(long, value_parser = parse_beta_mode)]
    beta_mode: Option<BetaMode>,
    /// Where the self-distortion term enters the THP SINR.
    #[arg(long, value_parser = parse_sinr_form)]
    sinr_form: Option<SinrForm>,
}

fn parse_tau_mode(s: &str) -> Result<TauMode, String> {
    match s {
        "paper" => Ok(TauMode::Paper),
        "consistent" => Ok(TauMode::Consistent),
        other => Err(format!("invalid tau mode `{other}` (paper|consistent)")),
    }
}

fn parse_beta_mode(s: &str) -> Result<BetaMode, String> {
    match s {
        "paper" => Ok(BetaMode::Paper),
        "classic" => Ok(BetaMode::Classic),
        other => Err(format!("invalid beta mode `{other}` (paper|classic)")),
    }
}

fn parse_sinr_form(s: &str) -> Result<SinrForm, String> {
    match s {
        "printed" => Ok(SinrForm::Printed),
        "coherent" => Ok(SinrForm::Coherent),
        other => Err(format!("invalid sinr form `{other}` (printed|coherent)")),
    }
}

fn load_config(args: &SweepArgs) -> anyhow::Result<ScenarioConfig> {
    let mut config = ScenarioConfig::from_file(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    if let Some(square) = args.square_beta_d {
        config.square_beta_d = square;
    }
    if let Some(tau) = args.tau_mode {
        config.tau_mode = tau;
    }
    if let Some(beta) = args.beta_mode {
        config.beta_mode = beta;
    }
    if let Some(form) = args.sinr_form {
        config.sinr_form = form;
    }
    Ok(config)
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    job: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    match workers {
        None => job(),
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(job),
    }
}

fn print_summary(result: &SweepResult, out_dir: &str) {
    println!(
        "{}: {} rows, seed {}, config {}",
        result.kind.as_str(),
        result.rows.len(),
        result.seed,
        result.config_hash
    );
    for row in &result.rows {
        println!(
            "  {:>8} {:>8}: esr {:.4} ± {:.4} (excluded {:.3}%)",
            row.sweep_value,
            row.precoder.label(),
            row.esr,
            row.esr_stderr,
            100.0 * row.excluded_fraction
        );
    }
    println!("results in {out_dir}");
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SnrSweep(args) => {
            let config = load_config(&args)?;
            let result = with_workers(args.workers, || Ok(run_snr_sweep(&config)?))?;
            print_summary(&result, &config.output_dir);
        }
        Command::CsitSweep(args) => {
            let config = load_config(&args)?;
            let result = with_workers(args.workers, || Ok(run_csit_sweep(&config)?))?;
            print_summary(&result, &config.output_dir);
        }
        Command::Selftest { seed } => {
            let results = cfthp::selftest::run_selftest(seed)?;
            let mut failures = 0;
            for check in &results {
                let status = if check.passed { "ok" } else { "FAIL" };
                println!("selftest {:<18} {status}  ({})", check.name, check.detail);
                if !check.passed {
                    failures += 1;
                }
            }
            if failures > 0 {
                bail!("{failures} selftest check(s) failed");
            }
            println!("selftest: all {} checks passed", results.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
