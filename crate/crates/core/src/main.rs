use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hmcsim::cli::{gen_trace, run_experiment, write_output};
use hmcsim::{Error, ExperimentConfig, PrefetchSystem, ReportFormat, Result, RunMode, TraceSource};

#[derive(Parser)]
#[command(
    name = "hmcsim",
    version,
    about = "NVRAM hierarchy simulator with HMC prefetching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration.
    Run(RunArgs),
    /// Simulate without prefetching and with the configured system, and report coverage/accuracy.
    Compare(RunArgs),
    /// Run every point of the `[[sweep]]` parameter grid.
    Sweep(RunArgs),
    /// Write a synthetic trace.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; defaults apply to every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace file (text, or binary when named *.bin); replaces the config's trace source.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv, json or human.
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Prefetch system: no_prefetch, hmc or hmc_plus_l1.
    #[arg(long, value_parser = parse_system)]
    system: Option<PrefetchSystem>,
    /// Seed for a generated trace.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct GenArgs {
    /// TOML file holding a trace generator spec; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the record count.
    #[arg(long)]
    count: Option<u64>,
    /// Write 25-byte binary records instead of text.
    #[arg(long)]
    binary: bool,
}

fn parse_system(s: &str) -> std::result::Result<PrefetchSystem, String> {
    match s {
        "no_prefetch" => Ok(PrefetchSystem::NoPrefetch),
        "hmc" => Ok(PrefetchSystem::Hmc),
        "hmc_plus_l1" => Ok(PrefetchSystem::HmcPlusL1),
        other => Err(format!("unknown system {other:?}")),
    }
}

fn build_config(args: &RunArgs, mode: RunMode) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.mode = mode;
    if let Some(t) = &args.trace {
        cfg.trace = TraceSource::file(t);
    }
    if let Some(p) = &args.out {
        cfg.output.path = Some(p.clone());
    }
    if let Some(f) = args.format {
        cfg.output.format = f;
    }
    if let Some(s) = args.system {
        cfg.hierarchy.prefetch_system = s;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    Ok(cfg)
}

fn execute(args: &RunArgs, mode: RunMode) -> Result<()> {
    let cfg = build_config(args, mode)?;
    if args.print_config {
        return write_output(&cfg.to_toml()?, None);
    }
    if let Some(p) = cfg.trace.file.as_deref() {
        if !p.exists() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "trace file not found"),
            ));
        }
    }
    let outcome = run_experiment(&cfg)?;
    let text = outcome.emit(cfg.output.format)?;
    write_output(&text, cfg.output.path.as_deref())?;
    eprintln!("{}", outcome.summary());
    Ok(())
}

fn gen(args: &GenArgs) -> Result<()> {
    let mut spec: hmcsim::TraceGenSpec = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => Default::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(c) = args.count {
        spec.count = c;
    }
    let n = gen_trace(&spec, &args.out, args.binary)?;
    eprintln!("wrote {n} records to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => execute(a, RunMode::Single),
        Command::Compare(a) => execute(a, RunMode::Paired),
        Command::Sweep(a) => execute(a, RunMode::Sweep),
        Command::Gen(a) => gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
