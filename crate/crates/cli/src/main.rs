use clap::{Args, Parser, Subcommand};
use mfvi_cli::config::{parse_config, Command};
use mfvi_cli::rows::{check_writable, emit_results, git_hash, RunMeta};
use mfvi_cli::sweep::{run_command, with_pool};
use std::path::PathBuf;
use std::process::ExitCode;

/// Benchmark driver for mean-field variational inference experiments.
#[derive(Parser)]
#[command(name = "mfvi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run SPGD on a configured target and emit per-iteration traces.
    Fit(CommonArgs),
    /// Paired gradient-variance estimates against the closed-form bound.
    VarianceSweep(CommonArgs),
    /// Empirical E max u^2 next to each applicable theoretical bound.
    Maxstats(CommonArgs),
    /// Field-level gradient-variance lower-bound experiment.
    Lowerbound(CommonArgs),
    /// Iterations-to-accuracy across dimensions and families.
    DimSweep(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file for the result table (CSV by default).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed list.
    #[arg(long, num_args = 1..)]
    seeds: Option<Vec<u64>>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::VarianceSweep(a) => (Command::VarianceSweep, a),
        Cmd::Maxstats(a) => (Command::MaxStats, a),
        Cmd::Lowerbound(a) => (Command::LowerBound, a),
        Cmd::DimSweep(a) => (Command::DimSweep, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command, args: CommonArgs) -> mfvi_cli::Result<()> {
    let cfg = parse_config(&args.config, command, args.seeds, args.workers)?;
    check_writable(&args.out)?;
    let table = with_pool(cfg.workers, || run_command(&cfg))??;
    let meta = RunMeta {
        command: command.to_string(),
        git_hash: git_hash(),
        seeds: cfg.seeds.clone(),
        config_digest: cfg.digest.clone(),
        out_format: cfg.out_format.as_str().to_string(),
        n_rows: table.len(),
        workers: cfg.workers,
    };
    let sidecar = emit_results(&table, &args.out, cfg.out_format, &meta)?;
    println!(
        "{}: wrote {} rows to {} (metadata: {})",
        command,
        table.len(),
        args.out.display(),
        sidecar.display()
    );
    Ok(())
}
