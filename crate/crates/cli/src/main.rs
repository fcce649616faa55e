use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qudit_cli::{run_experiment, validate_config, CliError, Kind};

/// Resonator-qudit simulations from JSON experiment configs.
#[derive(Parser)]
#[command(name = "sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dressed energies versus a swept parameter, with avoided crossings.
    Spectrum(RunArgs),
    /// Number-dependent Stark shifts, perturbative and exact.
    Stark(RunArgs),
    /// Single-qudit rotation: waveform, trace and gate report.
    Gate(RunArgs),
    /// Two-qudit controlled phase: waveform and gate report.
    TwoQudit(RunArgs),
    /// Open-system trajectory sweeps over Fock level and coherence times.
    Trajectories(RunArgs),
    /// Decompose a unitary into two-level rotations.
    Synthesize(RunArgs),
    /// Recover Fock populations from a simulated Rabi readout.
    Readout(RunArgs),
    /// Print the normalized parameters and flag problems without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, env = "SIM_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Validate { config } => {
            return match validate_config(&config) {
                Ok((report, flags)) => {
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                    if flags.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        fail(CliError::Flagged(flags))
                    }
                }
                Err(e) => fail(e),
            };
        }
        Command::Spectrum(a) => (Kind::Spectrum, a),
        Command::Stark(a) => (Kind::Stark, a),
        Command::Gate(a) => (Kind::Gate, a),
        Command::TwoQudit(a) => (Kind::TwoQudit, a),
        Command::Trajectories(a) => (Kind::Trajectories, a),
        Command::Synthesize(a) => (Kind::Synthesize, a),
        Command::Readout(a) => (Kind::Readout, a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            return fail(CliError::config(format!("cannot set up {n} threads: {e}")));
        }
    }
    match run_experiment(kind, &args.config, args.seed, args.out_dir.as_deref()) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
