use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tunnelkit::config;
use tunnelkit::pipeline::{run, write_outputs, Command, Problem};

#[derive(Parser)]
#[command(name = "tunnelkit", version, about = "Semiclassical tunneling numerics")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Locate wells and list their harmonic levels
    Wells(Args),
    /// Full and Dirichlet spectra against the harmonic approximation
    Spectrum(Args),
    /// Pair geometry, interaction matrices and predicted spectra
    Interaction(Args),
    /// Splittings over the hbar list with the prefactor fit
    Sweep(Args),
    /// Everything above in one report
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Wells(a) => (Command::Wells, a),
        Cmd::Spectrum(a) => (Command::Spectrum, a),
        Cmd::Interaction(a) => (Command::Interaction, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Report(a) => (Command::Report, a),
    };
    match execute(command, &args) {
        Ok(files) => {
            for f in files {
                println!("{f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command, args: &Args) -> tunnelkit::Result<Vec<String>> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| tunnelkit::Error::Unsupported(e.to_string()))?;
    }
    let cfg = config::load(&args.config)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let problem = Problem::new(cfg, args.seed)?;
    let report = run(&problem, command)?;
    let files = write_outputs(&problem, &report, &dir)?;
    Ok(files.into_iter().map(|f| dir.join(f).display().to_string()).collect())
}
