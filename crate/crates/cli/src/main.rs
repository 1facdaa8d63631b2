//! `lrb`: scenario-driven front end for the Lieb-Robinson bound toolkit.
//!
//! Exit codes: 0 when every checked invariant holds, 2 on an invariant
//! violation, 1 on usage or runtime errors.

mod commands;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{Ctx, Status};
use output::OutDir;

#[derive(Parser, Debug)]
#[command(name = "lrb", version, about = "Lieb-Robinson bounds for trapped-ion crystals")]
struct Cli {
    /// Output directory for CSV, JSON and SVG files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 2024)]
    seed: u64,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Geometric factor a0 of a lattice.
    A0(commands::A0Args),
    /// Transverse normal modes of a crystal preset.
    Modes(commands::ModesArgs),
    /// Bosonic light cone from the exact propagator.
    Cone(commands::ScenarioArgs),
    /// Closed-form bound fields.
    Bounds(commands::ScenarioArgs),
    /// Two-ion impulsive commutator: Fock dynamics against the closed form.
    Impulsive(commands::ImpulsiveArgs),
    /// Impulsive spreading over the Penning crystal with front fit.
    Figure1(commands::Figure1Args),
    /// Exact small-N dynamics against the spin-boson bound.
    Exact(commands::ExactArgs),
    /// Linear-response measurement of an unequal-time commutator.
    Protocol(commands::ProtocolArgs),
    /// Golden-value summary.
    Report,
}

fn run(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Ctx {
        out: OutDir::create(&cli.out)?,
        seed: cli.seed,
    };
    match &cli.command {
        Command::A0(a) => commands::a0(&ctx, a),
        Command::Modes(a) => commands::modes(&ctx, a),
        Command::Cone(a) => commands::cone(&ctx, a),
        Command::Bounds(a) => commands::bounds(&ctx, a),
        Command::Impulsive(a) => commands::impulsive(&ctx, a),
        Command::Figure1(a) => commands::figure1(&ctx, a),
        Command::Exact(a) => commands::exact(&ctx, a),
        Command::Protocol(a) => commands::protocol(&ctx, a),
        Command::Report => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
