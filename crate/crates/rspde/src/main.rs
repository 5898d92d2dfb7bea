use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rspde::config::Experiment;
use rspde::{exit, Overrides};

#[derive(Parser)]
#[command(name = "rspde", version, about = "Penalization lab for reflected quasilinear SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// Comma-separated penalty levels.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<f64>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Spatial nodes per axis and time steps, as `MxN`.
    #[arg(long, value_parser = rspde::parse_grid)]
    grid: Option<(usize, usize)>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG as u8 } else { 0 });
        }
    };
    let Command::Run(args) = cli.command;
    let overrides = Overrides {
        experiment: args.experiment,
        ns: args.ns,
        seeds: args.seeds,
        output: args.out,
        kappa: args.kappa,
        grid: args.grid,
    };
    let pool = match rspde::worker_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    match pool.install(|| rspde::load_and_run(&args.config, &overrides, true)) {
        Ok(report) => {
            if !args.quiet {
                print!("{}", report.summary());
                println!("artifacts in {}", report.output.display());
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
