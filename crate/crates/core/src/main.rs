use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use libor_bsde::cli::{self, Command, Overrides};

#[derive(Parser)]
#[command(name = "libor-bsde", version, about = "Deep BSDE swaption pricing under the Libor Market Model")]
struct Args {
    #[command(subcommand)]
    command: Sub,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for path simulation.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Simulate Libor paths and dump them to paths.csv.
    Simulate,
    /// Price every configured instrument with every configured method.
    Price,
    /// Price truncations of each Bermudan by number of exercise dates.
    Sweep,
    /// Turn a run's convergence records into long-format plot data.
    Plotdata,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match args.command {
        Sub::Plotdata => match &args.out {
            Some(dir) => cli::emit_plotdata(dir),
            None => Err(libor_bsde::Error::ConfigParse("plotdata needs --out <run dir>".into())),
        },
        sub => {
            let command = match sub {
                Sub::Simulate => Command::Simulate,
                Sub::Price => Command::Price,
                _ => Command::Sweep,
            };
            match &args.config {
                Some(config) => cli::run(
                    command,
                    config,
                    &Overrides {
                        seed: args.seed,
                        out: args.out.clone(),
                    },
                ),
                None => Err(libor_bsde::Error::ConfigParse("--config is required".into())),
            }
        }
    };
    match result {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
