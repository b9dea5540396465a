use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcg_cli::commands::{self, CmdResult, Context, Failure, SimulateArgs};
use mcg_cli::config::ScenarioConfig;
use mcg_cli::verify::{self, Suite};
use mcg_cli::EXIT_CONFIG;
use mcg_core::Investor;

#[derive(Parser)]
#[command(
    name = "mcg",
    version,
    about = "Two-investor trading game with permanent price impact"
)]
struct Cli {
    /// Scenario file (key = value lines); defaults to the built-in scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: output_dir from the config, else ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form equilibrium holdings, existence conditions and crossing times.
    Equilibrium,
    /// Monte Carlo paths under given trading rates.
    Simulate {
        /// Investor 1 rate file (t,x per grid interval).
        #[arg(long)]
        x1: Option<PathBuf>,
        /// Investor 2 rate file.
        #[arg(long)]
        x2: Option<PathBuf>,
        /// Use equilibrium rates for investors without a rate file.
        #[arg(long)]
        equilibrium: bool,
        /// Number of paths written to paths.csv.
        #[arg(long, default_value_t = 10)]
        dump_paths: usize,
    },
    /// Best response against an opponent rate path.
    BestResponse {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        investor: u8,
        /// Opponent rate file; defaults to the opponent's equilibrium rate.
        #[arg(long)]
        x_opp: Option<PathBuf>,
    },
    /// Search round trips for dynamic arbitrage under the configured impact.
    Arbitrage {
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
        betas: Vec<f64>,
        #[arg(long, default_value_t = 3.0)]
        horizon: f64,
    },
    /// Run the property suites against the scenario.
    Verify {
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
}

fn load(cli: &Cli) -> CmdResult<Context> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            ScenarioConfig::parse(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", p.display())))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Context::new(config, cli.out.clone())
}

fn run(cli: &Cli) -> CmdResult {
    let ctx = load(cli)?;
    match &cli.command {
        Command::Equilibrium => commands::cmd_equilibrium(&ctx),
        Command::Simulate {
            x1,
            x2,
            equilibrium,
            dump_paths,
        } => commands::cmd_simulate(
            &ctx,
            SimulateArgs {
                x1: x1.as_deref(),
                x2: x2.as_deref(),
                equilibrium: *equilibrium,
                dump_paths: *dump_paths,
            },
        ),
        Command::BestResponse { investor, x_opp } => {
            let who = Investor::from_number(*investor).expect("range checked by clap");
            commands::cmd_best_response(&ctx, who, x_opp.as_deref())
        }
        Command::Arbitrage { alphas, betas, horizon } => commands::cmd_arbitrage(&ctx, alphas, betas, *horizon),
        Command::Verify { suite } => verify::cmd_verify(&ctx, *suite),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
