use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use obstrack::harness::{
    replay, run_benchmark, run_one, write_outputs, AlgoId, ExperimentConfig, HarnessError,
};
use obstrack::sim::{serve_stdio, ReferenceController};

const EXIT_EXHAUSTED: u8 = 2;
const EXIT_CONFIG: u8 = 64;

#[derive(Parser)]
#[command(
    name = "obstrack",
    version,
    about = "Falsification search for a car on an obstructed track"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one falsification search and report the effort spent.
    Falsify {
        /// Experiment config document (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Algorithm to run.
        #[arg(long)]
        algo: AlgoId,
        /// Seed of the run's random streams.
        #[arg(long)]
        seed: u64,
        /// Directory for the run record and any goal environment document.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full benchmark: every algorithm over every seed.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of seeds, enumerated from the config's base seed.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-simulate a saved scene or meta-state and render it as SVG.
    Replay {
        /// Scene, environment, or meta-state document.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Step at which to draw the car and sensor wedge (default: last).
        #[arg(long)]
        fov_step: Option<usize>,
    },
    /// Serve the built-in controller over stdin/stdout using the external
    /// controller wire protocol.
    StdioController,
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    match path {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run() -> Result<u8, HarnessError> {
    match Cli::parse().command {
        Command::Falsify {
            config,
            algo,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            cfg.validate()?;
            let scenario = cfg.scenario.to_scenario()?;
            let record = run_one(&cfg, &scenario, algo, seed)?;
            println!(
                "algo={} seed={} success={} envs_tested={} calls_expansion={} calls_sampling={} calls_total={} wall_ms={}",
                record.algo,
                record.seed,
                u8::from(record.success),
                record.envs_tested,
                record.calls_expansion,
                record.calls_sampling,
                record.calls_total,
                record.wall_ms
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(
                    dir.join(format!("{}-{}.csv", record.algo, record.seed)),
                    format!("{}\n{}\n", obstrack::harness::CSV_HEADER, record.csv_line()),
                )?;
                if let Some(doc) = &record.goal_env_doc {
                    let path = dir.join(format!("{}-{}.env.json", record.algo, record.seed));
                    std::fs::write(&path, doc)?;
                    println!("goal environment written to {}", path.display());
                }
            }
            Ok(if record.success { 0 } else { EXIT_EXHAUSTED })
        }
        Command::Bench { config, seeds, out } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(n) = seeds {
                cfg.run.seeds = None;
                cfg.run.seed_count = n;
            }
            if let Some(dir) = out {
                cfg.run.out_dir = Some(dir);
            }
            let output = run_benchmark(&cfg)?;
            print!("{}", output.summary_table());
            if let Some(dir) = &cfg.run.out_dir {
                write_outputs(&output, dir)?;
                println!("records written to {}", dir.display());
            }
            Ok(0)
        }
        Command::Replay {
            input,
            out,
            config,
            fov_step,
        } => {
            let cfg = load_config(config.as_ref())?;
            let scenario = cfg.scenario.to_scenario()?;
            let text = std::fs::read_to_string(&input)
                .map_err(|e| HarnessError::Parse(format!("{}: {e}", input.display())))?;
            let result = replay(&text, &scenario, fov_step)?;
            std::fs::write(&out, result.svg)?;
            println!(
                "status={} kind={} terminal_step={} states={}",
                result.status.status(),
                result.status.kind,
                result.status.terminal_step,
                result.traj.len()
            );
            println!("picture written to {}", out.display());
            Ok(0)
        }
        Command::StdioController => {
            let mut ctrl = ReferenceController::default();
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve_stdio(&mut ctrl, &mut stdin.lock(), &mut stdout.lock())
                .map_err(obstrack::meta::MetaError::from)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(EXIT_CONFIG))
        }
    }
}
