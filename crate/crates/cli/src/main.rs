use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedtraffic_cli::{commands, CliError, Overrides, RunConfig, RunManifest};

/// Traffic demand calibration with per-zone PPO agents and decentralized
/// federated learning.
///
/// Every flag can also be set through a `FEDTRAFFIC_<FLAG>` environment
/// variable (for example `FEDTRAFFIC_SEED=3`); flags win over the environment,
/// which wins over the config file.
///
/// Exit codes: 0 success, 1 invalid input, 2 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "fedtraffic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and check a scenario; print zones and adjacency.
    Validate(Common),
    /// Run the federation and write checkpoints and the ARE history.
    Train(Common),
    /// Generate a day of routes for one detector from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Policy checkpoint (`.ppo`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Detector whose profile is generated.
        #[arg(long)]
        detector: String,
    },
    /// Compare calibrated generation with the baseline sampler.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Paired executions per detector.
        #[arg(long, env = "FEDTRAFFIC_EXECUTIONS")]
        executions: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(long, env = "FEDTRAFFIC_CONFIG")]
    config: Option<PathBuf>,
    /// Bundled scenario: grid or heterogeneous.
    #[arg(long, env = "FEDTRAFFIC_FIXTURE")]
    fixture: Option<String>,
    #[arg(long, env = "FEDTRAFFIC_NETWORK")]
    network: Option<PathBuf>,
    #[arg(long, env = "FEDTRAFFIC_PROFILES")]
    profiles: Option<PathBuf>,
    #[arg(long, env = "FEDTRAFFIC_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "FEDTRAFFIC_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "FEDTRAFFIC_WORKERS")]
    workers: Option<usize>,
    #[arg(long, env = "FEDTRAFFIC_STRATEGY", value_parser = ["geographic", "volume", "pattern"])]
    strategy: Option<String>,
    #[arg(long, env = "FEDTRAFFIC_ROUNDS")]
    rounds: Option<usize>,
    #[arg(long, env = "FEDTRAFFIC_EPISODES")]
    episodes: Option<usize>,
}

impl Common {
    fn resolve(&self, executions: Option<usize>) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) if p.extension().is_some_and(|e| e == "json") => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::validation(format!("cannot read {}: {e}", p.display())))?;
                RunManifest::from_json(&text)?.config
            }
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            fixture: self.fixture.clone(),
            network: self.network.clone(),
            profiles: self.profiles.clone(),
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            strategy: self.strategy.clone(),
            rounds: self.rounds,
            episodes: self.episodes,
            executions,
        });
        Ok(cfg)
    }

    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(c) => {
            let cfg = c.resolve(None)?;
            print!("{}", commands::validate(&cfg, c.config_path(), c.out.is_some())?);
        }
        Command::Train(c) => {
            let cfg = c.resolve(None)?;
            let history = commands::train(&cfg, c.config_path())?;
            for r in &history {
                println!("round {}: mean ARE {:.3}", r.round, r.mean_are());
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::Generate {
            common,
            checkpoint,
            detector,
        } => {
            let cfg = common.resolve(None)?;
            let g = commands::generate(&cfg, common.config_path(), &checkpoint, &detector)?;
            println!(
                "{detector}: {} vehicles, replayed MAE {:.3}; wrote {} and {}",
                g.vehicles,
                g.mae,
                g.route_file.display(),
                g.ledger.display()
            );
        }
        Command::Compare { common, executions } => {
            let cfg = common.resolve(executions)?;
            let report = commands::compare(&cfg, common.config_path())?;
            println!("{:<10} {:>22} {:>22}", "detector", "calibrated MAE", "baseline MAE");
            let mut ids: Vec<&str> = report.rows.iter().map(|r| r.detector.as_str()).collect();
            ids.dedup();
            for id in ids {
                let cell = |m: &str| {
                    report
                        .row(id, m)
                        .map_or("-".to_string(), |r| format!("{:.2} ± {:.2}", r.mu, r.sigma))
                };
                println!("{id:<10} {:>22} {:>22}", cell(commands::CALIBRATED), cell(commands::BASELINE));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
