//! Command-line front end: runs named experiments and writes their results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qkdlink::harness::{run_experiment, Experiment, ExperimentConfig, RunOptions, TransportMode};

#[derive(Parser)]
#[command(name = "qkdlink", version, about = "Entanglement-based QKD link simulator and post-processing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Loopback,
    Socket,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment: endurance, loss_sweep, channel_sweep, sync_stress or single_link.
    Run {
        experiment: String,
        /// TOML config; every section is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Simulated seconds per engine tick, times 1000.
        #[arg(long, default_value_t = 1000.0)]
        time_scale: f64,
        #[arg(long, value_enum, default_value = "loopback")]
        transport: TransportArg,
        /// Run Alice and wait for Bob on this address (single_link).
        #[arg(long, conflicts_with = "connect")]
        listen: Option<String>,
        /// Run Bob against Alice at this address (single_link).
        #[arg(long)]
        connect: Option<String>,
    },
    /// Print the default configuration as TOML.
    Defaults,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QKDLINK_LOG", "info")).init();
    match Cli::parse().command {
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml_string());
            ExitCode::SUCCESS
        }
        Command::Run { experiment, config, seed, out, time_scale, transport, listen, connect } => {
            let transport = match (listen, connect, transport) {
                (Some(a), _, _) => TransportMode::Listen(a),
                (_, Some(a), _) => TransportMode::Connect(a),
                (_, _, TransportArg::Socket) => TransportMode::Socket,
                (_, _, TransportArg::Loopback) => TransportMode::Loopback,
            };
            let run = || -> qkdlink::Result<bool> {
                let exp: Experiment = experiment.parse()?;
                let cfg = match &config {
                    Some(p) => ExperimentConfig::load(p)?,
                    None => ExperimentConfig::default(),
                };
                let opts = RunOptions { seed, time_scale, transport, out_dir: Some(out.clone()) };
                let s = run_experiment(exp, &cfg, &opts)?;
                for c in &s.checks {
                    log::info!("{} {} = {:.6}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
                }
                log::info!("results in {}", out.display());
                Ok(s.passed)
            };
            match run() {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(2),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
