use std::path::PathBuf;
use std::process::ExitCode;

use calseg::experiment::{self, Command, ExperimentConfig};
use calseg::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "calseg", version, about = "Train and evaluate calibrated segmentation losses")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset on disk
    GenData(Common),
    /// Train one model and evaluate it on the test split
    Train(Common),
    /// Evaluate a checkpoint and write heatmaps
    Eval(Common),
    /// Train DSC++ over a grid of gamma values
    SweepGamma(Common),
    /// Evaluate a checkpoint over a grid of softmax thresholds
    SweepThreshold(Common),
    /// Colour a PFM probability map
    RenderHeatmap(Common),
    /// Train and compare several losses with significance tests
    CompareLosses(Common),
}

#[derive(Args)]
struct Common {
    /// Plain `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; may be repeated
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_pair)]
    set: Vec<(String, String)>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (command, args) = match cli.command {
        Cmd::GenData(a) => (Command::GenData, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::SweepGamma(a) => (Command::SweepGamma, a),
        Cmd::SweepThreshold(a) => (Command::SweepThreshold, a),
        Cmd::RenderHeatmap(a) => (Command::RenderHeatmap, a),
        Cmd::CompareLosses(a) => (Command::CompareLosses, a),
    };
    let result = ExperimentConfig::load(args.config.as_deref(), &args.set)
        .and_then(|cfg| experiment::run(command, &cfg, &args.out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("calseg {}: {e}", command.name());
            match e {
                Error::Config(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_RUNTIME),
            }
        }
    }
}
