mod commands;
mod plot;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Modality adaptation for semantic segmentation: training, evaluation,
/// synthetic data, distillation and plots.
#[derive(Parser, Debug)]
#[command(name = "madm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Self-train a student on labelled source and unlabelled target data.
    ///
    /// Any config key can be overridden with `--key value`; the last value
    /// given for a key wins.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled split.
    Eval(EvalArgs),
    /// Write the synthetic paired-modality benchmark.
    Synth(SynthArgs),
    /// Train a student against a frozen teacher checkpoint.
    Distill(DistillArgs),
    /// Draw loss curves, an ablation chart and prediction grids.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset root holding `source/` and `target/` manifests. Without it
    /// the synthetic benchmark is generated in memory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of the in-memory synthetic benchmark.
    #[arg(long, default_value_t = 0)]
    pub synth_seed: u64,
    #[arg(long, default_value_t = 200)]
    pub synth_scenes: usize,
    #[arg(long, default_value = "edge")]
    pub synth_modality: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML config; desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Pretrained backbone checkpoint; otherwise the autoencoder is
    /// pretrained first.
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    /// Force k = 0 for every pseudo-label.
    #[arg(long)]
    pub no_dplg: bool,
    /// Drop the regression losses and the high-resolution feature.
    #[arg(long)]
    pub no_lplr: bool,
    /// Fraction of target training images used.
    #[arg(long)]
    pub data_fraction: Option<f64>,
    /// Name recorded in the run record and shown in plots.
    #[arg(long)]
    pub label: Option<String>,
    /// `--key value` config overrides.
    #[arg(last = true, allow_hyphen_values = true)]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate the source domain instead of the target.
    #[arg(long)]
    pub source: bool,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Side length of the in-memory synthetic benchmark.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Classes absent from both prediction and ground truth count as 0.
    #[arg(long)]
    pub count_absent_as_zero: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// edge, inverse-depth or thermal-like.
    #[arg(long, default_value = "edge")]
    pub modality: String,
    /// Output directory; defaults to `dataset/` inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Frozen teacher model checkpoint.
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Student architecture: compact or desk.
    #[arg(long, default_value = "compact")]
    pub student: String,
    #[arg(last = true, allow_hyphen_values = true)]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Run directories to plot.
    pub runs: Vec<PathBuf>,
    /// Images per prediction grid.
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

const FLAG_NAMES: &[&str] = &[
    "config",
    "data",
    "synth-seed",
    "synth-scenes",
    "synth-modality",
    "backbone",
    "no-dplg",
    "no-lplr",
    "data-fraction",
    "label",
    "teacher",
    "student",
    "help",
    "h",
];

/// Moves `--key value` pairs that are not command flags behind a `--`
/// separator so clap hands them over as overrides.
fn split_overrides(args: Vec<String>) -> Vec<String> {
    let Some(cmd) = args.get(1) else { return args };
    if cmd != "train" && cmd != "distill" {
        return args;
    }
    let mut head = args[..2].to_vec();
    let mut tail = Vec::new();
    let mut it = args.into_iter().skip(2).peekable();
    while let Some(a) = it.next() {
        if a == "--" {
            tail.extend(it.by_ref());
            break;
        }
        let name = a.strip_prefix("--").map(|n| n.split('=').next().unwrap_or(n));
        match name {
            Some(n) if !FLAG_NAMES.contains(&n) => {
                tail.push(a.clone());
                if !a.contains('=') {
                    if let Some(v) = it.next() {
                        tail.push(v);
                    }
                }
            }
            _ => head.push(a),
        }
    }
    if !tail.is_empty() {
        head.push("--".into());
        head.extend(tail);
    }
    head
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(split_overrides(std::env::args().collect()));
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Distill(a) => commands::distill(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn unknown_flags_become_overrides() {
        let out = split_overrides(s(&["madm", "train", "--no-dplg", "--lr", "0.1", "--seed=3", "--data", "d"]));
        assert_eq!(
            out,
            s(&["madm", "train", "--no-dplg", "--data", "d", "--", "--lr", "0.1", "--seed=3"])
        );
        let plain = s(&["madm", "eval", "--checkpoint", "x"]);
        assert_eq!(split_overrides(plain.clone()), plain);
    }
}
