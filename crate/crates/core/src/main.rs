use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sopt::cli::{self, CommandKind, Overrides};
use sopt::Result;

/// Sensory optimization: train a recognition net on synthetic shapes and
/// synthesize images against it.
#[derive(Parser)]
#[command(name = "sopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a recognition net; writes checkpoint.sopt and metrics.json.
    Train(RunArgs),
    /// Synthesize an image (or a batch corpus) with a preset or custom objective.
    Synth {
        /// fv, dream, style, so, medium, paint or custom.
        #[arg(long)]
        preset: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Accuracy, confusion, cross-net agreement and corpus retention.
    Eval(RunArgs),
    /// Summarize a checkpoint or a run manifest.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config, or a manifest.json to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `synth.ascent.steps=100`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(kind: CommandKind, args: RunArgs, preset: Option<String>) -> Result<()> {
    let file = args.config.as_deref().map(cli::read_config_file).transpose()?;
    let sets = args
        .sets
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.to_string()))
                .ok_or_else(|| sopt::Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        preset,
        sets,
    };
    let cfg = cli::resolve(kind, file, &overrides)?;
    let manifest = cli::run(&cfg)?;
    println!("{}", cfg.out.join(cli::MANIFEST_FILE).display());
    if let (Some(a), Some(b)) = (manifest.initial_value, manifest.final_value) {
        println!("objective {a:.6} -> {b:.6}");
    }
    for r in &manifest.superstimulus {
        match r.ratio.ratio {
            Some(x) => println!("superstimulus {} {x:.4}", r.name),
            None => println!("superstimulus {} undefined", r.name),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => execute(CommandKind::Train, a, None),
        Command::Synth { preset, run } => execute(CommandKind::Synth, run, preset),
        Command::Eval(a) => execute(CommandKind::Eval, a, None),
        Command::Inspect { path } => cli::inspect(&path).map(|s| print!("{s}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
