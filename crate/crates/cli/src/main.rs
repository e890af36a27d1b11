//! `s2gate`: grids, equivariance reports, training, MD, attention maps and
//! evaluation for the gated force field.
//!
//! Every subcommand writes into `--out` (default `out/<command>`) and leaves
//! a `manifest.json` there. Settings come from flags, then from a flat
//! `key = value` file given with `--config` (keys are the long flag names,
//! `-` or `_`), then from built-in defaults.

mod commands;
mod inputs;
mod run;
mod settings;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use commands::{attention_map, equivariance, eval, grid, md, ratio, train};
use run::Run;
use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "s2gate", version, about = "Spherical-attention edge gating for equivariant force fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` settings file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out/<command>]
    #[arg(long, global = true)]
    out: Option<String>,
    /// Worker threads; 0 uses every core. 1 gives bit-reproducible runs [default: 0]
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dump an equiangular grid and check its quadrature weights
    Grid {
        #[command(flatten)]
        args: grid::GridArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Measure energy, force and gate changes under random rigid motions
    CheckEquivariance {
        #[command(flatten)]
        args: equivariance::EquivarianceArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset file or a synthetic potential
    Train {
        #[command(flatten)]
        args: Box<train::TrainArgs>,
        #[command(flatten)]
        common: Common,
    },
    /// Langevin dynamics with a trained model or an analytic potential
    Md {
        #[command(flatten)]
        args: md::MdArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Record gates while one atom moves along a line or over a hemisphere
    AttentionMap {
        #[command(flatten)]
        args: attention_map::AttentionMapArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Energy and force error metrics of a model on labelled data
    Eval {
        #[command(flatten)]
        args: eval::EvalArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Relative difference between an ungated and a gated training log
    ValidationRatio {
        #[command(flatten)]
        args: ratio::RatioArgs,
        #[command(flatten)]
        common: Common,
    },
}

fn start(name: &str, common: &Common) -> Result<(Settings, Run)> {
    let mut settings = Settings::load(common.config.as_deref())?;
    let out = settings.get("out", common.out.clone(), format!("out/{name}"))?;
    let threads = settings.get("threads", common.threads, 0usize)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let run = Run::start(name, out.as_ref())?;
    Ok((settings, run))
}

fn dispatch<A>(
    name: &str,
    common: &Common,
    args: &A,
    execute: fn(&A, &mut Settings, &mut Run) -> Result<()>,
) -> Result<()> {
    let (mut settings, mut run) = start(name, common)?;
    let result = execute(args, &mut settings, &mut run);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed: {e:#}"),
    };
    run.finish(&settings, &status)?;
    result
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Grid { args, common } => dispatch("grid", common, args, grid::execute),
        Command::CheckEquivariance { args, common } => {
            dispatch("check-equivariance", common, args, equivariance::execute)
        }
        Command::Train { args, common } => dispatch("train", common, args.as_ref(), train::execute),
        Command::Md { args, common } => dispatch("md", common, args, md::execute),
        Command::AttentionMap { args, common } => dispatch("attention-map", common, args, attention_map::execute),
        Command::Eval { args, common } => dispatch("eval", common, args, eval::execute),
        Command::ValidationRatio { args, common } => dispatch("validation-ratio", common, args, ratio::execute),
    }
}
