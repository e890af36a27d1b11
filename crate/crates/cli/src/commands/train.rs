use anyhow::{bail, Context, Result};
use clap::Args;
use rand::rngs::StdRng;
use rand::SeedableRng;
use std::io::Write;
use std::path::PathBuf;

use s2gate::attention::{AttentionConfig, GateActivation};
use s2gate::backbone::{GatingMode, ModelConfig, ModelState};
use s2gate::field::FieldMode;
use s2gate::training::{train_with, LossWeights, TrainConfig};
use s2gate::Error;

use crate::inputs::{load_dataset, load_model, parse_grid, DataSpec};
use crate::run::Run;
use crate::settings::Settings;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Extended-XYZ file, synth:morse or synth:trimer [default: synth:trimer]
    #[arg(long)]
    pub data: Option<String>,
    /// Frames to synthesise [default: 1000]
    #[arg(long)]
    pub n: Option<usize>,
    /// Temperature (K) of the synthetic geometry distribution [default: 500]
    #[arg(long)]
    pub noise_temp: Option<f64>,
    /// Morse well depth (kcal/mol) of the synthetic potential [default: 1]
    #[arg(long)]
    pub morse_depth: Option<f64>,
    /// Continue from this checkpoint instead of a fresh model
    #[arg(long)]
    pub init: Option<PathBuf>,

    /// Drop the positional embeddings from queries, keys and values
    #[arg(long)]
    pub no_positional_encoding: bool,
    /// Keep the six attention projections at their initial values
    #[arg(long)]
    pub freeze_projections: bool,
    /// Train the ungated baseline
    #[arg(long)]
    pub no_gating: bool,

    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 1000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Final learning rate as a fraction of the initial one [default: 0.1]
    #[arg(long)]
    pub lr_final_fraction: Option<f64>,
    /// Validation interval in steps [default: 100]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub energy_weight: Option<f64>,
    /// [default: 100]
    #[arg(long)]
    pub force_weight: Option<f64>,

    /// [default: 32]
    #[arg(long)]
    pub channels: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub layers: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    pub l_max: Option<usize>,
    /// Å [default: 5]
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub n_bessel: Option<usize>,
    /// Attention grid [default: 4x8]
    #[arg(long)]
    pub grid: Option<String>,
    /// Attention width [default: 16]
    #[arg(long)]
    pub width: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub heads: Option<usize>,
    /// scalar or rbf:N [default: scalar]
    #[arg(long)]
    pub field_mode: Option<String>,
    /// logistic or sinusoidal [default: logistic]
    #[arg(long)]
    pub gate_activation: Option<String>,
}

pub fn execute(args: &TrainArgs, settings: &mut Settings, run: &mut Run) -> Result<()> {
    let data = settings.get("data", args.data.clone(), "synth:trimer".to_string())?;
    let spec = DataSpec {
        n: settings.get("n", args.n, 1000)?,
        noise_t: settings.get("noise_temp", args.noise_temp, 500.0)?,
        morse_depth: settings.get("morse_depth", args.morse_depth, 1.0)?,
        seed: settings.get("seed", args.seed, 0)?,
    };
    let init = settings.get_opt("init", args.init.as_ref().map(|p| p.display().to_string()))?;
    let positional_encoding = settings.get_opt("positional_encoding", args.no_positional_encoding.then_some(false))?;
    let learnable_projections = settings.get_opt("learnable_projections", args.freeze_projections.then_some(false))?;
    let gating: Option<GatingMode> = settings.get_opt("gating", args.no_gating.then_some(GatingMode::Off))?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        weights: LossWeights {
            energy: settings.get("energy_weight", args.energy_weight, defaults.weights.energy)?,
            forces: settings.get("force_weight", args.force_weight, defaults.weights.forces)?,
        },
        steps: settings.get("steps", args.steps, defaults.steps)?,
        batch_size: settings.get("batch_size", args.batch_size, defaults.batch_size)?,
        learning_rate: settings.get("lr", args.lr, defaults.learning_rate)?,
        lr_final_fraction: settings.get("lr_final_fraction", args.lr_final_fraction, defaults.lr_final_fraction)?,
        seed: spec.seed,
        eval_every: settings.get("eval_every", args.eval_every, defaults.eval_every)?,
        positional_encoding,
        learnable_projections,
        gating,
    };
    let mc = ModelConfig::default();
    let ac = AttentionConfig::default();
    let channels = settings.get("channels", args.channels, mc.channels)?;
    let layers = settings.get("layers", args.layers, mc.layers)?;
    let l_max = settings.get("l_max", args.l_max, mc.l_max)?;
    let cutoff = settings.get("cutoff", args.cutoff, mc.cutoff)?;
    let n_bessel = settings.get("n_bessel", args.n_bessel, mc.n_bessel)?;
    let grid = settings.get("grid", args.grid.clone(), format!("{}x{}", ac.n_theta, ac.n_phi))?;
    let width = settings.get("width", args.width, ac.width)?;
    let heads = settings.get("heads", args.heads, ac.heads)?;
    let field_mode: FieldMode = settings.get("field_mode", args.field_mode.as_deref().map(str::parse).transpose()?, ac.field_mode)?;
    let gate_activation: GateActivation = settings.get(
        "gate_activation",
        args.gate_activation.as_deref().map(str::parse).transpose()?,
        ac.gate_activation,
    )?;
    settings.check_unused()?;

    let dataset = load_dataset(&data, &spec)?;
    run.write("dataset.extxyz", dataset.to_extxyz()?)?;
    println!(
        "{}: {} train, {} valid, {} test frames",
        dataset.provenance,
        dataset.train.len(),
        dataset.valid.len(),
        dataset.test.len()
    );
    let model = match init {
        Some(path) => load_model(path.as_ref())?,
        None => {
            let (n_theta, n_phi) = parse_grid(&grid)?;
            let config = ModelConfig {
                species: dataset.species(),
                l_max,
                layers,
                cutoff,
                channels,
                n_bessel,
                attention: AttentionConfig {
                    n_theta,
                    n_phi,
                    width,
                    heads,
                    field_mode,
                    gate_activation,
                    ..ac
                },
                ..mc
            };
            let mut m = ModelState::init(config, &mut StdRng::seed_from_u64(spec.seed))?;
            m.set_reference_energy(dataset.mean_energy_per_atom());
            m
        }
    };

    let log_path = run.path("log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    run.record("log.jsonl");
    let mut write_error = None;
    let result = train_with(&dataset, &model, &cfg, |r| {
        if r.metric == "force_mae" || r.split == "train" {
            println!("step {:>6} {:5} {:10} {:.6}", r.step, r.split, r.metric, r.value);
        }
        let line = serde_json::to_string(r).expect("log records serialise");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(e).context("writing the training log");
    }
    match result {
        Ok(report) => {
            report.state.save(&run.path("checkpoint.json"))?;
            run.record("checkpoint.json");
            println!(
                "validation force MAE {:.5} -> {:.5} kcal/mol/Å",
                report.initial.force_mae, report.last.force_mae
            );
            Ok(())
        }
        Err(Error::Diverged { step, message, last_good }) => {
            last_good.save(&run.path("last_good.json"))?;
            run.record("last_good.json");
            bail!("training diverged at step {step}: {message}; last good parameters in last_good.json")
        }
        Err(e) => Err(e.into()),
    }
}
