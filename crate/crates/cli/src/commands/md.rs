use anyhow::{bail, Result};
use clap::Args;
use nalgebra::Vector3;
use serde::Serialize;
use std::path::PathBuf;

use s2gate::md::{moving_average, rdf, run as simulate, ForceProvider, MdConfig, ModelForces};
use s2gate::structure::AtomicConfiguration;
use s2gate::training::write_extxyz;
use s2gate::Error;

use crate::inputs::{load_model, load_system, potential, synth_kind};
use crate::run::{csv_table, jsonl, Run};
use crate::settings::Settings;

#[derive(Args, Debug)]
pub struct MdArgs {
    /// Trained model supplying the forces
    #[arg(long, conflicts_with = "potential")]
    pub checkpoint: Option<PathBuf>,
    /// Use an analytic potential instead: synth:morse or synth:trimer
    #[arg(long)]
    pub potential: Option<String>,
    /// Morse well depth (kcal/mol) for --potential [default: 1]
    #[arg(long)]
    pub morse_depth: Option<f64>,
    /// Extended-XYZ file (first frame) or synth:morse / synth:trimer
    #[arg(long)]
    pub system: Option<String>,
    /// [default: 10000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Time step in fs [default: 1]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Langevin friction in 1/fs [default: 0.1]
    #[arg(long)]
    pub friction: Option<f64>,
    /// Thermostat and initial temperature in K [default: 500]
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Store a frame every this many steps [default: 10]
    #[arg(long)]
    pub frame_every: Option<usize>,
    /// RDF range in Å [default: 6]
    #[arg(long)]
    pub rdf_max: Option<f64>,
    /// [default: 60]
    #[arg(long)]
    pub rdf_bins: Option<usize>,
    /// Moving-average window for the temperature series [default: 100]
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Serialize)]
struct TemperatureRow {
    step: usize,
    time: f64,
    temperature: f64,
    moving_average: f64,
}

#[derive(Serialize)]
struct RdfRow {
    r: f64,
    g: f64,
    count: u64,
}

#[derive(Serialize)]
struct Summary {
    steps: usize,
    frames: usize,
    mean_temperature: f64,
    rdf_peak: f64,
    rdf_bin_width: f64,
    max_pair_distance: f64,
}

pub fn execute(args: &MdArgs, settings: &mut Settings, run: &mut Run) -> Result<()> {
    let checkpoint = settings.get_opt("checkpoint", args.checkpoint.as_ref().map(|p| p.display().to_string()))?;
    let pot = settings.get_opt("potential", args.potential.clone())?;
    let morse_depth = settings.get("morse_depth", args.morse_depth, 1.0)?;
    let system = settings.get_opt("system", args.system.clone())?;
    let d = MdConfig::default();
    let cfg = MdConfig {
        steps: settings.get("steps", args.steps, d.steps)?,
        dt: settings.get("dt", args.dt, d.dt)?,
        friction: settings.get("friction", args.friction, d.friction)?,
        temperature: settings.get("temp", args.temp, d.temperature)?,
        seed: settings.get("seed", args.seed, d.seed)?,
        frame_every: settings.get("frame_every", args.frame_every, d.frame_every)?,
    };
    let rdf_max = settings.get("rdf_max", args.rdf_max, 6.0)?;
    let rdf_bins = settings.get("rdf_bins", args.rdf_bins, 60usize)?;
    let window = settings.get("window", args.window, 100usize)?;
    settings.check_unused()?;

    let Some(system) = system else { bail!("--system is required") };
    let frame = load_system(&system)?;
    let masses = frame.masses()?;
    let model;
    let analytic;
    let provider: &dyn ForceProvider = match (&checkpoint, &pot) {
        (Some(path), None) => {
            model = load_model(path.as_ref())?;
            &ModelForces { model: &model, species: frame.species.clone() }
        }
        (None, Some(spec)) => {
            let Some(kind) = synth_kind(spec)? else { bail!("--potential must be synth:morse or synth:trimer") };
            analytic = potential(kind, morse_depth);
            if analytic.species() != frame.species {
                bail!("system species {:?} do not match the {kind} potential", frame.species);
            }
            &analytic
        }
        _ => bail!("give exactly one of --checkpoint and --potential"),
    };

    let traj = match simulate(&frame.positions, &masses, provider, &cfg) {
        Ok(t) => t,
        Err(Error::SimulationAbort { step, message, positions }) => {
            let mut bad = AtomicConfiguration::new(frame.species.clone(), positions.iter().map(|p| Vector3::from(*p)).collect());
            bad.info.push(("step".into(), step.to_string()));
            run.write("abort.extxyz", write_extxyz(&[bad])?)?;
            bail!("simulation aborted at step {step}: {message}; frame written to abort.extxyz");
        }
        Err(e) => return Err(e.into()),
    };

    let frames: Vec<AtomicConfiguration> = traj
        .frames
        .iter()
        .map(|f| {
            let mut c = AtomicConfiguration::new(frame.species.clone(), f.positions.clone());
            c.energy = Some(f.energy);
            c.forces = Some(f.forces.clone());
            c.info = vec![
                ("step".into(), f.step.to_string()),
                ("time".into(), format!("{:?}", f.time)),
                ("temperature".into(), format!("{:?}", f.temperature)),
            ];
            c
        })
        .collect();
    run.write("trajectory.extxyz", write_extxyz(&frames)?)?;
    run.write("force_stats.jsonl", jsonl(&traj.force_stats)?)?;

    let smooth = moving_average(&traj.temperatures, window)?;
    let rows: Vec<TemperatureRow> = traj
        .temperatures
        .iter()
        .zip(&smooth)
        .enumerate()
        .map(|(step, (&temperature, &moving_average))| TemperatureRow {
            step,
            time: step as f64 * cfg.dt,
            temperature,
            moving_average,
        })
        .collect();
    run.write("temperature.csv", csv_table(&rows)?)?;

    let g = rdf(&traj.positions(), rdf_max, rdf_bins)?;
    let rows: Vec<RdfRow> = (0..rdf_bins)
        .map(|b| RdfRow { r: g.centers[b], g: g.g[b], count: g.counts[b] })
        .collect();
    run.write("rdf.csv", csv_table(&rows)?)?;

    let max_pair_distance = traj
        .frames
        .iter()
        .flat_map(|f| {
            let x = &f.positions;
            (0..x.len()).flat_map(move |i| (0..i).map(move |j| (x[i] - x[j]).norm()))
        })
        .fold(0.0, f64::max);
    let summary = Summary {
        steps: cfg.steps,
        frames: traj.frames.len(),
        mean_temperature: traj.mean_temperature(1),
        rdf_peak: g.peak(),
        rdf_bin_width: g.width,
        max_pair_distance,
    };
    run.write("summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{} steps, mean temperature {:.1} K, RDF peak {:.2} Å, largest pair distance {:.2} Å",
        summary.steps, summary.mean_temperature, summary.rdf_peak, summary.max_pair_distance
    );
    Ok(())
}
