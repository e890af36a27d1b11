use anyhow::{bail, Result};
use clap::Args;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use std::collections::HashMap;
use std::path::PathBuf;

use s2gate::backbone::{GatingMode, ModelState, Prediction};
use s2gate::geometry::RigidMotion;

use crate::inputs::{load_model, load_system, parse_grids, random_model};
use crate::run::{csv_table, Run};
use crate::settings::Settings;

/// Largest energy change (kcal/mol) the ungated model may show.
pub const ENERGY_TOLERANCE: f64 = 1e-10;
/// Largest force component deviation (kcal/mol/Å) the ungated model may show.
pub const FORCE_TOLERANCE: f64 = 1e-9;

#[derive(Args, Debug)]
pub struct EquivarianceArgs {
    /// Trained model
    #[arg(long, conflicts_with = "random_model")]
    pub checkpoint: Option<PathBuf>,
    /// Use an untrained model with random gate weights instead
    #[arg(long)]
    pub random_model: bool,
    /// Extended-XYZ file (first frame) or synth:morse / synth:trimer
    #[arg(long)]
    pub system: Option<String>,
    /// Random rigid motions per grid [default: 20]
    #[arg(long)]
    pub rotations: Option<usize>,
    /// Comma-separated attention grids, e.g. 4x8,8x16 [default: the model's]
    #[arg(long)]
    pub grids: Option<String>,
    /// Only translate, never rotate
    #[arg(long)]
    pub translations_only: bool,
    /// Translation components are uniform in ±this (Å) [default: 5]
    #[arg(long)]
    pub max_shift: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Row {
    model: String,
    grid: String,
    quantity: String,
    median: f64,
    max: f64,
}

/// Largest gate change between edges present in both predictions.
fn gate_deviation(a: &Prediction, b: &Prediction) -> f64 {
    let mut worst: f64 = 0.0;
    for (ga, gb) in a.gates.iter().zip(&b.gates) {
        if let (Some(ga), Some(gb)) = (ga, gb) {
            let index: HashMap<(usize, usize), f64> = b.edges.iter().copied().zip(gb.iter().copied()).collect();
            for (edge, x) in a.edges.iter().zip(ga) {
                if let Some(y) = index.get(edge) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    worst
}

fn median_max(mut v: Vec<f64>) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    (median, v[n - 1])
}

/// Median and maximum deviations of energy, forces and gates.
fn deviations(
    model: &ModelState,
    species: &[u32],
    x: &[nalgebra::Vector3<f64>],
    motions: &[RigidMotion],
) -> Result<[(f64, f64); 3]> {
    let p0 = model.predict(species, x)?;
    let (mut de, mut df, mut da) = (Vec::new(), Vec::new(), Vec::new());
    for m in motions {
        let p1 = model.predict(species, &m.apply(x))?;
        de.push((p1.energy - p0.energy).abs());
        df.push(
            p0.forces
                .iter()
                .zip(&p1.forces)
                .map(|(f0, f1)| (f1 - m.rotation * f0).amax())
                .fold(0.0, f64::max),
        );
        da.push(gate_deviation(&p0, &p1));
    }
    Ok([median_max(de), median_max(df), median_max(da)])
}

pub fn execute(args: &EquivarianceArgs, settings: &mut Settings, run: &mut Run) -> Result<()> {
    let checkpoint = settings.get_opt("checkpoint", args.checkpoint.as_ref().map(|p| p.display().to_string()))?;
    let random = settings.get("random_model", args.random_model.then_some(true), false)?;
    let system = settings.get_opt("system", args.system.clone())?;
    let rotations = settings.get("rotations", args.rotations, 20usize)?;
    let grids = settings.get_opt("grids", args.grids.clone())?;
    let translations_only = settings.get("translations_only", args.translations_only.then_some(true), false)?;
    let max_shift = settings.get("max_shift", args.max_shift, 5.0)?;
    let seed = settings.get("seed", args.seed, 0u64)?;
    settings.check_unused()?;

    let Some(system) = system else { bail!("--system is required") };
    let frame = load_system(&system)?;
    let model = match (checkpoint, random) {
        (Some(path), false) => load_model(path.as_ref())?,
        (None, true) => random_model(&frame.species, None, seed)?,
        _ => bail!("give exactly one of --checkpoint and --random-model"),
    };
    let grids = match grids {
        Some(g) => parse_grids(&g)?,
        None => vec![(model.config.attention.n_theta, model.config.attention.n_phi)],
    };
    let mut rng = StdRng::seed_from_u64(seed);
    let motions: Vec<RigidMotion> = (0..rotations)
        .map(|_| {
            if translations_only {
                RigidMotion::translation(nalgebra::Vector3::from_fn(|_, _| rng.gen_range(-max_shift..=max_shift)))
            } else {
                RigidMotion::random(&mut rng, max_shift)
            }
        })
        .collect();

    let mut rows = Vec::new();
    let names = ["energy", "forces", "alpha"];
    let ungated = model.with_gating(GatingMode::Off);
    let exact = deviations(&ungated, &frame.species, &frame.positions, &motions)?;
    for (q, (median, max)) in names.iter().zip(exact).take(2) {
        rows.push(Row { model: "ungated".into(), grid: "-".into(), quantity: q.to_string(), median, max });
    }
    for (t, p) in grids {
        let own = (model.config.attention.n_theta, model.config.attention.n_phi) == (t, p);
        let gated = if own {
            model.with_gating(GatingMode::On)
        } else {
            model.with_grid(t, p, &mut StdRng::seed_from_u64(seed))?.with_gating(GatingMode::On)
        };
        let devs = deviations(&gated, &frame.species, &frame.positions, &motions)?;
        for (q, (median, max)) in names.iter().zip(devs) {
            rows.push(Row { model: "gated".into(), grid: format!("{t}x{p}"), quantity: q.to_string(), median, max });
        }
    }
    run.write("equivariance.csv", csv_table(&rows)?)?;
    for r in &rows {
        println!("{:8} {:6} {:7} median {:.3e} max {:.3e}", r.model, r.grid, r.quantity, r.median, r.max);
    }
    let (e_max, f_max) = (exact[0].1, exact[1].1);
    if !(e_max < ENERGY_TOLERANCE && f_max < FORCE_TOLERANCE) {
        bail!("ungated model is not equivariant: energy deviation {e_max:e}, force deviation {f_max:e}");
    }
    Ok(())
}
