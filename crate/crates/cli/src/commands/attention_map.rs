use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use nalgebra::Vector3;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use s2gate::backbone::{GatingMode, ModelState};

use crate::inputs::{load_model, load_system, parse_grid, parse_vec3, random_model};
use crate::run::{csv_dynamic, Run};
use crate::settings::Settings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Move one atom along a straight line
    Radial,
    /// Sweep one atom over a hemisphere around another
    Angular,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Radial => "radial",
            Mode::Angular => "angular",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Mode as ValueEnum>::from_str(s, true)
    }
}

#[derive(Args, Debug)]
pub struct AttentionMapArgs {
    #[arg(long, conflicts_with = "random_model")]
    pub checkpoint: Option<PathBuf>,
    /// Untrained model with random gate weights
    #[arg(long)]
    pub random_model: bool,
    /// Extended-XYZ file (first frame) or synth:morse / synth:trimer
    #[arg(long)]
    pub system: Option<String>,
    /// [default: radial]
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Layer whose gates are recorded, from 0 [default: 0]
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,

    /// Radial mode: atom that moves
    #[arg(long)]
    pub atom: Option<usize>,
    /// Radial mode: start position x,y,z in Å
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<String>,
    /// Radial mode: end position x,y,z in Å
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<String>,
    /// Radial mode: positions along the line, both ends included [default: 100]
    #[arg(long)]
    pub steps: Option<usize>,

    /// Angular mode: atom at the centre of the sweep
    #[arg(long)]
    pub center: Option<usize>,
    /// Angular mode: atom placed on the hemisphere
    #[arg(long)]
    pub probe: Option<usize>,
    /// Angular mode: Å [default: 1]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Angular mode: polar x azimuthal samples [default: 9x36]
    #[arg(long)]
    pub grid: Option<String>,
}

/// Gate and pooled attention of edge `(i, j)` in `layer`, if the edge exists.
fn gate_of(
    model: &ModelState,
    species: &[u32],
    x: &[Vector3<f64>],
    layer: usize,
    i: usize,
    j: usize,
) -> Result<Option<(f64, Vec<f64>)>> {
    let p = model.predict(species, x)?;
    let Some(k) = p.edges.iter().position(|&e| e == (i, j)) else { return Ok(None) };
    let alpha = p.gates[layer].as_ref().map(|g| g[k]).unwrap_or(1.0);
    let pooled = match &p.pooled[layer] {
        Some(t) => (0..t.cols()).map(|c| t.get(k, c)).collect(),
        None => Vec::new(),
    };
    Ok(Some((alpha, pooled)))
}

fn gate_cells(width: usize, gate: Option<(f64, Vec<f64>)>) -> Vec<String> {
    match gate {
        Some((alpha, pooled)) => std::iter::once(format!("{alpha:?}"))
            .chain(pooled.iter().map(|v| format!("{v:?}")))
            .collect(),
        None => vec![String::new(); width + 1],
    }
}

fn vec_cells(v: &Vector3<f64>) -> [String; 3] {
    [format!("{:?}", v.x), format!("{:?}", v.y), format!("{:?}", v.z)]
}

pub fn execute(args: &AttentionMapArgs, settings: &mut Settings, run: &mut Run) -> Result<()> {
    let checkpoint = settings.get_opt("checkpoint", args.checkpoint.as_ref().map(|p| p.display().to_string()))?;
    let random = settings.get("random_model", args.random_model.then_some(true), false)?;
    let system = settings.get_opt("system", args.system.clone())?;
    let mode = settings.get("mode", args.mode, Mode::Radial)?;
    let layer = settings.get("layer", args.layer, 0usize)?;
    let seed = settings.get("seed", args.seed, 0u64)?;
    let Some(system) = system else { bail!("--system is required") };
    let frame = load_system(&system)?;
    let model = match (checkpoint, random) {
        (Some(path), false) => load_model(path.as_ref())?,
        (None, true) => random_model(&frame.species, None, seed)?,
        _ => bail!("give exactly one of --checkpoint and --random-model"),
    };
    let model = model.with_gating(GatingMode::On);
    if layer >= model.config.layers {
        bail!("layer {layer} does not exist; the model has {}", model.config.layers);
    }
    let width = model.config.attention.width;
    let n = frame.len();
    let check_atom = |name: &str, a: usize| {
        if a >= n {
            bail!("--{name} {a} is out of range for {n} atoms");
        }
        Ok(a)
    };
    let pooled_header = (0..width).map(|c| format!("pooled_{c}"));

    match mode {
        Mode::Radial => {
            let atom = settings.get_opt("atom", args.atom)?;
            let from = settings.get_opt("from", args.from.clone())?;
            let to = settings.get_opt("to", args.to.clone())?;
            let steps = settings.get("steps", args.steps, 100usize)?;
            settings.check_unused()?;
            let (Some(atom), Some(from), Some(to)) = (atom, from, to) else {
                bail!("radial mode needs --atom, --from and --to");
            };
            let atom = check_atom("atom", atom)?;
            let (p0, p1) = (parse_vec3(&from)?, parse_vec3(&to)?);
            if steps == 0 {
                bail!("--steps must be positive");
            }
            let header: Vec<String> = ["step", "t", "x", "y", "z", "neighbor", "distance", "alpha"]
                .iter()
                .map(|s| s.to_string())
                .chain(pooled_header)
                .collect();
            let mut rows = Vec::new();
            for s in 0..steps {
                let t = if steps == 1 { 0.0 } else { s as f64 / (steps - 1) as f64 };
                let mut x = frame.positions.clone();
                x[atom] = p0 + t * (p1 - p0);
                let p = model.predict(&frame.species, &x)?;
                for j in (0..n).filter(|&j| j != atom) {
                    let gate = p.edges.iter().position(|&e| e == (atom, j)).map(|k| {
                        let alpha = p.gates[layer].as_ref().map(|g| g[k]).unwrap_or(1.0);
                        let pooled = p.pooled[layer]
                            .as_ref()
                            .map(|m| (0..m.cols()).map(|c| m.get(k, c)).collect())
                            .unwrap_or_default();
                        (alpha, pooled)
                    });
                    let mut row = vec![s.to_string(), format!("{t:?}")];
                    row.extend(vec_cells(&x[atom]));
                    row.push(j.to_string());
                    row.push(format!("{:?}", (x[j] - x[atom]).norm()));
                    row.extend(gate_cells(width, gate));
                    rows.push(row);
                }
            }
            run.write("attention_radial.csv", csv_dynamic(&header, &rows)?)?;
            println!("{steps} positions x {} neighbours written", n - 1);
        }
        Mode::Angular => {
            let center = settings.get_opt("center", args.center)?;
            let probe = settings.get_opt("probe", args.probe)?;
            let radius = settings.get("radius", args.radius, 1.0)?;
            let grid = settings.get("grid", args.grid.clone(), "9x36".to_string())?;
            settings.check_unused()?;
            let (Some(center), Some(probe)) = (center, probe) else {
                bail!("angular mode needs --center and --probe");
            };
            let (center, probe) = (check_atom("center", center)?, check_atom("probe", probe)?);
            if center == probe {
                bail!("--center and --probe must differ");
            }
            if !(radius > 0.0) {
                bail!("--radius must be positive");
            }
            let (m, k) = parse_grid(&grid)?;
            let header: Vec<String> = ["theta", "phi", "x", "y", "z", "alpha"]
                .iter()
                .map(|s| s.to_string())
                .chain(pooled_header)
                .collect();
            let mut rows = Vec::new();
            for a in 0..m {
                // polar angles cover the upper hemisphere, midpoint rule
                let theta = (a as f64 + 0.5) / m as f64 * PI / 2.0;
                for b in 0..k {
                    let phi = 2.0 * PI * b as f64 / k as f64;
                    let dir = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                    let mut x = frame.positions.clone();
                    x[probe] = x[center] + radius * dir;
                    let gate = gate_of(&model, &frame.species, &x, layer, center, probe)?;
                    let mut row = vec![format!("{theta:?}"), format!("{phi:?}")];
                    row.extend(vec_cells(&x[probe]));
                    row.extend(gate_cells(width, gate));
                    rows.push(row);
                }
            }
            run.write("attention_angular.csv", csv_dynamic(&header, &rows)?)?;
            println!("{} directions written", m * k);
        }
    }
    Ok(())
}
