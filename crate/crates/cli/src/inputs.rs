//! Loading systems, datasets and models from command-line specifications.

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::path::Path;

use s2gate::autodiff::Tensor;
use s2gate::backbone::{ModelConfig, ModelState};
use s2gate::structure::AtomicConfiguration;
use s2gate::training::{parse_extxyz, synth_dataset_with, Dataset, SynthKind, SynthPotential};

/// `synth:morse` or `synth:trimer`, if `spec` names a synthetic potential.
pub fn synth_kind(spec: &str) -> Result<Option<SynthKind>> {
    match spec.strip_prefix("synth:") {
        Some(kind) => Ok(Some(kind.parse()?)),
        None => Ok(None),
    }
}

pub fn potential(kind: SynthKind, morse_depth: f64) -> SynthPotential {
    let mut pot = SynthPotential::new(kind);
    pot.morse.depth = morse_depth;
    pot
}

/// First frame of an extended-XYZ file, or the equilibrium geometry of a
/// synthetic potential.
pub fn load_system(spec: &str) -> Result<AtomicConfiguration> {
    if let Some(kind) = synth_kind(spec)? {
        let pot = SynthPotential::new(kind);
        return Ok(AtomicConfiguration::new(pot.species(), pot.equilibrium()));
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading system {spec}"))?;
    let mut frames = parse_extxyz(&text).with_context(|| format!("in {spec}"))?;
    if frames.is_empty() {
        bail!("{spec} contains no frames");
    }
    Ok(frames.swap_remove(0))
}

pub struct DataSpec {
    pub n: usize,
    pub noise_t: f64,
    pub morse_depth: f64,
    pub seed: u64,
}

/// Labelled frames from a file or a synthetic potential.
pub fn load_dataset(spec: &str, opts: &DataSpec) -> Result<Dataset> {
    match synth_kind(spec)? {
        Some(kind) => Ok(synth_dataset_with(
            &potential(kind, opts.morse_depth),
            opts.n,
            opts.seed,
            opts.noise_t,
        )?),
        None => Dataset::load(Path::new(spec), opts.seed).with_context(|| format!("loading {spec}")),
    }
}

/// Untrained model for `species` whose gates vary between edges: gate
/// weights uniform in ±2 instead of the neutral zero start.
pub fn random_model(species: &[u32], grid: Option<(usize, usize)>, seed: u64) -> Result<ModelState> {
    let mut species = species.to_vec();
    species.sort_unstable();
    species.dedup();
    let mut config = ModelConfig {
        species,
        ..ModelConfig::default()
    };
    if let Some((t, p)) = grid {
        config.attention.n_theta = t;
        config.attention.n_phi = p;
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut m = ModelState::init(config, &mut rng)?;
    let width = m.config.attention.width;
    for layer in &mut m.params.layers {
        layer.attention.gate_weight = Tensor::from_fn(1, width, |_, _| rng.gen_range(-2.0..2.0));
        layer.attention.gate_bias = Tensor::scalar(rng.gen_range(-0.5..0.5));
    }
    Ok(m)
}

pub fn load_model(checkpoint: &Path) -> Result<ModelState> {
    ModelState::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))
}

/// `x,y,z`
pub fn parse_vec3(text: &str) -> Result<Vector3<f64>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("expected x,y,z, got {text:?}");
    }
    let mut v = Vector3::zeros();
    for (c, p) in parts.iter().enumerate() {
        v[c] = p.parse().map_err(|_| anyhow!("bad coordinate {p:?} in {text:?}"))?;
    }
    Ok(v)
}

/// `MxN`, e.g. `8x16`.
pub fn parse_grid(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .trim()
        .split_once(['x', 'X', '×'])
        .ok_or_else(|| anyhow!("expected a grid like 8x16, got {text:?}"))?;
    let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
    if a == 0 || b == 0 {
        bail!("grid counts must be positive, got {text:?}");
    }
    Ok((a, b))
}

pub fn parse_grids(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',').map(parse_grid).collect()
}
