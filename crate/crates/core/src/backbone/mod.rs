//! Equivariant message-passing force field with per-edge attention gates.
//!
//! Node features are real spherical-harmonic blocks `h^(ℓ)`, `ℓ ≤ l_max`,
//! each `(2ℓ+1) × C`, initialised from a species embedding in `ℓ = 0`.
//! Each layer sends, along every edge `(i, j)`,
//!
//! `m̃_ij^(J,m) = (B(r_ij) W_J ⊙ h_j^(0)) Y_Jm(r̂_ij)`
//!
//! with `B` the enveloped Bessel basis. Messages are scaled by the gate
//! `α_ij` when gating is on, summed over neighbours in ascending edge order,
//! mixed over channels per order and added to the residual. The rotation
//! invariants `Σ_m (m_i^(J,m))²` of the aggregated messages, mixed over
//! channels, are added to the scalar block, which gives the model angular
//! resolution. Per-atom energies are a linear readout of the change in the
//! scalar block plus a per-species reference energy.

mod checkpoint;
pub(crate) mod model;
pub mod radial;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION, FORCE_LOSS_GRADIENT};
pub use model::{
    aggregate_update, edge_messages, positions_tensor, EdgeGeometry, ForwardVars, LayerVars, ParamVars, Prediction,
};
pub use radial::{envelope, radial_basis};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionConfig, AttentionParams, PROJECTION_NAMES};
use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatingMode {
    /// Ungated messages; attention is not evaluated.
    Off,
    /// Messages scaled by the attention gate.
    #[default]
    On,
    /// Messages scaled by a gate fixed to exactly one.
    ForcedOpen,
}

impl fmt::Display for GatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatingMode::Off => "off",
            GatingMode::On => "on",
            GatingMode::ForcedOpen => "forced-open",
        })
    }
}

impl FromStr for GatingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" => Ok(Self::Off),
            "on" => Ok(Self::On),
            "forced-open" => Ok(Self::ForcedOpen),
            other => Err(invalid(format!("unknown gating mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Atomic numbers the model knows, in embedding-row order.
    pub species: Vec<u32>,
    pub l_max: usize,
    pub layers: usize,
    /// Å
    pub cutoff: f64,
    pub channels: usize,
    pub n_bessel: usize,
    pub envelope_p: u32,
    pub gating: GatingMode,
    pub attention: AttentionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            species: vec![1],
            l_max: 2,
            layers: 2,
            cutoff: 5.0,
            channels: 32,
            n_bessel: 8,
            envelope_p: 6,
            gating: GatingMode::On,
            attention: AttentionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.species.is_empty() {
            return Err(invalid("the species list is empty"));
        }
        let mut sorted = self.species.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.species.len() {
            return Err(invalid("the species list has duplicates"));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(invalid(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        if self.channels == 0 || self.n_bessel == 0 || self.envelope_p == 0 {
            return Err(invalid("channels, n_bessel and envelope_p must be positive"));
        }
        self.attention.validate()
    }

    /// Row of each atom's species in the embedding table.
    pub fn species_index(&self, species: &[u32]) -> Result<Vec<usize>> {
        species
            .iter()
            .map(|z| {
                self.species
                    .iter()
                    .position(|s| s == z)
                    .ok_or_else(|| invalid(format!("species {z} is not known to the model")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `n_bessel × C` per order `J = 0..=l_max`
    pub radial: Vec<Tensor>,
    /// `C × C` per order
    pub mix: Vec<Tensor>,
    /// `C × C` per order `J = 1..=l_max`, index `J − 1`
    pub contract: Vec<Tensor>,
    pub attention: AttentionParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `n_species × C`
    pub embedding: Tensor,
    pub layers: Vec<LayerParams>,
    /// `C × 1`
    pub readout: Tensor,
    /// `n_species × 1`, kcal/mol
    pub ref_energy: Tensor,
}

impl ModelParams {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config.channels;
        let ns = config.species.len();
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                radial: (0..=config.l_max).map(|_| Tensor::zeros(config.n_bessel, c)).collect(),
                mix: (0..=config.l_max).map(|_| Tensor::zeros(c, c)).collect(),
                contract: (1..=config.l_max).map(|_| Tensor::zeros(c, c)).collect(),
                attention: AttentionParams::zeros(&config.attention, c),
            })
            .collect();
        Self {
            embedding: Tensor::zeros(ns, c),
            layers,
            readout: Tensor::zeros(c, 1),
            ref_energy: Tensor::zeros(ns, 1),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (t, layer) in self.layers.iter().enumerate() {
            for (j, w) in layer.radial.iter().enumerate() {
                out.push((format!("layer{t}.radial{j}"), w));
            }
            for (j, w) in layer.mix.iter().enumerate() {
                out.push((format!("layer{t}.mix{j}"), w));
            }
            for (j, w) in layer.contract.iter().enumerate() {
                out.push((format!("layer{t}.contract{}", j + 1), w));
            }
            for (name, w) in layer.attention.named() {
                out.push((format!("layer{t}.attention.{name}"), w));
            }
        }
        out.push(("readout".to_string(), &self.readout));
        out.push(("ref_energy".to_string(), &self.ref_energy));
        out
    }

    /// Same order as [`ModelParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (t, layer) in self.layers.iter_mut().enumerate() {
            for (j, w) in layer.radial.iter_mut().enumerate() {
                out.push((format!("layer{t}.radial{j}"), w));
            }
            for (j, w) in layer.mix.iter_mut().enumerate() {
                out.push((format!("layer{t}.mix{j}"), w));
            }
            for (j, w) in layer.contract.iter_mut().enumerate() {
                out.push((format!("layer{t}.contract{}", j + 1), w));
            }
            for (name, w) in layer.attention.named_mut() {
                out.push((format!("layer{t}.attention.{name}"), w));
            }
        }
        out.push(("readout".to_string(), &mut self.readout));
        out.push(("ref_energy".to_string(), &mut self.ref_energy));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

/// Whether a parameter name refers to one of the six attention projections.
pub fn is_projection(name: &str) -> bool {
    name.rsplit_once(".attention.")
        .is_some_and(|(_, leaf)| PROJECTION_NAMES.contains(&leaf))
}

/// Configuration plus all learnable parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl ModelState {
    /// Fresh model: uniform `±1/√fan_in` weights, unit-normal embeddings,
    /// zero reference energies and neutral gates.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::zeros(&config);
        let fill_uniform = |t: &mut Tensor, fan_in: usize, rng: &mut R| {
            let b = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-b, b);
            for x in t.data_mut() {
                *x = dist.sample(rng);
            }
        };
        let c = config.channels;
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        for x in params.embedding.data_mut() {
            *x = normal.sample(rng);
        }
        for layer in &mut params.layers {
            for w in &mut layer.radial {
                fill_uniform(w, config.n_bessel, rng);
            }
            for w in layer.mix.iter_mut().chain(layer.contract.iter_mut()) {
                fill_uniform(w, c, rng);
            }
            layer.attention = AttentionParams::init(&config.attention, c, rng);
        }
        fill_uniform(&mut params.readout, c, rng);
        Ok(Self { config, params })
    }

    /// Sets every reference energy to `energy_per_atom`.
    pub fn set_reference_energy(&mut self, energy_per_atom: f64) {
        for x in self.params.ref_energy.data_mut() {
            *x = energy_per_atom;
        }
    }

    /// Same model on a different attention grid. Positional embeddings are
    /// redrawn for the new grid size; everything else is kept.
    pub fn with_grid<R: Rng + ?Sized>(&self, n_theta: usize, n_phi: usize, rng: &mut R) -> Result<Self> {
        let mut out = self.clone();
        out.config.attention.n_theta = n_theta;
        out.config.attention.n_phi = n_phi;
        out.config.validate()?;
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        for layer in &mut out.params.layers {
            layer.attention.positional = Tensor::from_fn(n_theta * n_phi, out.config.attention.width, |_, _| {
                normal.sample(rng)
            });
        }
        Ok(out)
    }

    pub fn with_gating(&self, gating: GatingMode) -> Self {
        let mut out = self.clone();
        out.config.gating = gating;
        out
    }

    /// Checks parameter shapes against the configuration.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        let cfg = &self.config;
        let (c, ns) = (cfg.channels, cfg.species.len());
        let want = |name: &str, t: &Tensor, shape: (usize, usize)| {
            if t.shape() != shape {
                Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            } else if !t.is_finite() {
                Err(Error::Checkpoint(format!("parameter {name} is not finite")))
            } else {
                Ok(())
            }
        };
        let p = &self.params;
        want("embedding", &p.embedding, (ns, c))?;
        want("readout", &p.readout, (c, 1))?;
        want("ref_energy", &p.ref_energy, (ns, 1))?;
        if p.layers.len() != cfg.layers {
            return Err(Error::Checkpoint(format!(
                "{} layers stored, configuration has {}",
                p.layers.len(),
                cfg.layers
            )));
        }
        for layer in &p.layers {
            if layer.radial.len() != cfg.l_max + 1
                || layer.mix.len() != cfg.l_max + 1
                || layer.contract.len() != cfg.l_max
            {
                return Err(Error::Checkpoint("per-order weight count does not match l_max".into()));
            }
            for w in &layer.radial {
                want("radial", w, (cfg.n_bessel, c))?;
            }
            for w in layer.mix.iter().chain(&layer.contract) {
                want("mix", w, (c, c))?;
            }
            layer
                .attention
                .check(&cfg.attention, c)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}
