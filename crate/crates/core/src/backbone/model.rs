use nalgebra::Vector3;

use super::radial::radial_basis_on_tape;
use super::{GatingMode, LayerParams, ModelParams, ModelState};
use crate::attention::{edge_gates_on_tape, AttentionVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::field::MIN_DISTANCE;
use crate::geometry::{neighbor_list, sh_index, sh_polynomials, NeighborList, SphericalGrid};

/// Layer parameters on a tape.
pub struct LayerVars<'t> {
    pub radial: Vec<Var<'t>>,
    pub mix: Vec<Var<'t>>,
    pub contract: Vec<Var<'t>>,
    pub attention: AttentionVars<'t>,
}

/// Model parameters on a tape.
pub struct ParamVars<'t> {
    pub embedding: Var<'t>,
    pub layers: Vec<LayerVars<'t>>,
    pub readout: Var<'t>,
    pub ref_energy: Var<'t>,
}

impl<'t> ParamVars<'t> {
    /// Leaves where `track(name)` holds, constants elsewhere. Names follow
    /// [`ModelParams::named`].
    pub fn place(tape: &'t Tape, params: &ModelParams, track: impl Fn(&str) -> bool) -> Self {
        let put = |name: &str, t: &Tensor| {
            if track(name) {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = params
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer): (usize, &LayerParams)| LayerVars {
                radial: layer
                    .radial
                    .iter()
                    .enumerate()
                    .map(|(j, w)| put(&format!("layer{l}.radial{j}"), w))
                    .collect(),
                mix: layer
                    .mix
                    .iter()
                    .enumerate()
                    .map(|(j, w)| put(&format!("layer{l}.mix{j}"), w))
                    .collect(),
                contract: layer
                    .contract
                    .iter()
                    .enumerate()
                    .map(|(j, w)| put(&format!("layer{l}.contract{}", j + 1), w))
                    .collect(),
                attention: AttentionVars::place(tape, &layer.attention, |n| {
                    track(&format!("layer{l}.attention.{n}"))
                }),
            })
            .collect();
        Self {
            embedding: put("embedding", &params.embedding),
            layers,
            readout: put("readout", &params.readout),
            ref_energy: put("ref_energy", &params.ref_energy),
        }
    }

    pub fn constants(tape: &'t Tape, params: &ModelParams) -> Self {
        Self::place(tape, params, |_| false)
    }

    /// `(name, var)` in [`ModelParams::named`] order.
    pub fn named(&self) -> Vec<(String, Var<'t>)> {
        let mut out = vec![("embedding".to_string(), self.embedding)];
        for (t, layer) in self.layers.iter().enumerate() {
            for (j, w) in layer.radial.iter().enumerate() {
                out.push((format!("layer{t}.radial{j}"), *w));
            }
            for (j, w) in layer.mix.iter().enumerate() {
                out.push((format!("layer{t}.mix{j}"), *w));
            }
            for (j, w) in layer.contract.iter().enumerate() {
                out.push((format!("layer{t}.contract{}", j + 1), *w));
            }
            for (name, w) in layer.attention.named() {
                out.push((format!("layer{t}.attention.{name}"), w));
            }
        }
        out.push(("readout".to_string(), self.readout));
        out.push(("ref_energy".to_string(), self.ref_energy));
        out
    }
}

/// Per-edge geometry on the tape.
pub struct EdgeGeometry<'t> {
    pub receivers: Vec<usize>,
    pub senders: Vec<usize>,
    /// `E × 3`, `x_j − x_i`
    pub rel: Var<'t>,
    /// `E × 1`
    pub dist: Var<'t>,
    /// `E × n_bessel`
    pub radial: Var<'t>,
    /// `E × 1` per `(J, m)`, flat harmonic index
    pub harmonics: Vec<Var<'t>>,
}

impl<'t> EdgeGeometry<'t> {
    pub fn new(
        positions: Var<'t>,
        nl: &NeighborList,
        cutoff: f64,
        n_bessel: usize,
        envelope_p: u32,
        l_max: usize,
    ) -> Result<Self> {
        let receivers = nl.receivers();
        let senders = nl.senders();
        let rel = positions.gather_rows(&senders) - positions.gather_rows(&receivers);
        let dist = rel.norm_rows();
        if let Some(e) = dist.value().data().iter().position(|&d| !(d > MIN_DISTANCE)) {
            return Err(Error::DegenerateGeometry(format!(
                "atoms {} and {} coincide",
                receivers[e], senders[e]
            )));
        }
        let radial = radial_basis_on_tape(dist, cutoff, n_bessel, envelope_p);
        let unit = rel / dist.broadcast_cols(3);
        let (x, y, z) = (unit.slice_cols(0, 1), unit.slice_cols(1, 2), unit.slice_cols(2, 3));
        let harmonics = sh_polynomials(l_max, &x, &y, &z);
        Ok(Self {
            receivers,
            senders,
            rel,
            dist,
            radial,
            harmonics,
        })
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }
}

/// Messages `α_e (B_e W_J ⊙ s_{j(e)}) Y_Jm(r̂_e)` for every edge, one `E × C`
/// table per flat harmonic index. `scalars` is the `n × C` sender table and
/// `gate` an optional `E × 1` column.
pub fn edge_messages<'t>(
    geo: &EdgeGeometry<'t>,
    scalars: Var<'t>,
    radial_weights: &[Var<'t>],
    gate: Option<Var<'t>>,
) -> Vec<Var<'t>> {
    let c = scalars.shape().1;
    let s = scalars.gather_rows(&geo.senders);
    let gate = gate.map(|g| g.broadcast_cols(c));
    let mut out = Vec::with_capacity(geo.harmonics.len());
    for (j, w) in radial_weights.iter().enumerate() {
        let base = geo.radial.matmul(*w) * s;
        let base = match gate {
            Some(g) => base * g,
            None => base,
        };
        for m in -(j as i64)..=(j as i64) {
            out.push(base * geo.harmonics[sh_index(j, m)].broadcast_cols(c));
        }
    }
    out
}

/// Sums messages into receivers (ascending edge order), mixes channels per
/// order, adds the residual, and adds the mixed order invariants of the
/// aggregate to the scalar block.
pub fn aggregate_update<'t>(
    features: &[Var<'t>],
    messages: &[Var<'t>],
    receivers: &[usize],
    mix: &[Var<'t>],
    contract: &[Var<'t>],
) -> Vec<Var<'t>> {
    let n = features[0].shape().0;
    let l_max = mix.len() - 1;
    let agg: Vec<Var<'t>> = messages
        .iter()
        .map(|m| m.scatter_add_rows(receivers, n))
        .collect();
    let mut out: Vec<Var<'t>> = features
        .iter()
        .zip(&agg)
        .enumerate()
        .map(|(idx, (h, a))| {
            let j = (idx as f64).sqrt() as usize;
            *h + a.matmul(mix[j])
        })
        .collect();
    for j in 1..=l_max {
        let mut sq: Option<Var<'t>> = None;
        for m in -(j as i64)..=(j as i64) {
            let a = agg[sh_index(j, m)].square();
            sq = Some(match sq {
                None => a,
                Some(s) => s + a,
            });
        }
        out[0] = out[0] + sq.expect("non-empty order").matmul(contract[j - 1]);
    }
    out
}

/// Results of one forward pass on a tape.
pub struct ForwardVars<'t> {
    /// `1 × 1`
    pub energy: Var<'t>,
    /// `n × 1`
    pub atom_energies: Var<'t>,
    /// Final features, `n × C` per flat harmonic index.
    pub features: Vec<Var<'t>>,
    /// Gate column per layer (`E × 1`) when gating is on or forced open.
    pub gates: Vec<Option<Var<'t>>>,
    /// Pooled attention per layer (`E × d`) when gating is on.
    pub pooled: Vec<Option<Var<'t>>>,
    pub edges: Vec<(usize, usize)>,
}

impl ModelState {
    /// Forward pass with positions given as an `n × 3` tape variable.
    pub fn forward_on_tape<'t>(
        &self,
        vars: &ParamVars<'t>,
        species: &[u32],
        positions: Var<'t>,
    ) -> Result<ForwardVars<'t>> {
        let cfg = &self.config;
        let n = species.len();
        if n == 0 {
            return Err(invalid("configuration has no atoms"));
        }
        if positions.shape() != (n, 3) {
            return Err(invalid(format!(
                "positions have shape {:?}, expected ({n}, 3)",
                positions.shape()
            )));
        }
        let species_idx = cfg.species_index(species)?;
        let tape = positions.tape();
        let pos_value = positions.value();
        let points: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::new(pos_value.get(i, 0), pos_value.get(i, 1), pos_value.get(i, 2)))
            .collect();
        let nl = neighbor_list(&points, cfg.cutoff)?;
        let geo = EdgeGeometry::new(positions, &nl, cfg.cutoff, cfg.n_bessel, cfg.envelope_p, cfg.l_max)?;
        let grid: Option<SphericalGrid> = match cfg.gating {
            GatingMode::On if !geo.is_empty() => Some(cfg.attention.grid()?),
            _ => None,
        };

        let c = cfg.channels;
        let initial = vars.embedding.gather_rows(&species_idx);
        let mut h: Vec<Var<'t>> = (0..(cfg.l_max + 1) * (cfg.l_max + 1))
            .map(|idx| {
                if idx == 0 {
                    initial
                } else {
                    tape.constant(Tensor::zeros(n, c))
                }
            })
            .collect();
        let mut gates = Vec::with_capacity(cfg.layers);
        let mut pooled = Vec::with_capacity(cfg.layers);
        for layer in &vars.layers {
            let (gate, pool) = match (cfg.gating, &grid) {
                (GatingMode::On, Some(grid)) => {
                    let g = edge_gates_on_tape(
                        &cfg.attention,
                        grid,
                        &layer.attention,
                        h[0],
                        geo.rel,
                        geo.dist,
                        &geo.receivers,
                        &geo.senders,
                    )?;
                    (Some(g.alpha), Some(g.pooled))
                }
                (GatingMode::ForcedOpen, _) => {
                    (Some(tape.constant(Tensor::filled(geo.len(), 1, 1.0))), None)
                }
                _ => (None, None),
            };
            let msgs = edge_messages(&geo, h[0], &layer.radial, gate);
            h = aggregate_update(&h, &msgs, &geo.receivers, &layer.mix, &layer.contract);
            gates.push(gate);
            pooled.push(pool);
        }
        let atom_energies =
            (h[0] - initial).matmul(vars.readout) + vars.ref_energy.gather_rows(&species_idx);
        Ok(ForwardVars {
            energy: atom_energies.sum(),
            atom_energies,
            features: h,
            gates,
            pooled,
            edges: nl.edges().to_vec(),
        })
    }

    /// Energy, forces, per-atom energies and gates for one configuration.
    pub fn predict(&self, species: &[u32], positions: &[Vector3<f64>]) -> Result<Prediction> {
        if species.len() != positions.len() {
            return Err(invalid("one species per position is required"));
        }
        let tape = Tape::new();
        let vars = ParamVars::constants(&tape, &self.params);
        let pos = tape.leaf(positions_tensor(positions));
        let out = self.forward_on_tape(&vars, species, pos)?;
        let grad = tape.grad(out.energy, &[pos])?.remove(0);
        let forces = (0..positions.len())
            .map(|i| -Vector3::new(grad.get(i, 0), grad.get(i, 1), grad.get(i, 2)))
            .collect();
        Ok(Prediction {
            energy: out.energy.item(),
            atom_energies: out.atom_energies.value().data().to_vec(),
            forces,
            gates: out
                .gates
                .iter()
                .map(|g| g.map(|g| g.value().data().to_vec()))
                .collect(),
            pooled: out.pooled.iter().map(|p| p.map(|p| p.value().as_ref().clone())).collect(),
            edges: out.edges,
        })
    }

    /// Energy only (no backward pass).
    pub fn energy(&self, species: &[u32], positions: &[Vector3<f64>]) -> Result<f64> {
        if species.len() != positions.len() {
            return Err(invalid("one species per position is required"));
        }
        let tape = Tape::new();
        let vars = ParamVars::constants(&tape, &self.params);
        let pos = tape.constant(positions_tensor(positions));
        Ok(self.forward_on_tape(&vars, species, pos)?.energy.item())
    }

    /// Final node features, `n × C` per flat harmonic index.
    pub fn node_features(&self, species: &[u32], positions: &[Vector3<f64>]) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let vars = ParamVars::constants(&tape, &self.params);
        let pos = tape.constant(positions_tensor(positions));
        let out = self.forward_on_tape(&vars, species, pos)?;
        Ok(out.features.iter().map(|f| f.value().as_ref().clone()).collect())
    }
}

pub fn positions_tensor(positions: &[Vector3<f64>]) -> Tensor {
    Tensor::from_fn(positions.len(), 3, |i, c| positions[i][c])
}

/// Numeric output of [`ModelState::predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// kcal/mol
    pub energy: f64,
    pub atom_energies: Vec<f64>,
    /// kcal/mol/Å
    pub forces: Vec<Vector3<f64>>,
    /// Gate per edge, per layer, when gating is on or forced open.
    pub gates: Vec<Option<Vec<f64>>>,
    /// Pooled attention (`E × d`) per layer when gating is on.
    pub pooled: Vec<Option<Tensor>>,
    pub edges: Vec<(usize, usize)>,
}
