//! Spherical attention over per-edge grid fields, pooled into a scalar gate.
//!
//! For an edge `(i, j)` the query, key and value at grid point `k` are
//!
//! ```text
//! q_k = W_h h_i + W_f f_k + p_k
//! k_k = W'_h h_j + W'_f f_k + p_k
//! v_k = W''_h h_j + W''_f f_k + p_k
//! ```
//!
//! where `f_k` are the field features and `p_k` optional positional
//! embeddings fixed to the grid. Attention is a softmax over grid points
//! weighted by the quadrature weights; the output is pooled by quadrature
//! into a `d`-vector, and the gate is `α = act(w · pooled + b)`.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{weighted_softmax, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::field::{field_features_on_tape, FieldMode, MIN_DISTANCE};
use crate::geometry::{NeighborList, SphericalGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateActivation {
    /// `1 / (1 + e^{-z})`
    #[default]
    Logistic,
    /// `½ (1 + sin z)`
    Sinusoidal,
}

impl fmt::Display for GateActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateActivation::Logistic => "logistic",
            GateActivation::Sinusoidal => "sinusoidal",
        })
    }
}

impl FromStr for GateActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "logistic" => Ok(Self::Logistic),
            "sinusoidal" => Ok(Self::Sinusoidal),
            other => Err(invalid(format!("unknown gate activation {other:?}"))),
        }
    }
}

impl GateActivation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            GateActivation::Logistic => 1.0 / (1.0 + (-z).exp()),
            GateActivation::Sinusoidal => 0.5 * (1.0 + z.sin()),
        }
    }

    fn apply_var(self, z: Var<'_>) -> Var<'_> {
        match self {
            GateActivation::Logistic => z.sigmoid(),
            GateActivation::Sinusoidal => z.sin().add_scalar(1.0).scale(0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Attention width `d`.
    pub width: usize,
    pub heads: usize,
    #[serde(with = "field_mode_string")]
    pub field_mode: FieldMode,
    pub positional_encoding: bool,
    /// When false, the trainer never updates the six projection matrices.
    pub learnable_projections: bool,
    pub gate_activation: GateActivation,
}

mod field_mode_string {
    use super::FieldMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &FieldMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FieldMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            n_theta: 4,
            n_phi: 8,
            width: 16,
            heads: 1,
            field_mode: FieldMode::Scalar,
            positional_encoding: true,
            learnable_projections: true,
            gate_activation: GateActivation::Logistic,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_theta == 0 || self.n_phi == 0 {
            return Err(invalid("attention grid counts must be positive"));
        }
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(invalid(format!(
                "attention width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SphericalGrid> {
        SphericalGrid::equiangular(self.n_theta, self.n_phi)
    }
}

/// Learnable attention parameters for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `d × d_h` each
    pub q_node: Tensor,
    pub k_node: Tensor,
    pub v_node: Tensor,
    /// `d × d_f` each
    pub q_field: Tensor,
    pub k_field: Tensor,
    pub v_field: Tensor,
    /// `N_grid × d`
    pub positional: Tensor,
    /// `1 × d`
    pub gate_weight: Tensor,
    /// `1 × 1`
    pub gate_bias: Tensor,
}

pub const PROJECTION_NAMES: [&str; 6] = ["q_node", "k_node", "v_node", "q_field", "k_field", "v_field"];

impl AttentionParams {
    pub fn zeros(cfg: &AttentionConfig, node_dim: usize) -> Self {
        let (d, df, n) = (cfg.width, cfg.field_mode.dim(), cfg.n_theta * cfg.n_phi);
        Self {
            q_node: Tensor::zeros(d, node_dim),
            k_node: Tensor::zeros(d, node_dim),
            v_node: Tensor::zeros(d, node_dim),
            q_field: Tensor::zeros(d, df),
            k_field: Tensor::zeros(d, df),
            v_field: Tensor::zeros(d, df),
            positional: Tensor::zeros(n, d),
            gate_weight: Tensor::zeros(1, d),
            gate_bias: Tensor::zeros(1, 1),
        }
    }

    /// Projections uniform in `±1/√fan_in`, positional embeddings `N(0, 0.02²)`,
    /// gate zero so that α starts at its neutral value.
    pub fn init<R: Rng + ?Sized>(cfg: &AttentionConfig, node_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg, node_dim);
        let mut uniform = |t: &mut Tensor, fan_in: usize| {
            let b = 1.0 / (fan_in.max(1) as f64).sqrt();
            let dist = Uniform::new_inclusive(-b, b);
            for x in t.data_mut() {
                *x = dist.sample(rng);
            }
        };
        uniform(&mut p.q_node, node_dim);
        uniform(&mut p.k_node, node_dim);
        uniform(&mut p.v_node, node_dim);
        let df = cfg.field_mode.dim();
        uniform(&mut p.q_field, df);
        uniform(&mut p.k_field, df);
        uniform(&mut p.v_field, df);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        for x in p.positional.data_mut() {
            *x = normal.sample(rng);
        }
        p
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("q_node", &self.q_node),
            ("k_node", &self.k_node),
            ("v_node", &self.v_node),
            ("q_field", &self.q_field),
            ("k_field", &self.k_field),
            ("v_field", &self.v_field),
            ("positional", &self.positional),
            ("gate_weight", &self.gate_weight),
            ("gate_bias", &self.gate_bias),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("q_node", &mut self.q_node),
            ("k_node", &mut self.k_node),
            ("v_node", &mut self.v_node),
            ("q_field", &mut self.q_field),
            ("k_field", &mut self.k_field),
            ("v_field", &mut self.v_field),
            ("positional", &mut self.positional),
            ("gate_weight", &mut self.gate_weight),
            ("gate_bias", &mut self.gate_bias),
        ]
    }

    pub fn check(&self, cfg: &AttentionConfig, node_dim: usize) -> Result<()> {
        let reference = Self::zeros(cfg, node_dim);
        for ((name, t), (_, r)) in self.named().into_iter().zip(reference.named()) {
            if t.shape() != r.shape() {
                return Err(invalid(format!(
                    "attention parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    r.shape()
                )));
            }
            if !t.is_finite() {
                return Err(invalid(format!("attention parameter {name} is not finite")));
            }
        }
        Ok(())
    }
}

/// Attention parameters placed on a tape, as leaves or constants.
#[derive(Clone, Copy)]
pub struct AttentionVars<'t> {
    pub q_node: Var<'t>,
    pub k_node: Var<'t>,
    pub v_node: Var<'t>,
    pub q_field: Var<'t>,
    pub k_field: Var<'t>,
    pub v_field: Var<'t>,
    pub positional: Var<'t>,
    pub gate_weight: Var<'t>,
    pub gate_bias: Var<'t>,
}

impl<'t> AttentionVars<'t> {
    /// Every parameter as a differentiable leaf.
    pub fn leaves(tape: &'t Tape, p: &AttentionParams) -> Self {
        Self::place(tape, p, |_| true)
    }

    /// Every parameter as a constant.
    pub fn constants(tape: &'t Tape, p: &AttentionParams) -> Self {
        Self::place(tape, p, |_| false)
    }

    /// Leaves where `track(name)` holds, constants elsewhere.
    pub fn place(tape: &'t Tape, p: &AttentionParams, track: impl Fn(&str) -> bool) -> Self {
        let put = |name: &str, t: &Tensor| {
            if track(name) {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self {
            q_node: put("q_node", &p.q_node),
            k_node: put("k_node", &p.k_node),
            v_node: put("v_node", &p.v_node),
            q_field: put("q_field", &p.q_field),
            k_field: put("k_field", &p.k_field),
            v_field: put("v_field", &p.v_field),
            positional: put("positional", &p.positional),
            gate_weight: put("gate_weight", &p.gate_weight),
            gate_bias: put("gate_bias", &p.gate_bias),
        }
    }

    pub fn named(&self) -> [(&'static str, Var<'t>); 9] {
        [
            ("q_node", self.q_node),
            ("k_node", self.k_node),
            ("v_node", self.v_node),
            ("q_field", self.q_field),
            ("k_field", self.k_field),
            ("v_field", self.v_field),
            ("positional", self.positional),
            ("gate_weight", self.gate_weight),
            ("gate_bias", self.gate_bias),
        ]
    }
}

/// Per-edge gate output on the tape.
pub struct GateVars<'t> {
    /// `E × 1`
    pub alpha: Var<'t>,
    /// `E × d`, quadrature mean of the attention output per edge.
    pub pooled: Var<'t>,
}

/// Multi-head weighted softmax attention for one edge.
///
/// `q`, `k`, `v` are `N × d`; each head attends over its own column slice
/// with logits scaled by `1/√(d/heads)`.
pub fn attend<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>, weights: Var<'t>, heads: usize) -> Result<Var<'t>> {
    let (_, d) = q.shape();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out: Option<Var<'t>> = None;
    for h in 0..heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (q.slice_cols(a, b), k.slice_cols(a, b), v.slice_cols(a, b))
        };
        let logits = qh.matmul(kh.t()).scale(scale);
        if !logits.value().is_finite() {
            return Err(Error::NumericalOverflow("attention logits are not finite".into()));
        }
        let o = weighted_softmax(logits, weights, vh);
        let o = if heads == 1 { o } else { o.pad_cols(a, d) };
        out = Some(match out {
            None => o,
            Some(acc) => acc + o,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Gates for every edge of a graph, on the tape.
///
/// `h` is the `n × d_h` node feature table, `rel` the `E × 3` edge vectors
/// `x_j − x_i` and `dist` their `E × 1` norms. Edge `e` is
/// `(receivers[e], senders[e])`.
#[allow(clippy::too_many_arguments)]
pub fn edge_gates_on_tape<'t>(
    cfg: &AttentionConfig,
    grid: &SphericalGrid,
    params: &AttentionVars<'t>,
    h: Var<'t>,
    rel: Var<'t>,
    dist: Var<'t>,
    receivers: &[usize],
    senders: &[usize],
) -> Result<GateVars<'t>> {
    let tape = h.tape();
    let n = grid.len();
    let n_edges = receivers.len();
    let width = cfg.width;
    if n_edges == 0 {
        let empty = tape.constant(Tensor::zeros(0, 1));
        return Ok(GateVars {
            alpha: empty,
            pooled: tape.constant(Tensor::zeros(0, width)),
        });
    }
    let feats = field_features_on_tape(rel, dist, grid, cfg.field_mode);
    let repeat: Vec<usize> = (0..n_edges).flat_map(|e| std::iter::repeat(e).take(n)).collect();
    let tile: Vec<usize> = (0..n_edges).flat_map(|_| 0..n).collect();
    let pos = cfg
        .positional_encoding
        .then(|| params.positional.gather_rows(&tile));

    let project = |node_w: Var<'t>, field_w: Var<'t>, nodes: &[usize]| {
        let from_nodes = h.gather_rows(nodes).matmul(node_w.t()).gather_rows(&repeat);
        let s = from_nodes + feats.matmul(field_w.t());
        match pos {
            Some(p) => s + p,
            None => s,
        }
    };
    let q_all = project(params.q_node, params.q_field, receivers);
    let k_all = project(params.k_node, params.k_field, senders);
    let v_all = project(params.v_node, params.v_field, senders);

    let weights = tape.constant(grid.weights_row());
    let mut pooled_rows = Vec::with_capacity(n_edges);
    for e in 0..n_edges {
        let rows: Vec<usize> = (e * n..(e + 1) * n).collect();
        let out = attend(
            q_all.gather_rows(&rows),
            k_all.gather_rows(&rows),
            v_all.gather_rows(&rows),
            weights,
            cfg.heads,
        )?;
        pooled_rows.push(weights.matmul(out).scale(1.0 / (4.0 * PI)));
    }
    let pooled = tape.concat_rows(&pooled_rows);
    let z = pooled.matmul(params.gate_weight.t()) + params.gate_bias.broadcast_to(n_edges, 1);
    Ok(GateVars {
        alpha: cfg.gate_activation.apply_var(z),
        pooled,
    })
}

/// Query, key and value tables for one edge.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionField {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

/// Builds `q`, `k`, `v` (`N × d`) from node features and `N × d_f` field
/// features.
pub fn build_qkv(
    h_i: &[f64],
    h_j: &[f64],
    field_feats: &Tensor,
    params: &AttentionParams,
    positional_encoding: bool,
) -> Result<AttentionField> {
    let (d, dh) = params.q_node.shape();
    let df = params.q_field.cols();
    let n = field_feats.rows();
    if h_i.len() != dh || h_j.len() != dh {
        return Err(invalid(format!(
            "node features must have {dh} entries, got {} and {}",
            h_i.len(),
            h_j.len()
        )));
    }
    if field_feats.cols() != df {
        return Err(invalid(format!(
            "field features must have {df} columns, got {}",
            field_feats.cols()
        )));
    }
    if positional_encoding && params.positional.shape() != (n, d) {
        return Err(invalid(format!(
            "positional embeddings have shape {:?}, expected {:?}",
            params.positional.shape(),
            (n, d)
        )));
    }
    let tape = Tape::new();
    let p = AttentionVars::constants(&tape, params);
    let hi = tape.constant(Tensor::row(h_i));
    let hj = tape.constant(Tensor::row(h_j));
    let f = tape.constant(field_feats.clone());
    let one = |w_h: Var, w_f: Var, node: Var| {
        let s = node.matmul(w_h.t()).broadcast_rows(n) + f.matmul(w_f.t());
        let s = if positional_encoding { s + p.positional } else { s };
        s.value().as_ref().clone()
    };
    Ok(AttentionField {
        q: one(p.q_node, p.q_field, hi),
        k: one(p.k_node, p.k_field, hj),
        v: one(p.v_node, p.v_field, hj),
    })
}

/// Discrete spherical attention, `N × d` output.
pub fn spherical_attention(af: &AttentionField, grid: &SphericalGrid, heads: usize) -> Result<Tensor> {
    let n = grid.len();
    let d = af.q.cols();
    for (name, t) in [("q", &af.q), ("k", &af.k), ("v", &af.v)] {
        if t.shape() != (n, d) {
            return Err(invalid(format!(
                "{name} has shape {:?}, expected {:?}",
                t.shape(),
                (n, d)
            )));
        }
    }
    if d == 0 || heads == 0 || d % heads != 0 {
        return Err(invalid(format!("width {d} must be a positive multiple of heads {heads}")));
    }
    let tape = Tape::new();
    let out = attend(
        tape.constant(af.q.clone()),
        tape.constant(af.k.clone()),
        tape.constant(af.v.clone()),
        tape.constant(grid.weights_row()),
        heads,
    )?;
    Ok(out.value().as_ref().clone())
}

/// Quadrature mean of the attention output, `1 × d`.
pub fn pool(attn_out: &Tensor, grid: &SphericalGrid) -> Result<Tensor> {
    if attn_out.rows() != grid.len() {
        return Err(invalid(format!(
            "attention output has {} rows, grid has {} points",
            attn_out.rows(),
            grid.len()
        )));
    }
    Ok(grid.weights_row().matmul(attn_out).map(|x| x / (4.0 * PI)))
}

/// Pools the attention output and applies the gate.
pub fn pool_and_gate(
    attn_out: &Tensor,
    grid: &SphericalGrid,
    params: &AttentionParams,
    activation: GateActivation,
) -> Result<f64> {
    let pooled = pool(attn_out, grid)?;
    if pooled.cols() != params.gate_weight.cols() {
        return Err(invalid("gate weight width does not match the attention output"));
    }
    Ok(gate_from_pooled(pooled.data(), params, activation))
}

pub fn gate_from_pooled(pooled: &[f64], params: &AttentionParams, activation: GateActivation) -> f64 {
    let z: f64 = pooled
        .iter()
        .zip(params.gate_weight.data())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + params.gate_bias.item();
    activation.apply(z)
}

/// Gate value per edge of `nl`, in edge order.
pub fn edge_gates(
    positions: &[Vector3<f64>],
    features: &Tensor,
    nl: &NeighborList,
    cfg: &AttentionConfig,
    params: &AttentionParams,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    params.check(cfg, features.cols())?;
    if features.rows() != positions.len() {
        return Err(invalid("one feature row per atom is required"));
    }
    let grid = cfg.grid()?;
    let tape = Tape::new();
    let (rel, dist) = edge_geometry(&tape, positions, nl.edges())?;
    let vars = AttentionVars::constants(&tape, params);
    let h = tape.constant(features.clone());
    let out = edge_gates_on_tape(
        cfg,
        &grid,
        &vars,
        h,
        rel,
        dist,
        &nl.receivers(),
        &nl.senders(),
    )?;
    Ok(out.alpha.value().data().to_vec())
}

/// Constant `E × 3` edge vectors and `E × 1` lengths; rejects coincident atoms.
fn edge_geometry<'t>(
    tape: &'t Tape,
    positions: &[Vector3<f64>],
    edges: &[(usize, usize)],
) -> Result<(Var<'t>, Var<'t>)> {
    let mut rel = Tensor::zeros(edges.len(), 3);
    for (e, &(i, j)) in edges.iter().enumerate() {
        let r = positions[j] - positions[i];
        if !(r.norm() > MIN_DISTANCE) {
            return Err(Error::DegenerateGeometry(format!("atoms {i} and {j} coincide")));
        }
        for c in 0..3 {
            rel.set(e, c, r[c]);
        }
    }
    let rel = tape.constant(rel);
    Ok((rel, rel.norm_rows()))
}

#[cfg(test)]
mod tests;
