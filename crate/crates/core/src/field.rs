//! Per-edge scalar field on the spherical grid.
//!
//! For an edge `(i, j)` at distance `d`, the grid is scaled to radius `d` and
//! centred on atom `i`; the field at grid point `k` is the distance from the
//! scaled point to atom `j`:
//!
//! `δ_k = ‖x_j − (x_i + d g_k)‖ = d √(2(1 + cos θ_k))`,
//!
//! with `θ_k` the angle between `g_k` and `(x_i − x_j)/d`. The minimum (zero)
//! lies at the grid direction pointing from `i` toward `j`, the maximum `2d`
//! opposite to it.

use nalgebra::Vector3;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::geometry::SphericalGrid;

/// Smallest edge length accepted before atoms count as coincident.
pub const MIN_DISTANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSphericalField {
    pub distance: f64,
    pub values: Vec<f64>,
}

pub fn grid_field(
    x_i: &Vector3<f64>,
    x_j: &Vector3<f64>,
    grid: &SphericalGrid,
) -> Result<EdgeSphericalField> {
    let rel = x_j - x_i;
    let d = rel.norm();
    if !(d > MIN_DISTANCE) {
        return Err(Error::DegenerateGeometry(format!(
            "atoms closer than {MIN_DISTANCE} Å (distance {d})"
        )));
    }
    let values = grid.points().iter().map(|g| (rel - d * g).norm()).collect();
    Ok(EdgeSphericalField { distance: d, values })
}

/// How the field is lifted to per-point feature vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FieldMode {
    /// `δ_k / 2d`, one feature in `[0, 1]`.
    #[default]
    Scalar,
    /// `n` Gaussians in `u = δ_k / 2d`, centred uniformly on `[0, 1]` with
    /// width equal to the centre spacing (a single Gaussian sits at ½ with
    /// width ½).
    Rbf(usize),
}

impl FieldMode {
    pub fn dim(&self) -> usize {
        match self {
            FieldMode::Scalar => 1,
            FieldMode::Rbf(n) => *n,
        }
    }

    fn centres_and_width(n: usize) -> (Vec<f64>, f64) {
        if n == 1 {
            (vec![0.5], 0.5)
        } else {
            let step = 1.0 / (n - 1) as f64;
            ((0..n).map(|c| c as f64 * step).collect(), step)
        }
    }
}

impl fmt::Display for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldMode::Scalar => write!(f, "scalar"),
            FieldMode::Rbf(n) => write!(f, "rbf({n})"),
        }
    }
}

impl FromStr for FieldMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "scalar" {
            return Ok(FieldMode::Scalar);
        }
        if let Some(inner) = s.strip_prefix("rbf(").and_then(|r| r.strip_suffix(')')) {
            if let Ok(n) = inner.trim().parse::<usize>() {
                if n >= 1 {
                    return Ok(FieldMode::Rbf(n));
                }
            }
        }
        Err(invalid(format!("unknown field mode {s:?} (expected scalar or rbf(n))")))
    }
}

/// `N × d_f` feature table for one edge field.
pub fn field_features(field: &EdgeSphericalField, mode: FieldMode) -> Tensor {
    let u: Vec<f64> = field.values.iter().map(|v| v / (2.0 * field.distance)).collect();
    match mode {
        FieldMode::Scalar => Tensor::column(&u),
        FieldMode::Rbf(n) => {
            let (centres, width) = FieldMode::centres_and_width(n);
            Tensor::from_fn(u.len(), n, |k, c| {
                let t = (u[k] - centres[c]) / width;
                (-0.5 * t * t).exp()
            })
        }
    }
}

/// Field features for many edges at once, on the tape.
///
/// `rel` holds `x_j − x_i` per edge (`E × 3`) and `dist` its norms (`E × 1`).
/// Returns `(E·N) × d_f`, edge-major, so rows `eN..(e+1)N` belong to edge `e`.
pub fn field_features_on_tape<'t>(
    rel: Var<'t>,
    dist: Var<'t>,
    grid: &SphericalGrid,
    mode: FieldMode,
) -> Var<'t> {
    let tape = rel.tape();
    let n_edges = rel.shape().0;
    let n = grid.len();
    let repeat: Vec<usize> = (0..n_edges).flat_map(|e| std::iter::repeat(e).take(n)).collect();
    let rel_rep = rel.gather_rows(&repeat);
    let dist_rep = dist.gather_rows(&repeat);
    let points = grid.points();
    let tiled = tape.constant(Tensor::from_fn(n_edges * n, 3, |r, c| points[r % n][c]));
    let delta = (rel_rep - dist_rep.broadcast_cols(3) * tiled).norm_rows();
    let u = delta / dist_rep.scale(2.0);
    match mode {
        FieldMode::Scalar => u,
        FieldMode::Rbf(k) => {
            let (centres, width) = FieldMode::centres_and_width(k);
            let c = tape
                .constant(Tensor::row(&centres))
                .broadcast_rows(n_edges * n);
            let t = u.broadcast_cols(k) - c;
            t.square().scale(-0.5 / (width * width)).exp()
        }
    }
}
