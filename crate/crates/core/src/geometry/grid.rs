use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::error::{invalid, Result};

/// Directions on the unit sphere with quadrature weights.
///
/// Built as a cell-centred equiangular grid: colatitudes
/// `θ_i = π(i + ½)/n_theta`, longitudes `φ_j = 2πj/n_phi`. Colatitude
/// weights follow Fejér's first rule on those nodes, which integrates
/// polynomials in `cos θ` of degree below `n_theta` exactly; the longitude
/// rule is the trapezoid `2π/n_phi`. Weights are positive and rescaled to sum
/// to exactly `4π`. Points are ordered colatitude-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalGrid {
    n_theta: usize,
    n_phi: usize,
    points: Vec<Vector3<f64>>,
    weights: Vec<f64>,
}

impl SphericalGrid {
    pub fn equiangular(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(invalid(format!(
                "grid counts must be positive, got {n_theta}x{n_phi}"
            )));
        }
        let d_theta = PI / n_theta as f64;
        let d_phi = 2.0 * PI / n_phi as f64;
        let lat_weights = fejer_weights(n_theta);
        let mut points = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for i in 0..n_theta {
            let theta = d_theta * (i as f64 + 0.5);
            let (st, ct) = theta.sin_cos();
            for j in 0..n_phi {
                let phi = d_phi * j as f64;
                let (sp, cp) = phi.sin_cos();
                points.push(Vector3::new(cp * st, sp * st, ct));
                weights.push(lat_weights[i] * d_phi);
            }
        }
        let total: f64 = weights.iter().sum();
        let factor = 4.0 * PI / total;
        for w in &mut weights {
            *w *= factor;
        }
        Ok(Self {
            n_theta,
            n_phi,
            points,
            weights,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same weights, every direction rotated by `rotation`.
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Self {
        Self {
            n_theta: self.n_theta,
            n_phi: self.n_phi,
            points: self.points.iter().map(|p| rotation * p).collect(),
            weights: self.weights.clone(),
        }
    }

    /// `N × 3` tensor of directions.
    pub fn points_tensor(&self) -> Tensor {
        Tensor::from_fn(self.len(), 3, |r, c| self.points[r][c])
    }

    /// `1 × N` tensor of weights.
    pub fn weights_row(&self) -> Tensor {
        Tensor::row(&self.weights)
    }

    pub fn quadrature(&self, values: &[f64]) -> Result<f64> {
        quadrature(values, self)
    }
}

/// Fejér's first rule on `θ_i = π(i + ½)/n`, as weights for `∫_{-1}^{1} f(cos θ)`.
fn fejer_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let theta = PI * (i as f64 + 0.5) / n as f64;
            let tail: f64 = (1..=n / 2)
                .map(|j| (2.0 * j as f64 * theta).cos() / (4.0 * (j * j) as f64 - 1.0))
                .sum();
            2.0 / n as f64 * (1.0 - 2.0 * tail)
        })
        .collect()
}

/// `Σ_k values_k ω_k`.
pub fn quadrature(values: &[f64], grid: &SphericalGrid) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(invalid(format!(
            "expected {} values for the grid, got {}",
            grid.len(),
            values.len()
        )));
    }
    Ok(values.iter().zip(grid.weights()).map(|(v, w)| v * w).sum())
}
