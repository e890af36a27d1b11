use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Radial distribution of a non-periodic cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rdf {
    pub centers: Vec<f64>,
    pub width: f64,
    /// Ordered-pair counts per bin, summed over frames.
    pub counts: Vec<u64>,
    /// `counts / (frames · pairs · V_shell / V_ref)` with `V_ref` the ball
    /// of radius `r_max`: a pair distribution uniform over that ball has
    /// `g = 1`.
    pub g: Vec<f64>,
}

impl Rdf {
    /// Centre of the bin with the largest `g`.
    pub fn peak(&self) -> f64 {
        let k = (0..self.g.len())
            .max_by(|&a, &b| self.g[a].total_cmp(&self.g[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        self.centers[k]
    }
}

/// Histogram of all ordered-pair distances `r < r_max` over the frames.
pub fn rdf(frames: &[Vec<Vector3<f64>>], r_max: f64, bins: usize) -> Result<Rdf> {
    if bins == 0 {
        return Err(invalid("rdf needs at least one bin"));
    }
    if !(r_max > 0.0) {
        return Err(invalid(format!("r_max must be positive, got {r_max}")));
    }
    let width = r_max / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut pairs = 0usize;
    for x in frames {
        let n = x.len();
        pairs = pairs.max(n * n.saturating_sub(1));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let r = (x[j] - x[i]).norm();
                if r < r_max {
                    counts[((r / width) as usize).min(bins - 1)] += 1;
                }
            }
        }
    }
    let v_ref = 4.0 / 3.0 * PI * r_max.powi(3);
    let norm = frames.len() as f64 * pairs as f64;
    let centers: Vec<f64> = (0..bins).map(|b| (b as f64 + 0.5) * width).collect();
    let g = (0..bins)
        .map(|b| {
            let (lo, hi) = (b as f64 * width, (b + 1) as f64 * width);
            let shell = 4.0 / 3.0 * PI * (hi.powi(3) - lo.powi(3));
            if norm == 0.0 {
                0.0
            } else {
                counts[b] as f64 / (norm * shell / v_ref)
            }
        })
        .collect();
    Ok(Rdf { centers, width, counts, g })
}

/// Centred moving average. The window covers `(w−1)/2` points before and
/// `w/2` after each point and is cut at the ends of the series, so the
/// first and last values average fewer points.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(invalid("window must be at least 1"));
    }
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub((window - 1) / 2);
            let hi = (i + window / 2).min(n - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}
