use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;
use std::f64::consts::PI;

use s2gate::geometry::{real_spherical_harmonics, sh_index, SphericalGrid};

use crate::run::{csv_table, Run};
use crate::settings::Settings;

/// Quadrature weights must sum to 4π within this.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-10;

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Polar nodes [default: 4]
    #[arg(long)]
    pub ntheta: Option<usize>,
    /// Azimuthal nodes [default: 8]
    #[arg(long)]
    pub nphi: Option<usize>,
}

#[derive(Serialize)]
struct Row {
    index: usize,
    theta: f64,
    phi: f64,
    x: f64,
    y: f64,
    z: f64,
    weight: f64,
}

#[derive(Serialize)]
struct Integral {
    l: usize,
    m: i64,
    value: f64,
}

#[derive(Serialize)]
struct Report {
    n_theta: usize,
    n_phi: usize,
    points: usize,
    weight_sum: f64,
    deviation_from_4pi: f64,
    passed: bool,
    /// `∫ Y_lm dΩ` by quadrature; exactly `√(4π)` for `l = 0`, zero otherwise.
    harmonic_integrals: Vec<Integral>,
}

pub fn execute(args: &GridArgs, settings: &mut Settings, run: &mut Run) -> Result<()> {
    let n_theta = settings.get("ntheta", args.ntheta, 4)?;
    let n_phi = settings.get("nphi", args.nphi, 8)?;
    settings.check_unused()?;
    let grid = SphericalGrid::equiangular(n_theta, n_phi)?;
    let rows: Vec<Row> = grid
        .points()
        .iter()
        .zip(grid.weights())
        .enumerate()
        .map(|(index, (p, &weight))| Row {
            index,
            theta: p.z.clamp(-1.0, 1.0).acos(),
            phi: p.y.atan2(p.x).rem_euclid(2.0 * PI),
            x: p.x,
            y: p.y,
            z: p.z,
            weight,
        })
        .collect();
    run.write("grid.csv", csv_table(&rows)?)?;

    let weight_sum: f64 = grid.weights().iter().sum();
    let deviation = (weight_sum - 4.0 * PI).abs();
    let mut integrals = vec![0.0; 9];
    for (p, w) in grid.points().iter().zip(grid.weights()) {
        for (acc, y) in integrals.iter_mut().zip(real_spherical_harmonics(2, p)?.as_slice()) {
            *acc += w * y;
        }
    }
    let mut harmonic_integrals = Vec::new();
    for l in 0..=2usize {
        for m in -(l as i64)..=l as i64 {
            harmonic_integrals.push(Integral { l, m, value: integrals[sh_index(l, m)] });
        }
    }
    let report = Report {
        n_theta,
        n_phi,
        points: grid.len(),
        weight_sum,
        deviation_from_4pi: deviation,
        passed: deviation <= WEIGHT_SUM_TOLERANCE,
        harmonic_integrals,
    };
    run.write("quadrature.json", serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "{n_theta}x{n_phi} grid: {} points, sum of weights {weight_sum:.15} (|Σω − 4π| = {deviation:.2e})",
        grid.len()
    );
    if !report.passed {
        bail!("quadrature weights deviate from 4π by {deviation:e}");
    }
    Ok(())
}
