//! Analytic potentials for desk-scale training sets: a Morse dimer and a
//! bent trimer with Morse bonds from a central atom plus an angle term.

use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::fmt;
use std::str::FromStr;

use super::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::geometry::RigidMotion;
use crate::md::{ForceProvider, BOLTZMANN};
use crate::structure::AtomicConfiguration;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Morse {
    /// kcal/mol
    pub depth: f64,
    /// 1/Å
    pub a: f64,
    /// Å
    pub r0: f64,
}

impl Default for Morse {
    fn default() -> Self {
        Self { depth: 1.0, a: 1.0, r0: 1.5 }
    }
}

impl Morse {
    pub fn energy(&self, r: f64) -> f64 {
        let e = 1.0 - (-self.a * (r - self.r0)).exp();
        self.depth * e * e
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let x = (-self.a * (r - self.r0)).exp();
        2.0 * self.depth * self.a * (1.0 - x) * x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Morse,
    Trimer,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Morse => "morse",
            SynthKind::Trimer => "trimer",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "morse" => Ok(SynthKind::Morse),
            "trimer" => Ok(SynthKind::Trimer),
            _ => Err(invalid(format!("unknown synthetic potential {s:?}"))),
        }
    }
}

/// Morse dimer (two H), or trimer O–H–H with Morse bonds 0–1 and 0–2 plus
/// `k (cosθ − cosθ₀)²` on the angle at atom 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthPotential {
    pub kind: SynthKind,
    pub morse: Morse,
    /// kcal/mol
    pub k_angle: f64,
    /// rad
    pub theta0: f64,
}

impl SynthPotential {
    pub fn new(kind: SynthKind) -> Self {
        Self {
            kind,
            morse: Morse::default(),
            k_angle: 0.5,
            theta0: 104.5f64.to_radians(),
        }
    }

    pub fn species(&self) -> Vec<u32> {
        match self.kind {
            SynthKind::Morse => vec![1, 1],
            SynthKind::Trimer => vec![8, 1, 1],
        }
    }

    /// Minimum-energy geometry.
    pub fn equilibrium(&self) -> Vec<Vector3<f64>> {
        self.geometry(self.morse.r0, self.morse.r0, self.theta0)
    }

    /// Atom 0 at the origin, atom 1 on +x at `r1`, atom 2 at `r2` in the
    /// xy-plane at angle `theta` from atom 1 (trimer only).
    pub fn geometry(&self, r1: f64, r2: f64, theta: f64) -> Vec<Vector3<f64>> {
        let mut x = vec![Vector3::zeros(), Vector3::new(r1, 0.0, 0.0)];
        if self.kind == SynthKind::Trimer {
            x.push(Vector3::new(r2 * theta.cos(), r2 * theta.sin(), 0.0));
        }
        x
    }

    pub fn energy(&self, x: &[Vector3<f64>]) -> Result<f64> {
        Ok(self.energy_forces(x)?.0)
    }
}

impl ForceProvider for SynthPotential {
    fn energy_forces(&self, x: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
        let n = self.species().len();
        if x.len() != n {
            return Err(invalid(format!("{} potential needs {n} atoms, got {}", self.kind, x.len())));
        }
        let mut forces = vec![Vector3::zeros(); n];
        let mut energy = 0.0;
        let mut bond = |j: usize, forces: &mut [Vector3<f64>]| -> Result<(Vector3<f64>, f64)> {
            let u = x[j] - x[0];
            let r = u.norm();
            if !(r > 0.0) {
                return Err(Error::DegenerateGeometry(format!("atoms 0 and {j} coincide")));
            }
            energy += self.morse.energy(r);
            let f = u * (self.morse.derivative(r) / r);
            forces[0] += f;
            forces[j] -= f;
            Ok((u, r))
        };
        let (u, ru) = bond(1, &mut forces)?;
        if self.kind == SynthKind::Trimer {
            let (v, rv) = bond(2, &mut forces)?;
            let c = u.dot(&v) / (ru * rv);
            let c0 = self.theta0.cos();
            energy += self.k_angle * (c - c0).powi(2);
            let de_dc = 2.0 * self.k_angle * (c - c0);
            let dc_du = v / (ru * rv) - u * (c / (ru * ru));
            let dc_dv = u / (ru * rv) - v * (c / (rv * rv));
            forces[1] -= dc_du * de_dc;
            forces[2] -= dc_dv * de_dc;
            forces[0] += (dc_du + dc_dv) * de_dc;
        }
        Ok((energy, forces))
    }
}

/// Bond lengths drawn for training sets stay within these multiples of r₀.
pub const BOND_RANGE: (f64, f64) = (0.4, 3.0);

/// Labelled configurations of `kind`. Bond lengths and the bond angle are
/// drawn from their Boltzmann factors at `noise_t` (K) by rejection,
/// bonds restricted to [`BOND_RANGE`]·r₀ and cosθ proposed uniformly;
/// `noise_t = 0` gives the equilibrium geometry. Each frame is randomly
/// rotated about atom 0. Frames are split 80/10/10.
pub fn synth_dataset(kind: SynthKind, n: usize, seed: u64, noise_t: f64) -> Result<Dataset> {
    let pot = SynthPotential::new(kind);
    synth_dataset_with(&pot, n, seed, noise_t)
}

pub fn synth_dataset_with(pot: &SynthPotential, n: usize, seed: u64, noise_t: f64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("a synthetic dataset needs at least one frame"));
    }
    if !(noise_t >= 0.0) {
        return Err(invalid(format!("noise temperature must be non-negative, got {noise_t}")));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let kt = BOLTZMANN * noise_t;
    let r0 = pot.morse.r0;
    let draw_bond = |rng: &mut StdRng| {
        if kt == 0.0 {
            return r0;
        }
        loop {
            let r = rng.gen_range(BOND_RANGE.0 * r0..BOND_RANGE.1 * r0);
            if rng.gen::<f64>() < (-pot.morse.energy(r) / kt).exp() {
                return r;
            }
        }
    };
    let mut frames = Vec::with_capacity(n);
    while frames.len() < n {
        let r1 = draw_bond(&mut rng);
        let (r2, theta) = match pot.kind {
            SynthKind::Morse => (0.0, 0.0),
            SynthKind::Trimer => {
                let r2 = draw_bond(&mut rng);
                let theta = if kt == 0.0 {
                    pot.theta0
                } else {
                    loop {
                        let c: f64 = rng.gen_range(-1.0..1.0);
                        let e = pot.k_angle * (c - pot.theta0.cos()).powi(2);
                        if rng.gen::<f64>() < (-e / kt).exp() {
                            break c.acos();
                        }
                    }
                };
                (r2, theta)
            }
        };
        let rot = RigidMotion::random_rotation(&mut rng);
        let x = rot.apply(&pot.geometry(r1, r2, theta));
        if x.len() == 3 && (x[1] - x[2]).norm() < 0.2 * r0 {
            continue;
        }
        let (e, f) = pot.energy_forces(&x)?;
        let mut frame = AtomicConfiguration::new(pot.species(), x);
        frame.energy = Some(e);
        frame.forces = Some(f);
        frames.push(frame);
    }
    let provenance = format!("synth:{} n={n} seed={seed} noise_t={noise_t}", pot.kind);
    Dataset::from_frames(frames, provenance, seed)
}
