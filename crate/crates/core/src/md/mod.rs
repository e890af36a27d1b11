//! Langevin dynamics for isolated clusters and trajectory analysis.
//!
//! Units: Å, fs, amu, kcal/mol, K. A force in kcal/mol/Å on a mass in amu
//! gives an acceleration of [`ACCEL`] Å/fs² per unit ratio.

mod analysis;
mod integrator;

pub use analysis::{moving_average, rdf, Rdf};
pub use integrator::{
    kinetic_energy, kinetic_temperature, langevin_step, maxwell_boltzmann, run, ForceStats, Frame, MdConfig,
    MdState, Trajectory,
};

use nalgebra::Vector3;

use crate::backbone::ModelState;
use crate::error::Result;

/// kcal/(mol·K)
pub const BOLTZMANN: f64 = 0.0019872041;

/// (kcal/mol/Å)/amu in Å/fs²: 4.184 J/cal · 1e3 / (1e-3 kg/mol) · 1e-10 m/Å
/// · 1e-30 s²/fs² / 1e-10 m/Å = 4.184e-4.
pub const ACCEL: f64 = 4.184e-4;

/// Anything that maps positions to an energy and forces.
pub trait ForceProvider {
    /// Energy in kcal/mol and forces in kcal/mol/Å.
    fn energy_forces(&self, positions: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)>;
}

/// A trained model bound to a fixed list of species.
#[derive(Clone, Debug)]
pub struct ModelForces<'m> {
    pub model: &'m ModelState,
    pub species: Vec<u32>,
}

impl ForceProvider for ModelForces<'_> {
    fn energy_forces(&self, positions: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
        let p = self.model.predict(&self.species, positions)?;
        Ok((p.energy, p.forces))
    }
}

impl<F> ForceProvider for F
where
    F: Fn(&[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)>,
{
    fn energy_forces(&self, positions: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
        self(positions)
    }
}
