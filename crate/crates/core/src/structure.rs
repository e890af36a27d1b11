//! Atomic configurations and the element table.

use nalgebra::Vector3;

use crate::error::{invalid, Result};

/// A molecule or cluster, with optional reference labels.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AtomicConfiguration {
    /// Atomic numbers.
    pub species: Vec<u32>,
    /// Å
    pub positions: Vec<Vector3<f64>>,
    /// kcal/mol
    pub energy: Option<f64>,
    /// kcal/mol/Å
    pub forces: Option<Vec<Vector3<f64>>>,
    /// Extra comment-line `key=value` pairs, kept verbatim and in order.
    pub info: Vec<(String, String)>,
}

impl AtomicConfiguration {
    pub fn new(species: Vec<u32>, positions: Vec<Vector3<f64>>) -> Self {
        Self {
            species,
            positions,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.species.len() != self.positions.len() {
            return Err(invalid(format!(
                "{} species for {} positions",
                self.species.len(),
                self.positions.len()
            )));
        }
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(invalid(format!("atom {i} has non-finite coordinates")));
        }
        if let Some(f) = &self.forces {
            if f.len() != self.positions.len() {
                return Err(invalid(format!(
                    "{} force rows for {} atoms",
                    f.len(),
                    self.positions.len()
                )));
            }
        }
        Ok(())
    }

    pub fn masses(&self) -> Result<Vec<f64>> {
        self.species.iter().map(|&z| element_mass(z)).collect()
    }
}

/// Symbol and standard atomic mass (amu) for Z = 1..=36.
const ELEMENTS: [(&str, f64); 36] = [
    ("H", 1.008),
    ("He", 4.0026),
    ("Li", 6.94),
    ("Be", 9.0122),
    ("B", 10.81),
    ("C", 12.011),
    ("N", 14.007),
    ("O", 15.999),
    ("F", 18.998),
    ("Ne", 20.180),
    ("Na", 22.990),
    ("Mg", 24.305),
    ("Al", 26.982),
    ("Si", 28.085),
    ("P", 30.974),
    ("S", 32.06),
    ("Cl", 35.45),
    ("Ar", 39.948),
    ("K", 39.098),
    ("Ca", 40.078),
    ("Sc", 44.956),
    ("Ti", 47.867),
    ("V", 50.942),
    ("Cr", 51.996),
    ("Mn", 54.938),
    ("Fe", 55.845),
    ("Co", 58.933),
    ("Ni", 58.693),
    ("Cu", 63.546),
    ("Zn", 65.38),
    ("Ga", 69.723),
    ("Ge", 72.630),
    ("As", 74.922),
    ("Se", 78.971),
    ("Br", 79.904),
    ("Kr", 83.798),
];

pub fn element_symbol(z: u32) -> Result<&'static str> {
    ELEMENTS
        .get((z as usize).wrapping_sub(1))
        .map(|e| e.0)
        .ok_or_else(|| invalid(format!("unsupported atomic number {z}")))
}

pub fn atomic_number(symbol: &str) -> Result<u32> {
    ELEMENTS
        .iter()
        .position(|e| e.0 == symbol)
        .map(|i| i as u32 + 1)
        .ok_or_else(|| invalid(format!("unknown element symbol {symbol:?}")))
}

pub fn element_mass(z: u32) -> Result<f64> {
    ELEMENTS
        .get((z as usize).wrapping_sub(1))
        .map(|e| e.1)
        .ok_or_else(|| invalid(format!("unsupported atomic number {z}")))
}
