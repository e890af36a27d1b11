//! Spherical grids, rigid motions, real spherical harmonics and cutoff graphs.

pub mod grid;
pub mod harmonics;
pub mod neighbors;
pub mod rigid;

pub use grid::{quadrature, SphericalGrid};
pub use harmonics::{real_spherical_harmonics, sh_index, sh_polynomials, ShArith, ShCoefficients};
pub use neighbors::{neighbor_list, NeighborList};
pub use rigid::{apply_rigid, rotation_from_euler, RigidMotion};
