use nalgebra::Vector3;
use std::collections::HashMap;

use crate::error::{invalid, Result};

/// Directed cutoff graph. Edge `(i, j)` means atom `i` receives a message
/// from atom `j`. Edges are sorted by `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    edges: Vec<(usize, usize)>,
    cutoff: f64,
}

impl NeighborList {
    pub fn build(positions: &[Vector3<f64>], cutoff: f64) -> Result<Self> {
        neighbor_list(positions, cutoff)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn senders(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }
}

fn within(a: &Vector3<f64>, b: &Vector3<f64>, cutoff: f64) -> bool {
    (b - a).norm() < cutoff
}

/// Cell-list construction; open ball, so pairs at exactly `cutoff` are
/// excluded.
pub fn neighbor_list(positions: &[Vector3<f64>], cutoff: f64) -> Result<NeighborList> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(invalid(format!("cutoff must be positive and finite, got {cutoff}")));
    }
    if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(invalid(format!("atom {i} has non-finite coordinates")));
    }
    let mut edges = Vec::new();
    if positions.len() > 1 {
        let origin = positions.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
        let cell_of = |p: &Vector3<f64>| {
            let c = (p - origin) / cutoff;
            (c.x.floor() as i64, c.y.floor() as i64, c.z.floor() as i64)
        };
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells.entry(cell_of(p)).or_default().push(i);
        }
        for (i, p) in positions.iter().enumerate() {
            let (cx, cy, cz) = cell_of(p);
            let start = edges.len();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(members) = cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in members {
                                if j != i && within(p, &positions[j], cutoff) {
                                    edges.push((i, j));
                                }
                            }
                        }
                    }
                }
            }
            edges[start..].sort_unstable();
        }
    }
    Ok(NeighborList { edges, cutoff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(positions: &[Vector3<f64>], cutoff: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..positions.len() {
            for j in 0..positions.len() {
                if i != j && (positions[j] - positions[i]).norm() < cutoff {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn pair_inside_and_outside() {
        let pts = [Vector3::zeros(), Vector3::new(3.0, 0.0, 0.0)];
        assert_eq!(neighbor_list(&pts, 5.0).unwrap().edges(), &[(0, 1), (1, 0)]);
        let far = [Vector3::zeros(), Vector3::new(6.0, 0.0, 0.0)];
        assert!(neighbor_list(&far, 5.0).unwrap().is_empty());
    }

    #[test]
    fn exact_cutoff_is_excluded() {
        let pts = [Vector3::zeros(), Vector3::new(0.0, 2.0, 0.0)];
        assert!(neighbor_list(&pts, 2.0).unwrap().is_empty());
    }

    #[test]
    fn bad_inputs() {
        let pts = [Vector3::zeros(), Vector3::new(f64::NAN, 0.0, 0.0)];
        assert!(neighbor_list(&pts, 5.0).is_err());
        assert!(neighbor_list(&[Vector3::zeros()], 0.0).is_err());
        assert!(neighbor_list(&[Vector3::zeros()], -1.0).is_err());
    }

    #[test]
    fn single_and_empty() {
        assert!(neighbor_list(&[], 1.0).unwrap().is_empty());
        assert!(neighbor_list(&[Vector3::zeros()], 1.0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            coords in prop::collection::vec(prop::array::uniform3(-6.0f64..6.0), 0..100),
            cutoff in 0.3f64..5.0,
        ) {
            let pts: Vec<Vector3<f64>> = coords.iter().map(|c| Vector3::from(*c)).collect();
            let nl = neighbor_list(&pts, cutoff).unwrap();
            let expected = brute_force(&pts, cutoff);
            prop_assert_eq!(nl.edges(), expected.as_slice());
            for &(i, j) in nl.edges() {
                prop_assert!(nl.edges().binary_search(&(j, i)).is_ok());
            }
        }
    }

    #[test]
    fn twenty_atom_cloud() {
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(8);
        let pts: Vec<Vector3<f64>> = (0..20)
            .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-4.0..4.0)))
            .collect();
        assert_eq!(neighbor_list(&pts, 3.0).unwrap().edges(), brute_force(&pts, 3.0).as_slice());
    }
}
