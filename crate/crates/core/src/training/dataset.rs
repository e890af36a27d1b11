use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::path::Path;

use super::extxyz::{parse_extxyz, write_extxyz};
use crate::error::{Error, Result};
use crate::structure::AtomicConfiguration;

/// Fraction of frames held out for validation and for testing when frames
/// carry no `split=` tag.
pub const VALID_FRACTION: f64 = 0.1;
pub const TEST_FRACTION: f64 = 0.1;

/// Labelled configurations split into train, validation and test sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<AtomicConfiguration>,
    pub valid: Vec<AtomicConfiguration>,
    pub test: Vec<AtomicConfiguration>,
    /// Synthetic generator description or source path.
    pub provenance: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl Dataset {
    /// Every frame must have an energy and forces. If all frames carry a
    /// `split=train|valid|test` tag it is used; otherwise frames are
    /// shuffled with `seed` and split 80/10/10 (at least one validation
    /// frame when there are two or more).
    pub fn from_frames(frames: Vec<AtomicConfiguration>, provenance: impl Into<String>, seed: u64) -> Result<Self> {
        for (k, f) in frames.iter().enumerate() {
            f.validate()?;
            if f.energy.is_none() {
                return Err(Error::Schema(format!("frame {k} has no energy")));
            }
            if f.forces.is_none() {
                return Err(Error::Schema(format!("frame {k} has no forces")));
            }
        }
        let tags: Vec<Option<Split>> = frames
            .iter()
            .map(|f| {
                f.info.iter().find(|(k, _)| k == "split").and_then(|(_, v)| match v.as_str() {
                    "train" => Some(Split::Train),
                    "valid" => Some(Split::Valid),
                    "test" => Some(Split::Test),
                    _ => None,
                })
            })
            .collect();
        let mut out = Self {
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            provenance: provenance.into(),
        };
        if !frames.is_empty() && tags.iter().all(Option::is_some) {
            for (f, t) in frames.into_iter().zip(tags) {
                out.split_mut(t.unwrap()).push(f);
            }
            return Ok(out);
        }
        let n = frames.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut StdRng::seed_from_u64(seed));
        let n_valid = if n >= 2 { ((n as f64 * VALID_FRACTION).round() as usize).max(1) } else { 0 };
        let n_test = ((n as f64 * TEST_FRACTION).round() as usize).min(n - n_valid);
        let mut frames: Vec<Option<AtomicConfiguration>> = frames.into_iter().map(Some).collect();
        for (rank, &k) in order.iter().enumerate() {
            let f = frames[k].take().expect("each frame is used once");
            if rank < n_valid {
                out.valid.push(f);
            } else if rank < n_valid + n_test {
                out.test.push(f);
            } else {
                out.train.push(f);
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_frames(parse_extxyz(&text)?, path.display().to_string(), seed)
    }

    /// All frames tagged with their split.
    pub fn to_extxyz(&self) -> Result<String> {
        let mut frames = Vec::new();
        for split in [Split::Train, Split::Valid, Split::Test] {
            for f in self.split(split) {
                let mut f = f.clone();
                f.info.retain(|(k, _)| k != "split");
                f.info.push(("split".into(), split.name().into()));
                frames.push(f);
            }
        }
        write_extxyz(&frames)
    }

    pub fn split(&self, split: Split) -> &[AtomicConfiguration] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<AtomicConfiguration> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sorted atomic numbers present in any split.
    pub fn species(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self
            .train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .flat_map(|f| f.species.iter().copied())
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Mean reference energy per atom over the training split.
    pub fn mean_energy_per_atom(&self) -> f64 {
        let (e, n) = self.train.iter().fold((0.0, 0usize), |(e, n), f| {
            (e + f.energy.unwrap_or(0.0), n + f.len())
        });
        if n == 0 {
            0.0
        } else {
            e / n as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn frame(k: usize) -> AtomicConfiguration {
        let mut f = AtomicConfiguration::new(vec![1], vec![Vector3::new(k as f64, 0.0, 0.0)]);
        f.energy = Some(k as f64);
        f.forces = Some(vec![Vector3::zeros()]);
        f
    }

    #[test]
    fn splits_are_disjoint_and_complete() {
        let d = Dataset::from_frames((0..50).map(frame).collect(), "test", 3).unwrap();
        assert_eq!((d.train.len(), d.valid.len(), d.test.len()), (40, 5, 5));
        let mut ids: Vec<f64> = d.train.iter().chain(&d.valid).chain(&d.test).map(|f| f.energy.unwrap()).collect();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, (0..50).map(|k| k as f64).collect::<Vec<_>>());
        let again = Dataset::from_frames((0..50).map(frame).collect(), "test", 3).unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn missing_labels_are_a_schema_error() {
        let mut f = frame(0);
        f.energy = None;
        assert!(matches!(Dataset::from_frames(vec![f], "x", 0), Err(Error::Schema(_))));
        let mut f = frame(0);
        f.forces = None;
        assert!(matches!(Dataset::from_frames(vec![f], "x", 0), Err(Error::Schema(_))));
    }

    #[test]
    fn split_tags_survive_a_file_roundtrip() {
        let d = Dataset::from_frames((0..20).map(frame).collect(), "test", 9).unwrap();
        let text = d.to_extxyz().unwrap();
        let back = Dataset::from_frames(parse_extxyz(&text).unwrap(), "test", 1).unwrap();
        let energies = |v: &[AtomicConfiguration]| v.iter().map(|f| f.energy.unwrap()).collect::<Vec<_>>();
        assert_eq!(energies(&back.train), energies(&d.train));
        assert_eq!(energies(&back.valid), energies(&d.valid));
        assert_eq!(energies(&back.test), energies(&d.test));
    }
}
