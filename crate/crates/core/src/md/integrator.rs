use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ForceProvider, ACCEL, BOLTZMANN};
use crate::error::{invalid, Error, Result};
use crate::training::metrics::percentile_sorted;

/// Velocities with each component drawn from `N(0, k_B T/m_i)` (converted
/// to Å²/fs²), then shifted so the total momentum vanishes.
pub fn maxwell_boltzmann(temperature: f64, masses: &[f64], rng: &mut StdRng) -> Result<Vec<Vector3<f64>>> {
    if !(temperature > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    check_masses(masses)?;
    let mut v: Vec<Vector3<f64>> = masses
        .iter()
        .map(|&m| {
            let s = (BOLTZMANN * temperature * ACCEL / m).sqrt();
            Vector3::from_fn(|_, _| -> f64 { s * Distribution::<f64>::sample(&StandardNormal, rng) })
        })
        .collect();
    let total_mass: f64 = masses.iter().sum();
    let p: Vector3<f64> = v.iter().zip(masses).map(|(v, &m)| v * m).sum();
    let drift = p / total_mass;
    for vi in &mut v {
        *vi -= drift;
    }
    Ok(v)
}

fn check_masses(masses: &[f64]) -> Result<()> {
    if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(invalid("masses must be positive and finite"));
    }
    Ok(())
}

/// kcal/mol
pub fn kinetic_energy(velocities: &[Vector3<f64>], masses: &[f64]) -> f64 {
    0.5 * velocities
        .iter()
        .zip(masses)
        .map(|(v, &m)| m * v.norm_squared())
        .sum::<f64>()
        / ACCEL
}

/// `2 KE / (3N k_B)`. All 3N degrees of freedom count, since the thermostat
/// acts on the centre of mass as well.
pub fn kinetic_temperature(velocities: &[Vector3<f64>], masses: &[f64]) -> f64 {
    2.0 * kinetic_energy(velocities, masses) / (3.0 * velocities.len() as f64 * BOLTZMANN)
}

#[derive(Clone, Debug)]
pub struct MdState {
    /// Å
    pub positions: Vec<Vector3<f64>>,
    /// Å/fs
    pub velocities: Vec<Vector3<f64>>,
    /// amu
    pub masses: Vec<f64>,
    /// Forces at the current positions, kcal/mol/Å.
    pub forces: Vec<Vector3<f64>>,
    /// Potential energy at the current positions, kcal/mol.
    pub energy: f64,
    /// fs
    pub time: f64,
    pub step: usize,
    pub rng: StdRng,
}

impl MdState {
    /// Evaluates forces at `positions`.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        velocities: Vec<Vector3<f64>>,
        masses: Vec<f64>,
        provider: &dyn ForceProvider,
        rng: StdRng,
    ) -> Result<Self> {
        if positions.len() != velocities.len() || positions.len() != masses.len() {
            return Err(invalid("positions, velocities and masses differ in length"));
        }
        check_masses(&masses)?;
        let (energy, forces) = evaluate(provider, &positions, 0)?;
        Ok(Self {
            positions,
            velocities,
            masses,
            forces,
            energy,
            time: 0.0,
            step: 0,
            rng,
        })
    }

    pub fn temperature(&self) -> f64 {
        kinetic_temperature(&self.velocities, &self.masses)
    }
}

fn evaluate(provider: &dyn ForceProvider, x: &[Vector3<f64>], step: usize) -> Result<(f64, Vec<Vector3<f64>>)> {
    let abort = |message: String| Error::SimulationAbort {
        step,
        message,
        positions: x.iter().map(|p| [p.x, p.y, p.z]).collect(),
    };
    if x.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(abort("positions are not finite".into()));
    }
    let (e, f) = provider.energy_forces(x).map_err(|e| abort(e.to_string()))?;
    if f.len() != x.len() {
        return Err(abort(format!("{} forces for {} atoms", f.len(), x.len())));
    }
    if !e.is_finite() || f.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(abort("non-finite energy or forces".into()));
    }
    Ok((e, f))
}

/// One BAOAB step: half kick, half drift, Ornstein–Uhlenbeck velocity
/// update `v ← c v + √(1−c²) σ ξ` with `c = e^{−γ dt}`, half drift, new
/// forces, half kick. With `γ = 0` and `T = 0` this is velocity Verlet.
pub fn langevin_step(
    state: &mut MdState,
    provider: &dyn ForceProvider,
    dt: f64,
    friction: f64,
    temperature: f64,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    if !(friction >= 0.0) || !(temperature >= 0.0) {
        return Err(invalid("friction and temperature must be non-negative"));
    }
    let half = 0.5 * dt;
    let n = state.positions.len();
    for i in 0..n {
        let a = state.forces[i] * (ACCEL / state.masses[i]);
        state.velocities[i] += a * half;
        state.positions[i] += state.velocities[i] * half;
    }
    if friction > 0.0 {
        let c = (-friction * dt).exp();
        let s = (1.0 - c * c).sqrt();
        for i in 0..n {
            let sigma = (BOLTZMANN * temperature * ACCEL / state.masses[i]).sqrt();
            let rng = &mut state.rng;
            let xi = Vector3::from_fn(|_, _| -> f64 { StandardNormal.sample(rng) });
            state.velocities[i] = state.velocities[i] * c + xi * (s * sigma);
        }
    }
    for i in 0..n {
        state.positions[i] += state.velocities[i] * half;
    }
    let (energy, forces) = evaluate(provider, &state.positions, state.step + 1)?;
    for i in 0..n {
        let a = forces[i] * (ACCEL / state.masses[i]);
        state.velocities[i] += a * half;
    }
    state.forces = forces;
    state.energy = energy;
    state.time += dt;
    state.step += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdConfig {
    pub steps: usize,
    /// fs
    pub dt: f64,
    /// 1/fs
    pub friction: f64,
    /// K
    pub temperature: f64,
    pub seed: u64,
    /// A frame is stored every this many steps.
    pub frame_every: usize,
}

impl Default for MdConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            dt: 1.0,
            friction: 0.1,
            temperature: 500.0,
            seed: 0,
            frame_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub step: usize,
    pub time: f64,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub forces: Vec<Vector3<f64>>,
    pub energy: f64,
    pub temperature: f64,
}

/// Mean, 95th percentile and maximum of per-atom force norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceStats {
    pub step: usize,
    pub mean: f64,
    pub q95: f64,
    pub max: f64,
}

impl ForceStats {
    pub fn of(step: usize, forces: &[Vector3<f64>]) -> Self {
        let mut norms: Vec<f64> = forces.iter().map(|f| f.norm()).collect();
        norms.sort_by(f64::total_cmp);
        Self {
            step,
            mean: norms.iter().sum::<f64>() / norms.len() as f64,
            q95: percentile_sorted(&norms, 95.0),
            max: norms[norms.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    /// One entry per step including step 0.
    pub force_stats: Vec<ForceStats>,
    /// Kinetic temperature after each step including step 0.
    pub temperatures: Vec<f64>,
}

impl Trajectory {
    /// Time average of the kinetic temperature over steps `from..`.
    pub fn mean_temperature(&self, from: usize) -> f64 {
        let t = &self.temperatures[from.min(self.temperatures.len() - 1)..];
        t.iter().sum::<f64>() / t.len() as f64
    }

    pub fn positions(&self) -> Vec<Vec<Vector3<f64>>> {
        self.frames.iter().map(|f| f.positions.clone()).collect()
    }
}

fn frame_of(s: &MdState) -> Frame {
    Frame {
        step: s.step,
        time: s.time,
        positions: s.positions.clone(),
        velocities: s.velocities.clone(),
        forces: s.forces.clone(),
        energy: s.energy,
        temperature: s.temperature(),
    }
}

/// Maxwell–Boltzmann start at `cfg.temperature`, then `cfg.steps` BAOAB
/// steps. Velocities and thermostat noise come from one generator seeded
/// with `cfg.seed`, so equal inputs give bit-identical trajectories.
pub fn run(
    positions: &[Vector3<f64>],
    masses: &[f64],
    provider: &dyn ForceProvider,
    cfg: &MdConfig,
) -> Result<Trajectory> {
    if cfg.frame_every == 0 {
        return Err(invalid("frame interval must be positive"));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let velocities = if cfg.temperature > 0.0 {
        maxwell_boltzmann(cfg.temperature, masses, &mut rng)?
    } else {
        vec![Vector3::zeros(); masses.len()]
    };
    let mut state = MdState::new(positions.to_vec(), velocities, masses.to_vec(), provider, rng)?;
    let mut traj = Trajectory {
        frames: vec![frame_of(&state)],
        force_stats: vec![ForceStats::of(0, &state.forces)],
        temperatures: vec![state.temperature()],
    };
    for _ in 0..cfg.steps {
        langevin_step(&mut state, provider, cfg.dt, cfg.friction, cfg.temperature)?;
        traj.force_stats.push(ForceStats::of(state.step, &state.forces));
        traj.temperatures.push(state.temperature());
        if state.step % cfg.frame_every == 0 {
            traj.frames.push(frame_of(&state));
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_forces(x: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
        Ok((0.0, vec![Vector3::zeros(); x.len()]))
    }

    /// `E = ½ k x²` along x for every atom.
    fn spring(k: f64) -> impl Fn(&[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
        move |x: &[Vector3<f64>]| {
            let e = x.iter().map(|p| 0.5 * k * p.x * p.x).sum();
            Ok((e, x.iter().map(|p| Vector3::new(-k * p.x, 0.0, 0.0)).collect()))
        }
    }

    #[test]
    fn momentum_is_removed() {
        let masses: Vec<f64> = (0..50).map(|k| 1.0 + k as f64).collect();
        let v = maxwell_boltzmann(300.0, &masses, &mut StdRng::seed_from_u64(1)).unwrap();
        let p: Vector3<f64> = v.iter().zip(&masses).map(|(v, &m)| v * m).sum();
        assert!(p.amax() < 1e-10);
        assert!(maxwell_boltzmann(0.0, &masses, &mut StdRng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn equipartition_at_500k() {
        let masses = vec![12.011; 10_000];
        let v = maxwell_boltzmann(500.0, &masses, &mut StdRng::seed_from_u64(2)).unwrap();
        let t = kinetic_temperature(&v, &masses);
        // sampling error of the mean of 3N chi-square(1) terms is √(2/3N) ≈ 0.8%
        assert!((t / 500.0 - 1.0).abs() < 0.03, "{t}");
    }

    #[test]
    fn seeded_velocities_repeat() {
        let masses = vec![1.0, 16.0, 1.0];
        let a = maxwell_boltzmann(500.0, &masses, &mut StdRng::seed_from_u64(3)).unwrap();
        let b = maxwell_boltzmann(500.0, &masses, &mut StdRng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn free_flight_is_linear() {
        let x0 = vec![Vector3::new(1.0, -2.0, 0.5)];
        let v0 = vec![Vector3::new(0.01, 0.02, -0.03)];
        let mut s = MdState::new(x0.clone(), v0.clone(), vec![2.0], &zero_forces, StdRng::seed_from_u64(0)).unwrap();
        for _ in 0..1000 {
            langevin_step(&mut s, &zero_forces, 0.5, 0.0, 300.0).unwrap();
        }
        let want = x0[0] + v0[0] * 500.0;
        assert!((s.positions[0] - want).amax() < 1e-12);
        assert_eq!(s.velocities, v0);
    }

    #[test]
    fn one_step_equals_velocity_verlet() {
        let f = spring(3.0);
        let x0 = vec![Vector3::new(0.7, 0.0, 0.0), Vector3::new(-0.2, 1.0, 0.0)];
        let v0 = vec![Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.02)];
        let m = vec![1.5, 4.0];
        let mut s = MdState::new(x0.clone(), v0.clone(), m.clone(), &f, StdRng::seed_from_u64(0)).unwrap();
        langevin_step(&mut s, &f, 1.0, 0.0, 0.0).unwrap();
        let (_, f0) = f(&x0).unwrap();
        let x1: Vec<Vector3<f64>> = (0..2).map(|i| x0[i] + v0[i] + f0[i] * (ACCEL / m[i] * 0.5)).collect();
        let (_, f1) = f(&x1).unwrap();
        for i in 0..2 {
            let v1 = v0[i] + (f0[i] + f1[i]) * (ACCEL / m[i] * 0.5);
            assert!((s.positions[i] - x1[i]).amax() < 1e-15);
            assert!((s.velocities[i] - v1).amax() < 1e-15);
        }
    }

    #[test]
    fn harmonic_energy_is_conserved() {
        let k = 1.0;
        let f = spring(k);
        let m = 1.0;
        // ω = √(k·ACCEL/m) ≈ 0.02/fs, so dt = 1 fs resolves the period well
        let mut s = MdState::new(
            vec![Vector3::new(0.3, 0.0, 0.0)],
            vec![Vector3::zeros()],
            vec![m],
            &f,
            StdRng::seed_from_u64(0),
        )
        .unwrap();
        let total = |s: &MdState| s.energy + kinetic_energy(&s.velocities, &s.masses);
        let e0 = total(&s);
        let mut energies = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            langevin_step(&mut s, &f, 1.0, 0.0, 0.0).unwrap();
            energies.push(total(&s));
        }
        // Verlet energy oscillates by about (ω dt)²/4 within a period; the
        // drift is the change of its average between the first and last
        // 10⁴ steps (about 33 periods each)
        let mean = |e: &[f64]| e.iter().sum::<f64>() / e.len() as f64;
        let drift = (mean(&energies[90_000..]) - mean(&energies[..10_000])).abs() / e0;
        assert!(drift < 1e-4, "relative drift {drift}");
        let omega = (k * ACCEL / m).sqrt();
        let worst = energies.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max);
        assert!(worst < omega * omega / 2.0, "oscillation {worst}");
    }

    #[test]
    fn thermostat_reaches_target_on_a_harmonic_well() {
        let f = spring(2.0);
        let traj = run(
            &[Vector3::new(0.1, 0.0, 0.0), Vector3::new(-0.1, 0.0, 0.0)],
            &[1.0, 1.0],
            &|x: &[Vector3<f64>]| f(x),
            &MdConfig {
                steps: 20_000,
                seed: 4,
                frame_every: 1000,
                ..MdConfig::default()
            },
        )
        .unwrap();
        let t = traj.mean_temperature(1000);
        assert!((t / 500.0 - 1.0).abs() < 0.1, "{t}");
    }

    #[test]
    fn non_finite_forces_abort_with_the_frame() {
        let bad = |x: &[Vector3<f64>]| -> Result<(f64, Vec<Vector3<f64>>)> {
            Ok((0.0, vec![Vector3::new(f64::NAN, 0.0, 0.0); x.len()]))
        };
        match MdState::new(vec![Vector3::new(1.0, 2.0, 3.0)], vec![Vector3::zeros()], vec![1.0], &bad, StdRng::seed_from_u64(0)) {
            Err(Error::SimulationAbort { step, positions, .. }) => {
                assert_eq!(step, 0);
                assert_eq!(positions, vec![[1.0, 2.0, 3.0]]);
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn zero_steps_is_the_initial_frame() {
        let f = spring(1.0);
        let x = vec![Vector3::new(0.2, 0.0, 0.0)];
        let t = run(&x, &[1.0], &|p: &[Vector3<f64>]| f(p), &MdConfig { steps: 0, ..MdConfig::default() }).unwrap();
        assert_eq!(t.frames.len(), 1);
        assert_eq!(t.frames[0].positions, x);
        assert_eq!(t.force_stats.len(), 1);
    }

    #[test]
    fn runs_repeat_bit_exactly() {
        let f = spring(1.0);
        let x = vec![Vector3::new(0.2, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
        let cfg = MdConfig { steps: 300, seed: 7, frame_every: 7, ..MdConfig::default() };
        let a = run(&x, &[1.0, 2.0], &|p: &[Vector3<f64>]| f(p), &cfg).unwrap();
        let b = run(&x, &[1.0, 2.0], &|p: &[Vector3<f64>]| f(p), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), 1 + 300 / 7);
        let c = run(&x, &[1.0, 2.0], &|p: &[Vector3<f64>]| f(p), &MdConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn force_stats_of_known_norms() {
        let f: Vec<Vector3<f64>> = (1..=20).map(|k| Vector3::new(0.0, k as f64, 0.0)).collect();
        let s = ForceStats::of(3, &f);
        assert_eq!(s.mean, 10.5);
        assert_eq!(s.max, 20.0);
        assert!((s.q95 - 19.05).abs() < 1e-12);
    }
}
