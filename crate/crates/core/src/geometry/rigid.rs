use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Proper rigid motion `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Z-Y-Z Euler rotation `R_z(phi) R_y(theta) R_z(psi)` with no translation.
    pub fn from_euler(phi: f64, theta: f64, psi: f64) -> Self {
        Self::new(rot_z(phi) * rot_y(theta) * rot_z(psi), Vector3::zeros())
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Haar-uniform rotation (normalised Gaussian quaternion).
    pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q = Quaternion::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            if q.norm() > 1e-6 {
                let unit = UnitQuaternion::from_quaternion(q);
                return Self::new(unit.to_rotation_matrix().into_inner(), Vector3::zeros());
            }
        }
    }

    /// Random rotation plus a translation with components uniform in
    /// `[-max_shift, max_shift]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_shift: f64) -> Self {
        let mut m = Self::random_rotation(rng);
        m.translation = Vector3::from_fn(|_, _| rng.gen_range(-max_shift..=max_shift));
        m
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        apply_rigid(self, points)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// Largest deviation of `RᵀR` from the identity and of `det R` from one.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.abs().max().max((self.rotation.determinant() - 1.0).abs())
    }
}

pub fn rotation_from_euler(phi: f64, theta: f64, psi: f64) -> RigidMotion {
    RigidMotion::from_euler(phi, theta, psi)
}

pub fn apply_rigid(motion: &RigidMotion, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| motion.apply_point(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(RigidMotion::from_euler(0.0, 0.0, 0.0).rotation, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = RigidMotion::from_euler(FRAC_PI_2, 0.0, 0.0);
        let y = r.apply_point(&Vector3::x());
        assert!((y - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn north_pole_image_ignores_last_angle() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let (phi, theta, psi) = (
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..PI),
                rng.gen_range(0.0..2.0 * PI),
            );
            let n = RigidMotion::from_euler(phi, theta, psi).apply_point(&Vector3::z());
            let expect = Vector3::new(phi.cos() * theta.sin(), phi.sin() * theta.sin(), theta.cos());
            assert!((n - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn euler_rotations_are_proper() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = RigidMotion::from_euler(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            assert!(r.orthogonality_error() < 1e-12);
        }
    }

    #[test]
    fn random_motions_are_proper_and_invert() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let m = RigidMotion::random(&mut rng, 3.0);
            assert!(m.orthogonality_error() < 1e-12);
            let p = Vector3::new(0.3, -1.2, 2.5);
            let back = m.inverse().apply_point(&m.apply_point(&p));
            assert!((back - p).norm() < 1e-13);
        }
    }

    #[test]
    fn identity_and_translation() {
        let pts = vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-0.5, 0.0, 4.0)];
        assert_eq!(RigidMotion::identity().apply(&pts), pts);
        let moved = RigidMotion::translation(Vector3::new(5.0, -1.0, 0.25)).apply(&pts);
        assert_eq!(moved[1] - moved[0], pts[1] - pts[0]);
    }

    #[test]
    fn distances_preserved_on_random_cloud() {
        let mut rng = StdRng::seed_from_u64(21);
        let cloud: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        for _ in 0..50 {
            let m = RigidMotion::random(&mut rng, 10.0);
            let moved = m.apply(&cloud);
            for i in 0..5 {
                for j in 0..5 {
                    let before = (cloud[i] - cloud[j]).norm();
                    let after = (moved[i] - moved[j]).norm();
                    assert!((before - after).abs() < 1e-12);
                }
            }
        }
    }
}
