use crate::autodiff::Tensor;

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Updates each parameter paired with `Some(gradient)`; `None` leaves the
    /// parameter and its moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params[k].data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut opt = Adam::new(&[(1, 2)]);
        let mut p = Tensor::row(&[1.0, -1.0]);
        opt.step(&mut [&mut p], &[Some(Tensor::row(&[3.0, -0.5]))], 0.1);
        assert!((p.get(0, 0) - 0.9).abs() < 1e-7);
        assert!((p.get(0, 1) + 0.9).abs() < 1e-7);
    }

    #[test]
    fn matches_hand_computed_second_step() {
        let mut opt = Adam::new(&[(1, 1)]);
        let mut p = Tensor::scalar(0.0);
        let (g1, g2) = (1.0, 2.0);
        opt.step(&mut [&mut p], &[Some(Tensor::scalar(g1))], 0.01);
        opt.step(&mut [&mut p], &[Some(Tensor::scalar(g2))], 0.01);
        let m = 0.9 * 0.1 * g1 + 0.1 * g2;
        let v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
        let step2 = 0.01 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let step1 = 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() + step1 + step2).abs() < 1e-15);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut opt = Adam::new(&[(1, 3)]);
        let mut p = Tensor::row(&[5.0, -3.0, 2.0]);
        for _ in 0..2000 {
            let g = p.map(|x| 2.0 * (x - 1.0));
            opt.step(&mut [&mut p], &[Some(g)], 0.05);
        }
        assert!(p.data().iter().all(|x| (x - 1.0).abs() < 1e-3));
    }

    #[test]
    fn skipped_parameters_stay_bit_identical() {
        let mut opt = Adam::new(&[(1, 1), (1, 1)]);
        let mut a = Tensor::scalar(0.123);
        let mut b = Tensor::scalar(0.456);
        for _ in 0..10 {
            opt.step(&mut [&mut a, &mut b], &[None, Some(Tensor::scalar(1.0))], 0.1);
        }
        assert_eq!(a.item().to_bits(), 0.123f64.to_bits());
        assert_ne!(b.item(), 0.456);
    }
}
