use nalgebra::Vector3;
use std::f64::consts::PI;

use crate::autodiff::{Tensor, Var};
use crate::error::{invalid, Result};

/// Arithmetic needed to evaluate harmonics, so the same polynomial code runs
/// on plain numbers and on tape variables (columns of edge directions).
pub trait ShArith: Clone {
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    /// Constant `c` with the same shape as `self`.
    fn constant_like(&self, c: f64) -> Self;
}

impl ShArith for f64 {
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn constant_like(&self, c: f64) -> Self {
        c
    }
}

impl ShArith for Var<'_> {
    fn add(&self, o: &Self) -> Self {
        *self + *o
    }
    fn sub(&self, o: &Self) -> Self {
        *self - *o
    }
    fn mul(&self, o: &Self) -> Self {
        *self * *o
    }
    fn scale(&self, c: f64) -> Self {
        Var::scale(*self, c)
    }
    fn constant_like(&self, c: f64) -> Self {
        let (r, k) = self.shape();
        self.tape().constant(Tensor::filled(r, k, c))
    }
}

/// Flat index of `(l, m)`: `l² + l + m`.
pub fn sh_index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m) as usize
}

fn factorial_ratio(l: usize, m: usize) -> f64 {
    // (l - m)! / (l + m)!
    let mut r = 1.0;
    for k in (l - m + 1)..=(l + m) {
        r /= k as f64;
    }
    r
}

/// Real orthonormal harmonics up to `l_max` as Cartesian polynomials in the
/// components of a unit vector; no Condon–Shortley phase. Output is indexed
/// by [`sh_index`]. Finite at the poles.
pub fn sh_polynomials<T: ShArith>(l_max: usize, x: &T, y: &T, z: &T) -> Vec<T> {
    let one = z.constant_like(1.0);
    let zero = z.constant_like(0.0);
    let mut out: Vec<Option<T>> = vec![None; (l_max + 1) * (l_max + 1)];

    // a = Re (x + iy)^m, b = Im (x + iy)^m
    let mut a = one.clone();
    let mut b = zero;
    let mut q_diag = 1.0; // (2m - 1)!!
    for m in 0..=l_max {
        if m > 0 {
            let na = x.mul(&a).sub(&y.mul(&b));
            let nb = x.mul(&b).add(&y.mul(&a));
            a = na;
            b = nb;
            q_diag *= (2 * m - 1) as f64;
        }
        // q_l = d^m P_l / dz^m, by upward recurrence in l
        let mut q_prev: Option<T> = None;
        let mut q_cur = one.scale(q_diag);
        for l in m..=l_max {
            if l > m {
                let next = match &q_prev {
                    None => z.mul(&q_cur).scale((2 * m + 1) as f64),
                    Some(p) => z
                        .mul(&q_cur)
                        .scale((2 * l - 1) as f64)
                        .sub(&p.scale((l + m - 1) as f64))
                        .scale(1.0 / (l - m) as f64),
                };
                q_prev = Some(q_cur);
                q_cur = next;
            }
            let mut norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial_ratio(l, m)).sqrt();
            if m == 0 {
                out[sh_index(l, 0)] = Some(q_cur.scale(norm));
            } else {
                norm *= 2f64.sqrt();
                let nq = q_cur.scale(norm);
                out[sh_index(l, m as i64)] = Some(nq.mul(&a));
                out[sh_index(l, -(m as i64))] = Some(nq.mul(&b));
            }
        }
    }
    out.into_iter().map(|v| v.expect("all harmonics set")).collect()
}

/// Harmonic values for one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ShCoefficients {
    l_max: usize,
    values: Vec<f64>,
}

impl ShCoefficients {
    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        assert!(l <= self.l_max && m.unsigned_abs() as usize <= l, "({l}, {m}) out of range");
        self.values[sh_index(l, m)]
    }

    /// All `2l + 1` components of order `l`, `m = -l..=l`.
    pub fn order(&self, l: usize) -> &[f64] {
        &self.values[l * l..(l + 1) * (l + 1)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

pub fn real_spherical_harmonics(l_max: usize, direction: &Vector3<f64>) -> Result<ShCoefficients> {
    let n = direction.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("direction must be a unit vector, norm is {n}")));
    }
    Ok(ShCoefficients {
        l_max,
        values: sh_polynomials(l_max, &direction.x, &direction.y, &direction.z),
    })
}
