use std::f64::consts::PI;

use crate::autodiff::{Tensor, Var};
use crate::error::{invalid, Result};

/// Polynomial cutoff `u(x) = 1 − (p+1)(p+2)/2 xᵖ + p(p+2) xᵖ⁺¹ − p(p+1)/2 xᵖ⁺²`.
/// `u(0) = 1`; at `x = 1` it vanishes together with its first two
/// derivatives.
pub fn envelope(x: f64, p: u32) -> f64 {
    if x >= 1.0 {
        return 0.0;
    }
    let pf = p as f64;
    let xp = x.powi(p as i32);
    1.0 - (pf + 1.0) * (pf + 2.0) / 2.0 * xp + pf * (pf + 2.0) * xp * x
        - pf * (pf + 1.0) / 2.0 * xp * x * x
}

/// Bessel radial basis `√(2/r_c) sin(mπr/r_c)/r`, `m = 1..=n`, times the
/// polynomial envelope when `envelope_p` is given. Zero for `r ≥ r_c`.
pub fn radial_basis(r: f64, r_c: f64, n: usize, envelope_p: Option<u32>) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(invalid(format!("radial distance must be positive, got {r}")));
    }
    if !(r_c > 0.0) {
        return Err(invalid(format!("cutoff must be positive, got {r_c}")));
    }
    if r >= r_c {
        return Ok(vec![0.0; n]);
    }
    let env = envelope_p.map_or(1.0, |p| envelope(r / r_c, p));
    let pre = (2.0 / r_c).sqrt();
    Ok((1..=n)
        .map(|m| pre * (m as f64 * PI * r / r_c).sin() / r * env)
        .collect())
}

/// Radial basis for an `E × 1` column of distances (all below the cutoff),
/// `E × n`.
pub fn radial_basis_on_tape<'t>(dist: Var<'t>, r_c: f64, n: usize, p: u32) -> Var<'t> {
    let tape = dist.tape();
    let e = dist.shape().0;
    let freqs: Vec<f64> = (1..=n).map(|m| m as f64 * PI / r_c).collect();
    let arg = dist.broadcast_cols(n) * tape.constant(Tensor::row(&freqs)).broadcast_rows(e);
    let bessel = arg.sin().scale((2.0 / r_c).sqrt()) / dist.broadcast_cols(n);

    let x = dist.scale(1.0 / r_c);
    let mut xp = x;
    for _ in 1..p {
        xp = xp * x;
    }
    let pf = p as f64;
    let xp1 = xp * x;
    let xp2 = xp1 * x;
    let env = (xp.scale(-(pf + 1.0) * (pf + 2.0) / 2.0)
        + xp1.scale(pf * (pf + 2.0))
        + xp2.scale(-pf * (pf + 1.0) / 2.0))
    .add_scalar(1.0);
    bessel * env.broadcast_cols(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn vanishes_at_and_beyond_cutoff() {
        assert_eq!(radial_basis(5.0, 5.0, 8, Some(6)).unwrap(), vec![0.0; 8]);
        assert_eq!(radial_basis(7.0, 5.0, 3, None).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn small_radius_limit_is_finite() {
        let b = radial_basis(1e-6, 5.0, 8, Some(6)).unwrap();
        assert!(b.iter().all(|v| v.is_finite()));
        let limit = (2.0f64 / 5.0).sqrt() * PI / 5.0;
        assert!((b[0] - limit).abs() < 1e-9);
    }

    #[test]
    fn half_cutoff_matches_direct_formula() {
        let rc = 4.0;
        let r = rc / 2.0;
        let b = radial_basis(r, rc, 2, None).unwrap();
        let pre = (2.0f64 / rc).sqrt();
        // sin(π/2) = 1, sin(π) ≈ 0
        assert!((b[0] - pre * (PI / 2.0).sin() / r).abs() < 1e-14);
        assert!((b[1] - pre * PI.sin() / r).abs() < 1e-14);
    }

    #[test]
    fn envelope_shape() {
        for p in [2, 5, 6] {
            assert_eq!(envelope(0.0, p), 1.0);
            assert!(envelope(1.0 - 1e-12, p).abs() < 1e-9);
            // first derivative vanishes at 1
            let h = 1e-5;
            let d = (envelope(1.0 - h, p) - envelope(1.0 - 2.0 * h, p)) / h;
            assert!(d.abs() < 1e-6, "p={p} slope {d}");
        }
    }

    #[test]
    fn nonpositive_radius_is_rejected() {
        assert!(radial_basis(0.0, 5.0, 2, None).is_err());
        assert!(radial_basis(-1.0, 5.0, 2, None).is_err());
        assert!(radial_basis(1.0, 0.0, 2, None).is_err());
    }

    #[test]
    fn tape_matches_numeric() {
        let rs = [0.3, 1.5, 2.9, 4.99];
        let tape = Tape::new();
        let d = tape.leaf(Tensor::column(&rs));
        let b = radial_basis_on_tape(d, 5.0, 8, 6).value();
        for (e, &r) in rs.iter().enumerate() {
            let want = radial_basis(r, 5.0, 8, Some(6)).unwrap();
            for m in 0..8 {
                assert!((b.get(e, m) - want[m]).abs() < 1e-13);
            }
        }
    }
}
