use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Mean and tail statistics of absolute errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailMetrics {
    pub mae: f64,
    pub q95: f64,
    pub q99: f64,
    pub max: f64,
}

/// Percentile of sorted data by linear interpolation between order
/// statistics: rank `p/100·(n−1)`, zero-based (numpy's default `linear`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// MAE, Q95, Q99 and MAX of absolute errors. Percentiles use
/// [`percentile_sorted`]; the result does not depend on sample order.
pub fn tail_metrics(abs_errors: &[f64]) -> Result<TailMetrics> {
    if abs_errors.is_empty() {
        return Err(invalid("tail metrics need at least one error"));
    }
    if abs_errors.iter().any(|e| !e.is_finite()) {
        return Err(invalid("errors must be finite"));
    }
    let mut sorted = abs_errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(TailMetrics {
        mae: sorted.iter().sum::<f64>() / n,
        q95: percentile_sorted(&sorted, 95.0),
        q99: percentile_sorted(&sorted, 99.0),
        max: sorted[sorted.len() - 1],
    })
}

/// `(b − m)/b · 100` per element. Positive values mean the gated series is
/// lower (better) than the baseline.
pub fn validation_ratio(baseline: &[f64], gated: &[f64]) -> Result<Vec<f64>> {
    if baseline.len() != gated.len() {
        return Err(invalid(format!(
            "series lengths differ: {} vs {}",
            baseline.len(),
            gated.len()
        )));
    }
    baseline
        .iter()
        .zip(gated)
        .enumerate()
        .map(|(index, (&b, &m))| {
            if b == 0.0 {
                Err(Error::UndefinedRatio { index })
            } else {
                Ok((b - m) / b * 100.0)
            }
        })
        .collect()
}

pub fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
}

pub fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = (v.len() - 1) as f64 * p;
        let k = h as usize;
        if k + 1 >= v.len() {
            return v[v.len() - 1];
        }
        v[k] * (1.0 - (h - k as f64)) + v[k + 1] * (h - k as f64)
    }

    #[test]
    fn constant_errors() {
        let m = tail_metrics(&[0.7; 13]).unwrap();
        assert_eq!((m.mae, m.q95, m.q99, m.max), (0.7, 0.7, 0.7, 0.7));
    }

    #[test]
    fn one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let m = tail_metrics(&v).unwrap();
        assert!(m.q95 > 95.0 && m.q95 < 96.0);
        assert!((m.q95 - 95.05).abs() < 1e-12);
        assert!((m.q99 - 99.01).abs() < 1e-12);
        assert_eq!(m.max, 100.0);
        assert_eq!(m.mae, 50.5);
    }

    #[test]
    fn empty_or_nan_rejected() {
        assert!(tail_metrics(&[]).is_err());
        assert!(tail_metrics(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn single_value() {
        let m = tail_metrics(&[3.0]).unwrap();
        assert_eq!(m.q99, 3.0);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(validation_ratio(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(validation_ratio(&[2.0], &[1.0]).unwrap(), vec![50.0]);
        assert_eq!(validation_ratio(&[1.0], &[2.0]).unwrap(), vec![-100.0]);
        assert!(matches!(
            validation_ratio(&[1.0, 0.0], &[1.0, 1.0]),
            Err(Error::UndefinedRatio { index: 1 })
        ));
        assert!(validation_ratio(&[1.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn matches_sort_and_interpolate(v in prop::collection::vec(0.0f64..10.0, 1..300)) {
            let m = tail_metrics(&v).unwrap();
            prop_assert!((m.q95 - oracle(&v, 0.95)).abs() <= 1e-12 * m.max.max(1.0));
            prop_assert!((m.q99 - oracle(&v, 0.99)).abs() <= 1e-12 * m.max.max(1.0));
            prop_assert_eq!(m.max, v.iter().cloned().fold(f64::MIN, f64::max));
        }

        #[test]
        fn order_does_not_matter(mut v in prop::collection::vec(0.0f64..10.0, 1..100), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let a = tail_metrics(&v).unwrap();
            v.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
            let b = tail_metrics(&v).unwrap();
            prop_assert_eq!(a.q95, b.q95);
            prop_assert_eq!(a.q99, b.q99);
            prop_assert_eq!(a.max, b.max);
            prop_assert!((a.mae - b.mae).abs() < 1e-12);
        }

        #[test]
        fn ratio_formula(pairs in prop::collection::vec((0.01f64..10.0, 0.0f64..10.0), 1..50)) {
            let (b, m): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = validation_ratio(&b, &m).unwrap();
            for k in 0..b.len() {
                prop_assert_eq!(r[k], (b[k] - m[k]) / b[k] * 100.0);
                prop_assert_eq!(r[k] > 0.0, m[k] < b[k]);
            }
        }
    }
}
