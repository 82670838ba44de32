//! Small numeric helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier-compensated sum.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Sample variance with divisor `n - 1`; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

/// Sample covariance with divisor `n - 1`.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb))) / (n - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (variance(values) / values.len() as f64).sqrt()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided normal critical value for a `level` interval (0.95 -> 1.96).
pub fn z_crit(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

/// Normal-approximation 95% confidence interval.
pub fn ci95(estimate: f64, se: f64) -> (f64, f64) {
    let z = z_crit(0.95);
    (estimate - z * se, estimate + z * se)
}

/// Derives an independent stream seed from a master seed and an index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined state
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(v), 2.0);
    }

    #[test]
    fn variance_and_covariance() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((variance(&a) - 5.0 / 3.0).abs() < 1e-15);
        assert!((covariance(&a, &a) - variance(&a)).abs() < 1e-15);
        assert_eq!(variance(&[3.0]), 0.0);
    }

    #[test]
    fn critical_value() {
        assert!((z_crit(0.95) - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }
}
