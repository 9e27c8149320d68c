use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Nearest-rank quantile: sort ascending and take the element at 1-based rank
/// `⌈q·K⌉` (rank 1 when `q = 0`).
///
/// The rank is computed with a 1e-9 slack so that e.g. `(1 - 1/3)·9` lands on 6
/// rather than 7 after rounding.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(alloc::format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = sorted.len();
    let rank = libm::ceil(q * k as f64 - 1e-9).max(1.0) as usize;
    Ok(sorted[rank.min(k) - 1])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (1/n) standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    libm::sqrt(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let v = [0.4, 0.1, 0.3, 0.2];
        assert_eq!(quantile(&v, 0.75).unwrap(), 0.3);
        assert_eq!(quantile(&v, 1.0).unwrap(), 0.4);
        assert_eq!(quantile(&v, 0.0).unwrap(), 0.1);
        let nine: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        assert_eq!(quantile(&nine, 1.0 - 3.0 / 9.0).unwrap(), 6.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(quantile(&[], 0.5), Err(Error::Empty(_))));
        assert!(quantile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn std_population() {
        let s = population_std(&[1.0, 2.0, 3.0]);
        assert!((s - libm::sqrt(2.0 / 3.0)).abs() < 1e-15);
    }
}
