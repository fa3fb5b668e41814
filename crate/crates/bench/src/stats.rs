//! Sample statistics for timing runs.

/// Nearest-rank quantile of an ascending-sorted sample:
/// `sorted[min(floor(p * n), n - 1)]`. For 25 samples the 20%, 50% and 80%
/// quantiles are indices 5, 12 and 20.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level out of range");
    let idx = ((p * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    sorted[idx]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub q20: f64,
    pub median: f64,
    pub q80: f64,
    pub mean: f64,
    /// Sample standard deviation over mean. Zero for constant samples.
    pub cv: f64,
}

pub fn summarize(samples: &[f64]) -> Summary {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = if sorted.len() > 1 {
        sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Summary {
        q20: quantile_sorted(&sorted, 0.2),
        median: quantile_sorted(&sorted, 0.5),
        q80: quantile_sorted(&sorted, 0.8),
        mean,
        cv: if mean != 0.0 { var.sqrt() / mean } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_indices() {
        let s: Vec<f64> = (0..25).map(f64::from).collect();
        assert_eq!(quantile_sorted(&s, 0.2), 5.0);
        assert_eq!(quantile_sorted(&s, 0.5), 12.0);
        assert_eq!(quantile_sorted(&s, 0.8), 20.0);
        assert_eq!(quantile_sorted(&s, 1.0), 24.0);
        assert_eq!(quantile_sorted(&[3.0], 0.8), 3.0);
    }

    #[test]
    fn constant_samples() {
        let s = summarize(&[2.5; 25]);
        assert_eq!((s.q20, s.median, s.q80, s.cv), (2.5, 2.5, 2.5, 0.0));
    }

    proptest! {
        #[test]
        fn ordering(v in prop::collection::vec(0.0f64..1e6, 1..60)) {
            let s = summarize(&v);
            prop_assert!(s.q20 <= s.median && s.median <= s.q80);
            prop_assert!(v.contains(&s.median));
        }
    }
}
