//! One-sided Wilcoxon signed-rank test for paired samples.
//!
//! Alternative: the first sample tends to exceed the second. Zero
//! differences are dropped before ranking, ties get average ranks. Up to 20
//! nonzero pairs the p-value is exact (a subset-sum count over sign
//! assignments, equivalent to enumerating all 2^n of them); larger samples
//! use the normal approximation with tie and continuity corrections.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

const EXACT_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum WilcoxonError {
    #[error("paired samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 5 pairs, got {0}")]
    TooFewPairs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    ExactEnumeration,
    NormalApproximation,
    /// Every difference was zero; the test statistic carries no information
    /// and the p-value is reported as the 1.0 sentinel.
    Undefined,
}

#[derive(Debug, Clone)]
pub struct WilcoxonOutcome {
    /// Sum of the ranks of positive differences.
    pub t_plus: f64,
    /// Nonzero pairs that entered the ranking.
    pub n_used: usize,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Test whether `a` tends to be greater than `b` (one-sided, paired).
pub fn wilcoxon_one_sided(a: &[f64], b: &[f64]) -> Result<WilcoxonOutcome, WilcoxonError> {
    if a.len() != b.len() {
        return Err(WilcoxonError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 5 {
        return Err(WilcoxonError::TooFewPairs(a.len()));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonOutcome {
            t_plus: 0.0,
            n_used: 0,
            p_value: 1.0,
            method: PValueMethod::Undefined,
        });
    }

    let ranks = average_ranks(&diffs);
    let t_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    if n <= EXACT_LIMIT {
        let p = exact_p_geq(&ranks, t_plus);
        Ok(WilcoxonOutcome {
            t_plus,
            n_used: n,
            p_value: p,
            method: PValueMethod::ExactEnumeration,
        })
    } else {
        let p = normal_p_geq(&diffs, t_plus);
        Ok(WilcoxonOutcome {
            t_plus,
            n_used: n,
            p_value: p,
            method: PValueMethod::NormalApproximation,
        })
    }
}

/// Ranks of |d|, averaging over ties.
fn average_ranks(diffs: &[f64]) -> Vec<f64> {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Positions i..=j (0-based) share the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact P(T+ >= observed) under uniform random signs, via a subset-sum
/// count over doubled ranks (average ranks are multiples of 1/2, so doubled
/// ranks are exact integers).
fn exact_p_geq(ranks: &[f64], t_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (0..=total - r).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
    }
    let threshold = (2.0 * t_plus).round() as usize;
    let at_least: u64 = counts[threshold..].iter().sum();
    at_least as f64 / 2f64.powi(ranks.len() as i32)
}

/// Normal approximation with continuity correction and the tie correction
/// on the variance.
fn normal_p_geq(diffs: &[f64], t_plus: f64) -> f64 {
    let n = diffs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // Tie groups: subtract sum(t^3 - t)/48 per group of size t.
    let mut sorted: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        if t > 1.0 {
            var -= (t * t * t - t) / 48.0;
        }
        i = j + 1;
    }
    let z = (t_plus - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    1.0 - normal.cdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: enumerate all 2^n sign assignments directly.
    fn brute_force_p_geq(ranks: &[f64], t_plus: f64) -> f64 {
        let n = ranks.len();
        let mut at_least = 0u64;
        for mask in 0u64..(1 << n) {
            let t: f64 = (0..n)
                .filter(|&i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            if t >= t_plus - 1e-12 {
                at_least += 1;
            }
        }
        at_least as f64 / (1u64 << n) as f64
    }

    #[test]
    fn five_all_positive_is_one_thirty_second() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0, 0.0, 0.0, 0.0, 0.0];
        let out = wilcoxon_one_sided(&a, &b).unwrap();
        assert_eq!(out.method, PValueMethod::ExactEnumeration);
        assert_eq!(out.p_value, 1.0 / 32.0);
        assert_eq!(out.t_plus, 15.0);
    }

    #[test]
    fn identical_samples_are_undefined() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let out = wilcoxon_one_sided(&a, &a).unwrap();
        assert_eq!(out.method, PValueMethod::Undefined);
        assert_eq!(out.p_value, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            wilcoxon_one_sided(&[1.0, 2.0], &[1.0]),
            Err(WilcoxonError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            wilcoxon_one_sided(&[1.0; 4], &[0.0; 4]),
            Err(WilcoxonError::TooFewPairs(4))
        ));
    }

    #[test]
    fn exact_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..50 {
            let n = 5 + (trial % 8); // up to 12 pairs
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n)
                .map(|i| {
                    if rng.gen_bool(0.2) {
                        a[i] // inject zero differences
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            let out = wilcoxon_one_sided(&a, &b).unwrap();
            if out.method == PValueMethod::Undefined {
                continue;
            }
            let diffs: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| x - y)
                .filter(|d| *d != 0.0)
                .collect();
            let ranks = average_ranks(&diffs);
            let oracle = brute_force_p_geq(&ranks, out.t_plus);
            assert!(
                (out.p_value - oracle).abs() < 1e-12,
                "trial {trial}: dp {} vs brute force {oracle}",
                out.p_value
            );
        }
    }

    #[test]
    fn ties_get_average_ranks() {
        let ranks = average_ranks(&[0.5, -0.5, 1.0, 2.0, 2.0]);
        assert_eq!(ranks, vec![1.5, 1.5, 3.0, 4.5, 4.5]);
    }

    #[test]
    fn normal_approximation_tracks_exact() {
        // 21+ pairs switch to the approximation; compare against the exact
        // subset-sum count computed directly.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 24;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) + 0.3).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = wilcoxon_one_sided(&a, &b).unwrap();
        assert_eq!(out.method, PValueMethod::NormalApproximation);
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let ranks = average_ranks(&diffs);
        let exact = exact_p_geq(&ranks, out.t_plus);
        assert!(
            (out.p_value - exact).abs() < 0.01,
            "approx {} vs exact {exact}",
            out.p_value
        );
    }
}
