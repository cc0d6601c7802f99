//! Deterministic posterior summaries: moments, type-7 quantiles, Geyer
//! initial-positive-sequence effective sample sizes, and histogram bin
//! counts for density displays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 50;

/// Equal-width bin counts over the sample range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

/// Summary of one scalar parameter's retained draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub quantiles: Vec<(f64, f64)>,
    pub ess: f64,
    pub histogram: Histogram,
}

/// Summarizes a chain given as rows of draws over named parameters.
pub fn summarize_posterior(
    names: &[String],
    draws: &[Vec<f64>],
    probs: &[f64],
) -> Result<Vec<ParameterSummary>> {
    if draws.is_empty() {
        return Err(Error::InvalidConfig("cannot summarize an empty chain".into()));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidConfig(
            "quantile probabilities must lie in [0, 1]".into(),
        ));
    }
    for (i, row) in draws.iter().enumerate() {
        if row.len() != names.len() {
            return Err(Error::InvalidConfig(format!(
                "draw {i} has {} entries for {} parameters",
                row.len(),
                names.len()
            )));
        }
    }
    let n = draws.len();
    let mut out = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|row| row[k]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let quantiles = probs
            .iter()
            .map(|&p| (p, quantile_type7(&sorted, p)))
            .collect();
        out.push(ParameterSummary {
            name: name.clone(),
            mean,
            sd,
            quantiles,
            ess: effective_sample_size(&xs),
            histogram: histogram(&xs, HISTOGRAM_BINS),
        });
    }
    Ok(out)
}

/// Type-7 quantile of an already sorted sample.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Geyer's initial-positive-sequence estimator: the autocorrelation time is
/// truncated at the first nonpositive sum of adjacent autocorrelation pairs.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let autocov = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (xs[i] - mean) * (xs[i + lag] - mean);
        }
        s / n as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let gamma = (autocov(lag) + autocov(lag + 1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        lag += 2;
    }
    (n as f64 / tau).min(n as f64)
}

/// Equal-width histogram over the sample range.
pub fn histogram(xs: &[f64], bins: usize) -> Histogram {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &x in xs {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { lo, hi, counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_chain_degenerates_cleanly() {
        let names = vec!["c".to_string()];
        let draws: Vec<Vec<f64>> = (0..50).map(|_| vec![2.5]).collect();
        let s = &summarize_posterior(&names, &draws, &[0.05, 0.5, 0.95]).unwrap()[0];
        assert_eq!(s.sd, 0.0);
        assert!(s.quantiles.iter().all(|&(_, q)| q == 2.5));
        assert_eq!(s.histogram.counts.iter().sum::<u64>(), 50);
    }

    #[test]
    fn median_interpolates_type7() {
        let names = vec!["x".to_string()];
        let draws = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let s = &summarize_posterior(&names, &draws, &[0.5]).unwrap()[0];
        assert_eq!(s.quantiles[0].1, 2.5);
        assert_eq!(quantile_type7(&[1.0, 2.0, 3.0, 4.0], 0.0), 1.0);
        assert_eq!(quantile_type7(&[1.0, 2.0, 3.0, 4.0], 1.0), 4.0);
        assert!((quantile_type7(&[1.0, 2.0, 3.0, 4.0], 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn ess_of_iid_chain_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&xs);
        assert!(
            (ess - 10_000.0).abs() < 1500.0,
            "iid ESS {ess} should be within 15% of n"
        );
    }

    #[test]
    fn ess_detects_strong_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                x = 0.95 * x + e;
                x
            })
            .collect();
        let ess = effective_sample_size(&xs);
        // AR(1) with rho = 0.95 has autocorrelation time about 39
        assert!(ess < 1000.0, "AR(1) ESS {ess}");
    }

    #[test]
    fn empty_chain_is_an_error() {
        assert!(summarize_posterior(&["a".into()], &[], &[0.5]).is_err());
    }

    #[test]
    fn histogram_covers_all_draws() {
        let xs: Vec<f64> = (0..101).map(|i| i as f64 / 10.0).collect();
        let h = histogram(&xs, 50);
        assert_eq!(h.counts.iter().sum::<u64>(), 101);
        assert_eq!(h.lo, 0.0);
        assert_eq!(h.hi, 10.0);
    }
}
