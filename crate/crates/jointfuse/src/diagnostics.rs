//! Convergence diagnostics and posterior summaries over retained draws.

use serde::Serialize;
use thiserror::Error;

use crate::sampler::ChainOutput;
use crate::stats::{mean, quantile_type7, variance};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least two sequences, got {0}")]
    TooFewSequences(usize),
    #[error("sequences have mismatched lengths")]
    UnequalLengths,
    #[error("chains disagree on monitored parameters")]
    MismatchedChains,
    #[error("no retained draws")]
    Empty,
}

/// Potential scale reduction factor over parallel sequences.
///
/// Uses the pooled-variance form V = W + B/m + B/(m c), so identical
/// sequences give exactly 1 and the statistic never drops below 1. A zero
/// within-sequence variance yields 1 when the sequences agree and infinity
/// when they do not.
pub fn gelman_rubin(sequences: &[&[f64]]) -> Result<f64, DiagnosticsError> {
    let c = sequences.len();
    if c < 2 {
        return Err(DiagnosticsError::TooFewSequences(c));
    }
    let m = sequences[0].len();
    if m < 2 || sequences.iter().any(|s| s.len() != m) {
        return Err(if m < 2 {
            DiagnosticsError::Empty
        } else {
            DiagnosticsError::UnequalLengths
        });
    }
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let grand = mean(&means);
    let b_over_m = means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (c as f64 - 1.0);
    let w = sequences.iter().map(|s| variance(s)).sum::<f64>() / c as f64;
    if b_over_m == 0.0 {
        return Ok(1.0);
    }
    if w == 0.0 {
        return Ok(f64::INFINITY);
    }
    let v = w + b_over_m * (1.0 + 1.0 / c as f64);
    Ok((v / w).sqrt())
}

/// Splits each sequence in half (dropping a middle element when odd) so
/// within-chain drift registers as a between-sequence difference.
pub fn split_in_half(sequences: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * sequences.len());
    for s in sequences {
        let half = s.len() / 2;
        out.push(s[..half].to_vec());
        out.push(s[s.len() - half..].to_vec());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub rhat: f64,
}

/// Per-parameter posterior summaries over all chains pooled, with the
/// scale reduction factor across chains (split form on request).
pub fn summarize(
    chains: &[ChainOutput],
    split: bool,
) -> Result<Vec<ParameterSummary>, DiagnosticsError> {
    let Some(first) = chains.first() else {
        return Err(DiagnosticsError::TooFewSequences(0));
    };
    if chains
        .iter()
        .any(|c| c.names != first.names || c.n_retained != first.n_retained)
    {
        return Err(DiagnosticsError::MismatchedChains);
    }
    if first.n_retained == 0 {
        return Err(DiagnosticsError::Empty);
    }
    let mut out = Vec::with_capacity(first.names.len());
    for name in &first.names {
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.column(name).expect("validated column"))
            .collect();
        let mut pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let m = mean(&pooled);
        let sd = if pooled.len() > 1 {
            variance(&pooled).sqrt()
        } else {
            0.0
        };
        pooled.sort_by(f64::total_cmp);
        let rhat = if chains.len() >= 2 || split {
            let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
            if split {
                let halves = split_in_half(&refs);
                let half_refs: Vec<&[f64]> = halves.iter().map(Vec::as_slice).collect();
                gelman_rubin(&half_refs)?
            } else {
                gelman_rubin(&refs)?
            }
        } else {
            f64::NAN
        };
        out.push(ParameterSummary {
            name: name.clone(),
            mean: m,
            sd,
            q025: quantile_type7(&pooled, 0.025),
            median: quantile_type7(&pooled, 0.5),
            q975: quantile_type7(&pooled, 0.975),
            rhat,
        });
    }
    Ok(out)
}

/// Worst scale reduction factor in a summary table (NaN entries skipped).
pub fn max_rhat(summaries: &[ParameterSummary]) -> f64 {
    summaries
        .iter()
        .map(|s| s.rhat)
        .filter(|r| !r.is_nan())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Per-chain draws of one parameter, for trace plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceData {
    pub name: String,
    pub chains: Vec<Vec<f64>>,
}

pub fn trace_data(chains: &[ChainOutput], name: &str) -> Option<TraceData> {
    let per_chain: Option<Vec<Vec<f64>>> = chains.iter().map(|c| c.column(name)).collect();
    Some(TraceData {
        name: name.to_string(),
        chains: per_chain?,
    })
}

/// Shared-bin histogram of one parameter, one count row per chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityData {
    pub name: String,
    /// Bin edges, one more than the number of bins.
    pub breaks: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
}

pub const DENSITY_BINS: usize = 64;

pub fn density_data(chains: &[ChainOutput], name: &str, bins: usize) -> Option<DensityData> {
    let trace = trace_data(chains, name)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in trace.chains.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    if hi == lo {
        // Degenerate column: a single bin around the constant.
        hi = lo + 1.0;
        lo -= 1.0;
    }
    let breaks: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    let width = (hi - lo) / bins as f64;
    let counts = trace
        .chains
        .iter()
        .map(|draws| {
            let mut row = vec![0u64; bins];
            for &v in draws {
                let ix = (((v - lo) / width) as usize).min(bins - 1);
                row[ix] += 1;
            }
            row
        })
        .collect();
    Some(DensityData {
        name: name.to_string(),
        breaks,
        counts,
    })
}

/// Interval rows for a caterpillar plot, one per parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaterpillarRow {
    pub name: String,
    pub low: f64,
    pub median: f64,
    pub high: f64,
}

pub fn caterpillar(summaries: &[ParameterSummary]) -> Vec<CaterpillarRow> {
    summaries
        .iter()
        .map(|s| CaterpillarRow {
            name: s.name.clone(),
            low: s.q025,
            median: s.median,
            high: s.q975,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    fn chain_output(chain: usize, names: &[&str], cols: &[Vec<f64>]) -> ChainOutput {
        let n = cols[0].len();
        let mut draws = Vec::new();
        for r in 0..n {
            for c in cols {
                draws.push(c[r]);
            }
        }
        ChainOutput {
            chain,
            names: names.iter().map(|s| s.to_string()).collect(),
            draws,
            n_retained: n,
            blocks: vec![],
            seed: 0,
            elapsed_ms: 0,
        }
    }

    #[test]
    fn identical_sequences_give_exactly_one() {
        let a = vec![0.3, -1.2, 0.8, 2.1, -0.4];
        let got = gelman_rubin(&[&a, &a, &a]).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn hand_computed_two_chain_value() {
        // means 2.5 and 3.5, W = 5/3, B/m = 0.5:
        // V = 5/3 + 0.5 * (1 + 1/2) = 29/12, rhat = sqrt(29/20).
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let got = gelman_rubin(&[&a, &b]).unwrap();
        assert!((got - (29.0f64 / 20.0).sqrt()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn separated_chains_blow_up() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let std = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..500).map(|_| std.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..500).map(|_| 10.0 + std.sample(&mut rng)).collect();
        let got = gelman_rubin(&[&a, &b]).unwrap();
        assert!(got > 3.0, "{got}");
        // Flat but different sequences: infinite, not NaN.
        let c = vec![1.0; 50];
        let d = vec![2.0; 50];
        assert_eq!(gelman_rubin(&[&c, &d]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn never_below_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let std = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..50 {
            let a: Vec<f64> = (0..40).map(|_| std.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..40).map(|_| std.sample(&mut rng)).collect();
            assert!(gelman_rubin(&[&a, &b]).unwrap() >= 1.0);
        }
    }

    #[test]
    fn split_form_sees_within_chain_drift() {
        // Two chains that agree with each other but drift over time.
        let drifting: Vec<f64> = (0..200).map(|i| i as f64 / 20.0).collect();
        let refs: Vec<&[f64]> = vec![&drifting, &drifting];
        assert_eq!(gelman_rubin(&refs).unwrap(), 1.0);
        let halves = split_in_half(&refs);
        let half_refs: Vec<&[f64]> = halves.iter().map(Vec::as_slice).collect();
        assert!(gelman_rubin(&half_refs).unwrap() > 2.0);
    }

    #[test]
    fn summaries_match_direct_computation() {
        let c1 = chain_output(0, &["a", "b"], &[vec![1.0, 2.0, 3.0, 4.0], vec![5.0; 4]]);
        let c2 = chain_output(1, &["a", "b"], &[vec![2.0, 3.0, 4.0, 5.0], vec![5.0; 4]]);
        let s = summarize(&[c1, c2], false).unwrap();
        assert_eq!(s[0].name, "a");
        assert!((s[0].mean - 3.0).abs() < 1e-12);
        assert!((s[0].median - 3.0).abs() < 1e-12);
        assert!((s[0].rhat - (29.0f64 / 20.0).sqrt()).abs() < 1e-12);
        // Constant column: zero sd, rhat exactly 1.
        assert_eq!(s[1].sd, 0.0);
        assert_eq!(s[1].rhat, 1.0);
        assert_eq!(max_rhat(&s), s[0].rhat);
    }

    #[test]
    fn summarize_rejects_mismatched_chains() {
        let c1 = chain_output(0, &["a"], &[vec![1.0, 2.0]]);
        let c2 = chain_output(1, &["b"], &[vec![1.0, 2.0]]);
        assert!(matches!(
            summarize(&[c1, c2], false),
            Err(DiagnosticsError::MismatchedChains)
        ));
    }

    #[test]
    fn density_counts_cover_every_draw() {
        let c1 = chain_output(0, &["a"], &[vec![0.0, 0.5, 1.0, 1.5, 2.0]]);
        let c2 = chain_output(1, &["a"], &[vec![0.1, 0.6, 1.1, 1.6, 2.0]]);
        let d = density_data(&[c1, c2], "a", 8).unwrap();
        assert_eq!(d.breaks.len(), 9);
        assert_eq!(d.breaks[0], 0.0);
        assert_eq!(*d.breaks.last().unwrap(), 2.0);
        for row in &d.counts {
            assert_eq!(row.iter().sum::<u64>(), 5);
        }
    }
}
