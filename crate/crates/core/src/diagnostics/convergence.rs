//! Rank-normalized split R̂ and bulk effective sample size.
//!
//! Both statistics run on the same transform: chains are truncated to the
//! shortest length, split in half (dropping the middle draw of odd-length
//! chains), pooled and ranked with ties averaged, and the ranks mapped to
//! normal scores `Φ⁻¹((r − 3/8) / (S + 1/4))`.

use super::normal::normal_quantile;
use super::{DiagError, Measure};

/// Average (1-based) ranks of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn split_halves<S: AsRef<[f64]>>(chains: &[S], min_len: usize) -> Result<Vec<Vec<f64>>, DiagError> {
    if chains.is_empty() {
        return Err(DiagError::NoChains);
    }
    let n = chains.iter().map(|c| c.as_ref().len()).min().unwrap_or(0);
    if n < min_len {
        return Err(DiagError::NotEnoughData {
            needed: min_len,
            got: n,
        });
    }
    let half = n / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for chain in chains {
        let c = &chain.as_ref()[..n];
        out.push(c[..half].to_vec());
        out.push(c[n - half..].to_vec());
    }
    Ok(out)
}

/// Normal scores of the pooled split chains, or `None` when every draw is
/// identical.
fn rank_normalize(splits: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let pooled: Vec<f64> = splits.iter().flatten().copied().collect();
    let first = pooled[0];
    if pooled.iter().all(|&x| x == first) {
        return None;
    }
    let total = pooled.len() as f64;
    let ranks = average_ranks(&pooled);
    let mut scores = ranks
        .into_iter()
        .map(|r| normal_quantile((r - 0.375) / (total + 0.25)));
    Some(
        splits
            .iter()
            .map(|c| {
                c.iter()
                    .map(|_| scores.next().expect("one score per draw"))
                    .collect()
            })
            .collect(),
    )
}

fn normalized_splits<S: AsRef<[f64]>>(chains: &[S]) -> Result<Option<Vec<Vec<f64>>>, DiagError> {
    Ok(rank_normalize(split_halves(chains, 4)?))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Within-chain variance W and the pooled estimate v̂⁺.
fn variance_components(z: &[Vec<f64>]) -> (f64, f64, Vec<f64>) {
    let n = z[0].len() as f64;
    let means: Vec<f64> = z.iter().map(|c| mean(c)).collect();
    let within = z.iter().map(|c| sample_variance(c)).sum::<f64>() / z.len() as f64;
    // B/n is the sample variance of the split-chain means.
    let between_over_n = sample_variance(&means);
    let var_plus = (n - 1.0) / n * within + between_over_n;
    (within, var_plus, means)
}

fn rhat_of(z: &[Vec<f64>]) -> f64 {
    let (within, var_plus, _) = variance_components(z);
    if within == 0.0 {
        return f64::INFINITY;
    }
    (var_plus / within).sqrt()
}

fn ess_of(z: &[Vec<f64>]) -> f64 {
    let m = z.len();
    let n = z[0].len();
    let total = (m * n) as f64;
    let (within, var_plus, means) = variance_components(z);
    let centered: Vec<Vec<f64>> = z
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| x - mu).collect())
        .collect();
    // Mean over chains of the biased lag-t autocovariance, computed on demand
    // so truncation usually stops after a handful of lags.
    let mean_autocov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| {
                c[..n - lag]
                    .iter()
                    .zip(&c[lag..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| -> f64 {
        if lag == 0 {
            1.0
        } else {
            1.0 - (within - mean_autocov(lag)) / var_plus
        }
    };

    // Geyer initial monotone sequence over even/odd pairs.
    let mut pair_sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev);
        pair_sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = -1.0 + 2.0 * pair_sum;
    if tau <= 0.0 {
        return total;
    }
    (total / tau).min(total)
}

/// Rank-normalized split R̂. Needs every chain to hold at least 4 draws.
pub fn split_rank_normalized_rhat<S: AsRef<[f64]>>(chains: &[S]) -> Result<Measure, DiagError> {
    Ok(match normalized_splits(chains)? {
        Some(z) => Measure::Value(rhat_of(&z)),
        None => Measure::Degenerate,
    })
}

/// Bulk ESS on the rank-normalized split chains, capped at the number of
/// draws used.
pub fn bulk_ess<S: AsRef<[f64]>>(chains: &[S]) -> Result<Measure, DiagError> {
    Ok(match normalized_splits(chains)? {
        Some(z) => Measure::Value(ess_of(&z)),
        None => Measure::Degenerate,
    })
}

/// R̂ and ESS sharing one rank transform.
pub fn rhat_and_ess<S: AsRef<[f64]>>(chains: &[S]) -> Result<(Measure, Measure), DiagError> {
    Ok(match normalized_splits(chains)? {
        Some(z) => (Measure::Value(rhat_of(&z)), Measure::Value(ess_of(&z))),
        None => (Measure::Degenerate, Measure::Degenerate),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurnInProfile {
    /// R̂ over all post-tune draws.
    pub rhat_full: Measure,
    /// R̂ over the last half of every chain.
    pub rhat_tail: Measure,
}

pub fn burn_in_rhat_profile<S: AsRef<[f64]>>(chains: &[S]) -> Result<BurnInProfile, DiagError> {
    burn_in_rhat_profile_with(chains, split_rank_normalized_rhat(chains)?)
}

/// Same as [`burn_in_rhat_profile`] for a caller that already holds the R̂
/// over all draws.
pub fn burn_in_rhat_profile_with<S: AsRef<[f64]>>(
    chains: &[S],
    rhat_full: Measure,
) -> Result<BurnInProfile, DiagError> {
    if chains.is_empty() {
        return Err(DiagError::NoChains);
    }
    let n = chains.iter().map(|c| c.as_ref().len()).min().unwrap_or(0);
    if n < 8 {
        return Err(DiagError::NotEnoughData { needed: 8, got: n });
    }
    let tails: Vec<&[f64]> = chains.iter().map(|c| &c.as_ref()[n - n / 2..n]).collect();
    Ok(BurnInProfile {
        rhat_full,
        rhat_tail: split_rank_normalized_rhat(&tails)?,
    })
}
