//! Plot-ready data series. The engine sends numbers; rendering is left to
//! the client.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::convergence::average_ranks;
use super::funnel::{detect_funnel_sample, FunnelScore};
use super::DiagError;
use crate::model::Support;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HistogramData {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RankHistogramData {
    pub bins: usize,
    /// Number of pooled draws the ranks run over.
    pub total: usize,
    /// `counts[chain][bin]`.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TraceSlice {
    pub iterations: Vec<u64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PairData {
    pub iterations: Vec<u64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub funnel_hint: Option<f64>,
}

pub fn histogram(series: &[f64], bins: usize) -> Result<HistogramData, DiagError> {
    if series.is_empty() {
        return Err(DiagError::Empty);
    }
    if bins == 0 {
        return Err(DiagError::InvalidArgument(
            "bin count must be at least 1".into(),
        ));
    }
    let (mut lo, mut hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    bin_edges.push(hi);
    let mut counts = vec![0u64; bins];
    for &x in series {
        let bin = (((x - lo) / width).floor() as usize).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(HistogramData { bin_edges, counts })
}

/// Per-chain histograms of pooled ranks over `bins` equal rank intervals.
pub fn rank_histogram<S: AsRef<[f64]>>(
    chains: &[S],
    bins: usize,
) -> Result<RankHistogramData, DiagError> {
    if chains.is_empty() {
        return Err(DiagError::NoChains);
    }
    if chains.iter().any(|c| c.as_ref().is_empty()) {
        return Err(DiagError::Empty);
    }
    if bins == 0 {
        return Err(DiagError::InvalidArgument(
            "bin count must be at least 1".into(),
        ));
    }
    let pooled: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.as_ref().iter().copied())
        .collect();
    let total = pooled.len();
    let ranks = average_ranks(&pooled);
    let mut counts = Vec::with_capacity(chains.len());
    let mut offset = 0;
    for chain in chains {
        let len = chain.as_ref().len();
        let mut c = vec![0u64; bins];
        for &r in &ranks[offset..offset + len] {
            let bin = (((r - 1.0) * bins as f64 / total as f64).floor() as usize).min(bins - 1);
            c[bin] += 1;
        }
        counts.push(c);
        offset += len;
    }
    Ok(RankHistogramData {
        bins,
        total,
        counts,
    })
}

/// Uniformly strided view of at most `max_points` points that always keeps
/// the first and last iteration.
pub fn trace_slice(series: &[f64], max_points: usize) -> Result<TraceSlice, DiagError> {
    if series.is_empty() {
        return Err(DiagError::Empty);
    }
    if max_points < 2 {
        return Err(DiagError::InvalidArgument(
            "max_points must be at least 2".into(),
        ));
    }
    let n = series.len();
    let mut iterations: Vec<u64> = if n <= max_points {
        (0..n as u64).collect()
    } else {
        let stride = n.div_ceil(max_points);
        (0..n as u64).step_by(stride).collect()
    };
    let last = (n - 1) as u64;
    if *iterations.last().expect("nonempty") != last {
        if iterations.len() < max_points {
            iterations.push(last);
        } else {
            *iterations.last_mut().expect("nonempty") = last;
        }
    }
    let values = iterations.iter().map(|&i| series[i as usize]).collect();
    Ok(TraceSlice { iterations, values })
}

/// Paired draws thinned by `thin`. With `parent_support` set, `x` is treated
/// as a scale parent and the sample funnel score is attached.
pub fn pair_data(
    x: &[f64],
    y: &[f64],
    thin: usize,
    parent_support: Option<Support>,
) -> Result<PairData, DiagError> {
    if x.is_empty() || y.is_empty() {
        return Err(DiagError::Empty);
    }
    if x.len() != y.len() {
        return Err(DiagError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let thin = thin.max(1);
    let iterations: Vec<u64> = (0..x.len() as u64).step_by(thin).collect();
    let funnel_hint = match parent_support {
        Some(support) => match detect_funnel_sample(x, y, support) {
            Ok(FunnelScore { score, .. }) => Some(score),
            Err(DiagError::NotEnoughData { .. }) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(PairData {
        x: iterations.iter().map(|&i| x[i as usize]).collect(),
        y: iterations.iter().map(|&i| y[i as usize]).collect(),
        iterations,
        funnel_hint,
    })
}
