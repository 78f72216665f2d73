//! Pure numerical kernel: convergence statistics, acceptance, funnel scores
//! and plot data over immutable snapshots.

mod acceptance;
mod convergence;
mod funnel;
mod normal;
mod plots;
mod summary;

use thiserror::Error;

pub use acceptance::{
    acceptance_rate, acceptance_rate_flags, stuck_run_length, DEFAULT_ACCEPTANCE_WINDOW,
    REJECTION_PROBABILITY,
};
pub use convergence::{
    average_ranks, bulk_ess, burn_in_rhat_profile, burn_in_rhat_profile_with, rhat_and_ess,
    split_rank_normalized_rhat, BurnInProfile,
};
pub use funnel::{detect_funnel_sample, FunnelScore};
pub use normal::normal_quantile;
pub use plots::{
    histogram, pair_data, rank_histogram, trace_slice, HistogramData, PairData, RankHistogramData,
    TraceSlice,
};
pub use summary::{
    compute_diagnostics, AllChains, BurnInStats, ChainDiagnostics, ChainSel, DiagnosticsSnapshot,
    FunnelObservation, SeriesDiagnostics, VariableChainStats,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagError {
    #[error("not enough data: need {needed} draws per chain, have {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error("no chains")]
    NoChains,
    #[error("empty evidence")]
    Empty,
    #[error("probability out of range at index {index}: {value}")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// A statistic that is undefined for zero-variance input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Value(f64),
    Degenerate,
}

impl Measure {
    pub fn value(self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(v),
            Measure::Degenerate => None,
        }
    }

    /// Degenerate R̂ is reported as 1.0.
    pub fn value_or_one(self) -> f64 {
        self.value().unwrap_or(1.0)
    }

    pub fn is_degenerate(self) -> bool {
        self == Measure::Degenerate
    }
}
