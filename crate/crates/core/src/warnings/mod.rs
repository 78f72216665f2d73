//! Heuristic warning rules over diagnostics and the model graph.
//!
//! Rules are evaluated per root (unflattened) variable, so a vector-valued
//! variable yields at most one warning of each kind with the affected flat
//! indices aggregated inside it.

mod diff;
mod funnel;
mod rules;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SourceSpan;
use crate::store::Algorithm;

pub use diff::{diff_warnings, WarningDiff, WarningTracker, WarningsView};
pub use funnel::{funnel_static_detect, render_reparameterization, FunnelCandidate};
pub use rules::evaluate;
pub use synthetic::SyntheticRun;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
pub enum WarningKind {
    HighRhat,
    BurnIn,
    FunnelAcceptance,
    LowEssHighAcceptance,
    LowEssLowAcceptance,
    StuckChain,
    LowEssIsolated,
    AcceptanceIsolated,
}

impl WarningKind {
    pub const ALL: [WarningKind; 8] = [
        WarningKind::HighRhat,
        WarningKind::BurnIn,
        WarningKind::FunnelAcceptance,
        WarningKind::LowEssHighAcceptance,
        WarningKind::LowEssLowAcceptance,
        WarningKind::StuckChain,
        WarningKind::LowEssIsolated,
        WarningKind::AcceptanceIsolated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WarningKind::HighRhat => "HighRhat",
            WarningKind::BurnIn => "BurnIn",
            WarningKind::FunnelAcceptance => "FunnelAcceptance",
            WarningKind::LowEssHighAcceptance => "LowEssHighAcceptance",
            WarningKind::LowEssLowAcceptance => "LowEssLowAcceptance",
            WarningKind::StuckChain => "StuckChain",
            WarningKind::LowEssIsolated => "LowEssIsolated",
            WarningKind::AcceptanceIsolated => "AcceptanceIsolated",
        }
    }

    pub fn suggestion(self) -> &'static str {
        match self {
            WarningKind::HighRhat => "See other warnings. Check rank plots.",
            WarningKind::BurnIn => "Increase the burn-in period.",
            WarningKind::FunnelAcceptance => "Reparameterize the model.",
            WarningKind::LowEssHighAcceptance => "Increase the proposer's step size.",
            WarningKind::LowEssLowAcceptance => "Lower the proposer's step size.",
            WarningKind::StuckChain => "Check your proposal functions and step size.",
            WarningKind::LowEssIsolated => "Check other warnings, they might be indicative.",
            WarningKind::AcceptanceIsolated => "Maybe change the step size.",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            WarningKind::FunnelAcceptance | WarningKind::StuckChain => Severity::Critical,
            WarningKind::LowEssIsolated | WarningKind::AcceptanceIsolated => Severity::Info,
            _ => Severity::Warn,
        }
    }
}

impl fmt::Display for WarningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warn,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum WarningStatus {
    #[default]
    Active,
    Resolved,
}

/// A root variable and the flat indices a warning applies to. Scalar
/// variables carry no indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct AffectedVariable {
    pub name: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Warning {
    pub id: String,
    pub kind: WarningKind,
    pub severity: Severity,
    pub variables: Vec<AffectedVariable>,
    pub chains: Vec<usize>,
    pub evidence: BTreeMap<String, serde_json::Value>,
    pub message: String,
    pub suggestion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_span: Option<SourceSpan>,
    pub first_seen: u64,
    pub last_seen: u64,
    #[serde(default)]
    pub status: WarningStatus,
}

/// Stable identifier for (kind, root variable, chain set).
pub fn warning_id(kind: WarningKind, root: Option<&str>, chains: &[usize]) -> String {
    // FNV-1a, 64 bit
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let chains: Vec<String> = chains.iter().map(usize::to_string).collect();
    let key = format!(
        "{}|{}|{}",
        kind.as_str(),
        root.unwrap_or(""),
        chains.join(",")
    );
    for byte in key.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{hash:016x}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AcceptanceBand {
    pub low: f64,
    pub high: f64,
}

impl AcceptanceBand {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, rate: f64) -> bool {
        rate >= self.low && rate <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThresholdError {
    #[error("unknown threshold key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

/// Every number that can trigger a warning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct Thresholds {
    pub rhat_warn: f64,
    /// ESS is low when below this times the number of chains.
    pub ess_low_per_chain: f64,
    pub acceptance_bands: BTreeMap<String, AcceptanceBand>,
    pub stuck_window: usize,
    pub min_draws_for_warnings: usize,
    pub burn_in_full_threshold: f64,
    pub funnel_score_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rhat_warn: 1.01,
            ess_low_per_chain: 100.0,
            acceptance_bands: BTreeMap::from([
                (
                    "random_walk_mh".to_string(),
                    AcceptanceBand::new(0.15, 0.45),
                ),
                ("hmc".to_string(), AcceptanceBand::new(0.60, 0.90)),
                ("nuts".to_string(), AcceptanceBand::new(0.70, 0.95)),
                ("other".to_string(), AcceptanceBand::new(0.10, 0.95)),
            ]),
            stuck_window: 200,
            min_draws_for_warnings: 200,
            burn_in_full_threshold: 1.05,
            funnel_score_min: 0.2,
        }
    }
}

impl Thresholds {
    pub fn band(&self, algorithm: &Algorithm) -> AcceptanceBand {
        self.acceptance_bands
            .get(algorithm.as_str())
            .or_else(|| self.acceptance_bands.get("other"))
            .copied()
            .unwrap_or(AcceptanceBand::new(0.10, 0.95))
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ThresholdError> {
        let bad = |key: &str, reason: &str| ThresholdError::BadValue {
            key: key.into(),
            reason: reason.into(),
        };
        if !(self.rhat_warn > 1.0) {
            return Err(bad("rhat_warn", "must exceed 1"));
        }
        if !(self.ess_low_per_chain > 0.0) {
            return Err(bad("ess_low_per_chain", "must be positive"));
        }
        if !(self.burn_in_full_threshold > 1.0) {
            return Err(bad("burn_in_full_threshold", "must exceed 1"));
        }
        if self.stuck_window == 0 {
            return Err(bad("stuck_window", "must be positive"));
        }
        for (name, band) in &self.acceptance_bands {
            if !(0.0 <= band.low && band.low < band.high && band.high <= 1.0) {
                return Err(bad(
                    &format!("acceptance_bands.{name}"),
                    "need 0 <= low < high <= 1",
                ));
            }
        }
        Ok(())
    }

    /// Applies one `key=value` override. Bands take `low,high`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ThresholdError> {
        let bad = |reason: String| ThresholdError::BadValue {
            key: key.into(),
            reason,
        };
        let number = |v: &str| v.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
        let count = |v: &str| v.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
        match key {
            "rhat_warn" => self.rhat_warn = number(value)?,
            "ess_low_per_chain" => self.ess_low_per_chain = number(value)?,
            "stuck_window" => self.stuck_window = count(value)?,
            "min_draws_for_warnings" => self.min_draws_for_warnings = count(value)?,
            "burn_in_full_threshold" => self.burn_in_full_threshold = number(value)?,
            "funnel_score_min" => self.funnel_score_min = number(value)?,
            _ => match key.strip_prefix("acceptance_bands.") {
                Some(algorithm) if !algorithm.is_empty() => {
                    let (low, high) = value
                        .split_once(',')
                        .ok_or_else(|| bad("expected `low,high`".into()))?;
                    let band = AcceptanceBand::new(number(low)?, number(high)?);
                    self.acceptance_bands.insert(algorithm.to_string(), band);
                }
                _ => return Err(ThresholdError::UnknownKey(key.into())),
            },
        }
        self.validate()
    }
}
