//! Request and response bodies. Every body travels inside an [`Envelope`].

use chainsight_core::diagnostics::{
    HistogramData, PairData, RankHistogramData, VariableChainStats,
};
use chainsight_core::model::ModelDescriptor;
use chainsight_core::store::{Outcome, Phase, RunId, RunSpec, RunStatus};
use chainsight_core::warnings::FunnelCandidate;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Envelope<T> {
    pub protocol_version: u32,
    pub payload: T,
}

impl<T> Envelope<T> {
    pub fn new(payload: T) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            payload,
        }
    }
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ErrorBody {
    pub error: String,
    /// Next iteration the store expects, on contiguity conflicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<u64>,
    /// Location of the offending field, on schema violations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CreateRunRequest {
    pub descriptor: ModelDescriptor,
    pub metadata: RunSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CreateRunResponse {
    pub run_id: RunId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ControlRequest {
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FinishRequest {
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FinishResponse {
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelResponse {
    pub descriptor: ModelDescriptor,
    pub funnel_candidates: Vec<FunnelCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StatsResponse {
    pub stats: Vec<VariableChainStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ChainTrace {
    pub chain: usize,
    pub iterations: Vec<u64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TraceResponse {
    pub variable: String,
    pub chains: Vec<ChainTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HistogramResponse {
    pub variable: String,
    pub histogram: HistogramData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RankResponse {
    pub variable: String,
    pub ranks: RankHistogramData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PairResponse {
    pub x: String,
    pub y: String,
    pub chain: usize,
    pub pairs: PairData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// A batch was stored.
    Progress {
        chain: usize,
        phase: Phase,
        through_iteration: u64,
    },
    /// The set of active warnings changed.
    WarningDiff {
        version: u64,
        evaluated_at: u64,
        new: Vec<String>,
        resolved: Vec<String>,
    },
    /// Diagnostics were recomputed.
    StatsUpdated {
        evaluated_at: u64,
        evaluations: u64,
    },
    Finished {
        status: RunStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EventRecord {
    pub seq: u64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EventsResponse {
    /// Pass back as `since` to continue.
    pub last_seq: u64,
    /// True when older events were dropped before the client caught up.
    pub truncated: bool,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunList {
    pub runs: Vec<chainsight_core::store::RunSummary>,
}
