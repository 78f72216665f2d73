//! Snapshot → diagnostics → warnings, plus the per-run state that keeps the
//! warning lifecycle between evaluations.

use std::time::Duration;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    compute_diagnostics, detect_funnel_sample, DiagnosticsSnapshot, FunnelObservation,
};
use crate::log::BatchLog;
use crate::model::{ModelDescriptor, Support};
use crate::store::{ChainStore, PhaseFilter, RunId, RunSnapshot, StoreError};
use crate::warnings::{
    evaluate, funnel_static_detect, FunnelCandidate, Thresholds, Warning, WarningTracker,
};

const FUNNEL_MIN_PAIRS: usize = 50;

/// When the engine re-runs diagnostics for a live run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct AnalysisSchedule {
    pub every_n_iterations: u64,
    /// Milliseconds on the wire.
    #[serde(rename = "max_interval_ms", with = "millis")]
    #[schemars(with = "u64")]
    pub max_interval: Duration,
}

impl Default for AnalysisSchedule {
    fn default() -> Self {
        Self {
            every_n_iterations: 100,
            max_interval: Duration::from_secs(1),
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Everything that shapes an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct EngineConfig {
    pub thresholds: Thresholds,
    pub schedule: AnalysisSchedule,
    pub acceptance_window: usize,
    /// Phase the warning rules look at.
    pub phase: PhaseFilter,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            schedule: AnalysisSchedule::default(),
            acceptance_window: crate::diagnostics::DEFAULT_ACCEPTANCE_WINDOW,
            phase: PhaseFilter::Sample,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.thresholds.validate().map_err(|e| e.to_string())?;
        if self.schedule.every_n_iterations == 0 || self.schedule.max_interval.is_zero() {
            return Err("schedule values must be positive".into());
        }
        if self.acceptance_window == 0 {
            return Err("acceptance_window must be positive".into());
        }
        Ok(())
    }

    /// Applies one `key=value` override: threshold keys, `every_n_iterations`,
    /// `max_interval_ms`, `acceptance_window` or `phase`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let int = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map_err(|e| format!("bad value for `{key}`: {e}"))
        };
        match key {
            "every_n_iterations" => self.schedule.every_n_iterations = int(value)?,
            "max_interval_ms" => self.schedule.max_interval = Duration::from_millis(int(value)?),
            "acceptance_window" => self.acceptance_window = int(value)? as usize,
            "phase" => {
                self.phase = serde_json::from_value(serde_json::Value::String(value.trim().into()))
                    .map_err(|_| format!("bad value for `phase`: {value}"))?
            }
            _ => self.thresholds.set(key, value).map_err(|e| e.to_string())?,
        }
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub diagnostics: DiagnosticsSnapshot,
    pub candidates: Vec<FunnelCandidate>,
    pub warnings: Vec<Warning>,
}

fn funnel_observation(
    snapshot: &RunSnapshot,
    descriptor: &ModelDescriptor,
    c: &FunnelCandidate,
) -> Option<FunnelObservation> {
    let layout = snapshot.layout.as_ref()?;
    let scale = layout.variable(c.scale_input())?;
    let child = layout.variable(&c.child)?;
    // Only a scalar scale has a single series to pair with every child entry.
    if scale.len != 1 {
        return None;
    }
    let support = descriptor
        .variable(c.scale_input())
        .map_or(Support::Real, |v| v.support);
    let pooled = |col: usize| -> Vec<f64> {
        let per_chain = snapshot.series(col);
        let n = per_chain.iter().map(Vec::len).min().unwrap_or(0);
        per_chain
            .iter()
            .flat_map(|s| s[..n].iter().copied())
            .collect()
    };
    let parent = pooled(scale.offset);
    if parent.len() < FUNNEL_MIN_PAIRS {
        return None;
    }
    let scores: Vec<(String, f64)> = (child.offset..child.offset + child.len)
        .filter_map(|col| {
            let s = detect_funnel_sample(&parent, &pooled(col), support).ok()?;
            (!s.degenerate).then(|| (layout.names[col].clone(), s.score))
        })
        .collect();
    let max_score = scores
        .iter()
        .map(|(_, s)| *s)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
    Some(FunnelObservation {
        parent: c.parent.clone(),
        child: c.child.clone(),
        scale_input: c.scale_input().to_string(),
        scores,
        max_score,
    })
}

/// One full evaluation of `snapshot`.
pub fn analyze_snapshot(snapshot: &RunSnapshot, config: &EngineConfig) -> Analysis {
    let descriptor = snapshot.descriptor.as_ref();
    let candidates = funnel_static_detect(descriptor);
    let mut diagnostics = compute_diagnostics(snapshot, config.acceptance_window);
    diagnostics.funnels = candidates
        .iter()
        .filter_map(|c| funnel_observation(snapshot, descriptor, c))
        .collect();
    let warnings = evaluate(
        &diagnostics,
        &candidates,
        &config.thresholds,
        &snapshot.metadata,
        descriptor,
    );
    Analysis {
        diagnostics,
        candidates,
        warnings,
    }
}

/// Latest analysis and warning lifecycle of one run. Not thread-safe on its
/// own; the server keeps one per run behind a lock.
#[derive(Debug, Default)]
pub struct RunAnalyzer {
    tracker: WarningTracker,
    latest: Option<Analysis>,
    analyzed_frontier: u64,
    evaluations: u64,
}

impl RunAnalyzer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evaluates `snapshot` and updates the warning lifecycle. Returns true
    /// when the set of active warnings changed.
    pub fn refresh(&mut self, snapshot: &RunSnapshot, config: &EngineConfig) -> bool {
        let analysis = analyze_snapshot(snapshot, config);
        let frontier = analysis
            .diagnostics
            .draws_per_chain
            .iter()
            .copied()
            .max()
            .unwrap_or(0) as u64;
        let changed = self.tracker.update(&analysis.warnings, frontier);
        self.analyzed_frontier = frontier;
        self.latest = Some(analysis);
        self.evaluations += 1;
        changed
    }

    pub fn latest(&self) -> Option<&Analysis> {
        self.latest.as_ref()
    }

    pub fn tracker(&self) -> &WarningTracker {
        &self.tracker
    }

    /// Largest per-chain draw count covered by the last evaluation.
    pub fn analyzed_frontier(&self) -> u64 {
        self.analyzed_frontier
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

/// Result of feeding a recorded log through a fresh store.
pub struct Replay {
    pub store: ChainStore,
    pub run_id: RunId,
    pub analyzer: RunAnalyzer,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("line {line}: {source}")]
    Batch { line: usize, source: StoreError },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Replays `log` batch by batch, evaluating whenever the frontier of the
/// analysed phase has advanced by `every_n_iterations`, and once at the end.
/// Time-based ticks are not simulated, so the result is deterministic.
pub fn replay_log(log: &BatchLog, config: &EngineConfig) -> Result<Replay, ReplayError> {
    let store = ChainStore::new();
    let run_id = store.create_run(log.descriptor.clone(), log.metadata.clone())?;
    let mut analyzer = RunAnalyzer::new();
    let step = config.schedule.every_n_iterations;
    let mut last = 0u64;
    for (line, batch) in &log.batches {
        let mut batch = batch.clone();
        batch.run_id = run_id.clone();
        store
            .append_batch(&batch)
            .map_err(|source| ReplayError::Batch {
                line: *line,
                source,
            })?;
        let snapshot = store.snapshot(&run_id, config.phase)?;
        let frontier = snapshot.lengths().into_iter().max().unwrap_or(0) as u64;
        if frontier >= last + step {
            analyzer.refresh(&snapshot, config);
            last = frontier;
        }
    }
    if let Some(outcome) = log.outcome {
        store.finish_run(&run_id, outcome)?;
    }
    analyzer.refresh(&store.snapshot(&run_id, config.phase)?, config);
    Ok(Replay {
        store,
        run_id,
        analyzer,
    })
}
