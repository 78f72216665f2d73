//! JSON Schema files for every wire body.

use std::path::Path;

use anyhow::{Context, Result};
use chainsight_core::analysis::EngineConfig;
use chainsight_core::log::LogRecord;
use chainsight_core::report::Report;
use chainsight_core::store::{BatchAck, ControlState, RunSummary, SampleBatch};
use chainsight_core::warnings::WarningsView;
use chainsight_server::wire::*;
use chainsight_server::StatsResult;
use schemars::schema::RootSchema;
use schemars::schema_for;

/// `(file stem, schema)` pairs, in a fixed order.
pub fn schemas() -> Vec<(&'static str, RootSchema)> {
    vec![
        ("envelope", schema_for!(Envelope<serde_json::Value>)),
        ("error_body", schema_for!(ErrorBody)),
        ("create_run_request", schema_for!(CreateRunRequest)),
        ("create_run_response", schema_for!(CreateRunResponse)),
        ("sample_batch", schema_for!(SampleBatch)),
        ("batch_ack", schema_for!(BatchAck)),
        ("control_request", schema_for!(ControlRequest)),
        ("control_state", schema_for!(ControlState)),
        ("finish_request", schema_for!(FinishRequest)),
        ("finish_response", schema_for!(FinishResponse)),
        ("run_list", schema_for!(RunList)),
        ("run_summary", schema_for!(RunSummary)),
        ("model_response", schema_for!(ModelResponse)),
        ("stats_result", schema_for!(StatsResult)),
        ("trace_response", schema_for!(TraceResponse)),
        ("histogram_response", schema_for!(HistogramResponse)),
        ("rank_response", schema_for!(RankResponse)),
        ("pair_response", schema_for!(PairResponse)),
        ("warnings_view", schema_for!(WarningsView)),
        ("events_response", schema_for!(EventsResponse)),
        ("report", schema_for!(Report)),
        ("engine_config", schema_for!(EngineConfig)),
        ("log_record", schema_for!(LogRecord)),
    ]
}

pub fn render(schema: &RootSchema) -> String {
    let mut s = serde_json::to_string_pretty(schema).expect("schemas serialize");
    s.push('\n');
    s
}

pub fn write_all(dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::new();
    for (name, schema) in schemas() {
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, render(&schema))
            .with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path.display().to_string());
    }
    Ok(written)
}
