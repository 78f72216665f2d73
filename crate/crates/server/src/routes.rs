use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chainsight_core::diagnostics::{
    compute_diagnostics, histogram, pair_data, rank_histogram, trace_slice, ChainSel, DiagError,
    DiagnosticsSnapshot,
};
use chainsight_core::model::Support;
use chainsight_core::report::Report;
use chainsight_core::store::{PhaseFilter, RunId, RunSnapshot, SampleBatch, StoreError};
use chainsight_core::warnings::funnel_static_detect;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::state::AppState;
use crate::wire::*;

type Shared = State<Arc<AppState>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                expected: None,
                path: None,
            },
        }
    }

    fn invalid(path: impl Into<String>, error: impl Into<String>) -> Self {
        let mut e = Self::new(StatusCode::UNPROCESSABLE_ENTITY, error);
        e.body.path = Some(path.into());
        e
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let error = e.to_string();
        match e {
            StoreError::UnknownRun(_) => ApiError::new(StatusCode::NOT_FOUND, error),
            StoreError::InvalidDescriptor(_) => ApiError::invalid("payload.descriptor", error),
            StoreError::InvalidMetadata(_) => ApiError::invalid("payload.metadata", error),
            StoreError::InvalidBatch { field, .. } => {
                ApiError::invalid(format!("payload.{field}"), error)
            }
            StoreError::Contiguity { expected, .. } => {
                let mut e = ApiError::new(StatusCode::CONFLICT, error);
                e.body.expected = Some(expected);
                e
            }
            StoreError::NotRunning { .. } => ApiError::new(StatusCode::CONFLICT, error),
            StoreError::Spill(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, error),
        }
    }
}

impl From<DiagError> for ApiError {
    fn from(e: DiagError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

type ApiResult<T> = Result<Json<Envelope<T>>, ApiError>;

fn ok<T>(payload: T) -> ApiResult<T> {
    Ok(Json(Envelope::new(payload)))
}

/// Parses an enveloped body, reporting the failing field path. A wrong
/// protocol version wins over any payload error.
fn parse_envelope<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    #[derive(Deserialize)]
    struct VersionOnly {
        protocol_version: u32,
    }
    let de = &mut serde_json::Deserializer::from_slice(body);
    match serde_path_to_error::deserialize::<_, Envelope<T>>(de) {
        Ok(env) if env.protocol_version == PROTOCOL_VERSION => Ok(env.payload),
        Ok(env) => Err(version_mismatch(env.protocol_version)),
        Err(err) => {
            if let Ok(v) = serde_json::from_slice::<VersionOnly>(body) {
                if v.protocol_version != PROTOCOL_VERSION {
                    return Err(version_mismatch(v.protocol_version));
                }
            }
            let path = err.path().to_string();
            let inner = err.into_inner();
            if inner.is_data() {
                Err(ApiError::invalid(path, inner.to_string()))
            } else {
                Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    format!("malformed JSON: {inner}"),
                ))
            }
        }
    }
}

fn version_mismatch(got: u32) -> ApiError {
    let mut e = ApiError::new(
        StatusCode::BAD_REQUEST,
        format!("unsupported protocol_version {got} (this server speaks {PROTOCOL_VERSION})"),
    );
    e.body.path = Some("protocol_version".into());
    e
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiError::invalid("query", e.body_text()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/config", get(config))
        .route("/api/v1/runs", get(list_runs).post(create_run))
        .route("/api/v1/runs/{id}", get(run_summary))
        .route("/api/v1/runs/{id}/batches", post(append_batch))
        .route(
            "/api/v1/runs/{id}/control",
            get(read_control).post(write_control),
        )
        .route("/api/v1/runs/{id}/finish", post(finish))
        .route("/api/v1/runs/{id}/model", get(model))
        .route("/api/v1/runs/{id}/stats", get(stats))
        .route("/api/v1/runs/{id}/plots/trace", get(trace_plot))
        .route("/api/v1/runs/{id}/plots/histogram", get(histogram_plot))
        .route("/api/v1/runs/{id}/plots/rank", get(rank_plot))
        .route("/api/v1/runs/{id}/plots/pair", get(pair_plot))
        .route("/api/v1/runs/{id}/warnings", get(warnings))
        .route("/api/v1/runs/{id}/events", get(events))
        .route("/api/v1/runs/{id}/report", get(report))
        .with_state(state)
}

async fn config(State(state): Shared) -> ApiResult<chainsight_core::analysis::EngineConfig> {
    ok(state.config.clone())
}

async fn list_runs(State(state): Shared) -> ApiResult<RunList> {
    ok(RunList {
        runs: state.store.list(),
    })
}

async fn create_run(State(state): Shared, body: Bytes) -> ApiResult<CreateRunResponse> {
    let req: CreateRunRequest = parse_envelope(&body)?;
    let run_id = state.store.create_run(req.descriptor, req.metadata)?;
    state.register(run_id.clone());
    ok(CreateRunResponse { run_id })
}

async fn run_summary(
    State(state): Shared,
    Path(id): Path<String>,
) -> ApiResult<chainsight_core::store::RunSummary> {
    ok(state.store.summary(&RunId(id))?)
}

async fn append_batch(
    State(state): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<chainsight_core::store::BatchAck> {
    let run_id = RunId(id);
    state.entry(&run_id)?;
    let mut batch: SampleBatch = parse_envelope(&body)?;
    if batch.run_id != run_id {
        return Err(ApiError::invalid(
            "payload.run_id",
            format!(
                "batch is for run {} but was posted to {run_id}",
                batch.run_id
            ),
        ));
    }
    batch.run_id = run_id;
    let through = state.ingest(&batch)?;
    ok(chainsight_core::store::BatchAck {
        accepted_through_iteration: through,
    })
}

async fn read_control(
    State(state): Shared,
    Path(id): Path<String>,
) -> ApiResult<chainsight_core::store::ControlState> {
    ok(state.store.read_control(&RunId(id))?)
}

async fn write_control(
    State(state): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<chainsight_core::store::ControlState> {
    let run_id = RunId(id);
    state.entry(&run_id)?;
    let req: ControlRequest = parse_envelope(&body)?;
    if req.stop {
        ok(state.store.request_stop(&run_id)?)
    } else {
        ok(state.store.read_control(&run_id)?)
    }
}

async fn finish(
    State(state): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<FinishResponse> {
    let run_id = RunId(id);
    let entry = state.entry(&run_id)?;
    let req: FinishRequest = parse_envelope(&body)?;
    let status = state.store.finish_run(&run_id, req.outcome)?;
    let closing = state.clone();
    let closing_id = run_id.clone();
    let closing_entry = entry.clone();
    tokio::task::spawn_blocking(move || closing.close(&closing_id, &closing_entry))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    entry.events.push(Event::Finished { status });
    ok(FinishResponse { status })
}

async fn model(State(state): Shared, Path(id): Path<String>) -> ApiResult<ModelResponse> {
    let descriptor = state.store.descriptor(&RunId(id))?;
    ok(ModelResponse {
        funnel_candidates: funnel_static_detect(&descriptor),
        descriptor: (*descriptor).clone(),
    })
}

#[derive(Debug, Deserialize)]
struct StatsQuery {
    variable: Option<String>,
    chain: Option<String>,
    phase: Option<PhaseFilter>,
}

/// A single series when `variable` is given, every series otherwise.
#[derive(Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(untagged)]
pub enum StatsResult {
    One(chainsight_core::diagnostics::VariableChainStats),
    All(StatsResponse),
}

fn parse_chain(chain: Option<&str>, default: ChainSel) -> Result<ChainSel, ApiError> {
    match chain {
        None => Ok(default),
        Some(c) => {
            ChainSel::parse(c).ok_or_else(|| ApiError::invalid("chain", format!("bad chain `{c}`")))
        }
    }
}

/// The scheduler's latest diagnostics when they cover `phase`, otherwise a
/// fresh computation.
fn diagnostics_for(
    state: &AppState,
    run_id: &RunId,
    phase: PhaseFilter,
) -> Result<DiagnosticsSnapshot, ApiError> {
    let entry = state.entry(run_id)?;
    if phase == state.config.phase {
        if let Some(latest) = entry.analyzer().latest() {
            return Ok(latest.diagnostics.clone());
        }
    }
    let snapshot = state.store.snapshot(run_id, phase)?;
    Ok(compute_diagnostics(
        &snapshot,
        state.config.acceptance_window,
    ))
}

async fn stats(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<StatsQuery>, QueryRejection>,
) -> ApiResult<StatsResult> {
    let q = query(q)?;
    let run_id = RunId(id);
    let chain = parse_chain(q.chain.as_deref(), ChainSel::ALL)?;
    let state2 = state.clone();
    let phase = q.phase.unwrap_or(state.config.phase);
    let diag = tokio::task::spawn_blocking(move || diagnostics_for(&state2, &run_id, phase))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    match q.variable {
        Some(v) => {
            let stats = diag.stats(&v, chain).cloned().ok_or_else(|| {
                ApiError::invalid("variable", format!("no series `{v}` for chain {chain:?}"))
            })?;
            ok(StatsResult::One(stats))
        }
        None => {
            let stats = diag
                .series
                .iter()
                .filter_map(|s| match chain {
                    ChainSel::Index(c) => s.per_chain.get(c).cloned(),
                    ChainSel::All(_) => Some(s.overall.clone()),
                })
                .collect();
            ok(StatsResult::All(StatsResponse { stats }))
        }
    }
}

#[derive(Debug, Deserialize)]
struct PlotQuery {
    variable: Option<String>,
    chain: Option<String>,
    phase: Option<PhaseFilter>,
    bins: Option<usize>,
    max_points: Option<usize>,
    x: Option<String>,
    y: Option<String>,
    thin: Option<usize>,
}

struct PlotInput {
    snapshot: RunSnapshot,
    q: PlotQuery,
}

impl PlotInput {
    fn load(
        state: &AppState,
        id: String,
        q: Result<Query<PlotQuery>, QueryRejection>,
    ) -> Result<Self, ApiError> {
        let q = query(q)?;
        let snapshot = state
            .store
            .snapshot(&RunId(id), q.phase.unwrap_or(state.config.phase))?;
        Ok(Self { snapshot, q })
    }

    fn column(&self, field: &str, name: Option<&str>) -> Result<usize, ApiError> {
        let name =
            name.ok_or_else(|| ApiError::invalid(field, format!("`{field}` is required")))?;
        self.snapshot
            .layout
            .as_ref()
            .and_then(|l| l.column(name))
            .ok_or_else(|| ApiError::invalid(field, format!("no series `{name}` in this run")))
    }

    fn chains(&self, default: ChainSel) -> Result<Vec<usize>, ApiError> {
        match parse_chain(self.q.chain.as_deref(), default)? {
            ChainSel::All(_) => Ok((0..self.snapshot.chains.len()).collect()),
            ChainSel::Index(c) if c < self.snapshot.chains.len() => Ok(vec![c]),
            ChainSel::Index(c) => Err(ApiError::invalid("chain", format!("run has no chain {c}"))),
        }
    }
}

async fn trace_plot(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<PlotQuery>, QueryRejection>,
) -> ApiResult<TraceResponse> {
    let input = PlotInput::load(&state, id, q)?;
    let column = input.column("variable", input.q.variable.as_deref())?;
    let max_points = input.q.max_points.unwrap_or(500);
    let mut chains = Vec::new();
    for c in input.chains(ChainSel::ALL)? {
        let view = &input.snapshot.chains[c];
        if view.is_empty() {
            continue;
        }
        let slice = trace_slice(&view.series(column), max_points)?;
        let iterations = view.iterations();
        chains.push(ChainTrace {
            chain: c,
            iterations: slice
                .iterations
                .iter()
                .map(|&i| iterations[i as usize].1)
                .collect(),
            values: slice.values,
        });
    }
    ok(TraceResponse {
        variable: input.q.variable.clone().unwrap_or_default(),
        chains,
    })
}

async fn histogram_plot(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<PlotQuery>, QueryRejection>,
) -> ApiResult<HistogramResponse> {
    let input = PlotInput::load(&state, id, q)?;
    let column = input.column("variable", input.q.variable.as_deref())?;
    let values: Vec<f64> = input
        .chains(ChainSel::ALL)?
        .into_iter()
        .flat_map(|c| input.snapshot.chains[c].series(column))
        .collect();
    let histogram = histogram(&values, input.q.bins.unwrap_or(30))?;
    ok(HistogramResponse {
        variable: input.q.variable.clone().unwrap_or_default(),
        histogram,
    })
}

async fn rank_plot(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<PlotQuery>, QueryRejection>,
) -> ApiResult<RankResponse> {
    let input = PlotInput::load(&state, id, q)?;
    let column = input.column("variable", input.q.variable.as_deref())?;
    let ranks = rank_histogram(&input.snapshot.series(column), input.q.bins.unwrap_or(20))?;
    ok(RankResponse {
        variable: input.q.variable.clone().unwrap_or_default(),
        ranks,
    })
}

async fn pair_plot(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<PlotQuery>, QueryRejection>,
) -> ApiResult<PairResponse> {
    let input = PlotInput::load(&state, id, q)?;
    let x_col = input.column("x", input.q.x.as_deref())?;
    let y_col = input.column("y", input.q.y.as_deref())?;
    let chain = input.chains(ChainSel::Index(0))?[0];
    let layout = input.snapshot.layout.as_ref().expect("columns resolved");
    let (x_var, _) = layout.owner(x_col);
    let (y_var, _) = layout.owner(y_col);
    // Attach a funnel score when x feeds y's scale.
    let descriptor = &input.snapshot.descriptor;
    let support = funnel_static_detect(descriptor)
        .iter()
        .any(|c| c.scale_input() == x_var.decl.name && c.child == y_var.decl.name)
        .then(|| {
            descriptor
                .variable(&x_var.decl.name)
                .map_or(Support::Real, |v| v.support)
        });
    let view = &input.snapshot.chains[chain];
    let pairs = pair_data(
        &view.series(x_col),
        &view.series(y_col),
        input.q.thin.unwrap_or(1),
        support,
    )?;
    ok(PairResponse {
        x: input.q.x.clone().unwrap_or_default(),
        y: input.q.y.clone().unwrap_or_default(),
        chain,
        pairs,
    })
}

async fn warnings(
    State(state): Shared,
    Path(id): Path<String>,
) -> ApiResult<chainsight_core::warnings::WarningsView> {
    let entry = state.entry(&RunId(id))?;
    let view = entry.analyzer().tracker().view().clone();
    ok(view)
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    timeout_ms: Option<u64>,
}

const MAX_POLL: Duration = Duration::from_secs(60);

async fn events(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<EventsQuery>, QueryRejection>,
) -> ApiResult<EventsResponse> {
    let q = query(q)?;
    let entry = state.entry(&RunId(id))?;
    let wait = Duration::from_millis(q.timeout_ms.unwrap_or(25_000)).min(MAX_POLL);
    ok(entry.events.wait_for(q.since, wait).await)
}

async fn report(State(state): Shared, Path(id): Path<String>) -> ApiResult<Report> {
    let run_id = RunId(id);
    let entry = state.entry(&run_id)?;
    let status = state.store.status(&run_id)?;
    let label = state.store.summary(&run_id)?.metadata.label;
    let state2 = state.clone();
    let report = tokio::task::spawn_blocking(move || -> Result<Report, ApiError> {
        if entry.analyzer().latest().is_none() {
            state2.analyze(&run_id, &entry)?;
        }
        let analyzer = entry.analyzer();
        Ok(Report::from_analyzer(&analyzer, status, label).expect("analysed above"))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    ok(report)
}
