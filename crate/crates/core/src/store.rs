//! Append-only run state: descriptors, metadata, per-chain draw buffers,
//! acceptance evidence and the stop latch.
//!
//! Each accepted batch is frozen into an `Arc<StoredBatch>` and pushed onto
//! its chain's log. A snapshot clones the list of batch pointers under a
//! short per-chain lock, so snapshots never copy draw data on the ingest
//! path and later appends can't mutate a view that is already taken.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use chrono::{DateTime, Utc};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{LogRecord, SpillWriter};
use crate::model::{ModelDescriptor, ModelError, VariableDecl};

/// Opaque run identifier issued by the store.
#[derive(
    Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
#[serde(transparent)]
pub struct RunId(pub String);

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RunId {
    fn from(s: &str) -> Self {
        RunId(s.to_string())
    }
}

/// Sampling algorithm; unknown labels are kept verbatim as `Other`.
#[derive(
    Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
#[serde(from = "String", into = "String")]
#[schemars(with = "String")]
pub enum Algorithm {
    RandomWalkMh,
    Hmc,
    Nuts,
    Other(String),
}

impl Algorithm {
    pub fn as_str(&self) -> &str {
        match self {
            Algorithm::RandomWalkMh => "random_walk_mh",
            Algorithm::Hmc => "hmc",
            Algorithm::Nuts => "nuts",
            Algorithm::Other(s) => s,
        }
    }
}

impl From<String> for Algorithm {
    fn from(s: String) -> Self {
        match s.as_str() {
            "random_walk_mh" => Algorithm::RandomWalkMh,
            "hmc" => Algorithm::Hmc,
            "nuts" => Algorithm::Nuts,
            _ => Algorithm::Other(s),
        }
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> Self {
        a.as_str().to_string()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Run metadata as supplied by the producer when creating a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub n_chains: usize,
    #[serde(default)]
    pub n_tune: usize,
    pub n_draws_planned: usize,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunMetadata {
    pub run_id: RunId,
    pub algorithm: Algorithm,
    pub n_chains: usize,
    pub n_tune: usize,
    pub n_draws_planned: usize,
    pub hyperparameters: BTreeMap<String, f64>,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Tune,
    Sample,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Tune => "tune",
            Phase::Sample => "sample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PhaseFilter {
    Tune,
    #[default]
    Sample,
    All,
}

/// Per-iteration acceptance evidence: either accept flags or acceptance
/// probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum AcceptEvidence {
    Booleans(Vec<bool>),
    Probabilities(Vec<f64>),
}

impl AcceptEvidence {
    pub fn len(&self) -> usize {
        match self {
            AcceptEvidence::Booleans(v) => v.len(),
            AcceptEvidence::Probabilities(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Booleans become 0/1; probabilities are checked against `[0, 1]`.
    pub fn to_values(&self) -> Result<Vec<f64>, usize> {
        match self {
            AcceptEvidence::Booleans(v) => {
                Ok(v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            }
            AcceptEvidence::Probabilities(v) => {
                match v.iter().position(|p| !(0.0..=1.0).contains(p)) {
                    Some(bad) => Err(bad),
                    None => Ok(v.clone()),
                }
            }
        }
    }
}

/// Draws for one variable: `batch_len` rows of the flattened shape. Scalar
/// variables may also be sent as a plain list of numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum DrawMatrix {
    Rows(Vec<Vec<f64>>),
    Scalars(Vec<f64>),
}

impl DrawMatrix {
    pub fn rows(&self) -> usize {
        match self {
            DrawMatrix::Rows(r) => r.len(),
            DrawMatrix::Scalars(s) => s.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SampleBatch {
    pub run_id: RunId,
    pub chain: usize,
    pub phase: Phase,
    pub first_iteration: u64,
    pub draws: BTreeMap<String, DrawMatrix>,
    pub accept: AcceptEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct BatchAck {
    pub accepted_through_iteration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Finished,
    Aborted,
}

impl From<Outcome> for RunStatus {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Finished => RunStatus::Finished,
            Outcome::Aborted => RunStatus::Aborted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ControlState {
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ChainProgress {
    pub chain: usize,
    pub tune: u64,
    pub sample: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RunSummary {
    pub metadata: RunMetadata,
    pub status: RunStatus,
    pub stop_requested: bool,
    pub progress: Vec<ChainProgress>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown run {0}")]
    UnknownRun(RunId),
    #[error("invalid model descriptor: {0}")]
    InvalidDescriptor(#[from] ModelError),
    #[error("invalid run metadata: {0}")]
    InvalidMetadata(String),
    #[error("invalid batch at `{field}`: {reason}")]
    InvalidBatch { field: String, reason: String },
    #[error("chain {chain} {phase} batch starts at {got}, expected {expected}")]
    Contiguity {
        chain: usize,
        phase: Phase,
        expected: u64,
        got: u64,
    },
    #[error("run {run_id} is {status:?}, not running")]
    NotRunning { run_id: RunId, status: RunStatus },
    #[error("spill log: {0}")]
    Spill(#[from] std::io::Error),
}

impl StoreError {
    fn batch(field: impl Into<String>, reason: impl Into<String>) -> Self {
        StoreError::InvalidBatch {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Column layout of the flat scalar series of a run, fixed by its first batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesLayout {
    pub variables: Vec<LayoutVariable>,
    /// Flat series names in column order.
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutVariable {
    pub decl: VariableDecl,
    /// First column of this variable.
    pub offset: usize,
    pub len: usize,
}

impl SeriesLayout {
    fn from_batch(descriptor: &ModelDescriptor, keys: &BTreeSet<&str>) -> Self {
        let mut variables = Vec::new();
        let mut names = Vec::new();
        for decl in descriptor
            .tracked()
            .filter(|v| keys.contains(v.name.as_str()))
        {
            let flat = decl.flat_names();
            variables.push(LayoutVariable {
                decl: decl.clone(),
                offset: names.len(),
                len: flat.len(),
            });
            names.extend(flat);
        }
        SeriesLayout { variables, names }
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, flat_name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == flat_name)
    }

    pub fn variable(&self, root: &str) -> Option<&LayoutVariable> {
        self.variables.iter().find(|v| v.decl.name == root)
    }

    /// Root variable owning a column, plus the flat index inside it.
    pub fn owner(&self, column: usize) -> (&LayoutVariable, usize) {
        let var = self
            .variables
            .iter()
            .find(|v| column >= v.offset && column < v.offset + v.len)
            .expect("column within layout");
        (var, column - var.offset)
    }
}

/// One accepted batch, columnar and immutable.
#[derive(Debug)]
pub struct StoredBatch {
    pub phase: Phase,
    pub first_iteration: u64,
    pub len: usize,
    pub columns: Vec<Vec<f64>>,
    pub accept: Vec<f64>,
}

#[derive(Debug, Default)]
struct ChainLog {
    tune: Vec<Arc<StoredBatch>>,
    sample: Vec<Arc<StoredBatch>>,
    next_tune: u64,
    next_sample: u64,
}

impl ChainLog {
    fn next(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Tune => self.next_tune,
            Phase::Sample => self.next_sample,
        }
    }
}

struct Run {
    metadata: RunMetadata,
    descriptor: Arc<ModelDescriptor>,
    layout: OnceLock<Arc<SeriesLayout>>,
    chains: Vec<Mutex<ChainLog>>,
    status: RwLock<RunStatus>,
    stop: AtomicBool,
    spill: Option<Mutex<SpillWriter>>,
}

impl Run {
    fn status(&self) -> RunStatus {
        *self.status.read().expect("status lock")
    }

    fn progress(&self) -> Vec<ChainProgress> {
        self.chains
            .iter()
            .enumerate()
            .map(|(chain, log)| {
                let log = log.lock().expect("chain lock");
                ChainProgress {
                    chain,
                    tune: log.next_tune,
                    sample: log.next_sample,
                }
            })
            .collect()
    }
}

/// Many-run store. Cheap to share behind an `Arc`.
#[derive(Default)]
pub struct ChainStore {
    runs: RwLock<BTreeMap<RunId, Arc<Run>>>,
    next_id: AtomicU64,
    spill_dir: Option<std::path::PathBuf>,
}

impl ChainStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store that also writes every run to `<dir>/<run_id>.jsonl`.
    pub fn with_spill(dir: impl Into<std::path::PathBuf>) -> Self {
        Self {
            spill_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn create_run(
        &self,
        descriptor: ModelDescriptor,
        spec: RunSpec,
    ) -> Result<RunId, StoreError> {
        descriptor.validate()?;
        if spec.n_chains == 0 {
            return Err(StoreError::InvalidMetadata(
                "n_chains must be at least 1".into(),
            ));
        }
        if spec.n_draws_planned == 0 {
            return Err(StoreError::InvalidMetadata(
                "n_draws_planned must be positive".into(),
            ));
        }
        let seq = self.next_id.fetch_add(1, Ordering::SeqCst) + 1;
        let run_id = RunId(format!("run-{seq:04}"));
        let metadata = RunMetadata {
            run_id: run_id.clone(),
            algorithm: spec.algorithm.clone(),
            n_chains: spec.n_chains,
            n_tune: spec.n_tune,
            n_draws_planned: spec.n_draws_planned,
            hyperparameters: spec.hyperparameters.clone(),
            started_at: spec.started_at.unwrap_or_else(Utc::now),
            label: spec.label.clone(),
        };
        let spill = match &self.spill_dir {
            Some(dir) => {
                let mut writer = SpillWriter::create(dir.join(format!("{run_id}.jsonl")))?;
                writer.write(&LogRecord::Run {
                    descriptor: descriptor.clone(),
                    metadata: spec,
                })?;
                Some(Mutex::new(writer))
            }
            None => None,
        };
        let run = Run {
            chains: (0..metadata.n_chains)
                .map(|_| Mutex::new(ChainLog::default()))
                .collect(),
            metadata,
            descriptor: Arc::new(descriptor),
            layout: OnceLock::new(),
            status: RwLock::new(RunStatus::Running),
            stop: AtomicBool::new(false),
            spill,
        };
        self.runs
            .write()
            .expect("runs lock")
            .insert(run_id.clone(), Arc::new(run));
        Ok(run_id)
    }

    fn run(&self, run_id: &RunId) -> Result<Arc<Run>, StoreError> {
        self.runs
            .read()
            .expect("runs lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownRun(run_id.clone()))
    }

    pub fn append_batch(&self, batch: &SampleBatch) -> Result<BatchAck, StoreError> {
        let run = self.run(&batch.run_id)?;
        // Held for the whole append so `finish_run` can't interleave.
        let status = run.status.read().expect("status lock");
        if *status != RunStatus::Running {
            return Err(StoreError::NotRunning {
                run_id: batch.run_id.clone(),
                status: *status,
            });
        }
        if batch.chain >= run.metadata.n_chains {
            return Err(StoreError::batch(
                "chain",
                format!(
                    "chain {} outside [0, {})",
                    batch.chain, run.metadata.n_chains
                ),
            ));
        }
        let len = batch.accept.len();
        if len == 0 {
            return Err(StoreError::batch(
                "accept",
                "batch must hold at least one iteration",
            ));
        }
        let accept = batch
            .accept
            .to_values()
            .map_err(|i| StoreError::batch(format!("accept[{i}]"), "probability out of range"))?;

        let keys: BTreeSet<&str> = batch.draws.keys().map(String::as_str).collect();
        for key in &keys {
            match run.descriptor.variable(key) {
                Some(decl) if decl.is_tracked() => {}
                Some(_) => {
                    return Err(StoreError::batch(
                        format!("draws.{key}"),
                        "observed variables carry no draws",
                    ))
                }
                None => {
                    return Err(StoreError::batch(
                        format!("draws.{key}"),
                        "unknown variable",
                    ))
                }
            }
        }
        let layout = run
            .layout
            .get_or_init(|| Arc::new(SeriesLayout::from_batch(&run.descriptor, &keys)))
            .clone();
        if layout.variables.len() != keys.len() {
            let expected: Vec<&str> = layout
                .variables
                .iter()
                .map(|v| v.decl.name.as_str())
                .collect();
            return Err(StoreError::batch(
                "draws",
                format!("variable set must be {expected:?}"),
            ));
        }
        let columns = columns_of(batch, &layout, len)?;

        let mut log = run.chains[batch.chain].lock().expect("chain lock");
        let expected = log.next(batch.phase);
        if batch.first_iteration != expected {
            return Err(StoreError::Contiguity {
                chain: batch.chain,
                phase: batch.phase,
                expected,
                got: batch.first_iteration,
            });
        }
        let stored = Arc::new(StoredBatch {
            phase: batch.phase,
            first_iteration: batch.first_iteration,
            len,
            columns,
            accept,
        });
        let through = expected + len as u64 - 1;
        match batch.phase {
            Phase::Tune => {
                log.tune.push(stored);
                log.next_tune = through + 1;
            }
            Phase::Sample => {
                log.sample.push(stored);
                log.next_sample = through + 1;
            }
        }
        drop(log);
        if let Some(spill) = &run.spill {
            spill
                .lock()
                .expect("spill lock")
                .write(&LogRecord::Batch(batch.clone()))?;
        }
        Ok(BatchAck {
            accepted_through_iteration: through,
        })
    }

    pub fn snapshot(&self, run_id: &RunId, phase: PhaseFilter) -> Result<RunSnapshot, StoreError> {
        let run = self.run(run_id)?;
        let status = run.status();
        let chains = run
            .chains
            .iter()
            .map(|log| {
                let log = log.lock().expect("chain lock");
                let batches = match phase {
                    PhaseFilter::Tune => log.tune.clone(),
                    PhaseFilter::Sample => log.sample.clone(),
                    PhaseFilter::All => log.tune.iter().chain(&log.sample).cloned().collect(),
                };
                ChainView::new(batches)
            })
            .collect();
        Ok(RunSnapshot {
            metadata: run.metadata.clone(),
            descriptor: run.descriptor.clone(),
            layout: run.layout.get().cloned(),
            status,
            stop_requested: run.stop.load(Ordering::Acquire),
            phase,
            chains,
        })
    }

    pub fn request_stop(&self, run_id: &RunId) -> Result<ControlState, StoreError> {
        let run = self.run(run_id)?;
        run.stop.store(true, Ordering::Release);
        Ok(ControlState { stop: true })
    }

    pub fn read_control(&self, run_id: &RunId) -> Result<ControlState, StoreError> {
        let run = self.run(run_id)?;
        Ok(ControlState {
            stop: run.stop.load(Ordering::Acquire),
        })
    }

    pub fn finish_run(&self, run_id: &RunId, outcome: Outcome) -> Result<RunStatus, StoreError> {
        let run = self.run(run_id)?;
        let mut status = run.status.write().expect("status lock");
        if *status != RunStatus::Running {
            return Err(StoreError::NotRunning {
                run_id: run_id.clone(),
                status: *status,
            });
        }
        *status = outcome.into();
        if let Some(spill) = &run.spill {
            let mut spill = spill.lock().expect("spill lock");
            spill.write(&LogRecord::Finish {
                run_id: run_id.clone(),
                outcome,
            })?;
            spill.flush()?;
        }
        Ok(*status)
    }

    pub fn status(&self, run_id: &RunId) -> Result<RunStatus, StoreError> {
        Ok(self.run(run_id)?.status())
    }

    pub fn descriptor(&self, run_id: &RunId) -> Result<Arc<ModelDescriptor>, StoreError> {
        Ok(self.run(run_id)?.descriptor.clone())
    }

    pub fn summary(&self, run_id: &RunId) -> Result<RunSummary, StoreError> {
        let run = self.run(run_id)?;
        Ok(RunSummary {
            metadata: run.metadata.clone(),
            status: run.status(),
            stop_requested: run.stop.load(Ordering::Acquire),
            progress: run.progress(),
        })
    }

    pub fn list(&self) -> Vec<RunSummary> {
        let runs: Vec<RunId> = self
            .runs
            .read()
            .expect("runs lock")
            .keys()
            .cloned()
            .collect();
        runs.iter().filter_map(|id| self.summary(id).ok()).collect()
    }
}

fn columns_of(
    batch: &SampleBatch,
    layout: &SeriesLayout,
    len: usize,
) -> Result<Vec<Vec<f64>>, StoreError> {
    let mut columns: Vec<Vec<f64>> = (0..layout.width())
        .map(|_| Vec::with_capacity(len))
        .collect();
    for var in &layout.variables {
        let name = &var.decl.name;
        let matrix = &batch.draws[name];
        if matrix.rows() != len {
            return Err(StoreError::batch(
                format!("draws.{name}"),
                format!("{} rows, but accept has {len}", matrix.rows()),
            ));
        }
        match matrix {
            DrawMatrix::Scalars(values) => {
                if var.len != 1 {
                    return Err(StoreError::batch(
                        format!("draws.{name}"),
                        format!("rows must have {} entries", var.len),
                    ));
                }
                for (i, &x) in values.iter().enumerate() {
                    check_finite(x, || format!("draws.{name}[{i}]"))?;
                    columns[var.offset].push(x);
                }
            }
            DrawMatrix::Rows(rows) => {
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != var.len {
                        return Err(StoreError::batch(
                            format!("draws.{name}[{i}]"),
                            format!("row has {} entries, expected {}", row.len(), var.len),
                        ));
                    }
                    for (j, &x) in row.iter().enumerate() {
                        check_finite(x, || format!("draws.{name}[{i}][{j}]"))?;
                        columns[var.offset + j].push(x);
                    }
                }
            }
        }
    }
    Ok(columns)
}

fn check_finite(x: f64, field: impl FnOnce() -> String) -> Result<(), StoreError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(StoreError::batch(field(), "draws must be finite"))
    }
}

/// Draws of one chain as of the snapshot.
#[derive(Debug, Clone)]
pub struct ChainView {
    batches: Vec<Arc<StoredBatch>>,
    len: usize,
}

impl ChainView {
    fn new(batches: Vec<Arc<StoredBatch>>) -> Self {
        let len = batches.iter().map(|b| b.len).sum();
        Self { batches, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Values of one flat series, in iteration order.
    pub fn series(&self, column: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for b in &self.batches {
            out.extend_from_slice(&b.columns[column]);
        }
        out
    }

    /// Acceptance values: 0/1 for flags, probabilities as given.
    pub fn accept(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for b in &self.batches {
            out.extend_from_slice(&b.accept);
        }
        out
    }

    /// `(phase, iteration)` of every stored draw, in order.
    pub fn iterations(&self) -> Vec<(Phase, u64)> {
        self.batches
            .iter()
            .flat_map(|b| (0..b.len as u64).map(move |i| (b.phase, b.first_iteration + i)))
            .collect()
    }
}

/// Immutable point-in-time view of a run.
#[derive(Debug, Clone)]
pub struct RunSnapshot {
    pub metadata: RunMetadata,
    pub descriptor: Arc<ModelDescriptor>,
    pub layout: Option<Arc<SeriesLayout>>,
    pub status: RunStatus,
    pub stop_requested: bool,
    pub phase: PhaseFilter,
    pub chains: Vec<ChainView>,
}

impl RunSnapshot {
    /// Per-chain series for a flat column, one vector per chain.
    pub fn series(&self, column: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.series(column)).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.chains.iter().map(ChainView::len).collect()
    }
}
