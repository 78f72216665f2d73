//! Shared server state and the per-run analysis scheduler.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chainsight_core::analysis::{EngineConfig, RunAnalyzer};
use chainsight_core::store::{ChainStore, Phase, RunId, SampleBatch, StoreError};
use tokio::sync::{watch, Notify};
use tokio::time::Instant;

use crate::wire::{Event, EventRecord, EventsResponse};

const EVENT_BUFFER: usize = 4096;

/// Bounded, sequence-numbered event history with a change signal for
/// long-polling readers.
pub struct EventLog {
    records: Mutex<VecDeque<EventRecord>>,
    seq: watch::Sender<u64>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self {
            records: Mutex::new(VecDeque::new()),
            seq: watch::Sender::new(0),
        }
    }
}

impl EventLog {
    pub fn push(&self, event: Event) {
        let mut records = self.records.lock().expect("event lock");
        let seq = records.back().map_or(1, |r| r.seq + 1);
        records.push_back(EventRecord { seq, event });
        if records.len() > EVENT_BUFFER {
            records.pop_front();
        }
        self.seq.send_replace(seq);
    }

    pub fn since(&self, since: u64) -> EventsResponse {
        let records = self.records.lock().expect("event lock");
        let last_seq = records.back().map_or(0, |r| r.seq);
        let first_kept = records.front().map_or(1, |r| r.seq);
        EventsResponse {
            last_seq,
            truncated: since + 1 < first_kept,
            events: records.iter().filter(|r| r.seq > since).cloned().collect(),
        }
    }

    /// Waits until an event newer than `since` exists or `wait` elapses.
    pub async fn wait_for(&self, since: u64, wait: Duration) -> EventsResponse {
        let mut rx = self.seq.subscribe();
        let _ = tokio::time::timeout(wait, rx.wait_for(|&seq| seq > since)).await;
        self.since(since)
    }
}

/// Engine-side state of one run next to its store entry.
pub struct RunEntry {
    analyzer: Mutex<RunAnalyzer>,
    /// Bumped on every stored batch.
    generation: AtomicU64,
    analyzed_generation: AtomicU64,
    /// Largest post-tune draw count over chains.
    sample_frontier: AtomicU64,
    /// Frontier at the start of the last analysis.
    scheduled_frontier: AtomicU64,
    wake: Notify,
    done: AtomicBool,
    pub events: EventLog,
}

impl RunEntry {
    fn new() -> Self {
        Self {
            analyzer: Mutex::new(RunAnalyzer::new()),
            generation: AtomicU64::new(0),
            analyzed_generation: AtomicU64::new(0),
            sample_frontier: AtomicU64::new(0),
            scheduled_frontier: AtomicU64::new(0),
            wake: Notify::new(),
            done: AtomicBool::new(false),
            events: EventLog::default(),
        }
    }

    pub fn analyzer(&self) -> std::sync::MutexGuard<'_, RunAnalyzer> {
        self.analyzer.lock().expect("analyzer lock")
    }
}

pub struct AppState {
    pub store: Arc<ChainStore>,
    pub config: EngineConfig,
    runs: RwLock<HashMap<RunId, Arc<RunEntry>>>,
}

impl AppState {
    pub fn new(store: Arc<ChainStore>, config: EngineConfig) -> Self {
        Self {
            store,
            config,
            runs: RwLock::new(HashMap::new()),
        }
    }

    pub fn entry(&self, run_id: &RunId) -> Result<Arc<RunEntry>, StoreError> {
        self.runs
            .read()
            .expect("runs lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownRun(run_id.clone()))
    }

    /// Registers a run created in the store and starts its scheduler.
    pub fn register(self: &Arc<Self>, run_id: RunId) {
        let entry = Arc::new(RunEntry::new());
        self.runs
            .write()
            .expect("runs lock")
            .insert(run_id.clone(), entry.clone());
        tokio::spawn(analysis_loop(self.clone(), run_id, entry));
    }

    /// Stores `batch` and wakes the scheduler once enough post-tune
    /// iterations have arrived. Never waits for analysis.
    pub fn ingest(&self, batch: &SampleBatch) -> Result<u64, StoreError> {
        let entry = self.entry(&batch.run_id)?;
        let ack = self.store.append_batch(batch)?;
        entry.generation.fetch_add(1, Ordering::SeqCst);
        let through = ack.accepted_through_iteration;
        if batch.phase == Phase::Sample {
            let frontier = through + 1;
            entry.sample_frontier.fetch_max(frontier, Ordering::SeqCst);
            let scheduled = entry.scheduled_frontier.load(Ordering::SeqCst);
            if frontier >= scheduled + self.config.schedule.every_n_iterations {
                entry.wake.notify_one();
            }
        }
        entry.events.push(Event::Progress {
            chain: batch.chain,
            phase: batch.phase,
            through_iteration: through,
        });
        Ok(through)
    }

    /// One evaluation. Takes the snapshot under the analyzer lock so a slow
    /// evaluation can never overwrite a newer one.
    pub fn analyze(&self, run_id: &RunId, entry: &RunEntry) -> Result<(), StoreError> {
        let mut analyzer = entry.analyzer();
        let generation = entry.generation.load(Ordering::SeqCst);
        entry.scheduled_frontier.store(
            entry.sample_frontier.load(Ordering::SeqCst),
            Ordering::SeqCst,
        );
        let snapshot = self.store.snapshot(run_id, self.config.phase)?;
        let before: BTreeSet<String> = analyzer
            .tracker()
            .view()
            .diff
            .active()
            .map(|w| w.id.clone())
            .collect();
        let changed = analyzer.refresh(&snapshot, &self.config);
        entry
            .analyzed_generation
            .store(generation, Ordering::SeqCst);
        let view = analyzer.tracker().view();
        if changed {
            let after: BTreeSet<String> = view.diff.active().map(|w| w.id.clone()).collect();
            entry.events.push(Event::WarningDiff {
                version: view.version,
                evaluated_at: view.evaluated_at,
                new: after.difference(&before).cloned().collect(),
                resolved: before.difference(&after).cloned().collect(),
            });
        }
        entry.events.push(Event::StatsUpdated {
            evaluated_at: view.evaluated_at,
            evaluations: analyzer.evaluations(),
        });
        Ok(())
    }

    /// Final evaluation after the producer finished; stops the scheduler.
    pub fn close(&self, run_id: &RunId, entry: &RunEntry) -> Result<(), StoreError> {
        self.analyze(run_id, entry)?;
        entry.done.store(true, Ordering::SeqCst);
        entry.wake.notify_one();
        Ok(())
    }

    pub fn stale(&self, entry: &RunEntry) -> bool {
        entry.generation.load(Ordering::SeqCst) != entry.analyzed_generation.load(Ordering::SeqCst)
    }
}

/// Re-analyses a run when woken by ingest or when `max_interval` has passed
/// since the previous evaluation started with unanalysed data waiting,
/// whichever comes first.
async fn analysis_loop(state: Arc<AppState>, run_id: RunId, entry: Arc<RunEntry>) {
    let tick = state.config.schedule.max_interval;
    let mut period_start = Instant::now();
    loop {
        let _ = tokio::time::timeout(
            tick.saturating_sub(period_start.elapsed()),
            entry.wake.notified(),
        )
        .await;
        if entry.done.load(Ordering::SeqCst) {
            break;
        }
        if !state.stale(&entry) {
            if period_start.elapsed() >= tick {
                period_start = Instant::now();
            }
            continue;
        }
        period_start = Instant::now();
        let (state, run_id, entry) = (state.clone(), run_id.clone(), entry.clone());
        let result = tokio::task::spawn_blocking(move || state.analyze(&run_id, &entry)).await;
        if let Ok(Err(e)) = result {
            tracing::warn!("analysis failed: {e}");
        }
    }
}
