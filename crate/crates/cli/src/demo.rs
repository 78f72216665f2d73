//! Seeded demo: an in-process server, a builtin sampler streaming to it over
//! HTTP, and a warnings timeline read back from the event feed.

use std::io::Write;
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{Context, Result};
use chainsight_core::model::ModelDescriptor;
use chainsight_core::sampler::{
    run_sampler, BatchSink, BuiltinModel, RecordingSink, SamplerConfig, SinkError,
};
use chainsight_core::store::{Outcome, RunId, RunSpec, SampleBatch};
use chainsight_core::warnings::Warning;
use chainsight_server::client::{Client, HttpSink};
use chainsight_server::wire::Event;

/// Passes traffic through and reports the run id once it is known.
struct Announce<S> {
    inner: S,
    tx: Option<mpsc::Sender<RunId>>,
}

impl<S: BatchSink> BatchSink for Announce<S> {
    fn create_run(
        &mut self,
        descriptor: &ModelDescriptor,
        spec: &RunSpec,
    ) -> Result<RunId, SinkError> {
        let id = self.inner.create_run(descriptor, spec)?;
        if let Some(tx) = self.tx.take() {
            let _ = tx.send(id.clone());
        }
        Ok(id)
    }

    fn send_batch(&mut self, batch: &SampleBatch) -> Result<(), SinkError> {
        self.inner.send_batch(batch)
    }

    fn stop_requested(&mut self, run_id: &RunId) -> Result<bool, SinkError> {
        self.inner.stop_requested(run_id)
    }

    fn finish(&mut self, run_id: &RunId, outcome: Outcome) -> Result<(), SinkError> {
        self.inner.finish(run_id, outcome)
    }
}

pub fn describe(w: &Warning) -> String {
    let vars: Vec<String> = w
        .variables
        .iter()
        .map(|v| {
            let idx: Vec<String> = v.indices.iter().map(usize::to_string).collect();
            if idx.is_empty() {
                v.name.clone()
            } else {
                format!("{}[{}]", v.name, idx.join(","))
            }
        })
        .collect();
    let chains: Vec<String> = w.chains.iter().map(usize::to_string).collect();
    let mut s = format!("{} ({:?})", w.kind, w.severity);
    if !vars.is_empty() {
        s.push_str(&format!(" {}", vars.join(" ")));
    }
    if !chains.is_empty() {
        s.push_str(&format!(" chains {}", chains.join(",")));
    }
    s
}

/// Follows the event feed of `run_id` and prints one line per warning that
/// appears or resolves, until the run finishes.
fn follow(client: &Client, run_id: &RunId, out: &mut impl Write) -> Result<()> {
    let mut since = 0;
    loop {
        let batch = client.events(run_id, since, Duration::from_secs(30))?;
        since = batch.last_seq;
        for record in batch.events {
            match record.event {
                Event::WarningDiff {
                    evaluated_at,
                    new,
                    resolved,
                    ..
                } => {
                    let view = client.warnings(run_id)?;
                    let all: Vec<&Warning> =
                        view.diff.active().chain(&view.diff.resolved).collect();
                    for (sign, ids) in [("+", &new), ("-", &resolved)] {
                        for id in ids {
                            if let Some(w) = all.iter().find(|w| &w.id == id) {
                                writeln!(out, "[iter {evaluated_at:>5}] {sign} {}", describe(w))?;
                            }
                        }
                    }
                }
                Event::Finished { status } => {
                    writeln!(out, "run {run_id} {status:?}")?;
                    return Ok(());
                }
                _ => {}
            }
        }
    }
}

pub struct DemoOutcome {
    pub run_id: RunId,
}

/// Streams `model` with `config` to the server at `base_url` while printing
/// the warnings timeline to stdout.
pub fn run(
    base_url: &str,
    model: BuiltinModel,
    config: &SamplerConfig,
    record: Option<&std::path::Path>,
) -> Result<DemoOutcome> {
    let client = Client::new(base_url);
    let (tx, rx) = mpsc::channel();
    let watcher = {
        let client = client.clone();
        std::thread::spawn(move || -> Result<()> {
            let Ok(run_id) = rx.recv() else { return Ok(()) };
            follow(&client, &run_id, &mut std::io::stdout().lock())
        })
    };
    let http = HttpSink::new(client.clone());
    let outcome = match record {
        Some(path) => {
            let recorder = RecordingSink::new(http, path)
                .with_context(|| format!("cannot write {}", path.display()))?;
            let mut sink = Announce {
                inner: recorder,
                tx: Some(tx),
            };
            let out = run_sampler(model, config, &mut sink);
            sink.inner.into_inner()?;
            out
        }
        None => run_sampler(
            model,
            config,
            &mut Announce {
                inner: http,
                tx: Some(tx),
            },
        ),
    };
    let outcome = outcome.context("sampler failed")?;
    watcher
        .join()
        .map_err(|_| anyhow::anyhow!("timeline thread panicked"))??;
    Ok(DemoOutcome {
        run_id: outcome.run_id,
    })
}
