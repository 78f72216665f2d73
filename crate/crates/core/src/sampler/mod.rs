//! Reference samplers and builtin models that drive the engine without an
//! external probabilistic programming language.

mod kernels;
mod models;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::Utc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{LogRecord, SpillWriter};
use crate::model::ModelDescriptor;
use crate::store::{
    AcceptEvidence, Algorithm, ChainStore, DrawMatrix, Outcome, Phase, RunId, RunSpec, SampleBatch,
    StoreError,
};

pub use kernels::{hmc_step, rwmh_step, State};
pub use models::{BuiltinModel, LogDensity, Quadratic, SCHOOLS_SIGMA, SCHOOLS_Y};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerAlgorithm {
    RandomWalkMh,
    Hmc,
}

impl From<SamplerAlgorithm> for Algorithm {
    fn from(a: SamplerAlgorithm) -> Self {
        match a {
            SamplerAlgorithm::RandomWalkMh => Algorithm::RandomWalkMh,
            SamplerAlgorithm::Hmc => Algorithm::Hmc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algorithm: SamplerAlgorithm,
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub chains: usize,
    pub tune: usize,
    pub draws: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Initial values are drawn uniformly from `init_center ± init_radius`.
    pub init_center: f64,
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: SamplerAlgorithm::Hmc,
            step_size: 0.2,
            n_leapfrog: 10,
            chains: 4,
            tune: 100,
            draws: 3000,
            seed: 7,
            batch_size: 50,
            init_center: 0.0,
            init_radius: 2.0,
        }
    }
}

impl SamplerConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Config(m.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.n_leapfrog == 0 || self.chains == 0 || self.draws == 0 || self.batch_size == 0 {
            return bad("n_leapfrog, chains, draws and batch_size must be positive");
        }
        if !(self.init_radius >= 0.0) {
            return bad("init_radius must be non-negative");
        }
        Ok(())
    }

    pub fn hyperparameters(&self) -> BTreeMap<String, f64> {
        let mut h = BTreeMap::from([("step_size".to_string(), self.step_size)]);
        if self.algorithm == SamplerAlgorithm::Hmc {
            h.insert("n_leapfrog".into(), self.n_leapfrog as f64);
        }
        h
    }
}

/// Named sampler settings used by the demo command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultProfile {
    /// HMC, step 0.2, 100 tuning and 3000 sampling iterations, 4 chains.
    Default,
    /// Per-model settings that sample cleanly.
    Tuned,
    /// Random-walk proposals far too wide to ever be accepted.
    HugeStep,
    /// HMC steps so small that nearly every proposal is accepted.
    TinyStep,
    /// Random walk with no tuning phase, started far from the posterior.
    NoBurnIn,
}

impl FaultProfile {
    pub const ALL: [FaultProfile; 5] = [
        FaultProfile::Default,
        FaultProfile::Tuned,
        FaultProfile::HugeStep,
        FaultProfile::TinyStep,
        FaultProfile::NoBurnIn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultProfile::Default => "default",
            FaultProfile::Tuned => "tuned",
            FaultProfile::HugeStep => "huge_step",
            FaultProfile::TinyStep => "tiny_step",
            FaultProfile::NoBurnIn => "no_burn_in",
        }
    }

    pub fn config(self, model: BuiltinModel, seed: u64) -> SamplerConfig {
        let base = SamplerConfig {
            seed,
            ..SamplerConfig::default()
        };
        match self {
            FaultProfile::Default => base,
            FaultProfile::Tuned => match model {
                // Fixed-step HMC diverges from overdispersed starts where the
                // log-scale curvature is large; random walk copes with that.
                BuiltinModel::Linreg => SamplerConfig {
                    algorithm: SamplerAlgorithm::RandomWalkMh,
                    step_size: 0.25,
                    tune: 1000,
                    ..base
                },
                BuiltinModel::EightSchoolsCentered => SamplerConfig {
                    step_size: 0.05,
                    n_leapfrog: 20,
                    tune: 1000,
                    ..base
                },
                BuiltinModel::EightSchoolsNoncentered => SamplerConfig {
                    step_size: 0.5,
                    n_leapfrog: 8,
                    tune: 1000,
                    ..base
                },
                BuiltinModel::NealFunnel => SamplerConfig {
                    step_size: 0.1,
                    n_leapfrog: 20,
                    tune: 1000,
                    ..base
                },
            },
            FaultProfile::HugeStep => SamplerConfig {
                algorithm: SamplerAlgorithm::RandomWalkMh,
                step_size: 1e6,
                tune: 0,
                draws: 1000,
                ..base
            },
            FaultProfile::TinyStep => SamplerConfig {
                step_size: 0.002,
                n_leapfrog: 1,
                tune: 0,
                draws: 1000,
                ..base
            },
            FaultProfile::NoBurnIn => SamplerConfig {
                algorithm: SamplerAlgorithm::RandomWalkMh,
                step_size: 0.25,
                tune: 0,
                draws: 1000,
                init_center: 20.0,
                init_radius: 1.0,
                ..base
            },
        }
    }
}

impl std::str::FromStr for FaultProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = FaultProfile::ALL.iter().map(|p| p.name()).collect();
                format!(
                    "unknown fault profile `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct SinkError(pub String);

impl From<StoreError> for SinkError {
    fn from(e: StoreError) -> Self {
        SinkError(e.to_string())
    }
}

impl From<std::io::Error> for SinkError {
    fn from(e: std::io::Error) -> Self {
        SinkError(e.to_string())
    }
}

/// Destination of a sampler's wire traffic.
pub trait BatchSink {
    fn create_run(
        &mut self,
        descriptor: &ModelDescriptor,
        spec: &RunSpec,
    ) -> Result<RunId, SinkError>;
    fn send_batch(&mut self, batch: &SampleBatch) -> Result<(), SinkError>;
    fn stop_requested(&mut self, run_id: &RunId) -> Result<bool, SinkError>;
    fn finish(&mut self, run_id: &RunId, outcome: Outcome) -> Result<(), SinkError>;
}

/// Writes straight into an in-process store.
#[derive(Clone)]
pub struct StoreSink {
    pub store: Arc<ChainStore>,
}

impl StoreSink {
    pub fn new(store: Arc<ChainStore>) -> Self {
        Self { store }
    }
}

impl BatchSink for StoreSink {
    fn create_run(
        &mut self,
        descriptor: &ModelDescriptor,
        spec: &RunSpec,
    ) -> Result<RunId, SinkError> {
        Ok(self.store.create_run(descriptor.clone(), spec.clone())?)
    }

    fn send_batch(&mut self, batch: &SampleBatch) -> Result<(), SinkError> {
        self.store.append_batch(batch)?;
        Ok(())
    }

    fn stop_requested(&mut self, run_id: &RunId) -> Result<bool, SinkError> {
        Ok(self.store.read_control(run_id)?.stop)
    }

    fn finish(&mut self, run_id: &RunId, outcome: Outcome) -> Result<(), SinkError> {
        self.store.finish_run(run_id, outcome)?;
        Ok(())
    }
}

/// Records everything into a JSONL log, then forwards it.
pub struct RecordingSink<S> {
    inner: S,
    writer: SpillWriter,
}

impl<S: BatchSink> RecordingSink<S> {
    pub fn new(inner: S, path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self {
            inner,
            writer: SpillWriter::create(path)?,
        })
    }

    pub fn into_inner(mut self) -> std::io::Result<S> {
        self.writer.flush()?;
        Ok(self.inner)
    }
}

impl<S: BatchSink> BatchSink for RecordingSink<S> {
    fn create_run(
        &mut self,
        descriptor: &ModelDescriptor,
        spec: &RunSpec,
    ) -> Result<RunId, SinkError> {
        let id = self.inner.create_run(descriptor, spec)?;
        self.writer.write(&LogRecord::Run {
            descriptor: descriptor.clone(),
            metadata: spec.clone(),
        })?;
        Ok(id)
    }

    fn send_batch(&mut self, batch: &SampleBatch) -> Result<(), SinkError> {
        self.inner.send_batch(batch)?;
        self.writer.write(&LogRecord::Batch(batch.clone()))?;
        Ok(())
    }

    fn stop_requested(&mut self, run_id: &RunId) -> Result<bool, SinkError> {
        self.inner.stop_requested(run_id)
    }

    fn finish(&mut self, run_id: &RunId, outcome: Outcome) -> Result<(), SinkError> {
        self.inner.finish(run_id, outcome)?;
        self.writer.write(&LogRecord::Finish {
            run_id: run_id.clone(),
            outcome,
        })?;
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("non-finite log density at the initial point of chain {chain}")]
    BadInit { chain: usize },
    #[error("sink: {0}")]
    Sink(#[from] SinkError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerOutcome {
    pub run_id: RunId,
    pub outcome: Outcome,
    /// Iterations emitted per chain, tuning included.
    pub iterations: usize,
    pub acceptance_rate: Vec<f64>,
}

struct Chain {
    rng: ChaCha8Rng,
    state: State,
    accepted: usize,
    total: usize,
}

/// Runs `config.chains` chains round-robin, one batch at a time, streaming
/// every batch to `sink`. The stop flag is polled before each round.
pub fn run_sampler(
    model: BuiltinModel,
    config: &SamplerConfig,
    sink: &mut dyn BatchSink,
) -> Result<SamplerOutcome, SamplerError> {
    config.validate()?;
    let descriptor = model.descriptor();
    let spec = RunSpec {
        algorithm: config.algorithm.into(),
        n_chains: config.chains,
        n_tune: config.tune,
        n_draws_planned: config.draws,
        hyperparameters: config.hyperparameters(),
        started_at: Some(Utc::now()),
        label: Some(format!("{model} seed={}", config.seed)),
    };
    let run_id = sink.create_run(&descriptor, &spec)?;

    let mut chains = Vec::with_capacity(config.chains);
    for c in 0..config.chains {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(c as u64);
        let q: Vec<f64> = (0..model.dim())
            .map(|_| config.init_center + rng.random_range(-1.0..=1.0) * config.init_radius)
            .collect();
        let state = State::new(&model, q);
        if !state.lp.is_finite() {
            sink.finish(&run_id, Outcome::Aborted)?;
            return Err(SamplerError::BadInit { chain: c });
        }
        chains.push(Chain {
            rng,
            state,
            accepted: 0,
            total: 0,
        });
    }

    let tracked: Vec<String> = descriptor.tracked().map(|v| v.name.clone()).collect();
    let mut emitted = 0;
    for (phase, len) in [(Phase::Tune, config.tune), (Phase::Sample, config.draws)] {
        let mut start = 0;
        while start < len {
            if sink.stop_requested(&run_id)? {
                sink.finish(&run_id, Outcome::Aborted)?;
                return Ok(outcome(run_id, Outcome::Aborted, emitted, &chains));
            }
            let n = config.batch_size.min(len - start);
            for (c, chain) in chains.iter_mut().enumerate() {
                let batch = advance(model, config, chain, &run_id, c, phase, start, n, &tracked);
                sink.send_batch(&batch)?;
            }
            start += n;
            emitted += n;
        }
    }
    sink.finish(&run_id, Outcome::Finished)?;
    Ok(outcome(run_id, Outcome::Finished, emitted, &chains))
}

fn outcome(run_id: RunId, outcome: Outcome, iterations: usize, chains: &[Chain]) -> SamplerOutcome {
    SamplerOutcome {
        run_id,
        outcome,
        iterations,
        acceptance_rate: chains
            .iter()
            .map(|c| {
                if c.total == 0 {
                    0.0
                } else {
                    c.accepted as f64 / c.total as f64
                }
            })
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn advance(
    model: BuiltinModel,
    config: &SamplerConfig,
    chain: &mut Chain,
    run_id: &RunId,
    index: usize,
    phase: Phase,
    first: usize,
    n: usize,
    tracked: &[String],
) -> SampleBatch {
    let mut rows: BTreeMap<String, Vec<Vec<f64>>> = tracked
        .iter()
        .map(|t| (t.clone(), Vec::with_capacity(n)))
        .collect();
    let mut accept = Vec::with_capacity(n);
    for _ in 0..n {
        let ok = match config.algorithm {
            SamplerAlgorithm::RandomWalkMh => {
                rwmh_step(&model, &mut chain.state, config.step_size, &mut chain.rng)
            }
            SamplerAlgorithm::Hmc => hmc_step(
                &model,
                &mut chain.state,
                config.step_size,
                config.n_leapfrog,
                &mut chain.rng,
            ),
        };
        chain.total += 1;
        chain.accepted += usize::from(ok);
        accept.push(ok);
        for (name, values) in model.constrain(&chain.state.q) {
            if let Some(r) = rows.get_mut(&name) {
                r.push(values);
            }
        }
    }
    SampleBatch {
        run_id: run_id.clone(),
        chain: index,
        phase,
        first_iteration: first as u64,
        draws: rows
            .into_iter()
            .map(|(k, v)| (k, DrawMatrix::Rows(v)))
            .collect(),
        accept: AcceptEvidence::Booleans(accept),
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("non-finite log density or gradient near the check point")]
pub struct NonFinite;

/// Largest relative error `|g − ĝ| / (|g| + 1e−8)` between the analytic
/// gradient and central differences with spacing `h`.
pub fn gradient_check(target: &dyn LogDensity, point: &[f64], h: f64) -> Result<f64, NonFinite> {
    let (lp, grad) = target.log_density_and_gradient(point);
    if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(NonFinite);
    }
    let mut worst: f64 = 0.0;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let up = target.log_density(&x);
        x[i] = point[i] - h;
        let down = target.log_density(&x);
        x[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(NonFinite);
        }
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((grad[i] - numeric).abs() / (grad[i].abs() + 1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{PhaseFilter, RunStatus};

    fn small(algorithm: SamplerAlgorithm) -> SamplerConfig {
        SamplerConfig {
            algorithm,
            chains: 2,
            tune: 30,
            draws: 120,
            batch_size: 25,
            step_size: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn streams_contiguous_batches_into_the_store() {
        let store = Arc::new(ChainStore::new());
        let mut sink = StoreSink::new(store.clone());
        let out = run_sampler(
            BuiltinModel::Linreg,
            &small(SamplerAlgorithm::Hmc),
            &mut sink,
        )
        .unwrap();
        assert_eq!(out.outcome, Outcome::Finished);
        assert_eq!(out.iterations, 150);
        assert_eq!(store.status(&out.run_id).unwrap(), RunStatus::Finished);
        assert_eq!(
            store
                .snapshot(&out.run_id, PhaseFilter::Sample)
                .unwrap()
                .lengths(),
            [120, 120]
        );
        assert_eq!(
            store
                .snapshot(&out.run_id, PhaseFilter::Tune)
                .unwrap()
                .lengths(),
            [30, 30]
        );
    }

    #[derive(Default)]
    struct Capture {
        batches: Vec<String>,
        stop_after: Option<usize>,
        finished: Option<Outcome>,
    }

    impl BatchSink for Capture {
        fn create_run(&mut self, _: &ModelDescriptor, _: &RunSpec) -> Result<RunId, SinkError> {
            Ok(RunId::from("run-test"))
        }
        fn send_batch(&mut self, batch: &SampleBatch) -> Result<(), SinkError> {
            self.batches.push(serde_json::to_string(batch).unwrap());
            Ok(())
        }
        fn stop_requested(&mut self, _: &RunId) -> Result<bool, SinkError> {
            Ok(self.stop_after.is_some_and(|n| self.batches.len() >= n))
        }
        fn finish(&mut self, _: &RunId, outcome: Outcome) -> Result<(), SinkError> {
            self.finished = Some(outcome);
            Ok(())
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        for alg in [SamplerAlgorithm::Hmc, SamplerAlgorithm::RandomWalkMh] {
            let (mut a, mut b) = (Capture::default(), Capture::default());
            run_sampler(BuiltinModel::NealFunnel, &small(alg), &mut a).unwrap();
            run_sampler(BuiltinModel::NealFunnel, &small(alg), &mut b).unwrap();
            assert_eq!(a.batches, b.batches);
            let mut c = Capture::default();
            run_sampler(
                BuiltinModel::NealFunnel,
                &SamplerConfig {
                    seed: 8,
                    ..small(alg)
                },
                &mut c,
            )
            .unwrap();
            assert_ne!(a.batches, c.batches);
        }
    }

    #[test]
    fn stop_aborts_at_a_batch_boundary() {
        let mut sink = Capture {
            stop_after: Some(5),
            ..Default::default()
        };
        let out = run_sampler(
            BuiltinModel::Linreg,
            &small(SamplerAlgorithm::Hmc),
            &mut sink,
        )
        .unwrap();
        assert_eq!(out.outcome, Outcome::Aborted);
        assert_eq!(sink.finished, Some(Outcome::Aborted));
        // Round-robin rounds of 2 chains: stop seen after the third round.
        assert_eq!(sink.batches.len(), 6);
    }

    #[test]
    fn bad_init_aborts() {
        let mut sink = Capture::default();
        let cfg = SamplerConfig {
            init_center: -1e6,
            ..small(SamplerAlgorithm::Hmc)
        };
        let err = run_sampler(BuiltinModel::NealFunnel, &cfg, &mut sink).unwrap_err();
        assert!(matches!(err, SamplerError::BadInit { chain: 0 }), "{err}");
        assert_eq!(sink.finished, Some(Outcome::Aborted));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in BuiltinModel::ALL {
            let origin = vec![0.0; m.dim()];
            assert!(
                gradient_check(&m, &origin, 1e-5).unwrap() < 1e-6,
                "{m} origin"
            );
            let point: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(
                gradient_check(&m, &point, 1e-5).unwrap() < 1e-6,
                "{m} random"
            );
        }
        let quad = Quadratic {
            scales: vec![1.0, 2.0, 0.5],
        };
        assert!(gradient_check(&quad, &[0.3, -1.2, 2.0], 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn smaller_steps_accept_more_on_a_quadratic() {
        let quad = Quadratic {
            scales: vec![1.0; 5],
        };
        let rate = |step: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut s = State::new(&quad, vec![0.5; 5]);
            (0..2000)
                .filter(|_| hmc_step(&quad, &mut s, step, 10, &mut rng))
                .count()
        };
        assert!(rate(0.05) > rate(0.8));
        assert!(rate(0.05) > 1980);
    }
}
