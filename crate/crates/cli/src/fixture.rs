//! Seeded JSONL batch logs used as replay fixtures.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use chainsight_core::log::{LogRecord, SpillWriter};
use chainsight_core::model::{ModelDescriptor, VariableDecl, VariableKind};
use chainsight_core::store::{
    AcceptEvidence, Algorithm, DrawMatrix, Outcome, Phase, RunId, RunSpec, SampleBatch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct IidFixture {
    pub seed: u64,
    pub chains: usize,
    pub draws: usize,
    pub batch_size: usize,
}

impl Default for IidFixture {
    fn default() -> Self {
        Self {
            seed: 7,
            chains: 4,
            draws: 1000,
            batch_size: 50,
        }
    }
}

impl IidFixture {
    /// Independent standard-normal draws for a scalar `mu` and a 4-vector `z`,
    /// with random-walk style accept flags at rate 0.3.
    pub fn records(&self) -> Vec<LogRecord> {
        let descriptor = ModelDescriptor::new(
            vec![
                VariableDecl::new("mu", VariableKind::Latent).distribution("Normal"),
                VariableDecl::new("z", VariableKind::Latent)
                    .distribution("Normal")
                    .shape([4]),
            ],
            vec![],
        );
        let spec = RunSpec {
            algorithm: Algorithm::RandomWalkMh,
            n_chains: self.chains,
            n_tune: 0,
            n_draws_planned: self.draws,
            hyperparameters: BTreeMap::new(),
            started_at: None,
            label: Some(format!("iid seed={}", self.seed)),
        };
        let run_id = RunId::from("iid");
        let mut rngs: Vec<ChaCha8Rng> = (0..self.chains)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(c as u64);
                rng
            })
            .collect();
        let mut records = vec![LogRecord::Run {
            descriptor,
            metadata: spec,
        }];
        let mut first = 0;
        while first < self.draws {
            let len = self.batch_size.min(self.draws - first);
            for (chain, rng) in rngs.iter_mut().enumerate() {
                let mu: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
                let z: Vec<Vec<f64>> = (0..len)
                    .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let accept: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < 0.3).collect();
                records.push(LogRecord::Batch(SampleBatch {
                    run_id: run_id.clone(),
                    chain,
                    phase: Phase::Sample,
                    first_iteration: first as u64,
                    draws: BTreeMap::from([
                        ("mu".to_string(), DrawMatrix::Scalars(mu)),
                        ("z".to_string(), DrawMatrix::Rows(z)),
                    ]),
                    accept: AcceptEvidence::Booleans(accept),
                }));
            }
            first += len;
        }
        records.push(LogRecord::Finish {
            run_id,
            outcome: Outcome::Finished,
        });
        records
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = SpillWriter::create(path)?;
        for r in self.records() {
            out.write(&r)?;
        }
        out.flush()?;
        Ok(())
    }
}
