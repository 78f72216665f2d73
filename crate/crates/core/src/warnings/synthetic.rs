//! Hand-built diagnostics for exercising the rules without sampling.

use chrono::{TimeZone, Utc};

use crate::diagnostics::{
    BurnInStats, ChainDiagnostics, ChainSel, DiagnosticsSnapshot, SeriesDiagnostics,
    VariableChainStats,
};
use crate::store::{Algorithm, PhaseFilter, RunId, RunMetadata};

#[derive(Debug, Clone)]
pub struct SyntheticRun {
    algorithm: Algorithm,
    draws: usize,
    chains: Vec<ChainDiagnostics>,
    series: Vec<SeriesDiagnostics>,
}

impl SyntheticRun {
    /// `n_chains` chains of `draws` post-tune draws, no acceptance evidence.
    pub fn new(algorithm: Algorithm, n_chains: usize, draws: usize) -> Self {
        let chains = (0..n_chains)
            .map(|chain| ChainDiagnostics {
                chain,
                draws,
                acceptance_rate: None,
                acceptance_rate_total: None,
                stuck_run_length: 0,
            })
            .collect();
        Self {
            algorithm,
            draws,
            chains,
            series: Vec::new(),
        }
    }

    pub fn acceptance(mut self, rate: f64) -> Self {
        for c in &mut self.chains {
            c.acceptance_rate = Some(rate);
            c.acceptance_rate_total = Some(rate);
        }
        self
    }

    pub fn chain_acceptance(mut self, chain: usize, rate: f64) -> Self {
        self.chains[chain].acceptance_rate = Some(rate);
        self.chains[chain].acceptance_rate_total = Some(rate);
        self
    }

    pub fn stuck(mut self, chain: usize, run_length: usize) -> Self {
        self.chains[chain].stuck_run_length = run_length;
        self
    }

    /// Adds `len` flat series of root `name`, all with the same R̂ and ESS.
    pub fn variable(mut self, name: &str, len: usize, rhat: f64, ess: f64) -> Self {
        for index in 0..len {
            self = self.series(name, len, index, rhat, ess, None);
        }
        self
    }

    /// Adds one flat series. `burn_in` is `(rhat_full, rhat_tail)`.
    pub fn series(
        mut self,
        name: &str,
        len: usize,
        index: usize,
        rhat: f64,
        ess: f64,
        burn_in: Option<(f64, f64)>,
    ) -> Self {
        let flat = if len > 1 {
            format!("{name}[{index}]")
        } else {
            name.to_string()
        };
        let stats = |chain: ChainSel, n: usize| VariableChainStats {
            variable: flat.clone(),
            chain,
            n,
            mean: 0.0,
            sd: 1.0,
            rhat: (chain == ChainSel::ALL).then_some(rhat),
            ess_bulk: Some(ess),
            acceptance_rate: None,
            degenerate: false,
        };
        let n_chains = self.chains.len();
        self.series.push(SeriesDiagnostics {
            name: flat.clone(),
            variable: name.to_string(),
            index,
            overall: stats(ChainSel::ALL, self.draws * n_chains),
            per_chain: (0..n_chains)
                .map(|c| stats(ChainSel::Index(c), self.draws))
                .collect(),
            burn_in: Some(match burn_in {
                Some((rhat_full, rhat_tail)) => BurnInStats {
                    rhat_full,
                    rhat_tail,
                    degenerate: false,
                },
                None => BurnInStats {
                    rhat_full: rhat,
                    rhat_tail: rhat,
                    degenerate: false,
                },
            }),
        });
        self
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            run_id: RunId::from("synthetic"),
            algorithm: self.algorithm.clone(),
            n_chains: self.chains.len(),
            n_tune: 0,
            n_draws_planned: self.draws,
            hyperparameters: Default::default(),
            started_at: Utc.timestamp_opt(0, 0).unwrap(),
            label: None,
        }
    }

    pub fn build(&self) -> DiagnosticsSnapshot {
        DiagnosticsSnapshot {
            run_id: RunId::from("synthetic"),
            algorithm: self.algorithm.clone(),
            n_chains: self.chains.len(),
            phase: PhaseFilter::Sample,
            draws_per_chain: vec![self.draws; self.chains.len()],
            series: self.series.clone(),
            chains: self.chains.clone(),
            funnels: Vec::new(),
        }
    }
}
