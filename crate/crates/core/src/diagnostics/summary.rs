//! Per-series and per-chain statistics for a whole snapshot.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{
    acceptance_rate, bulk_ess, burn_in_rhat_profile_with, rhat_and_ess, stuck_run_length, Measure,
};
use crate::store::{Algorithm, PhaseFilter, RunId, RunSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub enum AllChains {
    #[serde(rename = "ALL")]
    All,
}

/// A chain index, or `"ALL"` for cross-chain statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum ChainSel {
    Index(usize),
    All(AllChains),
}

impl ChainSel {
    pub const ALL: ChainSel = ChainSel::All(AllChains::All);

    pub fn parse(s: &str) -> Option<ChainSel> {
        if s.eq_ignore_ascii_case("all") {
            Some(ChainSel::ALL)
        } else {
            s.parse().ok().map(ChainSel::Index)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VariableChainStats {
    pub variable: String,
    pub chain: ChainSel,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Cross-chain only. Degenerate series report 1.0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess_bulk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BurnInStats {
    pub rhat_full: f64,
    pub rhat_tail: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SeriesDiagnostics {
    /// Flat name, e.g. `theta[3]`.
    pub name: String,
    /// Root variable name, e.g. `theta`.
    pub variable: String,
    /// Row-major index inside the root variable.
    pub index: usize,
    pub overall: VariableChainStats,
    pub per_chain: Vec<VariableChainStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<BurnInStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub draws: usize,
    /// Over the most recent `window` iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate_total: Option<f64>,
    pub stuck_run_length: usize,
}

/// Sample evidence for a statically detected scale dependency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FunnelObservation {
    pub parent: String,
    pub child: String,
    /// Variable whose series was scored as the scale.
    pub scale_input: String,
    /// `(child flat name, score)` for every child series scored.
    pub scores: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DiagnosticsSnapshot {
    pub run_id: RunId,
    pub algorithm: Algorithm,
    pub n_chains: usize,
    pub phase: PhaseFilter,
    pub draws_per_chain: Vec<usize>,
    pub series: Vec<SeriesDiagnostics>,
    pub chains: Vec<ChainDiagnostics>,
    #[serde(default)]
    pub funnels: Vec<FunnelObservation>,
}

impl DiagnosticsSnapshot {
    pub fn series(&self, flat_name: &str) -> Option<&SeriesDiagnostics> {
        self.series.iter().find(|s| s.name == flat_name)
    }

    pub fn stats(&self, flat_name: &str, chain: ChainSel) -> Option<&VariableChainStats> {
        let s = self.series(flat_name)?;
        match chain {
            ChainSel::All(_) => Some(&s.overall),
            ChainSel::Index(c) => s.per_chain.get(c),
        }
    }

    pub fn min_draws(&self) -> usize {
        self.draws_per_chain.iter().copied().min().unwrap_or(0)
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn is_constant(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

/// Statistics for every flat series and chain in `snapshot`. Acceptance
/// rates use the last `window` iterations of each chain.
pub fn compute_diagnostics(snapshot: &RunSnapshot, window: usize) -> DiagnosticsSnapshot {
    let draws_per_chain = snapshot.lengths();
    let chains: Vec<ChainDiagnostics> = snapshot
        .chains
        .iter()
        .enumerate()
        .map(|(chain, view)| {
            let accept = view.accept();
            ChainDiagnostics {
                chain,
                draws: view.len(),
                acceptance_rate: acceptance_rate(&accept, Some(window)).ok(),
                acceptance_rate_total: acceptance_rate(&accept, None).ok(),
                stuck_run_length: stuck_run_length(&accept).unwrap_or(0),
            }
        })
        .collect();

    let mut series = Vec::new();
    if let Some(layout) = &snapshot.layout {
        for column in 0..layout.width() {
            let (var, index) = layout.owner(column);
            let name = layout.names[column].clone();
            let per_chain_values = snapshot.series(column);
            let per_chain = per_chain_values
                .iter()
                .zip(&chains)
                .enumerate()
                .map(|(c, (values, chain))| {
                    let (mean, sd) = mean_sd(values);
                    let ess = bulk_ess(&[values]).ok();
                    VariableChainStats {
                        variable: name.clone(),
                        chain: ChainSel::Index(c),
                        n: values.len(),
                        mean,
                        sd,
                        rhat: None,
                        ess_bulk: ess.and_then(Measure::value),
                        acceptance_rate: chain.acceptance_rate,
                        degenerate: !values.is_empty() && is_constant(values),
                    }
                })
                .collect();

            let pooled: Vec<f64> = per_chain_values.iter().flatten().copied().collect();
            let (mean, sd) = mean_sd(&pooled);
            let (rhat, ess) = match rhat_and_ess(&per_chain_values) {
                Ok((rhat, ess)) => (Some(rhat), Some(ess)),
                Err(_) => (None, None),
            };
            let rates: Vec<f64> = chains.iter().filter_map(|c| c.acceptance_rate).collect();
            let overall = VariableChainStats {
                variable: name.clone(),
                chain: ChainSel::ALL,
                n: pooled.len(),
                mean,
                sd,
                rhat: rhat.map(Measure::value_or_one),
                ess_bulk: ess.and_then(Measure::value),
                acceptance_rate: (!rates.is_empty())
                    .then(|| rates.iter().sum::<f64>() / rates.len() as f64),
                degenerate: !pooled.is_empty() && is_constant(&pooled),
            };
            let burn_in = rhat
                .and_then(|r| burn_in_rhat_profile_with(&per_chain_values, r).ok())
                .map(|p| BurnInStats {
                    rhat_full: p.rhat_full.value_or_one(),
                    rhat_tail: p.rhat_tail.value_or_one(),
                    degenerate: p.rhat_full.is_degenerate() || p.rhat_tail.is_degenerate(),
                });
            series.push(SeriesDiagnostics {
                name,
                variable: var.decl.name.clone(),
                index,
                overall,
                per_chain,
                burn_in,
            });
        }
    }

    DiagnosticsSnapshot {
        run_id: snapshot.metadata.run_id.clone(),
        algorithm: snapshot.metadata.algorithm.clone(),
        n_chains: snapshot.metadata.n_chains,
        phase: snapshot.phase,
        draws_per_chain,
        series,
        chains,
        funnels: Vec::new(),
    }
}
