//! The warning decision procedure.
//!
//! Efficiency rules (funnel, low ESS with high/low acceptance, isolated low
//! ESS) are mutually exclusive per root variable in that priority order. The
//! isolated acceptance rule is dropped when any efficiency rule already
//! covers one of its chains. R̂, burn-in and stuck-chain rules are
//! independent of everything else.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use super::{
    render_reparameterization, warning_id, AcceptanceBand, AffectedVariable, FunnelCandidate,
    Thresholds, Warning, WarningKind, WarningStatus,
};
use crate::diagnostics::{DiagnosticsSnapshot, SeriesDiagnostics};
use crate::model::ModelDescriptor;
use crate::store::RunMetadata;

struct Acceptance {
    band: AcceptanceBand,
    rates: Vec<Option<f64>>,
    high: Vec<usize>,
    low: Vec<usize>,
}

impl Acceptance {
    fn new(diag: &DiagnosticsSnapshot, band: AcceptanceBand) -> Self {
        let rates: Vec<Option<f64>> = diag.chains.iter().map(|c| c.acceptance_rate).collect();
        let pick = |f: &dyn Fn(f64) -> bool| -> Vec<usize> {
            rates
                .iter()
                .enumerate()
                .filter(|(_, r)| r.is_some_and(f))
                .map(|(c, _)| c)
                .collect()
        };
        let high = pick(&|r| r > band.high);
        let low = pick(&|r| r < band.low);
        Self {
            band,
            rates,
            high,
            low,
        }
    }

    fn out_of_band(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.high.iter().chain(&self.low).copied().collect();
        all.sort_unstable();
        all
    }

    fn pooled(&self) -> Option<f64> {
        let known: Vec<f64> = self.rates.iter().flatten().copied().collect();
        (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64)
    }

    fn evidence(&self, ev: &mut BTreeMap<String, Value>) {
        ev.insert("acceptance_rate".into(), json!(self.pooled()));
        ev.insert("acceptance_rates".into(), json!(self.rates));
        ev.insert(
            "acceptance_band".into(),
            json!([self.band.low, self.band.high]),
        );
    }
}

struct RootStats<'a> {
    name: &'a str,
    series: Vec<&'a SeriesDiagnostics>,
}

fn roots(diag: &DiagnosticsSnapshot) -> Vec<RootStats<'_>> {
    let mut out: Vec<RootStats<'_>> = Vec::new();
    for s in &diag.series {
        match out.last_mut() {
            Some(last) if last.name == s.variable => last.series.push(s),
            _ => out.push(RootStats {
                name: &s.variable,
                series: vec![s],
            }),
        }
    }
    out
}

fn max_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn min_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
}

/// Flat indices of the affected series; empty for a scalar variable.
fn indices(series: &[&SeriesDiagnostics]) -> Vec<usize> {
    series
        .iter()
        .filter(|s| s.name != s.variable)
        .map(|s| s.index)
        .collect()
}

struct Builder<'a> {
    descriptor: &'a ModelDescriptor,
    frontier: u64,
    all_chains: Vec<usize>,
}

impl Builder<'_> {
    fn warning(
        &self,
        kind: WarningKind,
        root: Option<(&str, Vec<usize>)>,
        chains: Vec<usize>,
        evidence: BTreeMap<String, Value>,
        message: String,
    ) -> Warning {
        let root_name = root.as_ref().map(|(n, _)| *n);
        let source_span = root_name
            .and_then(|n| self.descriptor.variable(n))
            .and_then(|v| v.source_span.clone());
        Warning {
            id: warning_id(kind, root_name, &chains),
            kind,
            severity: kind.severity(),
            variables: root
                .into_iter()
                .map(|(name, indices)| AffectedVariable {
                    name: name.to_string(),
                    indices,
                })
                .collect(),
            chains,
            evidence,
            message,
            suggestion: kind.suggestion().to_string(),
            suggested_code: None,
            source_span,
            first_seen: self.frontier,
            last_seen: self.frontier,
            status: WarningStatus::Active,
        }
    }
}

fn label(name: &str, idx: &[usize], total: usize) -> String {
    if total <= 1 {
        name.to_string()
    } else if idx.len() == total {
        format!("{name} (all {total} entries)")
    } else {
        let parts: Vec<String> = idx.iter().map(usize::to_string).collect();
        format!("{name}[{}]", parts.join(","))
    }
}

/// Evaluates every rule against one diagnostics snapshot. Returns nothing
/// while any chain has fewer than `min_draws_for_warnings` post-tune draws.
pub fn evaluate(
    diag: &DiagnosticsSnapshot,
    candidates: &[FunnelCandidate],
    thresholds: &Thresholds,
    metadata: &RunMetadata,
    descriptor: &ModelDescriptor,
) -> Vec<Warning> {
    if diag.chains.is_empty() || diag.min_draws() < thresholds.min_draws_for_warnings {
        return Vec::new();
    }
    let accept = Acceptance::new(diag, thresholds.band(&metadata.algorithm));
    let out_of_band = accept.out_of_band();
    let n_chains = diag.chains.len();
    let ess_low = thresholds.ess_low_per_chain * n_chains as f64;
    let b = Builder {
        descriptor,
        frontier: diag.draws_per_chain.iter().copied().max().unwrap_or(0) as u64,
        all_chains: (0..n_chains).collect(),
    };

    let mut warnings = Vec::new();
    let mut efficiency_chains: BTreeSet<usize> = BTreeSet::new();

    for root in roots(diag) {
        let total = root.series.len();
        let live: Vec<&SeriesDiagnostics> = root
            .series
            .iter()
            .copied()
            .filter(|s| !s.overall.degenerate)
            .collect();

        // HighRhat
        let high_rhat: Vec<&SeriesDiagnostics> = live
            .iter()
            .copied()
            .filter(|s| s.overall.rhat.is_some_and(|r| r > thresholds.rhat_warn))
            .collect();
        if !high_rhat.is_empty() {
            let idx = indices(&high_rhat);
            let rhat_max = max_of(high_rhat.iter().filter_map(|s| s.overall.rhat));
            let mut ev = BTreeMap::new();
            ev.insert("rhat_max".into(), json!(rhat_max));
            ev.insert("rhat_warn".into(), json!(thresholds.rhat_warn));
            let msg = format!(
                "Chains disagree on {}: R-hat up to {:.3} exceeds {}.",
                label(root.name, &idx, total),
                rhat_max.unwrap_or(f64::NAN),
                thresholds.rhat_warn
            );
            warnings.push(b.warning(
                WarningKind::HighRhat,
                Some((root.name, idx)),
                b.all_chains.clone(),
                ev,
                msg,
            ));
        }

        // BurnIn
        let burn: Vec<&SeriesDiagnostics> = live
            .iter()
            .copied()
            .filter(|s| {
                s.burn_in.is_some_and(|p| {
                    !p.degenerate
                        && p.rhat_full > thresholds.burn_in_full_threshold
                        && p.rhat_tail <= thresholds.rhat_warn
                })
            })
            .collect();
        if !burn.is_empty() {
            let idx = indices(&burn);
            let full = max_of(burn.iter().filter_map(|s| s.burn_in.map(|p| p.rhat_full)));
            let tail = max_of(burn.iter().filter_map(|s| s.burn_in.map(|p| p.rhat_tail)));
            let mut ev = BTreeMap::new();
            ev.insert("rhat_full_max".into(), json!(full));
            ev.insert("rhat_tail_max".into(), json!(tail));
            ev.insert(
                "burn_in_full_threshold".into(),
                json!(thresholds.burn_in_full_threshold),
            );
            ev.insert("rhat_warn".into(), json!(thresholds.rhat_warn));
            let msg = format!(
                "{} mixes only in the second half of the chains (R-hat {:.3} over all draws, {:.3} over the last half).",
                label(root.name, &idx, total),
                full.unwrap_or(f64::NAN),
                tail.unwrap_or(f64::NAN)
            );
            warnings.push(b.warning(
                WarningKind::BurnIn,
                Some((root.name, idx)),
                b.all_chains.clone(),
                ev,
                msg,
            ));
        }

        // Efficiency group: FunnelAcceptance > LowEssHigh/LowAcceptance > LowEssIsolated.
        let low_ess: Vec<&SeriesDiagnostics> = live
            .iter()
            .copied()
            .filter(|s| s.overall.ess_bulk.is_some_and(|e| e < ess_low))
            .collect();
        let ess_min = min_of(low_ess.iter().filter_map(|s| s.overall.ess_bulk));
        let ess_evidence = |ev: &mut BTreeMap<String, Value>| {
            ev.insert("ess_bulk_min".into(), json!(ess_min));
            ev.insert("ess_low_threshold".into(), json!(ess_low));
        };
        let funnels: Vec<&FunnelCandidate> =
            candidates.iter().filter(|c| c.child == root.name).collect();

        if !funnels.is_empty() && (!out_of_band.is_empty() || !low_ess.is_empty()) {
            let chains = if out_of_band.is_empty() {
                b.all_chains.clone()
            } else {
                out_of_band.clone()
            };
            let idx = if low_ess.is_empty() {
                indices(&root.series)
            } else {
                indices(&low_ess)
            };
            let mut ev = BTreeMap::new();
            accept.evidence(&mut ev);
            ess_evidence(&mut ev);
            let parents: Vec<&str> = funnels.iter().map(|c| c.parent.as_str()).collect();
            ev.insert("parents".into(), json!(parents));
            ev.insert(
                "path".into(),
                json!(funnels.iter().map(|c| c.path_text()).collect::<Vec<_>>()),
            );
            let observed = diag
                .funnels
                .iter()
                .filter(|f| f.child == root.name && parents.contains(&f.parent.as_str()))
                .filter_map(|f| f.max_score);
            if let Some(score) = max_of(observed) {
                ev.insert("funnel_score_max".into(), json!(score));
                ev.insert(
                    "funnel_confirmed".into(),
                    json!(score >= thresholds.funnel_score_min),
                );
            }
            let msg = format!(
                "The scale of {} is controlled by {}; this funnel-shaped posterior is hard to sample{}.",
                root.name,
                parents.join(", "),
                match accept.pooled() {
                    Some(rate) if !out_of_band.is_empty() => format!(" (acceptance rate {rate:.2})"),
                    _ => String::new(),
                }
            );
            efficiency_chains.extend(&chains);
            let mut w = b.warning(
                WarningKind::FunnelAcceptance,
                Some((root.name, idx)),
                chains,
                ev,
                msg,
            );
            w.suggested_code = Some(render_reparameterization(funnels[0], descriptor));
            warnings.push(w);
        } else if !low_ess.is_empty() {
            let idx = indices(&low_ess);
            let mut ev = BTreeMap::new();
            accept.evidence(&mut ev);
            ess_evidence(&mut ev);
            let what = label(root.name, &idx, total);
            let (kind, chains, msg) = if out_of_band.is_empty() {
                (
                    WarningKind::LowEssIsolated,
                    b.all_chains.clone(),
                    format!(
                        "Effective sample size of {what} is low ({:.0} < {ess_low:.0}).",
                        ess_min.unwrap_or(0.0)
                    ),
                )
            } else if accept.high.len() > accept.low.len() {
                (
                    WarningKind::LowEssHighAcceptance,
                    accept.high.clone(),
                    format!("Effective sample size of {what} is low while acceptance is above the band; draws are highly autocorrelated."),
                )
            } else {
                (
                    WarningKind::LowEssLowAcceptance,
                    accept.low.clone(),
                    format!("Effective sample size of {what} is low while acceptance is below the band; most proposals are rejected."),
                )
            };
            if kind != WarningKind::LowEssIsolated {
                efficiency_chains.extend(&chains);
            }
            warnings.push(b.warning(kind, Some((root.name, idx)), chains, ev, msg));
        }
    }

    // StuckChain
    let stuck: Vec<usize> = diag
        .chains
        .iter()
        .filter(|c| c.stuck_run_length >= thresholds.stuck_window)
        .map(|c| c.chain)
        .collect();
    if !stuck.is_empty() {
        let longest = diag
            .chains
            .iter()
            .map(|c| c.stuck_run_length)
            .max()
            .unwrap_or(0);
        let mut ev = BTreeMap::new();
        ev.insert("stuck_run_length".into(), json!(longest));
        ev.insert("stuck_window".into(), json!(thresholds.stuck_window));
        let msg = format!(
            "Chain(s) {stuck:?} have not accepted a proposal in the last {longest} iterations."
        );
        warnings.push(b.warning(WarningKind::StuckChain, None, stuck, ev, msg));
    }

    // AcceptanceIsolated
    if !out_of_band.is_empty() && !out_of_band.iter().any(|c| efficiency_chains.contains(c)) {
        let mut ev = BTreeMap::new();
        accept.evidence(&mut ev);
        let overall_min = min_of(
            diag.series
                .iter()
                .filter(|s| !s.overall.degenerate)
                .filter_map(|s| s.overall.ess_bulk),
        );
        ev.insert("ess_bulk_min".into(), json!(overall_min));
        ev.insert("ess_low_threshold".into(), json!(ess_low));
        let side = if accept.high.len() > accept.low.len() {
            "above"
        } else {
            "below"
        };
        let msg = format!(
            "Acceptance rate of chain(s) {out_of_band:?} is {side} the [{}, {}] band for {}.",
            accept.band.low, accept.band.high, metadata.algorithm
        );
        warnings.push(b.warning(WarningKind::AcceptanceIsolated, None, out_of_band, ev, msg));
    }

    warnings.sort_by_key(|w| w.kind);
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DependencyEdge, Slot, Support, VariableDecl, VariableKind};
    use crate::store::Algorithm;
    use crate::warnings::{funnel_static_detect, Severity, SyntheticRun};

    fn schools() -> ModelDescriptor {
        ModelDescriptor::new(
            vec![
                VariableDecl::new("mu", VariableKind::Latent),
                VariableDecl::new("tau", VariableKind::Latent).support(Support::Positive),
                VariableDecl::new("theta", VariableKind::Latent)
                    .shape([8])
                    .span("model.py", 4, 5),
                VariableDecl::new("x", VariableKind::Latent),
            ],
            vec![
                DependencyEdge::new("mu", "theta", Slot::Location),
                DependencyEdge::new("tau", "theta", Slot::Scale),
            ],
        )
    }

    fn run(r: &SyntheticRun, funnel: bool) -> Vec<Warning> {
        let d = schools();
        let c = if funnel {
            funnel_static_detect(&d)
        } else {
            Vec::new()
        };
        evaluate(&r.build(), &c, &Thresholds::default(), &r.metadata(), &d)
    }

    fn kinds(ws: &[Warning]) -> Vec<WarningKind> {
        ws.iter().map(|w| w.kind).collect()
    }

    fn base() -> SyntheticRun {
        SyntheticRun::new(Algorithm::Hmc, 4, 1000)
            .acceptance(0.75)
            .variable("mu", 1, 1.0, 2000.0)
    }

    #[test]
    fn clean_run_is_silent() {
        assert!(run(&base().variable("theta", 8, 1.001, 3000.0), true).is_empty());
    }

    #[test]
    fn gated_below_min_draws() {
        let r = SyntheticRun::new(Algorithm::Hmc, 4, 199)
            .acceptance(0.1)
            .stuck(0, 199)
            .variable("x", 1, 2.0, 5.0);
        assert!(run(&r, true).is_empty());
    }

    #[test]
    fn funnel_with_low_acceptance() {
        let r = base().acceptance(0.30).variable("theta", 8, 1.0, 3000.0);
        let ws = run(&r, true);
        assert_eq!(kinds(&ws), [WarningKind::FunnelAcceptance]);
        let w = &ws[0];
        assert_eq!(w.severity, Severity::Critical);
        assert_eq!(w.variables[0].indices, (0..8).collect::<Vec<_>>());
        assert!(w
            .suggested_code
            .as_deref()
            .unwrap()
            .contains("theta = mu + tau * Z"));
        assert_eq!(w.source_span.as_ref().unwrap().to_string(), "model.py:4-5");
        assert_eq!(w.evidence["parents"], json!(["tau"]));
    }

    #[test]
    fn high_acceptance_low_ess() {
        let ws = run(&base().acceptance(0.97).variable("x", 1, 1.0, 40.0), false);
        assert_eq!(kinds(&ws), [WarningKind::LowEssHighAcceptance]);
        assert_eq!(ws[0].suggestion, "Increase the proposer's step size.");
    }

    #[test]
    fn aggregation_one_warning_eight_indices() {
        let ws = run(&base().variable("theta", 8, 1.0, 50.0), false);
        assert_eq!(kinds(&ws), [WarningKind::LowEssIsolated]);
        assert_eq!(ws[0].variables[0].indices.len(), 8);
    }

    #[test]
    fn acceptance_isolated_suppressed_by_efficiency_rule() {
        let ws = run(&base().acceptance(0.3).variable("x", 1, 1.0, 40.0), false);
        assert_eq!(kinds(&ws), [WarningKind::LowEssLowAcceptance]);
        let ws = run(&base().acceptance(0.3), false);
        assert_eq!(kinds(&ws), [WarningKind::AcceptanceIsolated]);
    }

    #[test]
    fn stuck_and_burn_in() {
        let r = base()
            .stuck(2, 300)
            .series("x", 1, 0, 1.08, 3000.0, Some((1.08, 1.005)));
        let ws = run(&r, false);
        assert_eq!(
            kinds(&ws),
            [
                WarningKind::HighRhat,
                WarningKind::BurnIn,
                WarningKind::StuckChain
            ]
        );
        assert_eq!(ws[2].chains, [2]);
    }

    #[test]
    fn deterministic_output() {
        let r = base()
            .acceptance(0.3)
            .variable("theta", 8, 1.2, 30.0)
            .stuck(1, 500);
        let a = serde_json::to_string(&run(&r, true)).unwrap();
        assert_eq!(a, serde_json::to_string(&run(&r, true)).unwrap());
    }
}
