//! Final run report: per-series statistics plus active and resolved warnings.
//!
//! Wall-clock timestamps are left out so replaying a log always renders the
//! same bytes.

use std::fmt::Write as _;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::analysis::RunAnalyzer;
use crate::diagnostics::{ChainDiagnostics, DiagnosticsSnapshot};
use crate::store::{Algorithm, PhaseFilter, RunId, RunStatus};
use crate::warnings::{Warning, WarningsView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SeriesReport {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Report {
    pub run_id: RunId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub algorithm: Algorithm,
    pub status: RunStatus,
    pub phase: PhaseFilter,
    pub draws_per_chain: Vec<usize>,
    pub series: Vec<SeriesReport>,
    pub chains: Vec<ChainDiagnostics>,
    pub warnings_version: u64,
    pub evaluated_at: u64,
    pub active: Vec<Warning>,
    pub resolved: Vec<Warning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!(
                "unknown report format `{s}` (expected text or json)"
            )),
        }
    }
}

impl Report {
    pub fn new(
        diagnostics: &DiagnosticsSnapshot,
        status: RunStatus,
        label: Option<String>,
        view: &WarningsView,
    ) -> Self {
        let series = diagnostics
            .series
            .iter()
            .map(|s| SeriesReport {
                name: s.name.clone(),
                n: s.overall.n,
                mean: s.overall.mean,
                sd: s.overall.sd,
                rhat: s.overall.rhat,
                ess_bulk: s.overall.ess_bulk,
                degenerate: s.overall.degenerate,
            })
            .collect();
        let mut active: Vec<Warning> = view.diff.active().cloned().collect();
        let mut resolved = view.diff.resolved.clone();
        active.sort_by(|a, b| (a.kind, &a.id).cmp(&(b.kind, &b.id)));
        resolved.sort_by(|a, b| (a.kind, &a.id).cmp(&(b.kind, &b.id)));
        Self {
            run_id: diagnostics.run_id.clone(),
            label,
            algorithm: diagnostics.algorithm.clone(),
            status,
            phase: diagnostics.phase,
            draws_per_chain: diagnostics.draws_per_chain.clone(),
            series,
            chains: diagnostics.chains.clone(),
            warnings_version: view.version,
            evaluated_at: view.evaluated_at,
            active,
            resolved,
        }
    }

    /// None until the analyzer has evaluated at least once.
    pub fn from_analyzer(
        analyzer: &RunAnalyzer,
        status: RunStatus,
        label: Option<String>,
    ) -> Option<Self> {
        let latest = analyzer.latest()?;
        Some(Self::new(
            &latest.diagnostics,
            status,
            label,
            analyzer.tracker().view(),
        ))
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.series.iter().filter_map(|s| s.rhat).reduce(f64::max)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.to_text(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let label = self
            .label
            .as_deref()
            .map(|l| format!(" ({l})"))
            .unwrap_or_default();
        let _ = writeln!(out, "run {}{label}", self.run_id);
        let _ = writeln!(
            out,
            "algorithm {}  status {:?}  phase {:?}",
            self.algorithm, self.status, self.phase
        );
        let draws: Vec<String> = self.draws_per_chain.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "draws per chain [{}]", draws.join(", "));
        let _ = writeln!(out);

        let width = self
            .series
            .iter()
            .map(|s| s.name.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>12}  {:>8}  {:>9}",
            "variable", "mean", "sd", "rhat", "ess_bulk"
        );
        for s in &self.series {
            let rhat = s.rhat.map_or("-".into(), |r| format!("{r:.4}"));
            let ess = s.ess_bulk.map_or("-".into(), |e| format!("{e:.1}"));
            let flag = if s.degenerate { "  constant" } else { "" };
            let _ = writeln!(
                out,
                "{:<width$}  {:>12.4}  {:>12.4}  {rhat:>8}  {ess:>9}{flag}",
                s.name, s.mean, s.sd
            );
        }
        let _ = writeln!(out);

        let _ = writeln!(out, "chain  draws  acceptance  stuck_run");
        for c in &self.chains {
            let acc = c.acceptance_rate.map_or("-".into(), |a| format!("{a:.3}"));
            let _ = writeln!(
                out,
                "{:>5}  {:>5}  {acc:>10}  {:>9}",
                c.chain, c.draws, c.stuck_run_length
            );
        }
        let _ = writeln!(out);

        let _ = writeln!(out, "active warnings: {}", self.active.len());
        for w in &self.active {
            write_warning(&mut out, w);
        }
        let _ = writeln!(out, "resolved warnings: {}", self.resolved.len());
        for w in &self.resolved {
            write_warning(&mut out, w);
        }
        out
    }
}

fn write_warning(out: &mut String, w: &Warning) {
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
    let _ = writeln!(
        out,
        "  [{:?}] {} vars={} chains={} seen={}..{}",
        w.severity,
        w.kind,
        if vars.is_empty() {
            "-".into()
        } else {
            vars.join(" ")
        },
        if chains.is_empty() {
            "-".into()
        } else {
            chains.join(",")
        },
        w.first_seen,
        w.last_seen,
    );
    let _ = writeln!(out, "    {}", w.message);
    let _ = writeln!(out, "    suggestion: {}", w.suggestion);
    if let Some(span) = &w.source_span {
        let _ = writeln!(
            out,
            "    source: {}:{}-{}",
            span.file, span.line_start, span.line_end
        );
    }
    if let Some(code) = &w.suggested_code {
        for line in code.lines() {
            let _ = writeln!(out, "    | {line}");
        }
    }
}
