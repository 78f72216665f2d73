//! Warning lifecycle across successive evaluations of one run.

use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{Warning, WarningStatus};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct WarningDiff {
    pub new: Vec<Warning>,
    pub persisting: Vec<Warning>,
    pub resolved: Vec<Warning>,
}

impl WarningDiff {
    pub fn active(&self) -> impl Iterator<Item = &Warning> {
        self.new.iter().chain(&self.persisting)
    }

    fn active_ids(&self) -> BTreeSet<&str> {
        self.active().map(|w| w.id.as_str()).collect()
    }
}

/// Splits `current` against `previous` by id. Persisting warnings keep their
/// original `first_seen`. Previously active warnings that are gone come back
/// marked resolved; previously resolved ones that are still gone are kept.
pub fn diff_warnings(previous: &[Warning], current: &[Warning]) -> WarningDiff {
    let prev: BTreeMap<&str, &Warning> = previous.iter().map(|w| (w.id.as_str(), w)).collect();
    let curr: BTreeSet<&str> = current.iter().map(|w| w.id.as_str()).collect();
    let mut diff = WarningDiff::default();
    for w in current {
        let mut w = w.clone();
        w.status = WarningStatus::Active;
        match prev.get(w.id.as_str()) {
            Some(p) if p.status == WarningStatus::Active => {
                w.first_seen = w.first_seen.min(p.first_seen);
                diff.persisting.push(w);
            }
            _ => diff.new.push(w),
        }
    }
    for w in previous.iter().filter(|w| !curr.contains(w.id.as_str())) {
        let mut w = w.clone();
        w.status = WarningStatus::Resolved;
        diff.resolved.push(w);
    }
    diff
}

/// What the warnings endpoint serves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct WarningsView {
    /// Bumped whenever the active set changes.
    pub version: u64,
    /// Highest iteration the warnings were evaluated at.
    pub evaluated_at: u64,
    #[serde(flatten)]
    pub diff: WarningDiff,
}

/// Single-writer lifecycle state for one run.
#[derive(Debug, Clone, Default)]
pub struct WarningTracker {
    view: WarningsView,
}

impl WarningTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one evaluation. Returns true when the active set changed.
    pub fn update(&mut self, current: &[Warning], evaluated_at: u64) -> bool {
        let previous: Vec<Warning> = self
            .view
            .diff
            .active()
            .chain(&self.view.diff.resolved)
            .cloned()
            .collect();
        let next = diff_warnings(&previous, current);
        let changed = next.active_ids() != self.view.diff.active_ids();
        if changed {
            self.view.version += 1;
        }
        self.view.diff = next;
        self.view.evaluated_at = evaluated_at;
        changed
    }

    pub fn view(&self) -> &WarningsView {
        &self.view
    }

    pub fn active(&self) -> Vec<Warning> {
        self.view.diff.active().cloned().collect()
    }
}
