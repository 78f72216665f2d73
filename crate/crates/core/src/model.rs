//! Model descriptors: the probabilistic model as a typed dependency graph.
//!
//! A descriptor lists every random or deterministic variable together with
//! the edges that feed its distribution parameters. Edges carry the
//! parameter *slot* they feed (location, scale, ...), which is what the
//! static funnel detection reads.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Latent,
    Observed,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    #[default]
    Real,
    Positive,
    Other,
}

/// Location of a declaration in the user's source file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub struct SourceSpan {
    pub file: String,
    pub line_start: u32,
    pub line_end: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line_start == self.line_end {
            write!(f, "{}:{}", self.file, self.line_start)
        } else {
            write!(f, "{}:{}-{}", self.file, self.line_start, self.line_end)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VariableDecl {
    pub name: String,
    pub kind: VariableKind,
    /// Distribution label such as `Normal` or `HalfCauchy`; absent for
    /// deterministic nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<String>,
    /// Empty for scalars.
    #[serde(default)]
    pub shape: Vec<usize>,
    #[serde(default)]
    pub support: Support,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_span: Option<SourceSpan>,
}

impl VariableDecl {
    pub fn new(name: impl Into<String>, kind: VariableKind) -> Self {
        Self {
            name: name.into(),
            kind,
            distribution: None,
            shape: Vec::new(),
            support: Support::Real,
            source_span: None,
        }
    }

    pub fn distribution(mut self, label: impl Into<String>) -> Self {
        self.distribution = Some(label.into());
        self
    }

    pub fn shape(mut self, shape: impl Into<Vec<usize>>) -> Self {
        self.shape = shape.into();
        self
    }

    pub fn support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn span(mut self, file: impl Into<String>, line_start: u32, line_end: u32) -> Self {
        self.source_span = Some(SourceSpan {
            file: file.into(),
            line_start,
            line_end,
        });
        self
    }

    /// Number of scalar series this variable flattens into.
    pub fn flat_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Row-major flat series names: `x`, `theta[3]`, `m[1,2]`.
    pub fn flat_names(&self) -> Vec<String> {
        if self.shape.is_empty() {
            return vec![self.name.clone()];
        }
        (0..self.flat_len())
            .map(|flat| {
                let idx = unravel(flat, &self.shape);
                let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                format!("{}[{}]", self.name, parts.join(","))
            })
            .collect()
    }

    pub fn is_tracked(&self) -> bool {
        self.kind != VariableKind::Observed
    }
}

/// Row-major multi-index of `flat` within `shape`.
pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, dim) in idx.iter_mut().zip(shape).rev() {
        *slot = flat % dim;
        flat /= dim;
    }
    idx
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Location,
    Scale,
    ShapeParam,
    Other,
    DeterministicInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub struct DependencyEdge {
    pub parent: String,
    pub child: String,
    pub slot: Slot,
}

impl DependencyEdge {
    pub fn new(parent: impl Into<String>, child: impl Into<String>, slot: Slot) -> Self {
        Self {
            parent: parent.into(),
            child: child.into(),
            slot,
        }
    }
}

impl fmt::Display for DependencyEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slot = serde_json::to_value(self.slot).ok();
        let slot = slot.as_ref().and_then(|v| v.as_str()).unwrap_or("other");
        write!(f, "{}->{}:{}", self.parent, self.child, slot)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("unknown variable `{name}` in edge {edge}")]
    UnknownVariable { name: String, edge: String },
    #[error("variable `{0}` has a zero-sized dimension in its shape")]
    BadShape(String),
    #[error("variable `{0}` has a source span ending before it starts")]
    BadSpan(String),
    #[error("edge {0} uses slot deterministic_input iff the child is deterministic")]
    SlotMismatch(String),
    #[error("dependency cycle through {0:?}")]
    Cycle(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ModelDescriptor {
    pub variables: Vec<VariableDecl>,
    #[serde(default)]
    pub edges: Vec<DependencyEdge>,
}

impl ModelDescriptor {
    pub fn new(variables: Vec<VariableDecl>, edges: Vec<DependencyEdge>) -> Self {
        Self { variables, edges }
    }

    pub fn variable(&self, name: &str) -> Option<&VariableDecl> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn incoming<'a>(&'a self, child: &'a str) -> impl Iterator<Item = &'a DependencyEdge> + 'a {
        self.edges.iter().filter(move |e| e.child == child)
    }

    /// Latent and deterministic variables, in declaration order.
    pub fn tracked(&self) -> impl Iterator<Item = &VariableDecl> {
        self.variables.iter().filter(|v| v.is_tracked())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut kinds = BTreeMap::new();
        for var in &self.variables {
            if kinds.insert(var.name.as_str(), var.kind).is_some() {
                return Err(ModelError::DuplicateVariable(var.name.clone()));
            }
            if var.shape.contains(&0) {
                return Err(ModelError::BadShape(var.name.clone()));
            }
            if let Some(span) = &var.source_span {
                if span.line_start > span.line_end {
                    return Err(ModelError::BadSpan(var.name.clone()));
                }
            }
        }
        for edge in &self.edges {
            for end in [&edge.parent, &edge.child] {
                if !kinds.contains_key(end.as_str()) {
                    return Err(ModelError::UnknownVariable {
                        name: end.clone(),
                        edge: edge.to_string(),
                    });
                }
            }
            let child_is_det = kinds[edge.child.as_str()] == VariableKind::Deterministic;
            if child_is_det != (edge.slot == Slot::DeterministicInput) {
                return Err(ModelError::SlotMismatch(edge.to_string()));
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<(), ModelError> {
        // Kahn's algorithm; whatever is left unvisited sits on a cycle.
        let mut indegree: BTreeMap<&str, usize> = self
            .variables
            .iter()
            .map(|v| (v.name.as_str(), 0))
            .collect();
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let unique: BTreeSet<(&str, &str)> = self
            .edges
            .iter()
            .map(|e| (e.parent.as_str(), e.child.as_str()))
            .collect();
        for (parent, child) in unique {
            *indegree.get_mut(child).expect("validated endpoint") += 1;
            children.entry(parent).or_default().push(child);
        }
        let mut queue: VecDeque<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        while let Some(node) = queue.pop_front() {
            indegree.remove(node);
            for &child in children.get(node).map(Vec::as_slice).unwrap_or_default() {
                if let Some(d) = indegree.get_mut(child) {
                    *d -= 1;
                    if *d == 0 {
                        queue.push_back(child);
                    }
                }
            }
        }
        if indegree.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Cycle(
                indegree.keys().map(|s| s.to_string()).collect(),
            ))
        }
    }
}
