//! Static funnel detection over the slot-annotated model graph, and the
//! non-centered rewrite offered as a fix.

use std::collections::{BTreeSet, VecDeque};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::model::{DependencyEdge, ModelDescriptor, Slot, VariableKind};

/// A latent `parent` that reaches the scale slot of latent `child`,
/// possibly through deterministic nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct FunnelCandidate {
    pub parent: String,
    pub child: String,
    /// Edges from `parent` to `child`; the last one has slot `scale`.
    pub path: Vec<DependencyEdge>,
}

impl FunnelCandidate {
    /// The variable feeding the child's scale slot directly.
    pub fn scale_input(&self) -> &str {
        &self.path.last().expect("path is never empty").parent
    }

    pub fn path_text(&self) -> String {
        let mut nodes: Vec<&str> = self.path.iter().map(|e| e.parent.as_str()).collect();
        nodes.push(&self.child);
        nodes.join(" -> ")
    }
}

pub fn funnel_static_detect(descriptor: &ModelDescriptor) -> Vec<FunnelCandidate> {
    let kind = |name: &str| descriptor.variable(name).map(|v| v.kind);
    let mut out = Vec::new();
    for child in descriptor
        .variables
        .iter()
        .filter(|v| v.kind == VariableKind::Latent)
    {
        let mut seen = BTreeSet::new();
        let mut found: Vec<FunnelCandidate> = Vec::new();
        // Breadth-first walk backwards from each scale edge so the shortest
        // path to every latent ancestor wins.
        let mut queue: VecDeque<Vec<DependencyEdge>> = descriptor
            .incoming(&child.name)
            .filter(|e| e.slot == Slot::Scale)
            .map(|e| vec![e.clone()])
            .collect();
        while let Some(path) = queue.pop_front() {
            let node = path[0].parent.clone();
            if !seen.insert(node.clone()) {
                continue;
            }
            match kind(&node) {
                Some(VariableKind::Latent) if node != child.name => found.push(FunnelCandidate {
                    parent: node,
                    child: child.name.clone(),
                    path,
                }),
                Some(VariableKind::Deterministic) => {
                    for edge in descriptor.incoming(&node) {
                        let mut longer = Vec::with_capacity(path.len() + 1);
                        longer.push(edge.clone());
                        longer.extend(path.iter().cloned());
                        queue.push_back(longer);
                    }
                }
                _ => {}
            }
        }
        let order = |name: &str| descriptor.variables.iter().position(|v| v.name == name);
        found.sort_by_key(|c| order(&c.parent));
        out.extend(found);
    }
    out
}

fn shape_tuple(shape: &[usize]) -> String {
    match shape {
        [n] => format!("({n},)"),
        dims => {
            let parts: Vec<String> = dims.iter().map(usize::to_string).collect();
            format!("({})", parts.join(", "))
        }
    }
}

/// PPL-neutral non-centered rewrite for `candidate`, or the bare suggestion
/// when the child has no single location parent.
pub fn render_reparameterization(
    candidate: &FunnelCandidate,
    descriptor: &ModelDescriptor,
) -> String {
    let generic = "Reparameterize the model.".to_string();
    let Some(child) = descriptor.variable(&candidate.child) else {
        return generic;
    };
    let locations: Vec<&DependencyEdge> = descriptor
        .incoming(&child.name)
        .filter(|e| e.slot == Slot::Location)
        .collect();
    let [location] = locations.as_slice() else {
        return generic;
    };
    let aux = if descriptor.variable("Z").is_none() {
        "Z".to_string()
    } else {
        format!("{}_z", child.name)
    };
    let mut text = format!("# Non-centered parameterization of `{}`", child.name);
    if let Some(span) = &child.source_span {
        text.push_str(&format!(" (replaces {span})"));
    }
    text.push('\n');
    text.push_str(&format!("{aux} ~ Normal(0, 1)"));
    if !child.shape.is_empty() {
        text.push_str(&format!(", shape={}", shape_tuple(&child.shape)));
    }
    text.push('\n');
    text.push_str(&format!(
        "{} = {} + {} * {aux}\n",
        child.name,
        location.parent,
        candidate.scale_input()
    ));
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Support, VariableDecl};

    fn centered() -> ModelDescriptor {
        ModelDescriptor::new(
            vec![
                VariableDecl::new("mu", VariableKind::Latent)
                    .distribution("Normal")
                    .span("schools.py", 2, 2),
                VariableDecl::new("tau", VariableKind::Latent)
                    .distribution("HalfCauchy")
                    .support(Support::Positive)
                    .span("schools.py", 3, 3),
                VariableDecl::new("theta", VariableKind::Latent)
                    .distribution("Normal")
                    .shape([8])
                    .span("schools.py", 4, 5),
                VariableDecl::new("y", VariableKind::Observed)
                    .distribution("Normal")
                    .shape([8]),
            ],
            vec![
                DependencyEdge::new("mu", "theta", Slot::Location),
                DependencyEdge::new("tau", "theta", Slot::Scale),
                DependencyEdge::new("theta", "y", Slot::Location),
            ],
        )
    }

    fn noncentered() -> ModelDescriptor {
        ModelDescriptor::new(
            vec![
                VariableDecl::new("mu", VariableKind::Latent),
                VariableDecl::new("tau", VariableKind::Latent).support(Support::Positive),
                VariableDecl::new("Z", VariableKind::Latent).shape([8]),
                VariableDecl::new("theta", VariableKind::Deterministic).shape([8]),
                VariableDecl::new("y", VariableKind::Observed).shape([8]),
            ],
            vec![
                DependencyEdge::new("mu", "theta", Slot::DeterministicInput),
                DependencyEdge::new("tau", "theta", Slot::DeterministicInput),
                DependencyEdge::new("Z", "theta", Slot::DeterministicInput),
                DependencyEdge::new("theta", "y", Slot::Location),
            ],
        )
    }

    #[test]
    fn centered_has_tau_theta() {
        let c = funnel_static_detect(&centered());
        assert_eq!(c.len(), 1);
        assert_eq!(
            (c[0].parent.as_str(), c[0].child.as_str()),
            ("tau", "theta")
        );
        assert_eq!(
            c[0].path,
            vec![DependencyEdge::new("tau", "theta", Slot::Scale)]
        );
    }

    #[test]
    fn noncentered_and_empty_have_none() {
        assert!(funnel_static_detect(&noncentered()).is_empty());
        let m = ModelDescriptor::new(vec![VariableDecl::new("x", VariableKind::Latent)], vec![]);
        assert!(funnel_static_detect(&m).is_empty());
    }

    #[test]
    fn observed_scale_is_not_a_candidate() {
        let m = ModelDescriptor::new(
            vec![
                VariableDecl::new("s", VariableKind::Observed),
                VariableDecl::new("x", VariableKind::Latent),
            ],
            vec![DependencyEdge::new("s", "x", Slot::Scale)],
        );
        assert!(funnel_static_detect(&m).is_empty());
    }

    fn through_deterministic() -> ModelDescriptor {
        ModelDescriptor::new(
            vec![
                VariableDecl::new("m", VariableKind::Latent),
                VariableDecl::new("v", VariableKind::Latent),
                VariableDecl::new("s", VariableKind::Deterministic).support(Support::Positive),
                VariableDecl::new("x", VariableKind::Latent)
                    .shape([3])
                    .span("f.py", 9, 9),
            ],
            vec![
                DependencyEdge::new("v", "s", Slot::DeterministicInput),
                DependencyEdge::new("m", "x", Slot::Location),
                DependencyEdge::new("s", "x", Slot::Scale),
            ],
        )
    }

    #[test]
    fn candidate_through_one_deterministic_node() {
        let m = through_deterministic();
        let c = funnel_static_detect(&m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].parent, "v");
        assert_eq!(c[0].scale_input(), "s");
        assert_eq!(c[0].path_text(), "v -> s -> x");
        let code = render_reparameterization(&c[0], &m);
        assert!(code.contains("Z ~ Normal(0, 1), shape=(3,)"), "{code}");
        assert!(code.contains("x = m + s * Z"), "{code}");
        assert!(code.contains("f.py:9"), "{code}");
    }

    #[test]
    fn parent_reported_once_across_paths() {
        let mut m = through_deterministic();
        m.edges.push(DependencyEdge::new("v", "x", Slot::Scale));
        let c = funnel_static_detect(&m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].path.len(), 1);
    }

    #[test]
    fn eight_schools_rewrite() {
        let m = centered();
        let c = &funnel_static_detect(&m)[0];
        let code = render_reparameterization(c, &m);
        assert!(code.contains("Z ~ Normal(0, 1), shape=(8,)"), "{code}");
        assert!(code.contains("theta = mu + tau * Z"), "{code}");
        assert!(code.contains("schools.py:4-5"), "{code}");
    }

    #[test]
    fn no_location_parent_falls_back() {
        let m = ModelDescriptor::new(
            vec![
                VariableDecl::new("y", VariableKind::Latent),
                VariableDecl::new("x", VariableKind::Latent),
            ],
            vec![DependencyEdge::new("y", "x", Slot::Scale)],
        );
        let c = &funnel_static_detect(&m)[0];
        assert_eq!(
            render_reparameterization(c, &m),
            "Reparameterize the model."
        );
    }
}
