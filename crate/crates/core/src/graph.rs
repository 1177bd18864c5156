//! Causal DAGs over named variables with one designated label node.
//!
//! A validated [`CausalGraph`] supports the queries the rest of the pipeline
//! is built on: the Markov blanket of the label, cause/effect/spouse roles,
//! a deterministic topological order, and the factorization of the joint
//! distribution into per-variable conditional factors. Each factor is tagged
//! with an estimation scenario:
//!
//! - `A`: the label is a root, `P(Y)`
//! - `B`: the label has parents, `P(Y|X_C,..)`
//! - `C`: a root feature, `P(X_I)`
//! - `D`: a feature with feature-only parents, `P(X_I|X_K,..)`
//! - `E`: a feature with the label among its parents, `P(X_I|Y,..)`
//! - `F`: joint mode only; a `B` factor and its `E` factors merged into one
//!   jointly trained unit `P(X_I|Y,..)P(Y|..)`

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Variable identifier within a graph.
pub type VarId = String;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph contains a directed cycle")]
    CycleDetected,
    #[error("graph must have exactly one label node, found {0}")]
    MultipleLabels(usize),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Feature,
    Label,
}

/// One node of the graph description. `dim` is the value dimension for
/// features and the class count for the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: VarId,
    pub kind: VarKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    1
}

impl NodeSpec {
    pub fn feature(id: &str, dim: usize) -> Self {
        NodeSpec { id: id.to_string(), kind: VarKind::Feature, dim }
    }

    pub fn label(id: &str, classes: usize) -> Self {
        NodeSpec { id: id.to_string(), kind: VarKind::Label, dim: classes }
    }
}

/// Validated directed acyclic graph with one label node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    nodes: Vec<NodeSpec>,
    edges: Vec<(VarId, VarId)>,
    label: VarId,
}

/// Role of a variable relative to the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Direct parent of the label.
    Cause,
    /// Direct child of the label.
    Effect,
    /// Shares a child with the label, neither cause nor effect.
    Spouse,
    /// Not in the Markov blanket.
    OutsideBlanket,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Cause => write!(f, "cause"),
            Role::Effect => write!(f, "effect"),
            Role::Spouse => write!(f, "spouse"),
            Role::OutsideBlanket => write!(f, "outside-blanket"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Disjoint,
    Joint,
}

/// One factor of the joint distribution.
///
/// `targets` usually holds a single variable. An `F` entry carries the label
/// plus the effect variables it is trained with; a merged-root `C` entry
/// (real-data protocol) carries every root block it emits jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEntry {
    pub targets: Vec<VarId>,
    /// Direct parents of the target, label first then features. For an `F`
    /// entry this is the label's parent set; the effect factors live in
    /// `merged`.
    pub parents: Vec<VarId>,
    pub scenario: Scenario,
    /// Scenario F only: the merged effect factors as (target, parents).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged: Vec<(VarId, Vec<VarId>)>,
}

impl fmt::Display for FactorEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scenario {
            Scenario::F => {
                // P(X_I|Y,..)P(Y|..): effect factors first, then the label factor.
                let label = &self.targets[0];
                for (t, parents) in &self.merged {
                    write!(f, "P({t}|{})", parents.join(","))?;
                }
                write!(f, "P({label}")?;
                if !self.parents.is_empty() {
                    write!(f, "|{}", self.parents.join(","))?;
                }
                write!(f, ")")
            }
            _ => {
                write!(f, "P({}", self.targets.join(","))?;
                if !self.parents.is_empty() {
                    write!(f, "|{}", self.parents.join(","))?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Ordered factorization of the joint distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPlan {
    pub mode: PlanMode,
    pub entries: Vec<FactorEntry>,
    /// Topological order over all graph variables.
    pub order: Vec<VarId>,
    /// Joint mode only: true when no (B, E) pair existed to merge, so the
    /// plan is identical to the disjoint one.
    pub equals_disjoint: bool,
}

impl FactorPlan {
    /// The entry whose targets contain `var`.
    pub fn entry_for(&self, var: &str) -> Option<&FactorEntry> {
        self.entries.iter().find(|e| e.targets.iter().any(|t| t == var))
    }

    pub fn has_scenario(&self, s: Scenario) -> bool {
        self.entries.iter().any(|e| e.scenario == s)
    }
}

impl CausalGraph {
    /// Validate and build a graph. The label node is identified by `label_id`
    /// and must be the single node of kind `Label`.
    pub fn build(
        nodes: Vec<NodeSpec>,
        edges: Vec<(VarId, VarId)>,
        label_id: &str,
    ) -> Result<Self, GraphError> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.id.clone()) {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let labels: Vec<_> = nodes.iter().filter(|n| n.kind == VarKind::Label).collect();
        if labels.len() != 1 {
            return Err(GraphError::MultipleLabels(labels.len()));
        }
        if labels[0].id != label_id {
            return Err(GraphError::UnknownNode(label_id.to_string()));
        }
        let mut edge_set = BTreeSet::new();
        for (s, t) in &edges {
            if !seen.contains(s) {
                return Err(GraphError::UnknownNode(s.clone()));
            }
            if !seen.contains(t) {
                return Err(GraphError::UnknownNode(t.clone()));
            }
            if s == t {
                return Err(GraphError::SelfLoop(s.clone()));
            }
            if !edge_set.insert((s.clone(), t.clone())) {
                return Err(GraphError::DuplicateEdge(s.clone(), t.clone()));
            }
        }
        let g = CausalGraph { nodes, edges, label: label_id.to_string() };
        // Kahn's algorithm doubles as the cycle check.
        g.topological_order_checked()?;
        Ok(g)
    }

    pub fn label(&self) -> &VarId {
        &self.label
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(VarId, VarId)] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Value dimension of a variable (class count for the label).
    pub fn dim(&self, id: &str) -> usize {
        self.node(id).map(|n| n.dim).unwrap_or(0)
    }

    /// Sorted direct parents of `id`.
    pub fn parents(&self, id: &str) -> Vec<VarId> {
        let mut out: Vec<_> =
            self.edges.iter().filter(|(_, t)| t == id).map(|(s, _)| s.clone()).collect();
        out.sort();
        out
    }

    /// Sorted direct children of `id`.
    pub fn children(&self, id: &str) -> Vec<VarId> {
        let mut out: Vec<_> =
            self.edges.iter().filter(|(s, _)| s == id).map(|(_, t)| t.clone()).collect();
        out.sort();
        out
    }

    /// Parents, children, and children's other parents of the label.
    pub fn markov_blanket(&self) -> BTreeSet<VarId> {
        let y = &self.label;
        let mut blanket: BTreeSet<VarId> = self.parents(y).into_iter().collect();
        let children = self.children(y);
        for c in &children {
            blanket.insert(c.clone());
            for p in self.parents(c) {
                if &p != y {
                    blanket.insert(p);
                }
            }
        }
        blanket
    }

    /// Role of every variable relative to the label.
    pub fn assign_roles(&self) -> BTreeMap<VarId, Role> {
        let y = &self.label;
        let causes: BTreeSet<_> = self.parents(y).into_iter().collect();
        let effects: BTreeSet<_> = self.children(y).into_iter().collect();
        let blanket = self.markov_blanket();
        self.nodes
            .iter()
            .filter(|n| &n.id != y)
            .map(|n| {
                let role = if causes.contains(&n.id) {
                    Role::Cause
                } else if effects.contains(&n.id) {
                    Role::Effect
                } else if blanket.contains(&n.id) {
                    Role::Spouse
                } else {
                    Role::OutsideBlanket
                };
                (n.id.clone(), role)
            })
            .collect()
    }

    /// Markov-blanket feature ids in lexicographic order; the classifier's
    /// input signature.
    pub fn blanket_features(&self) -> Vec<VarId> {
        self.markov_blanket().into_iter().collect()
    }

    fn topological_order_checked(&self) -> Result<Vec<VarId>, GraphError> {
        let mut indegree: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for (_, t) in &self.edges {
            *indegree.get_mut(t.as_str()).unwrap() += 1;
        }
        // BTreeSet frontier gives the lexicographic tie-break.
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter_map(|(id, &d)| (d == 0).then_some(*id))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(&next) = ready.iter().next() {
            ready.remove(next);
            order.push(next.to_string());
            for (s, t) in &self.edges {
                if s == next {
                    let d = indegree.get_mut(t.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(t.as_str());
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(GraphError::CycleDetected);
        }
        Ok(order)
    }

    /// Topological order with lexicographic tie-breaking. Acyclicity is
    /// guaranteed at build time.
    pub fn topological_order(&self) -> Vec<VarId> {
        self.topological_order_checked().expect("validated graph is acyclic")
    }

    /// Factorize the joint with every factor modelled separately
    /// (scenarios A-E).
    pub fn classify_disjoint(&self) -> FactorPlan {
        let order = self.topological_order();
        let entries = order
            .iter()
            .map(|v| {
                let parents = self.ordered_parents(v);
                let scenario = if v == &self.label {
                    if parents.is_empty() {
                        Scenario::A
                    } else {
                        Scenario::B
                    }
                } else if parents.is_empty() {
                    Scenario::C
                } else if parents.contains(&self.label) {
                    Scenario::E
                } else {
                    Scenario::D
                };
                FactorEntry { targets: vec![v.clone()], parents, scenario, merged: Vec::new() }
            })
            .collect();
        FactorPlan { mode: PlanMode::Disjoint, entries, order, equals_disjoint: false }
    }

    /// Factorize with the special case: when a `B` factor and at least one
    /// `E` factor coexist, they merge into a single `F` entry trained
    /// jointly. Without such a pair the plan equals the disjoint plan.
    pub fn classify_joint(&self) -> FactorPlan {
        let disjoint = self.classify_disjoint();
        let has_b = disjoint.has_scenario(Scenario::B);
        let e_targets: Vec<VarId> = disjoint
            .entries
            .iter()
            .filter(|e| e.scenario == Scenario::E)
            .map(|e| e.targets[0].clone())
            .collect();
        if !has_b || e_targets.is_empty() {
            return FactorPlan { mode: PlanMode::Joint, equals_disjoint: true, ..disjoint };
        }
        let label_parents = self.ordered_parents(&self.label);
        let merged: Vec<(VarId, Vec<VarId>)> =
            e_targets.iter().map(|t| (t.clone(), self.ordered_parents(t))).collect();
        let mut targets = vec![self.label.clone()];
        targets.extend(e_targets.iter().cloned());
        let f_entry =
            FactorEntry { targets, parents: label_parents, scenario: Scenario::F, merged };

        let entries = disjoint
            .entries
            .into_iter()
            .filter_map(|e| match e.scenario {
                Scenario::B => Some(f_entry.clone()),
                Scenario::E => None,
                _ => Some(e),
            })
            .collect();
        FactorPlan {
            mode: PlanMode::Joint,
            entries,
            order: disjoint.order,
            equals_disjoint: false,
        }
    }

    /// Direct parents, label first, features lexicographic after.
    pub fn ordered_parents(&self, id: &str) -> Vec<VarId> {
        let mut parents = self.parents(id);
        if let Some(pos) = parents.iter().position(|p| p == &self.label) {
            let y = parents.remove(pos);
            parents.insert(0, y);
        }
        parents
    }
}
