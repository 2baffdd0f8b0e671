//! Node-graph compute workflows.
//!
//! A [`Graph`] is a DAG of [`NodeSpec`]s. Each node names a registered
//! [`Operation`] with typed input and output ports; inputs are wired to
//! another node's output or to an externally bound source resource. The
//! [`Executor`] runs nodes in topological order and caches every node's
//! outputs under a content key (operation, canonical params, input
//! digests), so a re-run only recomputes nodes whose inputs or params
//! changed.

mod builders;
mod document;
mod exec;
mod ops;
mod resource;

pub use builders::{
    build_avalanche_graph, build_snow_graph, choose_tile_zoom, node_ids, source_names,
    DatasetSource, ReleaseSource,
};
pub use document::{GraphDocument, NodeDocument, SourceDocument};
pub use exec::{ExecutionReport, DEFAULT_CACHE_ENTRIES, ExecutionResult, Executor, NodeReport, NodeStatus};
pub use ops::{
    port, ColorizeParams, FnOp, Inputs, OpContext, Operation, Outputs, PortSpec, Registry, ReleaseBand,
    ZoomParams,
};
pub use resource::{canonical_json, Digest, Resource, ResourceKind};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("node `{node}` failed: {source}")]
    NodeFailed {
        node: String,
        #[source]
        source: Box<crate::Error>,
    },
    #[error("malformed workflow document: {0}")]
    Document(String),
}

/// Where a node input comes from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Binding {
    Node { node: String, port: String },
    Source(String),
}

impl Binding {
    pub fn node(node: &str, port: &str) -> Self {
        Binding::Node {
            node: node.to_string(),
            port: port.to_string(),
        }
    }

    pub fn source(name: &str) -> Self {
        Binding::Source(name.to_string())
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Node { node, port } => write!(f, "{node}.{port}"),
            Binding::Source(name) => write!(f, "${name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub op: String,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, Binding>,
}

impl NodeSpec {
    pub fn new(id: &str, op: &str, params: serde_json::Value) -> Self {
        Self {
            id: id.to_string(),
            op: op.to_string(),
            params,
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, port: &str, binding: Binding) -> Self {
        self.inputs.insert(port.to_string(), binding);
        self
    }
}

/// Source resource plus its precomputed digest.
#[derive(Debug, Clone)]
pub struct BoundSource {
    pub resource: Resource,
    pub digest: Digest,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<NodeSpec>,
    sources: BTreeMap<String, BoundSource>,
    /// Sources a document declared but did not inline.
    declared: BTreeMap<String, ResourceKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    DuplicateId { node: String },
    UnknownOp { node: String, op: String },
    NoPorts { node: String },
    UnknownPort { node: String, port: String },
    UnboundInput { node: String, port: String },
    UnknownProducer { node: String, port: String, binding: String },
    UnboundSource { node: String, port: String, source: String },
    KindMismatch { node: String, port: String, expected: ResourceKind, found: ResourceKind },
    InvalidParams { node: String, message: String },
    Cycle { nodes: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { node } => write!(f, "DUPLICATE_ID `{node}`"),
            Violation::UnknownOp { node, op } => write!(f, "UNKNOWN_OP `{op}` in `{node}`"),
            Violation::NoPorts { node } => {
                write!(f, "NO_PORTS `{node}` needs at least one input and one output")
            }
            Violation::UnknownPort { node, port } => write!(f, "UNKNOWN_PORT `{node}.{port}`"),
            Violation::UnboundInput { node, port } => write!(f, "UNBOUND_INPUT `{node}.{port}`"),
            Violation::UnknownProducer { node, port, binding } => {
                write!(f, "UNKNOWN_PRODUCER `{binding}` for `{node}.{port}`")
            }
            Violation::UnboundSource { node, port, source } => {
                write!(f, "UNBOUND_SOURCE `${source}` for `{node}.{port}`")
            }
            Violation::KindMismatch { node, port, expected, found } => write!(
                f,
                "KIND_MISMATCH `{node}.{port}` expects {expected}, got {found}"
            ),
            Violation::InvalidParams { node, message } => {
                write!(f, "INVALID_PARAMS `{node}`: {message}")
            }
            Violation::Cycle { nodes } => write!(f, "CYCLE through {}", nodes.join(" -> ")),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: NodeSpec) -> &mut Self {
        self.nodes.push(node);
        self
    }

    pub fn bind(&mut self, name: &str, resource: Resource) -> &mut Self {
        let digest = resource.digest();
        self.declared.remove(name);
        self.sources
            .insert(name.to_string(), BoundSource { resource, digest });
        self
    }

    pub(crate) fn declare(&mut self, name: &str, kind: ResourceKind) {
        if !self.sources.contains_key(name) {
            self.declared.insert(name.to_string(), kind);
        }
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn sources(&self) -> &BTreeMap<String, BoundSource> {
        &self.sources
    }

    pub fn source(&self, name: &str) -> Option<&Resource> {
        self.sources.get(name).map(|s| &s.resource)
    }

    /// Sources declared by a document that still need a resource.
    pub fn unbound_sources(&self) -> impl Iterator<Item = (&String, &ResourceKind)> {
        self.declared.iter()
    }

    /// Every structural problem, or `Ok` when the graph can run.
    pub fn validate(&self, registry: &Registry) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                out.push(Violation::DuplicateId { node: n.id.clone() });
            }
        }
        let by_id: BTreeMap<&str, &NodeSpec> = self.nodes.iter().map(|n| (n.id.as_str(), n)).collect();

        for n in &self.nodes {
            let Some(op) = registry.get(&n.op) else {
                out.push(Violation::UnknownOp {
                    node: n.id.clone(),
                    op: n.op.clone(),
                });
                continue;
            };
            if op.inputs().is_empty() || op.outputs().is_empty() {
                out.push(Violation::NoPorts { node: n.id.clone() });
            }
            if let Err(message) = op.validate_params(&n.params) {
                out.push(Violation::InvalidParams {
                    node: n.id.clone(),
                    message,
                });
            }
            for port in n.inputs.keys() {
                if !op.inputs().iter().any(|p| p.name == port.as_str()) {
                    out.push(Violation::UnknownPort {
                        node: n.id.clone(),
                        port: port.clone(),
                    });
                }
            }
            for port in op.inputs() {
                let Some(binding) = n.inputs.get(port.name) else {
                    out.push(Violation::UnboundInput {
                        node: n.id.clone(),
                        port: port.name.to_string(),
                    });
                    continue;
                };
                let found = match binding {
                    Binding::Source(name) => match self.sources.get(name) {
                        Some(s) => Some(s.resource.kind()),
                        None => {
                            out.push(Violation::UnboundSource {
                                node: n.id.clone(),
                                port: port.name.to_string(),
                                source: name.clone(),
                            });
                            None
                        }
                    },
                    Binding::Node { node, port: out_port } => {
                        let producer = by_id
                            .get(node.as_str())
                            .and_then(|p| registry.get(&p.op))
                            .and_then(|op| op.outputs().iter().find(|o| o.name == out_port.as_str()));
                        match producer {
                            Some(o) => Some(o.kind),
                            None => {
                                // Unknown ops are already reported.
                                let known_op = by_id
                                    .get(node.as_str())
                                    .is_some_and(|p| registry.get(&p.op).is_some());
                                if known_op || !by_id.contains_key(node.as_str()) {
                                    out.push(Violation::UnknownProducer {
                                        node: n.id.clone(),
                                        port: port.name.to_string(),
                                        binding: binding.to_string(),
                                    });
                                }
                                None
                            }
                        }
                    }
                };
                if let Some(found) = found {
                    if found != port.kind {
                        out.push(Violation::KindMismatch {
                            node: n.id.clone(),
                            port: port.name.to_string(),
                            expected: port.kind,
                            found,
                        });
                    }
                }
            }
        }
        if let Err(cycle) = self.topological_order() {
            out.push(Violation::Cycle { nodes: cycle });
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Kahn's algorithm; ties go to the node declared first. On a cycle,
    /// returns the nodes that could not be ordered.
    pub fn topological_order(&self) -> Result<Vec<String>, Vec<String>> {
        let index: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            let parents: BTreeSet<usize> = n
                .inputs
                .values()
                .filter_map(|b| match b {
                    Binding::Node { node, .. } => index.get(node.as_str()).copied(),
                    Binding::Source(_) => None,
                })
                .collect();
            for p in parents {
                indegree[i] += 1;
                children[p].push(i);
            }
        }
        let mut ready: BTreeSet<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == self.nodes.len() {
            Ok(order.into_iter().map(|i| self.nodes[i].id.clone()).collect())
        } else {
            let placed: BTreeSet<usize> = order.into_iter().collect();
            Err((0..self.nodes.len())
                .filter(|i| !placed.contains(i))
                .map(|i| self.nodes[i].id.clone())
                .collect())
        }
    }

    /// Node ids reachable downstream from `id`, including `id`.
    pub fn descendants(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::from([id.to_string()]);
        loop {
            let before = out.len();
            for n in &self.nodes {
                let feeds = n.inputs.values().any(|b| matches!(b, Binding::Node { node, .. } if out.contains(node)));
                if feeds {
                    out.insert(n.id.clone());
                }
            }
            if out.len() == before {
                return out;
            }
        }
    }

    /// Output ports no node consumes, as `(node, port)`.
    pub fn terminal_ports(&self, registry: &Registry) -> Vec<(String, String)> {
        let consumed: BTreeSet<(String, String)> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.values())
            .filter_map(|b| match b {
                Binding::Node { node, port } => Some((node.clone(), port.clone())),
                Binding::Source(_) => None,
            })
            .collect();
        self.nodes
            .iter()
            .filter_map(|n| registry.get(&n.op).map(|op| (n, op)))
            .flat_map(|(n, op)| {
                op.outputs()
                    .iter()
                    .map(move |o| (n.id.clone(), o.name.to_string()))
            })
            .filter(|key| !consumed.contains(key))
            .collect()
    }
}
