//! Graph execution with a content-addressed output cache.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::ops::{Inputs, OpContext, Outputs, Registry};
use super::resource::{canonical_json, Digest, Hasher, Resource};
use super::{Binding, Graph, WorkflowError};
use crate::par::Parallelism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    Executed,
    CacheHit,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeReport {
    pub node: String,
    pub op: String,
    pub status: NodeStatus,
    #[serde(serialize_with = "hex")]
    pub key: Digest,
    pub wall_ms: f64,
}

fn hex<S: serde::Serializer>(d: &Digest, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&d.to_hex())
}

/// Per-node outcome in execution order.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ExecutionReport {
    pub nodes: Vec<NodeReport>,
    pub total_ms: f64,
}

impl ExecutionReport {
    pub fn status(&self, node: &str) -> Option<NodeStatus> {
        self.nodes.iter().find(|r| r.node == node).map(|r| r.status)
    }

    pub fn executed(&self) -> Vec<&str> {
        self.with_status(NodeStatus::Executed)
    }

    pub fn cache_hits(&self) -> Vec<&str> {
        self.with_status(NodeStatus::CacheHit)
    }

    fn with_status(&self, s: NodeStatus) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|r| r.status == s)
            .map(|r| r.node.as_str())
            .collect()
    }

    /// Wall time of one node, from the report.
    pub fn wall_ms(&self, node: &str) -> Option<f64> {
        self.nodes.iter().find(|r| r.node == node).map(|r| r.wall_ms)
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub report: ExecutionReport,
    outputs: BTreeMap<(String, String), Resource>,
    terminals: Vec<(String, String)>,
}

impl ExecutionResult {
    pub fn get(&self, node: &str, port: &str) -> Option<&Resource> {
        self.outputs.get(&(node.to_string(), port.to_string()))
    }

    /// Outputs that no node in the graph consumes.
    pub fn terminal(&self) -> impl Iterator<Item = (&str, &str, &Resource)> {
        self.terminals.iter().filter_map(|(n, p)| {
            self.outputs
                .get(&(n.clone(), p.clone()))
                .map(|r| (n.as_str(), p.as_str(), r))
        })
    }
}

pub const DEFAULT_CACHE_ENTRIES: usize = 256;

/// Runs graphs and keeps node outputs across runs. Entries are keyed by
/// content only, so two graphs with the same upstream share them.
pub struct Executor {
    registry: Arc<Registry>,
    cache: HashMap<Digest, Arc<Outputs>>,
    order: VecDeque<Digest>,
    capacity: usize,
    ctx: OpContext,
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(Arc::new(Registry::builtin()))
    }
}

impl Executor {
    pub fn new(registry: Arc<Registry>) -> Self {
        Self {
            registry,
            cache: HashMap::new(),
            order: VecDeque::new(),
            capacity: DEFAULT_CACHE_ENTRIES,
            ctx: OpContext::default(),
        }
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.ctx.parallelism = p;
        self
    }

    /// Oldest entries are evicted past `n` entries.
    pub fn with_cache_capacity(mut self, n: usize) -> Self {
        self.capacity = n.max(1);
        self
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
        self.order.clear();
    }

    /// Content key per node, in topological order.
    pub fn node_keys(&self, graph: &Graph) -> Result<Vec<(String, Digest)>, WorkflowError> {
        graph.validate(&self.registry).map_err(WorkflowError::Invalid)?;
        let order = graph.topological_order().map_err(|nodes| {
            WorkflowError::Invalid(vec![super::Violation::Cycle { nodes }])
        })?;
        let mut keys: BTreeMap<String, Digest> = BTreeMap::new();
        let mut out = Vec::with_capacity(order.len());
        for id in order {
            let key = node_key(graph, &id, &keys);
            keys.insert(id.clone(), key);
            out.push((id, key));
        }
        Ok(out)
    }

    pub fn execute(&mut self, graph: &Graph) -> Result<ExecutionResult, WorkflowError> {
        let start = Instant::now();
        let keys = self.node_keys(graph)?;
        let mut report = ExecutionReport::default();
        let mut outputs: BTreeMap<(String, String), Resource> = BTreeMap::new();

        for (id, key) in keys {
            let spec = graph.node(&id).expect("ordered node exists");
            let op = self.registry.get(&spec.op).expect("validated op").clone();
            let t0 = Instant::now();
            let (produced, status) = match self.cache.get(&key) {
                Some(hit) => (hit.clone(), NodeStatus::CacheHit),
                None => {
                    let mut inputs = Inputs::new();
                    for (port, binding) in &spec.inputs {
                        let r = match binding {
                            Binding::Source(name) => graph.source(name).expect("validated source").clone(),
                            Binding::Node { node, port } => outputs
                                .get(&(node.clone(), port.clone()))
                                .expect("upstream ran first")
                                .clone(),
                        };
                        inputs.insert(port.clone(), r);
                    }
                    let produced = op.run(&self.ctx, &spec.params, &inputs).map_err(|e| {
                        WorkflowError::NodeFailed {
                            node: id.clone(),
                            source: Box::new(e),
                        }
                    })?;
                    for p in op.outputs() {
                        let ok = produced.get(p.name).is_some_and(|r| r.kind() == p.kind);
                        if !ok {
                            return Err(WorkflowError::NodeFailed {
                                node: id.clone(),
                                source: Box::new(crate::Error::Params(format!(
                                    "operation `{}` did not produce `{}` as {}",
                                    spec.op, p.name, p.kind
                                ))),
                            });
                        }
                    }
                    let produced = Arc::new(produced);
                    self.insert(key, produced.clone());
                    (produced, NodeStatus::Executed)
                }
            };
            for (port, r) in produced.iter() {
                outputs.insert((id.clone(), port.clone()), r.clone());
            }
            report.nodes.push(NodeReport {
                node: id.clone(),
                op: spec.op.clone(),
                status,
                key,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
        report.total_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(ExecutionResult {
            report,
            outputs,
            terminals: graph.terminal_ports(&self.registry),
        })
    }

    fn insert(&mut self, key: Digest, value: Arc<Outputs>) {
        if self.cache.insert(key, value).is_none() {
            self.order.push_back(key);
        }
        while self.cache.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.cache.remove(&old);
            }
        }
    }
}

/// Hash of op name, canonical params and the digest of every input.
fn node_key(graph: &Graph, id: &str, upstream: &BTreeMap<String, Digest>) -> Digest {
    let spec = graph.node(id).expect("node exists");
    let params = if spec.params.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        spec.params.clone()
    };
    let mut h = Hasher::new("node");
    h.str(&spec.op).str(&canonical_json(&params));
    h.usize(spec.inputs.len());
    for (port, binding) in &spec.inputs {
        h.str(port);
        let d = match binding {
            Binding::Source(name) => graph.sources()[name].digest,
            Binding::Node { node, port } => output_digest(&upstream[node], port),
        };
        h.digest(&d);
    }
    h.finish()
}

/// Digest of one output port, derived from its node's key.
pub(crate) fn output_digest(node_key: &Digest, port: &str) -> Digest {
    let mut h = Hasher::new("output");
    h.digest(node_key).str(port);
    h.finish()
}
