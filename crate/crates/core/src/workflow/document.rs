//! JSON form of a graph.
//!
//! ```json
//! {
//!   "nodes": [
//!     {"id": "normals", "op": "compute_normals", "inputs": {"dem": "stitch.dem"}}
//!   ],
//!   "sources": {
//!     "region": {"kind": "REGION", "value": {"min_x": 0, "min_y": 0, "max_x": 10, "max_y": 10}},
//!     "dataset": {"kind": "DEM_GRID"}
//!   }
//! }
//! ```
//!
//! Input bindings are `"node.port"` or `"$source"`. Only regions, scalars
//! and params can be inlined; every other source is declared by kind and
//! bound by the caller before execution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::resource::{Resource, ResourceKind};
use super::{Binding, Graph, NodeSpec, WorkflowError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDocument {
    pub kind: ResourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub nodes: Vec<NodeDocument>,
    #[serde(default)]
    pub sources: BTreeMap<String, SourceDocument>,
}

fn parse_binding(s: &str) -> Result<Binding, String> {
    if let Some(name) = s.strip_prefix('$') {
        if name.is_empty() {
            return Err("empty source name".into());
        }
        return Ok(Binding::Source(name.to_string()));
    }
    match s.split_once('.') {
        Some((node, port)) if !node.is_empty() && !port.is_empty() => Ok(Binding::node(node, port)),
        _ => Err(format!("binding `{s}` is neither `node.port` nor `$source`")),
    }
}

fn inline(kind: ResourceKind, value: Value) -> Result<Resource, String> {
    match kind {
        ResourceKind::Region => {
            let r: crate::dem::RegionAABB = serde_json::from_value(value).map_err(|e| e.to_string())?;
            r.validate().map_err(|e| e.to_string())?;
            Ok(Resource::Region(r))
        }
        ResourceKind::Scalar => value
            .as_f64()
            .map(Resource::Scalar)
            .ok_or_else(|| "scalar source must be a number".to_string()),
        ResourceKind::Params => Ok(Resource::Params(value)),
        other => Err(format!("{other} sources cannot be inlined")),
    }
}

impl GraphDocument {
    pub fn from_json(text: &str) -> Result<Self, WorkflowError> {
        serde_json::from_str(text).map_err(|e| WorkflowError::Document(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    /// Graph with inline sources bound and the rest declared.
    pub fn to_graph(&self) -> Result<Graph, WorkflowError> {
        let mut g = Graph::new();
        for n in &self.nodes {
            let mut spec = NodeSpec::new(&n.id, &n.op, n.params.clone());
            for (port, b) in &n.inputs {
                let binding = parse_binding(b)
                    .map_err(|e| WorkflowError::Document(format!("node `{}` input `{port}`: {e}", n.id)))?;
                spec = spec.input(port, binding);
            }
            g.add_node(spec);
        }
        for (name, s) in &self.sources {
            match &s.value {
                Some(v) => {
                    let r = inline(s.kind, v.clone())
                        .map_err(|e| WorkflowError::Document(format!("source `{name}`: {e}")))?;
                    g.bind(name, r);
                }
                None => g.declare(name, s.kind),
            }
        }
        Ok(g)
    }

    /// Inverse of [`to_graph`](Self::to_graph) for the inlinable kinds;
    /// other sources are written as declarations.
    pub fn from_graph(g: &Graph) -> Self {
        let nodes = g
            .nodes()
            .iter()
            .map(|n| NodeDocument {
                id: n.id.clone(),
                op: n.op.clone(),
                params: n.params.clone(),
                inputs: n.inputs.iter().map(|(k, b)| (k.clone(), b.to_string())).collect(),
            })
            .collect();
        let mut sources: BTreeMap<String, SourceDocument> = BTreeMap::new();
        for (name, s) in g.sources() {
            let value = match &s.resource {
                Resource::Region(r) => Some(serde_json::to_value(r).expect("region serializes")),
                Resource::Scalar(v) => Some(Value::from(*v)),
                Resource::Params(v) => Some(v.clone()),
                _ => None,
            };
            sources.insert(
                name.clone(),
                SourceDocument {
                    kind: s.resource.kind(),
                    value,
                },
            );
        }
        for (name, kind) in g.unbound_sources() {
            sources.insert(name.clone(), SourceDocument { kind: *kind, value: None });
        }
        Self { nodes, sources }
    }
}
