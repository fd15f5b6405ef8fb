use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;

use crate::ids::{InstanceId, NodeId};
use crate::prov::{
    Attrs, BundleHeader, EdgeKey, NodeClass, ProvActivity, ProvAgent, ProvDocument, ProvEntity, ProvRelation,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "class")]
pub enum NodeData {
    Entity(ProvEntity),
    Activity(ProvActivity),
    Agent(ProvAgent),
}

impl NodeData {
    pub fn id(&self) -> &NodeId {
        match self {
            Self::Entity(e) => &e.id,
            Self::Activity(a) => &a.id,
            Self::Agent(a) => &a.id,
        }
    }

    pub fn class(&self) -> NodeClass {
        match self {
            Self::Entity(_) => NodeClass::Entity,
            Self::Activity(_) => NodeClass::Activity,
            Self::Agent(_) => NodeClass::Agent,
        }
    }
}

/// A node plus the store_seq that first declared it and every instance
/// whose documents mention it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub data: NodeData,
    pub origin: u64,
    pub instances: BTreeSet<InstanceId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphEdge {
    pub relation: ProvRelation,
    pub origin: u64,
    pub instances: BTreeSet<InstanceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("node {id} redeclared inconsistently: {reason}")]
    Conflict { id: NodeId, reason: String },
    #[error("{relation} references missing node {node}")]
    Dangling { relation: &'static str, node: NodeId },
    #[error("{relation} endpoint {node} is a {found:?}, expected {expected:?}")]
    Signature { relation: &'static str, node: NodeId, found: NodeClass, expected: NodeClass },
    #[error("activity {0} ends before it starts")]
    EndBeforeStart(NodeId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProvGraph {
    nodes: BTreeMap<NodeId, GraphNode>,
    edges: BTreeMap<EdgeKey, GraphEdge>,
    out_edges: BTreeMap<NodeId, BTreeSet<EdgeKey>>,
    in_edges: BTreeMap<NodeId, BTreeSet<EdgeKey>>,
}

fn merge_attrs(id: &NodeId, old: &Attrs, new: &Attrs, strict: bool) -> Result<Attrs, GraphError> {
    let mut out = old.clone();
    for (k, v) in new {
        match out.get(k) {
            Some(existing) if existing != v && strict => {
                return Err(GraphError::Conflict { id: id.clone(), reason: alloc::format!("attribute {k} changed") })
            }
            Some(_) => {}
            None => {
                out.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(out)
}

/// Entities and activities merge strictly (an activity may gain its end
/// time); agents merge leniently, first declaration wins.
fn merge_node(old: &NodeData, new: &NodeData) -> Result<NodeData, GraphError> {
    let conflict = |reason: &str| GraphError::Conflict { id: new.id().clone(), reason: reason.into() };
    match (old, new) {
        (NodeData::Entity(a), NodeData::Entity(b)) => {
            if a.kind != b.kind {
                return Err(conflict("entity kind changed"));
            }
            if a.generated_at != b.generated_at {
                return Err(conflict("generation time changed"));
            }
            Ok(NodeData::Entity(ProvEntity {
                attributes: merge_attrs(&a.id, &a.attributes, &b.attributes, true)?,
                ..a.clone()
            }))
        }
        (NodeData::Activity(a), NodeData::Activity(b)) => {
            if a.activity_type != b.activity_type {
                return Err(conflict("activity type changed"));
            }
            if a.started_at != b.started_at {
                return Err(conflict("start time changed"));
            }
            let ended_at = match (a.ended_at, b.ended_at) {
                (Some(x), Some(y)) if x != y => return Err(conflict("end time changed")),
                (x, y) => x.or(y),
            };
            Ok(NodeData::Activity(ProvActivity {
                ended_at,
                attributes: merge_attrs(&a.id, &a.attributes, &b.attributes, true)?,
                ..a.clone()
            }))
        }
        (NodeData::Agent(a), NodeData::Agent(b)) => Ok(NodeData::Agent(ProvAgent {
            attributes: merge_attrs(&a.id, &a.attributes, &b.attributes, false)?,
            ..a.clone()
        })),
        _ => Err(conflict("node class changed")),
    }
}

fn declared(doc: &ProvDocument) -> impl Iterator<Item = NodeData> + '_ {
    doc.entities
        .iter()
        .cloned()
        .map(NodeData::Entity)
        .chain(doc.activities.iter().cloned().map(NodeData::Activity))
        .chain(doc.agents.iter().cloned().map(NodeData::Agent))
}

impl ProvGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from one self-contained document (e.g. an export).
    pub fn import(doc: &ProvDocument) -> Result<Self, GraphError> {
        let mut g = Self::new();
        g.merge(doc, 0)?;
        Ok(g)
    }

    /// The merged node set a document would produce, or the first conflict.
    fn staged(&self, doc: &ProvDocument) -> Result<BTreeMap<NodeId, NodeData>, GraphError> {
        let mut staged: BTreeMap<NodeId, NodeData> = BTreeMap::new();
        for node in declared(doc) {
            if let NodeData::Activity(a) = &node {
                if a.ended_at.is_some_and(|e| e < a.started_at) {
                    return Err(GraphError::EndBeforeStart(a.id.clone()));
                }
            }
            let merged = match staged.get(node.id()).or_else(|| self.nodes.get(node.id()).map(|n| &n.data)) {
                Some(old) => merge_node(old, &node)?,
                None => node,
            };
            staged.insert(merged.id().clone(), merged);
        }
        for r in &doc.relations {
            let (s, t) = r.kind.signature();
            for (end, expected) in [(&r.source, s), (&r.target, t)] {
                let found = staged
                    .get(end)
                    .map(NodeData::class)
                    .or_else(|| self.nodes.get(end).map(|n| n.data.class()))
                    .ok_or_else(|| GraphError::Dangling { relation: r.kind.name(), node: end.clone() })?;
                if found != expected {
                    return Err(GraphError::Signature { relation: r.kind.name(), node: end.clone(), found, expected });
                }
            }
        }
        Ok(staged)
    }

    /// Validates a document against the current graph without changing it.
    pub fn check(&self, doc: &ProvDocument) -> Result<(), GraphError> {
        self.staged(doc).map(|_| ())
    }

    /// Merges a document; on error the graph is unchanged.
    pub fn merge(&mut self, doc: &ProvDocument, store_seq: u64) -> Result<(), GraphError> {
        let staged = self.staged(doc)?;
        let instance = doc.header.instance_id.clone();
        for (id, data) in staged {
            let node = self.nodes.entry(id).or_insert_with(|| GraphNode {
                data: data.clone(),
                origin: store_seq,
                instances: BTreeSet::new(),
            });
            node.data = data;
            node.instances.extend(instance.iter().cloned());
        }
        for r in &doc.relations {
            let key = r.key();
            let edge = self.edges.entry(key.clone()).or_insert_with(|| GraphEdge {
                relation: r.clone(),
                origin: store_seq,
                instances: BTreeSet::new(),
            });
            edge.instances.extend(instance.iter().cloned());
            self.out_edges.entry(key.1.clone()).or_default().insert(key.clone());
            self.in_edges.entry(key.2.clone()).or_default().insert(key);
        }
        Ok(())
    }

    pub fn node(&self, id: &NodeId) -> Option<&GraphNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Edges leaving `id` (from `id` as source).
    pub fn out_edges(&self, id: &NodeId) -> impl Iterator<Item = &GraphEdge> {
        self.out_edges.get(id).into_iter().flatten().map(|k| &self.edges[k])
    }

    /// Edges arriving at `id` (with `id` as target).
    pub fn in_edges(&self, id: &NodeId) -> impl Iterator<Item = &GraphEdge> {
        self.in_edges.get(id).into_iter().flatten().map(|k| &self.edges[k])
    }

    /// Subgraph with the given nodes and every edge whose endpoints are both
    /// in it.
    pub fn induced(&self, keep: &BTreeSet<NodeId>) -> ProvGraph {
        let mut g = ProvGraph::new();
        for id in keep {
            if let Some(n) = self.nodes.get(id) {
                g.nodes.insert(id.clone(), n.clone());
            }
        }
        for (key, e) in &self.edges {
            if keep.contains(&key.1) && keep.contains(&key.2) {
                g.insert_edge(key.clone(), e.clone());
            }
        }
        g
    }

    fn insert_edge(&mut self, key: EdgeKey, edge: GraphEdge) {
        self.out_edges.entry(key.1.clone()).or_default().insert(key.clone());
        self.in_edges.entry(key.2.clone()).or_default().insert(key.clone());
        self.edges.insert(key, edge);
    }

    /// Nodes and edges contributed by one instance's documents.
    pub fn instance_subgraph(&self, instance: &InstanceId) -> ProvGraph {
        let mut g = ProvGraph::new();
        for (id, n) in &self.nodes {
            if n.instances.contains(instance) {
                g.nodes.insert(id.clone(), n.clone());
            }
        }
        for (key, e) in &self.edges {
            if e.instances.contains(instance) {
                g.insert_edge(key.clone(), e.clone());
            }
        }
        g
    }

    pub fn to_document(&self, header: BundleHeader) -> ProvDocument {
        let mut doc = ProvDocument { header, ..Default::default() };
        for n in self.nodes.values() {
            match &n.data {
                NodeData::Entity(e) => doc.entities.push(e.clone()),
                NodeData::Activity(a) => doc.activities.push(a.clone()),
                NodeData::Agent(a) => doc.agents.push(a.clone()),
            }
        }
        doc.relations = self.edges.values().map(|e| e.relation.clone()).collect();
        doc
    }

    /// Canonical content serialization: nodes sorted by id, edges by
    /// (kind, source, target); store annotations excluded.
    pub fn canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            nodes: Vec<&'a NodeData>,
            edges: Vec<&'a ProvRelation>,
        }
        let c = Canonical {
            nodes: self.nodes.values().map(|n| &n.data).collect(),
            edges: self.edges.values().map(|e| &e.relation).collect(),
        };
        let value = serde_json::to_value(&c).expect("graph content serialises");
        value.to_string()
    }

    /// Canonical serialization including the store annotations.
    pub fn canonical_json_annotated(&self) -> String {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .values()
            .map(|n| serde_json::json!({"data": n.data, "origin": n.origin, "instances": n.instances}))
            .collect();
        let edges: Vec<serde_json::Value> = self
            .edges
            .values()
            .map(|e| serde_json::json!({"relation": e.relation, "origin": e.origin, "instances": e.instances}))
            .collect();
        serde_json::json!({"nodes": nodes, "edges": edges}).to_string()
    }

    pub fn ids(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().cloned().collect()
    }

    pub fn edge_keys(&self) -> BTreeSet<EdgeKey> {
        self.edges.keys().cloned().collect()
    }
}
