//! Workflow IR: named function instances, their parameter bindings and the
//! port-to-port data flows between them.
//!
//! A [`Workflow`] is an ordinary owned value. Mutating methods take `&mut self`
//! and check the structural invariants on every call, so a workflow built
//! through this API always has resolvable edge endpoints and at most one flow
//! per input port.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Data kind carried on a port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Latent,
    Conditioning,
    Text,
    Audio,
    Video,
    Mesh,
    Model,
    Mask,
    Number,
    Any,
}

impl Modality {
    pub const ALL: [Modality; 11] = [
        Modality::Image,
        Modality::Latent,
        Modality::Conditioning,
        Modality::Text,
        Modality::Audio,
        Modality::Video,
        Modality::Mesh,
        Modality::Model,
        Modality::Mask,
        Modality::Number,
        Modality::Any,
    ];

    /// Exact match, or either side is `any`.
    pub fn compatible_with(self, other: Modality) -> bool {
        self == other || self == Modality::Any || other == Modality::Any
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Latent => "latent",
            Modality::Conditioning => "conditioning",
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Mesh => "mesh",
            Modality::Model => "model",
            Modality::Mask => "mask",
            Modality::Number => "number",
            Modality::Any => "any",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = IrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| IrError::UnknownModality(s.to_string()))
    }
}

/// A literal parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl ParamValue {
    /// Builds a real value, rejecting NaN and infinities.
    pub fn real(v: f64) -> Result<Self, IrError> {
        if v.is_finite() {
            Ok(ParamValue::Real(v))
        } else {
            Err(IrError::NonFiniteReal)
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ParamValue::Bool(_) => "bool",
            ParamValue::Int(_) => "int",
            ParamValue::Real(_) => "real",
            ParamValue::Str(_) => "string",
        }
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self, ParamValue::Real(r) if !r.is_finite())
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Str(v)
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Real(r) => f.write_str(&format_real(*r)),
            ParamValue::Str(s) => f.write_str(&quote_string(s)),
        }
    }
}

/// Shortest round-tripping decimal form, always carrying a `.` so it never
/// reads back as an integer.
pub fn format_real(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') {
        s.push_str(".0");
    }
    s
}

/// Double-quoted string literal with backslash escapes.
pub fn quote_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub type ParamMap = IndexMap<String, ParamValue>;

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn require_identifier(s: &str) -> Result<(), IrError> {
    if is_identifier(s) {
        Ok(())
    } else {
        Err(IrError::InvalidIdentifier(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInstance {
    pub id: String,
    #[serde(rename = "type")]
    pub type_name: String,
    pub params: ParamMap,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub node_id: String,
    pub port_name: String,
}

impl PortRef {
    pub fn new(node_id: impl Into<String>, port_name: impl Into<String>) -> Self {
        PortRef {
            node_id: node_id.into(),
            port_name: port_name.into(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node_id, self.port_name)
    }
}

impl Serialize for PortRef {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [&self.node_id, &self.port_name].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PortRef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [node_id, port_name] = <[String; 2]>::deserialize(deserializer)?;
        Ok(PortRef { node_id, port_name })
    }
}

/// Directed flow from an output port to an input port.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: PortRef,
    pub dst: PortRef,
}

impl Edge {
    pub fn new(src: PortRef, dst: PortRef) -> Self {
        Edge { src, dst }
    }

    fn canonical_key(&self) -> (&str, &str) {
        (&self.dst.node_id, &self.dst.port_name)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.src, self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("input `{0}` already receives a flow")]
    InputOccupied(PortRef),
    #[error("no edge feeds `{0}`")]
    UnknownEdge(PortRef),
    #[error("`{0}` is not a valid identifier")]
    InvalidIdentifier(String),
    #[error("real parameter values must be finite")]
    NonFiniteReal,
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error("cycle through {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("malformed workflow document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    nodes: IndexMap<String, NodeInstance>,
    edges: Vec<Edge>,
    pub metadata: BTreeMap<String, String>,
}

impl Workflow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &NodeInstance> {
        self.nodes.values()
    }

    pub fn node(&self, id: &str) -> Option<&NodeInstance> {
        self.nodes.get(id)
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn add_node(
        &mut self,
        id: impl Into<String>,
        type_name: impl Into<String>,
        params: ParamMap,
    ) -> Result<(), IrError> {
        let id = id.into();
        let type_name = type_name.into();
        require_identifier(&id)?;
        require_identifier(&type_name)?;
        if self.nodes.contains_key(&id) {
            return Err(IrError::DuplicateNodeId(id));
        }
        for key in params.keys() {
            require_identifier(key)?;
        }
        if params.values().any(|v| !v.is_finite()) {
            return Err(IrError::NonFiniteReal);
        }
        self.nodes.insert(
            id.clone(),
            NodeInstance {
                id,
                type_name,
                params,
            },
        );
        Ok(())
    }

    /// Chainable form of [`Workflow::add_node`].
    pub fn with_node(mut self, id: &str, type_name: &str, params: ParamMap) -> Result<Self, IrError> {
        self.add_node(id, type_name, params)?;
        Ok(self)
    }

    /// Removes the node and every edge touching it.
    pub fn remove_node(&mut self, id: &str) -> Result<NodeInstance, IrError> {
        let node = self
            .nodes
            .shift_remove(id)
            .ok_or_else(|| IrError::UnknownNode(id.to_string()))?;
        self.edges.retain(|e| e.src.node_id != id && e.dst.node_id != id);
        Ok(node)
    }

    /// Sets (or replaces) one parameter on an existing node.
    pub fn set_param(
        &mut self,
        node_id: &str,
        name: &str,
        value: ParamValue,
    ) -> Result<Option<ParamValue>, IrError> {
        require_identifier(name)?;
        if !value.is_finite() {
            return Err(IrError::NonFiniteReal);
        }
        let node = self
            .nodes
            .get_mut(node_id)
            .ok_or_else(|| IrError::UnknownNode(node_id.to_string()))?;
        Ok(node.params.insert(name.to_string(), value))
    }

    /// Changes the function type of an existing node.
    pub fn set_type(&mut self, node_id: &str, type_name: &str) -> Result<String, IrError> {
        require_identifier(type_name)?;
        let node = self
            .nodes
            .get_mut(node_id)
            .ok_or_else(|| IrError::UnknownNode(node_id.to_string()))?;
        Ok(std::mem::replace(&mut node.type_name, type_name.to_string()))
    }

    pub fn connect(
        &mut self,
        src_node: &str,
        src_output: &str,
        dst_node: &str,
        dst_input: &str,
    ) -> Result<(), IrError> {
        self.add_edge(Edge::new(
            PortRef::new(src_node, src_output),
            PortRef::new(dst_node, dst_input),
        ))
    }

    pub fn with_edge(
        mut self,
        src_node: &str,
        src_output: &str,
        dst_node: &str,
        dst_input: &str,
    ) -> Result<Self, IrError> {
        self.connect(src_node, src_output, dst_node, dst_input)?;
        Ok(self)
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<(), IrError> {
        require_identifier(&edge.src.port_name)?;
        require_identifier(&edge.dst.port_name)?;
        for id in [&edge.src.node_id, &edge.dst.node_id] {
            if !self.nodes.contains_key(id) {
                return Err(IrError::UnknownNode(id.clone()));
            }
        }
        if self.edges.iter().any(|e| e.dst == edge.dst) {
            return Err(IrError::InputOccupied(edge.dst));
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Removes the edge feeding `dst`.
    pub fn disconnect(&mut self, dst: &PortRef) -> Result<Edge, IrError> {
        let pos = self
            .edges
            .iter()
            .position(|e| &e.dst == dst)
            .ok_or_else(|| IrError::UnknownEdge(dst.clone()))?;
        Ok(self.edges.remove(pos))
    }

    /// The edges whose destination is `node_id`, sorted by input port.
    pub fn incoming_flows(&self, node_id: &str) -> Result<Vec<&Edge>, IrError> {
        if !self.nodes.contains_key(node_id) {
            return Err(IrError::UnknownNode(node_id.to_string()));
        }
        let mut flows: Vec<&Edge> = self.edges.iter().filter(|e| e.dst.node_id == node_id).collect();
        flows.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
        Ok(flows)
    }

    pub fn outgoing_flows<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.src.node_id == node_id)
    }

    /// Kahn's algorithm with a min-heap, so ties resolve to the
    /// lexicographically smallest ready node.
    pub fn topological_order(&self) -> Result<Vec<String>, IrError> {
        let mut indegree: BTreeMap<&str, usize> = self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        let mut successors: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &self.edges {
            *indegree.get_mut(e.dst.node_id.as_str()).expect("edge endpoint") += 1;
            successors
                .entry(e.src.node_id.as_str())
                .or_default()
                .push(e.dst.node_id.as_str());
        }
        let mut ready: BinaryHeap<Reverse<&str>> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| Reverse(*k))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id.to_string());
            for succ in successors.get(id).into_iter().flatten() {
                let d = indegree.get_mut(succ).expect("edge endpoint");
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(succ));
                }
            }
        }
        if order.len() == self.nodes.len() {
            return Ok(order);
        }
        let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        let remaining: BTreeSet<&str> = indegree.keys().copied().filter(|k| !done.contains(k)).collect();
        Err(IrError::Cycle(self.find_cycle(&remaining)))
    }

    /// Every node left over by Kahn's algorithm has a predecessor that is also
    /// left over, so walking predecessors must revisit a node.
    fn find_cycle(&self, remaining: &BTreeSet<&str>) -> Vec<String> {
        let pred = |id: &str| -> &str {
            self.edges
                .iter()
                .filter(|e| e.dst.node_id == id && remaining.contains(e.src.node_id.as_str()))
                .map(|e| e.src.node_id.as_str())
                .min()
                .expect("remaining node without remaining predecessor")
        };
        let mut path: Vec<&str> = vec![remaining.iter().next().copied().expect("nonempty")];
        loop {
            let next = pred(path.last().unwrap());
            if let Some(pos) = path.iter().position(|p| *p == next) {
                let mut cycle: Vec<String> = path[pos..].iter().rev().map(|s| s.to_string()).collect();
                let min_pos = cycle
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                cycle.rotate_left(min_pos);
                return cycle;
            }
            path.push(next);
        }
    }

    /// Nodes sorted by id, params sorted by name, edges sorted by destination.
    pub fn canonicalize(&self) -> Workflow {
        let mut nodes: Vec<NodeInstance> = self.nodes.values().cloned().collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let nodes = nodes
            .into_iter()
            .map(|mut n| {
                n.params.sort_keys();
                (n.id.clone(), n)
            })
            .collect();
        let mut edges = self.edges.clone();
        edges.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
        Workflow {
            nodes,
            edges,
            metadata: self.metadata.clone(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        let c = self.canonicalize();
        self.nodes.keys().eq(c.nodes.keys())
            && self.edges == c.edges
            && self
                .nodes
                .values()
                .zip(c.nodes.values())
                .all(|(a, b)| a.params.keys().eq(b.params.keys()))
    }

    /// Graph equality after canonicalization. Metadata is provenance and does
    /// not participate.
    pub fn canonical_eq(&self, other: &Workflow) -> bool {
        let a = self.canonicalize();
        let b = other.canonicalize();
        a.nodes.len() == b.nodes.len()
            && a.nodes.values().zip(b.nodes.values()).all(|(x, y)| {
                x.id == y.id
                    && x.type_name == y.type_name
                    && x.params.len() == y.params.len()
                    && x.params.iter().zip(&y.params).all(|(p, q)| p == q)
            })
            && a.edges == b.edges
    }

    /// Canonical JSON document; byte-stable for canonical-equal inputs with
    /// equal metadata.
    pub fn to_json(&self) -> String {
        let c = self.canonicalize();
        let doc = WorkflowDoc {
            nodes: c.nodes.into_values().collect(),
            edges: c.edges,
            metadata: c.metadata,
        };
        serde_json::to_string_pretty(&doc).expect("workflow serializes")
    }

    pub fn from_json(text: &str) -> Result<Workflow, IrError> {
        let doc: WorkflowDoc = serde_json::from_str(text).map_err(|e| IrError::Document(e.to_string()))?;
        let mut w = Workflow::new();
        for n in doc.nodes {
            w.add_node(n.id, n.type_name, n.params)?;
        }
        for e in doc.edges {
            w.add_edge(e)?;
        }
        w.metadata = doc.metadata;
        Ok(w)
    }
}

#[derive(Serialize, Deserialize)]
struct WorkflowDoc {
    nodes: Vec<NodeInstance>,
    edges: Vec<Edge>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Builds a [`ParamMap`] from `name => value` pairs.
#[macro_export]
macro_rules! params {
    () => { $crate::ir::ParamMap::new() };
    ($($k:expr => $v:expr),+ $(,)?) => {{
        let mut m = $crate::ir::ParamMap::new();
        $( m.insert(($k).to_string(), $crate::ir::ParamValue::from($v)); )+
        m
    }};
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Real(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diamond() -> Workflow {
        let mut w = Workflow::new();
        for id in ["d", "c", "b", "a"] {
            w.add_node(id, "T", ParamMap::new()).unwrap();
        }
        w.connect("a", "out", "b", "x").unwrap();
        w.connect("a", "out", "c", "x").unwrap();
        w.connect("b", "out", "d", "x").unwrap();
        w.connect("c", "out", "d", "y").unwrap();
        w
    }

    #[test]
    fn new_workflow_is_empty() {
        let w = Workflow::new();
        assert_eq!(w.node_count(), 0);
        assert_eq!(w.edge_count(), 0);
        assert!(w.metadata.is_empty());
    }

    #[test]
    fn add_node_and_duplicate() {
        let mut w = Workflow::new();
        w.add_node("ld", "LoadImage", params! {"path" => "a.png"})
            .unwrap();
        assert_eq!(w.node_count(), 1);
        assert_eq!(w.edge_count(), 0);
        assert_eq!(
            w.add_node("ld", "LoadImage", ParamMap::new()),
            Err(IrError::DuplicateNodeId("ld".into()))
        );
    }

    #[test]
    fn rejects_bad_identifiers_and_non_finite() {
        let mut w = Workflow::new();
        assert!(matches!(
            w.add_node("1x", "T", ParamMap::new()),
            Err(IrError::InvalidIdentifier(_))
        ));
        assert!(matches!(
            w.add_node("", "T", ParamMap::new()),
            Err(IrError::InvalidIdentifier(_))
        ));
        assert_eq!(ParamValue::real(f64::NAN), Err(IrError::NonFiniteReal));
        assert_eq!(
            w.add_node("x", "T", params! {"v" => f64::INFINITY}),
            Err(IrError::NonFiniteReal)
        );
    }

    #[test]
    fn connect_errors() {
        let mut w = Workflow::new();
        w.add_node("ld", "LoadImage", ParamMap::new()).unwrap();
        w.add_node("enc", "VAEEncode", ParamMap::new()).unwrap();
        w.connect("ld", "IMAGE", "enc", "pixels").unwrap();
        assert_eq!(
            w.edges()[0],
            Edge::new(PortRef::new("ld", "IMAGE"), PortRef::new("enc", "pixels"))
        );
        assert_eq!(
            w.connect("ghost", "IMAGE", "enc", "mask"),
            Err(IrError::UnknownNode("ghost".into()))
        );
        assert_eq!(
            w.connect("ld", "IMAGE", "enc", "pixels"),
            Err(IrError::InputOccupied(PortRef::new("enc", "pixels")))
        );
    }

    #[test]
    fn incoming_flows_partition_edges() {
        let w = diamond();
        assert_eq!(w.incoming_flows("d").unwrap().len(), 2);
        assert!(w.incoming_flows("a").unwrap().is_empty());
        assert!(w.incoming_flows("zz").is_err());
        let mut all: Vec<Edge> = w
            .nodes()
            .flat_map(|n| w.incoming_flows(&n.id).unwrap())
            .cloned()
            .collect();
        all.sort();
        let mut edges = w.edges().to_vec();
        edges.sort();
        assert_eq!(all, edges);
    }

    fn brute_force_least_order(w: &Workflow) -> Option<Vec<String>> {
        fn permutations(items: Vec<String>) -> Vec<Vec<String>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in permutations(rest) {
                    p.insert(0, head.clone());
                    out.push(p);
                }
            }
            out
        }
        let ids: Vec<String> = w.nodes().map(|n| n.id.clone()).collect();
        let mut valid: Vec<Vec<String>> = permutations(ids)
            .into_iter()
            .filter(|p| {
                w.edges().iter().all(|e| {
                    let s = p.iter().position(|x| *x == e.src.node_id).unwrap();
                    let d = p.iter().position(|x| *x == e.dst.node_id).unwrap();
                    s < d
                })
            })
            .collect();
        valid.sort();
        valid.into_iter().next()
    }

    #[test]
    fn topological_order_examples() {
        let mut single = Workflow::new();
        single.add_node("x", "T", ParamMap::new()).unwrap();
        assert_eq!(single.topological_order().unwrap(), vec!["x"]);

        let w = diamond();
        let expected = brute_force_least_order(&w).unwrap();
        assert_eq!(expected, vec!["a", "b", "c", "d"]);
        assert_eq!(w.topological_order().unwrap(), expected);

        let mut cyc = Workflow::new();
        cyc.add_node("a", "T", ParamMap::new()).unwrap();
        cyc.add_node("b", "T", ParamMap::new()).unwrap();
        cyc.connect("a", "o", "b", "i").unwrap();
        cyc.connect("b", "o", "a", "i").unwrap();
        assert_eq!(
            cyc.topological_order(),
            Err(IrError::Cycle(vec!["a".into(), "b".into()]))
        );
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut w = Workflow::new();
        w.add_node("a", "T", ParamMap::new()).unwrap();
        w.connect("a", "o", "a", "i").unwrap();
        assert_eq!(w.topological_order(), Err(IrError::Cycle(vec!["a".into()])));
    }

    #[test]
    fn canonicalize_is_idempotent_and_order_free() {
        let w = diamond();
        let c = w.canonicalize();
        assert!(c.is_canonical());
        assert_eq!(c.canonicalize(), c);
        assert!(!w.is_canonical());
        assert!(w.canonical_eq(&c));
    }

    #[test]
    fn json_is_stable() {
        let w = diamond();
        let text = w.to_json();
        assert_eq!(text, w.canonicalize().to_json());
        let back = Workflow::from_json(&text).unwrap();
        assert!(back.canonical_eq(&w));
        assert_eq!(back.to_json(), text);
        assert!(text.find("\"nodes\"").unwrap() < text.find("\"edges\"").unwrap());
    }

    #[test]
    fn modality_compatibility() {
        for a in Modality::ALL {
            assert!(a.compatible_with(Modality::Any));
            assert!(Modality::Any.compatible_with(a));
            for b in Modality::ALL {
                if a != Modality::Any && b != Modality::Any {
                    assert_eq!(a.compatible_with(b), a == b);
                }
            }
        }
        assert_eq!("latent".parse::<Modality>().unwrap(), Modality::Latent);
        assert!("LATENT".parse::<Modality>().is_err());
    }

    #[test]
    fn real_formatting_round_trips() {
        for v in [0.0, 1.0, -2.5, 0.1, 1e-7, 123456789.125, 1e21] {
            let s = format_real(v);
            assert!(s.contains('.'), "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }

    fn arb_graph(max: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..=max).prop_flat_map(|n| {
            let pairs = proptest::collection::vec((0..n, 0..n), 0..(n * 2));
            (Just(n), pairs)
        })
    }

    fn build(n: usize, pairs: &[(usize, usize)]) -> Workflow {
        let mut w = Workflow::new();
        for i in 0..n {
            w.add_node(format!("n{i}"), "T", ParamMap::new()).unwrap();
        }
        for (k, (s, d)) in pairs.iter().enumerate() {
            w.connect(&format!("n{s}"), "o", &format!("n{d}"), &format!("i{k}"))
                .unwrap();
        }
        w
    }

    /// Reachability oracle: cyclic iff some node reaches itself.
    fn has_cycle_oracle(n: usize, pairs: &[(usize, usize)]) -> bool {
        let mut reach = vec![vec![false; n]; n];
        for &(s, d) in pairs {
            reach[s][d] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        (0..n).any(|i| reach[i][i])
    }

    proptest! {
        #[test]
        fn topo_succeeds_iff_acyclic((n, pairs) in arb_graph(8)) {
            let w = build(n, &pairs);
            match w.topological_order() {
                Ok(order) => {
                    prop_assert!(!has_cycle_oracle(n, &pairs));
                    prop_assert_eq!(order.len(), n);
                    for e in w.edges() {
                        let s = order.iter().position(|x| *x == e.src.node_id).unwrap();
                        let d = order.iter().position(|x| *x == e.dst.node_id).unwrap();
                        prop_assert!(s < d);
                    }
                }
                Err(IrError::Cycle(cycle)) => {
                    prop_assert!(has_cycle_oracle(n, &pairs));
                    // consecutive cycle members are joined by edges
                    for i in 0..cycle.len() {
                        let a = &cycle[i];
                        let b = &cycle[(i + 1) % cycle.len()];
                        prop_assert!(w.edges().iter().any(|e| &e.src.node_id == a && &e.dst.node_id == b));
                    }
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn canonical_form_ignores_insertion_order((n, pairs) in arb_graph(20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let w = build(n, &pairs);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut nodes: Vec<NodeInstance> = w.nodes().cloned().collect();
            nodes.shuffle(&mut rng);
            let mut edges = w.edges().to_vec();
            edges.shuffle(&mut rng);
            let mut p = Workflow::new();
            for node in nodes {
                p.add_node(node.id, node.type_name, node.params).unwrap();
            }
            for e in edges {
                p.add_edge(e).unwrap();
            }
            prop_assert!(p.canonical_eq(&w));
            prop_assert_eq!(p.canonicalize(), w.canonicalize());
            prop_assert_eq!(p.canonicalize().canonicalize(), p.canonicalize());
        }

        #[test]
        fn add_remove_and_connect_disconnect_are_inverse((n, pairs) in arb_graph(10)) {
            let w = build(n, &pairs);
            let mut x = w.clone();
            x.add_node("fresh", "T", ParamMap::new()).unwrap();
            x.connect("n0", "o", "fresh", "in").unwrap();
            x.disconnect(&PortRef::new("fresh", "in")).unwrap();
            x.remove_node("fresh").unwrap();
            prop_assert!(x.canonical_eq(&w));
        }
    }
}
