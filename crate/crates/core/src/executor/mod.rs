//! Runs a validated workflow node by node against a [`Backend`].
//!
//! Nodes execute sequentially in the workflow's deterministic topological
//! order. Each node receives the artifacts on its incoming flows and its
//! fully resolved parameters; the first node failure stops the run.

pub mod comfy;
pub mod live;
pub mod sim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::{is_executable, Diagnostic, ErrorCategory, Location};
use crate::ir::{Modality, ParamMap, ParamValue, Workflow};
use crate::registry::{FunctionSchema, Registry};
use crate::validator::check;

pub use comfy::{export_comfy, export_comfy_with, import_comfy, ComfyError, ExportOptions, ImportOutcome};
pub use live::{submit_live, LiveConfig, LiveError};
pub use sim::{fingerprint, SimulatedBackend};

/// A value on a port: a content fingerprint under simulation, an asset
/// reference under a live backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub modality: Modality,
    pub token: String,
}

pub type PortArtifacts = BTreeMap<String, Artifact>;

pub trait Backend {
    /// Must return exactly one artifact per declared output, carrying the
    /// declared modality. An `Err` is a node failure.
    fn run_node(
        &self,
        node_id: &str,
        schema: &FunctionSchema,
        params: &ParamMap,
        inputs: &PortArtifacts,
    ) -> Result<PortArtifacts, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Planned schedule.
    pub order: Vec<String>,
    /// node id -> port -> artifact, for every node that completed.
    pub outputs: BTreeMap<String, PortArtifacts>,
    pub status: TraceStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<NodeFailure>,
}

impl ExecutionTrace {
    pub fn token(&self, node: &str, port: &str) -> Option<&str> {
        self.outputs
            .get(node)
            .and_then(|p| p.get(port))
            .map(|a| a.token.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Failure as a diagnostic, so runtime errors can feed the repair loop.
    /// The category is a heuristic: failures that mention a parameter map to
    /// `InvalidParameter`, everything else to `ConnectionError`.
    pub fn failure_diagnostic(&self) -> Option<Diagnostic> {
        let f = self.failure.as_ref()?;
        let lower = f.message.to_lowercase();
        let category = if lower.contains("param") || lower.contains("value") {
            ErrorCategory::InvalidParameter
        } else {
            ErrorCategory::ConnectionError
        };
        Some(Diagnostic::error(
            category,
            Location::Node(f.node.clone()),
            format!("runtime failure: {}", f.message),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("workflow is not executable ({} error diagnostics)", .0.iter().filter(|d| d.is_error()).count())]
    PreconditionViolated(Vec<Diagnostic>),
}

/// Executes `w`. `seeds` overrides the `seed` parameter of the named nodes.
pub fn execute(
    w: &Workflow,
    r: &Registry,
    backend: &dyn Backend,
    seeds: &BTreeMap<String, i64>,
) -> Result<ExecutionTrace, ExecError> {
    let diags = check(w, r);
    if !is_executable(&diags) {
        return Err(ExecError::PreconditionViolated(diags));
    }
    let order = w.topological_order().expect("validated workflows are acyclic");
    let mut trace = ExecutionTrace {
        order: order.clone(),
        outputs: BTreeMap::new(),
        status: TraceStatus::Completed,
        failure: None,
    };
    for id in &order {
        let node = w.node(id).expect("scheduled node exists");
        let schema = r.get(&node.type_name).expect("validated type");
        let mut params = schema.resolve_params(&node.params).expect("validated parameters");
        if let (Some(seed), Some(slot)) = (seeds.get(id), params.get_mut("seed")) {
            *slot = ParamValue::Int(*seed);
        }
        let mut inputs = PortArtifacts::new();
        for e in w.incoming_flows(id).expect("node exists") {
            let art = trace
                .outputs
                .get(&e.src.node_id)
                .and_then(|p| p.get(&e.src.port_name))
                .cloned()
                .expect("upstream node ran first");
            inputs.insert(e.dst.port_name.clone(), art);
        }
        let result = backend
            .run_node(id, schema, &params, &inputs)
            .and_then(|out| check_contract(schema, out));
        match result {
            Ok(out) => {
                trace.outputs.insert(id.clone(), out);
            }
            Err(message) => {
                trace.status = TraceStatus::Failed;
                trace.failure = Some(NodeFailure {
                    node: id.clone(),
                    message,
                });
                break;
            }
        }
    }
    Ok(trace)
}

fn check_contract(schema: &FunctionSchema, out: PortArtifacts) -> Result<PortArtifacts, String> {
    if out.len() != schema.outputs.len() {
        return Err(format!(
            "backend returned {} outputs, {} declares {}",
            out.len(),
            schema.type_name,
            schema.outputs.len()
        ));
    }
    for port in &schema.outputs {
        match out.get(&port.name) {
            Some(a) if a.modality == port.modality && !a.token.is_empty() => {}
            Some(a) => {
                return Err(format!(
                    "backend returned {} artifact on {} port `{}`",
                    a.modality, port.modality, port.name
                ))
            }
            None => return Err(format!("backend omitted output `{}`", port.name)),
        }
    }
    Ok(out)
}

/// Wraps a backend and fails at the named node. Useful for exercising the
/// failure path.
pub struct FailAt<B> {
    pub inner: B,
    pub node: String,
    pub message: String,
}

impl<B: Backend> Backend for FailAt<B> {
    fn run_node(
        &self,
        node_id: &str,
        schema: &FunctionSchema,
        params: &ParamMap,
        inputs: &PortArtifacts,
    ) -> Result<PortArtifacts, String> {
        if node_id == self.node {
            Err(self.message.clone())
        } else {
            self.inner.run_node(node_id, schema, params, inputs)
        }
    }
}
