//! Semantic checks of a workflow against a catalog.
//!
//! [`check`] never stops at the first problem: it reports every diagnostic,
//! sorted by category and then location, so identical inputs always produce
//! identical output.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::diagnostic::{Diagnostic, ErrorCategory, Location};
use crate::frontends::{parse, SyntaxStyle};
use crate::ir::{IrError, PortRef, Workflow};
use crate::registry::Registry;

pub use crate::diagnostic::is_executable;

pub fn check(w: &Workflow, r: &Registry) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    for node in w.nodes() {
        match r.get(&node.type_name) {
            None => diags.push(Diagnostic::error(
                ErrorCategory::UnknownFunction,
                Location::Node(node.id.clone()),
                format!("unknown function `{}`", node.type_name),
            )),
            Some(schema) => {
                if let Err(found) = schema.resolve_params(&node.params) {
                    diags.extend(found.into_iter().map(|d| Diagnostic {
                        location: Location::Node(node.id.clone()),
                        ..d
                    }));
                }
            }
        }
    }

    for e in w.edges() {
        let at = || Location::Port(e.dst.clone());
        let src_schema = w.node(&e.src.node_id).and_then(|n| r.get(&n.type_name));
        let dst_schema = w.node(&e.dst.node_id).and_then(|n| r.get(&n.type_name));
        let src_port = src_schema.map(|s| (s, s.output(&e.src.port_name)));
        let dst_port = dst_schema.map(|s| (s, s.input(&e.dst.port_name)));
        if let Some((s, None)) = src_port {
            diags.push(Diagnostic::error(
                ErrorCategory::ConnectionError,
                at(),
                format!("{} has no output `{}`", s.type_name, e.src.port_name),
            ));
        }
        if let Some((s, None)) = dst_port {
            diags.push(Diagnostic::error(
                ErrorCategory::ConnectionError,
                at(),
                format!("{} has no input `{}`", s.type_name, e.dst.port_name),
            ));
        }
        if let (Some((_, Some(out))), Some((_, Some(inp)))) = (src_port, dst_port) {
            if !out.modality.compatible_with(inp.modality) {
                diags.push(Diagnostic::error(
                    ErrorCategory::ConnectionError,
                    at(),
                    format!(
                        "modality mismatch: {} carries {} but {} expects {}",
                        e.src, out.modality, e.dst, inp.modality
                    ),
                ));
            }
        }
    }

    let fed: BTreeSet<&PortRef> = w.edges().iter().map(|e| &e.dst).collect();
    for node in w.nodes() {
        let Some(schema) = r.get(&node.type_name) else {
            continue;
        };
        for port in schema.inputs.iter().filter(|p| p.required) {
            let at = PortRef::new(node.id.clone(), port.name.clone());
            if !fed.contains(&at) {
                diags.push(Diagnostic::error(
                    ErrorCategory::TopologicalGap,
                    Location::Port(at),
                    format!("required {} input is not connected", port.modality),
                ));
            }
        }
    }

    if let Err(IrError::Cycle(cycle)) = w.topological_order() {
        let mut path = cycle.clone();
        path.push(cycle[0].clone());
        diags.push(Diagnostic::error(
            ErrorCategory::CycleOrUnreachable,
            Location::Node(cycle[0].clone()),
            format!("cycle through {}", path.join(" -> ")),
        ));
    }

    for id in unreachable_nodes(w, r) {
        diags.push(Diagnostic::warning(
            ErrorCategory::CycleOrUnreachable,
            Location::Node(id.to_string()),
            "node does not reach any output node",
        ));
    }

    diags.sort();
    diags
}

/// Parses and checks program text in one step. Parse diagnostics come first;
/// the semantic check only runs when parsing produced a workflow.
pub fn check_source(text: &str, style: SyntaxStyle, r: &Registry) -> (Option<Workflow>, Vec<Diagnostic>) {
    let outcome = parse(text, style);
    let mut diags = outcome.diagnostics;
    if let Some(w) = &outcome.workflow {
        diags.extend(check(w, r));
    }
    diags.sort();
    (outcome.workflow, diags)
}

/// Nodes with no path to a node whose function is marked as an output.
fn unreachable_nodes<'w>(w: &'w Workflow, r: &Registry) -> Vec<&'w str> {
    let mut preds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in w.edges() {
        preds
            .entry(e.dst.node_id.as_str())
            .or_default()
            .push(e.src.node_id.as_str());
    }
    let mut seen: BTreeSet<&str> = w
        .nodes()
        .filter(|n| r.get(&n.type_name).is_some_and(|s| s.output_node))
        .map(|n| n.id.as_str())
        .collect();
    let mut queue: VecDeque<&str> = seen.iter().copied().collect();
    while let Some(id) = queue.pop_front() {
        for p in preds.get(id).into_iter().flatten() {
            if seen.insert(p) {
                queue.push_back(p);
            }
        }
    }
    w.nodes()
        .map(|n| n.id.as_str())
        .filter(|id| !seen.contains(id))
        .collect()
}
