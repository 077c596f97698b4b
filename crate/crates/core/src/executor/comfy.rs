//! ComfyUI "API prompt" documents.
//!
//! A prompt maps node ids to `{"class_type": ..., "inputs": {...}}`. Literal
//! inputs are parameters; `[source_id, output_index]` pairs are links, where
//! the index is the position of the port in the source schema's outputs.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::diagnostic::{is_executable, Diagnostic, ErrorCategory, Location};
use crate::ir::{is_identifier, Edge, ParamMap, ParamValue, PortRef, Workflow};
use crate::registry::Registry;
use crate::validator::check;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComfyError {
    #[error("workflow is not executable ({} diagnostics)", .0.len())]
    PreconditionViolated(Vec<Diagnostic>),
    #[error("cannot export: {0}")]
    ExportUnsupported(String),
    #[error("import error at {location}: {message}")]
    Import { location: String, message: String },
}

fn import_err(location: impl Into<String>, message: impl Into<String>) -> ComfyError {
    ComfyError::Import {
        location: location.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    /// Emit every parameter, defaults included. Live servers need this; the
    /// round trip through [`import_comfy`] then also carries the defaults.
    pub fill_defaults: bool,
}

pub fn export_comfy(w: &Workflow, r: &Registry) -> Result<String, ComfyError> {
    export_comfy_with(w, r, ExportOptions::default())
}

pub fn export_comfy_with(w: &Workflow, r: &Registry, opts: ExportOptions) -> Result<String, ComfyError> {
    let diags = check(w, r);
    if !is_executable(&diags) {
        return Err(ComfyError::PreconditionViolated(diags));
    }
    let mut prompt = Map::new();
    for node in w.nodes() {
        let schema = r.get(&node.type_name).expect("validated type");
        let params: ParamMap = if opts.fill_defaults {
            schema.resolve_params(&node.params).expect("validated params")
        } else {
            node.params.clone()
        };
        let mut inputs: BTreeMap<String, Value> = params
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("literal")))
            .collect();
        for e in w.incoming_flows(&node.id).expect("node exists") {
            let src = w.node(&e.src.node_id).expect("edge endpoint");
            let index = r
                .get(&src.type_name)
                .and_then(|s| s.output_index(&e.src.port_name))
                .expect("validated port");
            if inputs
                .insert(e.dst.port_name.clone(), json!([e.src.node_id, index]))
                .is_some()
            {
                return Err(ComfyError::ExportUnsupported(format!(
                    "input `{}` collides with a parameter",
                    e.dst
                )));
            }
        }
        prompt.insert(
            node.id.clone(),
            json!({"class_type": node.type_name, "inputs": inputs}),
        );
    }
    Ok(serde_json::to_string_pretty(&Value::Object(prompt)).expect("prompt serializes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportOutcome {
    pub workflow: Workflow,
    /// Warnings about fields that were preserved but not understood.
    pub diagnostics: Vec<Diagnostic>,
}

/// ComfyUI commonly numbers its nodes; ids that are not identifiers get an
/// `n` prefix and invalid characters replaced.
fn local_id(key: &str, taken: &BTreeSet<String>) -> String {
    if is_identifier(key) {
        return key.to_string();
    }
    let mut id: String = key
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if !id.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
        id.insert(0, 'n');
    }
    let base = id.clone();
    let mut n = 1;
    while taken.contains(&id) {
        id = format!("{base}_{n}");
        n += 1;
    }
    id
}

fn literal(v: &Value) -> Option<ParamValue> {
    match v {
        Value::Bool(b) => Some(ParamValue::Bool(*b)),
        Value::String(s) => Some(ParamValue::Str(s.clone())),
        Value::Number(n) => n
            .as_i64()
            .map(ParamValue::Int)
            .or_else(|| n.as_f64().and_then(|f| ParamValue::real(f).ok())),
        _ => None,
    }
}

fn as_link(v: &Value) -> Option<(&str, u64)> {
    match v.as_array()?.as_slice() {
        [Value::String(src), Value::Number(i)] => Some((src.as_str(), i.as_u64()?)),
        _ => None,
    }
}

pub fn import_comfy(doc: &[u8], r: &Registry) -> Result<ImportOutcome, ComfyError> {
    let root: Value = serde_json::from_slice(doc).map_err(|e| import_err("<document>", e.to_string()))?;
    let entries = root
        .as_object()
        .ok_or_else(|| import_err("<document>", "prompt must be a JSON object"))?;

    let mut ids: BTreeMap<&str, String> = BTreeMap::new();
    let mut taken = BTreeSet::new();
    for key in entries.keys() {
        let id = local_id(key, &taken);
        taken.insert(id.clone());
        ids.insert(key.as_str(), id);
    }

    let mut w = Workflow::new();
    let mut diags = Vec::new();
    let mut links = Vec::new();
    for (key, entry) in entries {
        let id = ids[key.as_str()].clone();
        if id != *key {
            w.metadata.insert(format!("comfy.id.{id}"), key.clone());
        }
        let class = entry
            .get("class_type")
            .and_then(Value::as_str)
            .ok_or_else(|| import_err(key.as_str(), "missing `class_type`"))?;
        if !is_identifier(class) {
            return Err(import_err(
                key.as_str(),
                format!("class_type `{class}` is not an identifier"),
            ));
        }
        let schema = r.get(class);
        let inputs = match entry.get("inputs") {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(import_err(key.as_str(), "`inputs` must be an object")),
        };
        let mut params = ParamMap::new();
        for (name, value) in &inputs {
            let at = format!("{key}.{name}");
            if !is_identifier(name) {
                return Err(import_err(at, "input name is not an identifier"));
            }
            if let Some((src, index)) = as_link(value) {
                links.push((at, src.to_string(), index, PortRef::new(id.clone(), name.clone())));
                continue;
            }
            let lit = literal(value)
                .ok_or_else(|| import_err(at.clone(), format!("unsupported input value {value}")))?;
            match schema {
                Some(s) if s.param(name).is_none() => {
                    w.metadata
                        .insert(format!("comfy.extra.{id}.{name}"), value.to_string());
                    diags.push(Diagnostic::warning(
                        ErrorCategory::InvalidParameter,
                        Location::Node(id.clone()),
                        format!("unknown field `{name}` preserved in metadata"),
                    ));
                }
                _ => {
                    params.insert(name.clone(), lit);
                }
            }
        }
        w.add_node(id.clone(), class, params)
            .map_err(|e| import_err(key.as_str(), e.to_string()))?;
    }

    for (at, src_key, index, dst) in links {
        let src_id = ids
            .get(src_key.as_str())
            .ok_or_else(|| import_err(at.clone(), format!("link to unknown node `{src_key}`")))?;
        let src_type = &w.node(src_id).expect("imported").type_name;
        let port = match r.get(src_type) {
            Some(s) => s
                .outputs
                .get(index as usize)
                .map(|p| p.name.clone())
                .ok_or_else(|| {
                    import_err(
                        at.clone(),
                        format!("output index {index} out of range for {src_type}"),
                    )
                })?,
            // unknown types are reported by the validator
            None => format!("output_{index}"),
        };
        w.add_edge(Edge::new(PortRef::new(src_id.clone(), port), dst))
            .map_err(|e| import_err(at, e.to_string()))?;
    }
    diags.sort();
    Ok(ImportOutcome {
        workflow: w,
        diagnostics: diags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::frontends::{parse, SyntaxStyle};

    fn load_encode() -> Workflow {
        parse(fixtures::LOAD_ENCODE, SyntaxStyle::Declarative)
            .workflow
            .unwrap()
    }

    #[test]
    fn two_node_golden() {
        let r = Registry::test_catalog();
        let text = export_comfy(&load_encode(), &r).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(
            v,
            json!({
                "enc": {"class_type": "VAEEncode", "inputs": {"pixels": ["ld", 0]}},
                "ld": {"class_type": "LoadImage", "inputs": {"path": "a.png"}}
            })
        );
        assert_eq!(
            text,
            include_str!("../../assets/golden/load_encode.comfy.json").trim_end()
        );
    }

    #[test]
    fn round_trips_golden_workflows() {
        let r = Registry::test_catalog();
        for (name, w) in fixtures::golden_workflows() {
            let doc = export_comfy(&w, &r).unwrap();
            let back = import_comfy(doc.as_bytes(), &r).unwrap();
            assert!(back.diagnostics.is_empty(), "{name}");
            assert!(back.workflow.canonical_eq(&w), "{name}");
        }
    }

    #[test]
    fn output_index_follows_schema_order() {
        let r = Registry::test_catalog();
        let w = fixtures::reference("outpaint").unwrap().workflow();
        let v: Value = serde_json::from_str(&export_comfy(&w, &r).unwrap()).unwrap();
        assert_eq!(v["enc"]["inputs"]["mask"], json!(["pad", 1]));
        assert_eq!(v["pos"]["inputs"]["clip"], json!(["ckpt", 1]));
    }

    #[test]
    fn unknown_type_blocks_export() {
        let r = Registry::test_catalog();
        let mut w = load_encode();
        w.set_type("enc", "Mystery").unwrap();
        assert!(matches!(
            export_comfy(&w, &r),
            Err(ComfyError::PreconditionViolated(_))
        ));
    }

    #[test]
    fn link_index_out_of_range() {
        let r = Registry::test_catalog();
        let doc = r#"{"ld": {"class_type": "LoadImage", "inputs": {"path": "a.png"}},
                      "enc": {"class_type": "VAEEncode", "inputs": {"pixels": ["ld", 5]}}}"#;
        match import_comfy(doc.as_bytes(), &r) {
            Err(ComfyError::Import { location, .. }) => assert_eq!(location, "enc.pixels"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extra_field_is_preserved_with_warning() {
        let r = Registry::test_catalog();
        let doc = r#"{"ld": {"class_type": "LoadImage", "inputs": {"path": "a.png", "upload": "image"}}}"#;
        let out = import_comfy(doc.as_bytes(), &r).unwrap();
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].severity, crate::diagnostic::Severity::Warning);
        assert_eq!(out.workflow.metadata["comfy.extra.ld.upload"], "\"image\"");
        assert_eq!(out.workflow.node("ld").unwrap().params.len(), 1);
    }

    #[test]
    fn numeric_ids_are_renamed() {
        let r = Registry::test_catalog();
        let doc = r#"{"3": {"class_type": "LoadImage", "inputs": {"path": "a.png"}},
                      "4": {"class_type": "VAEEncode", "inputs": {"pixels": ["3", 0]}}}"#;
        let out = import_comfy(doc.as_bytes(), &r).unwrap();
        let w = out.workflow;
        assert!(w.contains_node("n3"));
        assert_eq!(w.edges()[0].src, PortRef::new("n3", "IMAGE"));
        assert_eq!(w.metadata["comfy.id.n4"], "4");
    }

    #[test]
    fn malformed_entries() {
        let r = Registry::test_catalog();
        for doc in [
            "[]",
            r#"{"a": {"inputs": {}}}"#,
            r#"{"a": {"class_type": "LoadImage", "inputs": {"path": null}}}"#,
            r#"{"a": {"class_type": "VAEEncode", "inputs": {"pixels": ["ghost", 0]}}}"#,
        ] {
            assert!(
                matches!(import_comfy(doc.as_bytes(), &r), Err(ComfyError::Import { .. })),
                "{doc}"
            );
        }
    }

    #[test]
    fn fill_defaults_emits_complete_inputs() {
        let r = Registry::test_catalog();
        let w = fixtures::blend_pipeline();
        let v: Value =
            serde_json::from_str(&export_comfy_with(&w, &r, ExportOptions { fill_defaults: true }).unwrap())
                .unwrap();
        assert_eq!(v["sampler"]["inputs"]["cfg"], json!(7.0));
        assert_eq!(v["sampler"]["inputs"]["sampler"], json!("euler"));
    }
}
