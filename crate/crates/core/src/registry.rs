//! Function catalog: the available function types, their typed ports and
//! their parameter constraints.

use std::collections::{BTreeSet, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::{Diagnostic, ErrorCategory, Location};
use crate::ir::{format_real, is_identifier, Modality, ParamMap, ParamValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Int,
    Real,
    String,
    Bool,
    Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ParamValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default)]
    pub required: bool,
}

impl ParamSpec {
    /// Checks one candidate value; the error is a human-readable reason.
    /// Integers are accepted for real parameters and widened.
    pub fn admit(&self, value: &ParamValue) -> Result<ParamValue, String> {
        let admitted = match (self.kind, value) {
            (ParamKind::Int, ParamValue::Int(_))
            | (ParamKind::Real, ParamValue::Real(_))
            | (ParamKind::String, ParamValue::Str(_))
            | (ParamKind::Bool, ParamValue::Bool(_)) => value.clone(),
            (ParamKind::Real, ParamValue::Int(i)) => ParamValue::Real(*i as f64),
            (ParamKind::Choice, ParamValue::Str(s)) => {
                let choices = self.choices.as_deref().unwrap_or_default();
                if !choices.iter().any(|c| c == s) {
                    return Err(format!("value \"{s}\" is not one of [{}]", choices.join(", ")));
                }
                value.clone()
            }
            (kind, v) => {
                return Err(format!(
                    "expected {} value, found {}",
                    kind_name(kind),
                    v.kind_name()
                ))
            }
        };
        if let (Some([lo, hi]), Some(x)) = (self.range, admitted.as_f64()) {
            if x < lo || x > hi {
                return Err(format!(
                    "value {} out of range [{}, {}]",
                    admitted,
                    trim_real(lo),
                    trim_real(hi)
                ));
            }
        }
        Ok(admitted)
    }
}

fn kind_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Int => "int",
        ParamKind::Real => "real",
        ParamKind::String => "string",
        ParamKind::Bool => "bool",
        ParamKind::Choice => "choice",
    }
}

fn trim_real(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format_real(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "is_false")]
    pub required: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSchema {
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default)]
    pub doc: String,
    #[serde(default)]
    pub inputs: Vec<PortSpec>,
    pub outputs: Vec<PortSpec>,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    /// Terminal function whose result leaves the workflow (save/export).
    #[serde(default, skip_serializing_if = "is_false")]
    pub output_node: bool,
}

impl FunctionSchema {
    pub fn input(&self, name: &str) -> Option<&PortSpec> {
        self.inputs.iter().find(|p| p.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&PortSpec> {
        self.outputs.iter().find(|p| p.name == name)
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Binds every declared parameter: the given value if admissible, else the
    /// default. Diagnostics are scoped to the schema; the validator relocates
    /// them onto nodes.
    pub fn resolve_params(&self, given: &ParamMap) -> Result<ParamMap, Vec<Diagnostic>> {
        let loc = || Location::Schema(self.type_name.clone());
        let mut diags = Vec::new();
        for name in given.keys() {
            if self.param(name).is_none() {
                diags.push(Diagnostic::error(
                    ErrorCategory::InvalidParameter,
                    loc(),
                    format!("unknown name `{name}` for {}", self.type_name),
                ));
            }
        }
        let mut bound = ParamMap::new();
        for spec in &self.params {
            match given.get(&spec.name) {
                Some(v) => match spec.admit(v) {
                    Ok(v) => {
                        bound.insert(spec.name.clone(), v);
                    }
                    Err(reason) => diags.push(Diagnostic::error(
                        ErrorCategory::InvalidParameter,
                        loc(),
                        format!("parameter `{}`: {reason}", spec.name),
                    )),
                },
                None => match &spec.default {
                    Some(d) => {
                        bound.insert(spec.name.clone(), d.clone());
                    }
                    None => diags.push(Diagnostic::error(
                        ErrorCategory::InvalidParameter,
                        loc(),
                        format!("missing required parameter `{}`", spec.name),
                    )),
                },
            }
        }
        if diags.is_empty() {
            Ok(bound)
        } else {
            Err(diags)
        }
    }

    fn check(&self) -> Result<(), RegistryError> {
        let bad = |msg: String| RegistryError::InvalidSpec {
            type_name: self.type_name.clone(),
            message: msg,
        };
        if !is_identifier(&self.type_name) {
            return Err(bad("type name is not an identifier".into()));
        }
        if self.outputs.is_empty() {
            return Err(bad("at least one output is required".into()));
        }
        for (what, ports) in [("input", &self.inputs), ("output", &self.outputs)] {
            let mut seen = HashSet::new();
            for p in ports {
                if !is_identifier(&p.name) {
                    return Err(bad(format!("{what} `{}` is not an identifier", p.name)));
                }
                if !seen.insert(p.name.as_str()) {
                    return Err(bad(format!("duplicate {what} `{}`", p.name)));
                }
            }
        }
        let mut seen = HashSet::new();
        for spec in &self.params {
            let name = &spec.name;
            if !is_identifier(name) {
                return Err(bad(format!("parameter `{name}` is not an identifier")));
            }
            if !seen.insert(name.as_str()) {
                return Err(bad(format!("duplicate parameter `{name}`")));
            }
            if self.input(name).is_some() {
                return Err(bad(format!("parameter `{name}` shadows an input port")));
            }
            if let Some([lo, hi]) = spec.range {
                if !matches!(spec.kind, ParamKind::Int | ParamKind::Real) {
                    return Err(bad(format!("range on non-numeric parameter `{name}`")));
                }
                if lo.partial_cmp(&hi).is_none_or(|o| o.is_gt()) {
                    return Err(bad(format!("range of `{name}` has min > max")));
                }
            }
            match (&spec.kind, &spec.choices) {
                (ParamKind::Choice, Some(c)) if !c.is_empty() => {}
                (ParamKind::Choice, _) => {
                    return Err(bad(format!("choice parameter `{name}` lists no choices")))
                }
                (_, Some(_)) => return Err(bad(format!("choices on non-choice parameter `{name}`"))),
                _ => {}
            }
            match &spec.default {
                Some(d) => {
                    if let Err(reason) = spec.admit(d) {
                        return Err(bad(format!("default of `{name}`: {reason}")));
                    }
                }
                None if !spec.required => {
                    return Err(bad(format!("optional parameter `{name}` needs a default")))
                }
                None => {}
            }
        }
        Ok(())
    }

    /// One-line signature used in prompts and CLI listings.
    pub fn summary(&self) -> String {
        let ports = |ps: &[PortSpec], show_opt: bool| {
            ps.iter()
                .map(|p| {
                    let opt = if show_opt && !p.required { "?" } else { "" };
                    format!("{}{opt}: {}", p.name, p.modality)
                })
                .collect::<Vec<_>>()
                .join(", ")
        };
        let params = self
            .params
            .iter()
            .map(|p| {
                let mut s = format!("{}: {}", p.name, kind_name(p.kind));
                if let Some([lo, hi]) = p.range {
                    s.push_str(&format!(" [{}, {}]", trim_real(lo), trim_real(hi)));
                }
                if let Some(c) = &p.choices {
                    s.push_str(&format!(" {{{}}}", c.join("|")));
                }
                match &p.default {
                    Some(d) => s.push_str(&format!(" = {d}")),
                    None => s.push_str(" (required)"),
                }
                s
            })
            .collect::<Vec<_>>()
            .join(", ");
        let mut line = format!(
            "{}({}) -> ({})",
            self.type_name,
            ports(&self.inputs, true),
            ports(&self.outputs, false)
        );
        if !params.is_empty() {
            line.push_str(&format!(" params: {params}"));
        }
        if self.output_node {
            line.push_str(" [output]");
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("catalog syntax error: {0}")]
    CatalogSyntax(String),
    #[error("duplicate function type `{0}`")]
    DuplicateTypeName(String),
    #[error("invalid spec for `{type_name}`: {message}")]
    InvalidSpec { type_name: String, message: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    schemas: IndexMap<String, FunctionSchema>,
    pub version: String,
}

#[derive(Serialize, Deserialize)]
struct CatalogDoc {
    version: String,
    functions: Vec<FunctionSchema>,
}

pub const TEST_CATALOG: &str = include_str!("../assets/catalog/test.json");

impl Registry {
    pub fn from_schemas(
        version: impl Into<String>,
        schemas: impl IntoIterator<Item = FunctionSchema>,
    ) -> Result<Registry, RegistryError> {
        let mut map = IndexMap::new();
        for s in schemas {
            s.check()?;
            if map.contains_key(&s.type_name) {
                return Err(RegistryError::DuplicateTypeName(s.type_name));
            }
            map.insert(s.type_name.clone(), s);
        }
        Ok(Registry {
            schemas: map,
            version: version.into(),
        })
    }

    pub fn load_catalog(document: &[u8]) -> Result<Registry, RegistryError> {
        let doc: CatalogDoc =
            serde_json::from_slice(document).map_err(|e| RegistryError::CatalogSyntax(e.to_string()))?;
        Registry::from_schemas(doc.version, doc.functions)
    }

    /// The bundled test catalog.
    pub fn test_catalog() -> Registry {
        Registry::load_catalog(TEST_CATALOG.as_bytes()).expect("bundled catalog is valid")
    }

    pub fn save_catalog(&self) -> String {
        let doc = CatalogDoc {
            version: self.version.clone(),
            functions: self.schemas.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }

    /// Case-sensitive exact lookup.
    pub fn lookup(&self, type_name: &str) -> Result<&FunctionSchema, RegistryError> {
        self.schemas
            .get(type_name)
            .ok_or_else(|| RegistryError::UnknownFunction(type_name.to_string()))
    }

    pub fn get(&self, type_name: &str) -> Option<&FunctionSchema> {
        self.schemas.get(type_name)
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn schemas(&self) -> impl Iterator<Item = &FunctionSchema> {
        self.schemas.values()
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.schemas.keys().map(String::as_str)
    }

    /// Multi-line listing of every function signature.
    pub fn summary(&self) -> String {
        self.schemas
            .values()
            .map(|s| format!("- {}", s.summary()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Maps a ComfyUI `/object_info` response onto a catalog. Nodes whose
    /// names or ports cannot be represented are returned in the skip list.
    pub fn from_object_info(
        doc: &serde_json::Value,
        version: &str,
    ) -> Result<(Registry, Vec<String>), RegistryError> {
        let obj = doc
            .as_object()
            .ok_or_else(|| RegistryError::CatalogSyntax("object_info must be an object".into()))?;
        let mut schemas = Vec::new();
        let mut skipped = Vec::new();
        for (name, info) in obj {
            match object_info_schema(name, info) {
                Some(s) if s.check().is_ok() => schemas.push(s),
                _ => skipped.push(name.clone()),
            }
        }
        Ok((Registry::from_schemas(version, schemas)?, skipped))
    }
}

fn comfy_modality(t: &str) -> Option<Modality> {
    Some(match t {
        "IMAGE" => Modality::Image,
        "LATENT" => Modality::Latent,
        "CONDITIONING" => Modality::Conditioning,
        "MODEL" | "CLIP" | "VAE" | "CONTROL_NET" | "CLIP_VISION" | "UPSCALE_MODEL" | "STYLE_MODEL" => {
            Modality::Model
        }
        "MASK" => Modality::Mask,
        "AUDIO" => Modality::Audio,
        "VIDEO" => Modality::Video,
        "MESH" => Modality::Mesh,
        "*" => Modality::Any,
        _ => return None,
    })
}

fn object_info_schema(name: &str, info: &serde_json::Value) -> Option<FunctionSchema> {
    use serde_json::Value;
    let mut inputs = Vec::new();
    let mut params = Vec::new();
    let input = info.get("input")?;
    for (section, required) in [("required", true), ("optional", false)] {
        let Some(entries) = input.get(section).and_then(Value::as_object) else {
            continue;
        };
        for (pname, spec) in entries {
            let arr = spec.as_array()?;
            let opts = arr.get(1).cloned().unwrap_or(Value::Null);
            let num = |k: &str| opts.get(k).and_then(Value::as_f64);
            match arr.first()? {
                Value::Array(choices) => {
                    let choices: Vec<String> = choices
                        .iter()
                        .filter_map(|c| c.as_str().map(String::from))
                        .collect();
                    if choices.is_empty() {
                        return None;
                    }
                    let default = opts
                        .get("default")
                        .and_then(Value::as_str)
                        .map(String::from)
                        .unwrap_or_else(|| choices[0].clone());
                    params.push(ParamSpec {
                        name: pname.clone(),
                        kind: ParamKind::Choice,
                        default: Some(ParamValue::Str(default)),
                        range: None,
                        choices: Some(choices),
                        required: false,
                    });
                }
                Value::String(t) => {
                    let numeric = |kind| -> Option<ParamSpec> {
                        let range = match (num("min"), num("max")) {
                            (Some(lo), Some(hi)) => Some([lo, hi]),
                            _ => None,
                        };
                        let default = match kind {
                            ParamKind::Int => {
                                ParamValue::Int(opts.get("default").and_then(Value::as_i64).unwrap_or(0))
                            }
                            _ => ParamValue::Real(num("default").unwrap_or(0.0)),
                        };
                        Some(ParamSpec {
                            name: pname.clone(),
                            kind,
                            default: Some(default),
                            range,
                            choices: None,
                            required: false,
                        })
                    };
                    let spec = match t.as_str() {
                        "INT" => numeric(ParamKind::Int),
                        "FLOAT" => numeric(ParamKind::Real),
                        "STRING" => Some(ParamSpec {
                            name: pname.clone(),
                            kind: ParamKind::String,
                            default: Some(ParamValue::Str(
                                opts.get("default")
                                    .and_then(Value::as_str)
                                    .unwrap_or_default()
                                    .to_string(),
                            )),
                            range: None,
                            choices: None,
                            required: false,
                        }),
                        "BOOLEAN" => Some(ParamSpec {
                            name: pname.clone(),
                            kind: ParamKind::Bool,
                            default: Some(ParamValue::Bool(
                                opts.get("default").and_then(Value::as_bool).unwrap_or(false),
                            )),
                            range: None,
                            choices: None,
                            required: false,
                        }),
                        other => {
                            inputs.push(PortSpec {
                                name: pname.clone(),
                                modality: comfy_modality(other)?,
                                required,
                            });
                            None
                        }
                    };
                    params.extend(spec);
                }
                _ => return None,
            }
        }
    }
    let types: Vec<String> = info
        .get("output")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let names: Vec<String> = info
        .get("output_name")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_else(|| types.clone());
    let mut outputs = Vec::new();
    let mut used = BTreeSet::new();
    for (i, t) in types.iter().enumerate() {
        let base = names.get(i).cloned().unwrap_or_else(|| t.clone());
        let mut port = base.clone();
        let mut n = 1;
        while !used.insert(port.clone()) {
            port = format!("{base}_{n}");
            n += 1;
        }
        outputs.push(PortSpec {
            name: port,
            modality: comfy_modality(t).unwrap_or(Modality::Any),
            required: false,
        });
    }
    let output_node = info.get("output_node").and_then(Value::as_bool).unwrap_or(false);
    if outputs.is_empty() && output_node {
        outputs.push(PortSpec {
            name: "RESULT".into(),
            modality: Modality::Any,
            required: false,
        });
    }
    Some(FunctionSchema {
        type_name: name.to_string(),
        doc: info
            .get("description")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        inputs,
        outputs,
        params,
        output_node,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params;

    fn blend_schema() -> FunctionSchema {
        FunctionSchema {
            type_name: "Blend".into(),
            doc: String::new(),
            inputs: vec![],
            outputs: vec![PortSpec {
                name: "OUT".into(),
                modality: Modality::Image,
                required: false,
            }],
            params: vec![ParamSpec {
                name: "strength".into(),
                kind: ParamKind::Real,
                default: Some(ParamValue::Real(0.5)),
                range: Some([0.0, 1.0]),
                choices: None,
                required: false,
            }],
            output_node: false,
        }
    }

    #[test]
    fn minimal_catalog() {
        let doc = r#"{"version":"v","functions":[{"type":"A","doc":"","inputs":[],
            "outputs":[{"name":"OUT","modality":"image"}],"params":[]}]}"#;
        let r = Registry::load_catalog(doc.as_bytes()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.version, "v");
    }

    #[test]
    fn default_outside_range_is_invalid() {
        let doc = r#"{"version":"v","functions":[{"type":"A","outputs":[{"name":"OUT","modality":"image"}],
            "params":[{"name":"s","kind":"real","default":1.5,"range":[0,1],"required":false}]}]}"#;
        assert!(matches!(
            Registry::load_catalog(doc.as_bytes()),
            Err(RegistryError::InvalidSpec { .. })
        ));
    }

    #[test]
    fn catalog_errors() {
        assert!(matches!(
            Registry::load_catalog(b"{not json"),
            Err(RegistryError::CatalogSyntax(_))
        ));
        let dup = r#"{"version":"v","functions":[
            {"type":"A","outputs":[{"name":"O","modality":"image"}]},
            {"type":"A","outputs":[{"name":"O","modality":"image"}]}]}"#;
        assert_eq!(
            Registry::load_catalog(dup.as_bytes()),
            Err(RegistryError::DuplicateTypeName("A".into()))
        );
        let no_out = r#"{"version":"v","functions":[{"type":"A","outputs":[]}]}"#;
        assert!(Registry::load_catalog(no_out.as_bytes()).is_err());
        let reversed = r#"{"version":"v","functions":[{"type":"A","outputs":[{"name":"O","modality":"image"}],
            "params":[{"name":"s","kind":"int","range":[3,1],"required":true}]}]}"#;
        assert!(Registry::load_catalog(reversed.as_bytes()).is_err());
    }

    #[test]
    fn bundled_catalog() {
        let r = Registry::test_catalog();
        assert_eq!(r.len(), 16);
        assert_eq!(r.version, "test-1");
        let ld = r.lookup("LoadImage").unwrap();
        assert_eq!(ld.outputs[0].name, "IMAGE");
        assert_eq!(ld.outputs[0].modality, Modality::Image);
        assert!(matches!(
            r.lookup("NoSuchNode"),
            Err(RegistryError::UnknownFunction(_))
        ));
        assert!(r.lookup("loadimage").is_err());
    }

    #[test]
    fn catalog_round_trip() {
        let r = Registry::test_catalog();
        let again = Registry::load_catalog(r.save_catalog().as_bytes()).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn resolve_fills_defaults() {
        let s = blend_schema();
        assert_eq!(
            s.resolve_params(&ParamMap::new()).unwrap(),
            params! {"strength" => 0.5}
        );
        assert_eq!(
            s.resolve_params(&params! {"strength" => 1_i64}).unwrap(),
            params! {"strength" => 1.0}
        );
    }

    #[test]
    fn resolve_reports_problems() {
        let s = blend_schema();
        let d = s.resolve_params(&params! {"strength" => 1.7}).unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].category, ErrorCategory::InvalidParameter);
        assert!(d[0].message.contains("out of range"), "{}", d[0].message);

        let d = s.resolve_params(&params! {"strenght" => 0.3}).unwrap_err();
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("unknown name"));
        assert_eq!(d[0].location, Location::Schema("Blend".into()));

        let d = s.resolve_params(&params! {"strength" => "high"}).unwrap_err();
        assert!(d[0].message.contains("expected real"));
    }

    #[test]
    fn resolve_binds_exactly_the_schema_names() {
        let r = Registry::test_catalog();
        for s in r.schemas() {
            let mut given = ParamMap::new();
            for p in &s.params {
                if p.default.is_none() {
                    let v = match p.kind {
                        ParamKind::Int => ParamValue::Int(p.range.map_or(0, |r| r[0] as i64)),
                        ParamKind::Real => ParamValue::Real(p.range.map_or(0.0, |r| r[0])),
                        ParamKind::String => ParamValue::Str("x".into()),
                        ParamKind::Bool => ParamValue::Bool(true),
                        ParamKind::Choice => ParamValue::Str(p.choices.as_ref().unwrap()[0].clone()),
                    };
                    given.insert(p.name.clone(), v);
                }
            }
            let bound = s.resolve_params(&given).unwrap();
            let names: Vec<&str> = bound.keys().map(String::as_str).collect();
            let expected: Vec<&str> = s.params.iter().map(|p| p.name.as_str()).collect();
            assert_eq!(names, expected, "{}", s.type_name);
        }
    }

    #[test]
    fn object_info_mapping() {
        let doc = serde_json::json!({
            "KSampler": {
                "input": {"required": {
                    "model": ["MODEL"],
                    "seed": ["INT", {"default": 0, "min": 0, "max": 100}],
                    "cfg": ["FLOAT", {"default": 8.0, "min": 0.0, "max": 100.0}],
                    "sampler_name": [["euler", "ddim"], {}],
                    "latent_image": ["LATENT"]
                }},
                "output": ["LATENT"], "output_name": ["LATENT"], "output_node": false
            },
            "SaveImage": {
                "input": {"required": {"images": ["IMAGE"], "filename_prefix": ["STRING", {"default": "ComfyUI"}]}},
                "output": [], "output_node": true
            },
            "Image Blend": {"input": {}, "output": ["IMAGE"]}
        });
        let (r, skipped) = Registry::from_object_info(&doc, "live").unwrap();
        assert_eq!(skipped, vec!["Image Blend".to_string()]);
        let ks = r.lookup("KSampler").unwrap();
        assert_eq!(ks.inputs.len(), 2);
        assert_eq!(ks.params.len(), 3);
        assert_eq!(ks.param("sampler_name").unwrap().kind, ParamKind::Choice);
        let save = r.lookup("SaveImage").unwrap();
        assert!(save.output_node);
        assert_eq!(save.outputs.len(), 1);
    }
}
