//! Python module `aflow`: parse, validate, convert, execute and export
//! workflow programs, and drive the synthesis pipeline with a scripted model.

use std::collections::BTreeMap;

use aflow_core::executor::{export_comfy_with, import_comfy, ExportOptions};
use aflow_core::inference::{run_pipeline, PipelineOptions, ReferenceStore, ScriptedLm, TaskSpec};
use aflow_core::{diagnostic, Diagnostic, SimulatedBackend, SyntaxStyle};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn style(name: &str) -> PyResult<SyntaxStyle> {
    name.parse().map_err(PyValueError::new_err)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn diagnostics_to_py<'py>(py: Python<'py>, diags: &[Diagnostic]) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &diagnostic::to_json(diags))
}

fn error_summary(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .filter(|d| d.is_error())
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Function catalog.
#[pyclass(frozen)]
struct Registry {
    inner: aflow_core::Registry,
}

#[pymethods]
impl Registry {
    /// The bundled test catalog.
    #[staticmethod]
    fn test_catalog() -> Self {
        Registry {
            inner: aflow_core::Registry::test_catalog(),
        }
    }

    /// Loads a catalog from its JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        aflow_core::Registry::load_catalog(text.as_bytes())
            .map(|inner| Registry { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        self.inner.save_catalog()
    }

    fn type_names(&self) -> Vec<String> {
        self.inner.type_names().map(str::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, type_name: &str) -> bool {
        self.inner.get(type_name).is_some()
    }
}

fn registry_or_default(r: Option<&Registry>) -> aflow_core::Registry {
    r.map(|r| r.inner.clone())
        .unwrap_or_else(aflow_core::Registry::test_catalog)
}

/// A workflow graph: nodes with bound parameters and port-to-port flows.
#[pyclass]
struct Workflow {
    inner: aflow_core::Workflow,
}

#[pymethods]
impl Workflow {
    #[new]
    fn new() -> Self {
        Workflow {
            inner: aflow_core::Workflow::new(),
        }
    }

    /// Parses program text; raises ValueError on syntax errors.
    #[staticmethod]
    #[pyo3(signature = (text, syntax = "declarative"))]
    fn parse(text: &str, syntax: &str) -> PyResult<Self> {
        let outcome = aflow_core::parse(text, style(syntax)?);
        match outcome.workflow {
            Some(w) if !outcome.has_errors() => Ok(Workflow { inner: w }),
            _ => Err(PyValueError::new_err(error_summary(&outcome.diagnostics))),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        aflow_core::Workflow::from_json(text)
            .map(|inner| Workflow { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[pyo3(signature = (syntax = "declarative"))]
    fn emit(&self, syntax: &str) -> PyResult<String> {
        aflow_core::emit(&self.inner, style(syntax)?).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Adds a node; `params` maps names to bool, int, float or str.
    #[pyo3(signature = (id, type_name, params = None))]
    fn add_node(
        &mut self,
        id: &str,
        type_name: &str,
        params: Option<BTreeMap<String, Bound<'_, PyAny>>>,
    ) -> PyResult<()> {
        let mut map = aflow_core::ParamMap::new();
        for (k, v) in params.unwrap_or_default() {
            map.insert(k, param_value(&v)?);
        }
        self.inner
            .add_node(id, type_name, map)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn connect(&mut self, src: &str, src_port: &str, dst: &str, dst_port: &str) -> PyResult<()> {
        self.inner
            .connect(src, src_port, dst, dst_port)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn node_ids(&self) -> Vec<String> {
        self.inner.nodes().map(|n| n.id.clone()).collect()
    }

    /// `(src, src_port, dst, dst_port)` tuples.
    fn edges(&self) -> Vec<(String, String, String, String)> {
        self.inner
            .edges()
            .iter()
            .map(|e| {
                (
                    e.src.node_id.clone(),
                    e.src.port_name.clone(),
                    e.dst.node_id.clone(),
                    e.dst.port_name.clone(),
                )
            })
            .collect()
    }

    fn topological_order(&self) -> PyResult<Vec<String>> {
        self.inner
            .topological_order()
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn canonical_eq(&self, other: &Workflow) -> bool {
        self.inner.canonical_eq(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.nodes().count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Workflow({} nodes, {} edges)",
            self.inner.nodes().count(),
            self.inner.edges().len()
        )
    }
}

fn param_value(v: &Bound<'_, PyAny>) -> PyResult<aflow_core::ParamValue> {
    use aflow_core::ParamValue;
    // bool first: Python bools are ints too
    if let Ok(b) = v.cast::<pyo3::types::PyBool>() {
        return Ok(ParamValue::Bool(b.is_true()));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(ParamValue::Int(i));
    }
    if let Ok(x) = v.extract::<f64>() {
        return Ok(ParamValue::Real(x));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(ParamValue::Str(s));
    }
    Err(PyValueError::new_err(
        "parameters must be bool, int, float or str",
    ))
}

/// Parses and checks program text; returns the diagnostics as dicts.
#[pyfunction]
#[pyo3(signature = (text, syntax = "declarative", registry = None))]
fn validate<'py>(
    py: Python<'py>,
    text: &str,
    syntax: &str,
    registry: Option<&Registry>,
) -> PyResult<Bound<'py, PyAny>> {
    let r = registry_or_default(registry);
    let (_, diags) = aflow_core::check_source(text, style(syntax)?, &r);
    diagnostics_to_py(py, &diags)
}

#[pyfunction]
fn convert(text: &str, source: &str, target: &str) -> PyResult<String> {
    aflow_core::convert(text, style(source)?, style(target)?)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs `workflow` on the simulated backend and returns the trace as a dict.
#[pyfunction]
#[pyo3(signature = (workflow, registry = None, seeds = None))]
fn execute<'py>(
    py: Python<'py>,
    workflow: &Workflow,
    registry: Option<&Registry>,
    seeds: Option<BTreeMap<String, i64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let r = registry_or_default(registry);
    let trace = aflow_core::execute(&workflow.inner, &r, &SimulatedBackend, &seeds.unwrap_or_default())
        .map_err(|e| match e {
            aflow_core::executor::ExecError::PreconditionViolated(d) => {
                PyValueError::new_err(error_summary(&d))
            }
        })?;
    json_to_py(py, &trace.to_json())
}

#[pyfunction]
#[pyo3(signature = (workflow, registry = None, fill_defaults = false))]
fn export_comfy(workflow: &Workflow, registry: Option<&Registry>, fill_defaults: bool) -> PyResult<String> {
    let r = registry_or_default(registry);
    export_comfy_with(&workflow.inner, &r, ExportOptions { fill_defaults })
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Reads a ComfyUI API prompt. Returns the workflow and warning dicts.
#[pyfunction]
#[pyo3(name = "import_comfy", signature = (document, registry = None))]
fn import_comfy_py<'py>(
    py: Python<'py>,
    document: &str,
    registry: Option<&Registry>,
) -> PyResult<(Workflow, Bound<'py, PyAny>)> {
    let r = registry_or_default(registry);
    let outcome = import_comfy(document.as_bytes(), &r).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((
        Workflow {
            inner: outcome.workflow,
        },
        diagnostics_to_py(py, &outcome.diagnostics)?,
    ))
}

/// Runs the synthesis pipeline against a scripted model that answers with
/// `responses` in order. Returns the session transcript as a dict.
#[pyfunction]
#[pyo3(signature = (task, responses, syntax = "declarative", iteration_limit = 3, two_stage = true, registry = None))]
fn infer<'py>(
    py: Python<'py>,
    task: &str,
    responses: Vec<String>,
    syntax: &str,
    iteration_limit: usize,
    two_stage: bool,
    registry: Option<&Registry>,
) -> PyResult<Bound<'py, PyAny>> {
    let r = registry_or_default(registry);
    let lm = ScriptedLm::new(responses);
    let store = ReferenceStore::bundled(&r, &lm).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let options = PipelineOptions {
        iteration_limit,
        two_stage,
        ..PipelineOptions::default()
    };
    let session = run_pipeline(
        &TaskSpec::new(task, style(syntax)?),
        &r,
        &store,
        &lm,
        options,
        None,
    )
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &session.transcript_json())
}

#[pymodule]
#[pyo3(name = "aflow")]
pub fn aflow_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Registry>()?;
    m.add_class::<Workflow>()?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(convert, m)?)?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(export_comfy, m)?)?;
    m.add_function(wrap_pyfunction!(import_comfy_py, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add(
        "SYNTAXES",
        SyntaxStyle::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
