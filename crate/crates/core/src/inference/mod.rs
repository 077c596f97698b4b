//! Program synthesis with a language model.
//!
//! A task description is turned into a workflow in two stages: the first asks
//! for the functions and their parameters, the second for the connections
//! between that fixed node set. The merged candidate is validated (and
//! optionally executed); while it has errors, the diagnostics are fed back to
//! the model for another attempt, up to an iteration limit.

pub mod lm;
pub mod prompt;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::diagnostic::{is_executable, Diagnostic, ErrorCategory, Location, Span};
use crate::executor::{execute, Backend, ExecError, ExecutionTrace, TraceStatus};
use crate::frontends::{emit, lower, parse, parse_raw, RawNode, RawProgram, SyntaxStyle};
use crate::ir::{Modality, ParamMap, Workflow};
use crate::registry::Registry;
use crate::validator::check;

pub use lm::{hashing_embed, LmBackend, LmError, OpenAiLm, RecordedPrompt, ScriptedLm};
pub use store::{ReferenceEntry, ReferenceStore, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInput {
    pub name: String,
    pub modality: Modality,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub description: String,
    #[serde(default)]
    pub inputs: Vec<TaskInput>,
    #[serde(default = "default_syntax")]
    pub syntax: SyntaxStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_functions: Option<Vec<String>>,
}

fn default_syntax() -> SyntaxStyle {
    SyntaxStyle::Declarative
}

impl TaskSpec {
    pub fn new(description: impl Into<String>, syntax: SyntaxStyle) -> Self {
        TaskSpec {
            description: description.into(),
            inputs: Vec::new(),
            syntax,
            key_functions: None,
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.description.trim().is_empty() {
            return Err(InferenceError::InvalidTask("description is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("the {0:?} stage got an empty response")]
    EmptyResponse(Stage),
    #[error("iteration limit of {0} refinements reached")]
    IterationLimitReached(usize),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Components,
    Topology,
    WholeProgram,
    Refinement,
}

/// One prompt/response round trip.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exchange {
    pub stage: Stage,
    pub system: String,
    pub user: String,
    pub response: String,
}

fn ask(lm: &dyn LmBackend, stage: Stage, user: String) -> Result<(Exchange, String), InferenceError> {
    let response = lm.complete(prompt::SYSTEM, &user)?;
    // an empty fenced block is an answer (e.g. "no connections"); silence is not
    if response.trim().is_empty() {
        return Err(InferenceError::EmptyResponse(stage));
    }
    let candidate = prompt::extract_candidate(&response);
    let exchange = Exchange {
        stage,
        system: prompt::SYSTEM.to_string(),
        user,
        response,
    };
    Ok((exchange, candidate))
}

fn serialize_workflow<S: Serializer>(w: &Option<Workflow>, s: S) -> Result<S::Ok, S::Error> {
    let value = w
        .as_ref()
        .map(|w| serde_json::from_str::<serde_json::Value>(&w.to_json()).expect("valid JSON"));
    value.serialize(s)
}

/// Output of the component stage.
#[derive(Debug, Clone)]
pub struct ComponentDraft {
    pub exchange: Exchange,
    pub candidate: String,
    /// Declared nodes, with no edges.
    pub nodes: Workflow,
    pub diagnostics: Vec<Diagnostic>,
}

fn stage_warning(message: impl Into<String>) -> Diagnostic {
    Diagnostic::warning(ErrorCategory::InvalidFormat, Location::Program, message)
}

/// Component inference: asks for node declarations only. Statements that
/// fail to parse become diagnostics; connections in the answer are dropped
/// with a warning. Unknown function types are kept for the validator.
pub fn infer_components(
    task: &TaskSpec,
    r: &Registry,
    refs: &[&ReferenceEntry],
    lm: &dyn LmBackend,
) -> Result<ComponentDraft, InferenceError> {
    let (exchange, candidate) = ask(lm, Stage::Components, prompt::components(task, r, refs))?;
    let raw = parse_raw(&candidate, task.syntax, true, &BTreeSet::new());
    let mut diags = raw.diagnostics;
    if !raw.edges.is_empty() {
        diags.push(stage_warning(format!(
            "{} connection(s) ignored in the component stage",
            raw.edges.len()
        )));
    }
    // lowering without edges; structural problems surface as InvalidFormat
    let lowered = lower(RawProgram {
        nodes: raw.nodes.clone(),
        sets: raw.sets.clone(),
        ..RawProgram::default()
    });
    diags.extend(lowered.diagnostics);
    let nodes = match lowered.workflow {
        Some(w) => w,
        None => {
            // keep what can be kept so the topology stage still has a draft
            let mut w = Workflow::new();
            for n in raw.nodes {
                let params: ParamMap = n.params.into_iter().map(|(k, v, _)| (k, v)).collect();
                let _ = w.add_node(n.id, n.type_name, params);
            }
            w
        }
    };
    if nodes.node_count() == 0 && is_executable(&diags) {
        diags.push(Diagnostic::error(
            ErrorCategory::InvalidFormat,
            Location::Program,
            "no function declarations found",
        ));
    }
    diags.sort();
    Ok(ComponentDraft {
        exchange,
        candidate,
        nodes,
        diagnostics: diags,
    })
}

#[derive(Debug, Clone)]
pub struct TopologyResult {
    pub exchange: Exchange,
    pub candidate: String,
    pub workflow: Workflow,
    pub diagnostics: Vec<Diagnostic>,
}

const NO_SPAN: Span = Span {
    line: 1,
    column: 1,
    start: 0,
    end: 0,
};

/// Topology construction over the draft's fixed node set. Node statements
/// in the answer are read only for the connections they carry (the dataflow
/// style writes connections as arguments); ones that would add or change a
/// node are dropped with a warning.
pub fn infer_topology(
    task: &TaskSpec,
    r: &Registry,
    refs: &[&ReferenceEntry],
    draft: &ComponentDraft,
    lm: &dyn LmBackend,
) -> Result<TopologyResult, InferenceError> {
    if draft.nodes.node_count() == 0 {
        return Err(InferenceError::PreconditionViolated(
            "the component draft has no nodes".into(),
        ));
    }
    let draft_text = emit(&draft.nodes, task.syntax).unwrap_or_else(|_| draft.candidate.clone());
    let (exchange, candidate) = ask(lm, Stage::Topology, prompt::topology(task, r, refs, &draft_text))?;
    let ids: BTreeSet<String> = draft.nodes.nodes().map(|n| n.id.clone()).collect();
    let raw = parse_raw(&candidate, task.syntax, true, &ids);
    let mut diags = raw.diagnostics;
    for n in &raw.nodes {
        match draft.nodes.node(&n.id) {
            Some(d) if d.type_name == n.type_name => {
                let changed = n
                    .params
                    .iter()
                    .any(|(k, v, _)| d.params.get(k).is_none_or(|old| old != v));
                if changed {
                    diags.push(stage_warning(format!(
                        "parameter changes to `{}` ignored in the topology stage",
                        n.id
                    )));
                }
            }
            Some(_) => diags.push(stage_warning(format!(
                "type change of `{}` ignored in the topology stage",
                n.id
            ))),
            None => diags.push(stage_warning(format!(
                "declaration of `{}` dropped: the topology stage may not add nodes",
                n.id
            ))),
        }
    }
    if !raw.sets.is_empty() {
        diags.push(stage_warning(format!(
            "{} parameter assignment(s) ignored in the topology stage",
            raw.sets.len()
        )));
    }
    let nodes = draft
        .nodes
        .nodes()
        .map(|n| RawNode {
            id: n.id.clone(),
            type_name: n.type_name.clone(),
            params: n
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.clone(), NO_SPAN))
                .collect(),
            span: NO_SPAN,
        })
        .collect();
    let merged = lower(RawProgram {
        nodes,
        edges: raw.edges,
        ..RawProgram::default()
    });
    diags.extend(merged.diagnostics);
    diags.sort();
    Ok(TopologyResult {
        exchange,
        candidate,
        workflow: merged.workflow.expect("draft nodes lower cleanly"),
        diagnostics: diags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationKind {
    TwoStage,
    SingleStage,
    Refinement,
}

/// One candidate program and everything known about it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Iteration {
    pub kind: IterationKind,
    pub candidate: String,
    #[serde(serialize_with = "serialize_workflow")]
    pub workflow: Option<Workflow>,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execution: Option<TraceStatus>,
}

impl Iteration {
    fn new(
        kind: IterationKind,
        candidate: String,
        workflow: Option<Workflow>,
        r: &Registry,
        mut diags: Vec<Diagnostic>,
    ) -> Self {
        if let Some(w) = &workflow {
            diags.extend(check(w, r));
        }
        diags.sort();
        Iteration {
            kind,
            candidate,
            workflow,
            diagnostics: diags,
            execution: None,
        }
    }

    /// Parsed and validated without errors.
    pub fn compiles(&self) -> bool {
        self.workflow.is_some() && is_executable(&self.diagnostics)
    }

    pub fn error_categories(&self) -> Vec<ErrorCategory> {
        self.diagnostics
            .iter()
            .filter(|d| d.is_error())
            .map(|d| d.category)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PipelineOptions {
    /// Maximum number of refinement rounds after the first candidate.
    pub iteration_limit: usize,
    /// Number of retrieved references per prompt.
    pub k: usize,
    /// Component and topology stages; `false` asks for the whole program at once.
    pub two_stage: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            iteration_limit: 3,
            k: 3,
            two_stage: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceSession {
    pub prompt_version: &'static str,
    pub task: TaskSpec,
    pub options: PipelineOptions,
    #[serde(serialize_with = "serialize_ref_names")]
    pub references: Vec<ReferenceEntry>,
    pub exchanges: Vec<Exchange>,
    pub iterations: Vec<Iteration>,
    #[serde(rename = "final", serialize_with = "serialize_workflow")]
    pub final_workflow: Option<Workflow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<ExecutionTrace>,
}

fn serialize_ref_names<S: Serializer>(refs: &[ReferenceEntry], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(refs.iter().map(|e| &e.name))
}

impl InferenceSession {
    pub fn new(task: TaskSpec, options: PipelineOptions, references: Vec<ReferenceEntry>) -> Self {
        InferenceSession {
            prompt_version: prompt::PROMPT_VERSION,
            task,
            options,
            references,
            exchanges: Vec::new(),
            iterations: Vec::new(),
            final_workflow: None,
            trace: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.final_workflow.is_some()
    }

    pub fn refinements(&self) -> usize {
        self.iterations
            .iter()
            .filter(|i| i.kind == IterationKind::Refinement)
            .count()
    }

    pub fn last(&self) -> Option<&Iteration> {
        self.iterations.last()
    }

    /// The first candidate compiled.
    pub fn first_compiles(&self) -> bool {
        self.iterations.first().is_some_and(Iteration::compiles)
    }

    /// Every prompt, response and diagnostic, for audit.
    pub fn transcript_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    fn refs(&self) -> Vec<&ReferenceEntry> {
        self.references.iter().collect()
    }

    /// Program text of the final workflow in the task's syntax.
    pub fn final_program(&self) -> Option<String> {
        let w = self.final_workflow.as_ref()?;
        emit(w, self.task.syntax)
            .or_else(|_| emit(w, SyntaxStyle::Declarative))
            .ok()
    }
}

/// One application of the repair operator: shows the model its last
/// candidate with the diagnostics and validates the rewrite.
pub fn refine(
    session: &mut InferenceSession,
    r: &Registry,
    lm: &dyn LmBackend,
) -> Result<(), InferenceError> {
    let last = session
        .last()
        .ok_or_else(|| InferenceError::PreconditionViolated("session has no candidate".into()))?;
    if is_executable(&last.diagnostics) {
        return Err(InferenceError::PreconditionViolated(
            "the last candidate has no errors".into(),
        ));
    }
    if session.refinements() >= session.options.iteration_limit {
        return Err(InferenceError::IterationLimitReached(
            session.options.iteration_limit,
        ));
    }
    let user = prompt::refinement(
        &session.task,
        r,
        &session.refs(),
        &last.candidate,
        &last.diagnostics,
    );
    let (exchange, candidate) = ask(lm, Stage::Refinement, user)?;
    let parsed = parse(&candidate, session.task.syntax);
    let it = Iteration::new(
        IterationKind::Refinement,
        candidate,
        parsed.workflow,
        r,
        parsed.diagnostics,
    );
    session.exchanges.push(exchange);
    session.iterations.push(it);
    Ok(())
}

fn first_iteration(
    session: &mut InferenceSession,
    r: &Registry,
    lm: &dyn LmBackend,
) -> Result<(), InferenceError> {
    let task = session.task.clone();
    let held = session.references.clone();
    let refs: Vec<&ReferenceEntry> = held.iter().collect();
    let it = if session.options.two_stage {
        let draft = infer_components(&task, r, &refs, lm)?;
        session.exchanges.push(draft.exchange.clone());
        if draft.nodes.node_count() == 0 {
            Iteration::new(
                IterationKind::TwoStage,
                draft.candidate,
                None,
                r,
                draft.diagnostics,
            )
        } else {
            let topo = infer_topology(&task, r, &refs, &draft, lm)?;
            session.exchanges.push(topo.exchange.clone());
            let candidate = emit(&topo.workflow, task.syntax)
                .unwrap_or_else(|_| format!("{}\n{}", draft.candidate, topo.candidate));
            let mut diags = draft.diagnostics;
            diags.extend(topo.diagnostics);
            Iteration::new(IterationKind::TwoStage, candidate, Some(topo.workflow), r, diags)
        }
    } else {
        let (exchange, candidate) = ask(lm, Stage::WholeProgram, prompt::whole_program(&task, r, &refs))?;
        session.exchanges.push(exchange);
        let parsed = parse(&candidate, task.syntax);
        Iteration::new(
            IterationKind::SingleStage,
            candidate,
            parsed.workflow,
            r,
            parsed.diagnostics,
        )
    };
    session.iterations.push(it);
    Ok(())
}

/// Decides whether the last candidate is final, executing it when a backend
/// is given. A runtime failure is appended to the candidate's diagnostics.
fn settle(session: &mut InferenceSession, r: &Registry, backend: Option<&dyn Backend>) -> bool {
    let it = session.iterations.last_mut().expect("at least one iteration");
    if !it.compiles() {
        return false;
    }
    let w = it.workflow.clone().expect("compiled");
    if let Some(b) = backend {
        let trace = match execute(&w, r, b, &BTreeMap::new()) {
            Ok(t) => t,
            Err(ExecError::PreconditionViolated(d)) => {
                it.diagnostics.extend(d);
                return false;
            }
        };
        it.execution = Some(trace.status);
        let failure = trace.failure_diagnostic();
        session.trace = Some(trace);
        if let Some(d) = failure {
            let it = session.iterations.last_mut().expect("present");
            it.diagnostics.push(d);
            it.diagnostics.sort();
            return false;
        }
    }
    session.final_workflow = Some(w);
    true
}

/// Retrieve, draft, connect, validate and repair. A session that runs out of
/// refinements without a valid program is returned normally, unsucceeded.
pub fn run_pipeline(
    task: &TaskSpec,
    r: &Registry,
    store: &ReferenceStore,
    lm: &dyn LmBackend,
    options: PipelineOptions,
    backend: Option<&dyn Backend>,
) -> Result<InferenceSession, InferenceError> {
    task.validate()?;
    let refs = store
        .retrieve(lm, &task.description, options.k)?
        .into_iter()
        .cloned()
        .collect();
    let mut session = InferenceSession::new(task.clone(), options, refs);
    first_iteration(&mut session, r, lm)?;
    while !settle(&mut session, r, backend) {
        if session.refinements() >= options.iteration_limit {
            break;
        }
        refine(&mut session, r, lm)?;
    }
    Ok(session)
}
