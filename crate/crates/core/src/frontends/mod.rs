//! Parsers and printers for the three concrete syntaxes. Every syntax lowers
//! to the same [`Workflow`]; none of them consults the registry.
//!
//! Parsing happens in two steps: a style-specific parser produces a
//! [`RawProgram`] (declarations with source spans), then [`lower`] builds the
//! workflow and reports structural problems such as duplicate ids or flows
//! into undeclared nodes.

mod cursor;
pub mod dataflow;
pub mod declarative;
pub mod lexer;
pub mod pseudo;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::{Diagnostic, ErrorCategory, Location, Span};
use crate::ir::{Edge, IrError, ParamMap, ParamValue, PortRef, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntaxStyle {
    Declarative,
    Dataflow,
    PseudoNatural,
}

impl SyntaxStyle {
    pub const ALL: [SyntaxStyle; 3] = [
        SyntaxStyle::Declarative,
        SyntaxStyle::Dataflow,
        SyntaxStyle::PseudoNatural,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntaxStyle::Declarative => "declarative",
            SyntaxStyle::Dataflow => "dataflow",
            SyntaxStyle::PseudoNatural => "pseudo_natural",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            SyntaxStyle::Declarative => "adl",
            SyntaxStyle::Dataflow => "adf",
            SyntaxStyle::PseudoNatural => "apn",
        }
    }

    pub fn from_extension(ext: &str) -> Option<SyntaxStyle> {
        SyntaxStyle::ALL.into_iter().find(|s| s.extension() == ext)
    }

    /// Identifiers a node may not use in this style.
    pub fn reserved_words(self) -> &'static [&'static str] {
        match self {
            SyntaxStyle::Declarative => &["workflow", "node", "true", "false"],
            SyntaxStyle::Dataflow | SyntaxStyle::PseudoNatural => &["true", "false"],
        }
    }

    /// Short grammar reference, included in every LM prompt.
    pub fn grammar_summary(self) -> &'static str {
        match self {
            SyntaxStyle::Declarative => declarative::GRAMMAR,
            SyntaxStyle::Dataflow => dataflow::GRAMMAR,
            SyntaxStyle::PseudoNatural => pseudo::GRAMMAR,
        }
    }
}

impl fmt::Display for SyntaxStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntaxStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "declarative" | "adl" => Ok(SyntaxStyle::Declarative),
            "dataflow" | "adf" => Ok(SyntaxStyle::Dataflow),
            "pseudo_natural" | "pseudo-natural" | "apn" => Ok(SyntaxStyle::PseudoNatural),
            other => Err(format!("unknown syntax style `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawNode {
    pub id: String,
    pub type_name: String,
    pub params: Vec<(String, ParamValue, Span)>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEdge {
    pub src: PortRef,
    pub dst: PortRef,
    pub span: Span,
}

/// `set <node> <param> to <value>` style assignment applied after declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSet {
    pub node: String,
    pub param: String,
    pub value: ParamValue,
    pub span: Span,
}

/// Declarations in source order, before any structural checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawProgram {
    pub nodes: Vec<RawNode>,
    pub edges: Vec<RawEdge>,
    pub sets: Vec<RawSet>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpanKey {
    Node(String),
    /// Keyed by the edge's destination, which is unique.
    Edge(PortRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub workflow: Option<Workflow>,
    pub diagnostics: Vec<Diagnostic>,
    pub source_spans: BTreeMap<SpanKey, Span>,
}

impl ParseOutcome {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(Diagnostic::is_error)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("cannot print in {style}: {reason}")]
    UnrepresentableWorkflow { style: SyntaxStyle, reason: String },
    #[error("input does not parse ({} diagnostics)", .0.len())]
    Parse(Vec<Diagnostic>),
}

/// Parses a complete program.
pub fn parse(text: &str, style: SyntaxStyle) -> ParseOutcome {
    lower(parse_raw(text, style, false, &BTreeSet::new()))
}

/// Parses declarations only, without structural lowering. `fragment` accepts
/// bare statements where the style normally wants a wrapper; `known` lists
/// nodes defined elsewhere (for the dataflow ordering rule).
pub fn parse_raw(text: &str, style: SyntaxStyle, fragment: bool, known: &BTreeSet<String>) -> RawProgram {
    let tokens = lexer::tokenize(text);
    match style {
        SyntaxStyle::Declarative => declarative::parse_tokens(&tokens, fragment),
        SyntaxStyle::Dataflow => dataflow::parse_tokens(&tokens, known),
        SyntaxStyle::PseudoNatural => pseudo::parse_tokens(&tokens),
    }
}

fn format_error(span: Span, message: impl Into<String>) -> Diagnostic {
    Diagnostic::error(ErrorCategory::InvalidFormat, Location::Source(span), message)
}

/// Builds a workflow from declarations. Duplicate ids and parameters are
/// format errors; flows naming undeclared nodes or occupied inputs are
/// connection errors and the offending flow is dropped.
pub fn lower(raw: RawProgram) -> ParseOutcome {
    let mut diags = raw.diagnostics;
    let mut spans = BTreeMap::new();
    let mut w = Workflow::new();
    for node in raw.nodes {
        let mut params = ParamMap::new();
        for (name, value, span) in node.params {
            if params.contains_key(&name) {
                diags.push(format_error(span, format!("parameter `{name}` given twice")));
                continue;
            }
            params.insert(name, value);
        }
        match w.add_node(node.id.clone(), node.type_name, params) {
            Ok(()) => {
                spans.insert(SpanKey::Node(node.id), node.span);
            }
            Err(IrError::DuplicateNodeId(id)) => {
                diags.push(format_error(node.span, format!("duplicate node id `{id}`")))
            }
            Err(e) => diags.push(format_error(node.span, e.to_string())),
        }
    }
    for set in raw.sets {
        if let Err(e) = w.set_param(&set.node, &set.param, set.value) {
            diags.push(format_error(set.span, e.to_string()));
        }
    }
    for edge in raw.edges {
        let dst = edge.dst.clone();
        match w.add_edge(Edge::new(edge.src, edge.dst)) {
            Ok(()) => {
                spans.insert(SpanKey::Edge(dst), edge.span);
            }
            Err(e @ (IrError::UnknownNode(_) | IrError::InputOccupied(_))) => diags.push(Diagnostic::error(
                ErrorCategory::ConnectionError,
                Location::Source(edge.span),
                e.to_string(),
            )),
            Err(e) => diags.push(format_error(edge.span, e.to_string())),
        }
    }
    let fatal = diags
        .iter()
        .any(|d| d.is_error() && d.category == ErrorCategory::InvalidFormat);
    ParseOutcome {
        workflow: (!fatal).then_some(w),
        diagnostics: diags,
        source_spans: spans,
    }
}

fn check_reserved(w: &Workflow, style: SyntaxStyle) -> Result<(), FrontendError> {
    for n in w.nodes() {
        if style.reserved_words().contains(&n.id.as_str()) {
            return Err(FrontendError::UnrepresentableWorkflow {
                style,
                reason: format!("node id `{}` is a reserved word", n.id),
            });
        }
    }
    Ok(())
}

/// Prints a workflow in canonical node order.
pub fn emit(w: &Workflow, style: SyntaxStyle) -> Result<String, FrontendError> {
    check_reserved(w, style)?;
    let c = w.canonicalize();
    match style {
        SyntaxStyle::Declarative => Ok(declarative::emit(&c)),
        SyntaxStyle::Dataflow => dataflow::emit(&c),
        SyntaxStyle::PseudoNatural => Ok(pseudo::emit(&c)),
    }
}

/// Parses under one style and prints under another. Any error diagnostic
/// aborts the conversion.
pub fn convert(text: &str, from: SyntaxStyle, to: SyntaxStyle) -> Result<String, FrontendError> {
    let outcome = parse(text, from);
    match outcome.workflow {
        Some(w) if !outcome.has_errors() => emit(&w, to),
        _ => Err(FrontendError::Parse(outcome.diagnostics)),
    }
}
