//! Classified failures shared by the parsers, the validator, the executor and
//! the refinement loop.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::PortRef;

/// Error taxonomy, ordered by pipeline stage (parse, schema, edge, graph).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    InvalidFormat,
    UnknownFunction,
    InvalidParameter,
    ConnectionError,
    TopologicalGap,
    CycleOrUnreachable,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::InvalidFormat,
        ErrorCategory::UnknownFunction,
        ErrorCategory::InvalidParameter,
        ErrorCategory::ConnectionError,
        ErrorCategory::TopologicalGap,
        ErrorCategory::CycleOrUnreachable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::InvalidFormat => "InvalidFormat",
            ErrorCategory::UnknownFunction => "UnknownFunction",
            ErrorCategory::InvalidParameter => "InvalidParameter",
            ErrorCategory::ConnectionError => "ConnectionError",
            ErrorCategory::TopologicalGap => "TopologicalGap",
            ErrorCategory::CycleOrUnreachable => "CycleOrUnreachable",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

/// Byte range plus 1-based line/column of its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub column: u32,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn text<'a>(&self, source: &'a str) -> Option<&'a str> {
        source.get(self.start..self.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Program,
    Source(Span),
    Schema(String),
    Node(String),
    Port(PortRef),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Program => f.write_str("<program>"),
            Location::Source(span) => write!(f, "line {span}"),
            Location::Schema(t) => write!(f, "schema {t}"),
            Location::Node(n) => f.write_str(n),
            Location::Port(p) => write!(f, "{p}"),
        }
    }
}

impl Serialize for Location {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Diagnostic {
    pub category: ErrorCategory,
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

impl Diagnostic {
    pub fn error(category: ErrorCategory, location: Location, message: impl Into<String>) -> Self {
        Diagnostic {
            category,
            severity: Severity::Error,
            location,
            message: message.into(),
        }
    }

    pub fn warning(category: ErrorCategory, location: Location, message: impl Into<String>) -> Self {
        Diagnostic {
            category,
            severity: Severity::Warning,
            location,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}: {}", self.category, self.location, self.message)
    }
}

/// True iff no diagnostic has Error severity.
pub fn is_executable(diags: &[Diagnostic]) -> bool {
    !diags.iter().any(Diagnostic::is_error)
}

/// Sorts by category, then location, then severity and message.
pub fn sort_diagnostics(diags: &mut [Diagnostic]) {
    diags.sort();
}

pub fn to_json(diags: &[Diagnostic]) -> String {
    serde_json::to_string_pretty(diags).expect("diagnostics serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executable_gate() {
        assert!(is_executable(&[]));
        let warn = Diagnostic::warning(
            ErrorCategory::CycleOrUnreachable,
            Location::Node("x".into()),
            "unreachable",
        );
        assert!(is_executable(std::slice::from_ref(&warn)));
        let gap = Diagnostic::error(
            ErrorCategory::TopologicalGap,
            Location::Port(PortRef::new("s", "latent")),
            "required input not connected",
        );
        assert!(!is_executable(&[warn, gap]));
    }

    #[test]
    fn json_field_names_are_stable() {
        let d = Diagnostic::error(
            ErrorCategory::ConnectionError,
            Location::Port(PortRef::new("enc", "pixels")),
            "modality mismatch",
        );
        let v: serde_json::Value = serde_json::from_str(&to_json(&[d])).unwrap();
        assert_eq!(
            v,
            serde_json::json!([{
                "category": "ConnectionError",
                "severity": "Error",
                "location": "enc.pixels",
                "message": "modality mismatch"
            }])
        );
    }
}
