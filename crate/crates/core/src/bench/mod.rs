//! Task-suite harness: Pass@1 for compilation and execution, resolve rate per
//! category, and error histograms across syntax styles.
//!
//! Every case gets exactly one pipeline run (refinement rounds included), so
//! the rates are single-run pass rates.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::{is_executable, ErrorCategory};
use crate::executor::{execute, Backend, TraceStatus};
use crate::frontends::{parse, SyntaxStyle};
use crate::inference::{run_pipeline, LmBackend, LmError, PipelineOptions, ReferenceStore, TaskSpec};
use crate::ir::Workflow;
use crate::registry::Registry;
use crate::validator::check;

#[derive(Debug, Clone)]
pub enum Oracle {
    ValidatesCleanly,
    ExecutesWithSim,
    /// Canonical-equal to this workflow.
    GoldenEquivalence(Workflow),
}

impl PartialEq for Oracle {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Oracle::ValidatesCleanly, Oracle::ValidatesCleanly)
            | (Oracle::ExecutesWithSim, Oracle::ExecutesWithSim) => true,
            (Oracle::GoldenEquivalence(a), Oracle::GoldenEquivalence(b)) => a.canonical_eq(b),
            _ => false,
        }
    }
}

/// On-disk oracle form; the golden workflow travels as declarative text.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OracleDoc {
    ValidatesCleanly,
    ExecutesWithSim,
    GoldenEquivalence { program: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskCase {
    pub id: String,
    pub category: String,
    pub spec: TaskSpec,
    pub oracle: Oracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseDoc {
    id: String,
    category: String,
    #[serde(flatten)]
    spec: TaskSpec,
    oracle: OracleDoc,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("case file {file}: {message}")]
    InvalidCase { file: String, message: String },
    #[error("reports cover different case sets")]
    MismatchedCaseSets,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl TaskCase {
    pub fn from_json(text: &str, r: &Registry) -> Result<TaskCase, String> {
        let doc: CaseDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
        doc.spec.validate().map_err(|e| e.to_string())?;
        let oracle = match doc.oracle {
            OracleDoc::ValidatesCleanly => Oracle::ValidatesCleanly,
            OracleDoc::ExecutesWithSim => Oracle::ExecutesWithSim,
            OracleDoc::GoldenEquivalence { program } => {
                let parsed = parse(&program, SyntaxStyle::Declarative);
                let w = parsed
                    .workflow
                    .filter(|w| {
                        let mut d = parsed.diagnostics.clone();
                        d.extend(check(w, r));
                        is_executable(&d)
                    })
                    .ok_or("golden program does not validate")?;
                Oracle::GoldenEquivalence(w)
            }
        };
        Ok(TaskCase {
            id: doc.id,
            category: doc.category,
            spec: doc.spec,
            oracle,
        })
    }

    pub fn to_json(&self) -> String {
        let oracle = match &self.oracle {
            Oracle::ValidatesCleanly => OracleDoc::ValidatesCleanly,
            Oracle::ExecutesWithSim => OracleDoc::ExecutesWithSim,
            Oracle::GoldenEquivalence(w) => OracleDoc::GoldenEquivalence {
                program: crate::frontends::emit(w, SyntaxStyle::Declarative)
                    .expect("validated golden prints"),
            },
        };
        let doc = CaseDoc {
            id: self.id.clone(),
            category: self.category.clone(),
            spec: self.spec.clone(),
            oracle,
        };
        serde_json::to_string_pretty(&doc).expect("case serializes") + "\n"
    }
}

/// A case file that could not be loaded still occupies a report row.
#[derive(Debug, Clone)]
pub enum CaseEntry {
    Loaded(TaskCase),
    Broken { id: String, message: String },
}

impl CaseEntry {
    pub fn id(&self) -> &str {
        match self {
            CaseEntry::Loaded(c) => &c.id,
            CaseEntry::Broken { id, .. } => id,
        }
    }
}

/// Reads every `*.json` case file in `dir` (script files, `*.script.json`,
/// are skipped), sorted by file name.
pub fn load_suite(dir: &Path, r: &Registry) -> Result<Vec<CaseEntry>, BenchError> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".script.json")
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    for path in files {
        let stem = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".json"))
            .unwrap_or("")
            .to_string();
        let entry = match fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| TaskCase::from_json(&t, r))
        {
            Ok(c) => CaseEntry::Loaded(c),
            Err(message) => CaseEntry::Broken { id: stem, message },
        };
        out.push(entry);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub id: String,
    pub category: String,
    pub syntax: Option<SyntaxStyle>,
    pub compiled: bool,
    pub executed: bool,
    pub resolved: bool,
    /// Candidates produced, first attempt included.
    pub iterations: usize,
    pub refinements: usize,
    /// Error diagnostics per category over all candidates.
    pub errors: BTreeMap<ErrorCategory, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAggregate {
    pub cases: usize,
    pub resolved: usize,
    pub resolve_rate: f64,
}

/// Rates are `None` for an empty suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub cases: usize,
    pub pass_at_1_compile: Option<f64>,
    pub pass_at_1_execute: Option<f64>,
    pub resolve_rate: Option<f64>,
    pub per_category: BTreeMap<String, CategoryAggregate>,
    pub error_totals: BTreeMap<ErrorCategory, usize>,
}

impl Aggregates {
    pub fn from_rows(rows: &[CaseRow]) -> Aggregates {
        let n = rows.len();
        let rate = |count: usize| (n > 0).then(|| count as f64 / n as f64);
        let mut per_category: BTreeMap<String, CategoryAggregate> = BTreeMap::new();
        let mut error_totals: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
        for row in rows {
            let c = per_category
                .entry(row.category.clone())
                .or_insert(CategoryAggregate {
                    cases: 0,
                    resolved: 0,
                    resolve_rate: 0.0,
                });
            c.cases += 1;
            c.resolved += usize::from(row.resolved);
            for (cat, k) in &row.errors {
                *error_totals.entry(*cat).or_default() += k;
            }
        }
        for c in per_category.values_mut() {
            c.resolve_rate = c.resolved as f64 / c.cases as f64;
        }
        Aggregates {
            cases: n,
            pass_at_1_compile: rate(rows.iter().filter(|r| r.compiled).count()),
            pass_at_1_execute: rate(rows.iter().filter(|r| r.executed).count()),
            resolve_rate: rate(rows.iter().filter(|r| r.resolved).count()),
            per_category,
            error_totals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    /// Style forced on every case, if any.
    pub syntax: Option<SyntaxStyle>,
    pub options: ReportOptions,
    pub rows: Vec<CaseRow>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub iteration_limit: usize,
    pub k: usize,
    pub two_stage: bool,
}

impl From<PipelineOptions> for ReportOptions {
    fn from(o: PipelineOptions) -> Self {
        ReportOptions {
            iteration_limit: o.iteration_limit,
            k: o.k,
            two_stage: o.two_stage,
        }
    }
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or("n/a".to_string(), |r| format!("{r:.3}"))
}

impl SuiteReport {
    pub fn new(syntax: Option<SyntaxStyle>, options: PipelineOptions, mut rows: Vec<CaseRow>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let aggregates = Aggregates::from_rows(&rows);
        SuiteReport {
            syntax,
            options: options.into(),
            rows,
            aggregates,
        }
    }

    /// Recomputes the aggregates from the rows and compares.
    pub fn is_consistent(&self) -> bool {
        Aggregates::from_rows(&self.rows) == self.aggregates
            && self.rows.windows(2).all(|w| w[0].id < w[1].id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<SuiteReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn case_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let a = &self.aggregates;
        let mut out = String::new();
        let label = self.syntax.map_or("per-case".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "suite: {} cases, syntax {label}, {} refinement(s) max, {}",
            a.cases,
            self.options.iteration_limit,
            if self.options.two_stage {
                "two-stage"
            } else {
                "single-stage"
            }
        );
        let _ = writeln!(out, "pass@1 compile  {}", fmt_rate(a.pass_at_1_compile));
        let _ = writeln!(out, "pass@1 execute  {}", fmt_rate(a.pass_at_1_execute));
        let _ = writeln!(out, "resolve rate    {}", fmt_rate(a.resolve_rate));
        if !a.per_category.is_empty() {
            let width = a.per_category.keys().map(|k| k.len()).max().unwrap_or(0).max(8);
            let _ = writeln!(out, "\n{:<width$}  cases  resolved  rate", "category");
            for (name, c) in &a.per_category {
                let _ = writeln!(
                    out,
                    "{name:<width$}  {:>5}  {:>8}  {:.3}",
                    c.cases, c.resolved, c.resolve_rate
                );
            }
        }
        if !a.error_totals.is_empty() {
            let _ = writeln!(out, "\nerrors by category");
            for (cat, k) in &a.error_totals {
                let _ = writeln!(out, "  {cat:<20} {k}");
            }
        }
        out
    }

    /// One line per case.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "id",
            "category",
            "syntax",
            "compiled",
            "executed",
            "resolved",
            "iterations",
            "refinements",
        ];
        header.extend(ErrorCategory::ALL.iter().map(|c| c.as_str()));
        header.push("failure");
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut rec = vec![
                row.id.clone(),
                row.category.clone(),
                row.syntax.map(|s| s.to_string()).unwrap_or_default(),
                row.compiled.to_string(),
                row.executed.to_string(),
                row.resolved.to_string(),
                row.iterations.to_string(),
                row.refinements.to_string(),
            ];
            rec.extend(
                ErrorCategory::ALL
                    .iter()
                    .map(|c| row.errors.get(c).copied().unwrap_or(0).to_string()),
            );
            rec.push(row.failure.clone().unwrap_or_default());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Supplies the model for one case; scripted suites hand out a fresh script
/// per case.
pub type LmProvider<'a> = dyn Fn(&TaskCase) -> Result<Box<dyn LmBackend + 'a>, LmError> + 'a;

/// Runs every case once. Individual failures are recorded in their row and
/// never abort the suite. `syntax` overrides each case's own style.
pub fn run_suite(
    cases: &[CaseEntry],
    r: &Registry,
    store: &ReferenceStore,
    lm_for: &LmProvider<'_>,
    backend: &dyn Backend,
    syntax: Option<SyntaxStyle>,
    options: PipelineOptions,
) -> SuiteReport {
    let rows = cases
        .iter()
        .map(|entry| match entry {
            CaseEntry::Broken { id, message } => CaseRow {
                id: id.clone(),
                category: "<invalid>".into(),
                syntax,
                compiled: false,
                executed: false,
                resolved: false,
                iterations: 0,
                refinements: 0,
                errors: BTreeMap::new(),
                failure: Some(format!("invalid case: {message}")),
            },
            CaseEntry::Loaded(case) => run_case(case, r, store, lm_for, backend, syntax, options),
        })
        .collect();
    SuiteReport::new(syntax, options, rows)
}

fn run_case(
    case: &TaskCase,
    r: &Registry,
    store: &ReferenceStore,
    lm_for: &LmProvider<'_>,
    backend: &dyn Backend,
    syntax: Option<SyntaxStyle>,
    options: PipelineOptions,
) -> CaseRow {
    let mut spec = case.spec.clone();
    if let Some(s) = syntax {
        spec.syntax = s;
    }
    let mut row = CaseRow {
        id: case.id.clone(),
        category: case.category.clone(),
        syntax: Some(spec.syntax),
        compiled: false,
        executed: false,
        resolved: false,
        iterations: 0,
        refinements: 0,
        errors: BTreeMap::new(),
        failure: None,
    };
    let session = lm_for(case)
        .map_err(|e| e.to_string())
        .and_then(|lm| run_pipeline(&spec, r, store, lm.as_ref(), options, None).map_err(|e| e.to_string()));
    let session = match session {
        Ok(s) => s,
        Err(e) => {
            row.failure = Some(e);
            return row;
        }
    };
    row.iterations = session.iterations.len();
    row.refinements = session.refinements();
    for it in &session.iterations {
        for cat in it.error_categories() {
            *row.errors.entry(cat).or_default() += 1;
        }
    }
    row.compiled = session.succeeded();
    if let Some(w) = &session.final_workflow {
        match execute(w, r, backend, &BTreeMap::new()) {
            Ok(trace) => {
                row.executed = trace.status == TraceStatus::Completed;
                if let Some(f) = trace.failure {
                    row.failure = Some(format!("runtime failure at {}: {}", f.node, f.message));
                }
            }
            Err(e) => row.failure = Some(e.to_string()),
        }
        row.resolved = match &case.oracle {
            Oracle::ValidatesCleanly => row.compiled,
            Oracle::ExecutesWithSim => row.executed,
            Oracle::GoldenEquivalence(golden) => w.canonical_eq(golden),
        };
    }
    row
}

/// Error counts, category × syntax style.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorHistogram {
    pub styles: Vec<SyntaxStyle>,
    /// One row per category, one column per entry of `styles`.
    pub counts: BTreeMap<ErrorCategory, Vec<usize>>,
}

impl ErrorHistogram {
    pub fn row_sum(&self, cat: ErrorCategory) -> usize {
        self.counts.get(&cat).map_or(0, |r| r.iter().sum())
    }

    pub fn column_sum(&self, col: usize) -> usize {
        self.counts.values().map(|r| r[col]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.values().flatten().sum()
    }

    pub fn get(&self, cat: ErrorCategory, style: SyntaxStyle) -> usize {
        let col = self.styles.iter().position(|s| *s == style);
        col.and_then(|c| self.counts.get(&cat).map(|r| r[c])).unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<20}", "category");
        for s in &self.styles {
            let _ = write!(out, " {:>14}", s.as_str());
        }
        out.push_str("          total\n");
        for (cat, row) in &self.counts {
            let _ = write!(out, "{:<20}", cat.as_str());
            for k in row {
                let _ = write!(out, " {k:>14}");
            }
            let _ = writeln!(out, " {:>14}", row.iter().sum::<usize>());
        }
        let _ = write!(out, "{:<20}", "total");
        for c in 0..self.styles.len() {
            let _ = write!(out, " {:>14}", self.column_sum(c));
        }
        let _ = writeln!(out, " {:>14}", self.total());
        out
    }
}

/// Combines per-style reports over the same cases.
pub fn error_histogram(reports: &[(SyntaxStyle, &SuiteReport)]) -> Result<ErrorHistogram, BenchError> {
    if let Some((_, first)) = reports.first() {
        let ids = first.case_ids();
        if reports.iter().any(|(_, r)| r.case_ids() != ids) {
            return Err(BenchError::MismatchedCaseSets);
        }
    }
    let styles: Vec<SyntaxStyle> = reports.iter().map(|(s, _)| *s).collect();
    let counts = ErrorCategory::ALL
        .iter()
        .map(|cat| {
            let row = reports
                .iter()
                .map(|(_, r)| {
                    r.rows
                        .iter()
                        .map(|row| row.errors.get(cat).copied().unwrap_or(0))
                        .sum()
                })
                .collect();
            (*cat, row)
        })
        .collect();
    Ok(ErrorHistogram { styles, counts })
}
