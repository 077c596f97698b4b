//! Prompt templates. The wording is part of the artifact: changing it changes
//! what scripted transcripts record, so it is versioned.

use std::fmt::Write;

use super::store::ReferenceEntry;
use super::TaskSpec;
use crate::diagnostic::Diagnostic;
use crate::frontends::{emit, SyntaxStyle};
use crate::registry::Registry;

pub const PROMPT_VERSION: &str = "aflow-prompts/1";

pub const SYSTEM: &str = "You write programs in a small workflow language for generative \
pipelines. Answer with a single fenced code block and nothing else.";

/// Grammar, catalog and worked examples; shared by every stage so each prompt
/// is self-contained.
fn context(style: SyntaxStyle, r: &Registry, refs: &[&ReferenceEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## Syntax ({style})\n{}\n", style.grammar_summary());
    let _ = writeln!(out, "## Available functions\n{}\n", r.summary());
    let _ = writeln!(out, "## Examples");
    for (i, e) in refs.iter().enumerate() {
        let program = emit(&e.workflow, style)
            .or_else(|_| emit(&e.workflow, SyntaxStyle::Declarative))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "### Example {}\nTask: {}\n```\n{}```\n",
            i + 1,
            e.task,
            program
        );
    }
    out
}

fn task_block(task: &TaskSpec) -> String {
    let mut out = format!("## Task\n{}\n", task.description.trim());
    if !task.inputs.is_empty() {
        out.push_str("Inputs:\n");
        for i in &task.inputs {
            let _ = writeln!(out, "- {} ({}): {}", i.name, i.modality, i.uri);
        }
    }
    if let Some(keys) = task.key_functions.as_ref().filter(|k| !k.is_empty()) {
        let _ = writeln!(out, "Key functions: {}", keys.join(", "));
    }
    out
}

fn statement_hint(style: SyntaxStyle, nodes: bool) -> &'static str {
    match (style, nodes) {
        (SyntaxStyle::Declarative, true) => "`node <id> = <Type>(<param>=<value>, ...);` statements",
        (SyntaxStyle::Declarative, false) => "`<id>.<OUTPUT> -> <id>.<input>;` statements",
        (SyntaxStyle::Dataflow, true) => "`<id> = <Type>(<param>=<value>, ...);` statements without port arguments",
        (SyntaxStyle::Dataflow, false) => {
            "one `<id> = <Type>(<input> = <id>.<OUTPUT>, ...);` statement per node that has inputs, in execution order"
        }
        (SyntaxStyle::PseudoNatural, true) => "`make <Type> as <id> with <param> <value> and ...` sentences",
        (SyntaxStyle::PseudoNatural, false) => "`feed <id> <OUTPUT> into <id> <input>.` sentences",
    }
}

/// First stage: functions and parameters only.
pub fn components(task: &TaskSpec, r: &Registry, refs: &[&ReferenceEntry]) -> String {
    format!(
        "{}{}\nList the functions this task needs, with their parameters, as {}. \
         Do not write any connections.\n",
        context(task.syntax, r, refs),
        task_block(task),
        statement_hint(task.syntax, true)
    )
}

/// Second stage: connections over a fixed node set.
pub fn topology(task: &TaskSpec, r: &Registry, refs: &[&ReferenceEntry], draft: &str) -> String {
    format!(
        "{}{}\n## Nodes\n```\n{}```\n\nConnect these nodes into a working pipeline using {}. \
         Do not add, remove or rename nodes.\n",
        context(task.syntax, r, refs),
        task_block(task),
        draft,
        statement_hint(task.syntax, false)
    )
}

/// Both stages at once, for the single-stage ablation.
pub fn whole_program(task: &TaskSpec, r: &Registry, refs: &[&ReferenceEntry]) -> String {
    format!(
        "{}{}\nWrite the complete program for this task.\n",
        context(task.syntax, r, refs),
        task_block(task)
    )
}

/// Repair: the previous candidate and what was wrong with it.
pub fn refinement(
    task: &TaskSpec,
    r: &Registry,
    refs: &[&ReferenceEntry],
    candidate: &str,
    diagnostics: &[Diagnostic],
) -> String {
    let mut errors = String::new();
    for d in diagnostics {
        let _ = writeln!(errors, "- {d}");
    }
    format!(
        "{}{}\n## Previous attempt\n```\n{}\n```\n\n## Problems\n{}\nRewrite the complete program so that \
         every problem is fixed.\n",
        context(task.syntax, r, refs),
        task_block(task),
        candidate.trim_end(),
        errors
    )
}

/// The first fenced block of a response, or the whole response when there
/// is none. An unterminated fence runs to the end of the text.
pub fn extract_candidate(response: &str) -> String {
    let Some(open) = response.find("```") else {
        return response.trim().to_string();
    };
    let after = &response[open + 3..];
    // skip the info string (```adl)
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => "",
    };
    let body = match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    };
    body.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction() {
        assert_eq!(extract_candidate("a.X -> b.y;"), "a.X -> b.y;");
        assert_eq!(
            extract_candidate("Sure!\n```adl\nnode a = T();\n```\nmore\n```\nignored\n```"),
            "node a = T();"
        );
        assert_eq!(extract_candidate("```\nx;\n"), "x;");
        assert_eq!(extract_candidate("  \n "), "");
    }
}
