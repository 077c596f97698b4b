//! Dataflow style: a sequence of calls where port-valued arguments create
//! flows. Statements must appear in an order where every referenced node is
//! already defined.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::cursor::{Cursor, PResult};
use super::lexer::{Tok, Token};
use super::{FrontendError, RawEdge, RawNode, RawProgram, SyntaxStyle};
use crate::ir::{PortRef, Workflow};

pub const GRAMMAR: &str = "\
program    := statement*
statement  := ID '=' TYPE '(' [arg (',' arg)*] ')' ';'
arg        := PARAM '=' literal          # parameter binding
            | INPUT '=' ID '.' OUTPUT    # data flow from an earlier statement
literal    := \"string\" | integer | decimal | true | false
comments   := '#' to end of line
Every node referenced as ID '.' OUTPUT must be defined by an earlier statement.";

pub(super) fn parse_tokens(toks: &[Token], known: &BTreeSet<String>) -> RawProgram {
    let mut c = Cursor::new(toks);
    let mut prog = RawProgram::default();
    let mut defined = known.clone();
    while !c.at_eof() {
        if statement(&mut c, &mut prog, &mut defined).is_err() {
            c.recover(&Tok::Semi, &[]);
        }
    }
    prog.diagnostics = c.diags;
    prog
}

fn statement(c: &mut Cursor<'_>, prog: &mut RawProgram, defined: &mut BTreeSet<String>) -> PResult<()> {
    let start = c.span();
    let (id, _) = c.ident("a node id")?;
    c.expect(Tok::Eq)?;
    let (type_name, _) = c.ident("a function type")?;
    c.expect(Tok::LParen)?;
    let mut params = Vec::new();
    let mut edges = Vec::new();
    while !c.eat(&Tok::RParen) {
        let (name, astart) = c.ident("an argument name or `)`")?;
        c.expect(Tok::Eq)?;
        let is_port =
            matches!(c.peek(), Tok::Ident(s) if s != "true" && s != "false") && c.peek_at(1) == &Tok::Dot;
        if is_port {
            let (src, _) = c.port_ref()?;
            let span = c.since(astart);
            if defined.contains(&src.node_id) {
                edges.push(RawEdge {
                    src,
                    dst: PortRef::new(id.clone(), name),
                    span,
                });
            } else {
                c.error_at(span, format!("use before definition of `{}`", src.node_id));
            }
        } else {
            let (value, _) = c.literal()?;
            params.push((name, value, c.since(astart)));
        }
        if !c.eat(&Tok::Comma) {
            c.expect(Tok::RParen)?;
            break;
        }
    }
    c.expect(Tok::Semi)?;
    defined.insert(id.clone());
    prog.nodes.push(RawNode {
        id,
        type_name,
        params,
        span: c.since(start),
    });
    prog.edges.extend(edges);
    Ok(())
}

/// Expects a canonical workflow. Statements follow the deterministic
/// topological order; cyclic workflows have no dataflow form.
pub(super) fn emit(w: &Workflow) -> Result<String, FrontendError> {
    let order = w
        .topological_order()
        .map_err(|e| FrontendError::UnrepresentableWorkflow {
            style: SyntaxStyle::Dataflow,
            reason: e.to_string(),
        })?;
    let mut out = String::new();
    for id in order {
        let n = w.node(&id).expect("ordered node exists");
        let mut args: Vec<String> = n.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        for e in w.incoming_flows(&id).expect("node exists") {
            args.push(format!("{}={}", e.dst.port_name, e.src));
        }
        let _ = writeln!(out, "{} = {}({});", n.id, n.type_name, args.join(", "));
    }
    Ok(out)
}
