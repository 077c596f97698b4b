//! Declarative style: node declarations, then connections.
//!
//! ```text
//! workflow {
//!   node ld = LoadImage(path="a.png");
//!   node enc = VAEEncode();
//!   ld.IMAGE -> enc.pixels;
//! }
//! ```

use std::fmt::Write;

use super::cursor::{Cursor, PResult};
use super::lexer::{Tok, Token};
use super::{RawEdge, RawNode, RawProgram};
use crate::ir::Workflow;

pub const GRAMMAR: &str = "\
program    := 'workflow' '{' statement* '}'
statement  := 'node' ID '=' TYPE '(' [ID '=' literal (',' ID '=' literal)*] ')' ';'
            | ID '.' OUTPUT '->' ID '.' INPUT ';'
literal    := \"string\" | integer | decimal | true | false
comments   := '#' to end of line";

pub(super) fn parse_tokens(toks: &[Token], fragment: bool) -> RawProgram {
    let mut c = Cursor::new(toks);
    let mut prog = RawProgram::default();
    let wrapped = !fragment || c.is_keyword("workflow");
    if wrapped && (c.keyword("workflow").is_err() || c.expect(Tok::LBrace).is_err()) {
        prog.diagnostics = c.diags;
        return prog;
    }
    let fence: &[Tok] = if wrapped { &[Tok::RBrace] } else { &[] };
    loop {
        match c.peek() {
            Tok::RBrace if wrapped => {
                c.bump();
                break;
            }
            Tok::Eof => {
                if wrapped {
                    let _ = c.fail::<()>("`}`");
                }
                break;
            }
            _ => {
                if statement(&mut c, &mut prog).is_err() {
                    c.recover(&Tok::Semi, fence);
                }
            }
        }
    }
    if wrapped && !c.at_eof() {
        let _ = c.fail::<()>("end of input");
    }
    prog.diagnostics = c.diags;
    prog
}

fn statement(c: &mut Cursor<'_>, prog: &mut RawProgram) -> PResult<()> {
    let start = c.span();
    if c.is_keyword("node") && matches!(c.peek_at(1), Tok::Ident(_)) {
        c.bump();
        let (id, _) = c.ident("a node id")?;
        c.expect(Tok::Eq)?;
        let (type_name, _) = c.ident("a function type")?;
        c.expect(Tok::LParen)?;
        let mut params = Vec::new();
        while !c.eat(&Tok::RParen) {
            let (name, pstart) = c.ident("a parameter name or `)`")?;
            c.expect(Tok::Eq)?;
            let (value, _) = c.literal()?;
            params.push((name, value, c.since(pstart)));
            if !c.eat(&Tok::Comma) {
                c.expect(Tok::RParen)?;
                break;
            }
        }
        c.expect(Tok::Semi)?;
        prog.nodes.push(RawNode {
            id,
            type_name,
            params,
            span: c.since(start),
        });
    } else if c.is_keyword("node") {
        c.bump();
        return c.fail("a node id");
    } else {
        let (src, _) = c.port_ref()?;
        c.expect(Tok::Arrow)?;
        let (dst, _) = c.port_ref()?;
        c.expect(Tok::Semi)?;
        prog.edges.push(RawEdge {
            src,
            dst,
            span: c.since(start),
        });
    }
    Ok(())
}

/// Expects a canonical workflow.
pub(super) fn emit(w: &Workflow) -> String {
    if w.node_count() == 0 && w.edge_count() == 0 {
        return "workflow { }\n".to_string();
    }
    let mut out = String::from("workflow {\n");
    for n in w.nodes() {
        let args = n
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(out, "  node {} = {}({args});", n.id, n.type_name);
    }
    for e in w.edges() {
        let _ = writeln!(out, "  {} -> {};", e.src, e.dst);
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use crate::frontends::{parse, parse_raw, SyntaxStyle};
    use std::collections::BTreeSet;

    #[test]
    fn comments_and_layout_do_not_matter() {
        let a = parse(
            "workflow {\n  # loader\n  node a = T(x=1, y=\"s\",);\n  node b = U();\n  a.O -> b.i; # edge\n}\n",
            SyntaxStyle::Declarative,
        );
        let b = parse(
            "workflow{node a=T(y=\"s\",x=1);node b=U();a.O->b.i;}",
            SyntaxStyle::Declarative,
        );
        assert!(a.diagnostics.is_empty(), "{:?}", a.diagnostics);
        assert_eq!(a.workflow.unwrap().to_json(), b.workflow.unwrap().to_json());
    }

    #[test]
    fn recovers_per_statement() {
        let out = parse(
            "workflow {\n node a = T(x=);\n node b = U();\n b.O -> ;\n}",
            SyntaxStyle::Declarative,
        );
        assert_eq!(out.diagnostics.len(), 2, "{:?}", out.diagnostics);
        assert!(out.workflow.is_none());
    }

    #[test]
    fn fragment_mode_accepts_bare_statements() {
        let raw = parse_raw(
            "a.O -> b.i;\nb.O -> c.i;",
            SyntaxStyle::Declarative,
            true,
            &BTreeSet::new(),
        );
        assert!(raw.diagnostics.is_empty());
        assert_eq!(raw.edges.len(), 2);
        let raw = parse_raw("a.O -> b.i;", SyntaxStyle::Declarative, false, &BTreeSet::new());
        assert!(!raw.diagnostics.is_empty());
    }

    #[test]
    fn missing_closing_brace() {
        let out = parse("workflow { node a = T();", SyntaxStyle::Declarative);
        assert!(out.workflow.is_none());
    }
}
