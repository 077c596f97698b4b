//! Pseudo-natural style: a closed set of sentence templates. Each sentence
//! ends with `.` and compiles to node declarations and flows.
//!
//! The generic templates (`make`, `set`, `feed`, `connect`) can express any
//! workflow and are what the printer uses. The remaining verbs are shorthand
//! for the common image pipeline and name their function types and ports
//! directly.

use std::fmt::Write;

use super::cursor::{Cursor, PResult};
use super::lexer::{Tok, Token};
use super::{RawEdge, RawNode, RawProgram, RawSet};
use crate::diagnostic::Span;
use crate::ir::{ParamValue, PortRef, Workflow};

pub const GRAMMAR: &str = "\
program   := sentence*            (every sentence ends with '.')
sentence  := 'make' TYPE 'as' ID [with]
           | 'set' ID PARAM 'to' literal
           | 'feed' ID OUTPUT 'into' ID INPUT
           | 'connect' ID OUTPUT 'to' ID INPUT
           | 'load' 'image' \"path\" 'as' ID [with]      # LoadImage(path)
           | 'load' 'model' \"name\" 'as' ID [with]      # CheckpointLoader(ckpt_name)
           | 'encode' ID 'into' ID [with]                # VAEEncode, ID.IMAGE -> pixels
           | 'decode' ID 'into' ID [with]                # VAEDecode, ID.LATENT -> samples
           | 'blend' ID 'and' ID 'as' ID [with]          # ConditioningBlend, CONDITIONING -> cond_a/cond_b
           | 'sample' ID 'as' ID [with]                  # KSampler, ID.LATENT -> latent
           | 'save' ID 'as' ID [with]                    # SaveOutput, ID.IMAGE -> value
with      := 'with' PARAM literal ('and' PARAM literal)*
literal   := \"string\" | integer | decimal | true | false
comments  := '#' to end of line";

pub(super) fn parse_tokens(toks: &[Token]) -> RawProgram {
    let mut c = Cursor::new(toks);
    let mut prog = RawProgram::default();
    while !c.at_eof() {
        if sentence(&mut c, &mut prog).is_err() {
            c.recover(&Tok::Dot, &[]);
        }
    }
    prog.diagnostics = c.diags;
    prog
}

fn with_clause(c: &mut Cursor<'_>) -> PResult<Vec<(String, ParamValue, Span)>> {
    let mut params = Vec::new();
    if c.is_keyword("with") {
        c.bump();
        loop {
            let (name, start) = c.ident("a parameter name")?;
            let (value, _) = c.literal()?;
            params.push((name, value, c.since(start)));
            if c.is_keyword("and") {
                c.bump();
            } else {
                break;
            }
        }
    }
    Ok(params)
}

struct Shorthand {
    type_name: &'static str,
    /// (source output, destination input) per source operand.
    ports: &'static [(&'static str, &'static str)],
}

const ENCODE: Shorthand = Shorthand {
    type_name: "VAEEncode",
    ports: &[("IMAGE", "pixels")],
};
const DECODE: Shorthand = Shorthand {
    type_name: "VAEDecode",
    ports: &[("LATENT", "samples")],
};
const BLEND: Shorthand = Shorthand {
    type_name: "ConditioningBlend",
    ports: &[("CONDITIONING", "cond_a"), ("CONDITIONING", "cond_b")],
};
const SAMPLE: Shorthand = Shorthand {
    type_name: "KSampler",
    ports: &[("LATENT", "latent")],
};
const SAVE: Shorthand = Shorthand {
    type_name: "SaveOutput",
    ports: &[("IMAGE", "value")],
};

fn sentence(c: &mut Cursor<'_>, prog: &mut RawProgram) -> PResult<()> {
    let start = c.span();
    let (verb, _) = c.ident("a sentence verb")?;
    match verb.as_str() {
        "make" => {
            let (type_name, _) = c.ident("a function type")?;
            c.keyword("as")?;
            let (id, _) = c.ident("a node id")?;
            let params = with_clause(c)?;
            c.expect(Tok::Dot)?;
            prog.nodes.push(RawNode {
                id,
                type_name,
                params,
                span: c.since(start),
            });
        }
        "set" => {
            let (node, _) = c.ident("a node id")?;
            let (param, _) = c.ident("a parameter name")?;
            c.keyword("to")?;
            let (value, _) = c.literal()?;
            c.expect(Tok::Dot)?;
            prog.sets.push(RawSet {
                node,
                param,
                value,
                span: c.since(start),
            });
        }
        "feed" | "connect" => {
            let (src_node, _) = c.ident("a node id")?;
            let (src_port, _) = c.ident("an output port")?;
            c.keyword(if verb == "feed" { "into" } else { "to" })?;
            let (dst_node, _) = c.ident("a node id")?;
            let (dst_port, _) = c.ident("an input port")?;
            c.expect(Tok::Dot)?;
            prog.edges.push(RawEdge {
                src: PortRef::new(src_node, src_port),
                dst: PortRef::new(dst_node, dst_port),
                span: c.since(start),
            });
        }
        "load" => {
            let (what, _) = c.ident("`image` or `model`")?;
            let (type_name, key) = match what.as_str() {
                "image" => ("LoadImage", "path"),
                "model" => ("CheckpointLoader", "ckpt_name"),
                _ => {
                    let span = c.since(start);
                    c.error_at(span, format!("cannot load `{what}`; expected `image` or `model`"));
                    return Err(super::cursor::Reported);
                }
            };
            let vstart = c.span();
            let value = match c.peek() {
                Tok::Str(s) => {
                    let s = s.clone();
                    c.bump();
                    ParamValue::Str(s)
                }
                _ => return c.fail("a quoted path"),
            };
            c.keyword("as")?;
            let (id, _) = c.ident("a node id")?;
            let mut params = vec![(key.to_string(), value, c.since(vstart))];
            params.extend(with_clause(c)?);
            c.expect(Tok::Dot)?;
            prog.nodes.push(RawNode {
                id,
                type_name: type_name.into(),
                params,
                span: c.since(start),
            });
        }
        "encode" | "decode" | "blend" | "sample" | "save" => {
            let form = match verb.as_str() {
                "encode" => &ENCODE,
                "decode" => &DECODE,
                "blend" => &BLEND,
                "sample" => &SAMPLE,
                _ => &SAVE,
            };
            let mut sources = vec![c.ident("a node id")?.0];
            if verb == "blend" {
                c.keyword("and")?;
                sources.push(c.ident("a node id")?.0);
            }
            c.keyword(if matches!(verb.as_str(), "encode" | "decode") {
                "into"
            } else {
                "as"
            })?;
            let (id, _) = c.ident("a node id")?;
            let params = with_clause(c)?;
            c.expect(Tok::Dot)?;
            let span = c.since(start);
            prog.nodes.push(RawNode {
                id: id.clone(),
                type_name: form.type_name.into(),
                params,
                span,
            });
            for (src, (out, inp)) in sources.into_iter().zip(form.ports) {
                prog.edges.push(RawEdge {
                    src: PortRef::new(src, *out),
                    dst: PortRef::new(id.clone(), *inp),
                    span,
                });
            }
        }
        other => {
            let span = c.since(start);
            c.error_at(span, format!("unknown sentence verb `{other}`"));
            return Err(super::cursor::Reported);
        }
    }
    Ok(())
}

/// Expects a canonical workflow; prints only generic templates.
pub(super) fn emit(w: &Workflow) -> String {
    let mut out = String::new();
    for n in w.nodes() {
        let _ = write!(out, "make {} as {}", n.type_name, n.id);
        for (i, (k, v)) in n.params.iter().enumerate() {
            let _ = write!(out, " {} {k} {v}", if i == 0 { "with" } else { "and" });
        }
        out.push_str(".\n");
    }
    for e in w.edges() {
        let _ = writeln!(
            out,
            "feed {} {} into {} {}.",
            e.src.node_id, e.src.port_name, e.dst.node_id, e.dst.port_name
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use crate::diagnostic::ErrorCategory;
    use crate::frontends::{parse, SyntaxStyle};

    #[test]
    fn generic_and_shorthand_agree() {
        let short = parse(
            "load image \"a.png\" as ld. encode ld into enc with mode \"x\".",
            SyntaxStyle::PseudoNatural,
        );
        let long = parse(
            "make LoadImage as ld with path \"a.png\".\nmake VAEEncode as enc.\nset enc mode to \"x\".\nconnect ld IMAGE to enc pixels.",
            SyntaxStyle::PseudoNatural,
        );
        assert!(short.diagnostics.is_empty(), "{:?}", short.diagnostics);
        assert!(long.diagnostics.is_empty(), "{:?}", long.diagnostics);
        assert!(short.workflow.unwrap().canonical_eq(&long.workflow.unwrap()));
    }

    #[test]
    fn blend_wires_both_operands() {
        let out = parse(
            "make T as a. make T as b. blend a and b as mix with ratio 0.25.",
            SyntaxStyle::PseudoNatural,
        );
        let w = out.workflow.unwrap();
        assert_eq!(w.edge_count(), 2);
        assert_eq!(w.node("mix").unwrap().type_name, "ConditioningBlend");
    }

    #[test]
    fn integer_before_terminator() {
        let out = parse("make KSampler as s with steps 20.\n", SyntaxStyle::PseudoNatural);
        assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);
    }

    #[test]
    fn free_text_is_rejected() {
        let out = parse("please make me a picture of a cat.", SyntaxStyle::PseudoNatural);
        assert!(out.workflow.is_none());
        assert_eq!(out.diagnostics[0].category, ErrorCategory::InvalidFormat);
    }

    #[test]
    fn set_on_missing_node() {
        let out = parse("set ghost x to 1.", SyntaxStyle::PseudoNatural);
        assert!(out.workflow.is_none());
    }
}
