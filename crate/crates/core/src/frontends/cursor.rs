use super::format_error;
use super::lexer::{Tok, Token};
use crate::diagnostic::{Diagnostic, Span};
use crate::ir::{ParamValue, PortRef};

/// Error already recorded in the cursor's diagnostics.
pub(crate) struct Reported;

pub(crate) type PResult<T> = Result<T, Reported>;

pub(crate) struct Cursor<'t> {
    toks: &'t [Token],
    pos: usize,
    pub diags: Vec<Diagnostic>,
}

impl<'t> Cursor<'t> {
    pub fn new(toks: &'t [Token]) -> Self {
        debug_assert!(matches!(toks.last().map(|t| &t.tok), Some(Tok::Eof)));
        Cursor {
            toks,
            pos: 0,
            diags: Vec::new(),
        }
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    pub fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn bump(&mut self) -> &'t Token {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    /// Span from `start` to the end of the previously consumed token.
    pub fn since(&self, start: Span) -> Span {
        let prev = self.toks[self.pos.saturating_sub(1)].span;
        Span {
            end: prev.end.max(start.start),
            ..start
        }
    }

    pub fn fail<T>(&mut self, expected: &str) -> PResult<T> {
        let found = self.peek().describe();
        let msg = match self.peek() {
            Tok::Invalid(m) => m.clone(),
            _ => format!("expected {expected}, found {found}"),
        };
        self.diags.push(format_error(self.span(), msg));
        Err(Reported)
    }

    pub fn error_at(&mut self, span: Span, msg: impl Into<String>) {
        self.diags.push(format_error(span, msg));
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: Tok) -> PResult<Span> {
        if self.peek() == &tok {
            Ok(self.bump().span)
        } else {
            self.fail(&tok.describe())
        }
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    pub fn keyword(&mut self, kw: &str) -> PResult<Span> {
        if self.is_keyword(kw) {
            Ok(self.bump().span)
        } else {
            self.fail(&format!("`{kw}`"))
        }
    }

    pub fn ident(&mut self, what: &str) -> PResult<(String, Span)> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                Ok((s, self.bump().span))
            }
            _ => self.fail(what),
        }
    }

    pub fn literal(&mut self) -> PResult<(ParamValue, Span)> {
        let v = match self.peek() {
            Tok::Str(s) => ParamValue::Str(s.clone()),
            Tok::Int(i) => ParamValue::Int(*i),
            Tok::Real(r) => ParamValue::Real(*r),
            Tok::Ident(s) if s == "true" => ParamValue::Bool(true),
            Tok::Ident(s) if s == "false" => ParamValue::Bool(false),
            _ => return self.fail("a literal value"),
        };
        Ok((v, self.bump().span))
    }

    /// `<node>.<port>`
    pub fn port_ref(&mut self) -> PResult<(PortRef, Span)> {
        let (node, start) = self.ident("a node id")?;
        self.expect(Tok::Dot)?;
        let (port, _) = self.ident("a port name")?;
        Ok((PortRef::new(node, port), self.since(start)))
    }

    /// Skips past the next `stop` token, or up to (not past) any of `fence`.
    pub fn recover(&mut self, stop: &Tok, fence: &[Tok]) {
        loop {
            let t = self.peek();
            if matches!(t, Tok::Eof) || fence.contains(t) {
                return;
            }
            let hit = t == stop;
            self.bump();
            if hit {
                return;
            }
        }
    }
}
