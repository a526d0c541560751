//! Prolog-literal-like terms used for ACL content, exchange headers and bodies,
//! and artifact operation parameters.
//!
//! Grammar:
//!
//! ```text
//! term    := number | atom | string | struct | list
//! number  := ['-'] digit+ ['.' digit+]
//! atom    := [a-z][A-Za-z0-9_]* | '\'' chars '\''
//! string  := '"' chars '"'
//! struct  := atom '(' [term (',' term)*] ')'
//! list    := '[' [term (',' term)*] ']'
//! ```
//!
//! Rendering is canonical: no whitespace, shortest number form, atoms quoted
//! only when they are not bare atoms.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone)]
pub enum Term {
    Atom(String),
    /// Finite decimal. Rendered in shortest round-trip form.
    Number(f64),
    Str(String),
    Struct(String, Vec<Term>),
    List(Vec<Term>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at offset {position}: {message}")]
pub struct TermSyntaxError {
    pub position: usize,
    pub message: String,
}

impl Term {
    pub fn atom(name: impl Into<String>) -> Term {
        Term::Atom(name.into())
    }

    pub fn string(text: impl Into<String>) -> Term {
        Term::Str(text.into())
    }

    pub fn number(value: f64) -> Term {
        debug_assert!(value.is_finite(), "terms hold finite numbers only");
        Term::Number(value)
    }

    /// Builds a structure; an empty argument list yields the plain atom.
    pub fn compound(functor: impl Into<String>, args: Vec<Term>) -> Term {
        let functor = functor.into();
        if args.is_empty() {
            Term::Atom(functor)
        } else {
            Term::Struct(functor, args)
        }
    }

    pub fn list(items: Vec<Term>) -> Term {
        Term::List(items)
    }

    /// Text of an atom or string term.
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Term::Atom(s) | Term::Str(s) => Some(s),
            Term::Struct(f, args) if args.is_empty() => Some(f),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Term::Number(n) => Some(*n),
            _ => None,
        }
    }

    /// Functor and arguments of a structure (an atom is a zero-arity structure).
    pub fn as_struct(&self) -> Option<(&str, &[Term])> {
        match self {
            Term::Struct(f, args) => Some((f, args)),
            Term::Atom(a) => Some((a, &[])),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Parses text, falling back to a string term when it is not a valid term.
    pub fn parse_or_string(text: &str) -> Term {
        parse_term(text).unwrap_or_else(|_| Term::Str(text.to_string()))
    }
}

impl PartialEq for Term {
    fn eq(&self, other: &Term) -> bool {
        match (self, other) {
            (Term::Atom(a), Term::Atom(b)) | (Term::Str(a), Term::Str(b)) => a == b,
            (Term::Number(a), Term::Number(b)) => a == b,
            (Term::List(a), Term::List(b)) => a == b,
            (Term::Struct(f, a), Term::Struct(g, b)) => f == g && a == b,
            (Term::Struct(f, a), Term::Atom(b)) | (Term::Atom(b), Term::Struct(f, a)) => {
                a.is_empty() && f == b
            }
            _ => false,
        }
    }
}

impl From<&str> for Term {
    fn from(s: &str) -> Term {
        Term::Str(s.to_string())
    }
}

impl From<f64> for Term {
    fn from(n: f64) -> Term {
        Term::number(n)
    }
}

pub(crate) fn is_bare_atom(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str, quote: char) -> fmt::Result {
    use fmt::Write;
    f.write_char(quote)?;
    for c in s.chars() {
        match c {
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            '\r' => f.write_str("\\r")?,
            c if c == quote => {
                f.write_char('\\')?;
                f.write_char(c)?;
            }
            c => f.write_char(c)?,
        }
    }
    f.write_char(quote)
}

fn write_atom(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    if is_bare_atom(s) {
        f.write_str(s)
    } else {
        write_quoted(f, s, '\'')
    }
}

fn write_seq(f: &mut fmt::Formatter<'_>, items: &[Term]) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(a) => write_atom(f, a),
            Term::Number(n) => write!(f, "{n}"),
            Term::Str(s) => write_quoted(f, s, '"'),
            Term::Struct(functor, args) => {
                write_atom(f, functor)?;
                if !args.is_empty() {
                    f.write_str("(")?;
                    write_seq(f, args)?;
                    f.write_str(")")?;
                }
                Ok(())
            }
            Term::List(items) => {
                f.write_str("[")?;
                write_seq(f, items)?;
                f.write_str("]")
            }
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Term, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_term(&text).map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for Term {
    type Err = TermSyntaxError;

    fn from_str(s: &str) -> Result<Term, TermSyntaxError> {
        parse_term(s)
    }
}

pub fn render_term(term: &Term) -> String {
    term.render()
}

pub fn parse_term(text: &str) -> Result<Term, TermSyntaxError> {
    let mut p = Parser { src: text, pos: 0 };
    p.skip_ws();
    if p.at_end() {
        return Err(p.error("empty input"));
    }
    let term = p.term()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(term)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> TermSyntaxError {
        TermSyntaxError {
            position: self.pos,
            message: message.into(),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn term(&mut self) -> Result<Term, TermSyntaxError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('[') => {
                self.bump();
                let items = self.sequence(']')?;
                Ok(Term::List(items))
            }
            Some('"') => {
                self.bump();
                Ok(Term::Str(self.quoted('"')?))
            }
            Some('\'') => {
                self.bump();
                let name = self.quoted('\'')?;
                self.after_functor(name)
            }
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_lowercase() => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.bump();
                }
                let name = self.src[start..self.pos].to_string();
                self.after_functor(name)
            }
            Some(c) => Err(self.error(format!("unexpected character '{c}'"))),
        }
    }

    fn after_functor(&mut self, name: String) -> Result<Term, TermSyntaxError> {
        // A structure's '(' must follow the functor directly.
        if self.peek() == Some('(') {
            self.bump();
            let args = self.sequence(')')?;
            Ok(Term::compound(name, args))
        } else {
            Ok(Term::Atom(name))
        }
    }

    fn sequence(&mut self, close: char) -> Result<Vec<Term>, TermSyntaxError> {
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(close) {
            self.bump();
            return Ok(items);
        }
        loop {
            items.push(self.term()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {
                    self.bump();
                    return Ok(items);
                }
                Some(c) => {
                    return Err(self.error(format!("expected ',' or '{close}', found '{c}'")))
                }
                None => {
                    return Err(self.error(format!("expected ',' or '{close}', found end of input")))
                }
            }
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        self.pos - start
    }

    fn number(&mut self) -> Result<Term, TermSyntaxError> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.bump();
        }
        if self.digits() == 0 {
            return Err(self.error("expected digit"));
        }
        if self.peek() == Some('.') {
            self.bump();
            if self.digits() == 0 {
                return Err(self.error("expected digit after '.'"));
            }
        }
        let lexeme = &self.src[start..self.pos];
        let value: f64 = lexeme.parse().map_err(|_| TermSyntaxError {
            position: start,
            message: format!("bad number '{lexeme}'"),
        })?;
        if !value.is_finite() {
            return Err(TermSyntaxError {
                position: start,
                message: "number out of range".into(),
            });
        }
        Ok(Term::Number(value))
    }

    fn quoted(&mut self, quote: char) -> Result<String, TermSyntaxError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated quoted text")),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(c @ ('\\' | '\'' | '"')) => out.push(c),
                    Some(c) => return Err(self.error(format!("unknown escape '\\{c}'"))),
                    None => return Err(self.error("unterminated escape")),
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }
}
