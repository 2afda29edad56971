//! Line-oriented parser for the program text format.
//!
//! ```text
//! alphabet a b
//! -- comment
//! lower := #[Qa] - #[Qb] >= 0
//! out   := lower and not PREV Qb
//! ```

use std::collections::{HashMap, HashSet};

use num_bigint::BigInt;
use num_traits::One;
use thiserror::Error;

use crate::syntax::{only, Cmp, Constraint, Formula, Line, Program, Term};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("{0}")]
    Syntax(String),
    #[error("missing `alphabet` header")]
    MissingAlphabet,
    #[error("program has no lines")]
    NoLines,
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("forward reference: `{0}` does not name an earlier line")]
    ForwardReference(String),
    #[error("line `{0}` is defined twice")]
    DuplicateLine(String),
    #[error("`and` and `or` mixed without parentheses")]
    MixedAndOr,
    #[error("`{0}` is reserved and cannot name a line")]
    ReservedName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(BigInt),
    Hash,
    LBracket,
    RBracket,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Plus,
    Minus,
    Star,
    Assign,
    Cmp(Cmp),
    Comma,
}

const KEYWORDS: &[&str] = &[
    "not", "and", "or", "PREV", "HIST", "if", "then", "else", "true", "false", "alphabet", "only",
];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '$' | '|' | '\'')
}

fn lex(text: &str, line: usize) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |col: usize, msg: String| ParseError {
        line,
        col,
        kind: ParseErrorKind::Syntax(msg),
    };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            break;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push((Tok::Int(s.parse().expect("digits")), col));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, len) = match two.as_str() {
            ":=" => (Tok::Assign, 2),
            ">=" => (Tok::Cmp(Cmp::Ge), 2),
            "<=" => (Tok::Cmp(Cmp::Le), 2),
            _ => match c {
                '#' => (Tok::Hash, 1),
                '[' => (Tok::LBracket, 1),
                ']' => (Tok::RBracket, 1),
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                '{' => (Tok::LBrace, 1),
                '}' => (Tok::RBrace, 1),
                '+' => (Tok::Plus, 1),
                '-' => (Tok::Minus, 1),
                '*' => (Tok::Star, 1),
                ',' => (Tok::Comma, 1),
                '=' => (Tok::Cmp(Cmp::Eq), 1),
                '<' => (Tok::Cmp(Cmp::Lt), 1),
                '>' => (Tok::Cmp(Cmp::Gt), 1),
                other => return Err(err(col, format!("unexpected character `{other}`"))),
            },
        };
        out.push((tok, col));
        i += len;
    }
    Ok(out)
}

struct Ctx<'a> {
    alphabet: &'a [String],
    symbols: HashSet<&'a str>,
    defined: &'a HashSet<String>,
    all_names: &'a HashMap<String, usize>,
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
    ctx: &'a Ctx<'a>,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.end_col)
    }

    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col(),
            kind,
        }
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(self.error(ParseErrorKind::Syntax(msg.into())))
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax(format!("expected `{kw}`"))
        }
    }

    fn formula(&mut self) -> PResult<Formula> {
        let first = self.unary()?;
        let op = if self.is_kw("and") {
            "and"
        } else if self.is_kw("or") {
            "or"
        } else {
            return Ok(first);
        };
        let other = if op == "and" { "or" } else { "and" };
        let mut acc = first;
        while self.is_kw(op) {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if op == "and" {
                Formula::and(acc, rhs)
            } else {
                Formula::or(acc, rhs)
            };
        }
        if self.is_kw(other) {
            return Err(self.error(ParseErrorKind::MixedAndOr));
        }
        Ok(acc)
    }

    fn unary(&mut self) -> PResult<Formula> {
        for (kw, ctor) in [
            ("not", Formula::not as fn(Formula) -> Formula),
            ("PREV", Formula::prev),
            ("HIST", Formula::hist),
        ] {
            if self.is_kw(kw) {
                self.pos += 1;
                return Ok(ctor(self.unary()?));
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Formula> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                let save = self.pos;
                if let Ok(c) = self.constraint() {
                    return Ok(Formula::Lin(c));
                }
                self.pos = save + 1;
                let f = self.formula()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Some(Tok::Int(_)) | Some(Tok::Minus) | Some(Tok::Hash) => {
                Ok(Formula::Lin(self.constraint()?))
            }
            Some(Tok::Ident(s)) => match s.as_str() {
                "if" => Ok(Formula::Lin(self.constraint()?)),
                "true" => {
                    self.pos += 1;
                    Ok(Formula::True)
                }
                "false" => {
                    self.pos += 1;
                    Ok(Formula::False)
                }
                "only" => self.only_macro(),
                _ if KEYWORDS.contains(&s.as_str()) => self.syntax(format!("unexpected `{s}`")),
                _ => {
                    let f = self.name(&s)?;
                    self.pos += 1;
                    Ok(f)
                }
            },
            Some(_) => self.syntax("expected a formula"),
            None => self.syntax("unexpected end of line"),
        }
    }

    fn name(&self, s: &str) -> PResult<Formula> {
        if self.ctx.defined.contains(s) {
            return Ok(Formula::Ref(s.to_string()));
        }
        if let Some(sym) = s.strip_prefix('Q') {
            if self.ctx.symbols.contains(sym) {
                return Ok(Formula::Atom(sym.to_string()));
            }
            if !self.ctx.all_names.contains_key(s) {
                return Err(self.error(ParseErrorKind::UnknownSymbol(sym.to_string())));
            }
        }
        Err(self.error(ParseErrorKind::ForwardReference(s.to_string())))
    }

    fn only_macro(&mut self) -> PResult<Formula> {
        self.pos += 1;
        self.expect(Tok::LBrace, "`{` after `only`")?;
        let mut allowed = Vec::new();
        loop {
            match self.peek().cloned() {
                Some(Tok::RBrace) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::Ident(s)) => {
                    if !self.ctx.symbols.contains(s.as_str()) {
                        return Err(self.error(ParseErrorKind::UnknownSymbol(s)));
                    }
                    allowed.push(s);
                    self.pos += 1;
                }
                _ => return self.syntax("expected a symbol or `}` in `only{...}`"),
            }
        }
        Ok(only(self.ctx.alphabet, &allowed))
    }

    fn constraint(&mut self) -> PResult<Constraint> {
        let terms = self.sum()?;
        let cmp = match self.peek() {
            Some(Tok::Cmp(c)) => *c,
            _ => return self.syntax("expected a comparison"),
        };
        self.pos += 1;
        let bound = self.signed_int()?;
        Ok(Constraint { terms, cmp, bound })
    }

    fn signed_int(&mut self) -> PResult<BigInt> {
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(if neg { -n } else { n })
            }
            _ => self.syntax("expected an integer"),
        }
    }

    fn sum(&mut self) -> PResult<Vec<(BigInt, Term)>> {
        let mut terms = vec![self.summand(false)?];
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    terms.push(self.summand(false)?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    terms.push(self.summand(true)?);
                }
                _ => return Ok(terms),
            }
        }
    }

    fn summand(&mut self, mut neg: bool) -> PResult<(BigInt, Term)> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            neg = !neg;
        }
        let sign = |n: BigInt| if neg { -n } else { n };
        if let Some(Tok::Int(n)) = self.peek().cloned() {
            if self.peek_at(1) == Some(&Tok::Star) {
                self.pos += 2;
                return Ok((sign(n), self.term()?));
            }
            self.pos += 1;
            return Ok((BigInt::one(), Term::Const(sign(n))));
        }
        Ok((sign(BigInt::one()), self.term()?))
    }

    fn term(&mut self) -> PResult<Term> {
        match self.peek().cloned() {
            Some(Tok::Hash) => {
                self.pos += 1;
                if let Some(Tok::Ident(s)) = self.peek().cloned() {
                    if !KEYWORDS.contains(&s.as_str()) {
                        let f = self.name(&s)?;
                        self.pos += 1;
                        return Ok(Term::count(f));
                    }
                }
                self.expect(Tok::LBracket, "`[` after `#`")?;
                let f = self.formula()?;
                self.expect(Tok::RBracket, "`]`")?;
                Ok(Term::count(f))
            }
            Some(Tok::Int(_)) | Some(Tok::Minus) => Ok(Term::Const(self.signed_int()?)),
            Some(Tok::Ident(s)) if s == "if" => {
                self.pos += 1;
                let c = self.formula()?;
                self.expect_kw("then")?;
                let a = self.term()?;
                self.expect_kw("else")?;
                let b = self.term()?;
                Ok(Term::ite(c, a, b))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let t = self.term()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(t)
            }
            _ => self.syntax("expected a term"),
        }
    }
}

/// Parses the program text format.
pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let mut alphabet: Option<Vec<String>> = None;
    let mut raw: Vec<(usize, String, usize, Vec<(Tok, usize)>)> = Vec::new();
    for (idx, text) in src.lines().enumerate() {
        let lineno = idx + 1;
        let toks = lex(text, lineno)?;
        if toks.is_empty() {
            continue;
        }
        match &toks[0].0 {
            Tok::Ident(kw) if kw == "alphabet" && alphabet.is_none() && raw.is_empty() => {
                let mut syms = Vec::new();
                for (t, col) in &toks[1..] {
                    match t {
                        Tok::Ident(s) if !syms.contains(s) => syms.push(s.clone()),
                        Tok::Ident(s) => {
                            return Err(ParseError {
                                line: lineno,
                                col: *col,
                                kind: ParseErrorKind::Syntax(format!("symbol `{s}` listed twice")),
                            })
                        }
                        Tok::Comma => {}
                        _ => {
                            return Err(ParseError {
                                line: lineno,
                                col: *col,
                                kind: ParseErrorKind::Syntax("expected a symbol".into()),
                            })
                        }
                    }
                }
                if syms.is_empty() {
                    return Err(ParseError {
                        line: lineno,
                        col: 1,
                        kind: ParseErrorKind::Syntax("alphabet is empty".into()),
                    });
                }
                alphabet = Some(syms);
            }
            Tok::Ident(name) => {
                if alphabet.is_none() {
                    return Err(ParseError {
                        line: lineno,
                        col: 1,
                        kind: ParseErrorKind::MissingAlphabet,
                    });
                }
                if toks.get(1).map(|t| &t.0) != Some(&Tok::Assign) {
                    return Err(ParseError {
                        line: lineno,
                        col: toks.get(1).map(|t| t.1).unwrap_or(text.len() + 1),
                        kind: ParseErrorKind::Syntax("expected `:=`".into()),
                    });
                }
                raw.push((lineno, name.clone(), toks[0].1, toks[2..].to_vec()));
            }
            _ => {
                return Err(ParseError {
                    line: lineno,
                    col: toks[0].1,
                    kind: ParseErrorKind::Syntax("expected a line name".into()),
                })
            }
        }
    }
    let alphabet = alphabet.ok_or(ParseError {
        line: 1,
        col: 1,
        kind: ParseErrorKind::MissingAlphabet,
    })?;
    if raw.is_empty() {
        return Err(ParseError {
            line: src.lines().count().max(1),
            col: 1,
            kind: ParseErrorKind::NoLines,
        });
    }
    let mut all_names: HashMap<String, usize> = HashMap::new();
    for (lineno, name, col, _) in &raw {
        let reserved = KEYWORDS.contains(&name.as_str())
            || name
                .strip_prefix('Q')
                .is_some_and(|s| alphabet.iter().any(|a| a == s));
        let err = |kind| ParseError {
            line: *lineno,
            col: *col,
            kind,
        };
        if reserved {
            return Err(err(ParseErrorKind::ReservedName(name.clone())));
        }
        if all_names.insert(name.clone(), *lineno).is_some() {
            return Err(err(ParseErrorKind::DuplicateLine(name.clone())));
        }
    }
    let mut defined: HashSet<String> = HashSet::new();
    let mut lines = Vec::new();
    for (lineno, name, _, toks) in raw {
        let end_col = toks.last().map(|t| t.1 + 1).unwrap_or(1);
        let ctx = Ctx {
            alphabet: &alphabet,
            symbols: alphabet.iter().map(|s| s.as_str()).collect(),
            defined: &defined,
            all_names: &all_names,
        };
        let mut p = Parser {
            toks,
            pos: 0,
            line: lineno,
            end_col,
            ctx: &ctx,
        };
        let f = p.formula()?;
        if p.pos != p.toks.len() {
            return p.syntax("unexpected trailing input");
        }
        defined.insert(name.clone());
        lines.push(Line { name, formula: f });
    }
    Ok(Program { alphabet, lines })
}

/// Parses a single formula against an alphabet and a set of known line names.
pub fn parse_formula(
    alphabet: &[String],
    defined: &[String],
    text: &str,
) -> Result<Formula, ParseError> {
    let toks = lex(text, 1)?;
    let defined: HashSet<String> = defined.iter().cloned().collect();
    let all_names: HashMap<String, usize> = defined.iter().map(|n| (n.clone(), 0)).collect();
    let ctx = Ctx {
        alphabet,
        symbols: alphabet.iter().map(|s| s.as_str()).collect(),
        defined: &defined,
        all_names: &all_names,
    };
    let end_col = toks.last().map(|t| t.1 + 1).unwrap_or(1);
    let mut p = Parser {
        toks,
        pos: 0,
        line: 1,
        end_col,
        ctx: &ctx,
    };
    let f = p.formula()?;
    if p.pos != p.toks.len() {
        return p.syntax("unexpected trailing input");
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Program {
        parse_program(src).unwrap()
    }

    fn kind(src: &str) -> ParseErrorKind {
        parse_program(src).unwrap_err().kind
    }

    #[test]
    fn parses_dyck_style_lines() {
        let p = parse(
            "alphabet a b\n-- comment\nlower := #[Qa] - #[Qb] >= 0\nout := lower and not PREV Qb",
        );
        assert_eq!(p.lines.len(), 2);
        assert_eq!(p.lines[0].formula.to_string(), "#[Qa] - #[Qb] >= 0");
        assert_eq!(p.lines[1].formula.to_string(), "lower and not PREV Qb");
    }

    #[test]
    fn parses_conditional_terms() {
        let p = parse("alphabet a b\nout := (if Qa then 1 else 0) + #[Qb] >= 1");
        let Formula::Lin(c) = &p.lines[0].formula else {
            panic!()
        };
        assert!(matches!(c.terms[0].1, Term::Ite(..)));
        assert_eq!(
            p.to_string(),
            "alphabet a b\nout := (if Qa then 1 else 0) + #[Qb] >= 1\n"
        );
    }

    #[test]
    fn parenthesized_formula_and_constraint() {
        let p = parse("alphabet a b\nx := (Qa and Qb) or Qa\ny := (#[Qa] >= 1) and x");
        assert_eq!(p.lines[0].formula.to_string(), "(Qa and Qb) or Qa");
        assert_eq!(p.lines[1].formula.to_string(), "#[Qa] >= 1 and x");
    }

    #[test]
    fn rejects_forward_reference() {
        assert_eq!(
            kind("alphabet a\nout := P1 and Qa"),
            ParseErrorKind::ForwardReference("P1".into())
        );
        assert_eq!(
            kind("alphabet a\nout := later\nlater := Qa"),
            ParseErrorKind::ForwardReference("later".into())
        );
    }

    #[test]
    fn rejects_unknown_symbol_with_position() {
        let e = parse_program("alphabet a b\nout := #[Qc] >= 1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownSymbol("c".into()));
        assert_eq!((e.line, e.col), (2, 10));
    }

    #[test]
    fn rejects_mixed_connectives_and_duplicates() {
        assert_eq!(
            kind("alphabet a b\nout := Qa and Qb or Qa"),
            ParseErrorKind::MixedAndOr
        );
        assert_eq!(
            kind("alphabet a\nx := Qa\nx := Qa"),
            ParseErrorKind::DuplicateLine("x".into())
        );
        assert_eq!(kind("out := Qa"), ParseErrorKind::MissingAlphabet);
    }

    #[test]
    fn coefficient_forms() {
        let p = parse("alphabet a b\nout := 2*#[Qa] - 3*#[Qb] + -1*#[Qa] - 4 + 2*-3 >= -2");
        assert_eq!(
            p.to_string().lines().nth(1).unwrap(),
            "out := 2*#[Qa] - 3*#[Qb] - #[Qa] - 4 + 2*-3 >= -2"
        );
        let again = parse(&p.to_string());
        assert_eq!(again, p);
    }

    #[test]
    fn only_macro_expands() {
        let p = parse("alphabet x x_ $\nout := only{x x_}");
        assert_eq!(p.lines[0].formula.to_string(), "#[Q$] = 0");
    }
}
