//! Abstract syntax for counting programs, pretty-printing, complexity
//! measures, and syntactic rewrites.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Cmp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl Cmp {
    pub fn holds<T: PartialOrd>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Eq => lhs == rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Gt => lhs > rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Eq => "=",
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    True,
    False,
    /// `Qσ`: the current symbol is σ.
    Atom(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    /// Strict past: holds at some earlier position.
    Prev(Box<Formula>),
    /// Non-strict past: holds at every position so far.
    Hist(Box<Formula>),
    /// Linear threshold over count terms.
    Lin(Constraint),
    /// Reference to an earlier program line.
    Ref(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constraint {
    pub terms: Vec<(BigInt, Term)>,
    pub cmp: Cmp,
    pub bound: BigInt,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// Number of positions up to the current one where the formula holds.
    Count(Box<Formula>),
    Const(BigInt),
    Ite(Box<Formula>, Box<Term>, Box<Term>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Line {
    pub name: String,
    pub formula: Formula,
}

/// A straight-line program; the last line is the acceptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    pub alphabet: Vec<String>,
    pub lines: Vec<Line>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProgramError {
    #[error("program has no lines")]
    NoLines,
    #[error("alphabet is empty")]
    EmptyAlphabet,
    #[error("alphabet symbol `{0}` is listed twice")]
    DuplicateSymbol(String),
    #[error("line `{0}` is defined twice")]
    DuplicateLine(String),
    #[error("line `{line}` uses unknown symbol `{symbol}`")]
    UnknownSymbol { line: String, symbol: String },
    #[error("line `{line}` refers to `{target}`, which is not an earlier line")]
    ForwardReference { line: String, target: String },
    #[error("line `{0}` has a constraint with no terms")]
    EmptyConstraint(String),
}

impl Formula {
    pub fn atom(s: impl Into<String>) -> Formula {
        Formula::Atom(s.into())
    }
    pub fn reference(s: impl Into<String>) -> Formula {
        Formula::Ref(s.into())
    }
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }
    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }
    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }
    pub fn prev(f: Formula) -> Formula {
        Formula::Prev(Box::new(f))
    }
    pub fn hist(f: Formula) -> Formula {
        Formula::Hist(Box::new(f))
    }
    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::or(Formula::not(a), b)
    }
    pub fn lin(terms: Vec<(BigInt, Term)>, cmp: Cmp, bound: impl Into<BigInt>) -> Formula {
        Formula::Lin(Constraint {
            terms,
            cmp,
            bound: bound.into(),
        })
    }
    /// `#[f] cmp bound`.
    pub fn count_cmp(f: Formula, cmp: Cmp, bound: impl Into<BigInt>) -> Formula {
        Formula::lin(vec![(BigInt::one(), Term::count(f))], cmp, bound)
    }

    /// Left-nested conjunction; `True` when empty.
    pub fn conj(items: impl IntoIterator<Item = Formula>) -> Formula {
        items
            .into_iter()
            .reduce(Formula::and)
            .unwrap_or(Formula::True)
    }

    /// Left-nested disjunction; `False` when empty.
    pub fn disj(items: impl IntoIterator<Item = Formula>) -> Formula {
        items
            .into_iter()
            .reduce(Formula::or)
            .unwrap_or(Formula::False)
    }

    /// Disjunction as a balanced tree, so long lists stay shallow; `False` when empty.
    pub fn disj_balanced(mut items: Vec<Formula>) -> Formula {
        match items.len() {
            0 => Formula::False,
            1 => items.pop().expect("one item"),
            n => {
                let right = items.split_off(n / 2);
                Formula::or(Formula::disj_balanced(items), Formula::disj_balanced(right))
            }
        }
    }

    /// Applies `f` to every immediate sub-formula, including those inside terms.
    pub fn map_children(&self, f: &mut impl FnMut(&Formula) -> Formula) -> Formula {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) | Formula::Ref(_) => self.clone(),
            Formula::Not(a) => Formula::not(f(a)),
            Formula::And(a, b) => Formula::and(f(a), f(b)),
            Formula::Or(a, b) => Formula::or(f(a), f(b)),
            Formula::Prev(a) => Formula::prev(f(a)),
            Formula::Hist(a) => Formula::hist(f(a)),
            Formula::Lin(c) => Formula::Lin(Constraint {
                terms: c
                    .terms
                    .iter()
                    .map(|(k, t)| (k.clone(), t.map_formulas(f)))
                    .collect(),
                cmp: c.cmp,
                bound: c.bound.clone(),
            }),
        }
    }

    /// Visits every sub-formula (pre-order), descending into terms.
    pub fn visit(&self, v: &mut impl FnMut(&Formula)) {
        v(self);
        match self {
            Formula::True | Formula::False | Formula::Atom(_) | Formula::Ref(_) => {}
            Formula::Not(a) | Formula::Prev(a) | Formula::Hist(a) => a.visit(v),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.visit(v);
                b.visit(v);
            }
            Formula::Lin(c) => {
                for (_, t) in &c.terms {
                    t.visit_formulas(v);
                }
            }
        }
    }

    /// Replaces references using `lookup`, recursively.
    pub fn substitute_refs(&self, lookup: &impl Fn(&str) -> Option<Formula>) -> Formula {
        match self {
            Formula::Ref(name) => lookup(name).unwrap_or_else(|| self.clone()),
            _ => self.map_children(&mut |c| c.substitute_refs(lookup)),
        }
    }

    pub fn rename_refs(&self, rename: &impl Fn(&str) -> String) -> Formula {
        match self {
            Formula::Ref(name) => Formula::Ref(rename(name)),
            _ => self.map_children(&mut |c| c.rename_refs(rename)),
        }
    }

    /// Number of `Prev`/`Hist` occurrences, not following references.
    pub fn temporal_occurrences(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |f| {
            if matches!(f, Formula::Prev(_) | Formula::Hist(_)) {
                n += 1;
            }
        });
        n
    }
}

impl Term {
    pub fn count(f: Formula) -> Term {
        Term::Count(Box::new(f))
    }
    pub fn constant(c: impl Into<BigInt>) -> Term {
        Term::Const(c.into())
    }
    pub fn ite(c: Formula, a: Term, b: Term) -> Term {
        Term::Ite(Box::new(c), Box::new(a), Box::new(b))
    }

    pub fn map_formulas(&self, f: &mut impl FnMut(&Formula) -> Formula) -> Term {
        match self {
            Term::Count(a) => Term::count(f(a)),
            Term::Const(c) => Term::Const(c.clone()),
            Term::Ite(c, a, b) => Term::ite(f(c), a.map_formulas(f), b.map_formulas(f)),
        }
    }

    pub fn visit_formulas(&self, v: &mut impl FnMut(&Formula)) {
        match self {
            Term::Count(a) => a.visit(v),
            Term::Const(_) => {}
            Term::Ite(c, a, b) => {
                c.visit(v);
                a.visit_formulas(v);
                b.visit_formulas(v);
            }
        }
    }
}

impl Program {
    /// Builds a program and checks names, symbols and reference order.
    pub fn new(alphabet: Vec<String>, lines: Vec<Line>) -> Result<Program, ProgramError> {
        let p = Program { alphabet, lines };
        p.validate()?;
        Ok(p)
    }

    pub fn from_pairs(
        alphabet: &[&str],
        lines: Vec<(&str, Formula)>,
    ) -> Result<Program, ProgramError> {
        Program::new(
            alphabet.iter().map(|s| s.to_string()).collect(),
            lines
                .into_iter()
                .map(|(n, f)| Line {
                    name: n.to_string(),
                    formula: f,
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.alphabet.is_empty() {
            return Err(ProgramError::EmptyAlphabet);
        }
        if self.lines.is_empty() {
            return Err(ProgramError::NoLines);
        }
        let mut syms = HashSet::new();
        for s in &self.alphabet {
            if !syms.insert(s.as_str()) {
                return Err(ProgramError::DuplicateSymbol(s.clone()));
            }
        }
        let mut defined: HashSet<&str> = HashSet::new();
        for line in &self.lines {
            let mut err = None;
            line.formula.visit(&mut |f| {
                if err.is_some() {
                    return;
                }
                match f {
                    Formula::Atom(s) if !syms.contains(s.as_str()) => {
                        err = Some(ProgramError::UnknownSymbol {
                            line: line.name.clone(),
                            symbol: s.clone(),
                        })
                    }
                    Formula::Ref(r) if !defined.contains(r.as_str()) => {
                        err = Some(ProgramError::ForwardReference {
                            line: line.name.clone(),
                            target: r.clone(),
                        })
                    }
                    Formula::Lin(c) if c.terms.is_empty() => {
                        err = Some(ProgramError::EmptyConstraint(line.name.clone()))
                    }
                    _ => {}
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            if !defined.insert(line.name.as_str()) {
                return Err(ProgramError::DuplicateLine(line.name.clone()));
            }
        }
        Ok(())
    }

    pub fn acceptor(&self) -> &Line {
        self.lines.last().expect("validated program has lines")
    }

    pub fn line_index(&self, name: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.name == name)
    }

    pub fn symbol_index(&self, sym: &str) -> Option<usize> {
        self.alphabet.iter().position(|s| s == sym)
    }

    /// Copies the program with every line name prefixed.
    pub fn namespaced(&self, prefix: &str) -> Program {
        let rename = |n: &str| format!("{prefix}{n}");
        Program {
            alphabet: self.alphabet.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| Line {
                    name: rename(&l.name),
                    formula: l.formula.rename_refs(&rename),
                })
                .collect(),
        }
    }

    /// Indices of lines reachable from the acceptor.
    pub fn reachable_lines(&self) -> Vec<bool> {
        let index: HashMap<&str, usize> = self
            .lines
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        let mut live = vec![false; self.lines.len()];
        if let Some(last) = live.last_mut() {
            *last = true;
        }
        for i in (0..self.lines.len()).rev() {
            if !live[i] {
                continue;
            }
            self.lines[i].formula.visit(&mut |f| {
                if let Formula::Ref(r) = f {
                    if let Some(&j) = index.get(r.as_str()) {
                        live[j] = true;
                    }
                }
            });
        }
        live
    }

    /// Expands every reference in the acceptor, failing beyond `max_nodes` nodes.
    pub fn inline_acceptor(&self, max_nodes: usize) -> Result<Formula, crate::GuardError> {
        self.inline_line(self.lines.len() - 1, max_nodes)
    }

    pub fn inline_line(&self, idx: usize, max_nodes: usize) -> Result<Formula, crate::GuardError> {
        let mut sizes: Vec<usize> = Vec::with_capacity(idx + 1);
        let mut done: Vec<Formula> = Vec::with_capacity(idx + 1);
        let index: HashMap<&str, usize> = self
            .lines
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        for i in 0..=idx {
            let mut size = 0usize;
            self.lines[i].formula.visit(&mut |f| {
                size = size.saturating_add(match f {
                    Formula::Ref(r) => sizes[index[r.as_str()]],
                    _ => 1,
                });
            });
            if size > max_nodes {
                return Err(crate::GuardError::new(
                    format!("inlining line `{}`", self.lines[i].name),
                    size,
                    max_nodes,
                ));
            }
            let f = self.lines[i]
                .formula
                .substitute_refs(&|r| index.get(r).map(|&j| done[j].clone()));
            sizes.push(size);
            done.push(f);
        }
        Ok(done.pop().expect("non-empty"))
    }

    /// Maps every line formula, keeping names.
    pub fn map_lines(&self, mut f: impl FnMut(&Formula) -> Formula) -> Program {
        Program {
            alphabet: self.alphabet.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| Line {
                    name: l.name.clone(),
                    formula: f(&l.formula),
                })
                .collect(),
        }
    }

    pub fn line_names(&self) -> BTreeSet<String> {
        self.lines.iter().map(|l| l.name.clone()).collect()
    }
}

/// Returns `base` or `base_2`, `base_3`, ... so that the name is not in `taken`.
pub fn fresh_name(base: &str, taken: &mut HashSet<String>) -> String {
    let mut name = base.to_string();
    let mut n = 2;
    while taken.contains(&name) {
        name = format!("{base}_{n}");
        n += 1;
    }
    taken.insert(name.clone());
    name
}

/// Program accepting exactly where `p` and `q` disagree. Both must share an alphabet.
pub fn disagreement_program(p: &Program, q: &Program) -> Result<Program, String> {
    if p.alphabet != q.alphabet {
        return Err(format!(
            "alphabets differ: {{{}}} vs {{{}}}",
            p.alphabet.join(" "),
            q.alphabet.join(" ")
        ));
    }
    let left = p.namespaced("l_");
    let right = q.namespaced("r_");
    let a = Formula::reference(left.acceptor().name.clone());
    let b = Formula::reference(right.acceptor().name.clone());
    let mut lines = left.lines;
    lines.extend(right.lines);
    lines.push(Line {
        name: "differ".into(),
        formula: Formula::or(
            Formula::and(a.clone(), Formula::not(b.clone())),
            Formula::and(Formula::not(a), b),
        ),
    });
    Program::new(p.alphabet.clone(), lines).map_err(|e| e.to_string())
}

/// Program accepting exactly the words in `L(p)` but not in `L(q)`. Both must share an alphabet.
pub fn difference_program(p: &Program, q: &Program) -> Result<Program, String> {
    if p.alphabet != q.alphabet {
        return Err(format!(
            "alphabets differ: {{{}}} vs {{{}}}",
            p.alphabet.join(" "),
            q.alphabet.join(" ")
        ));
    }
    let left = p.namespaced("l_");
    let right = q.namespaced("r_");
    let a = Formula::reference(left.acceptor().name.clone());
    let b = Formula::reference(right.acceptor().name.clone());
    let mut lines = left.lines;
    lines.extend(right.lines);
    lines.push(Line {
        name: "only_left".into(),
        formula: Formula::and(a, Formula::not(b)),
    });
    Program::new(p.alphabet.clone(), lines).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Printing

fn needs_parens_under_unary(f: &Formula) -> bool {
    matches!(f, Formula::And(..) | Formula::Or(..))
}

impl fmt::Display for Formula {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(out, "true"),
            Formula::False => write!(out, "false"),
            Formula::Atom(s) => write!(out, "Q{s}"),
            Formula::Ref(s) => write!(out, "{s}"),
            Formula::Not(a) => write_unary(out, "not", a),
            Formula::Prev(a) => write_unary(out, "PREV", a),
            Formula::Hist(a) => write_unary(out, "HIST", a),
            Formula::And(a, b) => write_binary(out, "and", a, b, |f| matches!(f, Formula::Or(..))),
            Formula::Or(a, b) => write_binary(out, "or", a, b, |f| matches!(f, Formula::And(..))),
            Formula::Lin(c) => write!(out, "{c}"),
        }
    }
}

fn write_unary(out: &mut fmt::Formatter<'_>, op: &str, a: &Formula) -> fmt::Result {
    if needs_parens_under_unary(a) {
        write!(out, "{op} ({a})")
    } else {
        write!(out, "{op} {a}")
    }
}

fn write_binary(
    out: &mut fmt::Formatter<'_>,
    op: &str,
    a: &Formula,
    b: &Formula,
    other: impl Fn(&Formula) -> bool,
) -> fmt::Result {
    if other(a) {
        write!(out, "({a})")?;
    } else {
        write!(out, "{a}")?;
    }
    write!(out, " {op} ")?;
    if needs_parens_under_unary(b) {
        write!(out, "({b})")
    } else {
        write!(out, "{b}")
    }
}

impl fmt::Display for Term {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Count(f) => write!(out, "#[{f}]"),
            Term::Const(c) => write!(out, "{c}"),
            Term::Ite(c, a, b) => write!(out, "(if {c} then {a} else {b})"),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, t)) in self.terms.iter().enumerate() {
            let first = i == 0;
            match t {
                Term::Const(c) if k.is_one() => {
                    if first {
                        write!(out, "{c}")?;
                    } else if c.is_negative() {
                        write!(out, " - {}", c.abs())?;
                    } else {
                        write!(out, " + {c}")?;
                    }
                }
                Term::Const(c) => {
                    if first {
                        write!(out, "{k}*{c}")?;
                    } else {
                        write!(out, " + {k}*{c}")?;
                    }
                }
                _ => {
                    let minus_one = -BigInt::one();
                    if k.is_one() {
                        if first {
                            write!(out, "{t}")?;
                        } else {
                            write!(out, " + {t}")?;
                        }
                    } else if *k == minus_one {
                        if first {
                            write!(out, "-{t}")?;
                        } else {
                            write!(out, " - {t}")?;
                        }
                    } else if k.is_negative() {
                        if first {
                            write!(out, "-{}*{t}", k.abs())?;
                        } else {
                            write!(out, " - {}*{t}", k.abs())?;
                        }
                    } else if first {
                        write!(out, "{k}*{t}")?;
                    } else {
                        write!(out, " + {k}*{t}")?;
                    }
                }
            }
        }
        write!(out, " {} {}", self.cmp.symbol(), self.bound)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(out, "alphabet {}", self.alphabet.join(" "))?;
        for l in &self.lines {
            writeln!(out, "{} := {}", l.name, l.formula)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Measures

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub size: u64,
    pub depth: u32,
    pub precision: u32,
    pub girth: u32,
}

/// Bits needed to write an integer, plus one for a minus sign.
fn const_size(c: &BigInt) -> u64 {
    c.bits().max(1) + u64::from(c.is_negative())
}

/// `ceil(log2(m))` for `m >= 1`, and 0 for `m <= 1`.
fn ceil_log2(m: &BigInt) -> u32 {
    if *m <= BigInt::one() {
        0
    } else {
        (m - BigInt::one()).bits() as u32
    }
}

struct Measurer<'a> {
    depth_of_line: HashMap<&'a str, u32>,
    max_const: BigInt,
    girth: u32,
}

impl<'a> Measurer<'a> {
    fn formula(&mut self, f: &Formula) -> (u64, u32) {
        match f {
            Formula::True | Formula::False | Formula::Atom(_) => (1, 0),
            Formula::Ref(r) => (1, *self.depth_of_line.get(r.as_str()).unwrap_or(&0)),
            Formula::Not(a) => {
                let (s, d) = self.formula(a);
                (s + 1, d)
            }
            Formula::Prev(a) | Formula::Hist(a) => {
                let (s, d) = self.formula(a);
                (s + 1, d + 1)
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                let (s1, d1) = self.formula(a);
                let (s2, d2) = self.formula(b);
                (s1 + s2 + 1, d1.max(d2))
            }
            Formula::Lin(c) => {
                self.girth = self.girth.max(c.terms.len() as u32);
                self.note_const(&c.bound);
                let mut size = const_size(&c.bound) + 1 + c.terms.len().saturating_sub(1) as u64;
                let mut depth = 0;
                for (k, t) in &c.terms {
                    self.note_const(k);
                    let (s, d) = self.term(t);
                    size += const_size(k) + s;
                    depth = depth.max(d);
                }
                (size, depth)
            }
        }
    }

    fn term(&mut self, t: &Term) -> (u64, u32) {
        match t {
            Term::Count(f) => {
                let (s, d) = self.formula(f);
                (s + 1, d + 1)
            }
            Term::Const(c) => {
                self.note_const(c);
                (const_size(c), 0)
            }
            Term::Ite(c, a, b) => {
                let (s0, d0) = self.formula(c);
                let (s1, d1) = self.term(a);
                let (s2, d2) = self.term(b);
                (s0 + s1 + s2 + 1, d0.max(d1).max(d2))
            }
        }
    }

    fn note_const(&mut self, c: &BigInt) {
        let a = c.abs();
        if a > self.max_const {
            self.max_const = a;
        }
    }
}

/// Size, counting depth, precision and girth of a program.
///
/// Precision is `ceil(log2(max |c|))` over every constant, coefficient and
/// bound; depth follows references; girth is the longest linear sum.
pub fn measure(p: &Program) -> ComplexityReport {
    let mut m = Measurer {
        depth_of_line: HashMap::new(),
        max_const: BigInt::zero(),
        girth: 0,
    };
    let mut size = 0;
    let mut depth = 0;
    for line in &p.lines {
        let (s, d) = m.formula(&line.formula);
        size += s;
        depth = d;
        m.depth_of_line.insert(line.name.as_str(), d);
    }
    ComplexityReport {
        size,
        depth,
        precision: ceil_log2(&m.max_const),
        girth: m.girth,
    }
}

/// Counting depth of a single formula whose references resolve through `line_depth`.
pub fn formula_depth(f: &Formula, line_depth: &HashMap<String, u32>) -> u32 {
    let mut m = Measurer {
        depth_of_line: line_depth.iter().map(|(k, v)| (k.as_str(), *v)).collect(),
        max_const: BigInt::zero(),
        girth: 0,
    };
    m.formula(f).1
}

/// Depth of every line, by name.
pub fn line_depths(p: &Program) -> HashMap<String, u32> {
    let mut depths: HashMap<String, u32> = HashMap::new();
    for line in &p.lines {
        let d = formula_depth(&line.formula, &depths);
        depths.insert(line.name.clone(), d);
    }
    depths
}

// ---------------------------------------------------------------------------
// Sugar and rewrites

/// `only{A}`: every position so far carries a symbol from `allowed`.
pub fn only(alphabet: &[String], allowed: &[String]) -> Formula {
    let others: Vec<Formula> = alphabet
        .iter()
        .filter(|s| !allowed.contains(s))
        .map(|s| Formula::Atom(s.clone()))
        .collect();
    if others.is_empty() {
        return Formula::count_cmp(Formula::True, Cmp::Ge, 0);
    }
    Formula::count_cmp(Formula::disj(others), Cmp::Eq, 0)
}

/// Rewrites strict-past and history operators into counting constraints.
pub fn desugar_temporal_formula(f: &Formula) -> Formula {
    let inner = f.map_children(&mut desugar_temporal_formula);
    match inner {
        Formula::Prev(a) => {
            let a = *a;
            Formula::or(
                Formula::count_cmp(a.clone(), Cmp::Ge, 2),
                Formula::and(Formula::not(a.clone()), Formula::count_cmp(a, Cmp::Ge, 1)),
            )
        }
        Formula::Hist(a) => Formula::count_cmp(Formula::not(*a), Cmp::Eq, 0),
        other => other,
    }
}

pub fn desugar_temporal(p: &Program) -> Program {
    p.map_lines(desugar_temporal_formula)
}

/// Removes conditional terms by case-splitting each constraint on its conditions.
pub fn eliminate_conditionals_formula(f: &Formula) -> Formula {
    let inner = f.map_children(&mut eliminate_conditionals_formula);
    match inner {
        Formula::Lin(c) => split_conditionals(c),
        other => other,
    }
}

fn split_conditionals(c: Constraint) -> Formula {
    let pos = c.terms.iter().position(|(_, t)| matches!(t, Term::Ite(..)));
    let Some(i) = pos else {
        return Formula::Lin(c);
    };
    let Term::Ite(cond, then_t, else_t) = c.terms[i].1.clone() else {
        unreachable!()
    };
    let mut with_then = c.clone();
    with_then.terms[i].1 = *then_t;
    let mut with_else = c;
    with_else.terms[i].1 = *else_t;
    Formula::or(
        Formula::and((*cond).clone(), split_conditionals(with_then)),
        Formula::and(Formula::not(*cond), split_conditionals(with_else)),
    )
}

pub fn eliminate_conditionals(p: &Program) -> Program {
    p.map_lines(eliminate_conditionals_formula)
}

/// True when no symbol test occurs outside a counting term in the inlined acceptor.
pub fn is_regulated(p: &Program) -> bool {
    let mut bare: HashMap<&str, bool> = HashMap::new();
    for line in &p.lines {
        let b = has_bare_atom(&line.formula, &bare);
        bare.insert(line.name.as_str(), b);
    }
    !bare[p.acceptor().name.as_str()]
}

fn has_bare_atom(f: &Formula, bare: &HashMap<&str, bool>) -> bool {
    match f {
        Formula::Atom(_) => true,
        Formula::True | Formula::False => false,
        Formula::Ref(r) => *bare.get(r.as_str()).unwrap_or(&false),
        Formula::Not(a) | Formula::Prev(a) | Formula::Hist(a) => has_bare_atom(a, bare),
        Formula::And(a, b) | Formula::Or(a, b) => has_bare_atom(a, bare) || has_bare_atom(b, bare),
        Formula::Lin(c) => c.terms.iter().any(|(_, t)| term_has_bare_atom(t, bare)),
    }
}

fn term_has_bare_atom(t: &Term, bare: &HashMap<&str, bool>) -> bool {
    match t {
        Term::Count(_) | Term::Const(_) => false,
        Term::Ite(c, a, b) => {
            has_bare_atom(c, bare) || term_has_bare_atom(a, bare) || term_has_bare_atom(b, bare)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse_program;

    fn m(src: &str) -> ComplexityReport {
        measure(&parse_program(src).unwrap())
    }

    #[test]
    fn precision_examples() {
        assert_eq!(m("alphabet a\nout := #[Qa] = 5").precision, 3);
        assert_eq!(m("alphabet a\nout := #[Qa] >= 4").precision, 2);
        assert_eq!(m("alphabet a\nout := #[Qa] >= 1").precision, 0);
        assert_eq!(m("alphabet a\nout := #[Qa] >= 0").precision, 0);
        assert_eq!(m("alphabet a\nout := #[Qa] >= 2").precision, 1);
        assert_eq!(m("alphabet a\nout := -3*#[Qa] >= 0").precision, 2);
    }

    #[test]
    fn single_atom_measures() {
        let r = m("alphabet a\nout := Qa");
        assert_eq!(r.depth, 0);
        assert_eq!(r.girth, 0);
        assert_eq!(r.precision, 0);
        assert!(r.size >= 1);
    }

    #[test]
    fn depth_follows_references() {
        let r = m("alphabet a b\nx := #[Qa] >= 1\ny := #[x and Qb] >= 2\nout := PREV y");
        assert_eq!(r.depth, 3);
        assert_eq!(r.girth, 1);
    }

    #[test]
    fn desugar_preserves_depth() {
        let p = parse_program("alphabet a b\nout := PREV Qa and HIST (Qa or Qb)").unwrap();
        let q = desugar_temporal(&p);
        assert_eq!(measure(&p).depth, measure(&q).depth);
        assert_eq!(q.acceptor().formula.temporal_occurrences(), 0);
    }

    #[test]
    fn only_macro_shape() {
        let sigma: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let f = only(&sigma, &["a".to_string()]);
        assert_eq!(f.to_string(), "#[Qb or Qc] = 0");
    }

    #[test]
    fn regulated_detection() {
        let p = parse_program("alphabet a b\nout := #[Qa] >= 1 and #[Qb] = 0").unwrap();
        assert!(is_regulated(&p));
        let q = parse_program("alphabet a b\nx := Qa\nout := #[x] >= 1 and x").unwrap();
        assert!(!is_regulated(&q));
    }

    #[test]
    fn conditional_split_shape() {
        let p = parse_program("alphabet a b\nout := (if Qa then 1 else 0) + #[Qb] >= 1").unwrap();
        let q = eliminate_conditionals(&p);
        assert_eq!(
            q.acceptor().formula.to_string(),
            "(Qa and 1 + #[Qb] >= 1) or (not Qa and 0 + #[Qb] >= 1)"
        );
    }
}
