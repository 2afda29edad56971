//! Reduction from Diophantine systems over the naturals to program
//! nonemptiness.
//!
//! Each primitive equation (`x = c`, `x + y = z`, `x * y = z`) becomes a
//! regulated program whose accepted words carry a solution in their symbol
//! counts. The per-equation programs are joined into one language of
//! `$`-separated segments, and the shared variables are tied together by
//! requiring equal counts in every segment that mentions them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::syntax::{is_regulated, only, Cmp, Formula, Line, Program, Term};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DiophantineError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(
        "line {line}: negative constant {value}; only solutions over the naturals are supported"
    )]
    NegativeConstant { line: usize, value: BigInt },
    #[error("invalid variable name `{0}`")]
    BadVariable(String),
    #[error("equation `{0}` repeats a variable")]
    NotPrimitive(String),
    #[error("program `{0}` is not regulated")]
    NotRegulated(String),
    #[error("{0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Equation {
    Const(String, BigUint),
    /// `x + y = z`
    Add(String, String, String),
    /// `x * y = z`
    Mul(String, String, String),
}

impl Equation {
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Equation::Const(x, _) => vec![x],
            Equation::Add(x, y, z) | Equation::Mul(x, y, z) => vec![x, y, z],
        }
    }

    fn is_primitive(&self) -> bool {
        let v = self.variables();
        let set: BTreeSet<_> = v.iter().collect();
        set.len() == v.len()
    }

    pub fn holds(&self, value: &impl Fn(&str) -> BigUint) -> bool {
        match self {
            Equation::Const(x, c) => value(x) == *c,
            Equation::Add(x, y, z) => value(x) + value(y) == value(z),
            Equation::Mul(x, y, z) => value(x) * value(y) == value(z),
        }
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Equation::Const(x, c) => write!(f, "{x} = {c}"),
            Equation::Add(x, y, z) => write!(f, "{x} + {y} = {z}"),
            Equation::Mul(x, y, z) => write!(f, "{x} * {y} = {z}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiophantineSystem {
    pub variables: Vec<String>,
    pub equations: Vec<Equation>,
}

impl DiophantineSystem {
    /// Builds a system, collecting variables in order of first use.
    pub fn new(equations: Vec<Equation>) -> Result<DiophantineSystem, DiophantineError> {
        let mut variables: Vec<String> = Vec::new();
        for eq in &equations {
            if !eq.is_primitive() {
                return Err(DiophantineError::NotPrimitive(eq.to_string()));
            }
            for v in eq.variables() {
                check_variable(v)?;
                if !variables.iter().any(|x| x == v) {
                    variables.push(v.to_string());
                }
            }
        }
        Ok(DiophantineSystem {
            variables,
            equations,
        })
    }

    pub fn satisfied_by(&self, values: &BTreeMap<String, BigUint>) -> bool {
        let get = |v: &str| values.get(v).cloned().unwrap_or_default();
        self.equations.iter().all(|e| e.holds(&get))
    }
}

impl fmt::Display for DiophantineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.equations {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

fn check_variable(v: &str) -> Result<(), DiophantineError> {
    let mut chars = v.chars();
    let ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && v.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
        && !v.ends_with('_');
    if ok {
        Ok(())
    } else {
        Err(DiophantineError::BadVariable(v.to_string()))
    }
}

fn underline(v: &str) -> String {
    format!("{v}_")
}

/// Symbols `x`, `x_` per variable, in variable order.
pub fn base_alphabet(vars: &[String]) -> Vec<String> {
    vars.iter()
        .flat_map(|v| [v.clone(), underline(v)])
        .collect()
}

pub const SEPARATOR: &str = "$";

// ---------------------------------------------------------------------------
// Polynomial normalization

/// Monomial: sorted variable multiset.
type Monomial = Vec<String>;
type Poly = BTreeMap<Monomial, BigInt>;

fn parse_poly(text: &str, line: usize) -> Result<Poly, DiophantineError> {
    let err = |msg: String| DiophantineError::Syntax { line, msg };
    let mut poly = Poly::new();
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(err("empty side".into()));
    }
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut cur = String::new();
    let mut neg = false;
    for (i, c) in s.chars().enumerate() {
        if (c == '+' || c == '-') && i > 0 && !cur.ends_with('^') {
            terms.push((neg, std::mem::take(&mut cur)));
            neg = c == '-';
        } else if (c == '+' || c == '-') && i == 0 {
            neg = c == '-';
        } else {
            cur.push(c);
        }
    }
    terms.push((neg, cur));
    for (neg, t) in terms {
        if t.is_empty() {
            return Err(err("missing term".into()));
        }
        let mut coef = BigInt::one();
        let mut mono: Monomial = Vec::new();
        for factor in t.split('*') {
            if factor.is_empty() {
                return Err(err(format!("bad term `{t}`")));
            }
            if factor.chars().all(|c| c.is_ascii_digit()) {
                coef *= factor.parse::<BigInt>().expect("digits");
                continue;
            }
            let (name, exp) = match factor.split_once('^') {
                Some((n, e)) => (
                    n,
                    e.parse::<usize>()
                        .map_err(|_| err(format!("bad exponent in `{factor}`")))?,
                ),
                None => (factor, 1),
            };
            check_variable(name)?;
            for _ in 0..exp {
                mono.push(name.to_string());
            }
        }
        mono.sort();
        let entry = poly.entry(mono).or_insert_with(BigInt::zero);
        if neg {
            *entry -= coef;
        } else {
            *entry += coef;
        }
    }
    poly.retain(|_, c| !c.is_zero());
    Ok(poly)
}

struct Normalizer {
    equations: Vec<Equation>,
    taken: BTreeSet<String>,
    zero: Option<String>,
}

impl Normalizer {
    fn fresh(&mut self, base: &str) -> String {
        let mut n = 1;
        loop {
            let name = format!("{base}{n}");
            if self.taken.insert(name.clone()) {
                return name;
            }
            n += 1;
        }
    }

    fn zero_var(&mut self) -> String {
        if let Some(z) = &self.zero {
            return z.clone();
        }
        let e = self.fresh("e");
        self.equations
            .push(Equation::Const(e.clone(), BigUint::zero()));
        self.zero = Some(e.clone());
        e
    }

    /// `target = source` for two variables.
    fn equate(&mut self, source: &str, target: &str) {
        if source != target {
            let e = self.zero_var();
            self.equations
                .push(Equation::Add(source.into(), e, target.into()));
        }
    }

    /// Emits equations making a variable equal to the product `coef * Π mono`.
    fn monomial(&mut self, coef: &BigUint, mono: &[String], target: Option<&str>) -> String {
        let mut factors: Vec<String> = mono.to_vec();
        if !coef.is_one() {
            let c = self.fresh("c");
            self.equations
                .push(Equation::Const(c.clone(), coef.clone()));
            factors.insert(0, c);
        }
        if factors.len() == 1 {
            let v = factors.remove(0);
            return match target {
                Some(t) => {
                    self.equate(&v, t);
                    t.to_string()
                }
                None => v,
            };
        }
        let mut acc = factors[0].clone();
        for (i, f) in factors.iter().enumerate().skip(1) {
            let out = match target {
                Some(t) if i == factors.len() - 1 => t.to_string(),
                _ => self.fresh("m"),
            };
            self.equations
                .push(Equation::Mul(acc, f.clone(), out.clone()));
            acc = out;
        }
        acc
    }

    /// Reduces a non-negative polynomial to a variable, or to a constant when it has no variables.
    fn side(&mut self, poly: &[(Monomial, BigUint)], target: Option<&str>) -> Side {
        let constant: BigUint = poly
            .iter()
            .filter(|(m, _)| m.is_empty())
            .map(|(_, c)| c.clone())
            .sum();
        let monos: Vec<&(Monomial, BigUint)> = poly.iter().filter(|(m, _)| !m.is_empty()).collect();
        if monos.is_empty() {
            if let Some(t) = target {
                self.equations.push(Equation::Const(t.into(), constant));
                return Side::Var(t.into());
            }
            return Side::Const(constant);
        }
        let mut items = Vec::new();
        let single = monos.len() == 1 && constant.is_zero();
        for (m, c) in &monos {
            items.push(self.monomial(c, m, if single { target } else { None }));
        }
        if single {
            return Side::Var(items.remove(0));
        }
        if !constant.is_zero() {
            let o = self.fresh("o");
            self.equations.push(Equation::Const(o.clone(), constant));
            items.push(o);
        }
        let mut acc = items[0].clone();
        for (i, it) in items.iter().enumerate().skip(1) {
            let out = match target {
                Some(t) if i == items.len() - 1 => t.to_string(),
                _ => self.fresh("s"),
            };
            self.equations
                .push(Equation::Add(acc, it.clone(), out.clone()));
            acc = out;
        }
        Side::Var(acc)
    }

    /// Splits repeated variables: `x * x = s` becomes `x * x1 = s`, `x1 + e = x`, `e = 0`.
    fn split_duplicates(&mut self) {
        let eqs = std::mem::take(&mut self.equations);
        let mut out = Vec::new();
        for eq in eqs {
            if eq.is_primitive() {
                out.push(eq);
                continue;
            }
            let names: Vec<String> = eq.variables().iter().map(|s| s.to_string()).collect();
            let mut seen = BTreeSet::new();
            let mut renamed = Vec::new();
            let mut extra = Vec::new();
            for v in names {
                if seen.insert(v.clone()) {
                    renamed.push(v);
                } else {
                    let v2 = self.fresh(&format!("{v}'"));
                    extra.push((v2.clone(), v));
                    renamed.push(v2);
                }
            }
            out.push(match eq {
                Equation::Add(..) => {
                    Equation::Add(renamed[0].clone(), renamed[1].clone(), renamed[2].clone())
                }
                Equation::Mul(..) => {
                    Equation::Mul(renamed[0].clone(), renamed[1].clone(), renamed[2].clone())
                }
                Equation::Const(..) => unreachable!(),
            });
            for (copy, orig) in extra {
                let e = self.zero_var_in(&mut out);
                out.push(Equation::Add(copy, e, orig));
            }
        }
        self.equations = out;
    }

    fn zero_var_in(&mut self, out: &mut Vec<Equation>) -> String {
        if let Some(z) = &self.zero {
            return z.clone();
        }
        let e = self.fresh("e");
        out.push(Equation::Const(e.clone(), BigUint::zero()));
        self.zero = Some(e.clone());
        e
    }
}

enum Side {
    Var(String),
    Const(BigUint),
}

fn single_var(poly: &[(Monomial, BigUint)]) -> Option<String> {
    match poly {
        [(m, c)] if m.len() == 1 && c.is_one() => Some(m[0].clone()),
        _ => None,
    }
}

/// Normalizes one polynomial equation `lhs = rhs` into primitive equations.
pub fn normalize(lhs: &str, rhs: &str) -> Result<DiophantineSystem, DiophantineError> {
    let mut n = Normalizer {
        equations: Vec::new(),
        taken: BTreeSet::new(),
        zero: None,
    };
    normalize_into(&mut n, lhs, rhs, 1)?;
    n.split_duplicates();
    DiophantineSystem::new(n.equations)
}

fn normalize_into(
    n: &mut Normalizer,
    lhs: &str,
    rhs: &str,
    line: usize,
) -> Result<(), DiophantineError> {
    let l = parse_poly(lhs, line)?;
    let r = parse_poly(rhs, line)?;
    for m in l.keys().chain(r.keys()) {
        n.taken.extend(m.iter().cloned());
    }
    let mut diff = l;
    for (m, c) in r {
        *diff.entry(m).or_insert_with(BigInt::zero) -= c;
    }
    diff.retain(|_, c| !c.is_zero());
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (m, c) in diff {
        if c.is_positive() {
            pos.push((m, c.to_biguint().expect("positive")));
        } else {
            neg.push((m, (-c).to_biguint().expect("positive")));
        }
    }
    if let Some(v) = single_var(&neg) {
        n.side(&pos, Some(&v));
    } else if let Some(v) = single_var(&pos) {
        n.side(&neg, Some(&v));
    } else {
        let a = n.side(&pos, None);
        let b = n.side(&neg, None);
        match (a, b) {
            (Side::Var(x), Side::Var(y)) => n.equate(&x, &y),
            (Side::Var(x), Side::Const(c)) | (Side::Const(c), Side::Var(x)) => {
                n.equations.push(Equation::Const(x, c))
            }
            (Side::Const(c1), Side::Const(c2)) => {
                if c1 != c2 {
                    let u = n.fresh("u");
                    n.equations.push(Equation::Const(u.clone(), c1));
                    n.equations.push(Equation::Const(u, c2));
                }
            }
        }
    }
    Ok(())
}

/// Parses one equation per line: `x = 2`, `x + y = z`, `x * y = z`, or any
/// polynomial equation, which is normalized. Blank lines and `--` comments
/// are skipped.
pub fn parse_system(text: &str) -> Result<DiophantineSystem, DiophantineError> {
    let mut n = Normalizer {
        equations: Vec::new(),
        taken: BTreeSet::new(),
        zero: None,
    };
    let mut pending: Vec<(usize, String, String)> = Vec::new();
    let mut direct: Vec<Equation> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split("--").next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (lhs, rhs) = body.split_once('=').ok_or(DiophantineError::Syntax {
            line,
            msg: "expected `=`".into(),
        })?;
        let (l, r) = (lhs.trim(), rhs.trim());
        for side in [l, r] {
            for tok in side.split(|c: char| "+-*^ ".contains(c)) {
                if !tok.is_empty() && !tok.chars().all(|c| c.is_ascii_digit()) {
                    n.taken
                        .insert(tok.split('^').next().unwrap_or(tok).to_string());
                }
            }
        }
        if let Some(eq) = primitive(l, r, line)? {
            direct.push(eq);
        } else {
            pending.push((line, l.to_string(), r.to_string()));
        }
    }
    n.equations = direct;
    for (line, l, r) in pending {
        normalize_into(&mut n, &l, &r, line)?;
    }
    n.split_duplicates();
    DiophantineSystem::new(n.equations)
}

fn is_name(s: &str) -> bool {
    check_variable(s).is_ok()
}

/// Recognizes the three primitive shapes.
fn primitive(l: &str, r: &str, line: usize) -> Result<Option<Equation>, DiophantineError> {
    if is_name(l) {
        let r2: String = r.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(digits) = r2.strip_prefix('-') {
            if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                return Err(DiophantineError::NegativeConstant {
                    line,
                    value: -digits.parse::<BigInt>().expect("digits"),
                });
            }
        }
        if !r2.is_empty() && r2.chars().all(|c| c.is_ascii_digit()) {
            return Ok(Some(Equation::Const(l.into(), r2.parse().expect("digits"))));
        }
    }
    if !is_name(r) {
        return Ok(None);
    }
    for (op, ctor) in [
        ('+', Equation::Add as fn(String, String, String) -> Equation),
        ('*', Equation::Mul),
    ] {
        if let Some((a, b)) = l.split_once(op) {
            let (a, b) = (a.trim(), b.trim());
            if is_name(a) && is_name(b) {
                return Ok(Some(ctor(a.into(), b.into(), r.into())));
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Encodings

fn count(sym: &str) -> Term {
    Term::count(Formula::atom(sym))
}

fn one() -> BigInt {
    BigInt::one()
}

/// `Σ k_i #[Q s_i] = c`.
fn count_eq(parts: &[(i64, &str)], c: i64) -> Formula {
    Formula::lin(
        parts
            .iter()
            .map(|(k, s)| (BigInt::from(*k), count(s)))
            .collect(),
        Cmp::Eq,
        c,
    )
}

/// Holds at every position so far, written as a count so the result stays regulated.
fn always(f: Formula) -> Formula {
    Formula::count_cmp(Formula::not(f), Cmp::Eq, 0)
}

fn to_strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Regulated program accepting exactly the words that encode `eq`.
///
/// The multiplication encoding accepts `x^n (z^n y z_^n y_)^m`.
pub fn encode_equation(eq: &Equation, alphabet: &[String]) -> Result<Program, DiophantineError> {
    if !eq.is_primitive() {
        return Err(DiophantineError::NotPrimitive(eq.to_string()));
    }
    let body = match eq {
        Equation::Const(x, c) => Formula::and(
            Formula::lin(vec![(one(), count(x))], Cmp::Eq, BigInt::from(c.clone())),
            only(alphabet, &to_strings(&[x])),
        ),
        Equation::Add(x, y, z) => Formula::and(
            count_eq(&[(1, x), (1, y), (-1, z)], 0),
            only(alphabet, &to_strings(&[x, y, z])),
        ),
        Equation::Mul(x, y, z) => {
            let (yu, zu) = (underline(y), underline(z));
            let (yu, zu) = (yu.as_str(), zu.as_str());
            let y_minus_yu = |c: i64| count_eq(&[(1, y), (-1, yu)], c);
            // y and y_ alternate, starting with y, and balance at the end.
            let phi1 = Formula::or(y_minus_yu(0), y_minus_yu(1));
            let phi2 = y_minus_yu(0);
            // x only before any y or z; z only between blocks; z_ only inside one.
            let phi3 = Formula::implies(
                Formula::atom(x.as_str()),
                Formula::and(count_eq(&[(1, y)], 0), count_eq(&[(1, z)], 0)),
            );
            let phi4 = Formula::implies(Formula::atom(z.as_str()), y_minus_yu(0));
            let phi5 = Formula::implies(Formula::atom(zu), y_minus_yu(1));
            // Block sizes: at y the open z-block matches the x-block; at y_ the z_-block closes it.
            let phi7 = Formula::implies(
                Formula::atom(y.as_str()),
                count_eq(&[(1, x), (-1, z), (1, zu)], 0),
            );
            let phi8 = Formula::implies(Formula::atom(yu), count_eq(&[(1, z), (-1, zu)], 0));
            // No z-block may be left open at the end.
            let closed = count_eq(&[(1, z), (-1, zu)], 0);
            Formula::conj([
                always(phi1),
                phi2,
                always(phi3),
                always(phi4),
                always(phi5),
                only(alphabet, &to_strings(&[x, y, z, yu, zu])),
                always(phi7),
                always(phi8),
                closed,
            ])
        }
    };
    let name = match eq {
        Equation::Const(..) => "const",
        Equation::Add(..) => "add",
        Equation::Mul(..) => "mul",
    };
    let p = Program::new(
        alphabet.to_vec(),
        vec![Line {
            name: name.into(),
            formula: body,
        }],
    )
    .expect("encoder output is well-formed");
    debug_assert!(is_regulated(&p));
    Ok(p)
}

fn segment_guard(i: usize) -> Formula {
    Formula::count_cmp(Formula::atom(SEPARATOR), Cmp::Eq, i as i64)
}

fn relativize(f: &Formula, seg: usize) -> Formula {
    match f {
        Formula::Lin(c) => Formula::Lin(crate::syntax::Constraint {
            terms: c
                .terms
                .iter()
                .map(|(k, t)| (k.clone(), relativize_term(t, seg)))
                .collect(),
            cmp: c.cmp,
            bound: c.bound.clone(),
        }),
        other => other.map_children(&mut |g| relativize(g, seg)),
    }
}

fn relativize_term(t: &Term, seg: usize) -> Term {
    match t {
        Term::Count(f) => Term::count(Formula::and(segment_guard(seg), relativize(f, seg))),
        Term::Const(c) => Term::Const(c.clone()),
        Term::Ite(c, a, b) => Term::ite(
            relativize(c, seg),
            relativize_term(a, seg),
            relativize_term(b, seg),
        ),
    }
}

/// Program for `L_0 $ L_1 $ ... $ L_{n-1}`: segment `i` is the stretch where
/// exactly `i` separators have been read, and every count in the `i`-th
/// program is restricted to it.
pub fn concat_with_separators(programs: &[Program]) -> Result<Program, DiophantineError> {
    let alphabet: Vec<String> = match programs.first() {
        Some(p) => p.alphabet.clone(),
        None => Vec::new(),
    };
    let mut full = alphabet.clone();
    full.push(SEPARATOR.into());
    let mut lines = Vec::new();
    let mut accept = Vec::new();
    for (i, p) in programs.iter().enumerate() {
        if !is_regulated(p) {
            return Err(DiophantineError::NotRegulated(p.acceptor().name.clone()));
        }
        if p.alphabet != alphabet || p.alphabet.iter().any(|s| s == SEPARATOR) {
            return Err(DiophantineError::Decode(
                "programs must share an alphabet without `$`".into(),
            ));
        }
        let q = p.namespaced(&format!("s{i}_"));
        for l in q.lines {
            lines.push(Line {
                name: l.name,
                formula: relativize(&l.formula, i),
            });
        }
        accept.push(Formula::reference(
            lines.last().expect("non-empty").name.clone(),
        ));
    }
    lines.push(Line {
        name: "separators".into(),
        formula: segment_guard(programs.len().saturating_sub(1)),
    });
    accept.push(Formula::reference("separators"));
    lines.push(Line {
        name: "segments".into(),
        formula: Formula::conj(accept),
    });
    Program::new(full, lines).map_err(|e| DiophantineError::Decode(e.to_string()))
}

/// Program that is nonempty exactly when the system has a solution over the naturals.
pub fn compile_system(sys: &DiophantineSystem) -> Result<Program, DiophantineError> {
    let alphabet = base_alphabet(&sys.variables);
    let encoders = sys
        .equations
        .iter()
        .map(|e| encode_equation(e, &alphabet))
        .collect::<Result<Vec<_>, _>>()?;
    if encoders.is_empty() {
        let p = Program::new(
            vec![SEPARATOR.into()],
            vec![Line {
                name: "separators".into(),
                formula: segment_guard(0),
            }],
        )
        .expect("well-formed");
        return Ok(p);
    }
    let mut p = concat_with_separators(&encoders)?;
    let seg_acc = p.lines.pop().expect("segments line").formula;
    let mut conj = vec![seg_acc];
    for v in &sys.variables {
        let segs: Vec<usize> = sys
            .equations
            .iter()
            .enumerate()
            .filter(|(_, e)| e.variables().contains(&v.as_str()))
            .map(|(i, _)| i)
            .collect();
        let in_seg =
            |i: usize| Term::count(Formula::and(Formula::atom(v.clone()), segment_guard(i)));
        let eqs: Vec<Formula> = segs
            .windows(2)
            .map(|w| {
                Formula::lin(
                    vec![(one(), in_seg(w[0])), (-one(), in_seg(w[1]))],
                    Cmp::Eq,
                    0,
                )
            })
            .collect();
        if !eqs.is_empty() {
            let name = format!("same_{v}");
            p.lines.push(Line {
                name: name.clone(),
                formula: Formula::conj(eqs),
            });
            conj.push(Formula::reference(name));
        }
    }
    p.lines.push(Line {
        name: "solution".into(),
        formula: Formula::conj(conj),
    });
    p.validate()
        .map_err(|e| DiophantineError::Decode(e.to_string()))?;
    Ok(p)
}

// ---------------------------------------------------------------------------
// Decoding

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodedWitness {
    /// Value of each variable, read from the first segment that mentions it.
    pub values: BTreeMap<String, BigUint>,
    /// Per segment, the count of every variable symbol.
    pub segment_counts: Vec<BTreeMap<String, u64>>,
    /// Every segment agrees on every variable it mentions.
    pub consistent: bool,
    /// Every equation holds under `values`.
    pub satisfies: bool,
}

pub fn decode_witness(
    sys: &DiophantineSystem,
    alphabet: &[String],
    word: &[usize],
) -> Result<DecodedWitness, DiophantineError> {
    let n = sys.equations.len().max(1);
    let mut segs: Vec<BTreeMap<String, u64>> = vec![BTreeMap::new(); 1];
    for &i in word {
        let sym = alphabet
            .get(i)
            .ok_or_else(|| DiophantineError::Decode(format!("symbol index {i} out of range")))?;
        if sym == SEPARATOR {
            segs.push(BTreeMap::new());
        } else {
            *segs
                .last_mut()
                .expect("non-empty")
                .entry(sym.clone())
                .or_default() += 1;
        }
    }
    if segs.len() != n {
        return Err(DiophantineError::Decode(format!(
            "word has {} segments, system has {} equations",
            segs.len(),
            n
        )));
    }
    let mut values = BTreeMap::new();
    let mut consistent = true;
    for (i, eq) in sys.equations.iter().enumerate() {
        for v in eq.variables() {
            let c = BigUint::from(*segs[i].get(v).unwrap_or(&0));
            match values.get(v) {
                None => {
                    values.insert(v.to_string(), c);
                }
                Some(prev) => consistent &= *prev == c,
            }
        }
    }
    let satisfies = sys.satisfied_by(&values);
    Ok(DecodedWitness {
        values,
        segment_counts: segs,
        consistent,
        satisfies,
    })
}

/// Word encoding `values`, one segment per equation; `None` if `values` is not a solution.
pub fn encode_solution(
    sys: &DiophantineSystem,
    values: &BTreeMap<String, u64>,
) -> Option<Vec<String>> {
    let big: BTreeMap<String, BigUint> = values
        .iter()
        .map(|(k, v)| (k.clone(), BigUint::from(*v)))
        .collect();
    if !sys.satisfied_by(&big) {
        return None;
    }
    let get = |v: &str| *values.get(v).unwrap_or(&0) as usize;
    let rep = |s: &str, n: usize| std::iter::repeat_n(s.to_string(), n);
    let mut out = Vec::new();
    for (i, eq) in sys.equations.iter().enumerate() {
        if i > 0 {
            out.push(SEPARATOR.to_string());
        }
        match eq {
            Equation::Const(x, _) => out.extend(rep(x, get(x))),
            Equation::Add(x, y, z) => {
                out.extend(rep(x, get(x)));
                out.extend(rep(y, get(y)));
                out.extend(rep(z, get(z)));
            }
            Equation::Mul(x, y, z) => {
                let (n, m) = (get(x), get(y));
                out.extend(rep(x, n));
                for _ in 0..m {
                    out.extend(rep(z, n));
                    out.push(y.clone());
                    out.extend(rep(&underline(z), n));
                    out.push(underline(y));
                }
            }
        }
    }
    Some(out)
}

/// Length of the word `encode_solution` builds: `c` per constant, `x + y + z`
/// per addition, `n + m(2n + 2)` per multiplication with `x = n`, `y = m`,
/// plus one separator between consecutive segments.
pub fn encoded_length(sys: &DiophantineSystem, values: &BTreeMap<String, u64>) -> u64 {
    let get = |v: &str| *values.get(v).unwrap_or(&0);
    let body: u64 = sys
        .equations
        .iter()
        .map(|eq| match eq {
            Equation::Const(x, _) => get(x),
            Equation::Add(x, y, z) => get(x) + get(y) + get(z),
            Equation::Mul(x, y, _) => get(x) + get(y) * (2 * get(x) + 2),
        })
        .sum();
    body + sys.equations.len().saturating_sub(1) as u64
}

/// Maps variable-name symbols of `sys` to indices in `alphabet`.
pub fn symbol_indices(alphabet: &[String], word: &[String]) -> Option<Vec<usize>> {
    let index: HashMap<&str, usize> = alphabet
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    word.iter()
        .map(|s| index.get(s.as_str()).copied())
        .collect()
}

/// Solutions with every variable at most `max`, by brute force.
pub fn small_solutions(sys: &DiophantineSystem, max: u64) -> Vec<BTreeMap<String, u64>> {
    let k = sys.variables.len();
    let mut out = Vec::new();
    let total = (max + 1).checked_pow(k as u32).unwrap_or(u64::MAX);
    for code in 0..total.min(10_000_000) {
        let mut c = code;
        let mut vals = BTreeMap::new();
        for v in &sys.variables {
            vals.insert(v.clone(), c % (max + 1));
            c /= max + 1;
        }
        let big = vals
            .iter()
            .map(|(k, v)| (k.clone(), BigUint::from(*v)))
            .collect();
        if sys.satisfied_by(&big) {
            out.push(vals);
        }
    }
    out
}

#[allow(dead_code)]
fn to_u64(b: &BigUint) -> u64 {
    b.to_u64().unwrap_or(u64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{accepts, find_witness};
    use crate::word::words_up_to;

    fn sys(text: &str) -> DiophantineSystem {
        parse_system(text).unwrap()
    }

    fn word(alpha: &[String], syms: &[&str]) -> Vec<usize> {
        symbol_indices(alpha, &to_strings(syms)).unwrap()
    }

    #[test]
    fn primitive_lines() {
        let s = sys("x = 2\nx + y = z\nx * y = z");
        assert_eq!(s.equations.len(), 3);
        assert_eq!(s.variables, vec!["x", "y", "z"]);
        assert!(matches!(
            parse_system("x = -2"),
            Err(DiophantineError::NegativeConstant { .. })
        ));
    }

    #[test]
    fn square_is_split() {
        let s = normalize("x^2", "4").unwrap();
        let shown: Vec<String> = s.equations.iter().map(|e| e.to_string()).collect();
        assert_eq!(
            shown,
            vec!["x * x'1 = m1", "e1 = 0", "x'1 + e1 = x", "m1 = 4"]
        );
    }

    #[test]
    fn affine_product_normalizes() {
        let s = normalize("x*y + 1", "z").unwrap();
        let shown: Vec<String> = s.equations.iter().map(|e| e.to_string()).collect();
        assert_eq!(shown, vec!["x * y = m1", "o1 = 1", "m1 + o1 = z"]);
    }

    #[test]
    fn const_encoding_language() {
        let s = sys("x = 2");
        let alpha = base_alphabet(&s.variables);
        let p = encode_equation(&s.equations[0], &alpha).unwrap();
        let acc: Vec<Vec<usize>> = words_up_to(alpha.len(), 4)
            .filter(|w| accepts(&p, w))
            .collect();
        assert_eq!(acc, vec![vec![0, 0]]);
    }

    #[test]
    fn mul_encoding() {
        let s = sys("x * y = z");
        let alpha = base_alphabet(&s.variables);
        let p = encode_equation(&s.equations[0], &alpha).unwrap();
        assert!(is_regulated(&p));
        let vals: BTreeMap<String, u64> = [("x", 2), ("y", 3), ("z", 6)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let w = encode_solution(&s, &vals).unwrap();
        assert_eq!(w.len(), 20);
        assert!(accepts(&p, &symbol_indices(&alpha, &w).unwrap()));
        assert!(!accepts(&p, &word(&alpha, &["z", "y", "z_", "y_"])));
        // A trailing z would overcount z.
        let mut w2 = w.clone();
        w2.push("z".into());
        assert!(!accepts(&p, &symbol_indices(&alpha, &w2).unwrap()));
    }

    #[test]
    fn mul_language_matches_oracle() {
        let s = sys("x * y = z");
        let alpha = base_alphabet(&s.variables);
        let p = encode_equation(&s.equations[0], &alpha).unwrap();
        let sym = |i: usize| alpha[i].as_str();
        let member = |w: &[usize]| -> bool {
            // x^n (z^n y z_^n y_)^m
            let t: Vec<&str> = w.iter().map(|&i| sym(i)).collect();
            let n = t.iter().take_while(|s| **s == "x").count();
            let rest = &t[n..];
            let block = 2 * n + 2;
            if !rest.len().is_multiple_of(block) {
                return false;
            }
            rest.chunks(block).all(|c| {
                c[..n].iter().all(|s| *s == "z")
                    && c[n] == "y"
                    && c[n + 1..2 * n + 1].iter().all(|s| *s == "z_")
                    && c[2 * n + 1] == "y_"
            })
        };
        for w in words_up_to(alpha.len(), 6) {
            assert_eq!(accepts(&p, &w), member(&w), "{:?}", w);
        }
    }

    #[test]
    fn concatenation_of_constants() {
        let s = DiophantineSystem::new(vec![
            Equation::Const("x".into(), 1u32.into()),
            Equation::Const("x".into(), 2u32.into()),
        ])
        .unwrap();
        let alpha = base_alphabet(&s.variables);
        let progs: Vec<Program> = s
            .equations
            .iter()
            .map(|e| encode_equation(e, &alpha).unwrap())
            .collect();
        let c = concat_with_separators(&progs).unwrap();
        let acc: Vec<Vec<usize>> = words_up_to(c.alphabet.len(), 5)
            .filter(|w| accepts(&c, w))
            .collect();
        assert_eq!(acc, vec![word(&c.alphabet, &["x", "$", "x", "x"])]);
    }

    #[test]
    fn small_system_round_trip() {
        let s = sys("x + y = z\nz = 2");
        let p = compile_system(&s).unwrap();
        let r = find_witness(&p, 10, 1);
        let w = r.witness.unwrap();
        let d = decode_witness(&s, &p.alphabet, &w).unwrap();
        assert!(d.consistent && d.satisfies);
        assert_eq!(w.len(), 4 + 1 + 2);
    }
}
