//! Past-time temporal logic: programs without counting terms, a small-model
//! bound, bounded emptiness and equivalence checks, and an exhaustive
//! validation of the bound over a generated formula corpus.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::guard::{Guard, GuardError};
use crate::positive::{compile_to_tl, PositiveProgram};
use crate::semantics::{accepts, find_witness};
use crate::syntax::{disagreement_program, Formula, Program};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TlError {
    #[error("line `{0}` uses a counting constraint, which is not temporal logic")]
    HasCounting(String),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Guard(#[from] GuardError),
}

/// A program built only from symbol tests, boolean connectives, `PREV` and `HIST`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlProgram(Program);

impl TlProgram {
    pub fn new(p: Program) -> Result<TlProgram, TlError> {
        for line in &p.lines {
            let mut counting = false;
            line.formula
                .visit(&mut |f| counting |= matches!(f, Formula::Lin(_)));
            if counting {
                return Err(TlError::HasCounting(line.name.clone()));
            }
        }
        Ok(TlProgram(p))
    }

    pub fn program(&self) -> &Program {
        &self.0
    }
}

pub fn tl_evaluate(f: &TlProgram, word: &[usize]) -> bool {
    accepts(f.program(), word)
}

/// Temporal operator occurrences over the distinct lines reachable from the
/// acceptor. Lines whose bodies coincide after resolving references are
/// counted once; operators inside one body are counted per occurrence.
pub fn temporal_subformula_count(p: &Program) -> usize {
    let mut canon_of_key: HashMap<String, usize> = HashMap::new();
    let mut canon_of_line: HashMap<&str, usize> = HashMap::new();
    let mut occurrences: Vec<usize> = Vec::new();
    let mut deps: Vec<Vec<usize>> = Vec::new();
    for line in &p.lines {
        let body = line
            .formula
            .rename_refs(&|r| format!("@{}", canon_of_line[r]));
        let key = body.to_string();
        let id = match canon_of_key.get(&key) {
            Some(&id) => id,
            None => {
                let id = occurrences.len();
                occurrences.push(body.temporal_occurrences());
                let mut d = Vec::new();
                line.formula.visit(&mut |f| {
                    if let Formula::Ref(r) = f {
                        d.push(canon_of_line[r.as_str()]);
                    }
                });
                deps.push(d);
                canon_of_key.insert(key, id);
                id
            }
        };
        canon_of_line.insert(line.name.as_str(), id);
    }
    let root = canon_of_line[p.acceptor().name.as_str()];
    let mut live = vec![false; occurrences.len()];
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        if !std::mem::replace(&mut live[i], true) {
            stack.extend(deps[i].iter().copied());
        }
    }
    (0..occurrences.len())
        .filter(|&i| live[i])
        .map(|i| occurrences[i])
        .sum()
}

/// One more than the number of temporal subformulas: a non-empty formula has
/// a witness no longer than this.
pub fn small_model_bound(f: &TlProgram) -> usize {
    temporal_subformula_count(f.program()) + 1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmptinessCertificate {
    pub empty: bool,
    pub witness: Option<Vec<usize>>,
    pub search_bound: usize,
    pub temporal_subformula_count: usize,
}

/// Decides emptiness by searching every word up to the small-model bound.
pub fn check_emptiness(f: &TlProgram, jobs: usize) -> EmptinessCertificate {
    let t = temporal_subformula_count(f.program());
    let bound = t + 1;
    let r = find_witness(f.program(), bound, jobs);
    EmptinessCertificate {
        empty: r.witness.is_none(),
        witness: r.witness,
        search_bound: bound,
        temporal_subformula_count: t,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceCertificate {
    pub equivalent: bool,
    /// Shortest, then lexicographically least, word on which the two disagree.
    pub witness: Option<Vec<usize>>,
    pub search_bound: usize,
}

/// Compiles both programs to temporal logic and checks their symmetric difference for emptiness.
pub fn distinguishing_string(
    p: &PositiveProgram,
    q: &PositiveProgram,
    guard: &Guard,
    jobs: usize,
) -> Result<EquivalenceCertificate, TlError> {
    let a = compile_to_tl(p, guard)?;
    let b = compile_to_tl(q, guard)?;
    let d = disagreement_program(a.program(), b.program()).map_err(TlError::Mismatch)?;
    let cert = check_emptiness(&TlProgram::new(d)?, jobs);
    Ok(EquivalenceCertificate {
        equivalent: cert.empty,
        witness: cert.witness,
        search_bound: cert.search_bound,
    })
}

// ---------------------------------------------------------------------------
// Bound validation

#[derive(Debug, Clone, Copy)]
enum Op {
    Atom(usize),
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    Prev(usize),
    Hist(usize),
}

/// Post-order flattening of an inline temporal formula over symbol indices.
fn flatten(f: &Formula, symbols: &[String], ops: &mut Vec<Op>) -> usize {
    let op = match f {
        Formula::Atom(s) => Op::Atom(symbols.iter().position(|x| x == s).expect("known symbol")),
        Formula::Not(a) => Op::Not(flatten(a, symbols, ops)),
        Formula::And(a, b) => {
            let a = flatten(a, symbols, ops);
            Op::And(a, flatten(b, symbols, ops))
        }
        Formula::Or(a, b) => {
            let a = flatten(a, symbols, ops);
            Op::Or(a, flatten(b, symbols, ops))
        }
        Formula::Prev(a) => Op::Prev(flatten(a, symbols, ops)),
        Formula::Hist(a) => Op::Hist(flatten(a, symbols, ops)),
        other => panic!("corpus formula contains `{other}`"),
    };
    ops.push(op);
    ops.len() - 1
}

/// Length of the shortest accepted word up to `max_len`, by enumerating every word.
fn brute_shortest(ops: &[Op], k: usize, max_len: usize) -> Option<usize> {
    // Per word: "some earlier position satisfied" and "all positions so far satisfied" per node.
    let n = ops.len();
    let mut layer: Vec<(Vec<bool>, Vec<bool>)> = vec![(vec![false; n], vec![true; n])];
    for len in 1..=max_len {
        let mut next = Vec::with_capacity(layer.len() * k);
        let mut hit = false;
        for (seen, all) in &layer {
            for sym in 0..k {
                let mut v = vec![false; n];
                for (i, op) in ops.iter().enumerate() {
                    v[i] = match *op {
                        Op::Atom(s) => s == sym,
                        Op::Not(a) => !v[a],
                        Op::And(a, b) => v[a] && v[b],
                        Op::Or(a, b) => v[a] || v[b],
                        Op::Prev(a) => seen[a],
                        Op::Hist(a) => all[a] && v[a],
                    };
                }
                hit |= v[n - 1];
                if len < max_len {
                    let s2: Vec<bool> = (0..n).map(|i| seen[i] || v[i]).collect();
                    let a2: Vec<bool> = (0..n).map(|i| all[i] && v[i]).collect();
                    next.push((s2, a2));
                }
            }
        }
        if hit {
            return Some(len);
        }
        layer = next;
    }
    None
}

/// Every formula over `k` symbols with at most `max_temporal` temporal
/// operators and at most `max_size` nodes, up to commutativity and double
/// negation, in a fixed order.
pub fn bound_corpus(symbols: &[String], max_temporal: usize, max_size: usize) -> Vec<Formula> {
    let mut by_size: Vec<Vec<(Formula, usize)>> = vec![Vec::new()];
    by_size.push(
        symbols
            .iter()
            .map(|s| (Formula::atom(s.clone()), 0))
            .collect(),
    );
    for n in 2..=max_size {
        let mut cur = Vec::new();
        for (f, t) in &by_size[n - 1] {
            if !matches!(f, Formula::Not(_)) {
                cur.push((Formula::not(f.clone()), *t));
            }
            if *t < max_temporal {
                cur.push((Formula::prev(f.clone()), t + 1));
                cur.push((Formula::hist(f.clone()), t + 1));
            }
        }
        for i in 1..n - 1 {
            let j = n - 1 - i;
            if i > j {
                break;
            }
            for (ai, (a, ta)) in by_size[i].iter().enumerate() {
                for (bi, (b, tb)) in by_size[j].iter().enumerate() {
                    if (i == j && bi <= ai) || ta + tb > max_temporal {
                        continue;
                    }
                    cur.push((Formula::and(a.clone(), b.clone()), ta + tb));
                    cur.push((Formula::or(a.clone(), b.clone()), ta + tb));
                }
            }
        }
        by_size.push(cur);
    }
    by_size.into_iter().flatten().map(|(f, _)| f).collect()
}

/// Largest formula size whose corpus stays within `limit` formulas.
fn corpus_size_for(symbols: &[String], max_temporal: usize, limit: usize) -> usize {
    let mut size = 1;
    while size < 64 && bound_corpus(symbols, max_temporal, size + 1).len() <= limit {
        size += 1;
    }
    size
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundViolation {
    pub formula: String,
    pub bound: usize,
    pub shortest_witness_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundValidationReport {
    pub alphabet_size: usize,
    pub max_temporal: usize,
    pub max_formula_size: usize,
    pub formulas_checked: usize,
    pub nonempty: usize,
    /// Largest shortest-witness length seen, minus the bound (non-positive when sound).
    pub max_slack: i64,
    pub violations: Vec<BoundViolation>,
}

/// Default cap on the generated corpus.
pub const CORPUS_LIMIT: usize = 150_000;

/// Checks the small-model bound on every corpus formula by enumerating all
/// words up to three past the bound with an evaluator independent of the
/// compiled engine.
pub fn validate_bound(alphabet_size: usize, max_temporal: usize) -> BoundValidationReport {
    validate_bound_with_limit(alphabet_size, max_temporal, CORPUS_LIMIT)
}

pub fn validate_bound_with_limit(
    alphabet_size: usize,
    max_temporal: usize,
    limit: usize,
) -> BoundValidationReport {
    let symbols: Vec<String> = (0..alphabet_size)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .collect();
    let size = corpus_size_for(&symbols, max_temporal, limit);
    let corpus = bound_corpus(&symbols, max_temporal, size);
    let results: Vec<(usize, Option<usize>)> = corpus
        .par_iter()
        .map(|f| {
            let bound = f.temporal_occurrences() + 1;
            let mut ops = Vec::new();
            flatten(f, &symbols, &mut ops);
            (bound, brute_shortest(&ops, alphabet_size, bound + 3))
        })
        .collect();
    let mut violations = Vec::new();
    let mut nonempty = 0;
    let mut max_slack = i64::MIN;
    for (f, (bound, shortest)) in corpus.iter().zip(&results) {
        if let Some(len) = shortest {
            nonempty += 1;
            max_slack = max_slack.max(*len as i64 - *bound as i64);
            if len > bound {
                violations.push(BoundViolation {
                    formula: f.to_string(),
                    bound: *bound,
                    shortest_witness_len: *len,
                });
            }
        }
    }
    BoundValidationReport {
        alphabet_size,
        max_temporal,
        max_formula_size: size,
        formulas_checked: corpus.len(),
        nonempty,
        max_slack: if nonempty == 0 { 0 } else { max_slack },
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse_program;
    use crate::positive::check_positive;

    fn tl(src: &str) -> TlProgram {
        TlProgram::new(parse_program(src).unwrap()).unwrap()
    }

    #[test]
    fn bounds_of_simple_formulas() {
        assert_eq!(small_model_bound(&tl("alphabet a b\nout := PREV Qa")), 2);
        assert_eq!(small_model_bound(&tl("alphabet a b\nout := Qa and Qb")), 1);
        let c = check_emptiness(&tl("alphabet a b\nout := Qa and Qb"), 1);
        assert!(c.empty);
        let c = check_emptiness(&tl("alphabet a b\nout := PREV Qa"), 1);
        assert_eq!(c.witness, Some(vec![0, 0]));
    }

    #[test]
    fn compiled_threshold_bound() {
        let p = check_positive(&parse_program("alphabet a\nout := #[Qa] >= 3").unwrap()).unwrap();
        let t = compile_to_tl(&p, &Guard::default()).unwrap();
        assert_eq!(temporal_subformula_count(t.program()), 5);
        assert_eq!(small_model_bound(&t), 6);
    }

    #[test]
    fn identical_programs_share_lines() {
        let p = check_positive(&parse_program("alphabet a\nout := #[Qa] >= 2").unwrap()).unwrap();
        let c = distinguishing_string(&p, &p, &Guard::default(), 1).unwrap();
        assert!(c.equivalent);
        assert_eq!(c.search_bound, 4);
    }

    #[test]
    fn rejects_counting() {
        assert!(TlProgram::new(parse_program("alphabet a\nout := #[Qa] >= 1").unwrap()).is_err());
    }

    #[test]
    fn corpus_is_duplicate_free() {
        let sigma = vec!["a".to_string(), "b".to_string()];
        let c = bound_corpus(&sigma, 2, 5);
        let set: std::collections::HashSet<_> = c.iter().collect();
        assert_eq!(set.len(), c.len());
        assert!(c.iter().all(|f| f.temporal_occurrences() <= 2));
    }

    #[test]
    fn brute_force_agrees_with_engine() {
        let sigma = vec!["a".to_string(), "b".to_string()];
        for f in bound_corpus(&sigma, 2, 5).iter().step_by(7) {
            let p = Program::new(
                sigma.clone(),
                vec![crate::Line {
                    name: "out".into(),
                    formula: f.clone(),
                }],
            )
            .unwrap();
            let mut ops = Vec::new();
            flatten(f, &sigma, &mut ops);
            let brute = brute_shortest(&ops, 2, 5);
            let engine = find_witness(&p, 5, 1).witness.map(|w| w.len());
            assert_eq!(brute, engine, "{f}");
        }
    }
}
