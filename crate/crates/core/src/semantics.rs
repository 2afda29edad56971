//! Exact evaluation, a naive reference evaluator, and shortest-witness search.

use std::collections::{BTreeMap, HashSet};

use num_bigint::{BigInt, BigUint};
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::guard::{Guard, GuardError};
use crate::machine::Machine;
use crate::syntax::{Formula, Program, Term};

/// Per-position values of every line and every counting term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalTrace {
    pub line_names: Vec<String>,
    /// `line_values[l][i]`: line `l` at position `i + 1`.
    pub line_values: Vec<Vec<bool>>,
    /// Counting terms keyed by their printed form.
    pub counts: BTreeMap<String, Vec<u64>>,
}

impl EvalTrace {
    /// Acceptance of the whole word; the empty word is rejected.
    pub fn accepted(&self) -> bool {
        self.line_values
            .last()
            .and_then(|v| v.last())
            .copied()
            .unwrap_or(false)
    }
}

pub fn evaluate(p: &Program, word: &[usize]) -> EvalTrace {
    let m = Machine::new(p);
    let mut line_values = vec![Vec::with_capacity(word.len()); p.lines.len()];
    let mut counts: Vec<Vec<u64>> = vec![Vec::with_capacity(word.len()); m.count_labels.len()];
    let mut state = m.initial_state();
    let (mut vals, mut next) = (Vec::new(), Vec::new());
    let count_slots = m.count_slot_ids();
    for &s in word {
        m.step(&state, s, &mut vals, &mut next);
        std::mem::swap(&mut state, &mut next);
        for (l, &node) in m.line_nodes.iter().enumerate() {
            line_values[l].push(vals[node]);
        }
        for (ci, &slot) in count_slots.iter().enumerate() {
            counts[ci].push(state[slot] as u64);
        }
    }
    EvalTrace {
        line_names: p.lines.iter().map(|l| l.name.clone()).collect(),
        line_values,
        counts: m.count_labels.iter().cloned().zip(counts).collect(),
    }
}

/// Acceptance of `word`. The empty word is rejected.
pub fn accepts(p: &Program, word: &[usize]) -> bool {
    if word.is_empty() {
        return false;
    }
    *Machine::new(p).run(word).last().expect("non-empty")
}

// ---------------------------------------------------------------------------
// Reference evaluator: full inlining, direct recursion on the definitions.

struct Reference<'w> {
    word: &'w [usize],
    symbols: Vec<String>,
}

impl<'w> Reference<'w> {
    /// Truth at 1-based position `i`.
    fn sat(&self, f: &Formula, i: usize) -> bool {
        match f {
            Formula::True => true,
            Formula::False => false,
            Formula::Atom(s) => self.symbols[self.word[i - 1]] == *s,
            Formula::Not(a) => !self.sat(a, i),
            Formula::And(a, b) => self.sat(a, i) && self.sat(b, i),
            Formula::Or(a, b) => self.sat(a, i) || self.sat(b, i),
            Formula::Prev(a) => (1..i).any(|j| self.sat(a, j)),
            Formula::Hist(a) => (1..=i).all(|j| self.sat(a, j)),
            Formula::Lin(c) => {
                let sum: BigInt = c.terms.iter().map(|(k, t)| k * self.value(t, i)).sum();
                c.cmp.holds(&sum, &c.bound)
            }
            Formula::Ref(r) => panic!("reference `{r}` survived inlining"),
        }
    }

    fn value(&self, t: &Term, i: usize) -> BigInt {
        match t {
            Term::Count(f) => BigInt::from((1..=i).filter(|&j| self.sat(f, j)).count()),
            Term::Const(c) => c.clone(),
            Term::Ite(c, a, b) => {
                if self.sat(c, i) {
                    self.value(a, i)
                } else {
                    self.value(b, i)
                }
            }
        }
    }
}

/// Evaluates by inlining every line and recursing on the definitions.
/// Independent of the compiled engine; intended as a test oracle.
pub fn reference_evaluate(
    p: &Program,
    word: &[usize],
    guard: &Guard,
) -> Result<EvalTrace, GuardError> {
    let r = Reference {
        word,
        symbols: p.alphabet.clone(),
    };
    let mut line_values = Vec::with_capacity(p.lines.len());
    let mut inlined = Vec::with_capacity(p.lines.len());
    for l in 0..p.lines.len() {
        let f = p.inline_line(l, guard.max_inline)?;
        line_values.push((1..=word.len()).map(|i| r.sat(&f, i)).collect());
        inlined.push(f);
    }
    let lookup = |name: &str| p.line_index(name).map(|i| inlined[i].clone());
    let mut counts = BTreeMap::new();
    for line in &p.lines {
        line.formula.visit(&mut |f| {
            if let Formula::Lin(c) = f {
                for (_, t) in &c.terms {
                    collect_counts(t, &lookup, &r, word.len(), &mut counts);
                }
            }
        });
    }
    Ok(EvalTrace {
        line_names: p.lines.iter().map(|l| l.name.clone()).collect(),
        line_values,
        counts,
    })
}

fn collect_counts(
    t: &Term,
    lookup: &impl Fn(&str) -> Option<Formula>,
    r: &Reference,
    n: usize,
    out: &mut BTreeMap<String, Vec<u64>>,
) {
    match t {
        Term::Count(f) => {
            let label = format!("#[{f}]");
            out.entry(label).or_insert_with(|| {
                let g = f.substitute_refs(lookup);
                let mut acc = 0u64;
                (1..=n)
                    .map(|i| {
                        acc += u64::from(r.sat(&g, i));
                        acc
                    })
                    .collect()
            });
        }
        Term::Const(_) => {}
        Term::Ite(_, a, b) => {
            collect_counts(a, lookup, r, n, out);
            collect_counts(b, lookup, r, n, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Witness search

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WitnessReport {
    /// Shortest accepted word, least in lexicographic order among those of its length.
    pub witness: Option<Vec<usize>>,
    pub max_len: usize,
    /// Rank of the witness among all words in length-then-lexicographic order (1-based).
    pub rank: Option<String>,
    /// Distinct accumulator states expanded.
    pub states_explored: usize,
    /// Length after which no live state remained, if the frontier emptied.
    pub exhausted_at: Option<usize>,
}

impl WitnessReport {
    pub fn found(&self) -> bool {
        self.witness.is_some()
    }
}

/// Rank of `w` in length-then-lexicographic order over `k` symbols, starting at 1.
pub fn shortlex_rank(k: usize, w: &[usize]) -> BigUint {
    let kk = BigUint::from(k);
    let mut shorter = BigUint::zero();
    let mut pow = BigUint::from(1u32);
    for _ in 1..w.len() {
        pow *= &kk;
        shorter += &pow;
    }
    let mut within = BigUint::zero();
    for &s in w {
        within = within * &kk + BigUint::from(s);
    }
    shorter + within + BigUint::from(1u32)
}

#[derive(Clone)]
struct Entry {
    state: Vec<u32>,
    word: Vec<usize>,
}

/// Breadth-first search over accumulator states for the shortest,
/// lexicographically least accepted word of length at most `max_len`.
///
/// `jobs` bounds the worker threads used to expand each layer; the result is
/// independent of it.
pub fn find_witness(p: &Program, max_len: usize, jobs: usize) -> WitnessReport {
    let m = Machine::new(p);
    let run = || search(&m, p.alphabet.len(), max_len, jobs);
    if jobs <= 1 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

fn search(m: &Machine, k: usize, max_len: usize, jobs: usize) -> WitnessReport {
    let mut layer = vec![Entry {
        state: m.initial_state(),
        word: Vec::new(),
    }];
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut explored = 0usize;
    let report = |witness: Option<Vec<usize>>, explored, exhausted_at| WitnessReport {
        rank: witness
            .as_ref()
            .map(|w: &Vec<usize>| shortlex_rank(k, w).to_string()),
        witness,
        max_len,
        states_explored: explored,
        exhausted_at,
    };
    for len in 1..=max_len {
        let remaining = max_len - len;
        let expand = |e: &Entry| -> Vec<(bool, Vec<u32>)> {
            let (mut vals, mut next) = (Vec::new(), Vec::new());
            (0..k)
                .map(|s| {
                    let acc = m.step(&e.state, s, &mut vals, &mut next);
                    (acc, next.clone())
                })
                .collect()
        };
        let succ: Vec<Vec<(bool, Vec<u32>)>> = if jobs > 1 && layer.len() >= 64 {
            layer.par_iter().map(expand).collect()
        } else {
            layer.iter().map(expand).collect()
        };
        explored += layer.len();
        for (e, outs) in layer.iter().zip(&succ) {
            if let Some(s) = outs.iter().position(|(a, _)| *a) {
                let mut w = e.word.clone();
                w.push(s);
                return report(Some(w), explored, None);
            }
        }
        if remaining == 0 {
            break;
        }
        let mut candidates = Vec::new();
        for (e, outs) in layer.iter().zip(succ) {
            for (s, (_, st)) in outs.into_iter().enumerate() {
                if seen.insert(st.clone()) {
                    let mut w = e.word.clone();
                    w.push(s);
                    candidates.push(Entry { state: st, word: w });
                }
            }
        }
        let keep: Vec<bool> = if jobs > 1 && candidates.len() >= 64 {
            candidates
                .par_iter()
                .map(|c| m.may_accept(&c.state, remaining))
                .collect()
        } else {
            candidates
                .iter()
                .map(|c| m.may_accept(&c.state, remaining))
                .collect()
        };
        layer = candidates
            .into_iter()
            .zip(keep)
            .filter_map(|(c, k)| k.then_some(c))
            .collect();
        if layer.is_empty() {
            return report(None, explored, Some(len));
        }
    }
    report(None, explored, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse_program;
    use crate::word::words_up_to;

    fn prog(src: &str) -> Program {
        parse_program(src).unwrap()
    }

    #[test]
    fn empty_word_is_rejected() {
        assert!(!accepts(&prog("alphabet a\nout := true"), &[]));
    }

    #[test]
    fn atom_and_past() {
        let p = prog("alphabet a b\nout := Qa and PREV Qb");
        assert!(accepts(&p, &[1, 0]));
        assert!(!accepts(&p, &[0, 1]));
        assert!(!accepts(&p, &[0]));
    }

    #[test]
    fn trace_records_counts() {
        let p = prog("alphabet a b\nout := #[Qa] - #[Qb] >= 0");
        let t = evaluate(&p, &[0, 1, 1]);
        assert_eq!(t.line_values[0], vec![true, true, false]);
        assert_eq!(t.counts["#[Qa]"], vec![1, 1, 1]);
        assert_eq!(t.counts["#[Qb]"], vec![0, 1, 2]);
        let r = reference_evaluate(&p, &[0, 1, 1], &Guard::default()).unwrap();
        assert_eq!(t, r);
    }

    #[test]
    fn witness_is_shortest_then_least() {
        let p = prog("alphabet a b\nout := #[Qb] >= 2");
        let r = find_witness(&p, 5, 1);
        assert_eq!(r.witness, Some(vec![1, 1]));
        assert_eq!(r.rank.as_deref(), Some("6"));
        let q = prog("alphabet a b\nout := #[Qa] = 3 and Qb");
        assert_eq!(find_witness(&q, 6, 2).witness, Some(vec![0, 0, 0, 1]));
    }

    #[test]
    fn witness_search_proves_exhaustion() {
        let p = prog("alphabet a\nout := #[Qa] = 0");
        let r = find_witness(&p, 50, 1);
        assert!(r.witness.is_none());
        assert_eq!(r.exhausted_at, Some(1));
    }

    #[test]
    fn witness_matches_enumeration() {
        let p =
            prog("alphabet a b\nx := #[Qa] - 2*#[Qb] = 1\nout := x and HIST (not Qb or PREV Qa)");
        let brute = words_up_to(2, 7).find(|w| accepts(&p, w));
        assert_eq!(find_witness(&p, 7, 1).witness, brute);
    }

    #[test]
    fn rank_formula() {
        assert_eq!(shortlex_rank(2, &[0]).to_string(), "1");
        assert_eq!(shortlex_rank(2, &[1]).to_string(), "2");
        assert_eq!(shortlex_rank(2, &[0, 0]).to_string(), "3");
        assert_eq!(shortlex_rank(1, &[0, 0, 0]).to_string(), "3");
    }
}
