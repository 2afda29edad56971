//! Satisfiability-preserving reduction to counting depth at most 2.
//!
//! While the acceptor is deeper than 2, every counted formula `ψ` of depth 1
//! is replaced by a fresh proposition `P_ψ`, and the constraint
//! `#[(P_ψ and not ψ) or (not P_ψ and ψ)] = 0` pins `P_ψ` to `ψ` at every
//! position. Propositions are carried by a product alphabet: the letter
//! `a|011` is `a` with `P_1 = 0`, `P_2 = 1`, `P_3 = 1`.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::guard::{Guard, GuardError};
use crate::machine::Machine;
use crate::syntax::{
    desugar_temporal, eliminate_conditionals, formula_depth, fresh_name, line_depths, measure, Cmp,
    Formula, Line, Program, Term,
};

/// Largest extended alphabet the reduction will build.
pub const MAX_EXTENDED_LETTERS: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtendedAlphabet {
    pub base: Vec<String>,
    /// Printed form of each eliminated formula, in elimination order.
    pub propositions: Vec<String>,
    /// Product letters `σ|b_1..b_k`, base-major then bits in binary order.
    pub letters: Vec<String>,
}

impl ExtendedAlphabet {
    fn new(base: &[String], propositions: Vec<String>) -> ExtendedAlphabet {
        let k = propositions.len();
        let mut letters = Vec::new();
        for s in base {
            for bits in 0..(1usize << k) {
                letters.push(format!("{s}|{}", bit_string(bits, k)));
            }
        }
        ExtendedAlphabet {
            base: base.to_vec(),
            propositions,
            letters,
        }
    }

    pub fn k(&self) -> usize {
        self.propositions.len()
    }

    pub fn letter(&self, base: usize, bits: usize) -> usize {
        base * (1usize << self.k()) + bits
    }

    /// Base symbol and bit mask of a letter.
    pub fn split(&self, letter: usize) -> (usize, usize) {
        (letter >> self.k(), letter & ((1usize << self.k()) - 1))
    }

    pub fn project(&self, word: &[usize]) -> Vec<usize> {
        word.iter().map(|&l| self.split(l).0).collect()
    }
}

/// Bit `j` (0-based, the `j+1`-th proposition) is the `j`-th character.
fn bit_string(bits: usize, k: usize) -> String {
    (0..k)
        .map(|j| {
            if bits >> (k - 1 - j) & 1 == 1 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

fn bit_of(bits: usize, j: usize, k: usize) -> bool {
    bits >> (k - 1 - j) & 1 == 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Depth2Reduction {
    /// Output program over the extended alphabet; its acceptor is `φ' ∧ ⋀S`.
    pub program: Program,
    pub alphabet: ExtendedAlphabet,
    /// Names of the lines holding each eliminated formula `ψ'`.
    pub eliminated: Vec<String>,
    /// Names of the synchronisation constraints `S`.
    pub constraints: Vec<String>,
}

impl Depth2Reduction {
    pub fn depth(&self) -> u32 {
        measure(&self.program).depth
    }

    /// Annotates `word` with the truth of each eliminated formula, giving a
    /// word the reduced program accepts iff the original accepts `word`.
    pub fn lift(&self, word: &[usize]) -> Vec<usize> {
        let k = self.alphabet.k();
        let mut bits = vec![0usize; word.len()];
        for (j, name) in self.eliminated.iter().enumerate() {
            let lifted: Vec<usize> = word
                .iter()
                .zip(&bits)
                .map(|(&s, &b)| self.alphabet.letter(s, b))
                .collect();
            let idx = self
                .program
                .line_index(name)
                .expect("eliminated line exists");
            let prefix = Program {
                alphabet: self.program.alphabet.clone(),
                lines: self.program.lines[..=idx].to_vec(),
            };
            let truth = Machine::new(&prefix).run(&lifted);
            for (b, t) in bits.iter_mut().zip(truth) {
                if t {
                    *b |= 1 << (k - 1 - j);
                }
            }
        }
        word.iter()
            .zip(&bits)
            .map(|(&s, &b)| self.alphabet.letter(s, b))
            .collect()
    }
}

/// Reduces `p` to an equisatisfiable program of depth at most 2.
///
/// Temporal operators and conditional terms are rewritten into plain counts
/// first; a program already of depth at most 2 is returned unchanged.
pub fn reduce_depth2(p: &Program, guard: &Guard) -> Result<Depth2Reduction, GuardError> {
    if measure(p).depth <= 2 {
        return Ok(Depth2Reduction {
            program: p.clone(),
            alphabet: ExtendedAlphabet::new(&p.alphabet, Vec::new()),
            eliminated: Vec::new(),
            constraints: Vec::new(),
        });
    }
    let mut prog = eliminate_conditionals(&desugar_temporal(p));
    let mut taken: HashSet<String> = prog.line_names().into_iter().collect();
    let mut props: Vec<(String, Formula)> = Vec::new(); // (proposition line, ψ)
    let mut elim_lines: Vec<String> = Vec::new();
    let mut sync_lines: Vec<String> = Vec::new();

    while measure(&prog).depth > 2 {
        let depths = line_depths(&prog);
        let mut found: HashMap<Formula, String> = HashMap::new();
        let mut lines = Vec::new();
        for line in &prog.lines {
            let mut pending: Vec<Line> = Vec::new();
            let formula = replace_depth1_counts(&line.formula, &depths, &mut |psi: &Formula| {
                if let Some(name) = found.get(psi) {
                    return name.clone();
                }
                let j = props.len() + 1;
                let prop = fresh_name(&format!("p{j}"), &mut taken);
                let elim = fresh_name(&format!("psi{j}"), &mut taken);
                pending.push(Line {
                    name: elim.clone(),
                    formula: psi.clone(),
                });
                props.push((prop.clone(), psi.clone()));
                elim_lines.push(elim);
                found.insert(psi.clone(), prop.clone());
                prop
            });
            lines.extend(pending);
            lines.push(Line {
                name: line.name.clone(),
                formula,
            });
        }
        if found.is_empty() {
            break;
        }
        prog = Program {
            alphabet: prog.alphabet.clone(),
            lines,
        };
    }

    let k = props.len();
    let letters = p
        .alphabet
        .len()
        .saturating_mul(1usize.checked_shl(k as u32).unwrap_or(usize::MAX));
    if k >= usize::BITS as usize || letters > MAX_EXTENDED_LETTERS {
        return Err(GuardError::new(
            "extended alphabet letters",
            letters,
            MAX_EXTENDED_LETTERS,
        ));
    }
    let alphabet = ExtendedAlphabet::new(
        &p.alphabet,
        props.iter().map(|(_, f)| f.to_string()).collect(),
    );

    // Proposition and symbol lines come first; atoms are rewritten to the symbol lines.
    let mut head = Vec::new();
    let mut sym_line = HashMap::new();
    for (si, s) in p.alphabet.iter().enumerate() {
        let name = fresh_name(&format!("sym_{s}"), &mut taken);
        let letters = (0..(1usize << k))
            .map(|b| Formula::Atom(alphabet.letters[alphabet.letter(si, b)].clone()));
        head.push(Line {
            name: name.clone(),
            formula: Formula::disj(letters),
        });
        sym_line.insert(s.clone(), name);
    }
    for (j, (prop, _)) in props.iter().enumerate() {
        let mut letters = Vec::new();
        for si in 0..p.alphabet.len() {
            for b in 0..(1usize << k) {
                if bit_of(b, j, k) {
                    letters.push(Formula::Atom(
                        alphabet.letters[alphabet.letter(si, b)].clone(),
                    ));
                }
            }
        }
        head.push(Line {
            name: prop.clone(),
            formula: Formula::disj(letters),
        });
    }
    let mut lines = head;
    for line in &prog.lines {
        lines.push(Line {
            name: line.name.clone(),
            formula: rename_atoms(&line.formula, &sym_line),
        });
    }
    let acceptor = prog.acceptor().name.clone();
    for (j, (prop, _)) in props.iter().enumerate() {
        let name = fresh_name(&format!("sync{}", j + 1), &mut taken);
        let psi = Formula::Ref(elim_lines[j].clone());
        let p = Formula::Ref(prop.clone());
        let differ = Formula::or(
            Formula::and(p.clone(), Formula::not(psi.clone())),
            Formula::and(Formula::not(p), psi),
        );
        lines.push(Line {
            name: name.clone(),
            formula: Formula::count_cmp(differ, Cmp::Eq, 0),
        });
        sync_lines.push(name);
    }
    let reduced = fresh_name("reduced", &mut taken);
    lines.push(Line {
        name: reduced,
        formula: Formula::conj(
            std::iter::once(Formula::Ref(acceptor))
                .chain(sync_lines.iter().map(|s| Formula::Ref(s.clone()))),
        ),
    });
    if lines.len() > guard.max_lines {
        return Err(GuardError::new(
            "program lines",
            lines.len(),
            guard.max_lines,
        ));
    }
    let program = Program::new(alphabet.letters.clone(), lines)
        .expect("reduction keeps the program well-formed");
    Ok(Depth2Reduction {
        program,
        alphabet,
        eliminated: elim_lines,
        constraints: sync_lines,
    })
}

/// Replaces `#[ψ]` by `#[P_ψ]` wherever `ψ` has depth exactly 1.
fn replace_depth1_counts(
    f: &Formula,
    depths: &HashMap<String, u32>,
    name_for: &mut impl FnMut(&Formula) -> String,
) -> Formula {
    match f {
        Formula::Lin(c) => {
            let terms = c
                .terms
                .iter()
                .map(|(k, t)| (k.clone(), replace_in_term(t, depths, name_for)))
                .collect();
            Formula::lin(terms, c.cmp, c.bound.clone())
        }
        other => other.map_children(&mut |g| replace_depth1_counts(g, depths, name_for)),
    }
}

fn replace_in_term(
    t: &Term,
    depths: &HashMap<String, u32>,
    name_for: &mut impl FnMut(&Formula) -> String,
) -> Term {
    match t {
        Term::Count(psi) if formula_depth(psi, depths) == 1 => {
            Term::count(Formula::Ref(name_for(psi)))
        }
        Term::Count(psi) => Term::count(replace_depth1_counts(psi, depths, name_for)),
        Term::Const(c) => Term::Const(c.clone()),
        Term::Ite(c, a, b) => Term::ite(
            replace_depth1_counts(c, depths, name_for),
            replace_in_term(a, depths, name_for),
            replace_in_term(b, depths, name_for),
        ),
    }
}

fn rename_atoms(f: &Formula, sym_line: &HashMap<String, String>) -> Formula {
    match f {
        Formula::Atom(s) => Formula::Ref(sym_line[s].clone()),
        other => other.map_children(&mut |g| rename_atoms(g, sym_line)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::semantics::{accepts, find_witness};
    use crate::word::words_up_to;

    #[test]
    fn shallow_program_is_unchanged() {
        let p = parse_program("alphabet a b\nx := #[Qa] >= 1\nout := #[x] = 2").unwrap();
        let r = reduce_depth2(&p, &Guard::default()).unwrap();
        assert_eq!(r.program, p);
        assert!(r.eliminated.is_empty());
    }

    #[test]
    fn depth_three_gets_one_proposition() {
        let p = parse_program("alphabet a b\nout := #[PREV (#[Qa] >= 1)] >= 1").unwrap();
        assert_eq!(measure(&p).depth, 3);
        let r = reduce_depth2(&p, &Guard::default()).unwrap();
        assert_eq!(r.alphabet.k(), 1);
        assert!(r.depth() <= 2);
        assert_eq!(r.alphabet.letters, vec!["a|0", "a|1", "b|0", "b|1"]);
        let orig = find_witness(&p, 6, 1);
        let red = find_witness(&r.program, 6, 1);
        assert_eq!(orig.found(), red.found());
        let w = red.witness.unwrap();
        assert!(accepts(&p, &r.alphabet.project(&w)));
    }

    #[test]
    fn lifting_is_complete() {
        let src =
            "alphabet a b\nx := #[Qa] - #[Qb] >= 1\ny := #[x and Qb] >= 1\nout := #[y] >= 2 and Qa";
        let p = parse_program(src).unwrap();
        assert_eq!(measure(&p).depth, 3);
        let r = reduce_depth2(&p, &Guard::default()).unwrap();
        assert!(r.depth() <= 2);
        for w in words_up_to(2, 6) {
            let lifted = r.lift(&w);
            assert_eq!(r.alphabet.project(&lifted), w);
            assert_eq!(accepts(&r.program, &lifted), accepts(&p, &w), "{w:?}");
        }
    }
}
