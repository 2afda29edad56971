//! The positive fragment: no past operators, no conditionals, and only
//! non-negative coefficients, constants and bounds.
//!
//! `decompose` rewrites each threshold constraint into a boolean combination
//! of single-count thresholds `#[φ] >= c` by enumerating the minimal count
//! vectors that satisfy it.

use std::collections::HashSet;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::guard::{Guard, GuardError};
use crate::syntax::{fresh_name, Cmp, Constraint, Formula, Line, Program, Term};
use crate::tl::TlProgram;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PositiveError {
    #[error("line `{line}` is outside the positive fragment: {reason}")]
    NotPositive { line: String, reason: String },
    #[error(transparent)]
    Guard(#[from] GuardError),
}

/// A program checked to lie in the positive fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveProgram(Program);

impl PositiveProgram {
    pub fn program(&self) -> &Program {
        &self.0
    }
    pub fn into_program(self) -> Program {
        self.0
    }
}

/// A positive program whose every constraint is `#[φ] >= c` with `c >= 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposedProgram(Program);

impl DecomposedProgram {
    pub fn program(&self) -> &Program {
        &self.0
    }
    pub fn into_program(self) -> Program {
        self.0
    }
}

fn violation(f: &Formula) -> Option<String> {
    let mut reason = None;
    f.visit(&mut |g| {
        if reason.is_some() {
            return;
        }
        match g {
            Formula::Prev(_) => reason = Some("uses PREV".to_string()),
            Formula::Hist(_) => reason = Some("uses HIST".to_string()),
            Formula::Lin(c) => {
                if c.bound.is_negative() {
                    reason = Some(format!("negative bound {}", c.bound));
                }
                for (k, t) in &c.terms {
                    if k.is_negative() {
                        reason = Some(format!("negative coefficient {k}"));
                    }
                    match t {
                        Term::Ite(..) => reason = Some("uses a conditional term".into()),
                        Term::Const(v) if v.is_negative() => {
                            reason = Some(format!("negative constant {v}"))
                        }
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    });
    reason
}

pub fn check_positive(p: &Program) -> Result<PositiveProgram, PositiveError> {
    for line in &p.lines {
        if let Some(reason) = violation(&line.formula) {
            return Err(PositiveError::NotPositive {
                line: line.name.clone(),
                reason,
            });
        }
    }
    Ok(PositiveProgram(p.clone()))
}

/// True when every constraint has the single-count form `#[φ] >= c`, `c >= 1`.
pub fn is_decomposed(p: &Program) -> bool {
    let mut ok = true;
    for line in &p.lines {
        line.formula.visit(&mut |f| {
            if let Formula::Lin(c) = f {
                ok &= c.terms.len() == 1
                    && c.terms[0].0.is_one()
                    && matches!(c.terms[0].1, Term::Count(_))
                    && c.cmp == Cmp::Ge
                    && c.bound >= BigInt::one();
            }
        });
    }
    ok
}

struct Decomposer<'g> {
    guard: &'g Guard,
    taken: HashSet<String>,
    out: Vec<Line>,
    current: String,
}

impl<'g> Decomposer<'g> {
    fn formula(&mut self, f: &Formula) -> Result<Formula, GuardError> {
        match f {
            Formula::Lin(c) => self.constraint(c),
            Formula::True | Formula::False | Formula::Atom(_) | Formula::Ref(_) => Ok(f.clone()),
            Formula::Not(a) => Ok(Formula::not(self.formula(a)?)),
            Formula::And(a, b) => Ok(Formula::and(self.formula(a)?, self.formula(b)?)),
            Formula::Or(a, b) => Ok(Formula::or(self.formula(a)?, self.formula(b)?)),
            Formula::Prev(_) | Formula::Hist(_) => unreachable!("checked positive"),
        }
    }

    /// Count arguments become their own lines unless already a name or symbol test.
    fn hoist(&mut self, f: &Formula) -> Result<Formula, GuardError> {
        let g = self.formula(f)?;
        if matches!(
            g,
            Formula::Atom(_) | Formula::Ref(_) | Formula::True | Formula::False
        ) {
            return Ok(g);
        }
        let name = fresh_name(&format!("{}_arg", self.current), &mut self.taken);
        self.out.push(Line {
            name: name.clone(),
            formula: g,
        });
        if self.out.len() > self.guard.max_lines {
            return Err(GuardError::new(
                "decomposed program lines",
                self.out.len(),
                self.guard.max_lines,
            ));
        }
        Ok(Formula::Ref(name))
    }

    fn constraint(&mut self, c: &Constraint) -> Result<Formula, GuardError> {
        let mut bound = c.bound.clone();
        let mut terms: Vec<(BigInt, Formula)> = Vec::new();
        for (k, t) in &c.terms {
            match t {
                Term::Const(v) => bound -= k * v,
                Term::Count(f) => {
                    if k.is_zero() {
                        continue;
                    }
                    let arg = self.hoist(f)?;
                    match terms.iter_mut().find(|(_, g)| *g == arg) {
                        Some((kk, _)) => *kk += k,
                        None => terms.push((k.clone(), arg)),
                    }
                }
                Term::Ite(..) => unreachable!("checked positive"),
            }
        }
        let ge = |this: &mut Self, b: &BigInt| this.at_least(&terms, b);
        Ok(match c.cmp {
            Cmp::Ge => ge(self, &bound)?,
            Cmp::Gt => ge(self, &(bound + 1))?,
            Cmp::Le => negate(ge(self, &(bound + 1))?),
            Cmp::Lt => negate(ge(self, &bound)?),
            Cmp::Eq => {
                let lo = ge(self, &bound)?;
                let hi = ge(self, &(bound + 1))?;
                match (lo, hi) {
                    (Formula::False, _) => Formula::False,
                    (lo, Formula::False) => lo,
                    (Formula::True, hi) => negate(hi),
                    (lo, hi) => Formula::and(lo, negate(hi)),
                }
            }
        })
    }

    /// `Σ k_i #[φ_i] >= c` as a disjunction over minimal satisfying count vectors.
    fn at_least(&mut self, terms: &[(BigInt, Formula)], c: &BigInt) -> Result<Formula, GuardError> {
        if !c.is_positive() {
            return Ok(Formula::True);
        }
        if terms.is_empty() {
            return Ok(Formula::False);
        }
        let caps: Vec<BigInt> = terms
            .iter()
            .map(|(k, _)| c.div_ceil(k).min(c.clone()))
            .collect();
        let mut grid = BigInt::one();
        for cap in &caps {
            grid *= cap + 1;
        }
        let needed = BigInt::from(terms.len()) * &grid;
        if needed > BigInt::from(self.guard.max_tuples) {
            let full = (c + 1u32).pow(terms.len() as u32);
            return Err(GuardError::new(
                format!("threshold tuple grid for bound {c} over {} counts ({full} tuples before pruning)", terms.len()),
                grid,
                self.guard.max_tuples,
            ));
        }
        let caps: Vec<u64> = caps.iter().map(|x| x.to_u64().expect("guarded")).collect();
        let coeffs: Vec<BigInt> = terms.iter().map(|(k, _)| k.clone()).collect();
        let minimal = minimal_tuples(&coeffs, &caps, c);
        Ok(Formula::disj(minimal.into_iter().map(|tuple| {
            Formula::conj(
                tuple
                    .iter()
                    .zip(terms)
                    .filter(|(n, _)| **n > 0)
                    .map(|(n, (_, f))| Formula::count_cmp(f.clone(), Cmp::Ge, *n)),
            )
        })))
    }
}

fn negate(f: Formula) -> Formula {
    match f {
        Formula::True => Formula::False,
        Formula::False => Formula::True,
        other => Formula::not(other),
    }
}

/// Minimal vectors `t` with `t_i <= caps_i` and `Σ k_i t_i >= c`, in lexicographic order.
///
/// A satisfying vector is minimal when lowering any positive entry by one breaks it.
fn minimal_tuples(coeffs: &[BigInt], caps: &[u64], c: &BigInt) -> Vec<Vec<u64>> {
    let n = coeffs.len();
    let mut out = Vec::new();
    let mut t = vec![0u64; n];
    loop {
        let sum: BigInt = t.iter().zip(coeffs).map(|(x, k)| k * *x).sum();
        if sum >= *c {
            let minimal = (0..n).all(|i| t[i] == 0 || &sum - &coeffs[i] < *c);
            if minimal {
                out.push(t.clone());
            }
        }
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if t[i] < caps[i] {
                t[i] += 1;
                break;
            }
            t[i] = 0;
        }
    }
}

/// Rewrites every constraint into single-count thresholds.
pub fn decompose(p: &PositiveProgram, guard: &Guard) -> Result<DecomposedProgram, GuardError> {
    let prog = p.program();
    let mut d = Decomposer {
        guard,
        taken: prog.line_names().into_iter().collect(),
        out: Vec::new(),
        current: String::new(),
    };
    for line in &prog.lines {
        d.current = line.name.clone();
        let f = d.formula(&line.formula)?;
        d.out.push(Line {
            name: line.name.clone(),
            formula: f,
        });
    }
    let result = Program {
        alphabet: prog.alphabet.clone(),
        lines: d.out,
    };
    debug_assert!(result.validate().is_ok());
    Ok(DecomposedProgram(result))
}

/// Strict-past chain: `PREV ψ` for `n = 1`, `PREV (ψ and chain(n-1))` otherwise.
fn chain(psi: &Formula, n: u64) -> Formula {
    let mut f = Formula::prev(psi.clone());
    for _ in 1..n {
        f = Formula::prev(Formula::and(psi.clone(), f));
    }
    f
}

/// `#[ψ] >= c` as a temporal formula: at least `c` earlier positions satisfy
/// ψ, or the current one does and at least `c - 1` earlier ones do.
pub fn threshold_to_tl(psi: &Formula, c: u64) -> Formula {
    match c {
        0 => Formula::True,
        1 => Formula::or(Formula::prev(psi.clone()), psi.clone()),
        _ => Formula::or(chain(psi, c), Formula::and(psi.clone(), chain(psi, c - 1))),
    }
}

fn to_tl(f: &Formula) -> Formula {
    match f {
        Formula::Lin(c) => {
            let Term::Count(psi) = &c.terms[0].1 else {
                unreachable!("decomposed")
            };
            let n = c.bound.to_u64().expect("threshold fits in u64");
            threshold_to_tl(psi, n)
        }
        other => other.map_children(&mut to_tl),
    }
}

/// Temporal program equivalent to a positive program.
pub fn compile_to_tl(p: &PositiveProgram, guard: &Guard) -> Result<TlProgram, GuardError> {
    let d = decompose(p, guard)?;
    let prog = d.program().map_lines(to_tl);
    Ok(TlProgram::new(prog).expect("decomposition output has no counting terms"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse_program;

    fn pos(src: &str) -> PositiveProgram {
        check_positive(&parse_program(src).unwrap()).unwrap()
    }

    fn dec(src: &str) -> String {
        let d = decompose(&pos(src), &Guard::default()).unwrap();
        d.program().acceptor().formula.to_string()
    }

    #[test]
    fn decomposition_examples() {
        assert_eq!(dec("alphabet a\nout := 2*#[Qa] >= 3"), "#[Qa] >= 2");
        assert_eq!(
            dec("alphabet a\nout := #[Qa] = 2"),
            "#[Qa] >= 2 and not #[Qa] >= 3"
        );
        assert_eq!(dec("alphabet a\nout := #[Qa] < 1"), "not #[Qa] >= 1");
        assert_eq!(dec("alphabet a\nout := #[Qa] >= 0"), "true");
        assert_eq!(dec("alphabet a\nout := 3 >= 1"), "true");
        assert_eq!(dec("alphabet a\nout := 0*#[Qa] >= 1"), "false");
        assert_eq!(
            dec("alphabet a b\nout := #[Qa] + 2*#[Qb] >= 2"),
            "#[Qb] >= 1 or #[Qa] >= 2"
        );
    }

    #[test]
    fn rejects_non_positive() {
        let p = parse_program("alphabet a b\nout := #[Qa] - #[Qb] >= 0").unwrap();
        assert!(matches!(
            check_positive(&p),
            Err(PositiveError::NotPositive { .. })
        ));
        let p = parse_program("alphabet a\nout := PREV Qa").unwrap();
        assert!(check_positive(&p).is_err());
        let p = parse_program("alphabet a\nout := #[Qa] >= -1").unwrap();
        assert!(check_positive(&p).is_err());
    }

    #[test]
    fn guard_trips_on_large_grids() {
        let p = pos("alphabet a b c\nout := #[Qa] + #[Qb] + #[Qc] >= 200");
        let g = Guard {
            max_tuples: 1000,
            ..Guard::default()
        };
        assert!(decompose(&p, &g).is_err());
    }

    #[test]
    fn hoists_compound_arguments() {
        let d = decompose(
            &pos("alphabet a b\nout := #[Qa and not Qb] >= 2"),
            &Guard::default(),
        )
        .unwrap();
        assert_eq!(d.program().lines.len(), 2);
        assert!(is_decomposed(d.program()));
        assert_eq!(
            d.program().to_string(),
            "alphabet a b\nout_arg := Qa and not Qb\nout := #[out_arg] >= 2\n"
        );
    }

    #[test]
    fn tl_shape() {
        let tl = compile_to_tl(&pos("alphabet a\nout := #[Qa] >= 2"), &Guard::default()).unwrap();
        assert_eq!(
            tl.program().acceptor().formula.to_string(),
            "PREV (Qa and PREV Qa) or (Qa and PREV Qa)"
        );
    }
}
