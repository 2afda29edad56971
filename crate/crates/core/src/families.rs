//! Worked language families and desk-scale experiments: bounded Dyck, the
//! exact-count family, the two-level restricted class with its band check and
//! separation sweep, and a finite-identification learner over explicit
//! hypothesis lists.

use std::collections::{BTreeSet, HashSet};

use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::semantics::{accepts, find_witness};
use crate::syntax::{
    difference_program, disagreement_program, measure, Cmp, Formula, Line, Program, Term,
};
use crate::word::{render_word, words_up_to};

fn ab() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

fn line(name: &str, formula: Formula) -> Line {
    Line {
        name: name.into(),
        formula,
    }
}

fn count(f: Formula) -> Term {
    Term::count(f)
}

// ---------------------------------------------------------------------------
// Bounded Dyck

/// Six-line program for Dyck-1 words of nesting depth at most `k` over `{a, b}`.
pub fn dyck_program(k: u32) -> Program {
    assert!(k >= 1, "depth bound must be at least 1");
    let diff = || {
        vec![
            (BigInt::from(1), count(Formula::atom("a"))),
            (BigInt::from(-1), count(Formula::atom("b"))),
        ]
    };
    let lines = vec![
        line("lower", Formula::lin(diff(), Cmp::Ge, 0)),
        line("upper", Formula::lin(diff(), Cmp::Le, k)),
        line(
            "bounded",
            Formula::and(Formula::reference("lower"), Formula::reference("upper")),
        ),
        line("all_bounded", Formula::hist(Formula::reference("bounded"))),
        line("balanced", Formula::lin(diff(), Cmp::Eq, 0)),
        line(
            "dyck",
            Formula::and(
                Formula::reference("all_bounded"),
                Formula::reference("balanced"),
            ),
        ),
    ];
    Program::new(ab(), lines).expect("dyck program is well formed")
}

/// Stack simulation of Dyck-1 with at most `k` open brackets; `a` opens, `b` closes.
pub fn dyck_oracle(k: u32, word: &[usize]) -> bool {
    let mut stack: Vec<usize> = Vec::new();
    for &s in word {
        match s {
            0 => {
                if stack.len() as u32 == k {
                    return false;
                }
                stack.push(s);
            }
            _ => {
                if stack.pop().is_none() {
                    return false;
                }
            }
        }
    }
    stack.is_empty()
}

/// Random word of `D_k` with exactly `len` symbols (`len` even), or `None` for odd `len`.
pub fn sample_dyck_word(k: u32, len: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
    if len % 2 == 1 {
        return None;
    }
    let mut w = Vec::with_capacity(len);
    let mut depth = 0usize;
    for step in 0..len {
        let remaining = len - step;
        let can_open = depth < k as usize && depth + 1 < remaining;
        let can_close = depth > 0;
        let open = match (can_open, can_close) {
            (true, true) => rng.gen_bool(0.5),
            (o, _) => o,
        };
        if open {
            depth += 1;
            w.push(0);
        } else {
            depth -= 1;
            w.push(1);
        }
    }
    Some(w)
}

// ---------------------------------------------------------------------------
// Exact counts

/// `#[Qa] = n` over `{a}`: its only word is `a^n`.
pub fn exact_count_program(n: u64) -> Program {
    Program::from_pairs(
        &["a"],
        vec![("exact", Formula::count_cmp(Formula::atom("a"), Cmp::Eq, n))],
    )
    .expect("exact count program is well formed")
}

// ---------------------------------------------------------------------------
// Restricted two-level programs

/// One inner formula `alpha #[Qa] > beta #[true]` with its outer weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PsiTerm {
    pub alpha: i64,
    pub beta: i64,
    pub lambda: i64,
}

/// `Σ λ #[ψ] > z #[true]` over `{a, b}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct RestrictedProgram {
    pub z: i64,
    pub terms: Vec<PsiTerm>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RestrictedError {
    #[error("z = {z} is outside [0, {t}]")]
    Threshold { z: i64, t: i64 },
    #[error("parameter {value} is outside [-{t}, {t}]")]
    Range { value: i64, t: i64 },
    #[error("alpha/beta = {alpha}/{beta} is not strictly between 0 and 1")]
    Ratio { alpha: i64, beta: i64 },
    #[error("{k} inner formulas, expected between 1 and {max}")]
    Size { k: usize, max: i64 },
    #[error("weights sum to {sum}, which does not exceed z = {z}")]
    Weights { sum: i64, z: i64 },
    #[error("inner formula {alpha} #a > {beta} #true is listed twice")]
    Duplicate { alpha: i64, beta: i64 },
}

fn ratio_in_unit_interval(alpha: i64, beta: i64) -> bool {
    match beta.signum() {
        1 => 0 < alpha && alpha < beta,
        -1 => beta < alpha && alpha < 0,
        _ => false,
    }
}

impl RestrictedProgram {
    /// Checked constructor for the class with parameter bound `t`.
    pub fn new(t: i64, z: i64, terms: Vec<PsiTerm>) -> Result<RestrictedProgram, RestrictedError> {
        if !(0..=t).contains(&z) {
            return Err(RestrictedError::Threshold { z, t });
        }
        if terms.is_empty() || terms.len() as i64 > t * t {
            return Err(RestrictedError::Size {
                k: terms.len(),
                max: t * t,
            });
        }
        let mut seen = HashSet::new();
        for term in &terms {
            for v in [term.alpha, term.beta, term.lambda] {
                if v.abs() > t {
                    return Err(RestrictedError::Range { value: v, t });
                }
            }
            if !ratio_in_unit_interval(term.alpha, term.beta) {
                return Err(RestrictedError::Ratio {
                    alpha: term.alpha,
                    beta: term.beta,
                });
            }
            if !seen.insert((term.alpha, term.beta)) {
                return Err(RestrictedError::Duplicate {
                    alpha: term.alpha,
                    beta: term.beta,
                });
            }
        }
        let sum: i64 = terms.iter().map(|t| t.lambda).sum();
        if sum <= z {
            return Err(RestrictedError::Weights { sum, z });
        }
        Ok(RestrictedProgram { z, terms })
    }

    /// Same shape without any parameter checks.
    pub fn unchecked(z: i64, terms: Vec<PsiTerm>) -> RestrictedProgram {
        RestrictedProgram { z, terms }
    }

    /// Within each inner formula, `alpha`, `beta` and `lambda` are pairwise distinct.
    pub fn per_psi_distinct(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.alpha != t.beta && t.alpha != t.lambda && t.beta != t.lambda)
    }

    /// All `3K` parameters are pairwise distinct.
    pub fn globally_distinct(&self) -> bool {
        let mut seen = HashSet::new();
        self.terms
            .iter()
            .flat_map(|t| [t.alpha, t.beta, t.lambda])
            .all(|v| seen.insert(v))
    }

    pub fn to_program(&self) -> Program {
        let mut lines = Vec::new();
        let mut outer = Vec::new();
        for (i, t) in self.terms.iter().enumerate() {
            let name = format!("psi{}", i + 1);
            let terms = nonzero(vec![
                (t.alpha, count(Formula::atom("a"))),
                (-t.beta, count(Formula::True)),
            ]);
            lines.push(line(&name, Formula::lin(terms, Cmp::Gt, 0)));
            outer.push((t.lambda, count(Formula::reference(name))));
        }
        outer.push((-self.z, count(Formula::True)));
        lines.push(line("phi", Formula::lin(nonzero(outer), Cmp::Gt, 0)));
        Program::new(ab(), lines).expect("restricted program is well formed")
    }
}

fn nonzero(terms: Vec<(i64, Term)>) -> Vec<(BigInt, Term)> {
    let kept: Vec<(BigInt, Term)> = terms
        .into_iter()
        .filter(|(c, _)| *c != 0)
        .map(|(c, t)| (BigInt::from(c), t))
        .collect();
    if kept.is_empty() {
        vec![(BigInt::from(1), Term::constant(0))]
    } else {
        kept
    }
}

/// Per-position truth of `alpha #[Qa] > beta #[true]`, by scanning prefixes.
pub fn psi_truth(alpha: i64, beta: i64, word: &[usize]) -> Vec<bool> {
    let mut a = 0i64;
    word.iter()
        .enumerate()
        .map(|(i, &s)| {
            if s == 0 {
                a += 1;
            }
            alpha * a > beta * (i as i64 + 1)
        })
        .collect()
}

/// Direct evaluation of a restricted program at the last position of `word`.
pub fn restricted_semantics(r: &RestrictedProgram, word: &[usize]) -> bool {
    if word.is_empty() {
        return false;
    }
    let n = word.len() as i64;
    let total: i64 = r
        .terms
        .iter()
        .map(|t| {
            t.lambda
                * psi_truth(t.alpha, t.beta, word)
                    .iter()
                    .filter(|&&b| b)
                    .count() as i64
        })
        .sum();
    total > r.z * n
}

// ---------------------------------------------------------------------------
// Band constancy

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandRegime {
    /// Satisfied at all but boundedly many positions.
    Tracks,
    /// Satisfied at boundedly many positions.
    Vanishes,
    /// `alpha = 2 beta`: the defining line runs along the band.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BandPsiReport {
    pub alpha: i64,
    pub beta: i64,
    pub regime: BandRegime,
    /// Largest deviation allowed by the band geometry; `None` on the boundary.
    pub geometric_bound: Option<u64>,
    /// Largest observed `max_i (i - #ψ)` when tracking, or `max_i #ψ` when vanishing.
    pub observed: u64,
    /// On the boundary: smallest deviation from either regime, per sampled string.
    pub boundary_deviation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BandReport {
    pub k: u32,
    pub min_len: usize,
    pub max_len: usize,
    pub samples_per_length: usize,
    pub seed: u64,
    pub strings_checked: usize,
    pub psis: Vec<BandPsiReport>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize)]
#[error("{alpha} #a > {beta} #true deviates by {observed} > {bound} on `{word}`")]
pub struct BandViolation {
    pub alpha: i64,
    pub beta: i64,
    pub word: String,
    pub observed: u64,
    pub bound: u64,
}

fn regime(alpha: i64, beta: i64) -> BandRegime {
    match (alpha - 2 * beta).signum() {
        1 => BandRegime::Tracks,
        -1 => BandRegime::Vanishes,
        _ => BandRegime::Boundary,
    }
}

/// At height `d = #a - #b` and length `i`, the formula holds iff
/// `(alpha - 2 beta) i > -alpha d`; the band confines `d` to `[0, k]`.
fn geometric_bound(alpha: i64, beta: i64, k: u32) -> Option<u64> {
    let slope = alpha - 2 * beta;
    let reach = alpha.unsigned_abs() * k as u64;
    match regime(alpha, beta) {
        BandRegime::Boundary => None,
        // True only while i < alpha d / (2 beta - alpha).
        BandRegime::Vanishes if alpha > 0 => {
            Some(reach.div_ceil(slope.unsigned_abs()).saturating_sub(1))
        }
        // False only while i <= -alpha d / (alpha - 2 beta).
        BandRegime::Tracks if alpha < 0 => Some(reach / slope.unsigned_abs()),
        _ => Some(0),
    }
}

/// Samples `D_k` words with lengths in `min_len..=max_len` and measures how far
/// each inner formula's count strays from `i` or from 0.
///
/// Besides random words, every length includes `(ab)^*` and the deepest
/// staircase `(a^k b^k)^*` prefix pattern when they fit.
pub fn band_constancy_check(
    psis: &[(i64, i64)],
    k: u32,
    min_len: usize,
    max_len: usize,
    samples_per_length: usize,
    seed: u64,
) -> Result<BandReport, BandViolation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<Vec<usize>> = Vec::new();
    for len in (min_len.max(1)..=max_len).filter(|l| l % 2 == 0) {
        words.push((0..len).map(|i| i % 2).collect());
        let kk = k as usize;
        if len % (2 * kk) == 0 {
            words.push((0..len).map(|i| usize::from(i % (2 * kk) >= kk)).collect());
        }
        for _ in 0..samples_per_length {
            words.extend(sample_dyck_word(k, len, &mut rng));
        }
    }
    let mut reports = Vec::new();
    for &(alpha, beta) in psis {
        let reg = regime(alpha, beta);
        let bound = geometric_bound(alpha, beta, k);
        let mut observed = 0u64;
        let mut boundary_dev: Option<u64> = None;
        for w in &words {
            let truth = psi_truth(alpha, beta, w);
            let mut c = 0u64;
            let (mut miss, mut hit) = (0u64, 0u64);
            for (i, &t) in truth.iter().enumerate() {
                c += u64::from(t);
                miss = miss.max(i as u64 + 1 - c);
                hit = hit.max(c);
            }
            let dev = match reg {
                BandRegime::Tracks => miss,
                BandRegime::Vanishes => hit,
                BandRegime::Boundary => {
                    let d = miss.min(hit);
                    boundary_dev = Some(boundary_dev.map_or(d, |b| b.max(d)));
                    d
                }
            };
            observed = observed.max(dev);
            if let Some(b) = bound {
                if dev > b {
                    return Err(BandViolation {
                        alpha,
                        beta,
                        word: render_word(&ab(), w),
                        observed: dev,
                        bound: b,
                    });
                }
            }
        }
        reports.push(BandPsiReport {
            alpha,
            beta,
            regime: reg,
            geometric_bound: bound,
            observed,
            boundary_deviation: boundary_dev,
        });
    }
    Ok(BandReport {
        k,
        min_len,
        max_len,
        samples_per_length,
        seed,
        strings_checked: words.len(),
        psis: reports,
    })
}

// ---------------------------------------------------------------------------
// Separation sweep

/// Longest word searched for a disagreement with `D_k`.
pub const SEPARATION_MAX_LEN: usize = 24;

/// Inner formulas allowed with parameter bound `t`.
pub fn psi_options(t: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for beta in -t..=t {
        for alpha in -t..=t {
            if ratio_in_unit_interval(alpha, beta) {
                out.push((alpha, beta));
            }
        }
    }
    out
}

/// Every restricted program with parameter bound `t`.
pub fn restricted_grid(t: i64) -> Vec<RestrictedProgram> {
    let options = psi_options(t);
    let mut out = Vec::new();
    let max_k = (t * t).min(options.len() as i64) as usize;
    for mask in 1u64..(1u64 << options.len()) {
        let chosen: Vec<(i64, i64)> = (0..options.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| options[i])
            .collect();
        if chosen.len() > max_k {
            continue;
        }
        let mut lambdas = vec![-t; chosen.len()];
        loop {
            let sum: i64 = lambdas.iter().sum();
            for z in 0..=t.min(sum - 1) {
                let terms = chosen
                    .iter()
                    .zip(&lambdas)
                    .map(|(&(alpha, beta), &lambda)| PsiTerm {
                        alpha,
                        beta,
                        lambda,
                    })
                    .collect();
                out.push(RestrictedProgram { z, terms });
            }
            if !advance(&mut lambdas, -t, t) {
                break;
            }
        }
    }
    out
}

fn advance(digits: &mut [i64], lo: i64, hi: i64) -> bool {
    for d in digits.iter_mut() {
        if *d < hi {
            *d += 1;
            return true;
        }
        *d = lo;
    }
    false
}

/// `budget` programs drawn evenly across the number of inner formulas.
pub fn sample_restricted(t: i64, budget: usize, seed: u64) -> Vec<RestrictedProgram> {
    let options = psi_options(t);
    let max_k = (t * t).min(options.len() as i64) as usize;
    if max_k == 0 || budget == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for k in 1..=max_k {
        let quota = budget / max_k + usize::from(k <= budget % max_k);
        let mut attempts = 0;
        while out
            .iter()
            .filter(|r: &&RestrictedProgram| r.terms.len() == k)
            .count()
            < quota
            && attempts < 100 * quota
        {
            attempts += 1;
            let mut chosen = options.clone();
            chosen.shuffle(&mut rng);
            chosen.truncate(k);
            chosen.sort();
            let terms: Vec<PsiTerm> = chosen
                .into_iter()
                .map(|(alpha, beta)| PsiTerm {
                    alpha,
                    beta,
                    lambda: rng.gen_range(-t..=t),
                })
                .collect();
            let z = rng.gen_range(0..=t);
            if let Ok(r) = RestrictedProgram::new(t, z, terms) {
                if seen.insert(r.clone()) {
                    out.push(r);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeparationResult {
    pub program: RestrictedProgram,
    pub per_psi_distinct: bool,
    pub globally_distinct: bool,
    /// Shortest, then lexicographically least, disagreement with `D_k`.
    pub witness: Option<String>,
    pub length: Option<usize>,
    /// Whether the restricted program accepts the witness.
    pub program_accepts: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeparationReport {
    pub k: u32,
    pub t: i64,
    pub seed: u64,
    pub budget: usize,
    pub exhaustive: bool,
    pub max_len: usize,
    pub programs: usize,
    pub survivors: usize,
    pub results: Vec<SeparationResult>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SeparationError {
    #[error("witness `{word}` is not a disagreement under direct evaluation")]
    Unverified { word: String },
}

/// Searches each program of the class for a word of length at most 24 on
/// which it disagrees with `D_k`. The grid is exhaustive when it has at most
/// `budget` members, and a seeded stratified sample otherwise.
pub fn separation_experiment(
    k: u32,
    t: i64,
    budget: usize,
    seed: u64,
    jobs: usize,
) -> Result<SeparationReport, SeparationError> {
    let grid = restricted_grid_if_small(t, budget);
    let exhaustive = grid.is_some();
    let programs = grid.unwrap_or_else(|| sample_restricted(t, budget, seed));
    let dyck = dyck_program(k);
    let alphabet = ab();
    let check = |r: &RestrictedProgram| -> Result<SeparationResult, SeparationError> {
        let prog = r.to_program();
        let diff = disagreement_program(&prog, &dyck).expect("shared alphabet");
        let rep = find_witness(&diff, SEPARATION_MAX_LEN, 1);
        let mut program_accepts = None;
        if let Some(w) = &rep.witness {
            let direct = restricted_semantics(r, w);
            let consistent = direct == accepts(&prog, w) && dyck_oracle(k, w) == accepts(&dyck, w);
            if !consistent || direct == dyck_oracle(k, w) {
                return Err(SeparationError::Unverified {
                    word: render_word(&alphabet, w),
                });
            }
            program_accepts = Some(direct);
        }
        Ok(SeparationResult {
            program: r.clone(),
            per_psi_distinct: r.per_psi_distinct(),
            globally_distinct: r.globally_distinct(),
            witness: rep.witness.as_ref().map(|w| render_word(&alphabet, w)),
            length: rep.witness.as_ref().map(|w| w.len()),
            program_accepts,
        })
    };
    let results: Vec<SeparationResult> = with_jobs(jobs, || {
        programs
            .par_iter()
            .map(check)
            .collect::<Result<Vec<_>, _>>()
    })?;
    let survivors = results.iter().filter(|r| r.witness.is_none()).count();
    Ok(SeparationReport {
        k,
        t,
        seed,
        budget,
        exhaustive,
        max_len: SEPARATION_MAX_LEN,
        programs: results.len(),
        survivors,
        results,
    })
}

fn restricted_grid_if_small(t: i64, budget: usize) -> Option<Vec<RestrictedProgram>> {
    if t <= 2 {
        return Some(restricted_grid(t));
    }
    // Grid size grows like (2t+2)^|options|; only enumerate when cheap.
    let options = psi_options(t).len() as u32;
    let estimate = ((2 * t + 2) as u64).saturating_pow(options) * (t as u64 + 1);
    (estimate <= budget as u64).then(|| restricted_grid(t))
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

// ---------------------------------------------------------------------------
// Finite identification

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hypothesis {
    pub name: String,
    #[serde(skip)]
    pub program: Program,
    pub size: u64,
}

/// Ordered candidate programs over one alphabet, each within a size budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisSet {
    pub alphabet: Vec<String>,
    pub budget: u64,
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HypothesisError {
    #[error("hypothesis set is empty")]
    Empty,
    #[error("hypothesis `{0}` uses a different alphabet")]
    Alphabet(String),
    #[error("hypothesis `{name}` has size {size}, over the budget {budget}")]
    OverBudget {
        name: String,
        size: u64,
        budget: u64,
    },
}

impl HypothesisSet {
    pub fn new(
        programs: Vec<(String, Program)>,
        budget: u64,
    ) -> Result<HypothesisSet, HypothesisError> {
        let alphabet = programs
            .first()
            .ok_or(HypothesisError::Empty)?
            .1
            .alphabet
            .clone();
        let mut hypotheses = Vec::new();
        for (name, program) in programs {
            if program.alphabet != alphabet {
                return Err(HypothesisError::Alphabet(name));
            }
            let size = measure(&program).size;
            if size > budget {
                return Err(HypothesisError::OverBudget { name, size, budget });
            }
            hypotheses.push(Hypothesis {
                name,
                program,
                size,
            });
        }
        Ok(HypothesisSet {
            alphabet,
            budget,
            hypotheses,
        })
    }

    /// `exact_count_program(n)` for each `n` in `ns`, with the budget set to the largest size.
    pub fn exact_counts(ns: impl IntoIterator<Item = u64>) -> HypothesisSet {
        let programs: Vec<(String, Program)> = ns
            .into_iter()
            .map(|n| (format!("P{n}"), exact_count_program(n)))
            .collect();
        let budget = programs
            .iter()
            .map(|(_, p)| measure(p).size)
            .max()
            .unwrap_or(0);
        HypothesisSet::new(programs, budget).expect("shared alphabet within budget")
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentifyReport {
    pub n: usize,
    /// Positive examples: accepted non-empty words of length at most `n`.
    pub training: Vec<String>,
    /// Indices of hypotheses whose language matches the oracle on every word up to `n`.
    pub consistent: Vec<usize>,
    /// Smallest consistent hypothesis, earliest on ties.
    pub chosen: usize,
    pub chosen_name: String,
    /// More than one hypothesis fits the data.
    pub ambiguous: bool,
    /// Whether `n` reaches the pairwise length complexity of the set, so that
    /// every consistent hypothesis has the target language. `None` until
    /// [`IdentifyReport::with_guarantee`] is applied.
    pub guaranteed: Option<bool>,
}

impl IdentifyReport {
    pub fn with_guarantee(mut self, pairs: &PairwiseReport) -> IdentifyReport {
        let reached = pairs.complexity.is_none_or(|c| self.n >= c);
        self.guaranteed = Some(pairs.unresolved.is_empty() && reached);
        self
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("no hypothesis matches the target on words up to length {n}")]
pub struct NoConsistentHypothesis {
    pub n: usize,
}

/// Queries `oracle` on every non-empty word up to length `n` and returns the
/// smallest hypothesis whose language agrees on all of them.
pub fn finite_identify(
    h: &HypothesisSet,
    oracle: &(dyn Fn(&[usize]) -> bool + Sync),
    n: usize,
) -> Result<IdentifyReport, NoConsistentHypothesis> {
    let k = h.alphabet.len();
    let words: Vec<Vec<usize>> = words_up_to(k, n).collect();
    let labels: Vec<bool> = words.par_iter().map(|w| oracle(w)).collect();
    let consistent: Vec<usize> = (0..h.len())
        .into_par_iter()
        .filter(|&i| {
            let p = &h.hypotheses[i].program;
            words.iter().zip(&labels).all(|(w, &l)| accepts(p, w) == l)
        })
        .collect();
    let chosen = *consistent
        .iter()
        .min_by_key(|&&i| (h.hypotheses[i].size, i))
        .ok_or(NoConsistentHypothesis { n })?;
    Ok(IdentifyReport {
        n,
        training: words
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l)
            .map(|(w, _)| render_word(&h.alphabet, w))
            .collect(),
        ambiguous: consistent.len() > 1,
        guaranteed: None,
        chosen_name: h.hypotheses[chosen].name.clone(),
        consistent,
        chosen,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairDistance {
    pub left: usize,
    pub right: usize,
    /// Shortest word in `L(left)` but not `L(right)`.
    pub left_only: Option<String>,
    pub left_only_len: Option<usize>,
    /// Shortest word in `L(right)` but not `L(left)`.
    pub right_only: Option<String>,
    pub right_only_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairwiseReport {
    pub max_len: usize,
    /// Largest one-sided shortest difference over all ordered pairs where one was found.
    pub complexity: Option<usize>,
    pub pairs: Vec<PairDistance>,
    /// Pairs with no difference in either direction up to `max_len`.
    pub unresolved: Vec<(usize, usize)>,
}

/// For every pair of hypotheses, the shortest words separating them in each
/// direction, searched up to `max_len`.
pub fn pairwise_length_complexity(
    h: &HypothesisSet,
    max_len: usize,
    jobs: usize,
) -> PairwiseReport {
    let pairs: Vec<(usize, usize)> = (0..h.len())
        .flat_map(|i| (i + 1..h.len()).map(move |j| (i, j)))
        .collect();
    let shortest = |p: &Program, q: &Program| -> Option<Vec<usize>> {
        let d = difference_program(p, q).expect("shared alphabet");
        find_witness(&d, max_len, 1).witness
    };
    let distances: Vec<PairDistance> = with_jobs(jobs, || {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let (p, q) = (&h.hypotheses[i].program, &h.hypotheses[j].program);
                let l = shortest(p, q);
                let r = shortest(q, p);
                PairDistance {
                    left: i,
                    right: j,
                    left_only_len: l.as_ref().map(Vec::len),
                    left_only: l.map(|w| render_word(&h.alphabet, &w)),
                    right_only_len: r.as_ref().map(Vec::len),
                    right_only: r.map(|w| render_word(&h.alphabet, &w)),
                }
            })
            .collect()
    });
    let complexity = distances
        .iter()
        .flat_map(|d| [d.left_only_len, d.right_only_len])
        .flatten()
        .max();
    let unresolved = distances
        .iter()
        .filter(|d| d.left_only_len.is_none() && d.right_only_len.is_none())
        .map(|d| (d.left, d.right))
        .collect();
    PairwiseReport {
        max_len,
        complexity,
        pairs: distances,
        unresolved,
    }
}

/// Whether two programs agree on every non-empty word up to `max_len`.
pub fn agree_up_to(p: &Program, q: &Program, max_len: usize) -> bool {
    let d = disagreement_program(p, q).expect("shared alphabet");
    !find_witness(&d, max_len, 1).found()
}

/// Distinct symbols of the alphabet in a set, for reports.
pub fn alphabet_set(p: &Program) -> BTreeSet<String> {
    p.alphabet.iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::word::parse_word;

    fn w(s: &str) -> Vec<usize> {
        parse_word(&ab(), s).unwrap()
    }

    #[test]
    fn dyck_examples() {
        let d1 = dyck_program(1);
        assert!(accepts(&d1, &w("abab")));
        assert!(!accepts(&d1, &w("aabb")));
        assert!(dyck_oracle(1, &w("abab")) && !dyck_oracle(1, &w("aabb")));
        for k in 1..=4 {
            assert!(!accepts(&dyck_program(k), &w("ba")));
        }
        let m = measure(&dyck_program(4));
        assert_eq!((m.depth, m.girth, m.precision), (2, 2, 2));
    }

    #[test]
    fn dyck_text_round_trips() {
        let p = dyck_program(4);
        assert_eq!(parse_program(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn dyck_matches_oracle_small() {
        for k in 1..=3 {
            let p = dyck_program(k);
            for word in words_up_to(2, 10) {
                assert_eq!(accepts(&p, &word), dyck_oracle(k, &word), "k={k}");
            }
        }
    }

    #[test]
    fn sampled_words_are_dyck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..=3 {
            for len in [2, 6, 12, 20] {
                let word = sample_dyck_word(k, len, &mut rng).unwrap();
                assert_eq!(word.len(), len);
                assert!(dyck_oracle(k, &word));
            }
        }
        assert!(sample_dyck_word(2, 5, &mut rng).is_none());
    }

    #[test]
    fn restricted_validation() {
        let t = |alpha, beta, lambda| PsiTerm {
            alpha,
            beta,
            lambda,
        };
        assert!(RestrictedProgram::new(2, 0, vec![t(1, 2, 1)]).is_ok());
        assert!(RestrictedProgram::new(2, 0, vec![t(-1, -2, 1)]).is_ok());
        assert!(matches!(
            RestrictedProgram::new(2, 0, vec![t(2, 1, 1)]),
            Err(RestrictedError::Ratio { .. })
        ));
        assert!(matches!(
            RestrictedProgram::new(2, 1, vec![t(1, 2, 1)]),
            Err(RestrictedError::Weights { .. })
        ));
        assert!(matches!(
            RestrictedProgram::new(2, 3, vec![t(1, 2, 1)]),
            Err(RestrictedError::Threshold { .. })
        ));
        assert!(matches!(
            RestrictedProgram::new(1, 0, vec![t(1, 2, 1)]),
            Err(RestrictedError::Range { .. })
        ));
    }

    #[test]
    fn majority_semantics() {
        let r = RestrictedProgram::unchecked(
            0,
            vec![PsiTerm {
                alpha: 2,
                beta: 1,
                lambda: 1,
            }],
        );
        // Prefixes of "abab" with a strict a-majority: "a" and "aba".
        assert_eq!(psi_truth(2, 1, &w("abab")), vec![true, false, true, false]);
        assert!(restricted_semantics(&r, &w("aab")));
        let prog = r.to_program();
        for word in words_up_to(2, 8) {
            assert_eq!(restricted_semantics(&r, &word), accepts(&prog, &word));
        }
    }

    #[test]
    fn never_satisfied_rejects_everything() {
        // 1 #a > 2 #true never holds, and z = sum - 1 leaves nothing to exceed.
        let r = RestrictedProgram::new(
            2,
            0,
            vec![PsiTerm {
                alpha: 1,
                beta: 2,
                lambda: 1,
            }],
        )
        .unwrap();
        assert!(words_up_to(2, 8).all(|word| !restricted_semantics(&r, &word)));
        let rep = separation_experiment(1, 2, 100, 0, 1).unwrap();
        let hit = rep.results.iter().find(|x| x.program == r).unwrap();
        assert_eq!(hit.witness.as_deref(), Some("ab"));
    }

    #[test]
    fn grid_members_are_valid() {
        let g = restricted_grid(2);
        assert!(!g.is_empty());
        for r in &g {
            assert!(RestrictedProgram::new(2, r.z, r.terms.clone()).is_ok());
        }
        assert!(restricted_grid(1).is_empty());
        let s = sample_restricted(3, 30, 7);
        assert_eq!(s.len(), 30);
        assert_eq!(s, sample_restricted(3, 30, 7));
    }

    #[test]
    fn band_regimes() {
        let rep = band_constancy_check(&[(2, 1)], 2, 2, 20, 5, 1).unwrap();
        assert_eq!(rep.psis[0].regime, BandRegime::Boundary);
        let rep = band_constancy_check(&[(-1, -3), (1, 3)], 1, 2, 30, 5, 1).unwrap();
        assert_eq!(rep.psis[0].regime, BandRegime::Tracks);
        assert_eq!(rep.psis[1].regime, BandRegime::Vanishes);
        assert_eq!(rep.psis[1].observed, 0);
        let empty = band_constancy_check(&[(1, 2)], 1, 5, 4, 5, 1).unwrap();
        assert_eq!(empty.strings_checked, 0);
    }

    #[test]
    fn band_bound_on_staircase() {
        // 3 #a > 2 #true holds iff i < 3d; on a^3 b^3 the heights are 1 2 3 2 1 0,
        // so it holds at positions 1..=4.
        let rep = band_constancy_check(&[(3, 2)], 3, 6, 6, 0, 0).unwrap();
        let p = &rep.psis[0];
        assert_eq!(p.regime, BandRegime::Vanishes);
        assert_eq!(p.observed, 4);
        assert_eq!(p.geometric_bound, Some(8));
    }

    #[test]
    fn identification_examples() {
        let ge = |n: u64| parse_program(&format!("alphabet a b\ng := #[Qa] >= {n}")).unwrap();
        let h =
            HypothesisSet::new((1..=3).map(|n| (format!("ge{n}"), ge(n))).collect(), 1000).unwrap();
        let target = ge(2);
        let rep = finite_identify(&h, &|w: &[usize]| accepts(&target, w), 3).unwrap();
        assert_eq!((rep.chosen, rep.ambiguous), (1, false));
        let rep0 = finite_identify(&h, &|w: &[usize]| accepts(&target, w), 0).unwrap();
        assert!(rep0.ambiguous);
        assert_eq!(rep0.consistent.len(), 3);

        let two = HypothesisSet::new(
            vec![
                (
                    "a2".into(),
                    parse_program("alphabet a b\ng := #[Qa] >= 2").unwrap(),
                ),
                (
                    "b2".into(),
                    parse_program("alphabet a b\ng := #[Qb] >= 2").unwrap(),
                ),
            ],
            100,
        )
        .unwrap();
        assert_eq!(pairwise_length_complexity(&two, 6, 1).complexity, Some(2));

        let dup = HypothesisSet::new(vec![("x".into(), ge(1)), ("y".into(), ge(1))], 100).unwrap();
        let rep = pairwise_length_complexity(&dup, 5, 1);
        assert_eq!(rep.unresolved, vec![(0, 1)]);
        assert_eq!(rep.complexity, None);
    }

    #[test]
    fn budget_and_alphabet_checks() {
        let p = parse_program("alphabet a b\ng := #[Qa] >= 2").unwrap();
        let q = parse_program("alphabet a\ng := #[Qa] >= 2").unwrap();
        assert!(matches!(
            HypothesisSet::new(vec![("p".into(), p.clone()), ("q".into(), q)], 100),
            Err(HypothesisError::Alphabet(_))
        ));
        assert!(matches!(
            HypothesisSet::new(vec![("p".into(), p)], 1),
            Err(HypothesisError::OverBudget { .. })
        ));
        assert!(matches!(
            HypothesisSet::new(vec![], 1),
            Err(HypothesisError::Empty)
        ));
    }
}
