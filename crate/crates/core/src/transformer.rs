//! Future-masked transformers over fixed-precision numbers.
//!
//! Two attention variants are interpreted exactly:
//!
//! * quotient-rounded: `c_i = round(Σ_j a_ij v_j / Σ_j a_ij)`;
//! * weight-rounded: `α_ij = round(a_ij / B_i)`, `c_i = round(Σ_j α_ij v_j)`;
//!
//! where `a_ij = round(exp(q_i · k_j))` and `j` ranges over `<BOS>` and the
//! positions up to `i`. A zero denominator averages the value vectors.
//!
//! The module also translates positive programs into weight-rounded (or
//! quotient-rounded) transformers, and weight-rounded transformers back into
//! positive programs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::{round_exp, FixedError, Format};
use crate::guard::{Guard, GuardError};
use crate::positive::{check_positive, decompose, PositiveError, PositiveProgram};
use crate::syntax::{Cmp, Formula, Line, Program, Term};

pub const BOS: &str = "<BOS>";
/// Lookup-table feedforwards are only accepted up to this `p * d`.
pub const TABLE_PD_CAP: u32 = 6;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransformerError {
    #[error(transparent)]
    Fixed(#[from] FixedError),
    #[error("invalid transformer: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Guard(#[from] GuardError),
    #[error("{0}")]
    Positive(String),
}

impl From<PositiveError> for TransformerError {
    fn from(e: PositiveError) -> Self {
        match e {
            PositiveError::Guard(g) => TransformerError::Guard(g),
            other => TransformerError::Positive(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    QuotientRounded,
    WeightRounded,
}

/// `x ↦ round(W x + b)`, all entries given as mantissas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Affine {
    pub weights: Vec<Vec<i64>>,
    pub bias: Vec<i64>,
}

impl Affine {
    pub fn zero(rows: usize, cols: usize) -> Affine {
        Affine {
            weights: vec![vec![0; cols]; rows],
            bias: vec![0; rows],
        }
    }

    pub fn identity(fmt: Format, d: usize) -> Affine {
        let mut a = Affine::zero(d, d);
        for i in 0..d {
            a.weights[i][i] = 1i64 << fmt.s;
        }
        a
    }

    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    pub fn apply(&self, fmt: Format, x: &[i64]) -> Vec<i64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| {
                let mut acc: i128 = (*b as i128) << fmt.s;
                for (w, xi) in row.iter().zip(x) {
                    acc += *w as i128 * *xi as i128;
                }
                fmt.round_scaled(acc, fmt.s).m
            })
            .collect()
    }

    fn check(
        &self,
        fmt: Format,
        rows: usize,
        cols: usize,
        what: &str,
    ) -> Result<(), TransformerError> {
        if self.bias.len() != rows
            || self.weights.len() != rows
            || self.weights.iter().any(|r| r.len() != cols)
        {
            return Err(TransformerError::Invalid(format!(
                "{what} must be {rows}x{cols}"
            )));
        }
        for &m in self.weights.iter().flatten().chain(&self.bias) {
            fmt.mantissa(m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feedforward {
    Identity,
    /// `round(W2 relu(round(W1 x + b1)) + b2)`.
    Mlp {
        hidden: Affine,
        output: Affine,
    },
    /// Explicit map; inputs not listed are left unchanged.
    Table {
        entries: Vec<(Vec<i64>, Vec<i64>)>,
    },
}

impl Feedforward {
    pub fn apply(&self, fmt: Format, x: &[i64]) -> Vec<i64> {
        match self {
            Feedforward::Identity => x.to_vec(),
            Feedforward::Mlp { hidden, output } => {
                let h: Vec<i64> = hidden.apply(fmt, x).into_iter().map(|v| v.max(0)).collect();
                output.apply(fmt, &h)
            }
            Feedforward::Table { entries } => entries
                .iter()
                .find(|(k, _)| k.as_slice() == x)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| x.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub feedforward: Feedforward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub variant: Variant,
    pub format: Format,
    pub dimension: usize,
    pub depth: usize,
    pub alphabet: Vec<String>,
    /// One vector per symbol and for `<BOS>`.
    pub embeddings: BTreeMap<String, Vec<i64>>,
    pub layers: Vec<Layer>,
    /// `d -> 1` map; the word is accepted when its value is positive.
    pub output: Affine,
}

impl TransformerSpec {
    pub fn validate(&self) -> Result<(), TransformerError> {
        let fmt = Format::new(self.format.p, self.format.s)?;
        let d = self.dimension;
        if self.depth != self.layers.len() {
            return Err(TransformerError::Invalid(format!(
                "depth {} but {} layers",
                self.depth,
                self.layers.len()
            )));
        }
        for sym in self.alphabet.iter().map(String::as_str).chain([BOS]) {
            let e = self
                .embeddings
                .get(sym)
                .ok_or_else(|| TransformerError::Invalid(format!("no embedding for `{sym}`")))?;
            if e.len() != d {
                return Err(TransformerError::Invalid(format!(
                    "embedding of `{sym}` must have length {d}"
                )));
            }
            for &m in e {
                fmt.mantissa(m)?;
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.query.check(fmt, d, d, &format!("layer {i} query"))?;
            l.key.check(fmt, d, d, &format!("layer {i} key"))?;
            l.value.check(fmt, d, d, &format!("layer {i} value"))?;
            match &l.feedforward {
                Feedforward::Identity => {}
                Feedforward::Mlp { hidden, output } => {
                    hidden.check(fmt, hidden.rows(), d, &format!("layer {i} hidden"))?;
                    output.check(fmt, d, hidden.rows(), &format!("layer {i} output"))?;
                }
                Feedforward::Table { entries } => {
                    if fmt.p * d as u32 > TABLE_PD_CAP {
                        return Err(TransformerError::Invalid(format!(
                            "lookup tables need p*d <= {TABLE_PD_CAP}"
                        )));
                    }
                    for (k, v) in entries {
                        if k.len() != d || v.len() != d {
                            return Err(TransformerError::Invalid(format!(
                                "layer {i} table entry has wrong length"
                            )));
                        }
                        for &m in k.iter().chain(v) {
                            fmt.mantissa(m)?;
                        }
                    }
                }
            }
        }
        self.output.check(fmt, 1, d, "output")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<TransformerSpec, TransformerError> {
        let t: TransformerSpec =
            serde_json::from_str(text).map_err(|e| TransformerError::Invalid(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    fn embed(&self, sym: &str) -> Vec<i64> {
        self.embeddings[sym].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerTrace {
    pub q: Vec<Vec<i64>>,
    pub k: Vec<Vec<i64>>,
    pub v: Vec<Vec<i64>>,
    /// `q_i · k_j * 2^(2s)`, for `j <= i`.
    pub scores: Vec<Vec<i128>>,
    /// `round(exp(s_ij))` mantissas.
    pub exp_weights: Vec<Vec<i64>>,
    /// `Σ_j round(exp(s_ij))` mantissa.
    pub denominators: Vec<i128>,
    /// Rounded attention weights; weight-rounded variant only.
    pub alpha: Option<Vec<Vec<i64>>>,
    pub c: Vec<Vec<i64>>,
    pub h: Vec<Vec<i64>>,
}

/// Activations on `<BOS> w`; index 0 is `<BOS>`. Every entry is a mantissa.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActivationTrace {
    pub format: Format,
    pub embeddings: Vec<Vec<i64>>,
    pub layers: Vec<LayerTrace>,
    pub outputs: Vec<i64>,
    pub accepts: Vec<bool>,
}

impl ActivationTrace {
    /// Acceptance of the whole word: the output at its last position.
    pub fn accepted(&self) -> bool {
        *self.accepts.last().expect("trace includes <BOS>")
    }
}

fn dot(a: &[i64], b: &[i64]) -> i128 {
    a.iter().zip(b).map(|(x, y)| *x as i128 * *y as i128).sum()
}

fn exp_weight(fmt: Format, score_num: i128) -> Result<i64, FixedError> {
    let x = BigRational::new(BigInt::from(score_num), BigInt::from(1) << (2 * fmt.s));
    Ok(round_exp(&x, fmt)?.m)
}

/// Runs `t` on `<BOS> word`; `word` holds symbol indices into `t.alphabet`.
pub fn run_transformer(
    t: &TransformerSpec,
    word: &[usize],
) -> Result<ActivationTrace, TransformerError> {
    let fmt = t.format;
    let mut h: Vec<Vec<i64>> = Vec::with_capacity(word.len() + 1);
    h.push(t.embed(BOS));
    for &i in word {
        let sym = t
            .alphabet
            .get(i)
            .ok_or_else(|| TransformerError::Invalid(format!("symbol index {i} out of range")))?;
        h.push(t.embed(sym));
    }
    let embeddings = h.clone();
    let n = h.len();
    let mut layers = Vec::with_capacity(t.layers.len());
    let mut cache: HashMap<i128, i64> = HashMap::new();
    for layer in &t.layers {
        let q: Vec<Vec<i64>> = h.iter().map(|x| layer.query.apply(fmt, x)).collect();
        let k: Vec<Vec<i64>> = h.iter().map(|x| layer.key.apply(fmt, x)).collect();
        let v: Vec<Vec<i64>> = h.iter().map(|x| layer.value.apply(fmt, x)).collect();
        let mut scores = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut denominators = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n);
        let mut cs = Vec::with_capacity(n);
        for i in 0..n {
            let s_row: Vec<i128> = (0..=i).map(|j| dot(&q[i], &k[j])).collect();
            let mut a_row = Vec::with_capacity(i + 1);
            for &s in &s_row {
                let a = match cache.get(&s) {
                    Some(&a) => a,
                    None => {
                        let a = exp_weight(fmt, s)?;
                        cache.insert(s, a);
                        a
                    }
                };
                a_row.push(a);
            }
            let b: i128 = a_row.iter().map(|&a| a as i128).sum();
            let d = t.dimension;
            let (c, alpha) = if b == 0 {
                let c: Vec<i64> = (0..d)
                    .map(|col| {
                        let s: i128 = (0..=i).map(|j| v[j][col] as i128).sum();
                        fmt.saturate(s.div_euclid(i as i128 + 1)).m
                    })
                    .collect();
                (c, None)
            } else {
                match t.variant {
                    Variant::QuotientRounded => {
                        let c = (0..d)
                            .map(|col| {
                                let s: i128 =
                                    (0..=i).map(|j| a_row[j] as i128 * v[j][col] as i128).sum();
                                fmt.saturate(s.div_euclid(b)).m
                            })
                            .collect();
                        (c, None)
                    }
                    Variant::WeightRounded => {
                        let alpha: Vec<i64> = a_row
                            .iter()
                            .map(|&a| fmt.saturate(((a as i128) << fmt.s).div_euclid(b)).m)
                            .collect();
                        let c = (0..d)
                            .map(|col| {
                                let s: i128 =
                                    (0..=i).map(|j| alpha[j] as i128 * v[j][col] as i128).sum();
                                fmt.round_scaled(s, fmt.s).m
                            })
                            .collect();
                        (c, Some(alpha))
                    }
                }
            };
            scores.push(s_row);
            weights.push(a_row);
            denominators.push(b);
            alphas.push(alpha);
            cs.push(c);
        }
        let new_h: Vec<Vec<i64>> = (0..n)
            .map(|i| {
                let sum: Vec<i64> = cs[i]
                    .iter()
                    .zip(&h[i])
                    .map(|(c, x)| fmt.saturate(*c as i128 + *x as i128).m)
                    .collect();
                layer.feedforward.apply(fmt, &sum)
            })
            .collect();
        let alpha = match t.variant {
            Variant::WeightRounded => {
                Some(alphas.into_iter().map(|a| a.unwrap_or_default()).collect())
            }
            Variant::QuotientRounded => None,
        };
        layers.push(LayerTrace {
            q,
            k,
            v,
            scores,
            exp_weights: weights,
            denominators,
            alpha,
            c: cs,
            h: new_h.clone(),
        });
        h = new_h;
    }
    let outputs: Vec<i64> = h.iter().map(|x| t.output.apply(fmt, x)[0]).collect();
    let accepts = outputs.iter().map(|&o| o > 0).collect();
    Ok(ActivationTrace {
        format: fmt,
        embeddings,
        layers,
        outputs,
        accepts,
    })
}

/// Whether `t` accepts `<BOS> word`; the empty word is rejected, matching program semantics.
pub fn transformer_accepts(t: &TransformerSpec, word: &[usize]) -> Result<bool, TransformerError> {
    if word.is_empty() {
        return Ok(false);
    }
    Ok(run_transformer(t, word)?.accepted())
}

// ---------------------------------------------------------------------------
// Positive program -> transformer

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    Zero,
    One,
    Sym(usize),
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    /// `#[child] >= k`, `k >= 1`.
    Threshold(usize, u64),
}

struct Circuit {
    nodes: Vec<Node>,
    index: HashMap<Node, usize>,
}

impl Circuit {
    fn add(&mut self, n: Node) -> usize {
        if let Some(&i) = self.index.get(&n) {
            return i;
        }
        self.nodes.push(n.clone());
        self.index.insert(n, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn formula(
        &mut self,
        f: &Formula,
        p: &Program,
        lines: &HashMap<String, usize>,
    ) -> Result<usize, TransformerError> {
        Ok(match f {
            Formula::True => self.add(Node::One),
            Formula::False => self.add(Node::Zero),
            Formula::Atom(s) => {
                let i = p
                    .symbol_index(s)
                    .ok_or_else(|| TransformerError::Invalid(format!("unknown symbol `{s}`")))?;
                self.add(Node::Sym(i))
            }
            Formula::Ref(r) => lines[r.as_str()],
            Formula::Not(a) => {
                let a = self.formula(a, p, lines)?;
                self.add(Node::Not(a))
            }
            Formula::And(a, b) => {
                let a = self.formula(a, p, lines)?;
                let b = self.formula(b, p, lines)?;
                self.add(Node::And(a, b))
            }
            Formula::Or(a, b) => {
                let a = self.formula(a, p, lines)?;
                let b = self.formula(b, p, lines)?;
                self.add(Node::Or(a, b))
            }
            Formula::Lin(c) => match (c.terms.as_slice(), c.cmp) {
                ([(k, Term::Count(psi))], Cmp::Ge) if *k == BigInt::from(1) => {
                    let bound = u64::try_from(&c.bound).map_err(|_| {
                        TransformerError::Unsupported(format!("threshold {} too large", c.bound))
                    })?;
                    let child = self.formula(psi, p, lines)?;
                    if bound == 0 {
                        self.add(Node::One)
                    } else {
                        self.add(Node::Threshold(child, bound))
                    }
                }
                _ => {
                    return Err(TransformerError::Invalid(
                        "constraint is not a single-count threshold".into(),
                    ))
                }
            },
            Formula::Prev(_) | Formula::Hist(_) => {
                return Err(TransformerError::Invalid(
                    "temporal operator in a positive program".into(),
                ))
            }
        })
    }
}

fn bit_length(x: u64) -> u32 {
    64 - x.leading_zeros()
}

/// Weight-rounded transformer simulating `p` at every position.
///
/// Each threshold `#[ψ] >= k` gets its own layer: attention puts weight 1 on
/// `<BOS>` and the ψ-positions and reads the value 1 from `<BOS>`, giving
/// `round(1/(#ψ + 1))`; the feedforward compares it with `round(1/(k + 1))`.
/// With `2^-s <= 1/(k(k+1))` the two reciprocals of neighbouring counts
/// always round apart, and past `2^s` positions the weight rounds to 0,
/// which still reads as "at least k".
pub fn compile_positive_to_transformer(
    p: &PositiveProgram,
    guard: &Guard,
) -> Result<TransformerSpec, TransformerError> {
    compile_positive(p, guard, Variant::WeightRounded)
}

/// Quotient-rounded transformer simulating `p`: the threshold head reads
/// `-k` from `<BOS>` and 1 from every ψ-position, so the attention output is
/// `round((#ψ - k) / (#ψ + 1))`, non-negative exactly when `#ψ >= k`.
pub fn compile_positive_to_quotient_transformer(
    p: &PositiveProgram,
    guard: &Guard,
) -> Result<TransformerSpec, TransformerError> {
    compile_positive(p, guard, Variant::QuotientRounded)
}

fn compile_positive(
    p: &PositiveProgram,
    guard: &Guard,
    variant: Variant,
) -> Result<TransformerSpec, TransformerError> {
    let dec = decompose(p, guard)?;
    let prog = dec.program();
    let mut circuit = Circuit {
        nodes: Vec::new(),
        index: HashMap::new(),
    };
    let mut lines = HashMap::new();
    for l in &prog.lines {
        let id = circuit.formula(&l.formula, prog, &lines)?;
        lines.insert(l.name.clone(), id);
    }
    let acceptor = lines[prog.acceptor().name.as_str()];

    // Only nodes the acceptor depends on.
    let mut live = vec![false; circuit.nodes.len()];
    live[acceptor] = true;
    for i in (0..circuit.nodes.len()).rev() {
        if !live[i] {
            continue;
        }
        match circuit.nodes[i] {
            Node::Not(a) | Node::Threshold(a, _) => live[a] = true,
            Node::And(a, b) | Node::Or(a, b) => {
                live[a] = true;
                live[b] = true;
            }
            _ => {}
        }
    }

    // Layer of each node; thresholds each need a layer of their own.
    let mut layer_of = vec![0usize; circuit.nodes.len()];
    let mut threshold_at: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..circuit.nodes.len() {
        if !live[i] {
            continue;
        }
        layer_of[i] = match circuit.nodes[i] {
            Node::Zero | Node::One | Node::Sym(_) => 0,
            Node::Not(a) => layer_of[a] + 1,
            Node::And(a, b) | Node::Or(a, b) => layer_of[a].max(layer_of[b]) + 1,
            Node::Threshold(a, _) => {
                let mut l = layer_of[a] + 1;
                while threshold_at.contains_key(&l) {
                    l += 1;
                }
                threshold_at.insert(l, i);
                l
            }
        };
    }
    let depth = layer_of[acceptor];

    let kmax = circuit
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| live[*i])
        .filter_map(|(_, n)| match n {
            Node::Threshold(_, k) => Some(*k),
            _ => None,
        })
        .max()
        .unwrap_or(1);
    let s = match variant {
        // 2^s >= k(k+1)
        Variant::WeightRounded => {
            bit_length(kmax.saturating_mul(kmax + 1).saturating_sub(1)).max(1)
        }
        Variant::QuotientRounded => 1,
    };
    let big_l = s as u64 + 2;
    let p_bits = (2 * s + 2)
        .max(s + bit_length(big_l) + 2)
        .max(s + bit_length(kmax) + 2);
    let fmt = Format::new(p_bits, s).map_err(|_| {
        TransformerError::Unsupported(format!("threshold {kmax} needs {p_bits} bits of precision"))
    })?;
    let one = 1i64 << s;

    // Coordinates: 0 = BOS, 1 = constant one off BOS, 2 = attention scratch,
    // then symbols, then circuit nodes.
    const BOS_C: usize = 0;
    const ONE_C: usize = 1;
    const SCRATCH: usize = 2;
    let sym_base = 3;
    let alpha = prog.alphabet.clone();
    let mut coord = vec![usize::MAX; circuit.nodes.len()];
    let mut next = sym_base + alpha.len();
    for i in 0..circuit.nodes.len() {
        if !live[i] {
            continue;
        }
        coord[i] = match circuit.nodes[i] {
            Node::One => ONE_C,
            Node::Sym(k) => sym_base + k,
            _ => {
                next += 1;
                next - 1
            }
        };
    }
    let d = next;

    let mut embeddings = BTreeMap::new();
    let mut bos = vec![0; d];
    bos[BOS_C] = one;
    embeddings.insert(BOS.to_string(), bos);
    for (k, sym) in alpha.iter().enumerate() {
        let mut e = vec![0; d];
        e[ONE_C] = one;
        e[sym_base + k] = one;
        embeddings.insert(sym.clone(), e);
    }

    let mut layers = Vec::with_capacity(depth);
    for l in 1..=depth {
        let mut layer = Layer {
            query: Affine::zero(d, d),
            key: Affine::zero(d, d),
            value: Affine::zero(d, d),
            feedforward: Feedforward::Identity,
        };
        if let Some(&t) = threshold_at.get(&l) {
            let Node::Threshold(psi, k) = circuit.nodes[t] else {
                unreachable!()
            };
            let lm = big_l as i64 * one;
            layer.query.bias[0] = one;
            layer.key.weights[0][coord[psi]] = lm;
            layer.key.weights[0][BOS_C] = lm;
            layer.key.bias[0] = -lm;
            match variant {
                Variant::WeightRounded => layer.value.weights[SCRATCH][BOS_C] = one,
                Variant::QuotientRounded => {
                    layer.value.weights[SCRATCH][BOS_C] = -(k as i64) * one;
                    layer.value.weights[SCRATCH][coord[psi]] = one;
                }
            }
        }
        // Feedforward: carry every coordinate computed so far, add this layer's nodes.
        let mut hidden_rows: Vec<(Vec<i64>, i64)> = Vec::new();
        let mut out_terms: Vec<Vec<(usize, i64)>> = vec![Vec::new(); d];
        let unit = |w: Vec<(usize, i64)>, b: i64, rows: &mut Vec<(Vec<i64>, i64)>| {
            let mut row = vec![0; d];
            for (c, x) in w {
                row[c] += x;
            }
            rows.push((row, b));
            rows.len() - 1
        };
        let mut carried: BTreeSet<usize> = [BOS_C, ONE_C]
            .into_iter()
            .chain(sym_base..sym_base + alpha.len())
            .collect();
        for i in 0..circuit.nodes.len() {
            if live[i] && coord[i] >= sym_base + alpha.len() && layer_of[i] < l {
                carried.insert(coord[i]);
            }
        }
        for &c in &carried {
            let u = unit(vec![(c, one)], 0, &mut hidden_rows);
            out_terms[c].push((u, one));
        }
        for i in 0..circuit.nodes.len() {
            if !live[i] || layer_of[i] != l {
                continue;
            }
            let out = coord[i];
            match circuit.nodes[i] {
                Node::Not(a) => {
                    let u = unit(vec![(coord[a], -one), (BOS_C, -one)], one, &mut hidden_rows);
                    out_terms[out].push((u, one));
                }
                Node::And(a, b) => {
                    let u = unit(
                        vec![(coord[a], one), (coord[b], one)],
                        -one,
                        &mut hidden_rows,
                    );
                    out_terms[out].push((u, one));
                }
                Node::Or(a, b) => {
                    let u1 = unit(vec![(coord[a], one), (coord[b], one)], 0, &mut hidden_rows);
                    let u2 = unit(
                        vec![(coord[a], one), (coord[b], one)],
                        -one,
                        &mut hidden_rows,
                    );
                    out_terms[out].push((u1, one));
                    out_terms[out].push((u2, -one));
                }
                Node::Threshold(_, k) => {
                    let (u1, u2) = match variant {
                        Variant::WeightRounded => {
                            // r = round(1/(k+1)); out = 2^s (relu(r + 2^-s - x) - relu(r - x)).
                            let r = fmt
                                .round(&BigRational::new(1.into(), BigInt::from(k + 1)))
                                .m;
                            (
                                unit(vec![(SCRATCH, -one)], r + 1, &mut hidden_rows),
                                unit(vec![(SCRATCH, -one)], r, &mut hidden_rows),
                            )
                        }
                        Variant::QuotientRounded => (
                            // out = 2^s (relu(x + 2^-s) - relu(x)).
                            unit(vec![(SCRATCH, one)], 1, &mut hidden_rows),
                            unit(vec![(SCRATCH, one)], 0, &mut hidden_rows),
                        ),
                    };
                    out_terms[out].push((u1, one * one));
                    out_terms[out].push((u2, -one * one));
                }
                Node::Zero | Node::One | Node::Sym(_) => {}
            }
        }
        let hcount = hidden_rows.len();
        let hidden = Affine {
            weights: hidden_rows.iter().map(|(r, _)| r.clone()).collect(),
            bias: hidden_rows.iter().map(|(_, b)| *b).collect(),
        };
        let mut output = Affine::zero(d, hcount);
        for (c, terms) in out_terms.iter().enumerate() {
            for &(u, w) in terms {
                output.weights[c][u] += w;
            }
        }
        layer.feedforward = Feedforward::Mlp { hidden, output };
        layers.push(layer);
    }
    let mut output = Affine::zero(1, d);
    output.weights[0][coord[acceptor]] = one;
    let t = TransformerSpec {
        variant,
        format: fmt,
        dimension: d,
        depth,
        alphabet: alpha,
        embeddings,
        layers,
        output,
    };
    t.validate()?;
    Ok(t)
}

// ---------------------------------------------------------------------------
// Weight-rounded transformer -> positive program

/// Calls `f` on every vector `n >= floors` with `Σ weights[i] n[i] <= room`
/// (all weights positive) until `f` returns false.
fn for_each_count_vector(
    weights: &[i128],
    floors: &[u64],
    room: i128,
    f: &mut impl FnMut(&[u64]) -> bool,
) {
    fn go(
        i: usize,
        weights: &[i128],
        floors: &[u64],
        room: i128,
        counts: &mut Vec<u64>,
        f: &mut impl FnMut(&[u64]) -> bool,
    ) -> bool {
        if i == weights.len() {
            return f(counts);
        }
        let mut n = floors[i];
        while weights[i] * n as i128 <= room {
            counts[i] = n;
            if !go(
                i + 1,
                weights,
                floors,
                room - weights[i] * n as i128,
                counts,
                f,
            ) {
                return false;
            }
            n += 1;
        }
        true
    }
    let mut counts = vec![0; weights.len()];
    go(0, weights, floors, room, &mut counts, f);
}

/// Positive program accepting exactly the words `t` accepts.
///
/// Works value by value instead of bit by bit: for every layer it tracks the
/// finite set of activation vectors a position can carry and defines one line
/// per vector. For a query vector `u`, only key vectors with a positive
/// exponential weight matter, and once their weighted count exceeds `2^s`
/// times the largest weight every rounded attention weight is 0; below that
/// the counts are enumerated exactly. All constraints are equalities or
/// lower bounds with non-negative coefficients.
pub fn compile_transformer_to_positive(
    t: &TransformerSpec,
    guard: &Guard,
) -> Result<PositiveProgram, TransformerError> {
    t.validate()?;
    if t.variant != Variant::WeightRounded {
        return Err(TransformerError::Unsupported(
            "only weight-rounded transformers have finitely many attention outcomes".into(),
        ));
    }
    let fmt = t.format;
    let pd = fmt.p as usize * t.dimension;
    if pd > guard.max_pd as usize {
        return Err(GuardError::new("transformer p*d", pd, guard.max_pd).into());
    }
    let bos_trace = run_transformer(t, &[])?;
    let bos_h = |layer: usize| -> Vec<i64> {
        if layer == 0 {
            bos_trace.embeddings[0].clone()
        } else {
            bos_trace.layers[layer - 1].h[0].clone()
        }
    };

    let mut lines: Vec<Line> = Vec::new();
    let mut values: Vec<Vec<i64>> = Vec::new();
    let mut value_lines: Vec<String> = Vec::new();
    let mut by_value: BTreeMap<Vec<i64>, Vec<String>> = BTreeMap::new();
    for sym in &t.alphabet {
        by_value.entry(t.embed(sym)).or_default().push(sym.clone());
    }
    for (i, (v, syms)) in by_value.into_iter().enumerate() {
        let name = format!("h0_{i}");
        lines.push(Line {
            name: name.clone(),
            formula: Formula::disj(syms.into_iter().map(Formula::Atom)),
        });
        values.push(v);
        value_lines.push(name);
    }

    let mut budget = guard.max_tuples;
    let mut exp_cache: HashMap<i128, i64> = HashMap::new();
    for (li, layer) in t.layers.iter().enumerate() {
        let l = li + 1;
        let hb = bos_h(li);
        let keys: Vec<Vec<i64>> = values.iter().map(|v| layer.key.apply(fmt, v)).collect();
        let vals: Vec<Vec<i64>> = values.iter().map(|v| layer.value.apply(fmt, v)).collect();
        let key_b = layer.key.apply(fmt, &hb);
        let val_b = layer.value.apply(fmt, &hb);
        let mut weight = |s: i128| -> Result<i64, TransformerError> {
            if let Some(&a) = exp_cache.get(&s) {
                return Ok(a);
            }
            let a = exp_weight(fmt, s)?;
            exp_cache.insert(s, a);
            Ok(a)
        };
        // Next-layer value -> disjuncts.
        let mut outcomes: BTreeMap<Vec<i64>, Vec<Formula>> = BTreeMap::new();
        for (ui, u) in values.iter().enumerate() {
            let q = layer.query.apply(fmt, u);
            let a_b = weight(dot(&q, &key_b))? as i128;
            let a: Vec<i128> = keys
                .iter()
                .map(|k| weight(dot(&q, k)).map(|x| x as i128))
                .collect::<Result<_, _>>()?;
            if a_b == 0 && a[ui] == 0 {
                return Err(TransformerError::Unsupported(format!(
                    "layer {l}: the attention denominator can vanish"
                )));
            }
            let active: Vec<usize> = (0..values.len()).filter(|&v| a[v] > 0).collect();
            let amax = active.iter().map(|&v| a[v]).chain([a_b]).max().unwrap_or(0);
            let cap = amax << fmt.s;
            let finish = |c: Vec<i64>| -> Vec<i64> {
                let sum: Vec<i64> = c
                    .iter()
                    .zip(u)
                    .map(|(c, x)| fmt.saturate(*c as i128 + *x as i128).m)
                    .collect();
                layer.feedforward.apply(fmt, &sum)
            };
            let here = Formula::Ref(value_lines[ui].clone());
            // Weighted count past the cap: every rounded weight is zero.
            if !active.is_empty() {
                let big = Formula::lin(
                    active
                        .iter()
                        .map(|&v| {
                            (
                                BigInt::from(a[v]),
                                Term::count(Formula::Ref(value_lines[v].clone())),
                            )
                        })
                        .collect(),
                    Cmp::Ge,
                    BigInt::from(cap - a_b + 1),
                );
                outcomes
                    .entry(finish(vec![0; t.dimension]))
                    .or_default()
                    .push(Formula::and(here.clone(), big));
            }
            let weights: Vec<i128> = active.iter().map(|&v| a[v]).collect();
            let floors: Vec<u64> = active.iter().map(|&v| u64::from(v == ui)).collect();
            let room = cap - a_b;
            let mut needed = 0u64;
            for_each_count_vector(&weights, &floors, room, &mut |_| {
                needed += 1;
                needed <= budget
            });
            if needed > budget {
                return Err(GuardError::new(
                    "attention count vectors",
                    guard.max_tuples + 1,
                    guard.max_tuples,
                )
                .into());
            }
            budget -= needed;
            for_each_count_vector(&weights, &floors, room, &mut |counts| {
                let mb: i128 = a_b
                    + weights
                        .iter()
                        .zip(counts)
                        .map(|(&w, &n)| w * n as i128)
                        .sum::<i128>();
                let alpha = |w: i128| (w << fmt.s) / mb;
                let c: Vec<i64> = (0..t.dimension)
                    .map(|col| {
                        let mut s = alpha(a_b) * val_b[col] as i128;
                        for (&v, &n) in active.iter().zip(counts) {
                            s += alpha(a[v]) * vals[v][col] as i128 * n as i128;
                        }
                        fmt.round_scaled(s, fmt.s).m
                    })
                    .collect();
                let cond = Formula::conj(active.iter().zip(counts).map(|(&v, &n)| {
                    Formula::count_cmp(Formula::Ref(value_lines[v].clone()), Cmp::Eq, n)
                }));
                outcomes
                    .entry(finish(c))
                    .or_default()
                    .push(Formula::and(here.clone(), cond));
                true
            });
        }
        let mut next_values = Vec::new();
        let mut next_lines = Vec::new();
        for (j, (v, disjuncts)) in outcomes.into_iter().enumerate() {
            let name = format!("h{l}_{j}");
            lines.push(Line {
                name: name.clone(),
                formula: Formula::disj_balanced(disjuncts),
            });
            next_values.push(v);
            next_lines.push(name);
        }
        if lines.len() > guard.max_lines {
            return Err(GuardError::new("program lines", lines.len(), guard.max_lines).into());
        }
        values = next_values;
        value_lines = next_lines;
    }
    let accepting = values
        .iter()
        .zip(&value_lines)
        .filter(|(v, _)| t.output.apply(fmt, v)[0] > 0)
        .map(|(_, n)| Formula::Ref(n.clone()));
    lines.push(Line {
        name: "accept".into(),
        formula: Formula::disj(accepting),
    });
    let p = Program::new(t.alphabet.clone(), lines)
        .map_err(|e| TransformerError::Invalid(e.to_string()))?;
    Ok(check_positive(&p)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::semantics::accepts;
    use crate::word::words_up_to;

    fn positive(src: &str) -> PositiveProgram {
        check_positive(&parse_program(src).unwrap()).unwrap()
    }

    fn agree(t: &TransformerSpec, p: &Program, max: usize) {
        for w in words_up_to(p.alphabet.len(), max) {
            assert_eq!(
                transformer_accepts(t, &w).unwrap(),
                accepts(p, &w),
                "word {w:?}"
            );
        }
    }

    #[test]
    fn threshold_head() {
        let p = positive("alphabet a b\nout := #[Qa] >= 2");
        let t = compile_positive_to_transformer(&p, &Guard::default()).unwrap();
        assert_eq!(t.variant, Variant::WeightRounded);
        assert!(transformer_accepts(&t, &[0, 0]).unwrap());
        assert!(!transformer_accepts(&t, &[0]).unwrap());
        agree(&t, p.program(), 6);
    }

    #[test]
    fn threshold_three_uses_four_fractional_bits() {
        let p = positive("alphabet a b\nout := #[Qa] >= 3");
        let t = compile_positive_to_transformer(&p, &Guard::default()).unwrap();
        assert_eq!(t.format.s, 4);
        agree(&t, p.program(), 8);
    }

    #[test]
    fn trivial_threshold_accepts_everything() {
        let p = positive("alphabet a b\nout := #[Qa] >= 0");
        let t = compile_positive_to_transformer(&p, &Guard::default()).unwrap();
        agree(&t, p.program(), 4);
    }

    #[test]
    fn quotient_gadget() {
        let p = positive("alphabet a b\nx := #[Qa] >= 2\nout := x and not #[Qb] >= 3");
        let t = compile_positive_to_quotient_transformer(&p, &Guard::default()).unwrap();
        assert_eq!(t.variant, Variant::QuotientRounded);
        agree(&t, p.program(), 7);
    }

    #[test]
    fn json_round_trip() {
        let p = positive("alphabet a b\nout := #[Qa] >= 1 or Qb");
        let t = compile_positive_to_transformer(&p, &Guard::default()).unwrap();
        let back = TransformerSpec::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let mut bad = t.clone();
        bad.output.bias[0] = 1 << 40;
        assert!(TransformerSpec::from_json(&bad.to_json()).is_err());
    }

    fn toy(variant: Variant) -> TransformerSpec {
        let fmt = Format::new(2, 0).unwrap();
        let mut embeddings = BTreeMap::new();
        embeddings.insert(BOS.to_string(), vec![-1]);
        embeddings.insert("a".to_string(), vec![1]);
        embeddings.insert("b".to_string(), vec![0]);
        TransformerSpec {
            variant,
            format: fmt,
            dimension: 1,
            depth: 1,
            alphabet: vec!["a".into(), "b".into()],
            embeddings,
            layers: vec![Layer {
                query: Affine::identity(fmt, 1),
                key: Affine::identity(fmt, 1),
                value: Affine::identity(fmt, 1),
                feedforward: Feedforward::Identity,
            }],
            output: Affine::identity(fmt, 1),
        }
    }

    #[test]
    fn zero_weights_follow_output_bias() {
        let mut t = toy(Variant::WeightRounded);
        let l = &mut t.layers[0];
        for m in [&mut l.query, &mut l.key, &mut l.value] {
            *m = Affine::zero(1, 1);
        }
        t.output = Affine {
            weights: vec![vec![0]],
            bias: vec![1],
        };
        for w in words_up_to(2, 3) {
            assert!(transformer_accepts(&t, &w).unwrap());
        }
        t.output.bias[0] = -1;
        for w in words_up_to(2, 3) {
            assert!(!transformer_accepts(&t, &w).unwrap());
        }
    }

    #[test]
    fn toy_extraction() {
        let t = toy(Variant::WeightRounded);
        let p = compile_transformer_to_positive(&t, &Guard::default()).unwrap();
        agree(&t, p.program(), 6);
    }

    #[test]
    fn washout() {
        // Unit weights everywhere: α = round(1/B) is 0 once B > 2^s.
        let fmt = Format::new(6, 2).unwrap();
        let mut t = toy(Variant::WeightRounded);
        t.format = fmt;
        for e in t.embeddings.values_mut() {
            e[0] = 4;
        }
        t.layers[0].query = Affine::zero(1, 1);
        t.layers[0].key = Affine::zero(1, 1);
        t.layers[0].value = Affine::identity(fmt, 1);
        t.output = Affine::identity(fmt, 1);
        let trace = run_transformer(&t, &[0, 0, 0, 0, 0, 0]).unwrap();
        let alpha = trace.layers[0].alpha.as_ref().unwrap();
        for (i, row) in alpha.iter().enumerate() {
            let b = i as i128 + 1;
            assert_eq!(trace.layers[0].denominators[i], b << 2);
            for &x in row {
                // floor(2^s / B) in units of 2^-s
                assert_eq!(x as i128, (1i128 << 2) / b);
                if b > 4 {
                    assert_eq!(x, 0);
                }
            }
        }
    }

    #[test]
    fn round_trip_through_transformer() {
        let p = positive("alphabet a b\nout := #[Qa] >= 1");
        let t = compile_positive_to_transformer(&p, &Guard::default()).unwrap();
        assert_eq!(t.format.s, 1);
        let guard = Guard {
            max_pd: 64,
            ..Guard::default()
        };
        let back = compile_transformer_to_positive(&t, &guard).unwrap();
        for w in words_up_to(2, 6) {
            assert_eq!(
                accepts(back.program(), &w),
                accepts(p.program(), &w),
                "{w:?}"
            );
        }
        assert!(compile_transformer_to_positive(&t, &Guard::default()).is_err());
    }
}
