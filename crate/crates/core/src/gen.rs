//! Seeded random generators for programs, words and small transformers.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::fixed::Format;
use crate::syntax::{formula_depth, Cmp, Formula, Line, Program, Term};
use crate::transformer::{Affine, Feedforward, Layer, TransformerSpec, Variant, BOS};

/// Knobs for [`random_program`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramShape {
    pub alphabet_size: usize,
    pub max_lines: usize,
    pub max_depth: u32,
    /// Largest absolute coefficient, constant or bound.
    pub max_const: i64,
    pub max_girth: usize,
    /// Allow `PREV` and `HIST`.
    pub temporal: bool,
    /// Allow conditional terms.
    pub conditionals: bool,
    /// Allow negative coefficients, constants and bounds.
    pub negative: bool,
    /// Node budget per line formula.
    pub max_nodes: usize,
}

impl ProgramShape {
    /// Full syntax, depth at most 3.
    pub fn general(alphabet_size: usize) -> ProgramShape {
        ProgramShape {
            alphabet_size,
            max_lines: 4,
            max_depth: 3,
            max_const: 3,
            max_girth: 3,
            temporal: true,
            conditionals: true,
            negative: true,
            max_nodes: 10,
        }
    }

    /// Positive fragment with precision at most 3 and girth at most 2.
    pub fn positive(alphabet_size: usize) -> ProgramShape {
        ProgramShape {
            alphabet_size,
            max_lines: 3,
            max_depth: 2,
            max_const: 8,
            max_girth: 2,
            temporal: false,
            conditionals: false,
            negative: false,
            max_nodes: 8,
        }
    }
}

pub fn alphabet(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .collect()
}

pub fn random_word(rng: &mut impl Rng, k: usize, max_len: usize) -> Vec<usize> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

struct Builder<'a, R> {
    rng: &'a mut R,
    shape: &'a ProgramShape,
    symbols: Vec<String>,
    lines: Vec<(String, u32)>,
    nodes: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn constant(&mut self, allow_zero: bool, positive_only: bool) -> i64 {
        let m = self.shape.max_const;
        let lo = if self.shape.negative && !positive_only {
            -m
        } else {
            0
        };
        loop {
            let c = self.rng.gen_range(lo..=m);
            if allow_zero || c != 0 {
                return c;
            }
        }
    }

    fn leaf(&mut self, depth: u32) -> Formula {
        let refs: Vec<String> = self
            .lines
            .iter()
            .filter(|(_, d)| *d <= depth)
            .map(|(n, _)| n.clone())
            .collect();
        match self.rng.gen_range(0..10) {
            0 => Formula::True,
            1..=3 if !refs.is_empty() => Formula::Ref(refs.choose(self.rng).unwrap().clone()),
            _ => Formula::Atom(self.symbols.choose(self.rng).unwrap().clone()),
        }
    }

    /// Formula of counting depth at most `depth`.
    fn formula(&mut self, depth: u32) -> Formula {
        self.nodes += 1;
        if self.nodes >= self.shape.max_nodes {
            return self.leaf(depth);
        }
        let temporal_ok = self.shape.temporal && depth >= 1;
        match self.rng.gen_range(0..12) {
            0..=2 => self.leaf(depth),
            3 => Formula::not(self.formula(depth)),
            4 => Formula::and(self.formula(depth), self.formula(depth)),
            5 => Formula::or(self.formula(depth), self.formula(depth)),
            6 if temporal_ok => Formula::prev(self.formula(depth - 1)),
            7 if temporal_ok => Formula::hist(self.formula(depth - 1)),
            _ if depth >= 1 => self.constraint(depth),
            _ => self.leaf(depth),
        }
    }

    fn term(&mut self, depth: u32) -> Term {
        match self.rng.gen_range(0..10) {
            0 => Term::constant(self.constant(true, false)),
            1 if self.shape.conditionals => {
                let c = self.formula(depth);
                let a = self.term(depth);
                let b = self.term(depth);
                Term::ite(c, a, b)
            }
            _ => Term::count(self.formula(depth - 1)),
        }
    }

    fn constraint(&mut self, depth: u32) -> Formula {
        let girth = self.rng.gen_range(1..=self.shape.max_girth);
        let terms = (0..girth)
            .map(|_| (BigInt::from(self.constant(false, false)), self.term(depth)))
            .collect();
        let cmp = *[Cmp::Lt, Cmp::Le, Cmp::Eq, Cmp::Ge, Cmp::Gt]
            .choose(self.rng)
            .unwrap();
        Formula::lin(terms, cmp, self.constant(true, false))
    }
}

/// Random program within `shape`; its depth never exceeds `shape.max_depth`.
pub fn random_program(rng: &mut impl Rng, shape: &ProgramShape) -> Program {
    let symbols = alphabet(shape.alphabet_size);
    let n = rng.gen_range(1..=shape.max_lines);
    let mut b = Builder {
        rng,
        shape,
        symbols: symbols.clone(),
        lines: Vec::new(),
        nodes: 0,
    };
    let mut depths: HashMap<String, u32> = HashMap::new();
    let mut lines = Vec::new();
    for i in 0..n {
        b.nodes = 0;
        let target = b.rng.gen_range(0..=shape.max_depth);
        let f = b.formula(target);
        let d = formula_depth(&f, &depths);
        let name = format!("l{i}");
        depths.insert(name.clone(), d);
        b.lines.push((name.clone(), d));
        lines.push(Line { name, formula: f });
    }
    Program::new(symbols, lines).expect("generated program is well formed")
}

/// Random program of depth exactly `depth`, retrying until one is found.
pub fn random_program_of_depth(rng: &mut impl Rng, shape: &ProgramShape, depth: u32) -> Program {
    let shape = ProgramShape {
        max_depth: depth,
        ..shape.clone()
    };
    loop {
        let p = random_program(rng, &shape);
        if crate::syntax::measure(&p).depth == depth {
            return p;
        }
    }
}

/// Shape for depth-3 programs whose depth-2 reduction stays small: short
/// lines, unit girth and no conditionals.
pub fn depth3_shape() -> ProgramShape {
    ProgramShape {
        alphabet_size: 2,
        max_lines: 2,
        max_depth: 3,
        max_const: 2,
        max_girth: 1,
        temporal: true,
        conditionals: false,
        negative: true,
        max_nodes: 5,
    }
}

/// Random weight-rounded transformer with `p * d <= max_pd` over `{a, b}`.
///
/// Formats have at least two bits when `max_pd >= 2`: with one bit the largest
/// mantissa is 0, so every attention weight rounds to zero.
pub fn random_transformer(rng: &mut impl Rng, max_pd: u32) -> TransformerSpec {
    let min_p = if max_pd >= 2 { 2 } else { 1 };
    let shapes: Vec<(u32, usize)> = (min_p..=max_pd)
        .flat_map(|p| (1..=(max_pd / p) as usize).map(move |d| (p, d)))
        .collect();
    let &(p, d) = shapes.choose(rng).expect("max_pd >= 1");
    let s = rng.gen_range(0..p);
    let fmt = Format::new(p, s).expect("valid format");
    let m = |rng: &mut _| rand_mantissa(rng, fmt);
    let affine = |rng: &mut _, rows: usize, cols: usize| Affine {
        weights: (0..rows)
            .map(|_| (0..cols).map(|_| m(rng)).collect())
            .collect(),
        bias: (0..rows).map(|_| m(rng)).collect(),
    };
    let names = alphabet(2);
    let mut embeddings = BTreeMap::new();
    for sym in names.iter().map(String::as_str).chain([BOS]) {
        embeddings.insert(
            sym.to_string(),
            (0..d).map(|_| rand_mantissa(rng, fmt)).collect(),
        );
    }
    let depth = rng.gen_range(1..=2);
    let layers = (0..depth)
        .map(|_| {
            let feedforward = match rng.gen_range(0..3) {
                0 => Feedforward::Identity,
                1 => Feedforward::Mlp {
                    hidden: affine(rng, d, d),
                    output: affine(rng, d, d),
                },
                _ => {
                    let entries = (0..4)
                        .map(|_| {
                            (
                                (0..d).map(|_| rand_mantissa(rng, fmt)).collect(),
                                (0..d).map(|_| rand_mantissa(rng, fmt)).collect(),
                            )
                        })
                        .collect::<Vec<(Vec<i64>, Vec<i64>)>>();
                    let mut seen = std::collections::HashSet::new();
                    Feedforward::Table {
                        entries: entries
                            .into_iter()
                            .filter(|(k, _)| seen.insert(k.clone()))
                            .collect(),
                    }
                }
            };
            Layer {
                query: affine(rng, d, d),
                key: affine(rng, d, d),
                value: affine(rng, d, d),
                feedforward,
            }
        })
        .collect();
    TransformerSpec {
        variant: Variant::WeightRounded,
        format: fmt,
        dimension: d,
        depth,
        alphabet: names,
        embeddings,
        layers,
        output: affine(rng, 1, d),
    }
}

fn rand_mantissa(rng: &mut impl Rng, fmt: Format) -> i64 {
    rng.gen_range(fmt.min_mantissa()..=fmt.max_mantissa())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::positive::check_positive;
    use crate::syntax::measure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let p = random_program(&mut rng, &ProgramShape::general(2));
            assert!(measure(&p).depth <= 3);
            let q = random_program(&mut rng, &ProgramShape::positive(2));
            let m = measure(&q);
            assert!(m.precision <= 3 && m.girth <= 2);
            assert!(check_positive(&q).is_ok());
        }
        for _ in 0..20 {
            let p = random_program_of_depth(&mut rng, &depth3_shape(), 3);
            assert_eq!(measure(&p).depth, 3);
        }
    }

    #[test]
    fn transformers_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t = random_transformer(&mut rng, 4);
            t.validate().unwrap();
            assert!(t.format.p as usize * t.dimension <= 4);
        }
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = random_program(&mut ChaCha8Rng::seed_from_u64(9), &ProgramShape::general(2));
        let b = random_program(&mut ChaCha8Rng::seed_from_u64(9), &ProgramShape::general(2));
        assert_eq!(a, b);
    }
}
