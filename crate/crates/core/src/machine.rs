//! Compiled form of a program: a topologically ordered node graph with
//! per-prefix accumulators, stepped one symbol at a time.
//!
//! The accumulator vector is the whole of the state needed to continue a
//! prefix: one counter per counting term, one flag per strict-past node and
//! one flag per history node. Two prefixes with equal accumulators accept the
//! same continuations.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::syntax::{Cmp, Formula, Program, Term};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Node {
    True,
    False,
    Atom(usize),
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    Prev { child: usize, slot: usize },
    Hist { child: usize, slot: usize },
    Count { child: usize, slot: usize },
    Lin(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum TermNode {
    Count(usize),
    Const(BigInt),
    Ite(usize, Box<TermNode>, Box<TermNode>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct LinNode {
    terms: Vec<(BigInt, TermNode)>,
    cmp: Cmp,
    bound: BigInt,
}

#[derive(Debug, Clone)]
enum SmallTerm {
    Count(usize),
    Const(i128),
    Ite(usize, Box<SmallTerm>, Box<SmallTerm>),
}

/// i128 shadow of a constraint whose constants fit in i64.
#[derive(Debug, Clone)]
struct SmallLin {
    terms: Vec<(i128, SmallTerm)>,
    cmp: Cmp,
    bound: i128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    F,
    T,
    U,
}

impl Tri {
    fn not(self) -> Tri {
        match self {
            Tri::F => Tri::T,
            Tri::T => Tri::F,
            Tri::U => Tri::U,
        }
    }
    fn and(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::F, _) | (_, Tri::F) => Tri::F,
            (Tri::T, Tri::T) => Tri::T,
            _ => Tri::U,
        }
    }
    fn or(self, o: Tri) -> Tri {
        self.not().and(o.not()).not()
    }
}

#[derive(Debug, Clone)]
pub struct Machine {
    nodes: Vec<Node>,
    lins: Vec<LinNode>,
    small: Vec<Option<SmallLin>>,
    /// Node id of each program line.
    pub line_nodes: Vec<usize>,
    /// Formula label of each counter slot, for traces.
    pub count_labels: Vec<String>,
    slots: usize,
    initial: Vec<u32>,
    alphabet_len: usize,
    acceptor: usize,
}

struct Builder<'p> {
    nodes: Vec<Node>,
    lins: Vec<LinNode>,
    index: HashMap<Node, usize>,
    lin_index: HashMap<LinNode, usize>,
    lines: HashMap<&'p str, usize>,
    symbols: HashMap<&'p str, usize>,
    slots: usize,
    initial: Vec<u32>,
    count_labels: Vec<String>,
    slot_of_count: HashMap<usize, usize>,
}

impl<'p> Builder<'p> {
    fn intern(&mut self, n: Node) -> usize {
        if let Some(&i) = self.index.get(&n) {
            return i;
        }
        self.nodes.push(n.clone());
        self.index.insert(n, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn new_slot(&mut self, init: u32) -> usize {
        self.slots += 1;
        self.initial.push(init);
        self.slots - 1
    }

    fn formula(&mut self, f: &Formula) -> usize {
        match f {
            Formula::True => self.intern(Node::True),
            Formula::False => self.intern(Node::False),
            Formula::Atom(s) => {
                let i = self.symbols[s.as_str()];
                self.intern(Node::Atom(i))
            }
            Formula::Ref(r) => self.lines[r.as_str()],
            Formula::Not(a) => {
                let a = self.formula(a);
                self.intern(Node::Not(a))
            }
            Formula::And(a, b) => {
                let (a, b) = (self.formula(a), self.formula(b));
                self.intern(Node::And(a, b))
            }
            Formula::Or(a, b) => {
                let (a, b) = (self.formula(a), self.formula(b));
                self.intern(Node::Or(a, b))
            }
            Formula::Prev(a) => {
                let child = self.formula(a);
                self.temporal(child, true)
            }
            Formula::Hist(a) => {
                let child = self.formula(a);
                self.temporal(child, false)
            }
            Formula::Lin(c) => {
                let terms: Vec<(BigInt, TermNode)> = c
                    .terms
                    .iter()
                    .map(|(k, t)| (k.clone(), self.term(t)))
                    .collect();
                let lin = LinNode {
                    terms,
                    cmp: c.cmp,
                    bound: c.bound.clone(),
                };
                let li = match self.lin_index.get(&lin) {
                    Some(&i) => i,
                    None => {
                        self.lins.push(lin.clone());
                        self.lin_index.insert(lin, self.lins.len() - 1);
                        self.lins.len() - 1
                    }
                };
                self.intern(Node::Lin(li))
            }
        }
    }

    fn temporal(&mut self, child: usize, prev: bool) -> usize {
        let probe = if prev {
            Node::Prev {
                child,
                slot: usize::MAX,
            }
        } else {
            Node::Hist {
                child,
                slot: usize::MAX,
            }
        };
        if let Some(&i) = self.index.get(&probe) {
            return i;
        }
        let slot = self.new_slot(if prev { 0 } else { 1 });
        let node = if prev {
            Node::Prev { child, slot }
        } else {
            Node::Hist { child, slot }
        };
        self.nodes.push(node);
        let id = self.nodes.len() - 1;
        self.index.insert(probe, id);
        id
    }

    fn term(&mut self, t: &Term) -> TermNode {
        match t {
            Term::Const(c) => TermNode::Const(c.clone()),
            Term::Count(f) => {
                let child = self.formula(f);
                if let Some(&slot) = self.slot_of_count.get(&child) {
                    return TermNode::Count(slot);
                }
                let slot = self.new_slot(0);
                self.slot_of_count.insert(child, slot);
                self.count_labels.push(format!("#[{f}]"));
                self.nodes.push(Node::Count { child, slot });
                TermNode::Count(slot)
            }
            Term::Ite(c, a, b) => {
                let c = self.formula(c);
                TermNode::Ite(c, Box::new(self.term(a)), Box::new(self.term(b)))
            }
        }
    }
}

fn small_term(t: &TermNode) -> Option<SmallTerm> {
    Some(match t {
        TermNode::Count(s) => SmallTerm::Count(*s),
        TermNode::Const(c) => SmallTerm::Const(c.to_i64()? as i128),
        TermNode::Ite(c, a, b) => {
            SmallTerm::Ite(*c, Box::new(small_term(a)?), Box::new(small_term(b)?))
        }
    })
}

fn small_lin(l: &LinNode) -> Option<SmallLin> {
    if l.terms.len() > 1 << 20 {
        return None;
    }
    let mut terms = Vec::with_capacity(l.terms.len());
    for (k, t) in &l.terms {
        terms.push((k.to_i64()? as i128, small_term(t)?));
    }
    Some(SmallLin {
        terms,
        cmp: l.cmp,
        bound: l.bound.to_i64()? as i128,
    })
}

impl Machine {
    /// Compiles a validated program.
    pub fn new(p: &Program) -> Machine {
        let mut b = Builder {
            nodes: Vec::new(),
            lins: Vec::new(),
            index: HashMap::new(),
            lin_index: HashMap::new(),
            lines: HashMap::new(),
            symbols: p
                .alphabet
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect(),
            slots: 0,
            initial: Vec::new(),
            count_labels: Vec::new(),
            slot_of_count: HashMap::new(),
        };
        let mut line_nodes = Vec::with_capacity(p.lines.len());
        for line in &p.lines {
            let id = b.formula(&line.formula);
            b.lines.insert(line.name.as_str(), id);
            line_nodes.push(id);
        }
        let small = b.lins.iter().map(small_lin).collect();
        let acceptor = *line_nodes.last().expect("program has lines");
        Machine {
            nodes: b.nodes,
            lins: b.lins,
            small,
            line_nodes,
            count_labels: b.count_labels,
            slots: b.slots,
            initial: b.initial,
            alphabet_len: p.alphabet.len(),
            acceptor,
        }
    }

    pub fn initial_state(&self) -> Vec<u32> {
        self.initial.clone()
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    /// Counter slots in the order of `count_labels`.
    pub fn count_slot_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Count { slot, .. } => Some(*slot),
                _ => None,
            })
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Reads one symbol: fills `vals` with every node's truth value at the new
    /// position and `next` with the updated accumulators. Returns acceptance.
    pub fn step(
        &self,
        state: &[u32],
        sym: usize,
        vals: &mut Vec<bool>,
        next: &mut Vec<u32>,
    ) -> bool {
        vals.clear();
        vals.resize(self.nodes.len(), false);
        next.clear();
        next.extend_from_slice(state);
        for (i, n) in self.nodes.iter().enumerate() {
            let v = match *n {
                Node::True => true,
                Node::False => false,
                Node::Atom(s) => s == sym,
                Node::Not(a) => !vals[a],
                Node::And(a, b) => vals[a] && vals[b],
                Node::Or(a, b) => vals[a] || vals[b],
                Node::Prev { child, slot } => {
                    let before = state[slot] != 0;
                    if vals[child] {
                        next[slot] = 1;
                    }
                    before
                }
                Node::Hist { child, slot } => {
                    let now = state[slot] != 0 && vals[child];
                    next[slot] = u32::from(now);
                    now
                }
                Node::Count { child, slot } => {
                    if vals[child] {
                        next[slot] = state[slot].checked_add(1).expect("counter overflow");
                    }
                    false
                }
                Node::Lin(l) => self.eval_lin(l, vals, next),
            };
            vals[i] = v;
        }
        vals[self.acceptor]
    }

    fn eval_lin(&self, l: usize, vals: &[bool], counts: &[u32]) -> bool {
        if let Some(s) = &self.small[l] {
            fn tv(t: &SmallTerm, vals: &[bool], counts: &[u32]) -> i128 {
                match t {
                    SmallTerm::Count(s) => counts[*s] as i128,
                    SmallTerm::Const(c) => *c,
                    SmallTerm::Ite(c, a, b) => {
                        if vals[*c] {
                            tv(a, vals, counts)
                        } else {
                            tv(b, vals, counts)
                        }
                    }
                }
            }
            let mut sum: i128 = 0;
            for (k, t) in &s.terms {
                sum += k * tv(t, vals, counts);
            }
            return s.cmp.holds(&sum, &s.bound);
        }
        fn tv(t: &TermNode, vals: &[bool], counts: &[u32]) -> BigInt {
            match t {
                TermNode::Count(s) => BigInt::from(counts[*s]),
                TermNode::Const(c) => c.clone(),
                TermNode::Ite(c, a, b) => {
                    if vals[*c] {
                        tv(a, vals, counts)
                    } else {
                        tv(b, vals, counts)
                    }
                }
            }
        }
        let lin = &self.lins[l];
        let mut sum = BigInt::zero();
        for (k, t) in &lin.terms {
            sum += k * tv(t, vals, counts);
        }
        lin.cmp.holds(&sum, &lin.bound)
    }

    /// Whether some continuation of at most `remaining` symbols from `state`
    /// might be accepted. `false` is a proof that none is.
    pub fn may_accept(&self, state: &[u32], remaining: usize) -> bool {
        if remaining == 0 {
            return false;
        }
        let r = remaining as u64;
        let mut abs = vec![Tri::U; self.nodes.len()];
        let mut ranges: Vec<(u64, u64)> = state.iter().map(|&c| (c as u64, c as u64)).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            abs[i] = match *n {
                Node::True => Tri::T,
                Node::False => Tri::F,
                Node::Atom(_) => {
                    if self.alphabet_len == 1 {
                        Tri::T
                    } else {
                        Tri::U
                    }
                }
                Node::Not(a) => abs[a].not(),
                Node::And(a, b) => abs[a].and(abs[b]),
                Node::Or(a, b) => abs[a].or(abs[b]),
                Node::Prev { child, slot } => {
                    if state[slot] != 0 {
                        Tri::T
                    } else if abs[child] == Tri::F {
                        Tri::F
                    } else {
                        Tri::U
                    }
                }
                Node::Hist { child, slot } => {
                    if state[slot] == 0 {
                        Tri::F
                    } else {
                        abs[child]
                    }
                }
                Node::Count { child, slot } => {
                    let c = state[slot] as u64;
                    ranges[slot] = match abs[child] {
                        Tri::F => (c, c),
                        Tri::T => (c + 1, c + r),
                        Tri::U => (c, c + r),
                    };
                    Tri::U
                }
                Node::Lin(l) => self.abstract_lin(l, &abs, &ranges),
            };
        }
        abs[self.acceptor] != Tri::F
    }

    fn abstract_lin(&self, l: usize, abs: &[Tri], ranges: &[(u64, u64)]) -> Tri {
        fn range(t: &TermNode, abs: &[Tri], ranges: &[(u64, u64)]) -> (BigInt, BigInt) {
            match t {
                TermNode::Count(s) => (BigInt::from(ranges[*s].0), BigInt::from(ranges[*s].1)),
                TermNode::Const(c) => (c.clone(), c.clone()),
                TermNode::Ite(c, a, b) => match abs[*c] {
                    Tri::T => range(a, abs, ranges),
                    Tri::F => range(b, abs, ranges),
                    Tri::U => {
                        let (l1, h1) = range(a, abs, ranges);
                        let (l2, h2) = range(b, abs, ranges);
                        (l1.min(l2), h1.max(h2))
                    }
                },
            }
        }
        let lin = &self.lins[l];
        let mut lo = BigInt::zero();
        let mut hi = BigInt::zero();
        for (k, t) in &lin.terms {
            let (a, b) = range(t, abs, ranges);
            if k.is_negative() {
                lo += k * &b;
                hi += k * &a;
            } else {
                lo += k * &a;
                hi += k * &b;
            }
        }
        let kb = &lin.bound;
        let (always, never) = match lin.cmp {
            Cmp::Ge => (lo >= *kb, hi < *kb),
            Cmp::Gt => (lo > *kb, hi <= *kb),
            Cmp::Le => (hi <= *kb, lo > *kb),
            Cmp::Lt => (hi < *kb, lo >= *kb),
            Cmp::Eq => (lo == *kb && hi == *kb, *kb < lo || *kb > hi),
        };
        if always {
            Tri::T
        } else if never {
            Tri::F
        } else {
            Tri::U
        }
    }

    /// Runs a whole word, returning per-position acceptance.
    pub fn run(&self, word: &[usize]) -> Vec<bool> {
        let mut state = self.initial_state();
        let mut next = Vec::new();
        let mut vals = Vec::new();
        word.iter()
            .map(|&s| {
                let a = self.step(&state, s, &mut vals, &mut next);
                std::mem::swap(&mut state, &mut next);
                a
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse_program;

    #[test]
    fn shares_identical_subterms() {
        let p =
            parse_program("alphabet a b\nx := #[Qa] >= 1\ny := #[Qa] >= 2 and PREV Qa and PREV Qa")
                .unwrap();
        let m = Machine::new(&p);
        assert_eq!(m.slot_count(), 2);
    }

    #[test]
    fn prune_is_sound_on_simple_case() {
        let p = parse_program("alphabet a b\nout := #[Qa] = 2").unwrap();
        let m = Machine::new(&p);
        let mut st = m.initial_state();
        let (mut vals, mut next) = (Vec::new(), Vec::new());
        for _ in 0..3 {
            m.step(&st, 0, &mut vals, &mut next);
            std::mem::swap(&mut st, &mut next);
        }
        assert!(!m.may_accept(&st, 10));
        assert!(m.may_accept(&m.initial_state(), 2));
        assert!(!m.may_accept(&m.initial_state(), 1));
    }
}
