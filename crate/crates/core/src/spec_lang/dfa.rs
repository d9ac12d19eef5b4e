//! Bounded-horizon co-safety automata built from formula derivatives.
//!
//! A state is the obligation the remaining suffix must meet, kept as a
//! canonical DNF over temporal literals (atoms, negated atoms, `X` and `U`
//! subformulas). Reading a letter resolves the atoms and unfolds `X`/`U` one
//! step. The residue `true` is the accepting state; the empty disjunction and
//! anything still unresolved after `horizon + 1` letters is the rejecting
//! sink. Semantics are those of finite words: an `X` needs a next letter to
//! exist, so `X true` is false on a one-letter word.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::Formula;
use crate::error::{Error, Result};

/// Valuation of the atomic propositions: bit `p` is set iff atom `p` holds.
pub type Letter = u32;

/// Upper bound on the number of atomic propositions (2^20 letters).
pub const MAX_ATOMS: usize = 20;

/// Deterministic, total automaton with one absorbing accepting state and one
/// absorbing rejecting state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoSafetyDfa {
    n_letters: usize,
    trans: Vec<u32>,
    initial: usize,
    accepting: usize,
    rejecting: usize,
}

impl CoSafetyDfa {
    /// Assemble an automaton from a transition table laid out as
    /// `trans[q * n_letters + letter]`.
    pub fn from_table(
        n_letters: usize,
        trans: Vec<u32>,
        initial: usize,
        accepting: usize,
        rejecting: usize,
    ) -> Result<Self> {
        if n_letters == 0 || !trans.len().is_multiple_of(n_letters) {
            return Err(Error::config(
                "transition table does not match the alphabet",
            ));
        }
        let n = trans.len() / n_letters;
        if initial >= n || accepting >= n || rejecting >= n || accepting == rejecting {
            return Err(Error::config("state index out of range"));
        }
        if trans.iter().any(|&t| t as usize >= n) {
            return Err(Error::config("transition target out of range"));
        }
        for sink in [accepting, rejecting] {
            if trans[sink * n_letters..(sink + 1) * n_letters]
                .iter()
                .any(|&t| t as usize != sink)
            {
                return Err(Error::config(
                    "accepting and rejecting states must be absorbing",
                ));
            }
        }
        Ok(Self {
            n_letters,
            trans,
            initial,
            accepting,
            rejecting,
        })
    }

    pub fn n_states(&self) -> usize {
        self.trans.len() / self.n_letters
    }
    pub fn n_letters(&self) -> usize {
        self.n_letters
    }
    pub fn initial(&self) -> usize {
        self.initial
    }
    pub fn accepting(&self) -> usize {
        self.accepting
    }
    pub fn rejecting(&self) -> usize {
        self.rejecting
    }
    pub fn is_accepting(&self, q: usize) -> bool {
        q == self.accepting
    }
    pub fn is_rejecting(&self, q: usize) -> bool {
        q == self.rejecting
    }

    #[inline]
    pub fn step(&self, q: usize, letter: Letter) -> usize {
        self.trans[q * self.n_letters + letter as usize] as usize
    }

    /// Run from the initial state; true iff the accepting state is reached.
    pub fn accepts(&self, word: &[Letter]) -> bool {
        let mut q = self.initial;
        for &l in word {
            q = self.step(q, l);
        }
        q == self.accepting
    }

    /// Plain-text listing: a header, then one `src letter dst` line per edge
    /// with the letter written as the set of true atoms.
    pub fn to_edge_list(&self, atoms: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {}", self.n_states());
        let _ = writeln!(out, "initial {}", self.initial);
        let _ = writeln!(out, "accepting {}", self.accepting);
        let _ = writeln!(out, "rejecting {}", self.rejecting);
        for q in 0..self.n_states() {
            for l in 0..self.n_letters {
                let names: Vec<&str> = (0..atoms.len())
                    .filter(|p| l >> p & 1 == 1)
                    .map(|p| atoms[p].as_str())
                    .collect();
                let _ = writeln!(
                    out,
                    "{q} {{{}}} {}",
                    names.join(","),
                    self.step(q, l as Letter)
                );
            }
        }
        out
    }
}

type Conj = Vec<u32>;
type Dnf = Vec<Conj>;

// Literal codes: 2p and 2p+1 for p and !p, TEMPORAL + id for interned X/U
// subformulas.
const TEMPORAL: u32 = 2 * MAX_ATOMS as u32;
// "Some letter follows": what an `X` leaves behind besides its body. Every
// other literal also needs the letter to exist, so it only survives alone.
const ANY: u32 = u32::MAX;

fn canon(mut dnf: Dnf) -> Dnf {
    for c in dnf.iter_mut() {
        c.sort_unstable();
        c.dedup();
    }
    dnf.retain(|c| {
        !c.windows(2)
            .any(|w| w[0] < TEMPORAL && w[0] % 2 == 0 && w[1] == w[0] + 1)
    });
    for c in dnf.iter_mut() {
        if c.len() > 1 && c.last() == Some(&ANY) {
            c.pop();
        }
    }
    dnf.sort_unstable_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    dnf.dedup();
    let mut kept: Dnf = Vec::with_capacity(dnf.len());
    for c in dnf {
        if !kept.iter().any(|k| is_subset(k, &c)) {
            kept.push(c);
        }
    }
    // Every other conjunction implies that a letter follows.
    if kept.iter().any(|c| c[..] == [ANY]) {
        return vec![vec![ANY]];
    }
    kept
}

fn is_subset(small: &[u32], big: &[u32]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

fn product(a: &Dnf, b: &Dnf) -> Dnf {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            let mut c = x.clone();
            c.extend_from_slice(y);
            out.push(c);
        }
    }
    canon(out)
}

fn union(mut a: Dnf, b: &Dnf) -> Dnf {
    a.extend(b.iter().cloned());
    canon(a)
}

struct Builder {
    ids: BTreeMap<Formula, u32>,
    temporal: Vec<Formula>,
    // Per temporal literal, the DNFs it unfolds into, built on first use.
    unfold: Vec<Option<Unfold>>,
}

#[derive(Clone)]
enum Unfold {
    /// Obligation on the next letter.
    Next(Dnf),
    /// `a` and `b` of `a U b`, to be progressed with the current letter.
    Until(Dnf, Dnf),
}

impl Builder {
    fn intern(&mut self, f: &Formula) -> u32 {
        if let Some(&id) = self.ids.get(f) {
            return id;
        }
        let id = self.temporal.len() as u32;
        self.ids.insert(f.clone(), id);
        self.temporal.push(f.clone());
        self.unfold.push(None);
        id
    }

    fn dnf(&mut self, f: &Formula) -> Dnf {
        match f {
            Formula::True => vec![vec![]],
            Formula::False => vec![],
            Formula::Atom(p) => vec![vec![2 * *p as u32]],
            Formula::NotAtom(p) => vec![vec![2 * *p as u32 + 1]],
            Formula::Or(a, b) => {
                let a = self.dnf(a);
                union(a, &self.dnf(b))
            }
            Formula::And(a, b) => {
                let a = self.dnf(a);
                product(&a, &self.dnf(b))
            }
            Formula::Next(_) | Formula::Until(..) => vec![vec![TEMPORAL + self.intern(f)]],
        }
    }

    fn progress_lit(&mut self, lit: u32, letter: Letter) -> Dnf {
        if lit == ANY {
            return vec![vec![]];
        }
        if lit < TEMPORAL {
            let holds = letter >> (lit / 2) & 1 == 1;
            return if holds == lit.is_multiple_of(2) {
                vec![vec![]]
            } else {
                vec![]
            };
        }
        let id = (lit - TEMPORAL) as usize;
        if self.unfold[id].is_none() {
            let parts = match &self.temporal[id] {
                Formula::Next(body) => {
                    let body = body.clone();
                    let body = self.dnf(&body);
                    Unfold::Next(product(&body, &vec![vec![ANY]]))
                }
                Formula::Until(a, b) => {
                    let (a, b) = (a.clone(), b.clone());
                    Unfold::Until(self.dnf(&a), self.dnf(&b))
                }
                _ => unreachable!("only X and U are interned"),
            };
            self.unfold[id] = Some(parts);
        }
        match self.unfold[id].clone() {
            Some(Unfold::Next(body)) => body,
            Some(Unfold::Until(a, b)) => {
                let now_b = self.progress(&b, letter);
                let now_a = self.progress(&a, letter);
                let keep = product(&now_a, &vec![vec![lit]]);
                union(now_b, &keep)
            }
            None => unreachable!(),
        }
    }

    fn progress(&mut self, dnf: &Dnf, letter: Letter) -> Dnf {
        let mut out: Dnf = Vec::new();
        for conj in dnf {
            let mut acc: Dnf = vec![vec![]];
            for &lit in conj {
                let p = self.progress_lit(lit, letter);
                acc = product(&acc, &p);
                if acc.is_empty() {
                    break;
                }
            }
            out.extend(acc);
        }
        canon(out)
    }
}

/// Compile `formula` over `n_atoms` propositions into the automaton that
/// accepts exactly the words having a prefix of at most `horizon + 1`
/// letters that satisfies the formula.
pub fn to_dfa(formula: &Formula, n_atoms: usize, horizon: usize) -> Result<CoSafetyDfa> {
    if n_atoms > MAX_ATOMS {
        return Err(Error::config(format!(
            "{n_atoms} atomic propositions exceed the limit of {MAX_ATOMS}"
        )));
    }
    if let Some(p) = formula.max_atom() {
        if p >= n_atoms {
            return Err(Error::config("formula uses an undeclared atom"));
        }
    }
    let n_letters = 1usize << n_atoms;
    let mut b = Builder {
        ids: BTreeMap::new(),
        temporal: Vec::new(),
        unfold: Vec::new(),
    };

    // Untimed derivative automaton over residues.
    let start = b.dnf(formula);
    let mut residues: Vec<Dnf> = vec![start.clone()];
    let mut index: BTreeMap<Dnf, usize> = BTreeMap::new();
    index.insert(start, 0);
    let mut untimed: Vec<Vec<usize>> = Vec::new();
    // Only residues reachable within the horizon are expanded.
    let mut frontier = vec![0usize];
    let mut expanded = vec![false];
    for _depth in 0..=horizon {
        let mut next_frontier = Vec::new();
        for &s in &frontier {
            if expanded[s] {
                continue;
            }
            expanded[s] = true;
            let here = residues[s].clone();
            let mut row = Vec::with_capacity(n_letters);
            for l in 0..n_letters {
                let r = b.progress(&here, l as Letter);
                let id = match index.get(&r) {
                    Some(&id) => id,
                    None => {
                        let id = residues.len();
                        index.insert(r.clone(), id);
                        residues.push(r);
                        expanded.push(false);
                        next_frontier.push(id);
                        id
                    }
                };
                row.push(id);
            }
            if untimed.len() <= s {
                untimed.resize(s + 1, Vec::new());
            }
            untimed[s] = row;
        }
        next_frontier.sort_unstable();
        next_frontier.dedup();
        frontier = next_frontier;
    }

    let is_true = |r: &Dnf| r.len() == 1 && r[0].is_empty();
    let is_false = |r: &Dnf| r.is_empty();

    // Unroll to (residue, letters read) pairs.
    const ACCEPT: usize = 0;
    const REJECT: usize = 1;
    let classify = |r: usize, depth: usize| -> Option<usize> {
        if is_true(&residues[r]) {
            Some(ACCEPT)
        } else if is_false(&residues[r]) || depth > horizon {
            Some(REJECT)
        } else {
            None
        }
    };
    let mut timed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    let initial = match classify(0, 0) {
        Some(s) => s,
        None => {
            timed.insert((0, 0), 2);
            order.push((0, 0));
            2
        }
    };
    let mut trans: Vec<u32> = vec![ACCEPT as u32; n_letters];
    trans.extend(core::iter::repeat_n(REJECT as u32, n_letters));
    let mut i = 0;
    while i < order.len() {
        let (r, depth) = order[i];
        for l in 0..n_letters {
            let r2 = untimed[r][l];
            let target = match classify(r2, depth + 1) {
                Some(s) => s,
                None => *timed.entry((r2, depth + 1)).or_insert_with(|| {
                    order.push((r2, depth + 1));
                    order.len() + 1
                }),
            };
            trans.push(target as u32);
        }
        i += 1;
    }
    CoSafetyDfa::from_table(n_letters, trans, initial, ACCEPT, REJECT)
}
