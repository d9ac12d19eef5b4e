//! Syntactically co-safe LTL: parsing, compilation to bounded-horizon
//! co-safety automata, and reward machines derived from them.

mod dfa;
mod parse;
mod reward;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use dfa::{to_dfa, CoSafetyDfa, Letter, MAX_ATOMS};
pub use parse::parse_scltl;
pub use reward::{distances, potential, BoxRegion, LabelingFunction, RewardMachine, RewardMode};

/// Formula in negation normal form; negation only sits on atoms. Atoms are
/// indices into the atom table the formula was parsed against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    True,
    False,
    Atom(usize),
    NotAtom(usize),
    Or(Box<Formula>, Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }
    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }
    pub fn next(a: Formula) -> Formula {
        Formula::Next(Box::new(a))
    }
    pub fn until(a: Formula, b: Formula) -> Formula {
        Formula::Until(Box::new(a), Box::new(b))
    }
    /// `true U a`
    pub fn eventually(a: Formula) -> Formula {
        Formula::until(Formula::True, a)
    }

    /// `a ∧ X(a ∧ X(… a))` with `k + 1` copies of `a`.
    pub fn always_within(k: usize, a: Formula) -> Formula {
        let mut f = a.clone();
        for _ in 0..k {
            f = Formula::and(a.clone(), Formula::next(f));
        }
        f
    }

    /// `a ∨ X(a ∨ X(… a))` with `k + 1` copies of `a`.
    pub fn eventually_within(k: usize, a: Formula) -> Formula {
        let mut f = a.clone();
        for _ in 0..k {
            f = Formula::or(a.clone(), Formula::next(f));
        }
        f
    }

    /// Number of operators, counting negation of an atom as one.
    pub fn size(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) => 0,
            Formula::NotAtom(_) => 1,
            Formula::Next(a) => 1 + a.size(),
            Formula::Or(a, b) | Formula::And(a, b) | Formula::Until(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    /// Largest atom index used, if any.
    pub fn max_atom(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Atom(p) | Formula::NotAtom(p) => Some(*p),
            Formula::Next(a) => a.max_atom(),
            Formula::Or(a, b) | Formula::And(a, b) | Formula::Until(a, b) => {
                a.max_atom().max(b.max_atom())
            }
        }
    }

    pub fn display<'a>(&'a self, atoms: &'a [String]) -> impl fmt::Display + 'a {
        Shown { f: self, atoms }
    }
}

struct Shown<'a> {
    f: &'a Formula,
    atoms: &'a [String],
}

impl fmt::Display for Shown<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |f| Shown {
            f,
            atoms: self.atoms,
        };
        let name = |p: &usize| self.atoms.get(*p).map(String::as_str).unwrap_or("?");
        match self.f {
            Formula::True => write!(out, "true"),
            Formula::False => write!(out, "false"),
            Formula::Atom(p) => write!(out, "{}", name(p)),
            Formula::NotAtom(p) => write!(out, "!{}", name(p)),
            Formula::Or(a, b) => write!(out, "({} | {})", sub(a), sub(b)),
            Formula::And(a, b) => write!(out, "({} & {})", sub(a), sub(b)),
            Formula::Next(a) => write!(out, "X {}", sub(a)),
            Formula::Until(a, b) => write!(out, "({} U {})", sub(a), sub(b)),
        }
    }
}

/// Names of the atomic propositions, in letter-bit order.
pub fn atom_names<S: AsRef<str>>(names: &[S]) -> Vec<String> {
    names.iter().map(|s| String::from(s.as_ref())).collect()
}
