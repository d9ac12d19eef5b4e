//! Helpers shared by the integration tests: formula enumeration, a
//! brute-force word checker and random small games.

#![allow(dead_code)]

use compsynth_core::game::AbstractGame;
use compsynth_core::model::SubsystemModel;
use compsynth_core::quantize::{Grid, InputGrid, InternalGridMode};
use compsynth_core::spec_lang::{
    to_dfa, BoxRegion, Formula, LabelingFunction, RewardMachine, RewardMode,
};
use rand::Rng;

/// Every formula over `n_atoms` atoms with at most `max_ops` operators.
/// Constants are leaves when `constants` is set.
pub fn formulas(n_atoms: usize, max_ops: usize, constants: bool) -> Vec<Formula> {
    let mut by_size: Vec<Vec<Formula>> = Vec::new();
    let mut leaves: Vec<Formula> = (0..n_atoms).map(Formula::Atom).collect();
    if constants {
        leaves.extend([Formula::True, Formula::False]);
    }
    by_size.push(leaves);
    for s in 1..=max_ops {
        let mut out = Vec::new();
        if s == 1 {
            out.extend((0..n_atoms).map(Formula::NotAtom));
        }
        for f in &by_size[s - 1] {
            out.push(Formula::next(f.clone()));
        }
        for left in 0..s {
            let right = s - 1 - left;
            for a in &by_size[left] {
                for b in &by_size[right] {
                    out.push(Formula::or(a.clone(), b.clone()));
                    out.push(Formula::and(a.clone(), b.clone()));
                    out.push(Formula::until(a.clone(), b.clone()));
                }
            }
        }
        by_size.push(out);
    }
    by_size.into_iter().flatten().collect()
}

/// Truth of a formula on every word of a fixed length at once. Words of
/// length `len` over `2^n_atoms` letters are numbered so that letter `i` of
/// word `w` is digit `i` of `w` in base `2^n_atoms`; bit `w` of a set is one
/// iff the word satisfies the formula from the given position.
pub struct WordSets {
    len: usize,
    words: usize,
    letters: Vec<Vec<u32>>,
    // atom[p][i]: words whose letter i has atom p.
    atom: Vec<Vec<Vec<u64>>>,
}

impl WordSets {
    pub fn new(n_atoms: usize, len: usize) -> Self {
        let bits = n_atoms as u32;
        let words = 1usize << (bits as usize * len);
        let blocks = words.div_ceil(64);
        let atom = (0..n_atoms)
            .map(|p| {
                (0..len)
                    .map(|i| {
                        let mut set = vec![0u64; blocks];
                        for w in 0..words {
                            let letter = (w >> (bits as usize * i)) & ((1 << bits) - 1);
                            if letter >> p & 1 == 1 {
                                set[w / 64] |= 1 << (w % 64);
                            }
                        }
                        set
                    })
                    .collect()
            })
            .collect();
        let letters = (0..words)
            .map(|w| {
                (0..len)
                    .map(|i| ((w >> (bits as usize * i)) & ((1 << bits) - 1)) as u32)
                    .collect()
            })
            .collect();
        Self {
            len,
            words,
            letters,
            atom,
        }
    }

    pub fn n_words(&self) -> usize {
        self.words
    }

    pub fn word(&self, w: usize) -> &[u32] {
        &self.letters[w]
    }

    fn full(&self) -> Vec<u64> {
        let mut set = vec![!0u64; self.words.div_ceil(64)];
        if !self.words.is_multiple_of(64) {
            *set.last_mut().unwrap() = (1u64 << (self.words % 64)) - 1;
        }
        set
    }

    /// Per position `i < len`, the words satisfying `f` from `i` under the
    /// strong finite semantics: atoms, next and until are false past the end.
    pub fn sat(&self, f: &Formula) -> Vec<Vec<u64>> {
        let empty = vec![0u64; self.words.div_ceil(64)];
        match f {
            Formula::True => vec![self.full(); self.len],
            Formula::False => vec![empty; self.len],
            Formula::Atom(p) => self.atom[*p].clone(),
            Formula::NotAtom(p) => {
                let full = self.full();
                self.atom[*p]
                    .iter()
                    .map(|s| s.iter().zip(&full).map(|(a, m)| !a & m).collect())
                    .collect()
            }
            Formula::Or(a, b) => zip(self.sat(a), self.sat(b), |x, y| x | y),
            Formula::And(a, b) => zip(self.sat(a), self.sat(b), |x, y| x & y),
            Formula::Next(a) => {
                let mut s = self.sat(a);
                s.remove(0);
                s.push(empty);
                s
            }
            Formula::Until(a, b) => {
                let (sa, sb) = (self.sat(a), self.sat(b));
                let mut out = vec![empty; self.len];
                let mut later = out[0].clone();
                for i in (0..self.len).rev() {
                    let now: Vec<u64> = sb[i]
                        .iter()
                        .zip(&sa[i])
                        .zip(&later)
                        .map(|((b, a), l)| b | (a & l))
                        .collect();
                    out[i] = now.clone();
                    later = now;
                }
                out
            }
        }
    }

    /// Whether word `w` satisfies the formula from its first letter.
    pub fn holds(set: &[Vec<u64>], w: usize) -> bool {
        set[0][w / 64] >> (w % 64) & 1 == 1
    }
}

fn zip(a: Vec<Vec<u64>>, b: Vec<Vec<u64>>, op: impl Fn(u64, u64) -> u64) -> Vec<Vec<u64>> {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| x.into_iter().zip(y).map(|(x, y)| op(x, y)).collect())
        .collect()
}

/// Number of words on which the DFA for `f` disagrees with the checker, for
/// horizon `horizon` (words of `horizon + 1` letters).
pub fn dfa_disagreements(f: &Formula, n_atoms: usize, horizon: usize, sets: &WordSets) -> usize {
    let dfa = to_dfa(f, n_atoms, horizon).expect("formula compiles");
    let truth = sets.sat(f);
    (0..sets.n_words())
        .filter(|&w| dfa.accepts(sets.word(w)) != WordSets::holds(&truth, w))
        .count()
}

/// A random scalar game with at most 30 cells, horizon at most 3 and at most
/// three actions per player. The specification is one of a safety, a reach
/// or a reach-avoid formula over random interval labels.
pub fn random_game<R: Rng>(rng: &mut R, mode: RewardMode) -> AbstractGame {
    let cells = rng.random_range(3..=30usize);
    let len = cells as f64;
    let horizon = rng.random_range(1..=3usize);
    let n_u = rng.random_range(1..=3usize);
    let n_w = rng.random_range(1..=3usize);

    let inputs: Vec<f64> = (0..n_u)
        .map(|i| (i as f64 - (n_u - 1) as f64 / 2.0) * 0.15 * len)
        .collect();
    let a: Vec<f64> = (0..n_u).map(|_| rng.random_range(0.3..0.95)).collect();
    let a_mean = a.iter().sum::<f64>() / n_u as f64;
    let d = 0.1 * len * rng.random_range(-1.0..1.0);
    let c = (1.0 - a_mean) * len / 2.0 - d / 2.0;
    let r = len * rng.random_range(0.03..0.15);
    let model = SubsystemModel::scalar((0.0, len), inputs, a, 1.0, c, vec![d], vec![(0.0, 1.0)], r)
        .unwrap();
    let grid = Grid::uniform(&[0.0], &[len], 1.0).unwrap();
    let w_grid = InputGrid::new(
        &[0.0],
        &[1.0],
        1.0 / n_w as f64,
        InternalGridMode::Cartesian,
    )
    .unwrap();

    let kind = rng.random_range(0..3);
    let mut interval = |min_frac: f64| {
        let w = (len * rng.random_range(min_frac..0.8)).max(1.0);
        let lo = rng.random_range(0.0..=(len - w));
        BoxRegion::new(vec![lo], vec![lo + w]).unwrap()
    };
    let (formula, regions) = match kind {
        0 => (
            Formula::always_within(horizon, Formula::Atom(0)),
            vec![interval(0.4)],
        ),
        1 => (Formula::eventually(Formula::Atom(0)), vec![interval(0.1)]),
        _ => (
            Formula::until(Formula::NotAtom(1), Formula::Atom(0)),
            vec![interval(0.1), interval(0.1)],
        ),
    };
    let labels = LabelingFunction::new(regions).unwrap();
    let dfa = to_dfa(&formula, labels.n_atoms(), horizon).unwrap();
    let rm = RewardMachine::new(dfa, mode, 1e-3).unwrap();
    AbstractGame::new(model, grid, w_grid, rm, labels, horizon).unwrap()
}
