//! Reward machines over co-safety automata and box-region labeling.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use super::dfa::{CoSafetyDfa, Letter, MAX_ATOMS};
use crate::error::{Error, Result};

/// Breadth-first distance of every state to the accepting state. States that
/// cannot reach it get `d_max = 1 + max finite distance`, which is returned
/// alongside.
pub fn distances(dfa: &CoSafetyDfa) -> (Vec<u32>, u32) {
    let n = dfa.n_states();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for q in 0..n {
        for l in 0..dfa.n_letters() {
            let t = dfa.step(q, l as Letter);
            if t != q {
                preds[t].push(q);
            }
        }
    }
    let mut d = vec![u32::MAX; n];
    d[dfa.accepting()] = 0;
    let mut queue = VecDeque::from([dfa.accepting()]);
    while let Some(q) = queue.pop_front() {
        for &p in &preds[q] {
            if d[p] == u32::MAX {
                d[p] = d[q] + 1;
                queue.push_back(p);
            }
        }
    }
    let d_max = 1 + d
        .iter()
        .copied()
        .filter(|&x| x != u32::MAX)
        .max()
        .unwrap_or(0);
    for x in d.iter_mut() {
        if *x == u32::MAX {
            *x = d_max;
        }
    }
    (d, d_max)
}

/// Potential of a state at distance `d`: 1 at the accepting state, 0 at the
/// initial state's distance, decreasing linearly by `κ / (d_max - 1)` per
/// step of distance.
pub fn potential(d: u32, d_q0: u32, d_max: u32, kappa: f64) -> f64 {
    if d == 0 {
        return 1.0;
    }
    kappa * (d as f64 - d_q0 as f64) / (1.0 - d_max as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// 1 on entering the accepting state, 0 otherwise.
    Base,
    /// Potential difference between successive automaton states.
    Shaped,
}

#[derive(Debug, Clone)]
pub struct RewardMachine {
    dfa: CoSafetyDfa,
    dist: Vec<u32>,
    d_max: u32,
    kappa: f64,
    mode: RewardMode,
    potentials: Vec<f64>,
}

impl RewardMachine {
    pub fn new(dfa: CoSafetyDfa, mode: RewardMode, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::config(
                "shaping constant must be finite and non-negative",
            ));
        }
        let (dist, d_max) = distances(&dfa);
        // The potential is undefined when d_max <= 1; fall back to base rewards.
        let mode = if d_max <= 1 { RewardMode::Base } else { mode };
        let d0 = dist[dfa.initial()];
        let potentials = dist
            .iter()
            .map(|&d| potential(d, d0, d_max, kappa))
            .collect();
        Ok(Self {
            dfa,
            dist,
            d_max,
            kappa,
            mode,
            potentials,
        })
    }

    pub fn dfa(&self) -> &CoSafetyDfa {
        &self.dfa
    }
    pub fn distance(&self, q: usize) -> u32 {
        self.dist[q]
    }
    pub fn d_max(&self) -> u32 {
        self.d_max
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    /// Mode in effect after the degenerate-automaton fallback.
    pub fn mode(&self) -> RewardMode {
        self.mode
    }
    pub fn potential_of(&self, q: usize) -> f64 {
        self.potentials[q]
    }

    /// Reward of the automaton edge `q -> q_next`.
    #[inline]
    pub fn reward(&self, q: usize, q_next: usize) -> f64 {
        match self.mode {
            RewardMode::Base => f64::from(u8::from(self.dfa.is_accepting(q_next))),
            RewardMode::Shaped => self.potentials[q_next] - self.potentials[q],
        }
    }
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config(
                "region bounds must have equal, nonzero dimension",
            ));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::config("region lower bound exceeds upper bound"));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }
}

/// One box region per atomic proposition; an atom holds where its box
/// contains the state. The sink cell gets the empty label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingFunction {
    regions: Vec<BoxRegion>,
}

impl LabelingFunction {
    pub fn new(regions: Vec<BoxRegion>) -> Result<Self> {
        if regions.len() > MAX_ATOMS {
            return Err(Error::config("too many atomic propositions"));
        }
        Ok(Self { regions })
    }

    pub fn n_atoms(&self) -> usize {
        self.regions.len()
    }
    pub fn regions(&self) -> &[BoxRegion] {
        &self.regions
    }

    pub fn label(&self, x: &[f64]) -> Letter {
        self.regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.contains(x))
            .fold(0, |acc, (p, _)| acc | 1 << p)
    }

    /// Label of an optional point; `None` stands for the sink.
    pub fn label_or_empty(&self, x: Option<&[f64]>) -> Letter {
        x.map_or(0, |x| self.label(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // q0 -> q1 -> qF on letter 1, anything else to the sink.
    fn chain() -> CoSafetyDfa {
        // states: 0 = accept, 1 = reject, 2 = q0, 3 = q1
        CoSafetyDfa::from_table(2, vec![0, 0, 1, 1, 1, 3, 1, 0], 2, 0, 1).unwrap()
    }

    #[test]
    fn chain_distances() {
        let (d, d_max) = distances(&chain());
        assert_eq!(d, vec![0, 3, 2, 1]);
        assert_eq!(d_max, 3);
    }

    #[test]
    fn potentials() {
        assert!((potential(1, 2, 3, 0.1) - 0.05).abs() < 1e-15);
        assert!((potential(3, 2, 3, 0.1) + 0.05).abs() < 1e-15);
        assert_eq!(potential(2, 2, 3, 0.1), 0.0);
        assert_eq!(potential(0, 2, 3, 0.1), 1.0);
    }

    #[test]
    fn rewards() {
        let base = RewardMachine::new(chain(), RewardMode::Base, 0.1).unwrap();
        assert_eq!(base.reward(3, 0), 1.0);
        assert_eq!(base.reward(2, 3), 0.0);
        let shaped = RewardMachine::new(chain(), RewardMode::Shaped, 0.1).unwrap();
        assert!((shaped.reward(3, 0) - 0.95).abs() < 1e-15);
        assert_eq!(shaped.reward(3, 3), 0.0);
        let path = [2, 3, 0];
        let total: f64 = path.windows(2).map(|w| shaped.reward(w[0], w[1])).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_falls_back() {
        // initial state is the accepting state
        let dfa = CoSafetyDfa::from_table(1, vec![0, 1], 0, 0, 1).unwrap();
        let rm = RewardMachine::new(dfa, RewardMode::Shaped, 0.1).unwrap();
        assert_eq!(rm.d_max(), 1);
        assert_eq!(rm.mode(), RewardMode::Base);
    }

    #[test]
    fn labels() {
        let lab = LabelingFunction::new(vec![
            BoxRegion::new(vec![17.0], vec![18.0]).unwrap(),
            BoxRegion::new(vec![17.5], vec![20.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(lab.label(&[17.2]), 0b01);
        assert_eq!(lab.label(&[17.5]), 0b11);
        assert_eq!(lab.label(&[19.0]), 0b10);
        assert_eq!(lab.label_or_empty(None), 0);
        assert!(BoxRegion::new(vec![2.0], vec![1.0]).is_err());
    }
}
