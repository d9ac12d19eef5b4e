//! The implicit product game between a controller (Max) and the
//! environment (Min) on one quantized subsystem.
//!
//! Max nodes are `(k, cell, q)`; Max picks an external input and moves to the
//! Min node `(k, cell, q, u)` without consuming time. Min picks a quantized
//! internal input, after which the subsystem is simulated once from the cell
//! representative and the automaton reads the label of the source cell.
//! Transitions are sampled on demand; no kernel is ever tabulated here.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::SubsystemModel;
use crate::quantize::{Cell, Grid, InputGrid};
use crate::spec_lang::{LabelingFunction, Letter, RewardMachine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaxNode {
    pub k: usize,
    pub cell: Cell,
    pub q: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MinNode {
    pub k: usize,
    pub cell: Cell,
    pub q: usize,
    pub u: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: MinNode,
    pub w: usize,
    pub to: MaxNode,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct AbstractGame {
    model: SubsystemModel,
    grid: Grid,
    inputs: InputGrid,
    rm: RewardMachine,
    labels: LabelingFunction,
    horizon: usize,
    // Per slot (sink last): label of the representative.
    slot_labels: Vec<Letter>,
    // A(u)·rep + b·u + c per (cell, u), and D·w per internal action.
    drift: Vec<f64>,
    coupling: Vec<f64>,
}

impl AbstractGame {
    pub fn new(
        model: SubsystemModel,
        grid: Grid,
        inputs: InputGrid,
        rm: RewardMachine,
        labels: LabelingFunction,
        horizon: usize,
    ) -> Result<Self> {
        let n = model.state_dim();
        if grid.dim() != n {
            return Err(Error::config(
                "state grid dimension does not match the model",
            ));
        }
        if inputs.channels() != model.internal_dim() {
            return Err(Error::config(
                "internal-input grid does not match the model",
            ));
        }
        if rm.dfa().n_letters() != 1 << labels.n_atoms() {
            return Err(Error::config(
                "automaton alphabet does not match the labeling",
            ));
        }
        let n_cells = grid.n_cells();
        let n_u = model.n_inputs();
        let mut rep = vec![0.0; n];
        let mut slot_labels = Vec::with_capacity(n_cells + 1);
        let mut drift = vec![0.0; n_cells * n_u * n];
        for c in 0..n_cells {
            grid.representative_into(c, &mut rep);
            slot_labels.push(labels.label(&rep));
            for u in 0..n_u {
                let at = (c * n_u + u) * n;
                model.drift_into(&rep, u, &mut drift[at..at + n]);
            }
        }
        slot_labels.push(0);
        let n_w = inputs.n_actions();
        let mut coupling = vec![0.0; n_w * n];
        for w in 0..n_w {
            model.coupling_into(inputs.point(w), &mut coupling[w * n..(w + 1) * n]);
        }
        Ok(Self {
            model,
            grid,
            inputs,
            rm,
            labels,
            horizon,
            slot_labels,
            drift,
            coupling,
        })
    }

    pub fn model(&self) -> &SubsystemModel {
        &self.model
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn inputs(&self) -> &InputGrid {
        &self.inputs
    }
    pub fn reward_machine(&self) -> &RewardMachine {
        &self.rm
    }
    pub fn labels(&self) -> &LabelingFunction {
        &self.labels
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n_slots(&self) -> usize {
        self.grid.n_cells() + 1
    }
    pub fn n_u(&self) -> usize {
        self.model.n_inputs()
    }
    pub fn n_w(&self) -> usize {
        self.inputs.n_actions()
    }
    pub fn n_q(&self) -> usize {
        self.rm.dfa().n_states()
    }

    /// Label of the representative of a cell slot; the sink is unlabeled.
    #[inline]
    pub fn slot_label(&self, slot: usize) -> Letter {
        self.slot_labels[slot]
    }

    /// Automaton state after reading the label of `cell` from `q`.
    #[inline]
    pub fn next_q(&self, q: usize, cell: Cell) -> usize {
        self.rm
            .dfa()
            .step(q, self.slot_labels[self.grid.slot(cell)])
    }

    /// Mean of the successor of `(cell, u, w)` computed from the representative.
    #[inline]
    pub fn mean_into(&self, cell: usize, u: usize, w: usize, out: &mut [f64]) {
        let n = out.len();
        let at = (cell * self.n_u() + u) * n;
        for i in 0..n {
            out[i] = self.drift[at + i] + self.coupling[w * n + i];
        }
    }

    /// State-input pair count `𝒯·(n_x·n_u + n_x·n_u·n_w)`, ignoring the
    /// automaton factor.
    pub fn state_input_pairs(&self) -> u64 {
        let nx = self.grid.n_cells() as u64;
        let nu = self.n_u() as u64;
        let nw = self.n_w() as u64;
        self.horizon as u64 * (nx * nu + nx * nu * nw)
    }

    /// Same model and specification on grids coarser by the given factors.
    pub fn coarsened(&self, state_factor: usize, input_factor: usize) -> Result<AbstractGame> {
        let grid = if state_factor == 1 {
            self.grid.clone()
        } else {
            self.grid.coarsen(state_factor)?
        };
        let inputs = if input_factor == 1 || self.inputs.grid().is_none() {
            self.inputs.clone()
        } else {
            self.inputs.coarsen(input_factor)?
        };
        AbstractGame::new(
            self.model.clone(),
            grid,
            inputs,
            self.rm.clone(),
            self.labels.clone(),
            self.horizon,
        )
    }

    /// For each time index `0..=horizon`, the non-absorbing automaton states
    /// reachable in exactly that many steps using letters some cell carries.
    pub fn live_states(&self) -> Vec<Vec<usize>> {
        let dfa = self.rm.dfa();
        let mut letters: Vec<Letter> = self.slot_labels.clone();
        letters.sort_unstable();
        letters.dedup();
        let mut layers = Vec::with_capacity(self.horizon + 1);
        let mut cur = vec![dfa.initial()];
        for _ in 0..=self.horizon {
            cur.retain(|&q| self.settled_value(q).is_none());
            layers.push(cur.clone());
            let mut next: Vec<usize> = cur
                .iter()
                .flat_map(|&q| letters.iter().map(move |&l| dfa.step(q, l)))
                .collect();
            next.sort_unstable();
            next.dedup();
            cur = next;
        }
        layers
    }

    /// Value already decided at a node whose automaton state is absorbing:
    /// 1 when accepted, 0 when rejected.
    pub fn settled_value(&self, q: usize) -> Option<f64> {
        let dfa = self.rm.dfa();
        if dfa.is_accepting(q) {
            Some(1.0)
        } else if dfa.is_rejecting(q) {
            Some(0.0)
        } else {
            None
        }
    }

    pub fn reset(&self, x0: &[f64]) -> Result<MaxNode> {
        match self.grid.quantize(x0)? {
            Cell::Sink => Err(Error::input("initial state lies outside the state box")),
            cell => Ok(MaxNode {
                k: 0,
                cell,
                q: self.rm.dfa().initial(),
            }),
        }
    }

    pub fn step_max(&self, node: MaxNode, u: usize) -> Result<MinNode> {
        if u >= self.n_u() {
            return Err(Error::input("external input index out of range"));
        }
        Ok(MinNode {
            k: node.k,
            cell: node.cell,
            q: node.q,
            u,
        })
    }

    /// Min move with an explicit noise sample (one entry per state dimension).
    pub fn step_min_with_noise(&self, node: MinNode, w: usize, z: &[f64]) -> Transition {
        let q_next = self.next_q(node.q, node.cell);
        let cell = match node.cell {
            Cell::Sink => Cell::Sink,
            Cell::Inside(c) => {
                let n = self.grid.dim();
                let mut x = [0.0f64; 8];
                let mut heap;
                let x: &mut [f64] = if n <= 8 {
                    &mut x[..n]
                } else {
                    heap = vec![0.0; n];
                    &mut heap
                };
                self.mean_into(c, node.u, w, x);
                let r = self.model.noise_scale();
                for i in 0..n {
                    x[i] += r[i] * z[i];
                }
                self.grid.quantize_unchecked(x)
            }
        };
        let dfa = self.rm.dfa();
        let k = node.k + 1;
        Transition {
            from: node,
            w,
            to: MaxNode { k, cell, q: q_next },
            reward: self.rm.reward(node.q, q_next),
            terminal: dfa.is_accepting(q_next) || dfa.is_rejecting(q_next) || k > self.horizon,
        }
    }

    pub fn step_min<R: Rng + ?Sized>(&self, node: MinNode, w: usize, rng: &mut R) -> Transition {
        let n = self.grid.dim();
        if node.cell == Cell::Sink {
            return self.step_min_with_noise(node, w, &[]);
        }
        if n == 1 {
            let z: f64 = rng.sample(StandardNormal);
            return self.step_min_with_noise(node, w, &[z]);
        }
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        self.step_min_with_noise(node, w, &z)
    }

    /// Play `rho` at Max nodes and `xi` at Min nodes from `start` until a
    /// terminal transition; returns the undiscounted return. Transitions are
    /// appended to `trace` when given.
    pub fn play<R, P, E>(
        &self,
        start: MaxNode,
        mut rho: P,
        mut xi: E,
        rng: &mut R,
        mut trace: Option<&mut Vec<Transition>>,
    ) -> f64
    where
        R: Rng + ?Sized,
        P: FnMut(&MaxNode) -> usize,
        E: FnMut(&MinNode) -> usize,
    {
        if let Some(v) = self.settled_value(start.q) {
            return v;
        }
        let mut node = start;
        let mut ret = 0.0;
        loop {
            let u = rho(&node);
            let min = MinNode {
                k: node.k,
                cell: node.cell,
                q: node.q,
                u,
            };
            let w = xi(&min);
            let tr = self.step_min(min, w, rng);
            ret += tr.reward;
            if let Some(t) = trace.as_deref_mut() {
                t.push(tr);
            }
            if tr.terminal {
                return ret;
            }
            node = tr.to;
        }
    }

    /// Reset at `x0` and play to the end, returning the return and the trace.
    pub fn rollout<R, P, E>(
        &self,
        x0: &[f64],
        rho: P,
        xi: E,
        rng: &mut R,
    ) -> Result<(f64, Vec<Transition>)>
    where
        R: Rng + ?Sized,
        P: FnMut(&MaxNode) -> usize,
        E: FnMut(&MinNode) -> usize,
    {
        let start = self.reset(x0)?;
        let mut trace = Vec::new();
        let ret = self.play(start, rho, xi, rng, Some(&mut trace));
        Ok((ret, trace))
    }
}
