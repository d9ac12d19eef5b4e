//! Model-aware validation: the abstract transition kernel obtained by
//! integrating the Gaussian density over grid cells, and exact backward
//! induction on the product game.
//!
//! Nothing in the learning path uses this module.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::game::AbstractGame;
use crate::learner::{Policy, QTable, TableShape};
use crate::math::normal_cdf;
use crate::model::Noise;
use crate::quantize::Cell;

// Beyond this many standard deviations the Gaussian tail is below 1e-19.
const TAIL: f64 = 9.0;

/// Probabilities of landing in each cell (and the sink) from the
/// representative of a cell under a given pair of inputs. Rows are computed
/// on demand rather than stored.
#[derive(Debug, Clone, Copy)]
pub struct AbstractKernel<'g> {
    game: &'g AbstractGame,
}

/// Kernel of `game`; fails when the noise admits no density.
pub fn build_kernel(game: &AbstractGame) -> Result<AbstractKernel<'_>> {
    match game.model().noise() {
        Noise::StandardGaussian => {}
    }
    if game.model().noise_scale().iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Unsupported(
            "a zero noise scale has no density".into(),
        ));
    }
    Ok(AbstractKernel { game })
}

impl<'g> AbstractKernel<'g> {
    pub fn game(&self) -> &'g AbstractGame {
        self.game
    }

    /// Destination distribution over slots (sink last) from `slot` under
    /// `(u, w)`. The sink is absorbing.
    pub fn row_into(&self, slot: usize, u: usize, w: usize, out: &mut [f64]) {
        let grid = self.game.grid();
        let sink = grid.n_cells();
        out.iter_mut().for_each(|o| *o = 0.0);
        if slot >= sink {
            out[sink] = 1.0;
            return;
        }
        let n = grid.dim();
        let mut mean = vec![0.0; n];
        self.game.mean_into(slot, u, w, &mut mean);
        let r = self.game.model().noise_scale();
        // Per-dimension masses of each axis cell.
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|d| {
                let cnt = grid.counts()[d];
                (0..cnt)
                    .map(|i| {
                        let lo = grid.lo()[d] + i as f64 * grid.width()[d];
                        let hi = if i + 1 == cnt {
                            grid.hi()[d]
                        } else {
                            lo + grid.width()[d]
                        };
                        interval_mass(lo, hi, mean[d], r[d])
                    })
                    .collect()
            })
            .collect();
        let mut inside = 0.0;
        for (c, o) in out.iter_mut().enumerate().take(sink) {
            let mut rest = c;
            let mut p = 1.0;
            for (d, axis) in axes.iter().enumerate() {
                let cnt = grid.counts()[d];
                p *= axis[rest % cnt];
                rest /= cnt;
            }
            *o = p;
            inside += p;
        }
        out[sink] = if n == 1 {
            normal_cdf((grid.lo()[0] - mean[0]) / r[0])
                + normal_cdf((mean[0] - grid.hi()[0]) / r[0])
        } else {
            (1.0 - inside).max(0.0)
        };
    }

    pub fn row(&self, slot: usize, u: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.game.n_slots()];
        self.row_into(slot, u, w, &mut out);
        out
    }

    /// Expected value of `values` (indexed by slot) after one transition.
    pub fn expect(&self, slot: usize, u: usize, w: usize, values: &[f64]) -> f64 {
        let grid = self.game.grid();
        let sink = grid.n_cells();
        if slot >= sink {
            return values[sink];
        }
        if grid.dim() != 1 {
            let row = self.row(slot, u, w);
            return row.iter().zip(values).map(|(p, v)| p * v).sum();
        }
        let mut m = [0.0];
        self.game.mean_into(slot, u, w, &mut m);
        let (m, r) = (m[0], self.game.model().noise_scale()[0]);
        let (lo, hi, width, cnt) = (
            grid.lo()[0],
            grid.hi()[0],
            grid.width()[0],
            grid.counts()[0],
        );
        let sink_mass = normal_cdf((lo - m) / r) + normal_cdf((m - hi) / r);
        let mut acc = sink_mass * values[sink];
        // Only cells within the numerical support of the density contribute.
        let first = libm::floor(((m - TAIL * r) - lo) / width).max(0.0) as usize;
        let last =
            (libm::floor(((m + TAIL * r) - lo) / width).max(-1.0) + 1.0).min(cnt as f64) as usize;
        let edge = |i: usize| if i == cnt { hi } else { lo + i as f64 * width };
        let mut i = first;
        while i < last {
            // Runs of equal value share one mass evaluation.
            let v = values[i];
            let mut j = i + 1;
            while j < last && values[j] == v {
                j += 1;
            }
            if v != 0.0 {
                acc += v * interval_mass(edge(i), edge(j), m, r);
            }
            i = j;
        }
        acc
    }
}

/// Mass of `N(m, r²)` on `[lo, hi]`, computed on the side of the smaller
/// tail for accuracy.
fn interval_mass(lo: f64, hi: f64, m: f64, r: f64) -> f64 {
    let (a, b) = ((lo - m) / r, (hi - m) / r);
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// Who picks the actions during backward induction.
#[derive(Debug, Clone, Copy)]
pub enum Player<'a> {
    Optimal,
    Fixed(&'a Policy),
}

/// Which rewards the induction accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// The game's reward machine (base or shaped).
    GameReward,
    /// Probability of reaching the accepting state within the horizon.
    Satisfaction,
}

/// Exact values on the live part of the product game. `q` holds the
/// state-action values in the learner's layout; `v` the Max-node values per
/// `(k, q)` block and slot.
#[derive(Debug, Clone)]
pub struct ValueTables {
    pub q: QTable,
    v: Vec<Option<Vec<f64>>>,
    shape: TableShape,
    settled: Vec<Option<f64>>,
}

impl ValueTables {
    /// Value of the Max node `(k, slot, q)`: the settled value for absorbing
    /// automaton states, 0 past the horizon or outside the live layers.
    pub fn value(&self, k: usize, q: usize, slot: usize) -> f64 {
        if let Some(v) = self.settled[q] {
            return v;
        }
        if k > self.shape.horizon {
            return 0.0;
        }
        self.v[k * self.shape.n_q + q]
            .as_ref()
            .map_or(0.0, |b| b[slot])
    }

    pub fn value_block(&self, k: usize, q: usize) -> Option<&[f64]> {
        self.v.get(k * self.shape.n_q + q)?.as_deref()
    }

    /// Value at the reset node of `x0`.
    pub fn initial_value(&self, game: &AbstractGame, x0: &[f64]) -> Result<f64> {
        let n = game.reset(x0)?;
        Ok(self.value(n.k, n.q, game.grid().slot(n.cell)))
    }
}

/// Backward induction over the live `(k, q)` layers with the given
/// objective and action choices. Terminal handling matches the game's
/// transitions: no bootstrap after an absorbing automaton state or past the
/// horizon.
pub fn induction(
    kernel: &AbstractKernel<'_>,
    objective: Objective,
    max: Player<'_>,
    min: Player<'_>,
) -> Result<ValueTables> {
    let game = kernel.game();
    let shape = TableShape::of(game);
    for p in [max, min] {
        if let Player::Fixed(pol) = p {
            if pol.shape() != shape {
                return Err(Error::Policy("policy does not match the game".into()));
            }
        }
    }
    let dfa = game.reward_machine().dfa();
    let rm = game.reward_machine();
    let reward = |q: usize, q2: usize| match objective {
        Objective::GameReward => rm.reward(q, q2),
        Objective::Satisfaction => f64::from(u8::from(dfa.is_accepting(q2))),
    };
    let settled: Vec<Option<f64>> = (0..shape.n_q)
        .map(|q| match objective {
            Objective::Satisfaction => game.settled_value(q),
            // Under the game's rewards an absorbing state yields nothing more.
            Objective::GameReward => game.settled_value(q).map(|_| 0.0),
        })
        .collect();
    let live = game.live_states();
    let (n_slots, n_u, n_w) = (shape.n_slots, shape.n_u, shape.n_w);
    let mut tables = ValueTables {
        q: QTable::new(shape),
        v: vec![None; shape.n_blocks()],
        shape,
        settled,
    };
    let mut next_values = vec![0.0; n_slots];
    let mut qmin = vec![0.0; n_slots * n_u * n_w];
    let mut qmax = vec![0.0; n_slots * n_u];
    for k in (0..=shape.horizon).rev() {
        for &q in &live[k] {
            for slot in 0..n_slots {
                let q2 = game.next_q(q, game.grid().cell_at_slot(slot));
                let r = reward(q, q2);
                let terminal =
                    dfa.is_accepting(q2) || dfa.is_rejecting(q2) || k + 1 > shape.horizon;
                if !terminal {
                    for (s2, nv) in next_values.iter_mut().enumerate() {
                        *nv = tables.value(k + 1, q2, s2);
                    }
                }
                let us: Vec<usize> = match max {
                    Player::Optimal => (0..n_u).collect(),
                    Player::Fixed(p) => vec![p.max_action(k, q, slot)],
                };
                for u in 0..n_u {
                    let row = (slot * n_u + u) * n_w;
                    let needed = us.contains(&u);
                    for w in 0..n_w {
                        qmin[row + w] = if !needed {
                            0.0
                        } else if terminal {
                            r
                        } else {
                            r + kernel.expect(slot, u, w, &next_values)
                        };
                    }
                    let vals = &qmin[row..row + n_w];
                    qmax[slot * n_u + u] = match min {
                        Player::Optimal => vals.iter().copied().fold(f64::INFINITY, f64::min),
                        Player::Fixed(p) => vals[p.min_action(k, q, slot, u)],
                    };
                }
            }
            let v: Vec<f64> = (0..n_slots)
                .map(|slot| {
                    let row = &qmax[slot * n_u..(slot + 1) * n_u];
                    match max {
                        Player::Optimal => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                        Player::Fixed(p) => row[p.max_action(k, q, slot)],
                    }
                })
                .collect();
            tables.q.set_max_block(k, q, qmax.clone())?;
            tables.q.set_min_block(k, q, qmin.clone())?;
            tables.v[k * shape.n_q + q] = Some(v);
        }
    }
    Ok(tables)
}

/// Optimal values under the game's own rewards.
pub fn solve(kernel: &AbstractKernel<'_>) -> Result<ValueTables> {
    induction(
        kernel,
        Objective::GameReward,
        Player::Optimal,
        Player::Optimal,
    )
}

/// Max-min probability of satisfying the specification from `x0`.
pub fn optimal_satisfaction(kernel: &AbstractKernel<'_>, x0: &[f64]) -> Result<f64> {
    induction(
        kernel,
        Objective::Satisfaction,
        Player::Optimal,
        Player::Optimal,
    )?
    .initial_value(kernel.game(), x0)
}

/// Satisfaction probability of the controller `rho` from `x0` against the
/// environment's exact best response.
pub fn best_response_value(kernel: &AbstractKernel<'_>, rho: &Policy, x0: &[f64]) -> Result<f64> {
    induction(
        kernel,
        Objective::Satisfaction,
        Player::Fixed(rho),
        Player::Optimal,
    )?
    .initial_value(kernel.game(), x0)
}

/// Expected return of a fixed strategy pair.
pub fn evaluate_pair(
    kernel: &AbstractKernel<'_>,
    objective: Objective,
    rho: &Policy,
    xi: &Policy,
) -> Result<ValueTables> {
    induction(kernel, objective, Player::Fixed(rho), Player::Fixed(xi))
}

/// Largest absolute difference between a learned table and exact values
/// over the live layers.
pub fn max_norm_distance(learned: &QTable, exact: &ValueTables, game: &AbstractGame) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, qs) in game.live_states().iter().enumerate() {
        for &q in qs {
            let pairs = [
                (learned.max_block(k, q), exact.q.max_block(k, q)),
                (learned.min_block(k, q), exact.q.min_block(k, q)),
            ];
            for (a, b) in pairs {
                if let Some(b) = b {
                    match a {
                        Some(a) => a
                            .iter()
                            .zip(b)
                            .for_each(|(x, y)| worst = worst.max((x - y).abs())),
                        None => b.iter().for_each(|y| worst = worst.max(y.abs())),
                    }
                }
            }
        }
    }
    worst
}

/// Slot reached from a cell; convenience for callers holding cells.
pub fn slot_of(game: &AbstractGame, cell: Cell) -> usize {
    game.grid().slot(cell)
}
