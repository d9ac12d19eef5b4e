//! Tabular finite-horizon minimax-Q learning on the product game, and the
//! coarse-to-fine multi-level schedule.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{AbstractGame, MaxNode, MinNode};
use crate::quantize::Cell;
use crate::rng::{self, StreamRng};

/// State-action values for both players, indexed by time and automaton
/// state. Blocks are allocated on first write; missing entries read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    horizon: usize,
    n_q: usize,
    n_slots: usize,
    n_u: usize,
    n_w: usize,
    max: Vec<Option<Vec<f64>>>,
    min: Vec<Option<Vec<f64>>>,
    max_visits: Vec<Option<Vec<u32>>>,
    min_visits: Vec<Option<Vec<u32>>>,
}

/// Dimensions of a [`QTable`]: horizon, automaton states, cell slots
/// (including the sink), external inputs, internal actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableShape {
    pub horizon: usize,
    pub n_q: usize,
    pub n_slots: usize,
    pub n_u: usize,
    pub n_w: usize,
}

impl TableShape {
    pub fn of(game: &AbstractGame) -> Self {
        Self {
            horizon: game.horizon(),
            n_q: game.n_q(),
            n_slots: game.n_slots(),
            n_u: game.n_u(),
            n_w: game.n_w(),
        }
    }
    pub fn n_blocks(&self) -> usize {
        (self.horizon + 1) * self.n_q
    }
    pub fn max_block_len(&self) -> usize {
        self.n_slots * self.n_u
    }
    pub fn min_block_len(&self) -> usize {
        self.n_slots * self.n_u * self.n_w
    }
}

impl QTable {
    pub fn new(shape: TableShape) -> Self {
        let b = shape.n_blocks();
        Self {
            horizon: shape.horizon,
            n_q: shape.n_q,
            n_slots: shape.n_slots,
            n_u: shape.n_u,
            n_w: shape.n_w,
            max: vec![None; b],
            min: vec![None; b],
            max_visits: vec![None; b],
            min_visits: vec![None; b],
        }
    }

    pub fn for_game(game: &AbstractGame) -> Self {
        Self::new(TableShape::of(game))
    }

    pub fn shape(&self) -> TableShape {
        TableShape {
            horizon: self.horizon,
            n_q: self.n_q,
            n_slots: self.n_slots,
            n_u: self.n_u,
            n_w: self.n_w,
        }
    }

    #[inline]
    fn block(&self, k: usize, q: usize) -> usize {
        k * self.n_q + q
    }

    /// Max-player values of block `(k, q)`, laid out `[slot * n_u + u]`.
    pub fn max_block(&self, k: usize, q: usize) -> Option<&[f64]> {
        self.max.get(self.block(k, q))?.as_deref()
    }

    /// Min-player values of block `(k, q)`, laid out `[(slot * n_u + u) * n_w + w]`.
    pub fn min_block(&self, k: usize, q: usize) -> Option<&[f64]> {
        self.min.get(self.block(k, q))?.as_deref()
    }

    pub fn set_max_block(&mut self, k: usize, q: usize, values: Vec<f64>) -> Result<()> {
        if k > self.horizon || q >= self.n_q || values.len() != self.n_slots * self.n_u {
            return Err(Error::input("max block does not fit the table"));
        }
        let b = self.block(k, q);
        self.max[b] = Some(values);
        Ok(())
    }

    pub fn set_min_block(&mut self, k: usize, q: usize, values: Vec<f64>) -> Result<()> {
        if k > self.horizon || q >= self.n_q || values.len() != self.n_slots * self.n_u * self.n_w {
            return Err(Error::input("min block does not fit the table"));
        }
        let b = self.block(k, q);
        self.min[b] = Some(values);
        Ok(())
    }

    pub fn q_max(&self, k: usize, q: usize, slot: usize, u: usize) -> f64 {
        self.max_block(k, q).map_or(0.0, |b| b[slot * self.n_u + u])
    }

    pub fn q_min(&self, k: usize, q: usize, slot: usize, u: usize, w: usize) -> f64 {
        self.min_block(k, q)
            .map_or(0.0, |b| b[(slot * self.n_u + u) * self.n_w + w])
    }

    /// `max_u Q(k, slot, q, u)`, 0 past the horizon.
    pub fn v_max(&self, k: usize, q: usize, slot: usize) -> f64 {
        if k > self.horizon {
            return 0.0;
        }
        match self.max_block(k, q) {
            None => 0.0,
            Some(b) => b[slot * self.n_u..(slot + 1) * self.n_u]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Iterate over allocated blocks as `(k, q)`.
    pub fn allocated(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.max.len())
            .filter(|&b| self.max[b].is_some() || self.min[b].is_some())
            .map(|b| (b / self.n_q, b % self.n_q))
    }

    fn ensure(&mut self, b: usize, visits: bool) {
        if self.max[b].is_none() {
            self.max[b] = Some(vec![0.0; self.n_slots * self.n_u]);
            self.min[b] = Some(vec![0.0; self.n_slots * self.n_u * self.n_w]);
        }
        if visits && self.max_visits[b].is_none() {
            self.max_visits[b] = Some(vec![0; self.n_slots * self.n_u]);
            self.min_visits[b] = Some(vec![0; self.n_slots * self.n_u * self.n_w]);
        }
    }
}

/// Deterministic memoryless strategies for both players.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    shape: TableShape,
    max: Vec<Option<Vec<u32>>>,
    min: Vec<Option<Vec<u32>>>,
}

impl Policy {
    pub fn shape(&self) -> TableShape {
        self.shape
    }

    /// Controller action at `(k, slot, q)`; 0 where nothing was learned.
    #[inline]
    pub fn max_action(&self, k: usize, q: usize, slot: usize) -> usize {
        if k > self.shape.horizon {
            return 0;
        }
        self.max[k * self.shape.n_q + q]
            .as_ref()
            .map_or(0, |b| b[slot] as usize)
    }

    #[inline]
    pub fn min_action(&self, k: usize, q: usize, slot: usize, u: usize) -> usize {
        if k > self.shape.horizon {
            return 0;
        }
        self.min[k * self.shape.n_q + q]
            .as_ref()
            .map_or(0, |b| b[slot * self.shape.n_u + u] as usize)
    }

    pub fn act_max(&self, game: &AbstractGame, node: &MaxNode) -> usize {
        self.max_action(node.k, node.q, game.grid().slot(node.cell))
    }

    pub fn act_min(&self, game: &AbstractGame, node: &MinNode) -> usize {
        self.min_action(node.k, node.q, game.grid().slot(node.cell), node.u)
    }

    /// Controller with an explicit action per `(k, q)` block and slot.
    pub fn from_max_actions(
        shape: TableShape,
        mut pick: impl FnMut(usize, usize, usize) -> usize,
    ) -> Self {
        let b = shape.n_blocks();
        let max = (0..b)
            .map(|i| {
                Some(
                    (0..shape.n_slots)
                        .map(|s| pick(i / shape.n_q, i % shape.n_q, s) as u32)
                        .collect(),
                )
            })
            .collect();
        Self {
            shape,
            max,
            min: vec![None; b],
        }
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn argmin_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy strategies: argmax at Max nodes, argmin at Min nodes, ties to the
/// lowest action index.
pub fn extract_policies(table: &QTable) -> Policy {
    let shape = table.shape();
    let max = table
        .max
        .iter()
        .map(|b| {
            b.as_ref().map(|b| {
                b.chunks(shape.n_u)
                    .map(|c| argmax_lowest(c) as u32)
                    .collect()
            })
        })
        .collect();
    let min = table
        .min
        .iter()
        .map(|b| {
            b.as_ref().map(|b| {
                b.chunks(shape.n_w)
                    .map(|c| argmin_lowest(c) as u32)
                    .collect()
            })
        })
        .collect();
    Policy { shape, max, min }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    /// Single global rate decayed linearly from `start` to `end` over all
    /// episodes of the run.
    Linear { start: f64, end: f64 },
    /// Per entry `min(1, c / (visits + 1))`. With `c = 1` each entry is the
    /// plain mean of its targets, whose lag compounds through the
    /// bootstrapped layers; `c` around 2 weights recent targets more.
    RobbinsMonro { c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    Point(Vec<f64>),
    /// Uniform over a box inside the state set.
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Uniform over time index, cell (sink included) and live automaton
    /// state, so that every node is a possible start.
    Exploring,
}

/// One stage of a multi-level schedule: grids coarser than the final ones by
/// the given factors, trained for `episodes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub state_factor: usize,
    pub input_factor: usize,
    pub episodes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    /// Episodes of a single-stage run; ignored when `schedule` is nonempty.
    pub episodes: u64,
    pub rate: LearningRate,
    /// Probability of a uniformly random action, for both players.
    pub explore: f64,
    pub discount: f64,
    pub initial: InitialStates,
    pub schedule: Vec<Stage>,
    pub seed: u64,
    /// Extra stream selector so that independent trainings under one seed
    /// draw from disjoint streams.
    pub stream: u64,
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        match self.rate {
            LearningRate::Linear { start, end } => {
                if !(start > 0.0 && start < 1.0 && end > 0.0 && end < 1.0) {
                    return Err(Error::config("learning rates must lie in (0, 1)"));
                }
            }
            LearningRate::RobbinsMonro { c } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::config("Robbins-Monro constant must be positive"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.explore) {
            return Err(Error::config("exploration rate must lie in [0, 1]"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config("discount must lie in (0, 1]"));
        }
        for s in &self.schedule {
            if s.state_factor == 0 || s.input_factor == 0 {
                return Err(Error::config("refinement factors must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_episodes(&self) -> u64 {
        if self.schedule.is_empty() {
            self.episodes
        } else {
            self.schedule.iter().map(|s| s.episodes).sum()
        }
    }
}

/// Incremental minimax-Q trainer. Episodes may be run in several calls and
/// the table carried across grids with [`Trainer::retarget`]; the learning
/// rate schedule spans `total` episodes overall.
pub struct Trainer<'c> {
    cfg: &'c LearnConfig,
    rng: StreamRng,
    table: QTable,
    done: u64,
    total: u64,
    live: Vec<Vec<usize>>,
    scratch: Vec<f64>,
}

impl<'c> Trainer<'c> {
    pub fn new(cfg: &'c LearnConfig, game: &AbstractGame) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: rng::stream(cfg.seed, rng::tag::TRAIN | cfg.stream),
            table: QTable::for_game(game),
            done: 0,
            total: cfg.total_episodes(),
            live: game.live_states(),
            scratch: Vec::new(),
        })
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }
    pub fn into_table(self) -> QTable {
        self.table
    }
    pub fn episodes_done(&self) -> u64 {
        self.done
    }

    /// Move the table onto `fine` by nearest-neighbour transfer from `coarse`.
    pub fn retarget(&mut self, coarse: &AbstractGame, fine: &AbstractGame) -> Result<()> {
        self.table = transfer(&self.table, coarse, fine)?;
        self.live = fine.live_states();
        Ok(())
    }

    fn global_rate(&self) -> f64 {
        match self.cfg.rate {
            LearningRate::Linear { start, end } => {
                let t = if self.total > 1 {
                    self.done.min(self.total - 1) as f64 / (self.total - 1) as f64
                } else {
                    0.0
                };
                start + (end - start) * t
            }
            LearningRate::RobbinsMonro { .. } => 0.0,
        }
    }

    fn start_node(&mut self, game: &AbstractGame) -> Option<MaxNode> {
        match &self.cfg.initial {
            InitialStates::Point(x) => game.reset(x).ok(),
            InitialStates::Uniform { lo, hi } => {
                let x: Vec<f64> = lo
                    .iter()
                    .zip(hi)
                    .map(|(&l, &h)| {
                        if h > l {
                            self.rng.random_range(l..h)
                        } else {
                            l
                        }
                    })
                    .collect();
                game.reset(&x).ok()
            }
            InitialStates::Exploring => {
                let k = self.rng.random_range(0..=game.horizon());
                let qs = &self.live[k];
                if qs.is_empty() {
                    return None;
                }
                let q = qs[self.rng.random_range(0..qs.len())];
                let slot = self.rng.random_range(0..game.n_slots());
                Some(MaxNode {
                    k,
                    cell: game.grid().cell_at_slot(slot),
                    q,
                })
            }
        }
    }

    /// Index of a best entry (`maximize` or not) with uniform random
    /// tie-breaking, together with the best value.
    fn pick(rng: &mut StreamRng, xs: &[f64], maximize: bool) -> (usize, f64) {
        let mut best = 0;
        let mut ties = 1u32;
        for i in 1..xs.len() {
            let better = if maximize {
                xs[i] > xs[best]
            } else {
                xs[i] < xs[best]
            };
            if better {
                best = i;
                ties = 1;
            } else if xs[i] == xs[best] {
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = i;
                }
            }
        }
        (best, xs[best])
    }

    /// Run `episodes` episodes of ε-greedy self-play on `game`.
    pub fn run(&mut self, game: &AbstractGame, episodes: u64) -> Result<()> {
        if TableShape::of(game) != self.table.shape() {
            return Err(Error::config("table does not match the game"));
        }
        let rm_visits = matches!(self.cfg.rate, LearningRate::RobbinsMonro { .. });
        let c = match self.cfg.rate {
            LearningRate::RobbinsMonro { c } => c,
            _ => 0.0,
        };
        let (n_u, n_w) = (game.n_u(), game.n_w());
        let gamma = self.cfg.discount;
        let eps = self.cfg.explore;
        for _ in 0..episodes {
            let alpha = self.global_rate();
            self.done += 1;
            let Some(mut node) = self.start_node(game) else {
                continue;
            };
            if game.settled_value(node.q).is_some() {
                continue;
            }
            loop {
                let slot = game.grid().slot(node.cell);
                let b = self.table.block(node.k, node.q);
                self.table.ensure(b, rm_visits);

                // Max move.
                let u = {
                    let qm = &self.table.max[b].as_ref().unwrap()[slot * n_u..(slot + 1) * n_u];
                    if eps > 0.0 && self.rng.random::<f64>() < eps {
                        self.rng.random_range(0..n_u)
                    } else {
                        Self::pick(&mut self.rng, qm, true).0
                    }
                };
                let min_node = MinNode {
                    k: node.k,
                    cell: node.cell,
                    q: node.q,
                    u,
                };
                let row = (slot * n_u + u) * n_w;
                self.scratch.clear();
                self.scratch
                    .extend_from_slice(&self.table.min[b].as_ref().unwrap()[row..row + n_w]);
                let (greedy_w, min_value) = Self::pick(&mut self.rng, &self.scratch, false);
                let w = if eps > 0.0 && self.rng.random::<f64>() < eps {
                    self.rng.random_range(0..n_w)
                } else {
                    greedy_w
                };

                // Max entry: Dirac move into the Min node, no reward.
                let i = slot * n_u + u;
                let a = match self.table.max_visits[b].as_mut() {
                    Some(v) if rm_visits => {
                        v[i] = v[i].saturating_add(1);
                        (c / v[i] as f64).min(1.0)
                    }
                    _ => alpha,
                };
                let e = &mut self.table.max[b].as_mut().unwrap()[i];
                *e = (1.0 - a) * *e + a * gamma * min_value;

                // Min move.
                let tr = game.step_min(min_node, w, &mut self.rng);
                let boot = if tr.terminal {
                    0.0
                } else {
                    self.table
                        .v_max(tr.to.k, tr.to.q, game.grid().slot(tr.to.cell))
                };
                let j = row + w;
                let a = match self.table.min_visits[b].as_mut() {
                    Some(v) if rm_visits => {
                        v[j] = v[j].saturating_add(1);
                        (c / v[j] as f64).min(1.0)
                    }
                    _ => alpha,
                };
                let e = &mut self.table.min[b].as_mut().unwrap()[j];
                *e = (1.0 - a) * *e + a * (tr.reward + gamma * boot);

                if tr.terminal {
                    break;
                }
                node = tr.to;
            }
        }
        Ok(())
    }
}

/// Train a single-stage run on `game`.
pub fn train(game: &AbstractGame, cfg: &LearnConfig) -> Result<QTable> {
    let mut t = Trainer::new(cfg, game)?;
    t.run(game, cfg.total_episodes())?;
    Ok(t.into_table())
}

/// Copy values from a coarse table onto a finer game: each fine cell reads
/// the coarse cell containing its representative, each fine internal action
/// the coarse action whose cell contains its point.
pub fn transfer(coarse: &QTable, g_coarse: &AbstractGame, g_fine: &AbstractGame) -> Result<QTable> {
    if TableShape::of(g_coarse) != coarse.shape() {
        return Err(Error::config("table does not match the coarse game"));
    }
    if g_coarse.horizon() != g_fine.horizon()
        || g_coarse.n_u() != g_fine.n_u()
        || g_coarse.reward_machine().dfa() != g_fine.reward_machine().dfa()
    {
        return Err(Error::config(
            "games differ in horizon, inputs or specification",
        ));
    }
    let shape = TableShape::of(g_fine);
    let mut out = QTable::new(shape);
    let (fine_grid, coarse_grid) = (g_fine.grid(), g_coarse.grid());
    let mut rep = vec![0.0; fine_grid.dim()];
    let slot_map: Vec<usize> = (0..shape.n_slots)
        .map(|s| match fine_grid.cell_at_slot(s) {
            Cell::Sink => coarse_grid.slot(Cell::Sink),
            Cell::Inside(c) => {
                fine_grid.representative_into(c, &mut rep);
                coarse_grid.slot(coarse_grid.quantize_unchecked(&rep))
            }
        })
        .collect();
    let w_map: Vec<usize> = (0..shape.n_w)
        .map(|w| g_coarse.inputs().nearest_action(g_fine.inputs(), w))
        .collect();
    let (n_u, n_wc) = (shape.n_u, coarse.n_w);
    for (k, q) in coarse.allocated().collect::<Vec<_>>() {
        let b = out.block(k, q);
        out.ensure(b, false);
        if let Some(src) = coarse.max_block(k, q) {
            let dst = out.max[b].as_mut().unwrap();
            for (s, &cs) in slot_map.iter().enumerate() {
                dst[s * n_u..(s + 1) * n_u].copy_from_slice(&src[cs * n_u..(cs + 1) * n_u]);
            }
        }
        if let Some(src) = coarse.min_block(k, q) {
            let dst = out.min[b].as_mut().unwrap();
            for (s, &cs) in slot_map.iter().enumerate() {
                for u in 0..n_u {
                    let from = (cs * n_u + u) * n_wc;
                    let to = (s * n_u + u) * shape.n_w;
                    for (w, &cw) in w_map.iter().enumerate() {
                        dst[to + w] = src[from + cw];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Progress report handed to the stage callback of [`multilevel_train`].
pub struct StageEnd<'a> {
    pub stage: usize,
    pub game: &'a AbstractGame,
    pub table: &'a QTable,
    pub episodes_done: u64,
}

/// Train stage by stage from coarse to fine grids, transferring the table
/// between stages. An empty schedule is a single stage on `g_final`.
pub fn multilevel_train(
    g_final: &AbstractGame,
    cfg: &LearnConfig,
    mut on_stage: impl FnMut(StageEnd<'_>),
) -> Result<QTable> {
    let stages: Vec<Stage> = if cfg.schedule.is_empty() {
        vec![Stage {
            state_factor: 1,
            input_factor: 1,
            episodes: cfg.episodes,
        }]
    } else {
        cfg.schedule.clone()
    };
    let games: Vec<AbstractGame> = stages
        .iter()
        .map(|s| g_final.coarsened(s.state_factor, s.input_factor))
        .collect::<Result<_>>()?;
    let mut trainer = Trainer::new(cfg, &games[0])?;
    for (i, (stage, game)) in stages.iter().zip(&games).enumerate() {
        if i > 0 {
            trainer.retarget(&games[i - 1], game)?;
        }
        trainer.run(game, stage.episodes)?;
        on_stage(StageEnd {
            stage: i,
            game,
            table: trainer.table(),
            episodes_done: trainer.episodes_done(),
        });
    }
    let last = games.len() - 1;
    if stages[last].state_factor != 1 || stages[last].input_factor != 1 {
        trainer.retarget(&games[last], g_final)?;
    }
    Ok(trainer.into_table())
}
