//! Compositional lower bound for networks, Monte Carlo estimates with Wilson
//! intervals, and closed-loop simulation of the continuous network under the
//! learned local controllers.
//!
//! Sampling is split into fixed-size chunks, each drawing from its own
//! generator stream, so results depend only on the seed and the sample count
//! and not on how chunks are distributed over workers.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::game::AbstractGame;
use crate::learner::Policy;
use crate::math::binomial;
use crate::model::NetworkModel;
use crate::quantize::Cell;
use crate::rng;

/// Samples per generator stream.
pub const CHUNK: u64 = 10_000;

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Composition penalty `½[(1+ε)^N − (1−ε)^N]`.
pub fn penalty(eps: f64, n: u32) -> f64 {
    0.5 * (libm::pow(1.0 + eps, f64::from(n)) - libm::pow(1.0 - eps, f64::from(n)))
}

/// The same penalty as the odd terms of the binomial expansion,
/// `Σ_{j odd} C(N, j) ε^j`.
pub fn penalty_odd_sum(eps: f64, n: u32) -> f64 {
    (1..=n)
        .step_by(2)
        .map(|j| binomial(n, j) * libm::pow(eps, f64::from(j)))
        .sum()
}

/// `∏ p_i − penalty(max ε_i, N)`.
pub fn lower_bound(p: &[f64], eps: &[f64]) -> Result<f64> {
    if p.len() != eps.len() || p.is_empty() {
        return Err(Error::input(
            "need one probability and one error per subsystem",
        ));
    }
    let e = eps.iter().copied().fold(0.0, f64::max);
    Ok(p.iter().product::<f64>() - penalty(e, p.len() as u32))
}

/// Success frequency with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub successes: u64,
    pub samples: u64,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn from_counts(successes: u64, samples: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::input("no samples"));
        }
        let (lo, hi) = wilson_interval(successes, samples, Z95);
        Ok(Self {
            successes,
            samples,
            p: successes as f64 / samples as f64,
            lo,
            hi,
        })
    }

    /// Half width of the interval around the point estimate, the larger side.
    pub fn half_width(&self) -> f64 {
        (self.p - self.lo).max(self.hi - self.p)
    }
}

pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes as f64 == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Where a subsystem probability in the bound comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSource {
    /// Exact best-response value on the abstract game.
    Oracle,
    /// Lower end of the sampled adversarial interval.
    SampledLower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionReport {
    pub p: Vec<f64>,
    pub eps: Vec<f64>,
    pub source: BoundSource,
    pub epsilon: f64,
    pub penalty: f64,
    pub p_low: f64,
    /// True when the bound is negative and so carries no information.
    pub vacuous: bool,
}

pub fn compose(p: Vec<f64>, eps: Vec<f64>, source: BoundSource) -> Result<CompositionReport> {
    let p_low = lower_bound(&p, &eps)?;
    let epsilon = eps.iter().copied().fold(0.0, f64::max);
    let penalty = penalty(epsilon, p.len() as u32);
    Ok(CompositionReport {
        p,
        eps,
        source,
        epsilon,
        penalty,
        p_low,
        vacuous: p_low < 0.0,
    })
}

/// A local controller: the subsystem's game (grid, labels, automaton) and
/// the learned strategy.
#[derive(Debug, Clone, Copy)]
pub struct LocalController<'a> {
    pub game: &'a AbstractGame,
    pub policy: &'a Policy,
}

fn check_controllers(
    net: &NetworkModel,
    ctrls: &[LocalController<'_>],
    x0: &[Vec<f64>],
) -> Result<()> {
    if ctrls.len() != net.len() || x0.len() != net.len() {
        return Err(Error::input(
            "need one controller and one initial state per subsystem",
        ));
    }
    for (i, c) in ctrls.iter().enumerate() {
        let m = net.subsystem(i);
        if c.game.grid().dim() != m.state_dim()
            || c.game.n_u() != m.n_inputs()
            || x0[i].len() != m.state_dim()
        {
            return Err(Error::input("controller does not fit its subsystem"));
        }
        if c.policy.shape() != crate::learner::TableShape::of(c.game) {
            return Err(Error::input("policy does not fit its game"));
        }
    }
    Ok(())
}

/// Closed-loop simulation of one run. Each controller sees its own quantized
/// state, automaton state and time; the automata read the labels of the true
/// states. Calls `record(k, states)` for `k = 0..=T` where `T` is the longest
/// horizon, and returns whether every local automaton accepted.
fn simulate<R: Rng + ?Sized>(
    net: &NetworkModel,
    ctrls: &[LocalController<'_>],
    x0: &[Vec<f64>],
    rng: &mut R,
    mut record: impl FnMut(usize, &[Vec<f64>]),
) -> bool {
    let n = net.len();
    let horizon = ctrls.iter().map(|c| c.game.horizon()).max().unwrap_or(0);
    let mut x: Vec<Vec<f64>> = x0.to_vec();
    let mut q: Vec<usize> = ctrls
        .iter()
        .map(|c| c.game.reward_machine().dfa().initial())
        .collect();
    let mut u = vec![0usize; n];
    let mut z: Vec<Vec<f64>> = x0.iter().map(|x| vec![0.0; x.len()]).collect();
    for k in 0..=horizon {
        record(k, &x);
        for i in 0..n {
            let c = &ctrls[i];
            let dfa = c.game.reward_machine().dfa();
            if dfa.is_accepting(q[i]) || dfa.is_rejecting(q[i]) {
                u[i] = 0;
                continue;
            }
            let cell = c.game.grid().quantize_unchecked(&x[i]);
            u[i] = c.policy.max_action(k, q[i], c.game.grid().slot(cell));
            let label = match cell {
                Cell::Sink => 0,
                Cell::Inside(_) => c.game.labels().label(&x[i]),
            };
            q[i] = dfa.step(q[i], label);
        }
        for zi in z.iter_mut() {
            for v in zi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        x = net.step(&x, &u, &z).expect("dimensions checked");
    }
    ctrls
        .iter()
        .zip(&q)
        .all(|(c, &qi)| c.game.reward_machine().dfa().is_accepting(qi))
}

fn chunk_len(n: u64, chunk: u64) -> u64 {
    (n - chunk * CHUNK).min(CHUNK)
}

/// Number of chunks a run of `n` samples is split into.
pub fn n_chunks(n: u64) -> u64 {
    n.div_ceil(CHUNK)
}

/// Accepting runs of the network within chunk `chunk` of an `n`-sample run.
pub fn network_chunk(
    net: &NetworkModel,
    ctrls: &[LocalController<'_>],
    x0: &[Vec<f64>],
    n: u64,
    seed: u64,
    chunk: u64,
) -> Result<u64> {
    check_controllers(net, ctrls, x0)?;
    let mut rng = rng::stream(seed, rng::tag::NETWORK_EVAL | chunk);
    Ok((0..chunk_len(n, chunk))
        .filter(|_| simulate(net, ctrls, x0, &mut rng, |_, _| {}))
        .count() as u64)
}

/// Frequency with which the network satisfies the conjunction of the local
/// specifications from `x0`, over `n` simulated runs.
pub fn evaluate_network(
    net: &NetworkModel,
    ctrls: &[LocalController<'_>],
    x0: &[Vec<f64>],
    n: u64,
    seed: u64,
) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::input("no samples"));
    }
    let mut hits = 0;
    for c in 0..n_chunks(n) {
        hits += network_chunk(net, ctrls, x0, n, seed, c)?;
    }
    Estimate::from_counts(hits, n)
}

/// Accepting episodes of the game within chunk `chunk` of an `n`-sample run.
pub fn adversarial_chunk(
    game: &AbstractGame,
    rho: &Policy,
    xi: &Policy,
    x0: &[f64],
    n: u64,
    seed: u64,
    chunk: u64,
) -> Result<u64> {
    let start = game.reset(x0)?;
    let dfa = game.reward_machine().dfa();
    let mut rng = rng::stream(seed, rng::tag::ADVERSARIAL_EVAL | chunk);
    let mut trace = Vec::with_capacity(game.horizon() + 1);
    let mut hits = 0;
    for _ in 0..chunk_len(n, chunk) {
        trace.clear();
        game.play(
            start,
            |m| rho.act_max(game, m),
            |m| xi.act_min(game, m),
            &mut rng,
            Some(&mut trace),
        );
        let accepted = match trace.last() {
            Some(t) => dfa.is_accepting(t.to.q),
            None => dfa.is_accepting(start.q),
        };
        hits += u64::from(accepted);
    }
    Ok(hits)
}

/// Satisfaction frequency of the strategy pair on the abstract game.
pub fn evaluate_adversarial(
    game: &AbstractGame,
    rho: &Policy,
    xi: &Policy,
    x0: &[f64],
    n: u64,
    seed: u64,
) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::input("no samples"));
    }
    let mut hits = 0;
    for c in 0..n_chunks(n) {
        hits += adversarial_chunk(game, rho, xi, x0, n, seed, c)?;
    }
    Estimate::from_counts(hits, n)
}

/// Simulated first state components, `[time][subsystem]` → one value per
/// run, for chunk `chunk` of an `n`-sample run.
pub fn trajectory_chunk(
    net: &NetworkModel,
    ctrls: &[LocalController<'_>],
    x0: &[Vec<f64>],
    n: u64,
    seed: u64,
    chunk: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    check_controllers(net, ctrls, x0)?;
    let horizon = ctrls.iter().map(|c| c.game.horizon()).max().unwrap_or(0);
    let len = chunk_len(n, chunk) as usize;
    let mut out = vec![vec![Vec::with_capacity(len); net.len()]; horizon + 1];
    let mut rng = rng::stream(seed, rng::tag::TRAJECTORIES | chunk);
    for _ in 0..len {
        simulate(net, ctrls, x0, &mut rng, |k, x| {
            for (i, xi) in x.iter().enumerate() {
                out[k][i].push(xi[0]);
            }
        });
    }
    Ok(out)
}

/// Nearest-rank percentile of sorted data: the smallest value with at least
/// `pct` percent of the data at or below it.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = libm::ceil(pct / 100.0 * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileRow {
    pub time: usize,
    pub subsystem: usize,
    pub percentile: f64,
    pub value: f64,
}

/// Per time step and subsystem, the requested percentiles of the first state
/// component over `n` closed-loop runs.
pub fn percentile_trajectories(
    net: &NetworkModel,
    ctrls: &[LocalController<'_>],
    x0: &[Vec<f64>],
    n: u64,
    percentiles: &[f64],
    seed: u64,
) -> Result<Vec<PercentileRow>> {
    if n == 0 {
        return Err(Error::input("no samples"));
    }
    if percentiles.iter().any(|p| !(*p > 0.0 && *p < 100.0)) {
        return Err(Error::input(
            "percentiles must lie strictly between 0 and 100",
        ));
    }
    let horizon = ctrls.iter().map(|c| c.game.horizon()).max().unwrap_or(0);
    let mut all: Vec<Vec<Vec<f64>>> = (0..=horizon)
        .map(|_| {
            (0..net.len())
                .map(|_| Vec::with_capacity(n as usize))
                .collect()
        })
        .collect();
    for c in 0..n_chunks(n) {
        let part = trajectory_chunk(net, ctrls, x0, n, seed, c)?;
        for (a, p) in all.iter_mut().zip(part) {
            for (ai, pi) in a.iter_mut().zip(p) {
                ai.extend(pi);
            }
        }
    }
    Ok(percentile_rows(all, percentiles))
}

/// Percentile table from samples laid out `[time][subsystem][run]`.
pub fn percentile_rows(mut samples: Vec<Vec<Vec<f64>>>, percentiles: &[f64]) -> Vec<PercentileRow> {
    let mut rows = Vec::new();
    for (time, per_sys) in samples.iter_mut().enumerate() {
        for (subsystem, values) in per_sys.iter_mut().enumerate() {
            values.sort_unstable_by(f64::total_cmp);
            for &percentile in percentiles {
                rows.push(PercentileRow {
                    time,
                    subsystem,
                    percentile,
                    value: nearest_rank(values, percentile),
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_small_cases() {
        assert_eq!(penalty(0.0, 7), 0.0);
        assert!((penalty(0.3, 1) - 0.3).abs() < 1e-15);
        assert!((penalty(0.004807, 20) - 0.0962667).abs() < 1e-7);
        assert!((penalty_odd_sum(0.004807, 20) - penalty(0.004807, 20)).abs() < 1e-15);
    }

    #[test]
    fn bounds() {
        assert_eq!(lower_bound(&[1.0; 4], &[0.0; 4]).unwrap(), 1.0);
        let room = lower_bound(&[0.999943; 20], &[0.004807; 20]).unwrap();
        assert!((room - 0.902585).abs() < 1e-4, "{room}");
        let traffic = lower_bound(&[0.996837; 7], &[0.006571; 7]).unwrap();
        assert!((traffic - 0.932064).abs() < 1e-4, "{traffic}");
        assert!(lower_bound(&[1.0], &[]).is_err());
        let r = compose(vec![0.5; 40], vec![0.1; 40], BoundSource::Oracle).unwrap();
        assert!(r.vacuous && r.p_low < 0.0);
    }

    #[test]
    fn wilson() {
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (lo, hi) = wilson_interval(10, 10, Z95);
        assert_eq!(hi, 1.0);
        assert!(lo > 0.69 && lo < 0.73);
        assert!(Estimate::from_counts(0, 0).is_err());
    }

    #[test]
    fn nearest_rank_definition() {
        let d = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&d, 50.0), 2.0);
        assert_eq!(nearest_rank(&d, 51.0), 3.0);
        assert_eq!(nearest_rank(&d, 1.0), 1.0);
        assert_eq!(nearest_rank(&d, 99.0), 4.0);
        assert_eq!(nearest_rank(&[7.0], 10.0), 7.0);
    }
}
