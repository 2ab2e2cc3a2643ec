//! Monte-Carlo estimators for visit deficits and Kemeny's constant.
//!
//! Every trajectory draws from its own ChaCha stream, keyed by the run seed,
//! the trajectory set and the trajectory index. Trajectories run in parallel
//! but their statistics are reduced in index order, so an estimate depends
//! only on the seed and configuration, never on the thread count.
//!
//! Paths are generated one sojourn at a time: a geometric (discrete time) or
//! exponential (continuous time) holding period, then a jump drawn from the
//! embedded jump chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, ChainKind, MarkovChain};
use crate::numeric::NeumaierSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("limit estimators need an aperiodic chain, this one has period {period}")]
    PeriodicChain { period: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Horizon `n` (steps) for discrete chains or `t` (time) for continuous ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Steps(u64),
    Time(f64),
}

impl Horizon {
    /// Number of time points counted (`n + 1`) or the length `t`.
    fn total(self) -> f64 {
        match self {
            Horizon::Steps(n) => n as f64 + 1.0,
            Horizon::Time(t) => t,
        }
    }

    fn half(self) -> Horizon {
        match self {
            Horizon::Steps(n) => Horizon::Steps(n / 2),
            Horizon::Time(t) => Horizon::Time(t / 2.0),
        }
    }

    fn end(self) -> f64 {
        match self {
            Horizon::Steps(n) => n as f64,
            Horizon::Time(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: Horizon,
    pub trajectories: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(horizon: Horizon, trajectories: usize, seed: u64) -> Self {
        Self {
            horizon,
            trajectories,
            seed,
        }
    }

    fn check(&self, chain: &MarkovChain) -> Result<(), SimError> {
        if self.trajectories == 0 {
            return Err(SimError::InvalidConfig("need at least one trajectory".into()));
        }
        match (chain.kind(), self.horizon) {
            (ChainKind::Discrete, Horizon::Steps(_)) => Ok(()),
            (ChainKind::Continuous, Horizon::Time(t)) if t.is_finite() && t > 0.0 => Ok(()),
            (ChainKind::Continuous, Horizon::Time(t)) => Err(SimError::InvalidConfig(format!(
                "time horizon must be positive and finite, got {t}"
            ))),
            (kind, h) => Err(SimError::InvalidConfig(format!(
                "horizon {h:?} does not fit a {kind} chain"
            ))),
        }
    }
}

/// Estimate at the half horizon from the same trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub horizon: Horizon,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationEstimate {
    pub value: f64,
    pub std_error: f64,
    #[serde(rename = "R")]
    pub trajectories: usize,
    pub horizon: Horizon,
    pub seed: u64,
    pub half_horizon: WindowEstimate,
    /// Set when the two windows disagree by more than three combined
    /// standard errors, a sign that the horizon is short of the mixing time.
    pub mixing_warning: bool,
}

/// The `index`-th stream of trajectory set `set` for a given seed.
pub fn trajectory_rng(seed: u64, set: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((set << 40) | index);
    rng
}

/// Uniform on `(0, 1]`, safe to take the logarithm of.
#[inline]
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

enum Jump {
    Absorbing,
    Single(usize),
    Alias(Vec<usize>, WeightedAliasIndex<f64>),
}

/// Per-state holding and jump laws of a chain, precomputed once.
pub struct PathSampler {
    kind: ChainKind,
    /// `ln(1 - exit probability)` for discrete chains, exit rate otherwise.
    holding: Vec<f64>,
    jumps: Vec<Jump>,
}

impl PathSampler {
    pub fn new(chain: &MarkovChain) -> Self {
        let m = chain.size();
        let mut holding = Vec::with_capacity(m);
        let mut jumps = Vec::with_capacity(m);
        for i in 0..m {
            let exit = chain.exit_rate(i);
            holding.push(match chain.kind() {
                ChainKind::Discrete => (-exit.min(1.0)).ln_1p(),
                ChainKind::Continuous => exit,
            });
            let targets: Vec<usize> = (0..m).filter(|&k| k != i && chain.off_diagonal(i, k) > 0.0).collect();
            jumps.push(match targets.len() {
                0 => Jump::Absorbing,
                1 => Jump::Single(targets[0]),
                _ => {
                    let w: Vec<f64> = targets.iter().map(|&k| chain.off_diagonal(i, k)).collect();
                    let alias = WeightedAliasIndex::new(w).expect("positive finite weights");
                    Jump::Alias(targets, alias)
                }
            });
        }
        Self {
            kind: chain.kind(),
            holding,
            jumps,
        }
    }

    /// Length of one sojourn in `state`: number of time points for a
    /// discrete chain, holding time for a continuous one.
    #[inline]
    fn sojourn<R: Rng>(&self, state: usize, rng: &mut R) -> f64 {
        let h = self.holding[state];
        match self.kind {
            ChainKind::Discrete => {
                if h == 0.0 {
                    f64::INFINITY
                } else if h == f64::NEG_INFINITY {
                    1.0
                } else {
                    // extra steps spent in place are geometric
                    1.0 + (open_unit(rng).ln() / h).floor()
                }
            }
            ChainKind::Continuous => {
                if h == 0.0 {
                    f64::INFINITY
                } else {
                    -open_unit(rng).ln() / h
                }
            }
        }
    }

    #[inline]
    fn jump<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        match &self.jumps[state] {
            Jump::Absorbing => state,
            Jump::Single(k) => *k,
            Jump::Alias(targets, alias) => targets[alias.sample(rng)],
        }
    }

    /// Walks a path from `start`, handing each sojourn `(state, from, to)` to
    /// `visit`, clipped to `[0, end]` where `end` is the last time point
    /// (discrete) or the horizon (continuous).
    fn walk<R: Rng>(&self, start: usize, end: f64, rng: &mut R, mut visit: impl FnMut(usize, f64, f64)) {
        // discrete sojourns cover time points [clock, clock + len), so the
        // covered span must reach end + 1
        let limit = match self.kind {
            ChainKind::Discrete => end + 1.0,
            ChainKind::Continuous => end,
        };
        let mut state = start;
        let mut clock = 0.0;
        loop {
            let len = self.sojourn(state, rng);
            let next = clock + len;
            if next >= limit {
                visit(state, clock, limit);
                return;
            }
            visit(state, clock, next);
            clock = next;
            state = self.jump(state, rng);
        }
    }

    /// Occupation of `target` up to the half horizon and the full horizon.
    fn occupation_pair<R: Rng>(&self, start: usize, target: usize, horizon: Horizon, rng: &mut R) -> (f64, f64) {
        let end = horizon.end();
        let half_limit = match horizon.half() {
            Horizon::Steps(n) => n as f64 + 1.0,
            Horizon::Time(t) => t,
        };
        let mut full = 0.0;
        let mut half = 0.0;
        self.walk(start, end, rng, |state, from, to| {
            if state == target {
                full += to - from;
                if from < half_limit {
                    half += to.min(half_limit) - from;
                }
            }
        });
        (half, full)
    }
}

/// Visit counts `N_j(n)` (discrete, counting time 0) or occupation times
/// `M_j(t)` (continuous) of every state along one path.
pub fn simulate_path<R: Rng>(chain: &MarkovChain, start: usize, horizon: Horizon, rng: &mut R) -> Result<Vec<f64>, SimError> {
    chain.check_state(start)?;
    SimConfig::new(horizon, 1, 0).check(chain)?;
    let sampler = PathSampler::new(chain);
    let mut occ = vec![0.0; chain.size()];
    sampler.walk(start, horizon.end(), rng, |state, from, to| occ[state] += to - from);
    Ok(occ)
}

/// Fixed-order mean and sample variance.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<NeumaierSum>().value() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).collect::<NeumaierSum>().value();
    (mean, ss / (n - 1.0))
}

/// Mean occupation of `target` from `start` over one trajectory set,
/// at half and full horizon: `((mean, var), (mean, var))`.
fn occupation_stats(
    sampler: &PathSampler,
    start: usize,
    target: usize,
    config: &SimConfig,
    set: u64,
) -> ((f64, f64), (f64, f64)) {
    let samples: Vec<(f64, f64)> = (0..config.trajectories as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = trajectory_rng(config.seed, set, index);
            sampler.occupation_pair(start, target, config.horizon, &mut rng)
        })
        .collect();
    let half: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let full: Vec<f64> = samples.iter().map(|s| s.1).collect();
    (mean_var(&half), mean_var(&full))
}

fn require_limit_chain(chain: &MarkovChain) -> Result<(), SimError> {
    if chain.kind() == ChainKind::Discrete && !chain.is_aperiodic() {
        return Err(SimError::PeriodicChain { period: chain.period() });
    }
    Ok(())
}

fn estimate(config: &SimConfig, full: (f64, f64), half: (f64, f64)) -> SimulationEstimate {
    let mixing_warning = (full.0 - half.0).abs() > 3.0 * (full.1 * full.1 + half.1 * half.1).sqrt();
    SimulationEstimate {
        value: full.0,
        std_error: full.1,
        trajectories: config.trajectories,
        horizon: config.horizon,
        seed: config.seed,
        half_horizon: WindowEstimate {
            horizon: config.horizon.half(),
            value: half.0,
            std_error: half.1,
        },
        mixing_warning,
    }
}

/// Estimates `E_j[N_j(n)] - E_i[N_j(n)]` (or the occupation-time analogue),
/// whose limit is `pi_j E_i[theta_j]`. The two expectations use separate
/// trajectory sets.
pub fn visit_deficit(chain: &MarkovChain, i: usize, j: usize, config: &SimConfig) -> Result<SimulationEstimate, SimError> {
    chain.check_state(i)?;
    chain.check_state(j)?;
    config.check(chain)?;
    require_limit_chain(chain)?;
    if i == j {
        return Ok(estimate(config, (0.0, 0.0), (0.0, 0.0)));
    }
    let sampler = PathSampler::new(chain);
    let (from_j_half, from_j) = occupation_stats(&sampler, j, j, config, 0);
    let (from_i_half, from_i) = occupation_stats(&sampler, i, j, config, 1);
    let r = config.trajectories as f64;
    let full = (from_j.0 - from_i.0, ((from_j.1 + from_i.1) / r).sqrt());
    let half = (
        from_j_half.0 - from_i_half.0,
        ((from_j_half.1 + from_i_half.1) / r).sqrt(),
    );
    Ok(estimate(config, full, half))
}

/// Estimates `sum_j E_j[N_j(n)] - (n + 1)` (or `sum_j E_j[M_j(t)] - t`),
/// whose limit is `K'`. Trajectory set `j` starts in `j`.
pub fn step_count_identity(chain: &MarkovChain, config: &SimConfig) -> Result<SimulationEstimate, SimError> {
    config.check(chain)?;
    require_limit_chain(chain)?;
    let sampler = PathSampler::new(chain);
    let r = config.trajectories as f64;
    let mut full_sum = NeumaierSum::default();
    let mut half_sum = NeumaierSum::default();
    let mut full_var = NeumaierSum::default();
    let mut half_var = NeumaierSum::default();
    for j in 0..chain.size() {
        let (half, full) = occupation_stats(&sampler, j, j, config, j as u64);
        full_sum.add(full.0);
        full_var.add(full.1 / r);
        half_sum.add(half.0);
        half_var.add(half.1 / r);
    }
    let full = (full_sum.value() - config.horizon.total(), full_var.value().sqrt());
    let half = (
        half_sum.value() - config.horizon.half().total(),
        half_var.value().sqrt(),
    );
    Ok(estimate(config, full, half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn two_state() -> MarkovChain {
        MarkovChain::new(ChainKind::Discrete, dmatrix![0.5, 0.5; 0.5, 0.5]).unwrap()
    }

    fn ctmc() -> MarkovChain {
        MarkovChain::new(ChainKind::Continuous, dmatrix![-1.0, 1.0; 1.0, -1.0]).unwrap()
    }

    #[test]
    fn discrete_counts_sum_to_horizon_plus_one() {
        let c = MarkovChain::new(
            ChainKind::Discrete,
            dmatrix![0.1, 0.6, 0.3; 0.4, 0.4, 0.2; 0.5, 0.25, 0.25],
        )
        .unwrap();
        for seed in 0..50 {
            let mut rng = trajectory_rng(seed, 0, 0);
            let n = seed * 7;
            let counts = simulate_path(&c, (seed % 3) as usize, Horizon::Steps(n), &mut rng).unwrap();
            assert_eq!(counts.iter().sum::<f64>(), n as f64 + 1.0);
            assert!(counts.iter().all(|c| c.fract() == 0.0));
        }
    }

    #[test]
    fn zero_horizon_counts_only_the_start() {
        let mut rng = trajectory_rng(1, 0, 0);
        let counts = simulate_path(&two_state(), 1, Horizon::Steps(0), &mut rng).unwrap();
        assert_eq!(counts, vec![0.0, 1.0]);
    }

    #[test]
    fn single_state_chain() {
        let c = MarkovChain::new(ChainKind::Discrete, dmatrix![1.0]).unwrap();
        let mut rng = trajectory_rng(3, 0, 0);
        assert_eq!(simulate_path(&c, 0, Horizon::Steps(10), &mut rng).unwrap(), vec![11.0]);
        for n in [0, 1, 10, 1000] {
            let e = step_count_identity(&c, &SimConfig::new(Horizon::Steps(n), 5, 1)).unwrap();
            assert_eq!(e.value, 0.0);
            assert_eq!(e.std_error, 0.0);
        }
    }

    #[test]
    fn continuous_occupation_sums_to_horizon() {
        for seed in 0..20 {
            let mut rng = trajectory_rng(seed, 0, 0);
            let occ = simulate_path(&ctmc(), 0, Horizon::Time(37.5), &mut rng).unwrap();
            assert!((occ.iter().sum::<f64>() - 37.5).abs() < 1e-9);
        }
    }

    #[test]
    fn deficit_of_a_state_with_itself_is_zero() {
        let e = visit_deficit(&two_state(), 1, 1, &SimConfig::new(Horizon::Steps(100), 10, 0)).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn periodic_chains_are_rejected() {
        let c = MarkovChain::new(ChainKind::Discrete, dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap();
        let cfg = SimConfig::new(Horizon::Steps(10), 10, 0);
        assert_eq!(step_count_identity(&c, &cfg), Err(SimError::PeriodicChain { period: 2 }));
        assert!(visit_deficit(&c, 0, 1, &cfg).is_err());
        // a path itself is fine
        let mut rng = trajectory_rng(0, 0, 0);
        assert_eq!(simulate_path(&c, 0, Horizon::Steps(3), &mut rng).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn horizon_must_match_kind() {
        let cfg = SimConfig::new(Horizon::Time(1.0), 10, 0);
        assert!(matches!(step_count_identity(&two_state(), &cfg), Err(SimError::InvalidConfig(_))));
        let cfg = SimConfig::new(Horizon::Steps(10), 10, 0);
        assert!(matches!(step_count_identity(&ctmc(), &cfg), Err(SimError::InvalidConfig(_))));
        let cfg = SimConfig::new(Horizon::Steps(10), 0, 0);
        assert!(step_count_identity(&two_state(), &cfg).is_err());
    }

    #[test]
    fn estimates_are_reproducible() {
        let cfg = SimConfig::new(Horizon::Steps(200), 500, 99);
        let a = step_count_identity(&two_state(), &cfg).unwrap();
        let b = step_count_identity(&two_state(), &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let other = step_count_identity(&two_state(), &SimConfig::new(Horizon::Steps(200), 500, 100)).unwrap();
        assert_ne!(a.value.to_bits(), other.value.to_bits());
    }

    #[test]
    fn mean_fraction_of_time_matches_pi() {
        // oracle: pi = (1/2, 1/2)
        let chain = two_state();
        let n = 10_000u64;
        let r = 2_000u64;
        let fractions: Vec<f64> = (0..r)
            .map(|k| {
                let mut rng = trajectory_rng(7, 0, k);
                simulate_path(&chain, 0, Horizon::Steps(n), &mut rng).unwrap()[1] / (n as f64 + 1.0)
            })
            .collect();
        let (mean, var) = mean_var(&fractions);
        let se = (var / r as f64).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn geometric_holding_has_the_right_mean() {
        // stay probability 0.9: mean sojourn 10 time points
        let c = MarkovChain::new(ChainKind::Discrete, dmatrix![0.9, 0.1; 0.1, 0.9]).unwrap();
        let s = PathSampler::new(&c);
        let mut rng = trajectory_rng(5, 0, 0);
        let k = 200_000;
        let lens: Vec<f64> = (0..k).map(|_| s.sojourn(0, &mut rng)).collect();
        let (mean, var) = mean_var(&lens);
        assert!((mean - 10.0).abs() <= 4.0 * (var / k as f64).sqrt(), "{mean}");
        assert!(lens.iter().all(|&l| l >= 1.0));
    }
}
