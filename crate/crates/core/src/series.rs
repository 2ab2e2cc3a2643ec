//! Summation of nonnegative series with a three-way verdict.
//!
//! A series is declared convergent only when one of two tail models fits the
//! observed terms and bounds the remainder below `rtol` times the partial
//! sum:
//!
//! * geometric: the last `window` terms are each below `rtol * S` and their
//!   largest successive ratio `r < 0.999`; the tail is bounded by
//!   `t_n r / (1 - r)`.
//! * algebraic: at checkpoints `n = 2^k` the local exponent
//!   `p_k = log2(t_{n/2} / t_n)` has settled above 1. The tail is the
//!   midpoint integral of `c x^-p` plus its first Euler-Maclaurin correction,
//!   and the reported uncertainty is the change of that estimate between the
//!   last two exponents plus the size of the correction.
//!
//! Growth is flagged (heuristically) when term ratios stay at or above one
//! over the second half of a long run, or when the local exponent settles
//! below one. Everything else ends as `Undecided`.

use serde::{Deserialize, Serialize};

use crate::numeric::NeumaierSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesOptions {
    pub rtol: f64,
    pub max_terms: usize,
    pub window: usize,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            max_terms: 10_000_000,
            window: 20,
        }
    }
}

impl SeriesOptions {
    pub fn new(rtol: f64, max_terms: usize) -> Self {
        Self {
            rtol,
            max_terms,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceReason {
    /// A closed-form argument attached to the family.
    Analytic,
    /// The necessary condition `sum 1/mu_j < inf` fails.
    NecessaryConditionFailed,
    /// Observed growth of the terms; not a proof.
    HeuristicGrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SeriesResult {
    Converged {
        value: f64,
        terms_used: usize,
        tail_bound: f64,
    },
    Diverged {
        reason: DivergenceReason,
    },
    Undecided {
        partial_sum: f64,
        terms_used: usize,
    },
}

impl SeriesResult {
    pub fn value(&self) -> Option<f64> {
        match self {
            SeriesResult::Converged { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, SeriesResult::Converged { .. })
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, SeriesResult::Diverged { .. })
    }

    pub fn divergence_reason(&self) -> Option<DivergenceReason> {
        match self {
            SeriesResult::Diverged { reason } => Some(*reason),
            _ => None,
        }
    }

    pub fn terms_used(&self) -> Option<usize> {
        match self {
            SeriesResult::Converged { terms_used, .. } | SeriesResult::Undecided { terms_used, .. } => {
                Some(*terms_used)
            }
            SeriesResult::Diverged { .. } => None,
        }
    }
}

const RATIO_CAP: f64 = 0.999;
const MIN_ALGEBRAIC_N: usize = 1 << 12;
const MIN_GROWTH_N: usize = 1 << 16;
const EXPONENT_STEADY: f64 = 0.01;

struct Checkpoint {
    n: usize,
    term: f64,
    exponent: Option<f64>,
}

/// Midpoint-integral tail of `c x^-p` beyond `n`, and its Euler-Maclaurin
/// correction.
fn power_tail(term: f64, n: usize, p: f64) -> (f64, f64) {
    let n = n as f64;
    let c = term * n.powf(p);
    let x = n + 0.5;
    let integral = c * x.powf(1.0 - p) / (p - 1.0);
    let correction = -p * c * x.powf(-p - 1.0) / 24.0;
    (integral, correction)
}

/// Sums a nonnegative series term by term. Term errors are passed through.
///
/// A finite iterator is summed exactly and reported as converged with a zero
/// tail.
pub fn sum_series<E, I>(terms: I, opts: &SeriesOptions) -> Result<SeriesResult, E>
where
    I: IntoIterator<Item = Result<f64, E>>,
{
    let w = opts.window.max(1);
    let mut sum = NeumaierSum::default();
    let mut recent = std::collections::VecDeque::with_capacity(w + 1);
    let mut n = 0usize;
    let mut growth_run = 0usize;
    let mut prev = f64::NAN;
    let mut checkpoints: Vec<Checkpoint> = Vec::new();

    for term in terms {
        let t = term?;
        if n >= opts.max_terms {
            break;
        }
        n += 1;
        if !t.is_finite() || t < 0.0 {
            log::debug!("series term {n} is {t}; giving up");
            return Ok(SeriesResult::Undecided {
                partial_sum: sum.value(),
                terms_used: n - 1,
            });
        }
        sum.add(t);
        let s = sum.value();

        if prev.is_finite() && t >= prev && t > 0.0 {
            growth_run += 1;
        } else {
            growth_run = 0;
        }
        prev = t;

        if recent.len() == w + 1 {
            recent.pop_front();
        }
        recent.push_back(t);

        // geometric tail
        if recent.len() == w + 1 && recent.iter().skip(1).all(|&x| x <= opts.rtol * s) {
            let mut r: f64 = 0.0;
            for (a, b) in recent.iter().zip(recent.iter().skip(1)) {
                let ratio = if *a == 0.0 {
                    if *b == 0.0 { 0.0 } else { f64::INFINITY }
                } else {
                    b / a
                };
                r = r.max(ratio);
            }
            if r < RATIO_CAP {
                let tail = t * r / (1.0 - r);
                if tail <= opts.rtol * s {
                    return Ok(SeriesResult::Converged {
                        value: s,
                        terms_used: n,
                        tail_bound: tail,
                    });
                }
            }
        }

        if n.is_power_of_two() {
            let exponent = checkpoints
                .last()
                .filter(|c| c.n * 2 == n && c.term > 0.0 && t > 0.0)
                .map(|c| (c.term / t).log2());
            checkpoints.push(Checkpoint { n, term: t, exponent });

            if let Some(verdict) = algebraic_verdict(&checkpoints, s, opts.rtol) {
                return Ok(verdict);
            }
            if n >= MIN_GROWTH_N && growth_run >= w.max(n / 2) {
                return Ok(SeriesResult::Diverged {
                    reason: DivergenceReason::HeuristicGrowth,
                });
            }
            if n >= MIN_GROWTH_N && slow_decay(&checkpoints) {
                return Ok(SeriesResult::Diverged {
                    reason: DivergenceReason::HeuristicGrowth,
                });
            }
        }
    }

    if n < opts.max_terms {
        // the iterator ran dry: the series was finite
        return Ok(SeriesResult::Converged {
            value: sum.value(),
            terms_used: n,
            tail_bound: 0.0,
        });
    }
    Ok(SeriesResult::Undecided {
        partial_sum: sum.value(),
        terms_used: n,
    })
}

fn last_exponents(checkpoints: &[Checkpoint], count: usize) -> Option<Vec<f64>> {
    if checkpoints.len() < count {
        return None;
    }
    checkpoints[checkpoints.len() - count..]
        .iter()
        .map(|c| c.exponent)
        .collect()
}

fn steady(ps: &[f64]) -> bool {
    ps.windows(2).all(|w| (w[1] - w[0]).abs() <= EXPONENT_STEADY)
}

fn algebraic_verdict(checkpoints: &[Checkpoint], s: f64, rtol: f64) -> Option<SeriesResult> {
    let last = checkpoints.last()?;
    if last.n < MIN_ALGEBRAIC_N || last.term <= 0.0 {
        return None;
    }
    let ps = last_exponents(checkpoints, 3)?;
    if !steady(&ps) || ps.iter().any(|&p| p <= 1.05) {
        return None;
    }
    let (p_prev, p) = (ps[1], ps[2]);
    let (tail, correction) = power_tail(last.term, last.n, p);
    let (tail_prev, _) = power_tail(last.term, last.n, p_prev);
    let uncertainty = (tail - tail_prev).abs() + correction.abs();
    let value = s + tail + correction;
    if uncertainty.is_finite() && uncertainty <= rtol * value {
        Some(SeriesResult::Converged {
            value,
            terms_used: last.n,
            tail_bound: uncertainty,
        })
    } else {
        None
    }
}

fn slow_decay(checkpoints: &[Checkpoint]) -> bool {
    match last_exponents(checkpoints, 3) {
        Some(ps) => steady(&ps) && ps.iter().all(|&p| p < 0.95),
        None => false,
    }
}

/// [`sum_series`] for infallible terms.
pub fn sum_terms<I>(terms: I, opts: &SeriesOptions) -> SeriesResult
where
    I: IntoIterator<Item = f64>,
{
    match sum_series::<std::convert::Infallible, _>(terms.into_iter().map(Ok), opts) {
        Ok(r) => r,
        Err(never) => match never {},
    }
}
