use nalgebra::DMatrix;
use serde::Serialize;

use super::{BdError, BirthDeathSpec, Family, RateRule};
use crate::chain::{ChainKind, MarkovChain};
use crate::numeric::NeumaierSum;
use crate::series::{sum_series, DivergenceReason, SeriesOptions, SeriesResult};

/// Above this magnitude `ln beta_n` is carried alone and `beta_n` recovered
/// by exponentiation.
const LOG_SWITCH: f64 = 600.0;

/// `(ln beta_n, beta_n)` for `n = 0, 1, 2, ...`.
fn beta_terms(spec: &BirthDeathSpec) -> impl Iterator<Item = Result<(f64, f64), BdError>> + '_ {
    let mut n = 0usize;
    let mut log_beta = 0.0f64;
    let mut beta = 1.0f64;
    std::iter::from_fn(move || {
        if n > 0 {
            let step = (|| -> Result<f64, BdError> {
                let lambda = spec.lambda(n - 1)?;
                let mu = spec.mu(n)?;
                Ok(lambda / mu)
            })();
            let ratio = match step {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            log_beta += ratio.ln();
            if log_beta.abs() > LOG_SWITCH {
                beta = log_beta.exp();
            } else {
                beta *= ratio;
            }
        }
        n += 1;
        Some(Ok((log_beta, beta)))
    })
}

/// Verdict on `B = sum_n beta_n`.
fn normalizer(spec: &BirthDeathSpec, opts: &SeriesOptions) -> Result<SeriesResult, BdError> {
    if spec.normalizer_diverges_analytically() {
        return Ok(SeriesResult::Diverged {
            reason: DivergenceReason::Analytic,
        });
    }
    sum_series(beta_terms(spec).map(|r| r.map(|(_, b)| b)), opts)
}

/// `ln B`, or the reason the process is not positive recurrent.
fn log_normalizer(spec: &BirthDeathSpec, opts: &SeriesOptions) -> Result<f64, BdError> {
    match normalizer(spec, opts)? {
        SeriesResult::Converged { value, .. } => Ok(value.ln()),
        SeriesResult::Diverged { reason } => Err(BdError::NotPositiveRecurrent { reason }),
        SeriesResult::Undecided {
            partial_sum,
            terms_used,
        } => Err(BdError::StationaryUndecided {
            partial_sum,
            terms_used,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BdStationary {
    pub beta: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub normalizer: SeriesResult,
    pub pi: Vec<f64>,
}

/// `beta_0..beta_n` and `pi_0..pi_n`, normalized by the converged `B`.
pub fn bd_stationary(spec: &BirthDeathSpec, n: usize, opts: &SeriesOptions) -> Result<BdStationary, BdError> {
    let log_b = log_normalizer(spec, opts)?;
    let b = normalizer(spec, opts)?;
    let mut beta = Vec::with_capacity(n + 1);
    let mut log_beta = Vec::with_capacity(n + 1);
    for term in beta_terms(spec).take(n + 1) {
        let (lb, bv) = term?;
        beta.push(bv);
        log_beta.push(lb);
    }
    let pi = log_beta.iter().map(|lb| (lb - log_b).exp()).collect();
    Ok(BdStationary {
        beta,
        log_beta,
        normalizer: b,
        pi,
    })
}

/// `f_1, f_2, ...` with `f_0 = 0` and `f_j = (lambda_{j-1} f_{j-1} + 1) / mu_j`.
pub fn theta_terms(spec: &BirthDeathSpec) -> impl Iterator<Item = Result<f64, BdError>> + '_ {
    let mut j = 0usize;
    let mut f = 0.0f64;
    std::iter::from_fn(move || {
        j += 1;
        let next = (|| -> Result<f64, BdError> {
            let lambda = spec.lambda(j - 1)?;
            let mu = spec.mu(j)?;
            Ok((lambda * f + 1.0) / mu)
        })();
        match next {
            Ok(v) => {
                f = v;
                Some(Ok(v))
            }
            Err(e) => Some(Err(e)),
        }
    })
}

/// Verdict on `sum_{j >= 1} 1/mu_j`, whose convergence is necessary for a
/// finite theta series.
pub fn necessary_condition(spec: &BirthDeathSpec, opts: &SeriesOptions) -> Result<SeriesResult, BdError> {
    if spec.mu_series_diverges_analytically() {
        return Ok(SeriesResult::Diverged {
            reason: DivergenceReason::Analytic,
        });
    }
    sum_series((1usize..).map(|j| spec.mu(j).map(|m| 1.0 / m)), opts)
}

/// Verdict on `Theta = sum_{j >= 1} f_j`.
///
/// Family arguments take precedence, then the necessary condition, then the
/// series itself.
pub fn theta_series(spec: &BirthDeathSpec, opts: &SeriesOptions) -> Result<SeriesResult, BdError> {
    if spec.theta_diverges_analytically() {
        return Ok(SeriesResult::Diverged {
            reason: DivergenceReason::Analytic,
        });
    }
    if necessary_condition(spec, opts)?.is_diverged() {
        return Ok(SeriesResult::Diverged {
            reason: DivergenceReason::NecessaryConditionFailed,
        });
    }
    sum_series(theta_terms(spec), opts)
}

/// `E_pi[theta_0] = sum_k (r_k / lambda_k) T_k` with `T_k = sum_{j>k} pi_j`
/// and `r_k = T_k / pi_k`.
///
/// The ratios come from the backward recursion
/// `r_k = (lambda_k / mu_{k+1}) (1 + r_{k+1})` started at zero two
/// truncation lengths out, so no tail mass is ever formed by subtracting
/// from one. Starting the recursion early understates `r_k` by
/// `T_M / pi_k`; with the neglected terms past `N` the error is at most
/// `3 Theta T_N`. `T_N` itself comes from the truncated recursion, so the
/// reported bound is `4 Theta T_N`.
fn stationary_theta0(
    spec: &BirthDeathSpec,
    log_b: f64,
    theta: f64,
    start: usize,
    opts: &SeriesOptions,
) -> Result<SeriesResult, BdError> {
    let mut n = start.max(64);
    loop {
        let m = 2 * n;
        let mut lambda = Vec::with_capacity(m + 1);
        let mut mu = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let (l, u) = spec.rates(k)?;
            lambda.push(l);
            mu.push(u);
        }
        let mut pi = Vec::with_capacity(m + 1);
        for term in beta_terms(spec).take(m + 1) {
            pi.push((term?.0 - log_b).exp());
        }
        let mut r = vec![0.0; m + 1];
        for k in (0..m).rev() {
            r[k] = lambda[k] / mu[k + 1] * (1.0 + r[k + 1]);
        }
        let mut sum = NeumaierSum::default();
        for k in 0..n {
            sum.add(r[k] / lambda[k] * r[k] * pi[k]);
        }
        let value = sum.value();
        let tail_mass = r[n] * pi[n];
        let bound = 4.0 * theta * tail_mass;
        if bound <= opts.rtol * value || (value == 0.0 && bound == 0.0) {
            return Ok(SeriesResult::Converged {
                value,
                terms_used: n,
                tail_bound: bound,
            });
        }
        if 2 * m > opts.max_terms {
            return Ok(SeriesResult::Undecided {
                partial_sum: value,
                terms_used: n,
            });
        }
        n *= 2;
    }
}

/// `E_pi[theta_0]`; requires a convergent theta series.
pub fn e_pi_theta0(spec: &BirthDeathSpec, opts: &SeriesOptions) -> Result<SeriesResult, BdError> {
    let theta = theta_series(spec, opts)?;
    let SeriesResult::Converged {
        value, terms_used, ..
    } = theta
    else {
        return Err(BdError::PreconditionUnmet(format!(
            "E_pi[theta_0] needs a convergent theta series, verdict was {theta:?}"
        )));
    };
    let log_b = log_normalizer(spec, opts)?;
    stationary_theta0(spec, log_b, value, terms_used, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BdReport {
    pub normalizer: SeriesResult,
    pub necessary_condition: SeriesResult,
    pub theta: SeriesResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_pi_theta0: Option<SeriesResult>,
    pub kprime: SeriesResult,
}

fn kprime_from(
    spec: &BirthDeathSpec,
    log_b: f64,
    opts: &SeriesOptions,
) -> Result<(SeriesResult, Option<SeriesResult>, SeriesResult), BdError> {
    let theta = theta_series(spec, opts)?;
    let (theta_value, theta_terms_used, theta_tail) = match theta {
        SeriesResult::Converged {
            value,
            terms_used,
            tail_bound,
        } => (value, terms_used, tail_bound),
        SeriesResult::Diverged { .. } => return Ok((theta.clone(), None, theta)),
        SeriesResult::Undecided {
            partial_sum,
            terms_used,
        } => {
            // K' <= Theta, so the theta partial sum is the best available figure
            let k = SeriesResult::Undecided {
                partial_sum,
                terms_used,
            };
            return Ok((theta, None, k));
        }
    };
    let e = stationary_theta0(spec, log_b, theta_value, theta_terms_used, opts)?;
    let kprime = match e {
        SeriesResult::Converged {
            value,
            terms_used,
            tail_bound,
        } => SeriesResult::Converged {
            value: theta_value - value,
            terms_used: terms_used.max(theta_terms_used),
            tail_bound: theta_tail + tail_bound,
        },
        SeriesResult::Undecided { terms_used, .. } => SeriesResult::Undecided {
            partial_sum: theta_value,
            terms_used,
        },
        SeriesResult::Diverged { .. } => unreachable!("bounded by theta"),
    };
    Ok((theta, Some(e), kprime))
}

/// Every series verdict for the process, with `K' = Theta - E_pi[theta_0]`.
pub fn analyze_bd(spec: &BirthDeathSpec, opts: &SeriesOptions) -> Result<BdReport, BdError> {
    let normalizer_verdict = normalizer(spec, opts)?;
    let log_b = log_normalizer(spec, opts)?;
    let necessary = necessary_condition(spec, opts)?;
    let (mut theta, mut e, mut kprime) = kprime_from(spec, log_b, opts)?;

    // The difference can lose relative accuracy when E_pi[theta_0] is close
    // to Theta; one retry with a tighter tolerance, then give up honestly.
    if let SeriesResult::Converged {
        value, tail_bound, ..
    } = kprime
    {
        if tail_bound > opts.rtol * value {
            let theta_value = theta.value().unwrap_or(0.0);
            let tighter = SeriesOptions {
                rtol: opts.rtol * value / (2.0 * theta_value.max(value)),
                ..*opts
            };
            let retry = kprime_from(spec, log_b, &tighter)?;
            theta = retry.0;
            e = retry.1;
            kprime = match retry.2 {
                SeriesResult::Converged {
                    value,
                    terms_used,
                    tail_bound,
                } if tail_bound > opts.rtol * value => SeriesResult::Undecided {
                    partial_sum: value,
                    terms_used,
                },
                other => other,
            };
        }
    }
    Ok(BdReport {
        normalizer: normalizer_verdict,
        necessary_condition: necessary,
        theta,
        e_pi_theta0: e,
        kprime,
    })
}

/// Kemeny's constant `K'` of the process: finite exactly when the theta
/// series converges.
pub fn kemeny_bd(spec: &BirthDeathSpec, opts: &SeriesOptions) -> Result<SeriesResult, BdError> {
    Ok(analyze_bd(spec, opts)?.kprime)
}

/// `E_0[theta_j] = sum_{k<j} (lambda_k pi_k)^-1 sum_{l<=k} pi_l`.
///
/// With `a_k = sum_{l<=k} pi_l / pi_k` this is `sum_{k<j} a_k / lambda_k`,
/// where `a_0 = 1` and `a_k = 1 + a_{k-1} mu_k / lambda_{k-1}`.
pub fn hitting_from_zero(spec: &BirthDeathSpec, j: usize, opts: &SeriesOptions) -> Result<f64, BdError> {
    log_normalizer(spec, opts)?;
    let mut sum = NeumaierSum::default();
    let mut a = 1.0;
    for k in 0..j {
        let (lambda, mu) = spec.rates(k)?;
        if k > 0 {
            a = 1.0 + a * mu / spec.lambda(k - 1)?;
        }
        sum.add(a / lambda);
    }
    Ok(sum.value())
}

/// Expected time spent in `j`, started from `j`, before reaching 0:
/// `pi_j sum_{1<=k<=j} 1 / (pi_k mu_k)`.
pub fn taboo_sojourn(spec: &BirthDeathSpec, j: usize, opts: &SeriesOptions) -> Result<f64, BdError> {
    if spec.kind != ChainKind::Continuous {
        return Err(BdError::KindMismatch {
            expected: ChainKind::Continuous,
            actual: spec.kind,
        });
    }
    log_normalizer(spec, opts)?;
    let log_beta: Vec<f64> = beta_terms(spec)
        .take(j + 1)
        .map(|t| t.map(|(lb, _)| lb))
        .collect::<Result<_, _>>()?;
    let mut sum = NeumaierSum::default();
    for k in 1..=j {
        sum.add((log_beta[j] - log_beta[k]).exp() / spec.mu(k)?);
    }
    Ok(sum.value())
}

/// The continuous-time process whose theta recurrence reproduces `f`
/// (indexed from 1, `f_0 = 0`) under birth rates `lambda`.
pub fn design_from_f(f: RateRule, lambda: RateRule) -> Result<BirthDeathSpec, BdError> {
    BirthDeathSpec::continuous(Family::DesignedF { f, lambda })
}

/// Finite chain on `{0..=n}` with the same rates and a reflecting boundary
/// at `n`.
pub fn truncate(spec: &BirthDeathSpec, n: usize) -> Result<MarkovChain, BdError> {
    if n == 0 {
        return Err(BdError::InvalidParameter("truncation level must be at least 1".into()));
    }
    let size = n + 1;
    let mut m = DMatrix::zeros(size, size);
    for k in 0..size {
        let (lambda, mu) = spec.rates(k)?;
        let up = if k < n { lambda } else { 0.0 };
        if k < n {
            m[(k, k + 1)] = up;
        }
        if k > 0 {
            m[(k, k - 1)] = mu;
        }
        m[(k, k)] = match spec.kind {
            ChainKind::Discrete => 1.0 - up - mu,
            ChainKind::Continuous => -(up + mu),
        };
    }
    Ok(MarkovChain::new(spec.kind, m)?)
}
