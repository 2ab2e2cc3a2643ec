//! Birth-death processes on `{0, 1, 2, ...}`.
//!
//! A process is given by birth rates `lambda_n > 0` (n >= 0) and death rates
//! `mu_n > 0` (n >= 1), either from a named family or from explicit tables.
//! Rates are evaluated lazily, so invalid values far out in a rule surface as
//! errors only when a computation reaches them.

mod analysis;
mod rules;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, ChainKind};
use crate::series::DivergenceReason;

pub use analysis::{
    analyze_bd, bd_stationary, design_from_f, e_pi_theta0, hitting_from_zero, kemeny_bd,
    necessary_condition, taboo_sojourn, theta_series, theta_terms, truncate, BdReport,
    BdStationary,
};
pub use rules::{Extend, Formula, RateRule, Table};

use rules::RuleError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BdError {
    #[error("process is not positive recurrent (normalizer diverges: {reason:?})")]
    NotPositiveRecurrent { reason: DivergenceReason },
    #[error("could not decide whether the normalizer converges after {terms_used} terms (partial sum {partial_sum})")]
    StationaryUndecided { partial_sum: f64, terms_used: usize },
    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),
    #[error("{which}_{index} = {value} is not a positive finite rate")]
    InvalidRate {
        which: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{which} table has no entry for index {index}")]
    PastTable { which: &'static str, index: usize },
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("lambda_{index} + mu_{index} = {sum} exceeds 1 for a discrete-time process")]
    RateOutOfRange { index: usize, sum: f64 },
    #[error("operation needs a {expected} process, got {actual}")]
    KindMismatch {
        expected: ChainKind,
        actual: ChainKind,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("could not parse family config: {0}")]
    Parse(String),
}

fn rule_error(which: &'static str, e: RuleError) -> BdError {
    match e {
        RuleError::PastTable { index } => BdError::PastTable { which, index },
        RuleError::Invalid { index, value } => BdError::InvalidRate { which, index, value },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Constant rates.
    Mm1 { lambda: f64, mu: f64 },
    /// `mu_n = lambda_{n-1} / rho`, so that `beta_n = rho^n`.
    SpedUpMm1 { rho: f64, lambda: RateRule },
    /// Death rates chosen so the theta recurrence reproduces `f`; `f` is
    /// indexed from 1 and `f_0 = 0`.
    DesignedF { f: RateRule, lambda: RateRule },
    /// `lambda_0 = 1`, `lambda_n = mu_n = n^(1 + alpha)`.
    PowerLaw { alpha: f64 },
    /// `lambda_n = lambda`, `mu_n = n mu`.
    MmInfinity { lambda: f64, mu: f64 },
    /// `lambda` starts at index 0, `mu` at index 1.
    Table {
        lambda: Vec<f64>,
        mu: Vec<f64>,
        #[serde(default)]
        extend: Extend,
    },
}

fn continuous() -> ChainKind {
    ChainKind::Continuous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathSpec {
    #[serde(default = "continuous")]
    pub kind: ChainKind,
    #[serde(flatten)]
    pub family: Family,
}

impl BirthDeathSpec {
    pub fn new(kind: ChainKind, family: Family) -> Result<Self, BdError> {
        let spec = Self { kind, family };
        spec.validate()?;
        Ok(spec)
    }

    pub fn continuous(family: Family) -> Result<Self, BdError> {
        Self::new(ChainKind::Continuous, family)
    }

    pub fn from_json(text: &str) -> Result<Self, BdError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| BdError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Checks family parameters. Individual rates are checked when used.
    pub fn validate(&self) -> Result<(), BdError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(BdError::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        let rule = |name: &str, r: &RateRule| {
            r.check_parameters()
                .map_err(|e| BdError::InvalidParameter(format!("{name}: {e}")))
        };
        match &self.family {
            Family::Mm1 { lambda, mu } | Family::MmInfinity { lambda, mu } => {
                positive("lambda", *lambda)?;
                positive("mu", *mu)?;
            }
            Family::SpedUpMm1 { rho, lambda } => {
                positive("rho", *rho)?;
                rule("lambda", lambda)?;
            }
            Family::DesignedF { f, lambda } => {
                f.check_parameters().map_err(BdError::InvalidDesign)?;
                lambda.check_parameters().map_err(BdError::InvalidDesign)?;
            }
            Family::PowerLaw { alpha } => positive("alpha", *alpha)?,
            Family::Table { lambda, mu, extend } => {
                rule("lambda", &RateRule::table(lambda.clone(), *extend))?;
                rule("mu", &RateRule::table(mu.clone(), *extend))?;
            }
        }
        if self.kind == ChainKind::Discrete {
            // catches constant-rate families at once; others are checked lazily
            self.rates(0)?;
            self.rates(1)?;
        }
        Ok(())
    }

    fn raw_lambda(&self, n: usize) -> Result<f64, BdError> {
        let v = match &self.family {
            Family::Mm1 { lambda, .. } | Family::MmInfinity { lambda, .. } => *lambda,
            Family::SpedUpMm1 { lambda, .. } | Family::DesignedF { lambda, .. } => {
                lambda.at(n, 0).map_err(|e| rule_error("lambda", e))?
            }
            Family::PowerLaw { alpha } => {
                if n == 0 {
                    1.0
                } else {
                    (n as f64).powf(1.0 + alpha)
                }
            }
            Family::Table { lambda, extend, .. } => RateRule::table(lambda.clone(), *extend)
                .at(n, 0)
                .map_err(|e| rule_error("lambda", e))?,
        };
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(BdError::InvalidRate { which: "lambda", index: n, value: v })
        }
    }

    fn raw_mu(&self, n: usize) -> Result<f64, BdError> {
        if n == 0 {
            return Ok(0.0);
        }
        let v = match &self.family {
            Family::Mm1 { mu, .. } => *mu,
            Family::MmInfinity { mu, .. } => n as f64 * mu,
            Family::SpedUpMm1 { rho, .. } => self.raw_lambda(n - 1)? / rho,
            Family::DesignedF { f, .. } => {
                let f_prev = if n == 1 { 0.0 } else { self.f_value(f, n - 1)? };
                let f_n = self.f_value(f, n)?;
                (self.raw_lambda(n - 1)? * f_prev + 1.0) / f_n
            }
            Family::PowerLaw { alpha } => (n as f64).powf(1.0 + alpha),
            Family::Table { mu, extend, .. } => RateRule::table(mu.clone(), *extend)
                .at(n, 1)
                .map_err(|e| rule_error("mu", e))?,
        };
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(BdError::InvalidRate { which: "mu", index: n, value: v })
        }
    }

    fn f_value(&self, f: &RateRule, j: usize) -> Result<f64, BdError> {
        f.at(j, 1).map_err(|e| match e {
            RuleError::Invalid { index, value } => {
                BdError::InvalidDesign(format!("f_{index} = {value} is not positive"))
            }
            other => rule_error("f", other),
        })
    }

    /// `(lambda_n, mu_n)` with `mu_0 = 0`, checked against `lambda_n + mu_n <= 1`
    /// for discrete-time processes.
    pub fn rates(&self, n: usize) -> Result<(f64, f64), BdError> {
        let l = self.raw_lambda(n)?;
        let m = self.raw_mu(n)?;
        if self.kind == ChainKind::Discrete && l + m > 1.0 + 1e-12 {
            return Err(BdError::RateOutOfRange { index: n, sum: l + m });
        }
        Ok((l, m))
    }

    pub fn lambda(&self, n: usize) -> Result<f64, BdError> {
        Ok(self.rates(n)?.0)
    }

    /// `mu_n`; `mu_0 = 0`.
    pub fn mu(&self, n: usize) -> Result<f64, BdError> {
        Ok(self.rates(n)?.1)
    }

    /// A closed-form argument that the theta series diverges, if one applies.
    pub(crate) fn theta_diverges_analytically(&self) -> bool {
        if self.kind == ChainKind::Discrete {
            return true;
        }
        match &self.family {
            // every term of the tail-sum form equals 1 / (mu - lambda)
            Family::Mm1 { .. } => true,
            // f_j = j / mu_j = j^-alpha
            Family::PowerLaw { alpha } => *alpha <= 1.0,
            // Theta = rho / (1 - rho) * sum 1 / lambda_k
            Family::SpedUpMm1 { lambda, .. } => lambda.eventually_bounded(),
            // Theta = sum f_j directly
            Family::DesignedF { f, .. } => f.eventually_bounded_below(),
            _ => false,
        }
    }

    /// A closed-form argument that `sum 1/mu_j` diverges, if one applies.
    pub(crate) fn mu_series_diverges_analytically(&self) -> bool {
        if self.kind == ChainKind::Discrete {
            // mu_n <= 1 - lambda_n < 1
            return true;
        }
        match &self.family {
            Family::Mm1 { .. } | Family::MmInfinity { .. } => true,
            Family::Table { extend, .. } => *extend == Extend::Last,
            Family::SpedUpMm1 { lambda, .. } => lambda.eventually_bounded(),
            _ => false,
        }
    }

    /// A closed-form argument that `sum beta_n` diverges, if one applies.
    pub(crate) fn normalizer_diverges_analytically(&self) -> bool {
        match &self.family {
            Family::Mm1 { lambda, mu } => lambda >= mu,
            Family::SpedUpMm1 { rho, .. } => *rho >= 1.0,
            Family::Table { lambda, mu, extend } => {
                *extend == Extend::Last
                    && match (lambda.last(), mu.last()) {
                        (Some(l), Some(m)) => l >= m,
                        _ => false,
                    }
            }
            _ => false,
        }
    }
}
