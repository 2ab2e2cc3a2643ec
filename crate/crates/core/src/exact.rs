//! Exact hitting times, Kemeny's constant and the deviation matrix of a
//! finite chain.
//!
//! Two independent routes to `K'` are provided. The hitting route sums
//! `pi_j E_i[theta_j]` over targets, one linear solve per target; the trace
//! route takes the trace of the deviation matrix from a single shifted solve.
//! The report carries both so that either can serve as a check on the other.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{stationary_distribution, ChainError, ChainKind, MarkovChain};
use crate::elimination::{solve_m_matrix, OffDiagonal};
use crate::numeric::NeumaierSum;

/// Residual bound for the stationary solve, relative to `max(1, ||G||_inf)`.
pub const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("per-start sums are not constant: spread {spread:e} exceeds {tol:e}")]
    ConstancyViolation {
        spread: f64,
        tol: f64,
        kprime_by_state: Vec<f64>,
    },
    #[error("{name} residual {value:e} exceeds {tol:e}")]
    ResidualViolation {
        name: &'static str,
        value: f64,
        tol: f64,
    },
}

impl AnalysisError {
    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            AnalysisError::Chain(ChainError::SingularSystem(_))
                | AnalysisError::Chain(ChainError::InaccurateSolution { .. })
        )
    }
}

/// Mean first hitting times `h_i = E_i[theta_j]` of one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingProfile {
    pub target: usize,
    pub h: Vec<f64>,
}

/// Cross-check tolerance `1e-12 * m * (1 + ||G||)`, where the generator is
/// measured in units of its fastest exit rate so that the tolerance does not
/// depend on the time scale of a continuous chain.
pub fn default_tolerance(chain: &MarkovChain) -> f64 {
    let norm = inf_norm(&chain.generator());
    let fastest = (0..chain.size())
        .map(|i| chain.exit_rate(i))
        .fold(1.0, f64::max);
    let unit_norm = match chain.kind() {
        ChainKind::Discrete => norm,
        ChainKind::Continuous => norm / fastest,
    };
    1e-12 * chain.size() as f64 * (1.0 + unit_norm)
}

/// Solves the first-step equations for target `j` with every right-hand side
/// equal to `weight`, i.e. returns `weight * E_i[theta_j]` for all `i`.
fn weighted_hitting(chain: &MarkovChain, target: usize, weight: f64) -> Result<Vec<f64>, ChainError> {
    let m = chain.size();
    let others: Vec<usize> = (0..m).filter(|&i| i != target).collect();
    let n = others.len();
    let mut off = OffDiagonal::zeros(n);
    let mut leak = vec![0.0; n];
    for (a, &i) in others.iter().enumerate() {
        for (b, &k) in others.iter().enumerate() {
            if a != b {
                off.set(a, b, chain.off_diagonal(i, k));
            }
        }
        leak[a] = chain.off_diagonal(i, target);
    }
    let rhs = vec![weight; n];
    let x = solve_m_matrix(&off, &leak, &rhs).ok_or_else(|| {
        ChainError::SingularSystem(format!("hitting-time system for target {target}"))
    })?;
    let mut out = vec![0.0; m];
    for (a, &i) in others.iter().enumerate() {
        out[i] = x[a];
    }
    Ok(out)
}

/// `E_i[theta_j]` for every start state `i`: steps in discrete time, time
/// units in continuous time.
pub fn hitting_times(chain: &MarkovChain, target: usize) -> Result<HittingProfile, AnalysisError> {
    chain.check_state(target)?;
    let h = weighted_hitting(chain, target, 1.0)?;
    Ok(HittingProfile { target, h })
}

/// Matrix of mean first passage times `E_i[T_j]` of a discrete chain, with
/// mean return times `1 / pi_j` on the diagonal.
pub fn mfpt_matrix(chain: &MarkovChain) -> Result<DMatrix<f64>, AnalysisError> {
    if chain.kind() != ChainKind::Discrete {
        return Err(ChainError::KindMismatch {
            expected: ChainKind::Discrete,
            actual: chain.kind(),
        }
        .into());
    }
    let m = chain.size();
    let pi = stationary_distribution(chain, STATIONARY_TOL)?.pi;
    let columns: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| weighted_hitting(chain, j, 1.0))
        .collect::<Result<_, _>>()?;
    Ok(DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0 / pi[j]
        } else {
            columns[j][i]
        }
    }))
}

/// Deviation matrix `D` (group inverse of `I - P`, or of `-Q`) together with
/// the residuals of its defining equations.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationMatrix {
    pub d: DMatrix<f64>,
    pub pi: Vec<f64>,
    /// `max |(-G) D - (I - 1 pi^T)|`, divided by `max(1, ||G||_inf ||D||_inf)`
    pub fixed_point_residual: f64,
    /// `||D 1||_inf`
    pub row_sum_residual: f64,
    /// `||pi^T D||_inf`
    pub left_null_residual: f64,
}

impl DeviationMatrix {
    pub fn trace(&self) -> f64 {
        let mut s = NeumaierSum::default();
        for j in 0..self.d.nrows() {
            s.add(self.d[(j, j)]);
        }
        s.value()
    }
}

fn deviation_from(chain: &MarkovChain, pi: &[f64]) -> Result<DeviationMatrix, ChainError> {
    let m = chain.size();
    let g = chain.generator();
    let ones_pi = DMatrix::from_fn(m, m, |_, k| pi[k]);
    let shifted = &ones_pi - &g;

    // Row equilibration keeps chains with widely spread rates well scaled.
    let scale: Vec<f64> = shifted
        .row_iter()
        .map(|r| 1.0 / r.abs().max())
        .collect();
    let scaled = DMatrix::from_fn(m, m, |i, k| shifted[(i, k)] * scale[i]);
    let lu = scaled.lu();
    let rhs = DMatrix::from_fn(m, m, |i, k| if i == k { scale[i] } else { 0.0 });
    let mut inv = lu
        .solve(&rhs)
        .ok_or_else(|| ChainError::SingularSystem("shifted deviation system".into()))?;
    // one step of iterative refinement
    let resid = DMatrix::<f64>::identity(m, m) - &shifted * &inv;
    let resid_scaled = DMatrix::from_fn(m, m, |i, k| resid[(i, k)] * scale[i]);
    if let Some(correction) = lu.solve(&resid_scaled) {
        inv += correction;
    }
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(ChainError::SingularSystem(
            "non-finite entries in deviation matrix".into(),
        ));
    }
    let d = inv - &ones_pi;

    let target = DMatrix::<f64>::identity(m, m) - &ones_pi;
    let fixed = (-&g) * &d - target;
    let scale = (inf_norm(&g) * inf_norm(&d)).max(1.0);
    let fixed_point_residual = fixed.amax() / scale;
    let row_sum_residual = d.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    let left_null_residual = (0..m)
        .map(|k| (0..m).map(|i| pi[i] * d[(i, k)]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    Ok(DeviationMatrix {
        d,
        pi: pi.to_vec(),
        fixed_point_residual,
        row_sum_residual,
        left_null_residual,
    })
}

/// Deviation matrix by a single shifted solve. The scaled fixed-point
/// residual must be within `tol`, the row-sum and left-null residuals within
/// `tol * max(1, ||D||_inf)`.
pub fn deviation_matrix(chain: &MarkovChain, tol: f64) -> Result<DeviationMatrix, AnalysisError> {
    let pi = stationary_distribution(chain, STATIONARY_TOL)?.pi;
    let dev = deviation_from(chain, &pi)?;
    let d_scale = inf_norm(&dev.d).max(1.0);
    for (name, value, bound) in [
        ("deviation fixed-point", dev.fixed_point_residual, tol),
        ("deviation row-sum", dev.row_sum_residual, tol * d_scale),
        ("deviation left-null", dev.left_null_residual, tol * d_scale),
    ] {
        if !(value <= bound) {
            return Err(AnalysisError::ResidualViolation { name, value, tol: bound });
        }
    }
    Ok(dev)
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max)
}

/// `K'` as the trace of the deviation matrix.
pub fn kemeny_via_trace(chain: &MarkovChain) -> Result<f64, AnalysisError> {
    let pi = stationary_distribution(chain, STATIONARY_TOL)?.pi;
    Ok(deviation_from(chain, &pi)?.trace())
}

/// Everything the hitting route produces, plus the trace-route value and the
/// identity residuals that tie the two together.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub kind: ChainKind,
    pub size: usize,
    pub pi: Vec<f64>,
    pub kprime: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub kprime_by_state: Vec<f64>,
    pub spread: f64,
    /// Relative tolerance the spread was checked against (times `1 + K'`).
    pub tolerance: f64,
    pub deviation_trace: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hunter_bound_ok: Option<bool>,
    pub residuals: BTreeMap<String, f64>,
    /// `E_i[theta_j]`.
    #[serde(skip)]
    pub hitting: DMatrix<f64>,
    /// `E_i[T_j]`, discrete chains only.
    #[serde(skip)]
    pub mfpt: Option<DMatrix<f64>>,
    #[serde(skip)]
    pub deviation: DMatrix<f64>,
}

impl AnalysisReport {
    pub fn route_delta(&self) -> f64 {
        (self.kprime - self.deviation_trace).abs()
    }
}

/// Kemeny's constant by the hitting route.
///
/// Fails with [`AnalysisError::ConstancyViolation`] when
/// `max_i K'_i - min_i K'_i > tol * (1 + K')`.
pub fn kemeny_exact(chain: &MarkovChain, tol: f64) -> Result<AnalysisReport, AnalysisError> {
    let m = chain.size();
    let stationary = stationary_distribution(chain, STATIONARY_TOL)?;
    let pi = stationary.pi;

    // column j holds pi_j E_i[theta_j]; solving with right-hand side pi_j
    // keeps huge hitting times of rarely visited states in range
    let weighted: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| weighted_hitting(chain, j, pi[j]))
        .collect::<Result<_, _>>()?;

    let kprime_by_state: Vec<f64> = (0..m)
        .map(|i| {
            let mut s = NeumaierSum::default();
            for col in &weighted {
                s.add(col[i]);
            }
            s.value()
        })
        .collect();
    let mut avg = NeumaierSum::default();
    for (p, v) in pi.iter().zip(&kprime_by_state) {
        avg.add(p * v);
    }
    let kprime = avg.value();
    let (lo, hi) = kprime_by_state
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let spread = hi - lo;
    if !(spread <= tol * (1.0 + kprime.abs())) {
        return Err(AnalysisError::ConstancyViolation {
            spread,
            tol: tol * (1.0 + kprime.abs()),
            kprime_by_state,
        });
    }

    let hitting = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            0.0
        } else {
            weighted[j][i] / pi[j]
        }
    });
    let dev = deviation_from(chain, &pi)?;
    let deviation_trace = dev.trace();

    let mut residuals = BTreeMap::new();
    residuals.insert("stationary".to_string(), stationary.residual);
    residuals.insert("route_delta".to_string(), (kprime - deviation_trace).abs());
    residuals.insert("deviation_fixed_point".to_string(), dev.fixed_point_residual);
    residuals.insert("deviation_row_sums".to_string(), dev.row_sum_residual);
    residuals.insert("deviation_left_null".to_string(), dev.left_null_residual);
    residuals.insert(
        "hitting_vs_deviation".to_string(),
        hitting_deviation_residual(&weighted, &dev.d),
    );

    let (k, hunter_bound_ok, mfpt) = match chain.kind() {
        ChainKind::Discrete => {
            let k = kprime + 1.0;
            let bound = (m as f64 + 1.0) / 2.0;
            let ok = k >= bound - tol * (1.0 + k);
            if !ok {
                log::warn!("Hunter bound violated: K = {k} < (m+1)/2 = {bound}");
            }
            let mfpt = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 / pi[j] } else { hitting[(i, j)] });
            residuals.insert(
                "omega_fixed_point".to_string(),
                omega_residual(chain, &kprime_by_state),
            );
            (Some(k), Some(ok), Some(mfpt))
        }
        ChainKind::Continuous => (None, None, None),
    };

    Ok(AnalysisReport {
        kind: chain.kind(),
        size: m,
        pi,
        kprime,
        k,
        kprime_by_state,
        spread,
        tolerance: tol,
        deviation_trace,
        hunter_bound_ok,
        residuals,
        hitting,
        mfpt,
        deviation: dev.d,
    })
}

/// `max_{i,j} |pi_j E_i[theta_j] - (D_jj - D_ij)|`.
fn hitting_deviation_residual(weighted: &[Vec<f64>], d: &DMatrix<f64>) -> f64 {
    let m = d.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..m {
        for i in 0..m {
            let lhs = if i == j { 0.0 } else { weighted[j][i] };
            let rhs = if i == j { 0.0 } else { d[(j, j)] - d[(i, j)] };
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// `||P omega - omega||_inf` with `omega_i = sum_j pi_j E_i[T_j] = K'_i + 1`.
fn omega_residual(chain: &MarkovChain, kprime_by_state: &[f64]) -> f64 {
    let m = chain.size();
    let omega: Vec<f64> = kprime_by_state.iter().map(|v| v + 1.0).collect();
    let p = chain.matrix();
    (0..m)
        .map(|i| {
            let mut s = NeumaierSum::default();
            for k in 0..m {
                s.add(p[(i, k)] * omega[k]);
            }
            (s.value() - omega[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// Residuals of the identities linking hitting times and the deviation
/// matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    /// `||P omega - omega||_inf`, discrete chains only.
    pub omega_fixed_point: Option<f64>,
    /// `||omega||_inf`, for scaling the fixed-point residual.
    pub omega_norm: Option<f64>,
    /// `max_{i,j} |pi_j E_i[theta_j] - (D_jj - D_ij)|`.
    pub hitting_vs_deviation: f64,
    /// `||pi^T D||_inf`.
    pub left_null: f64,
    /// `||D 1||_inf`.
    pub row_sums: f64,
}

pub fn identity_report(chain: &MarkovChain) -> Result<IdentityReport, AnalysisError> {
    let m = chain.size();
    let pi = stationary_distribution(chain, STATIONARY_TOL)?.pi;
    let weighted: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| weighted_hitting(chain, j, pi[j]))
        .collect::<Result<_, _>>()?;
    let dev = deviation_from(chain, &pi)?;

    let (omega_fixed_point, omega_norm) = match chain.kind() {
        ChainKind::Discrete => {
            let by_state: Vec<f64> = (0..m)
                .map(|i| weighted.iter().map(|c| c[i]).sum())
                .collect();
            let norm = by_state.iter().map(|v| (v + 1.0).abs()).fold(0.0, f64::max);
            (Some(omega_residual(chain, &by_state)), Some(norm))
        }
        ChainKind::Continuous => (None, None),
    };
    Ok(IdentityReport {
        omega_fixed_point,
        omega_norm,
        hitting_vs_deviation: hitting_deviation_residual(&weighted, &dev.d),
        left_null: dev.left_null_residual,
        row_sums: dev.row_sum_residual,
    })
}

/// Writes a matrix as CSV, one row per line, shortest round-trip decimals.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
