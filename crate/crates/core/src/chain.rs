//! Finite Markov chains in discrete and continuous time.
//!
//! A [`MarkovChain`] is either a row-stochastic transition matrix `P` or a
//! generator `Q` with zero row sums. Construction validates the matrix and
//! checks irreducibility; once built a chain is immutable.

use std::fmt;

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elimination::{gth_stationary, OffDiagonal};

/// Default tolerance for row-sum validation, relative to the row magnitude.
pub const DEFAULT_VALIDATION_TOL: f64 = 1e-12;

/// Time type of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainKind {
    #[serde(rename = "dtmc")]
    Discrete,
    #[serde(rename = "ctmc")]
    Continuous,
}

impl fmt::Display for ChainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainKind::Discrete => f.write_str("dtmc"),
            ChainKind::Continuous => f.write_str("ctmc"),
        }
    }
}

/// One violated invariant found during validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    NonFinite { row: usize, col: usize },
    NegativeEntry { row: usize, col: usize, value: f64 },
    EntryAboveOne { row: usize, col: usize, value: f64 },
    PositiveDiagonal { row: usize, value: f64 },
    RowSum { row: usize, deviation: f64 },
    NotIrreducible { components: Vec<Vec<usize>> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { row, col } => write!(f, "entry ({row}, {col}) is not finite"),
            Violation::NegativeEntry { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value} is negative")
            }
            Violation::EntryAboveOne { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value} exceeds 1")
            }
            Violation::PositiveDiagonal { row, value } => {
                write!(f, "diagonal entry {row} = {value} is positive")
            }
            Violation::RowSum { row, deviation } => {
                write!(f, "row {row} sum deviates by {deviation:e}")
            }
            Violation::NotIrreducible { components } => {
                write!(f, "chain is reducible; communicating classes {components:?}")
            }
        }
    }
}

/// Non-fatal observations attached to a valid chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum ChainWarning {
    Periodic { period: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("chain must have at least one state")]
    Empty,
    #[error("matrix is not square: {rows} rows but row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("invalid chain: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("{labels} labels given for {states} states")]
    LabelCount { labels: usize, states: usize },
    #[error("state {state} is absorbing (zero exit rate)")]
    AbsorbingState { state: usize },
    #[error("expected a {expected} chain, got {actual}")]
    KindMismatch { expected: ChainKind, actual: ChainKind },
    #[error("state {state} out of range for a chain with {size} states")]
    StateOutOfRange { state: usize, size: usize },
    #[error("linear system is numerically singular: {0}")]
    SingularSystem(String),
    #[error("stationary residual {residual:e} exceeds tolerance {tol:e}")]
    InaccurateSolution { residual: f64, tol: f64 },
    #[error("malformed chain file: {0}")]
    Parse(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_VALIDATION_TOL,
        }
    }
}

/// A validated, irreducible finite Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    kind: ChainKind,
    matrix: DMatrix<f64>,
    labels: Option<Vec<String>>,
    period: usize,
}

impl MarkovChain {
    /// Validates `matrix` as a transition matrix or generator.
    pub fn new(kind: ChainKind, matrix: DMatrix<f64>) -> Result<Self, ChainError> {
        Self::with_options(kind, matrix, ValidationOptions::default())
    }

    pub fn with_options(
        kind: ChainKind,
        matrix: DMatrix<f64>,
        opts: ValidationOptions,
    ) -> Result<Self, ChainError> {
        let m = matrix.nrows();
        if m == 0 {
            return Err(ChainError::Empty);
        }
        if matrix.ncols() != m {
            return Err(ChainError::NotSquare {
                rows: m,
                row: 0,
                len: matrix.ncols(),
            });
        }

        let mut violations = entry_violations(kind, &matrix, opts.tol);
        let finite = !violations
            .iter()
            .any(|v| matches!(v, Violation::NonFinite { .. }));
        if finite {
            let components = communicating_classes(&matrix);
            if components.len() > 1 {
                violations.push(Violation::NotIrreducible { components });
            }
        }
        if !violations.is_empty() {
            return Err(ChainError::Invalid(violations));
        }

        let period = match kind {
            ChainKind::Discrete => period_of(&matrix),
            ChainKind::Continuous => 1,
        };
        Ok(Self {
            kind,
            matrix,
            labels: None,
            period,
        })
    }

    /// Builds a chain from nested rows, as read from a chain file.
    pub fn from_rows(kind: ChainKind, rows: &[Vec<f64>]) -> Result<Self, ChainError> {
        Self::from_rows_with_options(kind, rows, ValidationOptions::default())
    }

    pub fn from_rows_with_options(
        kind: ChainKind,
        rows: &[Vec<f64>],
        opts: ValidationOptions,
    ) -> Result<Self, ChainError> {
        let m = rows.len();
        if m == 0 {
            return Err(ChainError::Empty);
        }
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(ChainError::NotSquare {
                rows: m,
                row,
                len: r.len(),
            });
        }
        let matrix = DMatrix::from_fn(m, m, |i, k| rows[i][k]);
        Self::with_options(kind, matrix, opts)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, ChainError> {
        if labels.len() != self.size() {
            return Err(ChainError::LabelCount {
                labels: labels.len(),
                states: self.size(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Period of a discrete chain (gcd of cycle lengths); 1 in continuous time.
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn is_aperiodic(&self) -> bool {
        self.period == 1
    }

    pub fn warnings(&self) -> Vec<ChainWarning> {
        if self.period > 1 {
            vec![ChainWarning::Periodic {
                period: self.period,
            }]
        } else {
            Vec::new()
        }
    }

    pub fn check_state(&self, state: usize) -> Result<(), ChainError> {
        if state < self.size() {
            Ok(())
        } else {
            Err(ChainError::StateOutOfRange {
                state,
                size: self.size(),
            })
        }
    }

    /// Rate (or probability) of moving from `i` to `k != i`.
    #[inline]
    pub fn off_diagonal(&self, i: usize, k: usize) -> f64 {
        if i == k {
            0.0
        } else {
            self.matrix[(i, k)]
        }
    }

    /// Total rate of leaving `i`: `1 - P_ii` or `-Q_ii`, computed from the
    /// off-diagonal entries so that it is exact for the chain actually used.
    pub fn exit_rate(&self, i: usize) -> f64 {
        (0..self.size()).map(|k| self.off_diagonal(i, k)).sum()
    }

    /// Generator form `G`: `P - I` for a discrete chain, `Q` otherwise. Row
    /// sums are exactly zero by construction.
    pub fn generator(&self) -> DMatrix<f64> {
        let m = self.size();
        let mut g = DMatrix::from_fn(m, m, |i, k| self.off_diagonal(i, k));
        for i in 0..m {
            g[(i, i)] = -self.exit_rate(i);
        }
        g
    }

    pub(crate) fn off_diagonal_buffer(&self) -> OffDiagonal {
        let m = self.size();
        let mut off = OffDiagonal::zeros(m);
        for i in 0..m {
            for k in 0..m {
                if i != k {
                    off.set(i, k, self.matrix[(i, k)]);
                }
            }
        }
        off
    }

    /// Embedded jump chain of a continuous chain: `P_ij = q_ij / q_i`, zero
    /// diagonal.
    pub fn jump_chain(&self) -> Result<MarkovChain, ChainError> {
        if self.kind != ChainKind::Continuous {
            return Err(ChainError::KindMismatch {
                expected: ChainKind::Continuous,
                actual: self.kind,
            });
        }
        let m = self.size();
        let rates: Vec<f64> = (0..m).map(|i| self.exit_rate(i)).collect();
        if let Some(state) = rates.iter().position(|&q| !(q > 0.0)) {
            return Err(ChainError::AbsorbingState { state });
        }
        let p = DMatrix::from_fn(m, m, |i, k| {
            if i == k {
                0.0
            } else {
                self.matrix[(i, k)] / rates[i]
            }
        });
        let mut jump = MarkovChain::new(ChainKind::Discrete, p)?;
        jump.labels = self.labels.clone();
        Ok(jump)
    }
}

fn entry_violations(kind: ChainKind, a: &DMatrix<f64>, tol: f64) -> Vec<Violation> {
    let m = a.nrows();
    let mut out = Vec::new();
    for i in 0..m {
        let mut row_ok = true;
        for k in 0..m {
            let v = a[(i, k)];
            if !v.is_finite() {
                out.push(Violation::NonFinite { row: i, col: k });
                row_ok = false;
                continue;
            }
            match kind {
                ChainKind::Discrete => {
                    if v < 0.0 {
                        out.push(Violation::NegativeEntry {
                            row: i,
                            col: k,
                            value: v,
                        });
                    } else if v > 1.0 + tol {
                        out.push(Violation::EntryAboveOne {
                            row: i,
                            col: k,
                            value: v,
                        });
                    }
                }
                ChainKind::Continuous => {
                    if i != k && v < 0.0 {
                        out.push(Violation::NegativeEntry {
                            row: i,
                            col: k,
                            value: v,
                        });
                    }
                    if i == k && v > 0.0 {
                        out.push(Violation::PositiveDiagonal { row: i, value: v });
                    }
                }
            }
        }
        if !row_ok {
            continue;
        }
        let row = a.row(i);
        let magnitude: f64 = row.iter().map(|v| v.abs()).sum();
        let target = match kind {
            ChainKind::Discrete => 1.0,
            ChainKind::Continuous => 0.0,
        };
        let deviation = row.iter().sum::<f64>() - target;
        if deviation.abs() > tol * magnitude.max(1.0) {
            out.push(Violation::RowSum { row: i, deviation });
        }
    }
    out
}

/// Strongly connected components of the positive off-diagonal digraph,
/// each sorted, in increasing order of smallest member.
fn communicating_classes(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let m = a.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(m, m * 2);
    let nodes: Vec<_> = (0..m).map(|_| graph.add_node(())).collect();
    for i in 0..m {
        for k in 0..m {
            if i != k && a[(i, k)] > 0.0 {
                graph.add_edge(nodes[i], nodes[k], ());
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    comps.sort_by_key(|c| c[0]);
    comps
}

/// Period of an irreducible discrete chain via BFS levels:
/// gcd over edges `u -> v` of `level(u) + 1 - level(v)`.
fn period_of(p: &DMatrix<f64>) -> usize {
    let m = p.nrows();
    let mut level = vec![usize::MAX; m];
    let mut queue = std::collections::VecDeque::new();
    level[0] = 0;
    queue.push_back(0);
    while let Some(u) = queue.pop_front() {
        for v in 0..m {
            if p[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..m {
        for v in 0..m {
            if p[(u, v)] > 0.0 {
                let d = (level[u] + 1).abs_diff(level[v]);
                g = gcd(g, d);
            }
        }
    }
    g.max(1)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Stationary distribution with its balance residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// `||pi^T P - pi^T||_inf` or `||pi^T Q||_inf`.
    pub residual: f64,
}

/// Solves `pi^T G = 0`, `sum(pi) = 1`.
///
/// `tol` bounds the balance residual relative to `max(1, ||G||_inf)`.
pub fn stationary_distribution(
    chain: &MarkovChain,
    tol: f64,
) -> Result<StationaryDistribution, ChainError> {
    let raw = gth_stationary(&chain.off_diagonal_buffer()).ok_or_else(|| {
        ChainError::SingularSystem("zero pivot while eliminating balance equations".into())
    })?;
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
    if let Some(i) = pi.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(ChainError::SingularSystem(format!(
            "stationary mass of state {i} is {}",
            pi[i]
        )));
    }

    let g = chain.generator();
    let residual = balance_residual(&g, &pi);
    let scale = g.row_iter().map(|r| r.abs().sum()).fold(1.0, f64::max);
    if residual > tol * scale {
        return Err(ChainError::InaccurateSolution {
            residual,
            tol: tol * scale,
        });
    }
    Ok(StationaryDistribution { pi, residual })
}

pub(crate) fn balance_residual(g: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let m = g.nrows();
    (0..m)
        .map(|k| (0..m).map(|i| pi[i] * g[(i, k)]).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// On-disk chain description:
/// `{"kind": "dtmc"|"ctmc", "matrix": [[...], ...], "labels": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub kind: ChainKind,
    pub matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl ChainFile {
    pub fn parse(json: &str) -> Result<Self, ChainError> {
        serde_json::from_str(json).map_err(|e| ChainError::Parse(e.to_string()))
    }

    pub fn into_chain(self, opts: ValidationOptions) -> Result<MarkovChain, ChainError> {
        let chain = MarkovChain::from_rows_with_options(self.kind, &self.matrix, opts)?;
        match self.labels {
            Some(labels) => chain.with_labels(labels),
            None => Ok(chain),
        }
    }

    pub fn from_chain(chain: &MarkovChain) -> Self {
        let m = chain.size();
        Self {
            kind: chain.kind(),
            matrix: (0..m)
                .map(|i| (0..m).map(|k| chain.matrix()[(i, k)]).collect())
                .collect(),
            labels: chain.labels().map(|l| l.to_vec()),
        }
    }
}
