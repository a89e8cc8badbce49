//! Generation-quality metrics over precomputed inputs: Inception Score from
//! class-probability rows and IC-L from intra-cluster pairwise distances.

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of a probability row's sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("probability matrix has no rows")]
    Empty,
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} is not a probability distribution: {reason}")]
    DegenerateRow { row: usize, reason: String },
    #[error("no cluster has a complete set of pairwise distances")]
    NoEligibleCluster,
    #[error("cluster {cluster:?} holds invalid distance {value}")]
    InvalidDistance { cluster: String, value: f64 },
}

/// `n x k` matrix of per-image class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ProbMatrix {
    rows: Vec<Vec<f64>>,
}

impl ProbMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        let k = rows.first().ok_or(MetricsError::Empty)?.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(MetricsError::Ragged {
                    row: i,
                    expected: k,
                    found: row.len(),
                });
            }
            if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(MetricsError::DegenerateRow {
                    row: i,
                    reason: format!("entry {x} outside [0, 1]"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(MetricsError::DegenerateRow {
                    row: i,
                    reason: format!("sums to {sum}"),
                });
            }
        }
        Ok(ProbMatrix { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn classes(&self) -> usize {
        self.rows[0].len()
    }

    /// Column means.
    pub fn marginal(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.classes())
            .map(|j| self.rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for ProbMatrix {
    type Error = MetricsError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        ProbMatrix::new(rows)
    }
}

impl From<ProbMatrix> for Vec<Vec<f64>> {
    fn from(p: ProbMatrix) -> Self {
        p.rows
    }
}

/// `KL(p || q)` in nats, with `0 * ln(0 / q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Working precision, in bits, of the Inception Score evaluation.
const IS_PRECISION: usize = 128;

type Wide = FBig<HalfEven>;

fn wide(x: f64) -> Wide {
    // Every finite f64 converts exactly.
    Wide::try_from(x)
        .expect("finite")
        .with_precision(IS_PRECISION)
        .value()
}

/// `exp(mean_i KL(p_i || p̄))`.
///
/// Evaluated at 128 bits and rounded once, so identical rows give exactly 1 and
/// `k` distinct one-hot rows give exactly `k`.
pub fn inception_score(p: &ProbMatrix) -> f64 {
    let n = wide(p.rows().len() as f64);
    let marginal: Vec<Wide> = (0..p.classes())
        .map(|j| p.rows().iter().fold(wide(0.0), |acc, r| acc + wide(r[j])) / &n)
        .collect();
    let mut total = wide(0.0);
    for row in p.rows() {
        for (&pi, q) in row.iter().zip(&marginal) {
            if pi > 0.0 {
                let pi = wide(pi);
                total += &pi * (&pi / q).ln();
            }
        }
    }
    (total / n).exp().to_f64().value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    /// Declared member count. When present, `distances` must hold exactly one value
    /// per member pair or the cluster is skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    /// Distances between distinct member pairs.
    pub distances: Vec<f64>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, distances: Vec<f64>) -> Self {
        Cluster {
            id: id.into(),
            members: None,
            distances,
        }
    }

    pub fn with_members(mut self, m: usize) -> Self {
        self.members = Some(m);
        self
    }

    /// Non-empty, and consistent with the declared member count if there is one.
    pub fn is_eligible(&self) -> bool {
        match self.members {
            _ if self.distances.is_empty() => false,
            Some(m) => m >= 2 && m * (m - 1) / 2 == self.distances.len(),
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterDistances {
    pub clusters: Vec<Cluster>,
}

/// Mean over eligible clusters of the mean within-cluster distance (see
/// [`Cluster::is_eligible`]).
pub fn icl(d: &ClusterDistances) -> Result<f64, MetricsError> {
    let mut means = Vec::new();
    for c in &d.clusters {
        if let Some(&v) = c.distances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(MetricsError::InvalidDistance {
                cluster: c.id.clone(),
                value: v,
            });
        }
        if c.is_eligible() {
            means.push(c.distances.iter().sum::<f64>() / c.distances.len() as f64);
        }
    }
    if means.is_empty() {
        return Err(MetricsError::NoEligibleCluster);
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}
