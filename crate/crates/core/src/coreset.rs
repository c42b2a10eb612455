//! Difficulty/diversity coreset selection.
//!
//! Pipeline: a directed k-NN graph over raw embeddings with RBF edge weights
//! `exp(-gamma_f * |v_i - v_j|^2)`, one round of forward message passing
//! `x'_i = x_i + sum_{j in N(i)} e_ij * x_j`, then greedy selection where
//! each pick `s` subtracts `exp(-gamma_r * |v_s - v_j|^2) * x'_s` from every
//! remaining candidate `j`.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Dataset;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum CoresetError {
    #[error("k-NN needs n >= 2 and 1 <= k <= n - 1 (n = {n}, k = {k})")]
    TooFewNodes { n: usize, k: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("budget {0} out of range for n = {1}")]
    BudgetOutOfRange(String, usize),
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, CoresetError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    /// Fractions resolve to `max(1, floor(fraction * n))`.
    pub fn resolve(&self, n: usize) -> Result<usize> {
        let b = match *self {
            Budget::Count(c) => c,
            Budget::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(CoresetError::BudgetOutOfRange(self.to_string(), n));
                }
                ((f * n as f64).floor() as usize).max(1)
            }
        };
        if b == 0 || b > n {
            return Err(CoresetError::BudgetOutOfRange(self.to_string(), n));
        }
        Ok(b)
    }
}

impl std::fmt::Display for Budget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Budget::Count(c) => write!(f, "{c}"),
            Budget::Fraction(x) => write!(f, "{x}"),
        }
    }
}

impl std::str::FromStr for Budget {
    type Err = String;

    /// `"10"` is a count, `"0.1"` or `"10%"` a fraction.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(p) = s.strip_suffix('%') {
            let pct: f64 = p.parse().map_err(|_| format!("bad budget {s:?}"))?;
            return Ok(Budget::Fraction(pct / 100.0));
        }
        if let Ok(c) = s.parse::<usize>() {
            return Ok(Budget::Count(c));
        }
        s.parse::<f64>()
            .map(Budget::Fraction)
            .map_err(|_| format!("bad budget {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoresetConfig {
    pub k_neighbors: usize,
    pub gamma_f: f64,
    pub gamma_r: f64,
    pub budget: Budget,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        CoresetConfig {
            k_neighbors: 5,
            gamma_f: 0.1,
            gamma_r: 0.1,
            budget: Budget::Fraction(0.1),
        }
    }
}

impl CoresetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(CoresetError::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        if !(self.gamma_f.is_finite() && self.gamma_f > 0.0) {
            return Err(CoresetError::InvalidConfig("gamma_f must be > 0".into()));
        }
        if !(self.gamma_r.is_finite() && self.gamma_r >= 0.0) {
            return Err(CoresetError::InvalidConfig("gamma_r must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub index: usize,
    pub weight: f64,
}

/// Directed k-NN graph; `neighbors[i]` is sorted by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub n: usize,
    pub dim: usize,
    pub neighbors: Vec<Vec<Edge>>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn build_knn_graph(dataset: &Dataset, cfg: &CoresetConfig) -> Result<KnnGraph> {
    cfg.validate()?;
    let n = dataset.len();
    let k = cfg.k_neighbors;
    if n < 2 || k > n - 1 {
        return Err(CoresetError::TooFewNodes { n, k });
    }
    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            let vi = dataset.embedding(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(vi, dataset.embedding(j)), j))
                .collect();
            cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.sort_unstable_by_key(|&(_, j)| j);
            cand.into_iter()
                .map(|(d2, j)| Edge {
                    index: j,
                    weight: (-cfg.gamma_f * d2).exp(),
                })
                .collect()
        })
        .collect();
    Ok(KnnGraph {
        n,
        dim: dataset.dim(),
        neighbors,
    })
}

/// One forward message-passing round. Each node accumulates its own score
/// then its out-neighbors' weighted scores in ascending neighbor order.
pub fn forward_pass(graph: &KnnGraph, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != graph.n {
        return Err(CoresetError::LengthMismatch {
            expected: graph.n,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(CoresetError::NonFiniteScore(i));
    }
    Ok(graph
        .neighbors
        .par_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut acc = x[i];
            for e in nbrs {
                acc += e.weight * x[e.index];
            }
            acc
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub rank: usize,
    pub index: usize,
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    /// `"coreset"` or `"random"`.
    pub method: String,
    pub config: CoresetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n: usize,
    pub picks: Vec<Pick>,
    /// FNV-1a digest of the final score vector, as 16 hex digits.
    pub remaining_scores_digest: String,
}

impl SelectionManifest {
    pub fn indices(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.index).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.picks.iter().map(|p| p.id.as_str()).collect()
    }
}

fn argmax_remaining(scores: &[f64], remaining: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&s, &r)) in scores.iter().zip(remaining).enumerate() {
        if !r {
            continue;
        }
        match best {
            Some(b) if scores[b].partial_cmp(&s) != Some(Ordering::Less) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Greedy selection with suppression. Picked nodes leave the pool and keep
/// the score they had when selected; every other candidate may go negative.
pub fn select(
    dataset: &Dataset,
    graph: &KnnGraph,
    scores: &[f64],
    cfg: &CoresetConfig,
) -> Result<SelectionManifest> {
    cfg.validate()?;
    let n = dataset.len();
    if graph.n != n {
        return Err(CoresetError::LengthMismatch {
            expected: n,
            got: graph.n,
        });
    }
    if scores.len() != n {
        return Err(CoresetError::LengthMismatch {
            expected: n,
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(CoresetError::NonFiniteScore(i));
    }
    let budget = cfg.budget.resolve(n)?;
    let mut cur = scores.to_vec();
    let mut remaining = vec![true; n];
    let mut picks = Vec::with_capacity(budget);
    for rank in 0..budget {
        let s = argmax_remaining(&cur, &remaining).expect("budget <= n");
        remaining[s] = false;
        let picked = cur[s];
        picks.push(Pick {
            rank,
            index: s,
            id: dataset.record(s).id.clone(),
            score: picked,
        });
        let vs = dataset.embedding(s);
        cur.par_iter_mut()
            .zip(remaining.par_iter())
            .enumerate()
            .filter(|(_, (_, &r))| r)
            .for_each(|(j, (xj, _))| {
                let w = (-cfg.gamma_r * squared_distance(vs, dataset.embedding(j))).exp();
                *xj -= w * picked;
            });
    }
    Ok(SelectionManifest {
        method: "coreset".into(),
        config: *cfg,
        seed: None,
        n,
        picks,
        remaining_scores_digest: format!("{:016x}", rng::digest_f64(&cur)),
    })
}

/// Seeded uniform sample without replacement (partial Fisher-Yates). Scores
/// are recorded as 0.
pub fn random_baseline(dataset: &Dataset, budget: Budget, seed: u64) -> Result<SelectionManifest> {
    let n = dataset.len();
    let b = budget.resolve(n)?;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(seed);
    for i in 0..b {
        let j = r.gen_range(i..n);
        idx.swap(i, j);
    }
    let picks = idx[..b]
        .iter()
        .enumerate()
        .map(|(rank, &i)| Pick {
            rank,
            index: i,
            id: dataset.record(i).id.clone(),
            score: 0.0,
        })
        .collect();
    Ok(SelectionManifest {
        method: "random".into(),
        config: CoresetConfig {
            budget,
            ..CoresetConfig::default()
        },
        seed: Some(seed),
        n,
        picks,
        remaining_scores_digest: format!("{:016x}", rng::digest_f64(&vec![0.0; n])),
    })
}

/// Full pipeline from difficulty scores: graph, forward pass, selection.
/// Returns the manifest together with the propagated scores.
pub fn run_pipeline(
    dataset: &Dataset,
    difficulty: &[f64],
    cfg: &CoresetConfig,
) -> Result<(SelectionManifest, Vec<f64>)> {
    let graph = build_knn_graph(dataset, cfg)?;
    let propagated = forward_pass(&graph, difficulty)?;
    let manifest = select(dataset, &graph, &propagated, cfg)?;
    Ok((manifest, propagated))
}
