//! Independent reference implementations shared by the integration tests.
//! Everything here is written densely and literally, without reusing the
//! library's graph, scoring or selection code.

#![allow(dead_code)]

use rand::Rng;
use vcache_core::flowsim::{GmmComponent, GmmField};
use vcache_core::ingest::{self, Dataset, TrajectoryRecord};
use vcache_core::rng;

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// For every node, the set of its `k` nearest other nodes, by full sort on
/// `(distance, index)`, returned in ascending index order.
pub fn brute_knn(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(&points[i], &points[j]), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut nb: Vec<usize> = cand.iter().take(k).map(|c| c.1).collect();
            nb.sort_unstable();
            nb
        })
        .collect()
}

/// Dense weighted adjacency `E[i][j] = exp(-gamma_f * |v_i - v_j|^2)` on the
/// directed k-NN edges, zero elsewhere.
pub fn dense_adjacency(points: &[Vec<f64>], k: usize, gamma_f: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let nbrs = brute_knn(points, k);
    let mut e = vec![vec![0.0; n]; n];
    for i in 0..n {
        for &j in &nbrs[i] {
            e[i][j] = (-gamma_f * sq_dist(&points[i], &points[j])).exp();
        }
    }
    e
}

/// `x' = x + E x`, accumulated row by row starting from `x_i`.
pub fn dense_forward(e: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut acc = x[i];
            for j in 0..n {
                if e[i][j] != 0.0 {
                    acc += e[i][j] * x[j];
                }
            }
            acc
        })
        .collect()
}

/// Literal greedy loop: pick the highest remaining score (lowest index on
/// ties), then subtract `exp(-gamma_r * d^2) * picked_score` from every
/// remaining candidate.
pub fn literal_select(points: &[Vec<f64>], scores: &[f64], budget: usize, gamma_r: f64) -> Vec<usize> {
    let n = scores.len();
    let mut s = scores.to_vec();
    let mut taken = vec![false; n];
    let mut picks = Vec::new();
    for _ in 0..budget {
        let mut best = usize::MAX;
        for j in 0..n {
            if !taken[j] && (best == usize::MAX || s[j] > s[best]) {
                best = j;
            }
        }
        taken[best] = true;
        picks.push(best);
        let picked = s[best];
        for j in 0..n {
            if !taken[j] {
                s[j] -= (-gamma_r * sq_dist(&points[best], &points[j])).exp() * picked;
            }
        }
    }
    picks
}

/// Indices sorted by descending score, lower index first on ties.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// One seeded selection instance: clustered embeddings with `n <= 64`,
/// `2 <= d <= 8`, uniform difficulties in `[0, 2)`, and a budget.
pub struct Instance {
    pub dataset: Dataset,
    pub x: Vec<f64>,
    pub k: usize,
    pub budget: usize,
}

pub fn instance(seed: u64) -> Instance {
    let n = 12 + (seed as usize * 7) % 53;
    let d = 2 + (seed as usize) % 7;
    let clusters = 1 + (seed as usize) % 5;
    let dataset = ingest::synth_dataset(seed, n, d, clusters, 1.0).unwrap();
    let mut r = rng::seeded(rng::sub_seed(seed, 99));
    let x: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
    let k = 1 + (seed as usize) % 6;
    let budget = 1 + (seed as usize * 5) % n;
    Instance { dataset, x, k, budget }
}

pub fn embeddings(ds: &Dataset) -> Vec<Vec<f64>> {
    (0..ds.len()).map(|i| ds.embedding(i).to_vec()).collect()
}

pub fn dataset_from_points(points: &[Vec<f64>]) -> Dataset {
    let records = points
        .iter()
        .enumerate()
        .map(|(i, p)| TrajectoryRecord {
            id: ingest::matrix_id(i),
            embedding: p.clone(),
            step_losses: None,
            difficulty: None,
        })
        .collect();
    Dataset::new(records, points[0].len()).unwrap()
}

/// Mean silhouette coefficient with Euclidean distance.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let n_labels = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; n_labels];
        let mut cnt = vec![0usize; n_labels];
        for j in 0..n {
            if j != i {
                sum[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
                cnt[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if cnt[own] == 0 {
            continue;
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..n_labels)
            .filter(|&l| l != own && cnt[l] > 0)
            .map(|l| sum[l] / cnt[l] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Zero-mean two-component mixture used for moment checks.
pub fn moment_field() -> GmmField {
    GmmField::new(vec![
        GmmComponent {
            weight: 0.5,
            mean: vec![-1.5, 0.5],
            sigma: 0.6,
        },
        GmmComponent {
            weight: 0.5,
            mean: vec![1.5, -0.5],
            sigma: 0.6,
        },
    ])
    .unwrap()
}

/// Relative Frobenius distance `|a - b|_F / |b|_F`.
pub fn rel_frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

/// Closed-form mixture mean and covariance, computed from the component
/// list directly.
pub fn mixture_moments(components: &[(f64, Vec<f64>, f64)]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = components[0].1.len();
    let mut mean = vec![0.0; d];
    for (w, mu, _) in components {
        for k in 0..d {
            mean[k] += w * mu[k];
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for (w, mu, s) in components {
        for a in 0..d {
            for b in 0..d {
                let iso = if a == b { s * s } else { 0.0 };
                cov[a][b] += w * (iso + (mu[a] - mean[a]) * (mu[b] - mean[b]));
            }
        }
    }
    (mean, cov)
}
