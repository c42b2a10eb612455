//! Point-cloud comparisons: paired endpoint deviation, energy distance and
//! mixture moment checks.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowsim::GmmField;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty cloud")]
    Empty,
    #[error("non-finite coordinate in point {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Nonempty set of finite points sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl SampleCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().ok_or(MetricsError::Empty)?.len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(MetricsError::ShapeMismatch(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(MetricsError::NonFinite(i));
            }
        }
        Ok(SampleCloud { points, dim })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `sqrt(mean_i |p_i|^2)`.
    pub fn rms_norm(&self) -> f64 {
        let ss: f64 = self.points.iter().map(|p| norm_sq(p)).sum();
        (ss / self.len() as f64).sqrt()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in &self.points {
            for (mk, pk) in m.iter_mut().zip(p) {
                *mk += pk;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Population (divide-by-n) covariance.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let m = self.mean();
        let d = self.dim;
        let mut c = vec![vec![0.0; d]; d];
        for p in &self.points {
            for i in 0..d {
                let di = p[i] - m[i];
                for j in 0..d {
                    c[i][j] += di * (p[j] - m[j]);
                }
            }
        }
        let n = self.len() as f64;
        c.iter_mut().flatten().for_each(|v| *v /= n);
        c
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn same_dim(a: &SampleCloud, b: &SampleCloud) -> Result<()> {
    if a.dim != b.dim {
        return Err(MetricsError::ShapeMismatch(format!(
            "dimensions {} vs {}",
            a.dim, b.dim
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub mean_rel: f64,
    pub max_rel: f64,
}

/// Per-pair distances `|full_i - cached_i|`.
pub fn paired_distances(full: &SampleCloud, cached: &SampleCloud) -> Result<Vec<f64>> {
    same_dim(full, cached)?;
    if full.len() != cached.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "cardinalities {} vs {}",
            full.len(),
            cached.len()
        )));
    }
    Ok(full
        .points
        .iter()
        .zip(&cached.points)
        .map(|(a, b)| euclidean(a, b))
        .collect())
}

/// Paired distances divided by the RMS norm of `full`; mean and max.
pub fn endpoint_deviation(full: &SampleCloud, cached: &SampleCloud) -> Result<Deviation> {
    let dists = paired_distances(full, cached)?;
    let rms = full.rms_norm();
    let scale = if rms > 0.0 { rms } else { 1.0 };
    let rel: Vec<f64> = dists.iter().map(|d| d / scale).collect();
    Ok(Deviation {
        mean_rel: rel.iter().sum::<f64>() / rel.len() as f64,
        max_rel: rel.iter().copied().fold(0.0, f64::max),
    })
}

/// Mean pairwise distance over all `n * m` ordered pairs. Rows are summed
/// in parallel and then reduced in row order.
fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .map(|p| b.iter().map(|q| euclidean(p, q)).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// V-statistic energy distance `2 E|A-B| - E|A-A'| - E|B-B'|`, clamped at 0.
pub fn energy_distance(a: &SampleCloud, b: &SampleCloud) -> Result<f64> {
    same_dim(a, b)?;
    let ab = mean_pairwise(&a.points, &b.points);
    let aa = mean_pairwise(&a.points, &a.points);
    let bb = mean_pairwise(&b.points, &b.points);
    Ok((2.0 * ab - aa - bb).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentError {
    pub mean_err: f64,
    pub cov_err: f64,
}

/// Empirical mean and covariance against the mixture's exact moments, each
/// relative to the target norm (absolute when that norm is below 1e-9).
pub fn moment_check(cloud: &SampleCloud, target: &GmmField) -> Result<MomentError> {
    use crate::flowsim::FlowField;
    if cloud.dim != target.dim() {
        return Err(MetricsError::ShapeMismatch(format!(
            "cloud dimension {} vs field dimension {}",
            cloud.dim,
            target.dim()
        )));
    }
    let rel = |err: f64, norm: f64| if norm < 1e-9 { err } else { err / norm };
    let tm = target.mixture_mean();
    let mean_err = rel(euclidean(&cloud.mean(), &tm), norm_sq(&tm).sqrt());
    let tc = target.mixture_covariance();
    let ec = cloud.covariance();
    let diff: f64 = tc
        .iter()
        .flatten()
        .zip(ec.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let tnorm = tc.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    Ok(MomentError {
        mean_err,
        cov_err: rel(diff, tnorm),
    })
}

/// CSV `sample,deviation`.
pub fn write_deviation_csv(deviations: &[f64], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "sample,deviation")?;
    for (i, d) in deviations.iter().enumerate() {
        writeln!(w, "{i},{d}")?;
    }
    Ok(())
}

/// CSV `metric,value`.
pub fn write_summary_csv(rows: &[(&str, f64)], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "metric,value")?;
    for (k, v) in rows {
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}
