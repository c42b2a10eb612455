use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FlowError, FlowField, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic standard deviation of the target component.
    pub sigma: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RawGmm {
    components: Vec<GmmComponent>,
}

/// Exact marginal velocity of the linear-interpolation path from `N(0, I)`
/// to an isotropic Gaussian mixture.
///
/// Component `c` at time `t` is `N(t * mu_c, s_c(t)^2 I)` with
/// `s_c(t)^2 = (1 - t)^2 + t^2 sigma_c^2`, and moves with
/// `u_c = (s_c' / s_c) (x - t mu_c) + mu_c`. The mixture velocity weights
/// the `u_c` by posterior responsibilities, computed in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGmm")]
pub struct GmmField {
    components: Vec<GmmComponent>,
    #[serde(skip)]
    dim: usize,
}

impl TryFrom<RawGmm> for GmmField {
    type Error = FlowError;

    fn try_from(raw: RawGmm) -> Result<Self> {
        GmmField::new(raw.components)
    }
}

impl GmmField {
    /// Validates the components and renormalizes the weights to sum to 1.
    pub fn new(mut components: Vec<GmmComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| FlowError::BadField("no components".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(FlowError::BadField("zero-dimensional mean".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(FlowError::BadField(format!(
                    "component {i} has dimension {}, expected {dim}",
                    c.mean.len()
                )));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(FlowError::BadField(format!("component {i}: weight must be > 0")));
            }
            if !(c.sigma.is_finite() && c.sigma > 0.0) {
                return Err(FlowError::BadField(format!("component {i}: sigma must be > 0")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(FlowError::BadField(format!("component {i}: non-finite mean")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(GmmField { components, dim })
    }

    /// The two-component planar mixture shipped in `data/gmm2.json`.
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../../data/gmm2.json")).expect("bundled field parses")
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// Velocity with a domain check on `t` and `x`.
    pub fn velocity_checked(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FlowError::DomainError(t));
        }
        if x.len() != self.dim {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.velocity(x, t))
    }

    /// Posterior component probabilities at `(x, t)`.
    pub fn responsibilities(&self, x: &[f64], t: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let s2 = path_variance(c.sigma, t);
                let r2: f64 = x
                    .iter()
                    .zip(&c.mean)
                    .map(|(xi, mi)| {
                        let d = xi - t * mi;
                        d * d
                    })
                    .sum();
                c.weight.ln()
                    - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * s2).ln()
                    - r2 / (2.0 * s2)
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (mk, ck) in m.iter_mut().zip(&c.mean) {
                *mk += c.weight * ck;
            }
        }
        m
    }

    /// `sum_c w_c (sigma_c^2 I + mu_c mu_c^T) - m m^T`, row-major.
    pub fn mixture_covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let m = self.mixture_mean();
        let mut cov = vec![vec![0.0; d]; d];
        for c in &self.components {
            for i in 0..d {
                for j in 0..d {
                    let iso = if i == j { c.sigma * c.sigma } else { 0.0 };
                    cov[i][j] += c.weight * (iso + c.mean[i] * c.mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= m[i] * m[j];
            }
        }
        cov
    }

    /// One exact draw from the target mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let c = &self.components[chosen];
        c.mean
            .iter()
            .map(|m| m + c.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn path_variance(sigma: f64, t: f64) -> f64 {
    let a = 1.0 - t;
    a * a + t * t * sigma * sigma
}

impl FlowField for GmmField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        let resp = self.responsibilities(x, t);
        let mut v = vec![0.0; self.dim];
        for (c, r) in self.components.iter().zip(resp) {
            let s2 = path_variance(c.sigma, t);
            // s'/s = (t sigma^2 - (1 - t)) / s^2
            let rate = (t * c.sigma * c.sigma - (1.0 - t)) / s2;
            for ((vk, xk), mk) in v.iter_mut().zip(x).zip(&c.mean) {
                *vk += r * (rate * (xk - t * mk) + mk);
            }
        }
        v
    }
}
