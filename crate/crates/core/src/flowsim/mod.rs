//! Velocity fields and the explicit-Euler flow sampler.
//!
//! Conventions: the source is `N(0, I)` at `t = 0`, the target sits at
//! `t = 1`, and an `N`-step run evaluates the field at `t_i = i / N` and
//! advances `x_{i+1} = x_i + (1/N) * v_i`.

mod gmm;
mod mlp;

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gmm::{GmmComponent, GmmField};
pub use mlp::{train_mlp, two_moons, FlowBatch, MlpField, TrainConfig, TrainedMlp};

use crate::rng;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("t = {0} outside [0, 1]")]
    DomainError(f64),
    #[error("state became non-finite at step {0}")]
    NonFiniteState(usize),
    #[error("dimension mismatch: field has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("training diverged at epoch {0}")]
    DivergedTraining(usize),
    #[error("bad field description: {0}")]
    BadField(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

/// A time-dependent velocity field `v(x, t)` on `R^d`.
pub trait FlowField: Send + Sync {
    fn dim(&self) -> usize;

    /// Caller guarantees `x.len() == self.dim()` and `t` in `[0, 1]`.
    fn velocity(&self, x: &[f64], t: f64) -> Vec<f64>;
}

/// Zero field. Mostly useful in tests.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField(pub usize);

impl FlowField for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }

    fn velocity(&self, _x: &[f64], _t: f64) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

/// Spatially and temporally constant field.
#[derive(Debug, Clone)]
pub struct ConstantField(pub Vec<f64>);

impl FlowField for ConstantField {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn velocity(&self, _x: &[f64], _t: f64) -> Vec<f64> {
        self.0.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_steps: 35,
            n_samples: 1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(FlowError::InvalidArg(format!(
                "n_steps must be >= 2, got {}",
                self.n_steps
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 / self.n_steps as f64
    }

    /// Starting point of sample `i`: `N(0, I)` drawn from the sample's own
    /// sub-seeded stream.
    pub fn initial_state(&self, sample: usize, dim: usize) -> Vec<f64> {
        let mut r = rng::seeded(rng::sub_seed(self.seed, sample as u64));
        (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `N + 1` states.
    pub states: Vec<Vec<f64>>,
    /// `N` velocities actually used, fresh or cached.
    pub velocities: Vec<Vec<f64>>,
    pub computed_mask: Vec<bool>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn evaluations(&self) -> usize {
        self.computed_mask.iter().filter(|&&c| c).count()
    }

    /// CSV with columns `step,x0..x{d-1},v0..v{d-1},computed`. The final
    /// state row leaves the velocity and flag columns empty.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let d = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|k| format!("x{k}")));
        header.extend((0..d).map(|k| format!("v{k}")));
        header.push("computed".into());
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            match self.velocities.get(t) {
                Some(v) => {
                    row.extend(v.iter().map(f64::to_string));
                    row.push(u8::from(self.computed_mask[t]).to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), d + 1)),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `x + dt * v`, componentwise.
pub(crate) fn euler_step(x: &[f64], v: &[f64], dt: f64) -> Vec<f64> {
    x.iter().zip(v).map(|(xi, vi)| xi + dt * vi).collect()
}

pub(crate) fn check_dim(field: &dyn FlowField, x0: &[f64]) -> Result<()> {
    if x0.len() != field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    Ok(())
}

/// Fixed-step explicit Euler with a fresh velocity at every step.
pub fn integrate_full(field: &dyn FlowField, x0: &[f64], cfg: &SamplerConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_dim(field, x0)?;
    let n = cfg.n_steps;
    let dt = cfg.dt();
    let mut states = Vec::with_capacity(n + 1);
    let mut velocities = Vec::with_capacity(n);
    states.push(x0.to_vec());
    for t in 0..n {
        let v = field.velocity(&states[t], cfg.time(t));
        let next = euler_step(&states[t], &v, dt);
        if next.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFiniteState(t + 1));
        }
        velocities.push(v);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        velocities,
        computed_mask: vec![true; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_keeps_state() {
        let cfg = SamplerConfig::default();
        let tr = integrate_full(&ZeroField(3), &[1.0, -2.0, 0.5], &cfg).unwrap();
        assert!(tr.states.iter().all(|s| s == &[1.0, -2.0, 0.5]));
        assert_eq!(tr.evaluations(), 35);
    }

    #[test]
    fn constant_field_telescopes() {
        for n in [2, 7, 35, 128] {
            let cfg = SamplerConfig {
                n_steps: n,
                ..SamplerConfig::default()
            };
            let tr = integrate_full(&ConstantField(vec![0.5, -1.25]), &[1.0, 1.0], &cfg).unwrap();
            let end = tr.endpoint();
            assert!((end[0] - 1.5).abs() < 1e-12);
            assert!((end[1] + 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrence_holds_bitwise() {
        let field = GmmField::bundled();
        let cfg = SamplerConfig::default();
        let tr = integrate_full(&field, &[0.3, -0.7], &cfg).unwrap();
        assert_eq!(tr.states.len(), 36);
        assert_eq!(tr.velocities.len(), 35);
        for t in 0..35 {
            assert_eq!(tr.states[t + 1], euler_step(&tr.states[t], &tr.velocities[t], cfg.dt()));
        }
    }

    #[test]
    fn rejects_short_runs_and_wrong_dim() {
        let cfg = SamplerConfig {
            n_steps: 1,
            ..SamplerConfig::default()
        };
        assert!(integrate_full(&ZeroField(1), &[0.0], &cfg).is_err());
        assert!(matches!(
            integrate_full(&ZeroField(2), &[0.0], &SamplerConfig::default()),
            Err(FlowError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nonfinite_state_detected() {
        let cfg = SamplerConfig::default();
        let err = integrate_full(&ConstantField(vec![f64::MAX]), &[f64::MAX], &cfg).unwrap_err();
        assert!(matches!(err, FlowError::NonFiniteState(1)));
    }

    #[test]
    fn permutation_equivariance_for_isotropic_field() {
        let field = GmmField::new(vec![GmmComponent {
            weight: 1.0,
            mean: vec![0.0; 3],
            sigma: 0.4,
        }])
        .unwrap();
        let cfg = SamplerConfig::default();
        let x = [0.3, -1.1, 2.0];
        let px = [2.0, 0.3, -1.1];
        let a = integrate_full(&field, &x, &cfg).unwrap();
        let b = integrate_full(&field, &px, &cfg).unwrap();
        let ea = a.endpoint();
        let eb = b.endpoint();
        assert_eq!([ea[2], ea[0], ea[1]], [eb[0], eb[1], eb[2]]);
    }

    #[test]
    fn csv_shape() {
        let cfg = SamplerConfig {
            n_steps: 2,
            ..SamplerConfig::default()
        };
        let tr = integrate_full(&ConstantField(vec![1.0]), &[0.0], &cfg).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "step,x0,v0,computed\n0,0,1,1\n1,0.5,1,1\n2,1,,\n");
    }
}
