//! Per-trajectory difficulty: the mean policy loss over a seeded subset of
//! steps.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Dataset, TrajectoryRecord};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum DifficultyError {
    #[error("record {0:?} has neither losses nor a difficulty")]
    MissingLosses(String),
    #[error("sample_fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyConfig {
    pub sample_fraction: f64,
    pub seed: u64,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        DifficultyConfig {
            sample_fraction: 0.25,
            seed: 0,
        }
    }
}

impl DifficultyConfig {
    pub fn validate(&self) -> Result<(), DifficultyError> {
        if self.sample_fraction > 0.0 && self.sample_fraction <= 1.0 {
            Ok(())
        } else {
            Err(DifficultyError::InvalidFraction(self.sample_fraction))
        }
    }

    /// Config used for record `index` by [`difficulties`].
    pub fn for_record(&self, index: usize) -> DifficultyConfig {
        DifficultyConfig {
            sample_fraction: self.sample_fraction,
            seed: rng::sub_seed(self.seed, index as u64),
        }
    }
}

/// Number of steps averaged for a list of `len` losses.
pub fn sample_size(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64).floor() as usize).clamp(1, len)
}

/// Mean of a seeded uniform sample (without replacement) of the record's
/// step losses. The sample is the first `sample_size` slots of a partial
/// Fisher-Yates shuffle driven by `rng::seeded(cfg.seed)`. Values are summed
/// in ascending order, so the full-fraction result is independent of loss
/// order.
pub fn estimate_difficulty(
    record: &TrajectoryRecord,
    cfg: &DifficultyConfig,
) -> Result<f64, DifficultyError> {
    cfg.validate()?;
    let losses = match &record.step_losses {
        Some(l) if !l.is_empty() => l,
        _ => return Err(DifficultyError::MissingLosses(record.id.clone())),
    };
    let len = losses.len();
    let count = sample_size(len, cfg.sample_fraction);
    let mut picked: Vec<f64> = if count == len {
        losses.clone()
    } else {
        let mut idx: Vec<usize> = (0..len).collect();
        let mut r = rng::seeded(cfg.seed);
        for i in 0..count {
            let j = r.gen_range(i..len);
            idx.swap(i, j);
        }
        idx[..count].iter().map(|&i| losses[i]).collect()
    };
    picked.sort_by(f64::total_cmp);
    Ok(picked.iter().sum::<f64>() / count as f64)
}

/// Difficulty for every record, aligned with dataset order. A precomputed
/// `difficulty` field wins over losses. Record `i` samples with
/// `cfg.for_record(i)`, so the result does not depend on scheduling.
pub fn difficulties(dataset: &Dataset, cfg: &DifficultyConfig) -> Result<Vec<f64>, DifficultyError> {
    cfg.validate()?;
    let results: Vec<Result<f64, DifficultyError>> = dataset
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, r)| match r.difficulty {
            Some(d) => Ok(d),
            None => estimate_difficulty(r, &cfg.for_record(i)),
        })
        .collect();
    results.into_iter().collect()
}
