//! Three-stage velocity caching.
//!
//! An `N`-step run is split into
//!
//! 1. an initial phase `t < t_s`, where every velocity is computed;
//! 2. a stable phase `t_s <= t < N - m`, where the velocity is recomputed
//!    only when `(t - t_s) % alpha == 0` and the cached one is reused
//!    otherwise;
//! 3. an adjustment phase `t >= N - m`, computed every step.
//!
//! The onset `t_s` is detected online: after each consecutive pair of
//! computed velocities in the initial phase the ratio
//! `|v_t - v_{t-1}| / |v_1 - v_0|` is compared against `threshold`, and the
//! first step `t >= min_onset` where it drops below starts the stable phase.
//! The step that triggers detection is the first stable-phase anchor. A
//! zero first delta (e.g. a constant field) puts the onset at `min_onset`.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowsim::{
    self, check_dim, euler_step, integrate_full, FlowError, FlowField, SamplerConfig, Trajectory,
};
use crate::metrics::{self, Deviation, SampleCloud};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("empty smoothness series")]
    EmptySeries,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T> = std::result::Result<T, CacheError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    /// Relative smoothness threshold, in (0, 1).
    pub threshold: f64,
    /// Recompute interval during the stable phase.
    pub interval: usize,
    /// Number of trailing steps that are always computed.
    pub adjust: usize,
    pub min_onset: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            threshold: 0.4,
            interval: 8,
            adjust: 3,
            min_onset: 2,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CacheError::InvalidArg(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.interval == 0 {
            return Err(CacheError::InvalidArg("interval must be >= 1".into()));
        }
        if self.min_onset < 2 {
            return Err(CacheError::InvalidArg("min_onset must be >= 2".into()));
        }
        Ok(())
    }

    fn validate_for(&self, n_steps: usize) -> Result<()> {
        self.validate()?;
        if n_steps < 2 {
            return Err(CacheError::InvalidArg(format!("N must be >= 2, got {n_steps}")));
        }
        if self.adjust > n_steps {
            return Err(CacheError::InvalidArg(format!(
                "adjust ({}) exceeds N ({n_steps})",
                self.adjust
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_steps: usize,
    /// `true` = compute a fresh velocity.
    pub mask: Vec<bool>,
    pub onset: Option<usize>,
    pub computed_count: usize,
    pub reuse_fraction: f64,
}

impl Schedule {
    pub fn full(n_steps: usize) -> Self {
        Schedule {
            n_steps,
            mask: vec![true; n_steps],
            onset: None,
            computed_count: n_steps,
            reuse_fraction: 0.0,
        }
    }
}

/// Closed-form number of computed steps for a run of `n_steps`.
pub fn computed_count(n_steps: usize, onset: Option<usize>, cfg: &CacheConfig) -> usize {
    let stable_end = n_steps - cfg.adjust.min(n_steps);
    match onset {
        Some(ts) if ts < stable_end => ts + (stable_end - ts).div_ceil(cfg.interval) + cfg.adjust,
        _ => n_steps,
    }
}

fn stable_reuses(t: usize, n_steps: usize, onset: Option<usize>, cfg: &CacheConfig) -> bool {
    let stable_end = n_steps - cfg.adjust.min(n_steps);
    match onset {
        Some(ts) => t >= ts && t < stable_end && !(t - ts).is_multiple_of(cfg.interval),
        None => false,
    }
}

pub fn plan_schedule(n_steps: usize, onset: Option<usize>, cfg: &CacheConfig) -> Result<Schedule> {
    cfg.validate_for(n_steps)?;
    if let Some(ts) = onset {
        if ts < cfg.min_onset {
            return Err(CacheError::InvalidArg(format!(
                "onset {ts} precedes min_onset {}",
                cfg.min_onset
            )));
        }
    }
    let mut mask = vec![true; n_steps];
    let stable_end = n_steps - cfg.adjust;
    if let Some(ts) = onset.filter(|&ts| ts < stable_end) {
        for block in mask[ts..stable_end].chunks_mut(cfg.interval) {
            block[1..].fill(false);
        }
    }
    let count = computed_count(n_steps, onset, cfg);
    debug_assert_eq!(count, mask.iter().filter(|&&c| c).count());
    Ok(Schedule {
        n_steps,
        mask,
        onset,
        computed_count: count,
        reuse_fraction: 1.0 - count as f64 / n_steps as f64,
    })
}

/// Onset of the stable phase from the consecutive-delta series
/// `deltas[t] = |v_{t+1} - v_t|`: the smallest `t >= min_onset` with
/// `deltas[t - 1] / deltas[0] < threshold`.
pub fn detect_onset(deltas: &[f64], cfg: &CacheConfig) -> Result<Option<usize>> {
    let first = *deltas.first().ok_or(CacheError::EmptySeries)?;
    if first == 0.0 {
        return Ok(Some(cfg.min_onset));
    }
    Ok((cfg.min_onset..=deltas.len()).find(|&t| deltas[t - 1] / first < cfg.threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEntry {
    /// Step of the earlier computed velocity.
    pub from: usize,
    /// Step of the later computed velocity.
    pub to: usize,
    pub delta: f64,
}

/// Distances between successive *computed* velocities. In the initial phase
/// `to == from + 1`; across stable-phase recomputations the gap is the
/// recompute interval (or shorter at the adjustment boundary).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSeries {
    pub entries: Vec<SmoothnessEntry>,
}

impl SmoothnessSeries {
    /// Leading run of consecutive-step deltas, the input [`detect_onset`]
    /// expects.
    pub fn consecutive_prefix(&self) -> Vec<f64> {
        self.entries
            .iter()
            .enumerate()
            .take_while(|(i, e)| e.from == *i && e.to == i + 1)
            .map(|(_, e)| e.delta)
            .collect()
    }

    /// Consecutive deltas of a fully computed trajectory.
    pub fn from_trajectory(tr: &Trajectory) -> Self {
        let entries = tr
            .velocities
            .windows(2)
            .enumerate()
            .map(|(t, w)| SmoothnessEntry {
                from: t,
                to: t + 1,
                delta: metrics::euclidean(&w[1], &w[0]),
            })
            .collect();
        SmoothnessSeries { entries }
    }

    /// CSV `step,delta`, where `step` is the earlier computed step.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "step,delta")?;
        for e in &self.entries {
            writeln!(w, "{},{}", e.from, e.delta)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedRun {
    pub trajectory: Trajectory,
    pub schedule: Schedule,
    pub series: SmoothnessSeries,
}

/// Euler integration with online three-stage caching. Reuse steps advance
/// the state with the last computed velocity unchanged.
pub fn integrate_cached(
    field: &dyn FlowField,
    x0: &[f64],
    scfg: &SamplerConfig,
    ccfg: &CacheConfig,
) -> Result<CachedRun> {
    scfg.validate()?;
    ccfg.validate_for(scfg.n_steps)?;
    check_dim(field, x0)?;
    let n = scfg.n_steps;
    let dt = scfg.dt();
    let stable_end = n - ccfg.adjust;

    let mut states = Vec::with_capacity(n + 1);
    let mut velocities: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut series = SmoothnessSeries::default();
    let mut onset: Option<usize> = None;
    let mut first_delta: Option<f64> = None;
    // (step, velocity) of the most recent computation
    let mut cache: Option<(usize, Vec<f64>)> = None;
    states.push(x0.to_vec());

    for t in 0..n {
        let compute = !stable_reuses(t, n, onset, ccfg);
        let v = if compute {
            let v = field.velocity(&states[t], scfg.time(t));
            if let Some((prev_t, prev_v)) = &cache {
                let delta = metrics::euclidean(&v, prev_v);
                series.entries.push(SmoothnessEntry {
                    from: *prev_t,
                    to: t,
                    delta,
                });
                if onset.is_none() && t < stable_end {
                    debug_assert_eq!(*prev_t + 1, t);
                    match first_delta {
                        None => {
                            first_delta = Some(delta);
                            if delta == 0.0 {
                                onset = Some(ccfg.min_onset);
                            }
                        }
                        Some(first) => {
                            if t >= ccfg.min_onset && delta / first < ccfg.threshold {
                                onset = Some(t);
                            }
                        }
                    }
                }
            }
            cache = Some((t, v.clone()));
            v
        } else {
            cache.as_ref().expect("step 0 is always computed").1.clone()
        };
        let next = euler_step(&states[t], &v, dt);
        if next.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFiniteState(t + 1).into());
        }
        mask.push(compute);
        velocities.push(v);
        states.push(next);
    }

    let onset = onset.filter(|&ts| ts < stable_end);
    let schedule = plan_schedule(n, onset, ccfg)?;
    debug_assert_eq!(schedule.mask, mask);
    Ok(CachedRun {
        trajectory: Trajectory {
            states,
            velocities,
            computed_mask: mask,
        },
        schedule,
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        Summary {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub full_secs: f64,
    pub cached_secs: f64,
    /// `full_secs / cached_secs`
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetCount {
    pub onset: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    /// Consecutive deltas of sample 0 under full computation.
    pub full_deltas: Vec<f64>,
    /// Smoothness series of sample 0 under caching.
    pub cached_series: SmoothnessSeries,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub sampler: SamplerConfig,
    pub cache: CacheConfig,
    pub dim: usize,
    pub evaluations_full: u64,
    pub evaluations_cached: u64,
    /// `1 - evaluations_cached / evaluations_full`
    pub evaluation_reduction: f64,
    pub reuse_fraction: Summary,
    pub onsets: Vec<OnsetCount>,
    pub endpoint_deviation: Deviation,
    pub full_endpoint_rms: f64,
    pub energy_distance: f64,
    pub representative: Representative,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    /// Per-sample `|x_N^cached - x_N^full|`.
    #[serde(skip)]
    pub deviations: Vec<f64>,
}

/// Runs every sample through both integrators with identical starting
/// points (`SamplerConfig::initial_state`) and compares the results.
/// Wall-clock is measured for the two batches separately.
pub fn bench_cache(
    field: &dyn FlowField,
    scfg: &SamplerConfig,
    ccfg: &CacheConfig,
) -> Result<BenchReport> {
    scfg.validate()?;
    ccfg.validate_for(scfg.n_steps)?;
    if scfg.n_samples == 0 {
        return Err(CacheError::InvalidArg("n_samples must be >= 1".into()));
    }
    let dim = field.dim();
    let x0s: Vec<Vec<f64>> = (0..scfg.n_samples)
        .map(|i| scfg.initial_state(i, dim))
        .collect();

    let start = Instant::now();
    let full: Vec<Trajectory> = x0s
        .par_iter()
        .map(|x0| integrate_full(field, x0, scfg))
        .collect::<flowsim::Result<_>>()?;
    let full_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let cached: Vec<CachedRun> = x0s
        .par_iter()
        .map(|x0| integrate_cached(field, x0, scfg, ccfg))
        .collect::<Result<_>>()?;
    let cached_secs = start.elapsed().as_secs_f64();

    let full_cloud = SampleCloud::new(full.iter().map(|t| t.endpoint().to_vec()).collect())?;
    let cached_cloud =
        SampleCloud::new(cached.iter().map(|r| r.trajectory.endpoint().to_vec()).collect())?;
    let deviations = metrics::paired_distances(&full_cloud, &cached_cloud)?;
    let endpoint_deviation = metrics::endpoint_deviation(&full_cloud, &cached_cloud)?;
    let energy_distance = metrics::energy_distance(&cached_cloud, &full_cloud)?;

    let evaluations_full: u64 = full.iter().map(|t| t.evaluations() as u64).sum();
    let evaluations_cached: u64 = cached.iter().map(|r| r.schedule.computed_count as u64).sum();
    let reuse: Vec<f64> = cached.iter().map(|r| r.schedule.reuse_fraction).collect();
    let mut onset_hist: BTreeMap<Option<usize>, usize> = BTreeMap::new();
    for r in &cached {
        *onset_hist.entry(r.schedule.onset).or_default() += 1;
    }

    Ok(BenchReport {
        sampler: *scfg,
        cache: *ccfg,
        dim,
        evaluations_full,
        evaluations_cached,
        evaluation_reduction: 1.0 - evaluations_cached as f64 / evaluations_full as f64,
        reuse_fraction: Summary::of(&reuse),
        onsets: onset_hist
            .into_iter()
            .map(|(onset, count)| OnsetCount { onset, count })
            .collect(),
        endpoint_deviation,
        full_endpoint_rms: full_cloud.rms_norm(),
        energy_distance,
        representative: Representative {
            full_deltas: SmoothnessSeries::from_trajectory(&full[0]).consecutive_prefix(),
            cached_series: cached[0].series.clone(),
            schedule: cached[0].schedule.clone(),
        },
        timing: Some(Timing {
            full_secs,
            cached_secs,
            speedup: full_secs / cached_secs,
        }),
        deviations,
    })
}
