//! Shifted-exponential batch latency model.
//!
//! The time for the master to receive the first `k` batches of size `b` from a
//! worker with straggling rate `mu` and shift `alpha` is distributed as
//!
//! ```text
//! Pr[T <= t] = 1 - exp(-mu * (t / (k b) - alpha))   for t >= k b alpha
//!            = 0                                    otherwise
//! ```
//!
//! The module also samples batch arrival times and estimates `(mu, alpha)`
//! from repeated timing measurements.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latency parameters of one worker plus its batch count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    /// Straggling parameter (rate of the exponential tail).
    pub mu: f64,
    /// Shift parameter, seconds per row.
    pub alpha: f64,
    /// Number of batches the worker returns.
    pub p: u32,
}

impl WorkerProfile {
    pub fn new(mu: f64, alpha: f64, p: u32) -> Result<Self> {
        let profile = Self { mu, alpha, p };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_batches(self, p: u32) -> Self {
        Self { p, ..self }
    }

    /// Mean seconds per row, `alpha + 1/mu`.
    pub fn mean_row_time(&self) -> f64 {
        self.alpha + 1.0 / self.mu
    }
}

/// CDF of the arrival time of the first `k` batches of `b` rows each.
pub fn batch_cdf(profile: &WorkerProfile, k: u32, b: f64, t: f64) -> f64 {
    let rows = f64::from(k) * b;
    let shift = rows * profile.alpha;
    if t <= shift {
        return 0.0;
    }
    -(-profile.mu * (t / rows - profile.alpha)).exp_m1()
}

pub fn expected_batch_time(profile: &WorkerProfile, k: u32, b: f64) -> f64 {
    f64::from(k) * b * profile.mean_row_time()
}

/// Row counts of each batch when `load` rows are split into `p` batches.
///
/// Every batch but the last holds `ceil(load / p)` rows. When `p` does not
/// divide `load` evenly enough, fewer than `p` batches may be needed.
pub fn batch_rows(load: u64, p: u32) -> Result<Vec<u64>> {
    if p == 0 || load < u64::from(p) {
        return Err(Error::InvalidAllocation(format!(
            "load {load} is smaller than the batch count {p}"
        )));
    }
    let b = load.div_ceil(u64::from(p));
    let count = load.div_ceil(b);
    let mut rows = vec![b; count as usize];
    if let Some(last) = rows.last_mut() {
        *last = load - (count - 1) * b;
    }
    Ok(rows)
}

/// Cumulative rows delivered after each batch.
pub fn cumulative_rows(load: u64, p: u32) -> Result<Vec<u64>> {
    let mut acc = 0;
    Ok(batch_rows(load, p)?
        .into_iter()
        .map(|b| {
            acc += b;
            acc
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// One exponential draw per worker per run; arrivals strictly increase.
    #[default]
    Coupled,
    /// A fresh draw per batch. Matches the marginals only; arrivals may be
    /// out of order.
    Independent,
    /// Every exponential draw is zero, leaving only the deterministic shift.
    Deterministic,
}

/// Arrival times `K_k (alpha + x / mu)` for a fixed exponential draw `x`.
pub fn coupled_arrivals(profile: &WorkerProfile, load: u64, draw: f64) -> Result<Vec<f64>> {
    let per_row = profile.alpha + draw / profile.mu;
    Ok(cumulative_rows(load, profile.p)?
        .into_iter()
        .map(|rows| rows as f64 * per_row)
        .collect())
}

/// Samples the arrival time of every batch of a worker holding `load` rows.
pub fn sample_completion_times<R: Rng + ?Sized>(
    profile: &WorkerProfile,
    load: u64,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match mode {
        SamplingMode::Coupled => {
            let draw: f64 = rng.sample(Exp1);
            coupled_arrivals(profile, load, draw)
        }
        SamplingMode::Deterministic => coupled_arrivals(profile, load, 0.0),
        SamplingMode::Independent => Ok(cumulative_rows(load, profile.p)?
            .into_iter()
            .map(|rows| {
                let draw: f64 = rng.sample(Exp1);
                rows as f64 * (profile.alpha + draw / profile.mu)
            })
            .collect()),
    }
}

/// Repeated execution times of a task of `task_size` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub task_size: u64,
    pub durations: Vec<f64>,
}

impl TimingSample {
    /// Groups `(task_size, duration)` rows by task size, preserving the
    /// order durations appear in.
    pub fn group(rows: impl IntoIterator<Item = (u64, f64)>) -> Vec<TimingSample> {
        let mut by_size: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (size, duration) in rows {
            by_size.entry(size).or_default().push(duration);
        }
        by_size
            .into_iter()
            .map(|(task_size, durations)| TimingSample { task_size, durations })
            .collect()
    }

    /// Maximum-likelihood estimates `(t0, tc)`: the minimum duration and the
    /// mean excess over it.
    pub fn shift_and_excess(&self) -> (f64, f64) {
        let t0 = self.durations.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = self.durations.iter().sum::<f64>() / self.durations.len() as f64;
        (t0, mean - t0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub task_size: u64,
    pub t0: f64,
    pub tc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRateFit {
    pub mu: f64,
    pub alpha: f64,
    pub estimates: Vec<SizeEstimate>,
    /// `t0 - alpha * r` per task size.
    pub shift_residuals: Vec<f64>,
    /// `tc - r / mu` per task size.
    pub excess_residuals: Vec<f64>,
}

/// Fits `t0(r) = alpha r` and `tc(r) = r / mu` through the origin.
pub fn fit_from_estimates(estimates: Vec<SizeEstimate>) -> Result<ShiftRateFit> {
    let mut sizes: Vec<u64> = estimates.iter().map(|e| e.task_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(Error::Estimation(format!(
            "need at least two distinct task sizes, got {}",
            sizes.len()
        )));
    }
    let sxx: f64 = estimates.iter().map(|e| (e.task_size as f64).powi(2)).sum();
    let shift_slope = estimates.iter().map(|e| e.task_size as f64 * e.t0).sum::<f64>() / sxx;
    let excess_slope = estimates.iter().map(|e| e.task_size as f64 * e.tc).sum::<f64>() / sxx;
    if !(shift_slope.is_finite() && shift_slope > 0.0) {
        return Err(Error::Estimation(format!("degenerate shift slope {shift_slope}")));
    }
    if !(excess_slope.is_finite() && excess_slope > 0.0) {
        return Err(Error::Estimation(format!("degenerate excess slope {excess_slope}")));
    }
    let alpha = shift_slope;
    let mu = 1.0 / excess_slope;
    let shift_residuals = estimates.iter().map(|e| e.t0 - alpha * e.task_size as f64).collect();
    let excess_residuals = estimates.iter().map(|e| e.tc - e.task_size as f64 / mu).collect();
    Ok(ShiftRateFit { mu, alpha, estimates, shift_residuals, excess_residuals })
}

pub fn fit_shift_and_rate(samples: &[TimingSample]) -> Result<ShiftRateFit> {
    let mut estimates = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.task_size == 0 {
            return Err(Error::Estimation("task size must be positive".into()));
        }
        if sample.durations.len() < 2 {
            return Err(Error::Estimation(format!(
                "task size {} has {} durations, need at least 2",
                sample.task_size,
                sample.durations.len()
            )));
        }
        if sample.durations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Estimation(format!(
                "task size {} has a negative or non-finite duration",
                sample.task_size
            )));
        }
        let (t0, tc) = sample.shift_and_excess();
        estimates.push(SizeEstimate { task_size: sample.task_size, t0, tc });
    }
    fit_from_estimates(estimates)
}

/// Draws `count` task durations for a task of `task_size` rows.
pub fn sample_task_durations<R: Rng + ?Sized>(
    mu: f64,
    alpha: f64,
    task_size: u64,
    count: usize,
    rng: &mut R,
) -> TimingSample {
    let r = task_size as f64;
    let durations = (0..count)
        .map(|_| {
            let draw: f64 = rng.sample(Exp1);
            r * (alpha + draw / mu)
        })
        .collect();
    TimingSample { task_size, durations }
}
