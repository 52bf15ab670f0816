//! Monte Carlo simulation of a computing scheme under the shifted-exponential
//! latency model, with straggler injection and paired random streams.
//!
//! Every random draw is keyed by `(seed, trial, worker)`, so two schemes run
//! on the same scenario see the same worker speeds in every trial.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, bpcc_allocate, Allocation, Scheme};
use crate::coding::{lt_threshold, Codec, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::model::{cumulative_rows, SamplingMode, WorkerProfile};

pub const DEFAULT_CURVE_POINTS: usize = 1000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StragglerPolicy {
    #[default]
    None,
    /// `ceil(fraction * N)` workers per trial have every arrival time
    /// multiplied by `delay`.
    Finite { fraction: f64, delay: f64 },
    /// `ceil(fraction * N)` workers per trial never return anything.
    Infinite { fraction: f64 },
}

impl StragglerPolicy {
    pub fn fraction(&self) -> f64 {
        match *self {
            StragglerPolicy::None => 0.0,
            StragglerPolicy::Finite { fraction, .. } | StragglerPolicy::Infinite { fraction } => fraction,
        }
    }

    /// Number of stragglers among `workers`.
    pub fn count(&self, workers: usize) -> usize {
        let f = self.fraction();
        if f <= 0.0 {
            return 0;
        }
        ((f * workers as f64 - 1e-9).ceil().max(0.0) as usize).min(workers)
    }

    fn validate(&self) -> Result<()> {
        let f = self.fraction();
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("straggler fraction must be in [0, 1], got {f}")));
        }
        if let StragglerPolicy::Finite { delay, .. } = *self {
            if !(delay >= 1.0 && delay.is_finite()) {
                return Err(Error::InvalidParameter(format!("delay factor must be >= 1, got {delay}")));
            }
        }
        Ok(())
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_codec() -> Codec {
    Codec::Dense
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub r: u64,
    pub profiles: Vec<WorkerProfile>,
    pub scheme: Scheme,
    #[serde(default)]
    pub stragglers: StragglerPolicy,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SamplingMode,
    /// Code used by coded schemes; LT raises the recovery threshold.
    #[serde(default = "default_codec")]
    pub codec: Codec,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Scenario {
    pub fn new(r: u64, profiles: Vec<WorkerProfile>, scheme: Scheme) -> Self {
        Self {
            r,
            profiles,
            scheme,
            stragglers: StragglerPolicy::None,
            trials: 100,
            seed: 0,
            mode: SamplingMode::Coupled,
            codec: Codec::Dense,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if self.r == 0 {
            return Err(Error::InvalidParameter("r must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        self.profiles.iter().try_for_each(WorkerProfile::validate)?;
        self.stragglers.validate()
    }

    /// Rows the master must collect under `scheme`: every row for uncoded
    /// schemes, otherwise the codec's recovery threshold.
    pub fn threshold(&self, scheme: Scheme) -> u64 {
        match (scheme.is_coded(), self.codec) {
            (false, _) | (true, Codec::Dense) => self.r,
            (true, Codec::Lt) => lt_threshold(self.r as usize, self.epsilon) as u64,
        }
    }

    /// Allocation for `scheme`; coded schemes are sized for the recovery
    /// threshold rather than `r`.
    pub fn allocate(&self, scheme: Scheme) -> Result<Allocation> {
        allocate(scheme, self.threshold(scheme), &self.profiles)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Seconds until recovery, infinite when the trial fails.
    pub completion_time: f64,
    pub success: bool,
    /// `(time, cumulative rows received)` after every batch arrival.
    pub trace: Vec<(f64, u64)>,
    pub straggler_ids: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// Spread trials over the rayon pool (sequential without the `parallel`
    /// feature).
    #[default]
    Parallel,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarloOptions {
    /// Points on the mean-rows curve; 0 skips the curve.
    pub curve_points: usize,
    pub execution: Execution,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self { curve_points: DEFAULT_CURVE_POINTS, execution: Execution::Parallel }
    }
}

impl MonteCarloOptions {
    pub fn without_curve() -> Self {
        Self { curve_points: 0, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowsCurve {
    pub times: Vec<f64>,
    pub mean_rows: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scheme: Scheme,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over successful trials; `None` when every trial failed.
    pub mean_time: Option<f64>,
    /// Per-trial completion times in trial order (infinite for failures).
    pub completion_times: Vec<f64>,
    pub curve: Option<RowsCurve>,
}

/// Per-worker state shared by all trials of one allocation.
struct WorkerPlan {
    profile: WorkerProfile,
    cumulative: Vec<u64>,
}

impl WorkerPlan {
    fn load(&self) -> u64 {
        *self.cumulative.last().expect("at least one batch")
    }
}

/// Per-trial draws: per-row time scale of each worker (infinite for workers
/// that never respond) and the chosen stragglers.
struct TrialDraw {
    scales: Vec<f64>,
    stragglers: Vec<usize>,
    /// Independent mode only: per-batch arrival times.
    arrivals: Option<Vec<Vec<f64>>>,
}

const LANE_STRAGGLERS: u64 = u64::MAX;
const LANE_PERTURB: u64 = u64::MAX - 1;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream for `(seed, trial, lane)`.
pub fn stream(seed: u64, trial: u64, lane: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ trial) ^ lane))
}

/// A scenario bound to one allocation, ready to run trials.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    scheme: Scheme,
    threshold: u64,
    workers: Vec<WorkerPlan>,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, alloc: &Allocation) -> Result<Self> {
        scenario.validate()?;
        if alloc.worker_count() != scenario.profiles.len() {
            return Err(Error::InvalidAllocation(format!(
                "allocation has {} workers, roster has {}",
                alloc.worker_count(),
                scenario.profiles.len()
            )));
        }
        let workers = scenario
            .profiles
            .iter()
            .zip(alloc.loads.iter().zip(&alloc.batches))
            .map(|(profile, (&load, &p))| {
                Ok(WorkerPlan { profile: *profile, cumulative: cumulative_rows(load, p)? })
            })
            .collect::<Result<_>>()?;
        Ok(Self { scenario, scheme: alloc.scheme, threshold: scenario.threshold(alloc.scheme), workers })
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    fn draw(&self, trial: u64) -> TrialDraw {
        let s = self.scenario;
        let n = self.workers.len();
        let count = s.stragglers.count(n);
        let mut stragglers = if count > 0 {
            index::sample(&mut stream(s.seed, trial, LANE_STRAGGLERS), n, count).into_vec()
        } else {
            Vec::new()
        };
        stragglers.sort_unstable();
        let delay = |i: usize| -> f64 {
            if stragglers.binary_search(&i).is_err() {
                return 1.0;
            }
            match s.stragglers {
                StragglerPolicy::Finite { delay, .. } => delay,
                StragglerPolicy::Infinite { .. } => f64::INFINITY,
                StragglerPolicy::None => 1.0,
            }
        };
        let mut arrivals = None;
        let scales: Vec<f64> = match s.mode {
            SamplingMode::Coupled => self
                .workers
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let x: f64 = stream(s.seed, trial, i as u64).sample(Exp1);
                    (w.profile.alpha + x / w.profile.mu) * delay(i)
                })
                .collect(),
            SamplingMode::Deterministic => {
                self.workers.iter().enumerate().map(|(i, w)| w.profile.alpha * delay(i)).collect()
            }
            SamplingMode::Independent => {
                let times = self
                    .workers
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let mut rng = stream(s.seed, trial, i as u64);
                        let d = delay(i);
                        w.cumulative
                            .iter()
                            .map(|&c| {
                                let x: f64 = rng.sample(Exp1);
                                c as f64 * (w.profile.alpha + x / w.profile.mu) * d
                            })
                            .collect()
                    })
                    .collect();
                arrivals = Some(times);
                (0..n).map(delay).collect()
            }
        };
        TrialDraw { scales, stragglers, arrivals }
    }

    /// All batch arrivals `(time, rows)` of responding workers, time-sorted.
    /// Calls `f(time, rows)` for every finite arrival, in no particular order.
    fn for_each_arrival(&self, draw: &TrialDraw, mut f: impl FnMut(f64, u64)) {
        for (i, w) in self.workers.iter().enumerate() {
            if !draw.scales[i].is_finite() {
                continue;
            }
            let mut prev = 0;
            for (k, &c) in w.cumulative.iter().enumerate() {
                let t = match &draw.arrivals {
                    Some(a) => a[i][k],
                    None => c as f64 * draw.scales[i],
                };
                f(t, c - prev);
                prev = c;
            }
        }
    }

    fn events(&self, draw: &TrialDraw) -> Vec<(f64, u64)> {
        let mut events = Vec::new();
        self.for_each_arrival(draw, |t, rows| events.push((t, rows)));
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        events
    }

    fn completion_from_events(&self, events: &[(f64, u64)]) -> Option<f64> {
        if !self.scheme.is_coded() {
            let total: u64 = events.iter().map(|e| e.1).sum();
            let needed: u64 = self.workers.iter().map(WorkerPlan::load).sum();
            return (total == needed).then(|| events.last().map_or(0.0, |e| e.0));
        }
        let mut acc = 0;
        for &(t, rows) in events {
            acc += rows;
            if acc >= self.threshold {
                return Some(t);
            }
        }
        None
    }

    fn completion(&self, draw: &TrialDraw) -> Option<f64> {
        if draw.arrivals.is_some() {
            return self.completion_from_events(&self.events(draw));
        }
        if !self.scheme.is_coded() {
            if draw.scales.iter().any(|c| !c.is_finite()) {
                return None;
            }
            return Some(
                self.workers
                    .iter()
                    .zip(&draw.scales)
                    .map(|(w, &c)| w.load() as f64 * c)
                    .fold(0.0, f64::max),
            );
        }
        self.coded_crossing(&draw.scales)
            .unwrap_or_else(|| self.completion_from_events(&self.events(draw)))
    }

    /// First time the received rows reach the threshold, searching only the
    /// events near the fluid-limit crossing. `None` means "fall back to the
    /// full event scan"; `Some(None)` is a definite failure.
    fn coded_crossing(&self, scales: &[f64]) -> Option<Option<f64>> {
        let thr = self.threshold;
        let active: Vec<usize> = (0..self.workers.len()).filter(|&i| scales[i].is_finite()).collect();
        let available: u64 = active.iter().map(|&i| self.workers[i].load()).sum();
        if available < thr {
            return Some(None);
        }
        // fluid limit: sum_i min(l_i, t / c_i) reaches thr
        let mut ends: Vec<(f64, usize)> =
            active.iter().map(|&i| (self.workers[i].load() as f64 * scales[i], i)).collect();
        ends.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut rate: f64 = active.iter().map(|&i| 1.0 / scales[i]).sum();
        let mut saturated = 0.0;
        let target = thr as f64;
        let mut fluid = ends.last().map_or(0.0, |e| e.0);
        for &(end, i) in &ends {
            if saturated + end * rate >= target {
                fluid = (target - saturated) / rate;
                break;
            }
            saturated += self.workers[i].load() as f64;
            rate -= 1.0 / scales[i];
        }
        let max_batch = active
            .iter()
            .map(|&i| self.workers[i].cumulative[0] as f64 * scales[i])
            .fold(0.0, f64::max);
        let lo = fluid * (1.0 - 1e-9);
        let hi = fluid * (1.0 + 1e-9) + max_batch;

        let mut base = 0u64;
        let mut window = Vec::new();
        for &i in &active {
            let w = &self.workers[i];
            let c = scales[i];
            let first = w.cumulative.partition_point(|&x| (x as f64 * c) < lo);
            let last = w.cumulative.partition_point(|&x| (x as f64 * c) <= hi);
            let mut prev = if first > 0 { w.cumulative[first - 1] } else { 0 };
            base += prev;
            for &x in &w.cumulative[first..last] {
                window.push((x as f64 * c, x - prev));
                prev = x;
            }
        }
        if base >= thr {
            return None;
        }
        window.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, rows) in window {
            base += rows;
            if base >= thr {
                return Some(Some(t));
            }
        }
        None
    }

    pub fn run_trial(&self, trial: u64) -> TrialRecord {
        let draw = self.draw(trial);
        let events = self.events(&draw);
        let completion = self.completion_from_events(&events);
        let mut acc = 0;
        let trace = events
            .iter()
            .map(|&(t, rows)| {
                acc += rows;
                (t, acc)
            })
            .collect();
        TrialRecord {
            completion_time: completion.unwrap_or(f64::INFINITY),
            success: completion.is_some(),
            trace,
            straggler_ids: draw.stragglers,
        }
    }

    /// Completion time of one trial (infinite on failure), without building
    /// the trace.
    pub fn completion_time(&self, trial: u64) -> f64 {
        self.completion(&self.draw(trial)).unwrap_or(f64::INFINITY)
    }

    pub fn monte_carlo(&self, options: MonteCarloOptions) -> Summary {
        let trials = self.scenario.trials;
        let times = map_trials(trials, options.execution, |t| self.completion_time(t as u64));
        let finite: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
        let successes = finite.len();
        // centered on the first value so identical times average exactly
        let mean_time = finite
            .first()
            .map(|&t0| t0 + finite.iter().map(|&t| t - t0).sum::<f64>() / successes as f64);
        let curve = (options.curve_points > 1 && successes > 0)
            .then(|| self.rows_curve(&finite, options.curve_points, options.execution));
        Summary {
            scheme: self.scheme,
            trials,
            successes,
            success_rate: successes as f64 / trials as f64,
            mean_time,
            completion_times: times,
            curve,
        }
    }

    /// Mean rows received on a uniform grid from 0 to the slowest successful
    /// completion time. Counts are accumulated as integers so the result does
    /// not depend on how trials are scheduled.
    fn rows_curve(&self, finite_times: &[f64], points: usize, execution: Execution) -> RowsCurve {
        let horizon = finite_times.iter().copied().fold(0.0, f64::max);
        let step = horizon / (points - 1) as f64;
        let last = points - 1;
        let add = |mut acc: Vec<u64>, trial: usize| {
            self.for_each_arrival(&self.draw(trial as u64), |t, rows| {
                if t <= horizon {
                    let g = if step > 0.0 { ((t / step).ceil() as usize).min(last) } else { 0 };
                    acc[g] += rows;
                }
            });
            acc
        };
        let diff = fold_trials(self.scenario.trials, execution, points, add);
        let mut acc = 0u64;
        let trials = self.scenario.trials as f64;
        let mean_rows = diff
            .iter()
            .map(|&d| {
                acc += d;
                acc as f64 / trials
            })
            .collect();
        let times = (0..points).map(|g| if g == last { horizon } else { g as f64 * step }).collect();
        RowsCurve { times, mean_rows }
    }
}

fn map_trials<T: Send>(n: usize, execution: Execution, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

fn fold_trials(
    n: usize,
    execution: Execution,
    len: usize,
    add: impl Fn(Vec<u64>, usize) -> Vec<u64> + Sync + Send,
) -> Vec<u64> {
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n)
            .into_par_iter()
            .fold(|| vec![0u64; len], &add)
            .reduce(
                || vec![0u64; len],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            ),
        _ => (0..n).fold(vec![0u64; len], add),
    }
}

/// Runs one trial of `scenario` under `alloc`.
pub fn run_trial(scenario: &Scenario, alloc: &Allocation, trial: u64) -> Result<TrialRecord> {
    Ok(Simulation::new(scenario, alloc)?.run_trial(trial))
}

pub fn monte_carlo(scenario: &Scenario, alloc: &Allocation) -> Result<Summary> {
    monte_carlo_with(scenario, alloc, MonteCarloOptions::default())
}

pub fn monte_carlo_with(scenario: &Scenario, alloc: &Allocation, options: MonteCarloOptions) -> Result<Summary> {
    Ok(Simulation::new(scenario, alloc)?.monte_carlo(options))
}

/// Runs every scheme on the same trial streams.
pub fn compare_schemes(scenario: &Scenario, options: MonteCarloOptions) -> Result<Vec<Summary>> {
    Scheme::ALL
        .iter()
        .map(|&scheme| monte_carlo_with(scenario, &scenario.allocate(scheme)?, options))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: u32,
    pub tau_star: f64,
    pub mean_time: Option<f64>,
    pub total_load: u64,
}

/// BPCC with every worker at `p` batches, for each `p`.
pub fn sweep_p(scenario: &Scenario, p_values: &[u32], options: MonteCarloOptions) -> Result<Vec<SweepRow>> {
    if p_values.is_empty() {
        return Err(Error::InvalidParameter("no batch counts to sweep".into()));
    }
    let options = MonteCarloOptions { curve_points: 0, ..options };
    p_values
        .iter()
        .map(|&p| {
            let mut s = scenario.clone();
            s.scheme = Scheme::Bpcc;
            s.profiles = s.profiles.iter().map(|w| w.with_batches(p)).collect();
            let alloc = bpcc_allocate(s.threshold(Scheme::Bpcc), &s.profiles)?;
            let summary = monte_carlo_with(&s, &alloc, options)?;
            Ok(SweepRow {
                p,
                tau_star: alloc.tau_star.expect("coded allocation has tau*"),
                mean_time: summary.mean_time,
                total_load: alloc.total_load(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbed {
    Mu,
    Alpha,
}

impl std::str::FromStr for Perturbed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(Perturbed::Mu),
            "alpha" => Ok(Perturbed::Alpha),
            _ => Err(Error::InvalidParameter(format!("expected mu or alpha, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for Perturbed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Perturbed::Mu => "mu",
            Perturbed::Alpha => "alpha",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub delta: f64,
    pub which: Perturbed,
    pub baseline_mean: f64,
    pub perturbed_mean: f64,
    pub relative_change: f64,
}

/// Draws each worker's `which` parameter uniformly from
/// `(v (1 - delta), v (1 + delta))`, the lower end clamped at 0.
pub fn perturb_profiles(profiles: &[WorkerProfile], delta: f64, which: Perturbed, seed: u64) -> Vec<WorkerProfile> {
    let mut rng = stream(seed, 0, LANE_PERTURB);
    profiles
        .iter()
        .map(|w| {
            let v = match which {
                Perturbed::Mu => w.mu,
                Perturbed::Alpha => w.alpha,
            };
            let lo = (v * (1.0 - delta)).max(0.0);
            let hi = v * (1.0 + delta);
            let u: f64 = rng.random();
            let draw = (lo + u * (hi - lo)).max(v * 1e-9);
            let mut out = *w;
            match which {
                Perturbed::Mu => out.mu = draw,
                Perturbed::Alpha => out.alpha = draw,
            }
            out
        })
        .collect()
}

/// Relative change of the mean completion time when the allocation is
/// computed from perturbed parameters but workers behave as the true roster.
pub fn sensitivity(
    scenario: &Scenario,
    delta: f64,
    which: Perturbed,
    options: MonteCarloOptions,
) -> Result<SensitivityResult> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    let options = MonteCarloOptions { curve_points: 0, ..options };
    let target = scenario.threshold(scenario.scheme);
    let baseline = monte_carlo_with(scenario, &scenario.allocate(scenario.scheme)?, options)?;
    let perturbed_profiles = perturb_profiles(&scenario.profiles, delta, which, scenario.seed);
    let alloc = allocate(scenario.scheme, target, &perturbed_profiles)?;
    let perturbed = monte_carlo_with(scenario, &alloc, options)?;
    let (Some(base), Some(pert)) = (baseline.mean_time, perturbed.mean_time) else {
        return Err(Error::InvalidParameter("no successful trials to compare".into()));
    };
    Ok(SensitivityResult {
        delta,
        which,
        baseline_mean: base,
        perturbed_mean: pert,
        relative_change: (pert - base) / base,
    })
}
