//! Load allocation for the four computing schemes, the expected-results curve
//! and the closed-form bounds on the approximated completion time `tau*`.
//!
//! For BPCC each worker gets `l_i = r / (beta lambda_i)` rows where `lambda_i`
//! solves the per-worker root equation (see [`numerics::solve_lambda`]) and
//!
//! ```text
//! beta = sum_i (1 / lambda_i) (1 - (1/p_i) sum_{k=1..p_i} exp(-mu_i (lambda_i p_i / k - alpha_i)))
//! tau* = r / beta
//! ```
//!
//! HCMM is the single-batch special case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{batch_cdf, batch_rows, WorkerProfile};
use crate::numerics::{self, exp_integral_01_scaled, sup_lambda, RootSolveConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Uniform,
    LoadBalanced,
    Hcmm,
    Bpcc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Uniform, Scheme::LoadBalanced, Scheme::Hcmm, Scheme::Bpcc];

    pub fn is_coded(self) -> bool {
        matches!(self, Scheme::Hcmm | Scheme::Bpcc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Uniform => "uniform",
            Scheme::LoadBalanced => "load_balanced",
            Scheme::Hcmm => "hcmm",
            Scheme::Bpcc => "bpcc",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Scheme::Uniform),
            "load_balanced" => Ok(Scheme::LoadBalanced),
            "hcmm" => Ok(Scheme::Hcmm),
            "bpcc" => Ok(Scheme::Bpcc),
            other => Err(Error::InvalidParameter(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub scheme: Scheme,
    /// Rows the result must be recovered from.
    pub target_rows: u64,
    /// Rows assigned to each worker.
    pub loads: Vec<u64>,
    /// Rows per batch, `ceil(load / p)`; the last batch may be shorter.
    pub batch_sizes: Vec<u64>,
    /// Batches actually used by each worker.
    pub batches: Vec<u32>,
    /// Unrounded loads `r / (beta lambda_i)`; empty for uncoded schemes.
    pub ideal_loads: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub beta: Option<f64>,
    pub tau_star: Option<f64>,
    /// Workers whose batch count was lowered to fit their load.
    pub reduced_batches: Vec<usize>,
}

impl Allocation {
    pub fn total_load(&self) -> u64 {
        self.loads.iter().sum()
    }

    pub fn worker_count(&self) -> usize {
        self.loads.len()
    }

    /// Row count of each batch of worker `i`.
    pub fn batch_rows(&self, i: usize) -> Vec<u64> {
        batch_rows(self.loads[i], self.batches[i]).expect("allocation keeps load >= batches")
    }

    fn uncoded(scheme: Scheme, r: u64, loads: Vec<u64>) -> Self {
        let n = loads.len();
        Self {
            scheme,
            target_rows: r,
            batch_sizes: loads.clone(),
            loads,
            batches: vec![1; n],
            ideal_loads: Vec::new(),
            lambdas: Vec::new(),
            beta: None,
            tau_star: None,
            reduced_batches: Vec::new(),
        }
    }
}

fn check_roster(r: u64, workers: usize) -> Result<()> {
    if workers == 0 {
        return Err(Error::InvalidParameter("roster is empty".into()));
    }
    if r < workers as u64 {
        return Err(Error::InfeasibleTask { r, workers });
    }
    Ok(())
}

fn check_profiles(r: u64, profiles: &[WorkerProfile]) -> Result<()> {
    check_roster(r, profiles.len())?;
    profiles.iter().try_for_each(WorkerProfile::validate)
}

/// `beta` for given per-worker `lambdas` and the batch counts in `profiles`.
pub fn beta_from_lambdas(profiles: &[WorkerProfile], lambdas: &[f64]) -> f64 {
    profiles
        .iter()
        .zip(lambdas)
        .map(|(w, &lambda)| {
            let p = f64::from(w.p);
            let tail: f64 = (1..=w.p)
                .map(|k| (-w.mu * (lambda * p / f64::from(k) - w.alpha)).exp())
                .sum::<f64>()
                / p;
            (1.0 - tail) / lambda
        })
        .sum()
}

/// Rounds each ideal load to the nearest integer (at least 1) and tops up the
/// largest rounding deficits if the total fell below `r`.
fn round_coded_loads(ideal: &[f64], r: u64) -> Vec<u64> {
    let mut loads: Vec<u64> = ideal.iter().map(|&l| (l.round() as u64).max(1)).collect();
    let total: u64 = loads.iter().sum();
    if total < r {
        let mut order: Vec<usize> = (0..ideal.len()).collect();
        order.sort_by(|&a, &b| {
            let da = ideal[a] - loads[a] as f64;
            let db = ideal[b] - loads[b] as f64;
            db.total_cmp(&da)
        });
        for &i in order.iter().cycle().take((r - total) as usize) {
            loads[i] += 1;
        }
    }
    loads
}

fn finish_batches(loads: &[u64], batches: &[u32]) -> (Vec<u64>, Vec<u32>) {
    loads
        .iter()
        .zip(batches)
        .map(|(&l, &p)| {
            let b = l.div_ceil(u64::from(p));
            (b, l.div_ceil(b) as u32)
        })
        .unzip()
}

pub fn bpcc_allocate(r: u64, profiles: &[WorkerProfile]) -> Result<Allocation> {
    bpcc_allocate_with(r, profiles, &RootSolveConfig::default())
}

/// Algorithm 1: per-worker `lambda`, then `beta`, `tau* = r / beta` and loads
/// `r / (beta lambda_i)`. Any worker whose rounded load falls below its batch
/// count has `p` lowered to the load and the allocation is recomputed.
pub fn bpcc_allocate_with(
    r: u64,
    profiles: &[WorkerProfile],
    cfg: &RootSolveConfig,
) -> Result<Allocation> {
    check_profiles(r, profiles)?;
    let mut working: Vec<WorkerProfile> = profiles.to_vec();
    let mut reduced = Vec::new();
    loop {
        let lambdas = working
            .iter()
            .map(|w| numerics::solve_lambda(w.mu, w.alpha, w.p, cfg))
            .collect::<Result<Vec<_>>>()?;
        let beta = beta_from_lambdas(&working, &lambdas);
        let ideal: Vec<f64> = lambdas.iter().map(|l| r as f64 / (beta * l)).collect();
        let loads = round_coded_loads(&ideal, r);

        let mut changed = false;
        for (i, (w, &l)) in working.iter_mut().zip(&loads).enumerate() {
            if l < u64::from(w.p) {
                w.p = l as u32;
                changed = true;
                if !reduced.contains(&i) {
                    reduced.push(i);
                }
            }
        }
        if changed {
            continue;
        }

        let p: Vec<u32> = working.iter().map(|w| w.p).collect();
        let (batch_sizes, batches) = finish_batches(&loads, &p);
        reduced.sort_unstable();
        return Ok(Allocation {
            scheme: Scheme::Bpcc,
            target_rows: r,
            loads,
            batch_sizes,
            batches,
            ideal_loads: ideal,
            lambdas,
            beta: Some(beta),
            tau_star: Some(r as f64 / beta),
            reduced_batches: reduced,
        });
    }
}

/// Single-batch coded allocation with `lambda` from the closed form and
/// `beta_H = sum_i mu_i / (1 + mu_i lambda_i)`.
pub fn hcmm_allocate(r: u64, profiles: &[WorkerProfile]) -> Result<Allocation> {
    check_profiles(r, profiles)?;
    let lambdas: Vec<f64> = profiles.iter().map(|w| sup_lambda(w.mu, w.alpha)).collect();
    let beta: f64 = profiles.iter().zip(&lambdas).map(|(w, l)| w.mu / (1.0 + w.mu * l)).sum();
    let ideal: Vec<f64> = lambdas.iter().map(|l| r as f64 / (beta * l)).collect();
    let loads = round_coded_loads(&ideal, r);
    let n = loads.len();
    Ok(Allocation {
        scheme: Scheme::Hcmm,
        target_rows: r,
        batch_sizes: loads.clone(),
        loads,
        batches: vec![1; n],
        ideal_loads: ideal,
        lambdas,
        beta: Some(beta),
        tau_star: Some(r as f64 / beta),
        reduced_batches: Vec::new(),
    })
}

pub fn uniform_allocate(r: u64, workers: usize) -> Result<Allocation> {
    check_roster(r, workers)?;
    let n = workers as u64;
    let loads = (0..n).map(|i| r / n + u64::from(i < r % n)).collect();
    Ok(Allocation::uncoded(Scheme::Uniform, r, loads))
}

/// Loads proportional to `mu / (mu alpha + 1)`, rounded by largest remainder.
pub fn load_balanced_allocate(r: u64, profiles: &[WorkerProfile]) -> Result<Allocation> {
    check_profiles(r, profiles)?;
    let weights: Vec<f64> = profiles.iter().map(|w| 1.0 / w.mean_row_time()).collect();
    let loads = largest_remainder(r, &weights);
    Ok(Allocation::uncoded(Scheme::LoadBalanced, r, loads))
}

/// Splits `total` into integer shares proportional to `weights`, each at
/// least 1, summing to `total` exactly. Requires `total >= weights.len()`.
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut loads: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = loads.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - loads[a] as f64;
        let rb = shares[b] - loads[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        loads[i] += 1;
    }
    // floor() can overshoot by an ulp-sized share; fix any zero loads by
    // taking rows from the largest.
    while let Some(zero) = loads.iter().position(|&l| l == 0) {
        let donor = (0..loads.len()).max_by_key(|&i| loads[i]).expect("non-empty");
        loads[donor] -= 1;
        loads[zero] += 1;
    }
    loads
}

pub fn allocate(scheme: Scheme, r: u64, profiles: &[WorkerProfile]) -> Result<Allocation> {
    match scheme {
        Scheme::Uniform => {
            profiles.iter().try_for_each(WorkerProfile::validate)?;
            uniform_allocate(r, profiles.len())
        }
        Scheme::LoadBalanced => load_balanced_allocate(r, profiles),
        Scheme::Hcmm => hcmm_allocate(r, profiles),
        Scheme::Bpcc => bpcc_allocate(r, profiles),
    }
}

/// Expected rows received by time `t`, summing each batch's true row count
/// times the probability that it has arrived.
pub fn expected_results(alloc: &Allocation, profiles: &[WorkerProfile], t: f64) -> Result<f64> {
    if alloc.worker_count() != profiles.len() {
        return Err(Error::InvalidAllocation(format!(
            "allocation has {} workers, roster has {}",
            alloc.worker_count(),
            profiles.len()
        )));
    }
    let mut total = 0.0;
    for (i, w) in profiles.iter().enumerate() {
        let mut cumulative = 0u64;
        for rows in alloc.batch_rows(i) {
            cumulative += rows;
            total += rows as f64 * batch_cdf(w, 1, cumulative as f64, t);
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauBounds {
    pub inf_tau: f64,
    pub sup_tau: f64,
}

/// `sum_j (1/alpha_j)(1 - exp(mu_j alpha_j) int_0^1 exp(-mu_j alpha_j / x) dx)`,
/// the limit of `beta` as every batch count grows without bound.
pub fn beta_limit(profiles: &[WorkerProfile]) -> f64 {
    profiles
        .iter()
        .map(|w| (1.0 - exp_integral_01_scaled(w.mu * w.alpha)) / w.alpha)
        .sum()
}

/// `beta` with every worker at a single batch.
pub fn beta_single_batch(profiles: &[WorkerProfile]) -> f64 {
    profiles
        .iter()
        .map(|w| {
            let lambda = sup_lambda(w.mu, w.alpha);
            -(-w.mu * (lambda - w.alpha)).exp_m1() / lambda
        })
        .sum()
}

pub fn tau_bounds(r: u64, profiles: &[WorkerProfile]) -> Result<TauBounds> {
    check_profiles(r, profiles)?;
    Ok(TauBounds {
        inf_tau: r as f64 / beta_limit(profiles),
        sup_tau: r as f64 / beta_single_batch(profiles),
    })
}

/// Limit of each worker's BPCC load as all batch counts grow.
pub fn l_hat(r: u64, profiles: &[WorkerProfile]) -> Result<Vec<f64>> {
    check_profiles(r, profiles)?;
    let denom = beta_limit(profiles);
    Ok(profiles.iter().map(|w| r as f64 / (w.alpha * denom)).collect())
}

/// The largest useful batch counts, `floor(l_hat_i)` (at least 1).
pub fn default_batches(r: u64, profiles: &[WorkerProfile]) -> Result<Vec<u32>> {
    Ok(l_hat(r, profiles)?
        .into_iter()
        .map(|l| (l.floor() as u32).max(1))
        .collect())
}
