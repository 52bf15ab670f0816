//! Luby Transform rows over the reals: each encoded row is the sum of `d`
//! distinct source rows, `d` drawn from the robust soliton distribution.
//! Decoding is by peeling.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustSolitonParams {
    pub c: f64,
    pub delta: f64,
}

impl Default for RobustSolitonParams {
    fn default() -> Self {
        Self { c: 0.07, delta: 0.7 }
    }
}

/// Sampler over degrees `1..=k`.
#[derive(Clone, Debug)]
pub struct DegreeDistribution {
    cdf: Vec<f64>,
}

impl DegreeDistribution {
    pub fn robust_soliton(k: usize, params: RobustSolitonParams) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("LT code needs k >= 1".into()));
        }
        if !(params.c > 0.0 && params.delta > 0.0 && params.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("bad robust soliton parameters {params:?}")));
        }
        let kf = k as f64;
        let mut weights = vec![0.0; k + 1];
        weights[1] = 1.0 / kf;
        for (d, w) in weights.iter_mut().enumerate().skip(2) {
            *w = 1.0 / (d as f64 * (d as f64 - 1.0));
        }
        let spike_r = params.c * (kf / params.delta).ln() * kf.sqrt();
        let pivot = (kf / spike_r).floor() as usize;
        if spike_r > 0.0 && pivot >= 1 {
            for (d, w) in weights.iter_mut().enumerate().take(pivot.min(k + 1)).skip(1) {
                *w += spike_r / (d as f64 * kf);
            }
            if pivot <= k {
                weights[pivot] += spike_r * (spike_r / params.delta).ln().max(0.0) / kf;
            }
        }
        Ok(Self::from_weights(&weights[1..]))
    }

    /// Degrees `1..=weights.len()` with the given (unnormalized) weights.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self { cdf }
    }

    pub fn max_degree(&self) -> usize {
        self.cdf.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) + 1
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let p = c - prev;
                prev = c;
                (i + 1) as f64 * p
            })
            .sum()
    }
}

/// Neighbor sets of `count` encoded rows over `k` source rows.
pub fn generate_neighbors<R: Rng + ?Sized>(
    k: usize,
    count: usize,
    dist: &DegreeDistribution,
    rng: &mut R,
) -> Vec<Vec<u32>> {
    (0..count)
        .map(|_| {
            let d = dist.sample(rng).min(k);
            let mut set: Vec<u32> = index::sample(rng, k, d).into_iter().map(|i| i as u32).collect();
            set.sort_unstable();
            set
        })
        .collect()
}

/// Incremental peeling decoder over real-valued sums.
#[derive(Clone, Debug)]
pub struct Peeler {
    values: Vec<f64>,
    resolved: Vec<bool>,
    resolved_count: usize,
    /// Per received row: residual value and unresolved neighbors left.
    residual: Vec<f64>,
    remaining: Vec<u32>,
    neighbors: Vec<Vec<u32>>,
    /// Source row -> received rows still waiting on it.
    waiting: Vec<Vec<u32>>,
    ripple: VecDeque<u32>,
}

impl Peeler {
    pub fn new(k: usize) -> Self {
        Self {
            values: vec![0.0; k],
            resolved: vec![false; k],
            resolved_count: 0,
            residual: Vec::new(),
            remaining: Vec::new(),
            neighbors: Vec::new(),
            waiting: vec![Vec::new(); k],
            ripple: VecDeque::new(),
        }
    }

    pub fn source_count(&self) -> usize {
        self.values.len()
    }

    pub fn resolved_count(&self) -> usize {
        self.resolved_count
    }

    pub fn is_complete(&self) -> bool {
        self.resolved_count == self.values.len()
    }

    /// Adds one received row and peels as far as possible.
    pub fn push(&mut self, neighbors: &[u32], value: f64) {
        let id = self.residual.len() as u32;
        let mut residual = value;
        let mut unresolved = Vec::with_capacity(neighbors.len());
        for &s in neighbors {
            if self.resolved[s as usize] {
                residual -= self.values[s as usize];
            } else {
                unresolved.push(s);
            }
        }
        self.residual.push(residual);
        self.remaining.push(unresolved.len() as u32);
        match unresolved.len() {
            0 => {}
            1 => self.ripple.push_back(id),
            _ => {
                for &s in &unresolved {
                    self.waiting[s as usize].push(id);
                }
            }
        }
        self.neighbors.push(unresolved);
        self.peel();
    }

    fn peel(&mut self) {
        while let Some(row) = self.ripple.pop_front() {
            let row = row as usize;
            if self.remaining[row] != 1 {
                continue;
            }
            let Some(&source) = self.neighbors[row].iter().find(|&&s| !self.resolved[s as usize]) else {
                continue;
            };
            let value = self.residual[row];
            self.remaining[row] = 0;
            let s = source as usize;
            self.resolved[s] = true;
            self.values[s] = value;
            self.resolved_count += 1;
            for other in std::mem::take(&mut self.waiting[s]) {
                let o = other as usize;
                if self.remaining[o] == 0 {
                    continue;
                }
                self.residual[o] -= value;
                self.remaining[o] -= 1;
                if self.remaining[o] == 1 {
                    self.ripple.push_back(other);
                }
            }
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.is_complete().then_some(&self.values)
    }
}
