//! Scenario files: the JSON document every simulation command reads.
//!
//! ```json
//! {
//!   "r": 10000,
//!   "m": 500,
//!   "scheme": "bpcc",
//!   "epsilon": 0.13,
//!   "workers": [{"mu": 10.0, "alpha": 0.1, "p": 50}, {"mu": 2.0, "alpha": 0.5}],
//!   "straggler": {"fraction": 0.2, "delay_factor": "inf"},
//!   "trials": 100,
//!   "seed": 7
//! }
//! ```
//!
//! `scheme` is one of `uniform`, `load_balanced`, `hcmm`, `bpcc`. A worker
//! without `p` gets `floor(l_hat)` batches. `delay_factor` is a number >= 1
//! or the string `"inf"` for workers that never return. Optional keys:
//! `codec` (`dense` or `lt`) and `mode` (`coupled`, `independent`,
//! `deterministic`). Unknown keys are rejected.

use std::fs;
use std::path::Path;

use bpcc_core::allocation::{default_batches, Scheme};
use bpcc_core::coding::{Codec, DEFAULT_EPSILON};
use bpcc_core::model::{SamplingMode, WorkerProfile};
use bpcc_core::sim::{Scenario, StragglerPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerSpec {
    pub mu: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelayFactor {
    Finite(f64),
    Keyword(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StragglerSpec {
    pub fraction: f64,
    pub delay_factor: DelayFactor,
}

impl StragglerSpec {
    pub fn policy(&self) -> CliResult<StragglerPolicy> {
        let fraction = self.fraction;
        match &self.delay_factor {
            DelayFactor::Finite(delay) => Ok(StragglerPolicy::Finite { fraction, delay: *delay }),
            DelayFactor::Keyword(k) if k == "inf" => Ok(StragglerPolicy::Infinite { fraction }),
            DelayFactor::Keyword(k) => {
                Err(CliError::Schema(format!("delay_factor must be a number or \"inf\", got {k:?}")))
            }
        }
    }
}

fn default_scheme() -> Scheme {
    Scheme::Bpcc
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_trials() -> usize {
    100
}

fn default_codec() -> Codec {
    Codec::Dense
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub r: u64,
    /// Columns of `A`; only provisioning needs it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub workers: Vec<WorkerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub straggler: Option<StragglerSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_codec")]
    pub codec: Codec,
    #[serde(default)]
    pub mode: SamplingMode,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Schema(format!("scenario: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::parse(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }

    /// Worker profiles with missing batch counts filled in.
    pub fn profiles(&self) -> CliResult<Vec<WorkerProfile>> {
        if self.workers.is_empty() {
            return Err(CliError::Schema("scenario has no workers".into()));
        }
        let mut profiles = self
            .workers
            .iter()
            .map(|w| WorkerProfile::new(w.mu, w.alpha, w.p.unwrap_or(1)))
            .collect::<Result<Vec<_>, _>>()?;
        if self.workers.iter().any(|w| w.p.is_none()) {
            let defaults = default_batches(self.r, &profiles)?;
            for ((profile, spec), p) in profiles.iter_mut().zip(&self.workers).zip(defaults) {
                if spec.p.is_none() {
                    *profile = profile.with_batches(p);
                }
            }
        }
        Ok(profiles)
    }

    pub fn scenario(&self) -> CliResult<Scenario> {
        let stragglers = match &self.straggler {
            Some(s) => s.policy()?,
            None => StragglerPolicy::None,
        };
        let scenario = Scenario {
            r: self.r,
            profiles: self.profiles()?,
            scheme: self.scheme,
            stragglers,
            trials: self.trials,
            seed: self.seed,
            mode: self.mode,
            codec: self.codec,
            epsilon: self.epsilon,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
