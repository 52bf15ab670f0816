//! Command implementations. Each writes its documents to the given sinks so
//! the binary and the tests share one code path.

use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use bpcc_core::allocation::{l_hat, tau_bounds, Allocation, Scheme};
use bpcc_core::coding::{DenseLayout, RowMatrix};
use bpcc_core::model::{fit_shift_and_rate, TimingSample};
use bpcc_core::net::{self, MasterOptions, ProvisionOptions, RunMetrics, SessionEnd, WorkerOptions, WorkerSlice};
use bpcc_core::sim::{self, Execution, MonteCarloOptions, Perturbed, Summary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{self, CompareRow, SensitivityRow, TraceRow};
use crate::scenario::ScenarioFile;

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::io("stdout", e))
}

/// Shared knobs of the Monte Carlo commands.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub sequential: bool,
}

impl RunOverrides {
    fn scenario(&self, file: &ScenarioFile) -> CliResult<sim::Scenario> {
        let mut scenario = file.scenario()?;
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        if let Some(trials) = self.trials {
            scenario.trials = trials;
        }
        scenario.validate()?;
        Ok(scenario)
    }

    fn options(&self, curve_points: usize) -> MonteCarloOptions {
        let execution = if self.sequential { Execution::Sequential } else { Execution::Parallel };
        MonteCarloOptions { curve_points, execution }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub scheme: Scheme,
    pub r: u64,
    pub target_rows: u64,
    pub loads: Vec<u64>,
    pub batches: Vec<u32>,
    pub batch_sizes: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub beta: Option<f64>,
    pub tau_star: Option<f64>,
    pub total_load: u64,
}

impl AllocationReport {
    fn new(r: u64, a: &Allocation) -> Self {
        Self {
            scheme: a.scheme,
            r,
            target_rows: a.target_rows,
            loads: a.loads.clone(),
            batches: a.batches.clone(),
            batch_sizes: a.batch_sizes.clone(),
            lambdas: a.lambdas.clone(),
            beta: a.beta,
            tau_star: a.tau_star,
            total_load: a.total_load(),
        }
    }
}

/// Prints the allocation as JSON to `out` and as a table to `table`.
pub fn allocate(file: &ScenarioFile, out: &mut dyn Write, table: &mut dyn Write) -> CliResult<AllocationReport> {
    let scenario = file.scenario()?;
    let alloc = scenario.allocate(scenario.scheme)?;
    let report = AllocationReport::new(scenario.r, &alloc);
    json_line(out, &report)?;
    write_table(table, &report, &scenario.profiles).map_err(|e| CliError::io("stderr", e))?;
    Ok(report)
}

fn write_table(w: &mut dyn Write, report: &AllocationReport, profiles: &[bpcc_core::model::WorkerProfile]) -> std::io::Result<()> {
    writeln!(w, "{:>6} {:>12} {:>12} {:>10} {:>8} {:>10} {:>14}", "worker", "mu", "alpha", "load", "batches", "batch", "lambda")?;
    for (i, w_) in profiles.iter().enumerate() {
        let lambda = report.lambdas.get(i).map_or("-".to_string(), |l| format!("{l:.6}"));
        writeln!(
            w,
            "{:>6} {:>12.4} {:>12.6} {:>10} {:>8} {:>10} {:>14}",
            i, w_.mu, w_.alpha, report.loads[i], report.batches[i], report.batch_sizes[i], lambda
        )?;
    }
    write!(w, "{} total rows for {} needed", report.total_load, report.target_rows)?;
    if let Some(t) = report.tau_star {
        write!(w, ", tau* = {t:.6}")?;
    }
    writeln!(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub inf_tau: f64,
    pub sup_tau: f64,
    pub l_hat: Vec<f64>,
    /// BPCC's `tau*` at the scenario's batch counts.
    pub tau_star: f64,
}

pub fn bounds(file: &ScenarioFile, out: &mut dyn Write) -> CliResult<BoundsReport> {
    let scenario = file.scenario()?;
    let target = scenario.threshold(Scheme::Bpcc);
    let b = tau_bounds(target, &scenario.profiles)?;
    let alloc = scenario.allocate(Scheme::Bpcc)?;
    let report = BoundsReport {
        inf_tau: b.inf_tau,
        sup_tau: b.sup_tau,
        l_hat: l_hat(target, &scenario.profiles)?,
        tau_star: alloc.tau_star.expect("coded allocation has tau*"),
    };
    json_line(out, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub scheme: Scheme,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_time: Option<f64>,
}

impl From<&Summary> for SummaryReport {
    fn from(s: &Summary) -> Self {
        Self {
            scheme: s.scheme,
            trials: s.trials,
            successes: s.successes,
            success_rate: s.success_rate,
            mean_time: s.mean_time,
        }
    }
}

fn trace_rows(summary: &Summary) -> Vec<TraceRow> {
    summary
        .curve
        .iter()
        .flat_map(|c| c.times.iter().zip(&c.mean_rows))
        .map(|(&time, &mean_rows)| TraceRow { time, mean_rows, scheme: summary.scheme })
        .collect()
}

/// Simulates the scenario's scheme and writes its mean rows-received trace.
pub fn simulate(
    file: &ScenarioFile,
    overrides: RunOverrides,
    trace_csv: &Path,
    out: &mut dyn Write,
) -> CliResult<SummaryReport> {
    let scenario = overrides.scenario(file)?;
    let alloc = scenario.allocate(scenario.scheme)?;
    let summary = sim::monte_carlo_with(&scenario, &alloc, overrides.options(sim::DEFAULT_CURVE_POINTS))?;
    output::write_trace(trace_csv, &trace_rows(&summary))?;
    let report = SummaryReport::from(&summary);
    json_line(out, &report)?;
    Ok(report)
}

/// Runs every scheme on common random numbers.
pub fn compare(
    file: &ScenarioFile,
    overrides: RunOverrides,
    compare_csv: &Path,
    trace_csv: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<Vec<SummaryReport>> {
    let scenario = overrides.scenario(file)?;
    let points = if trace_csv.is_some() { sim::DEFAULT_CURVE_POINTS } else { 0 };
    let summaries = sim::compare_schemes(&scenario, overrides.options(points))?;
    let rows: Vec<CompareRow> = summaries
        .iter()
        .map(|s| CompareRow { scheme: s.scheme, mean_time: s.mean_time, success_rate: s.success_rate })
        .collect();
    output::write_compare(compare_csv, &rows)?;
    if let Some(path) = trace_csv {
        let trace: Vec<TraceRow> = summaries.iter().flat_map(trace_rows).collect();
        output::write_trace(path, &trace)?;
    }
    let reports: Vec<SummaryReport> = summaries.iter().map(SummaryReport::from).collect();
    json_line(out, &reports)?;
    Ok(reports)
}

pub const DEFAULT_SWEEP: [u32; 11] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024];

pub fn sweep_p(
    file: &ScenarioFile,
    overrides: RunOverrides,
    p_values: &[u32],
    sweep_csv: &Path,
) -> CliResult<Vec<sim::SweepRow>> {
    let scenario = overrides.scenario(file)?;
    let rows = sim::sweep_p(&scenario, p_values, overrides.options(0))?;
    output::write_sweep(sweep_csv, &rows)?;
    Ok(rows)
}

pub fn sensitivity(
    file: &ScenarioFile,
    overrides: RunOverrides,
    deltas: &[f64],
    which: &[Perturbed],
    sensitivity_csv: &Path,
) -> CliResult<Vec<sim::SensitivityResult>> {
    if deltas.is_empty() || which.is_empty() {
        return Err(CliError::Schema("need at least one delta and one parameter".into()));
    }
    let scenario = overrides.scenario(file)?;
    let mut results = Vec::with_capacity(deltas.len() * which.len());
    for &delta in deltas {
        for &w in which {
            results.push(sim::sensitivity(&scenario, delta, w, overrides.options(0))?);
        }
    }
    let rows: Vec<SensitivityRow> = results
        .iter()
        .map(|r| SensitivityRow { delta: r.delta, which: r.which, relative_change: r.relative_change })
        .collect();
    output::write_sensitivity(sensitivity_csv, &rows)?;
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResiduals {
    pub task_sizes: Vec<u64>,
    /// `t0_hat - alpha_hat r` per task size.
    pub shift: Vec<f64>,
    /// `tc_hat - r / mu_hat` per task size.
    pub excess: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mu_hat: f64,
    pub alpha_hat: f64,
    pub fit_residuals: FitResiduals,
}

/// Fits `(mu, alpha)` to timing samples: CSV with columns
/// `task_size,duration_seconds`, or a JSON array of
/// `{"task_size": .., "durations": [..]}` when the path ends in `.json`.
pub fn estimate(samples: &Path, out: &mut dyn Write) -> CliResult<EstimateReport> {
    let groups = if samples.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(samples).map_err(|e| CliError::io(samples.display(), e))?;
        serde_json::from_str::<Vec<TimingSample>>(&text)
            .map_err(|e| CliError::Schema(format!("{}: {e}", samples.display())))?
    } else {
        TimingSample::group(output::read_samples(samples)?)
    };
    let fit = fit_shift_and_rate(&groups)?;
    let report = EstimateReport {
        mu_hat: fit.mu,
        alpha_hat: fit.alpha,
        fit_residuals: FitResiduals {
            task_sizes: fit.estimates.iter().map(|e| e.task_size).collect(),
            shift: fit.shift_residuals,
            excess: fit.excess_residuals,
        },
    };
    json_line(out, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvisionReport {
    pub dir: PathBuf,
    pub scheme: Scheme,
    pub r: usize,
    pub q: usize,
    pub m: usize,
    pub loads: Vec<u64>,
    pub batches: Vec<u32>,
}

pub struct ProvisionArgs<'a> {
    pub dir: &'a Path,
    /// Input matrix; a Gaussian `r x m` matrix from the seed when absent.
    pub matrix: Option<&'a Path>,
    pub layout: DenseLayout,
    pub seed: Option<u64>,
}

fn save_matrix(m: &RowMatrix, path: &Path) -> CliResult<()> {
    m.save(path).map_err(|e| match e {
        bpcc_core::Error::Io(io) => CliError::io(path.display(), io),
        other => other.into(),
    })
}

fn load_matrix(path: &Path) -> CliResult<RowMatrix> {
    RowMatrix::load(path).map_err(|e| match e {
        bpcc_core::Error::Io(io) => CliError::io(path.display(), io),
        other => CliError::Schema(format!("{}: {other}", path.display())),
    })
}

/// Allocates and encodes `A` for the scenario's scheme and writes the
/// cluster layout under `dir`.
pub fn provision(file: &ScenarioFile, args: ProvisionArgs<'_>, out: &mut dyn Write) -> CliResult<ProvisionReport> {
    let scenario = file.scenario()?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = match args.matrix {
        Some(path) => load_matrix(path)?,
        None => {
            let m = file.m.ok_or_else(|| CliError::Schema("scenario needs m to generate a matrix".into()))?;
            RowMatrix::gaussian(scenario.r as usize, m, &mut rng)
        }
    };
    if a.rows() as u64 != scenario.r {
        return Err(CliError::Schema(format!("matrix has {} rows, scenario says r = {}", a.rows(), scenario.r)));
    }
    let options = ProvisionOptions { codec: scenario.codec, layout: args.layout, epsilon: scenario.epsilon };
    let prepared = net::provision(args.dir, &a, scenario.scheme, &scenario.profiles, options, &mut rng)?;
    let report = ProvisionReport {
        dir: args.dir.to_path_buf(),
        scheme: scenario.scheme,
        r: prepared.task.r,
        q: prepared.task.q,
        m: a.cols(),
        loads: prepared.allocation.loads.clone(),
        batches: prepared.allocation.batches.clone(),
    };
    json_line(out, &report)?;
    Ok(report)
}

pub struct MasterArgs<'a> {
    pub task_dir: &'a Path,
    pub connect: &'a [String],
    pub input: &'a Path,
    pub output: Option<&'a Path>,
    pub timeout: Duration,
    pub connect_timeout: Duration,
}

/// One distributed multiplication. Prints the run metrics; a run that does
/// not decode is an error after the metrics are printed.
pub fn master(args: MasterArgs<'_>, out: &mut dyn Write) -> CliResult<RunMetrics> {
    let task = net::load_task(args.task_dir).map_err(|e| match e {
        bpcc_core::Error::Io(io) => CliError::io(args.task_dir.display(), io),
        other => other.into(),
    })?;
    let x = load_matrix(args.input)?.into_vec();
    let options = MasterOptions { run_timeout: args.timeout, connect_timeout: args.connect_timeout, ..MasterOptions::default() };
    let report = net::run_master(args.connect, &task, &x, options)?;
    json_line(out, &report.metrics)?;
    match report.y {
        Some(y) => {
            if let Some(path) = args.output {
                save_matrix(&RowMatrix::new(y.len(), 1, y)?, path)?;
            }
            Ok(report.metrics)
        }
        None => Err(CliError::Infeasible(format!(
            "run failed: {}",
            report.metrics.failure.as_deref().unwrap_or("no result")
        ))),
    }
}

pub struct WorkerArgs<'a> {
    pub dir: &'a Path,
    pub listen: &'a str,
    pub options: WorkerOptions,
}

/// Serves a provisioned slice. Prints `listening <addr>` once bound and
/// returns only after an injected crash.
pub fn worker(args: WorkerArgs<'_>, out: &mut dyn Write) -> CliResult<SessionEnd> {
    let slice = WorkerSlice::load(args.dir).map_err(|e| match e {
        bpcc_core::Error::Io(io) => CliError::io(args.dir.display(), io),
        other => CliError::Schema(format!("{}: {other}", args.dir.display())),
    })?;
    let listener = TcpListener::bind(args.listen).map_err(|e| CliError::io(args.listen, e))?;
    let addr = listener.local_addr().map_err(|e| CliError::io(args.listen, e))?;
    writeln!(out, "listening {addr}").and_then(|()| out.flush()).map_err(|e| CliError::io("stdout", e))?;
    Ok(net::serve_worker(listener, &slice, &args.options)?)
}

/// Writes a Gaussian `rows x cols` matrix, for preparing inputs by hand.
pub fn random_matrix(path: &Path, rows: usize, cols: usize, seed: u64) -> CliResult<()> {
    let m = RowMatrix::gaussian(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed));
    save_matrix(&m, path)
}
