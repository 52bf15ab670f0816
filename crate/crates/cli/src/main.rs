use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use bpcc_cli::commands::{self, MasterArgs, ProvisionArgs, RunOverrides, WorkerArgs, DEFAULT_SWEEP};
use bpcc_cli::{CliError, CliResult, ScenarioFile};
use bpcc_core::coding::DenseLayout;
use bpcc_core::net::WorkerOptions;
use bpcc_core::sim::Perturbed;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bpcc", version, about = "Batch-processing coded matrix-vector multiplication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Sim {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, env = "BPCC_SEED")]
    seed: Option<u64>,
    /// Overrides the scenario's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Sim {
    fn load(&self) -> CliResult<(ScenarioFile, RunOverrides)> {
        let file = ScenarioFile::load(&self.scenario)?;
        Ok((file, RunOverrides { seed: self.seed, trials: self.trials, sequential: self.sequential }))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Gaussian,
    Systematic,
}

#[derive(Subcommand)]
enum Command {
    /// Print the allocation for the scenario's scheme (JSON on stdout, table on stderr).
    Allocate { scenario: PathBuf },
    /// Print the bounds on BPCC's tau* and the limiting loads.
    Bounds { scenario: PathBuf },
    /// Simulate the scenario's scheme and write the mean rows-received trace.
    Simulate {
        #[command(flatten)]
        sim: Sim,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Simulate every scheme on common random numbers.
    Compare {
        #[command(flatten)]
        sim: Sim,
        #[arg(long, short)]
        out: PathBuf,
        /// Also write every scheme's trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// BPCC with every worker at each batch count.
    SweepP {
        #[command(flatten)]
        sim: Sim,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
        p: Vec<u32>,
    },
    /// Mean completion time when allocating from perturbed parameters.
    Sensitivity {
        #[command(flatten)]
        sim: Sim,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.5])]
        delta: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values = ["mu", "alpha"])]
        which: Vec<String>,
    },
    /// Fit (mu, alpha) to timing samples (CSV task_size,duration_seconds or JSON).
    Estimate { samples: PathBuf },
    /// Write a Gaussian matrix in the binary matrix format.
    RandomMatrix {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, env = "BPCC_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Allocate, encode, and write each worker's slice under a directory.
    Provision {
        scenario: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        /// Input matrix; generated from the seed with the scenario's m when absent.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gaussian")]
        layout: Layout,
        #[arg(long, env = "BPCC_SEED")]
        seed: Option<u64>,
    },
    /// Broadcast an input vector to the workers and decode the product.
    Master {
        /// Provisioned directory holding task.bin.
        #[arg(long)]
        task: PathBuf,
        /// Worker addresses, one per worker in any order.
        #[arg(long, value_delimiter = ',', required = true)]
        connect: Vec<String>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seconds to wait for a decodable set of results.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        /// Seconds to keep retrying each connection.
        #[arg(long, default_value_t = 10.0)]
        connect_timeout: f64,
    },
    /// Serve one provisioned worker directory.
    Worker {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Hold every result until this multiple of its natural time.
        #[arg(long, env = "BPCC_DELAY_FACTOR", default_value_t = 1.0)]
        delay_factor: f64,
        /// Never send results.
        #[arg(long, env = "BPCC_DROP")]
        drop: bool,
        /// Abort the connection after this many results (0: on receiving input).
        #[arg(long, env = "BPCC_CRASH_AFTER")]
        crash_after: Option<u32>,
        /// Pace batches by the worker's latency profile.
        #[arg(long)]
        emulate: bool,
        #[arg(long, env = "BPCC_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn seconds(s: f64, what: &str) -> CliResult<Duration> {
    Duration::try_from_secs_f64(s).map_err(|_| CliError::Schema(format!("{what} must be a non-negative number of seconds")))
}

fn run(command: Command) -> CliResult<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Allocate { scenario } => {
            commands::allocate(&ScenarioFile::load(scenario)?, &mut out, &mut io::stderr())?;
        }
        Command::Bounds { scenario } => {
            commands::bounds(&ScenarioFile::load(scenario)?, &mut out)?;
        }
        Command::Simulate { sim, out: path } => {
            let (file, overrides) = sim.load()?;
            commands::simulate(&file, overrides, &path, &mut out)?;
        }
        Command::Compare { sim, out: path, trace } => {
            let (file, overrides) = sim.load()?;
            commands::compare(&file, overrides, &path, trace.as_deref(), &mut out)?;
        }
        Command::SweepP { sim, out: path, p } => {
            let (file, overrides) = sim.load()?;
            commands::sweep_p(&file, overrides, &p, &path)?;
        }
        Command::Sensitivity { sim, out: path, delta, which } => {
            let (file, overrides) = sim.load()?;
            let which = which
                .iter()
                .map(|w| w.parse::<Perturbed>())
                .collect::<Result<Vec<_>, _>>()?;
            commands::sensitivity(&file, overrides, &delta, &which, &path)?;
        }
        Command::Estimate { samples } => {
            commands::estimate(&samples, &mut out)?;
        }
        Command::RandomMatrix { out: path, rows, cols, seed } => {
            commands::random_matrix(&path, rows, cols, seed)?;
        }
        Command::Provision { scenario, dir, matrix, layout, seed } => {
            let layout = match layout {
                Layout::Gaussian => DenseLayout::Gaussian,
                Layout::Systematic => DenseLayout::Systematic,
            };
            let args = ProvisionArgs { dir: &dir, matrix: matrix.as_deref(), layout, seed };
            commands::provision(&ScenarioFile::load(scenario)?, args, &mut out)?;
        }
        Command::Master { task, connect, input, output, timeout, connect_timeout } => {
            let args = MasterArgs {
                task_dir: &task,
                connect: &connect,
                input: &input,
                output: output.as_deref(),
                timeout: seconds(timeout, "--timeout")?,
                connect_timeout: seconds(connect_timeout, "--connect-timeout")?,
            };
            commands::master(args, &mut out)?;
        }
        Command::Worker { dir, listen, delay_factor, drop, crash_after, emulate, seed } => {
            if !(delay_factor.is_finite() && delay_factor >= 0.0) {
                return Err(CliError::Schema(format!("--delay-factor must be >= 0, got {delay_factor}")));
            }
            let options = WorkerOptions { delay_factor, drop, crash_after, emulate, seed, ..WorkerOptions::default() };
            commands::worker(WorkerArgs { dir: &dir, listen: &listen, options }, &mut out)?;
            eprintln!("worker stopped after injected crash");
        }
    }
    out.flush().map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
