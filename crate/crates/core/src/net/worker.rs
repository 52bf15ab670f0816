//! Worker side: holds one slice of the encoded matrix, multiplies it with
//! each broadcast input vector batch by batch, and streams results back.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::Exp1;

use super::frame::{read_frame, write_frame, BatchResult, Frame, Hello, Stats, DEFAULT_MAX_FRAME};
use super::provision::WorkerSlice;
use crate::coding::dot;
use crate::error::{Error, Result};
use crate::sim::stream;

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerOptions {
    /// Every arrival is held back until `delay_factor` times its natural
    /// time since the run started.
    pub delay_factor: f64,
    /// Never send results (an infinitely delayed worker).
    pub drop: bool,
    /// Abort the connection abruptly after sending this many results (0:
    /// as soon as an input vector arrives).
    pub crash_after: Option<u32>,
    /// Pace batches by the slice's latency profile: batch `k` is released at
    /// `rows_through_k * (alpha + X / mu)` seconds, one `X ~ Exp(1)` per run.
    pub emulate: bool,
    pub seed: u64,
    pub max_frame: usize,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self { delay_factor: 1.0, drop: false, crash_after: None, emulate: false, seed: 0, max_frame: DEFAULT_MAX_FRAME }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionEnd {
    /// The master went away or sent something malformed.
    Disconnected,
    /// `crash_after` fired.
    Crashed,
}

const POLL: Duration = Duration::from_millis(2);

struct RunControl {
    generation: AtomicU64,
    stopped: AtomicU64,
}

impl RunControl {
    fn is_stopped(&self, generation: u64) -> bool {
        self.stopped.load(Ordering::Acquire) >= generation
    }
}

/// Serves one master connection until it closes.
pub fn serve_connection(stream: TcpStream, slice: &WorkerSlice, options: &WorkerOptions) -> Result<SessionEnd> {
    stream.set_nodelay(true)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let meta = &slice.meta;
    let worker_id = meta.worker_id as u32;
    write_frame(
        &mut writer,
        &Frame::Hello(Hello {
            worker_id,
            row_start: meta.row_start as u32,
            row_count: meta.row_count as u32,
            batches: meta.batches.len() as u32,
        }),
    )?;

    let control = Arc::new(RunControl { generation: AtomicU64::new(0), stopped: AtomicU64::new(0) });
    let (tx, rx) = mpsc::channel::<(u64, Vec<f64>)>();
    let reader = {
        let control = Arc::clone(&control);
        let read_half = stream.try_clone()?;
        let max_frame = options.max_frame;
        thread::spawn(move || {
            let mut r = BufReader::new(read_half);
            while let Ok(Some(frame)) = read_frame(&mut r, max_frame) {
                match frame {
                    Frame::InputVector(x) => {
                        let generation = control.generation.fetch_add(1, Ordering::AcqRel) + 1;
                        if tx.send((generation, x)).is_err() {
                            break;
                        }
                    }
                    Frame::Stop => {
                        let current = control.generation.load(Ordering::Acquire);
                        control.stopped.fetch_max(current, Ordering::AcqRel);
                    }
                    _ => break,
                }
            }
            // abort whatever is running; the compute loop sees a closed queue next
            control.stopped.store(u64::MAX, Ordering::Release);
        })
    };

    let mut end = SessionEnd::Disconnected;
    for (generation, x) in rx {
        if x.len() != slice.rows.cols() {
            break;
        }
        match run_once(&mut writer, slice, options, &control, generation, &x) {
            Ok(None) => {}
            Ok(Some(e)) => {
                end = e;
                break;
            }
            Err(_) => break,
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    let _ = reader.join();
    Ok(end)
}

fn run_once<W: Write>(
    writer: &mut W,
    slice: &WorkerSlice,
    options: &WorkerOptions,
    control: &RunControl,
    generation: u64,
    x: &[f64],
) -> Result<Option<SessionEnd>> {
    let start = Instant::now();
    let meta = &slice.meta;
    let per_row = options.emulate.then(|| {
        let draw: f64 = stream(options.seed, generation, meta.worker_id as u64).sample(Exp1);
        meta.profile.alpha + draw / meta.profile.mu
    });
    if options.crash_after == Some(0) {
        return Ok(Some(SessionEnd::Crashed));
    }
    let mut sent = 0u32;
    let mut rows_computed = 0u64;
    let mut offset = 0usize;
    if options.drop {
        while !control.is_stopped(generation) {
            thread::sleep(POLL);
        }
    } else {
        for (k, &len) in meta.batches.iter().enumerate() {
            if control.is_stopped(generation) {
                break;
            }
            let values: Vec<f64> = (offset..offset + len).map(|i| dot(slice.rows.row(i), x)).collect();
            rows_computed += len as u64;
            offset += len;
            let natural = match per_row {
                Some(c) => offset as f64 * c,
                None => start.elapsed().as_secs_f64(),
            };
            let release = start + Duration::from_secs_f64(natural * options.delay_factor);
            if !wait_until(release, control, generation) {
                break;
            }
            write_frame(
                writer,
                &Frame::BatchResult(BatchResult {
                    worker_id: meta.worker_id as u32,
                    batch_index: k as u32,
                    row_start: (meta.row_start + offset - len) as u32,
                    values,
                }),
            )?;
            sent += 1;
            if options.crash_after == Some(sent) {
                return Ok(Some(SessionEnd::Crashed));
            }
        }
    }
    write_frame(
        writer,
        &Frame::Stats(Stats {
            worker_id: meta.worker_id as u32,
            batches_sent: sent,
            rows_computed,
            busy_seconds: start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(None)
}

/// Sleeps until `deadline`; false if the run was stopped meanwhile.
fn wait_until(deadline: Instant, control: &RunControl, generation: u64) -> bool {
    loop {
        if control.is_stopped(generation) {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        thread::sleep((deadline - now).min(POLL));
    }
}

/// Accepts master connections one at a time. Returns only when a session
/// ends in an injected crash or the listener fails.
pub fn serve_worker(listener: TcpListener, slice: &WorkerSlice, options: &WorkerOptions) -> Result<SessionEnd> {
    loop {
        let (stream, _) = listener.accept()?;
        if serve_connection(stream, slice, options)? == SessionEnd::Crashed {
            return Ok(SessionEnd::Crashed);
        }
    }
}

/// Starts a worker on an ephemeral loopback port in a background thread.
pub fn spawn_local_worker(
    slice: WorkerSlice,
    options: WorkerOptions,
) -> Result<(SocketAddr, thread::JoinHandle<Result<SessionEnd>>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handle = thread::Builder::new()
        .name(format!("worker-{}", slice.meta.worker_id))
        .spawn(move || serve_worker(listener, &slice, &options))
        .map_err(Error::Io)?;
    Ok((addr, handle))
}
