//! Master side: broadcasts the input vector, gathers batch results from all
//! workers concurrently, decodes once enough rows are in, and stops workers.

use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::frame::{read_frame, Frame, Hello, DEFAULT_MAX_FRAME};
use crate::coding::{CodedTask, DecodeStatus, Decoder, PartialResult};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MasterOptions {
    /// How long to keep retrying each worker connection.
    pub connect_timeout: Duration,
    /// Give up on a run that has not decoded after this long.
    pub run_timeout: Duration,
    /// How long to wait for workers' end-of-run statistics after STOP.
    pub stats_timeout: Duration,
    pub max_frame: usize,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(10),
            run_timeout: Duration::from_secs(60),
            stats_timeout: Duration::from_secs(5),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Seconds from broadcasting the input until decoding finished (or the
    /// run was declared failed).
    pub wall_time: f64,
    /// Seconds spent inside the decoder.
    pub decode_time: f64,
    pub batches_delivered: Vec<u32>,
    pub rows_delivered: Vec<u64>,
    /// Rows each worker reported computing; `None` if it never reported.
    pub rows_computed: Vec<Option<u64>>,
    pub rows_received: usize,
    pub threshold: usize,
    pub success: bool,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub y: Option<Vec<f64>>,
    pub metrics: RunMetrics,
}

enum Incoming {
    Frame(Frame),
    Closed,
}

/// Connections to a provisioned cluster, reusable across runs.
pub struct Master<'t> {
    task: &'t CodedTask,
    writers: Vec<Option<TcpStream>>,
    rx: Receiver<(usize, Incoming)>,
    readers: Vec<JoinHandle<()>>,
    options: MasterOptions,
}

fn connect_with_retry(addr: &str, timeout: Duration) -> std::io::Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        let attempt = addr.to_socket_addrs().and_then(|mut addrs| {
            addrs
                .next()
                .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))
                .and_then(|a| TcpStream::connect_timeout(&a, timeout))
        });
        match attempt {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

impl<'t> Master<'t> {
    /// Connects to every worker and checks its announced slice against the
    /// task. Workers may be listed in any order.
    pub fn connect<A: AsRef<str>>(addrs: &[A], task: &'t CodedTask, options: MasterOptions) -> Result<Self> {
        let n = task.worker_ranges.len();
        if addrs.len() != n {
            return Err(Error::InvalidParameter(format!("{} addresses for {n} workers", addrs.len())));
        }
        let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        for (i, addr) in addrs.iter().enumerate() {
            let io_err = |source| Error::WorkerIo { worker: i, source };
            let stream = connect_with_retry(addr.as_ref(), options.connect_timeout).map_err(io_err)?;
            stream.set_nodelay(true).map_err(io_err)?;
            stream.set_read_timeout(Some(options.connect_timeout)).map_err(io_err)?;
            let hello = match read_frame(&mut &stream, options.max_frame)? {
                Some(Frame::Hello(h)) => h,
                other => {
                    return Err(Error::Protocol(format!("worker at {} sent {other:?} instead of HELLO", addr.as_ref())))
                }
            };
            stream.set_read_timeout(None).map_err(io_err)?;
            let id = check_hello(task, &hello)?;
            if streams[id].is_some() {
                return Err(Error::Protocol(format!("two workers claim id {id}")));
            }
            streams[id] = Some(stream);
        }
        let (tx, rx) = mpsc::channel();
        let mut readers = Vec::with_capacity(n);
        let mut writers = Vec::with_capacity(n);
        for (id, stream) in streams.into_iter().enumerate() {
            let stream = stream.expect("every id filled");
            let read_half = stream.try_clone().map_err(|source| Error::WorkerIo { worker: id, source })?;
            let tx = tx.clone();
            let max_frame = options.max_frame;
            readers.push(thread::spawn(move || {
                let mut r = BufReader::new(read_half);
                while let Ok(Some(frame)) = read_frame(&mut r, max_frame) {
                    if tx.send((id, Incoming::Frame(frame))).is_err() {
                        return;
                    }
                }
                let _ = tx.send((id, Incoming::Closed));
            }));
            writers.push(Some(stream));
        }
        Ok(Self { task, writers, rx, readers, options })
    }

    pub fn live_workers(&self) -> usize {
        self.writers.iter().filter(|w| w.is_some()).count()
    }

    fn drop_worker(&mut self, id: usize) {
        if let Some(s) = self.writers[id].take() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    fn broadcast(&mut self, bytes: &[u8]) {
        for id in 0..self.writers.len() {
            let failed = match self.writers[id].as_mut() {
                Some(s) => s.write_all(bytes).and_then(|()| s.flush()).is_err(),
                None => false,
            };
            if failed {
                self.drop_worker(id);
            }
        }
    }

    /// One multiplication `y = A x`.
    pub fn run(&mut self, x: &[f64]) -> Result<RunReport> {
        let n = self.writers.len();
        let task = self.task;
        let threshold = task.recovery_threshold();
        let mut decoder = Decoder::new(task);
        let mut batches_delivered = vec![0u32; n];
        let mut rows_delivered = vec![0u64; n];
        let mut rows_computed: Vec<Option<u64>> = vec![None; n];
        let mut finished = vec![false; n];
        let mut decode_time = Duration::ZERO;

        let start = Instant::now();
        self.broadcast(&Frame::InputVector(x.to_vec()).encode());
        let deadline = start + self.options.run_timeout;

        let mut y = None;
        let mut failure = None;
        while y.is_none() && failure.is_none() {
            let reachable = decoder.received()
                + (0..n)
                    .filter(|&w| self.writers[w].is_some() && !finished[w])
                    .map(|w| task.worker_ranges[w].len - rows_delivered[w] as usize)
                    .sum::<usize>();
            if reachable < threshold {
                failure = Some(format!("only {reachable} of {threshold} rows can still arrive"));
                break;
            }
            let wait = deadline.saturating_duration_since(Instant::now());
            let (id, incoming) = match self.rx.recv_timeout(wait) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    failure = Some(format!("timed out after {:?}", self.options.run_timeout));
                    break;
                }
                Err(RecvTimeoutError::Disconnected) => {
                    failure = Some("all worker connections closed".into());
                    break;
                }
            };
            match incoming {
                Incoming::Frame(Frame::BatchResult(b)) if b.worker_id as usize == id && !finished[id] => {
                    let part = PartialResult::from(b);
                    if decoder.push(&part).is_err() {
                        self.drop_worker(id);
                        continue;
                    }
                    batches_delivered[id] += 1;
                    rows_delivered[id] += part.values.len() as u64;
                    if decoder.received() >= threshold {
                        let t = Instant::now();
                        let status = decoder.try_decode();
                        decode_time += t.elapsed();
                        match status {
                            Ok(DecodeStatus::Decoded(v)) => y = Some(v),
                            Ok(DecodeStatus::Insufficient { .. }) => {}
                            Err(e) => failure = Some(e.to_string()),
                        }
                    }
                }
                Incoming::Frame(Frame::Stats(s)) if s.worker_id as usize == id => {
                    finished[id] = true;
                    rows_computed[id] = Some(s.rows_computed);
                }
                Incoming::Frame(Frame::BatchResult(b)) if b.worker_id as usize == id => {}
                Incoming::Closed | Incoming::Frame(_) => self.drop_worker(id),
            }
        }
        let wall_time = start.elapsed();
        self.broadcast(&Frame::Stop.encode());
        self.collect_stats(&mut finished, &mut rows_computed);

        let metrics = RunMetrics {
            wall_time: wall_time.as_secs_f64(),
            decode_time: decode_time.as_secs_f64(),
            batches_delivered,
            rows_delivered,
            rows_computed,
            rows_received: decoder.received(),
            threshold,
            success: y.is_some(),
            failure,
        };
        Ok(RunReport { y, metrics })
    }

    /// Waits for every live worker to close out the run, so late results
    /// cannot leak into the next one. Workers that stay silent are dropped.
    fn collect_stats(&mut self, finished: &mut [bool], rows_computed: &mut [Option<u64>]) {
        let deadline = Instant::now() + self.options.stats_timeout;
        loop {
            let pending = (0..finished.len()).any(|w| self.writers[w].is_some() && !finished[w]);
            if !pending {
                return;
            }
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(wait) {
                Ok((id, Incoming::Frame(Frame::Stats(s)))) if s.worker_id as usize == id => {
                    finished[id] = true;
                    rows_computed[id] = Some(s.rows_computed);
                }
                Ok((_, Incoming::Frame(Frame::BatchResult(_)))) => {}
                Ok((id, _)) => self.drop_worker(id),
                Err(_) => {
                    for w in (0..finished.len()).filter(|&w| !finished[w]) {
                        self.drop_worker(w);
                    }
                    return;
                }
            }
        }
    }

    /// Closes every connection and waits for the reader threads.
    pub fn shutdown(mut self) {
        for id in 0..self.writers.len() {
            self.drop_worker(id);
        }
        for r in self.readers.drain(..) {
            let _ = r.join();
        }
    }
}

fn check_hello(task: &CodedTask, hello: &Hello) -> Result<usize> {
    let id = hello.worker_id as usize;
    let range = task
        .worker_ranges
        .get(id)
        .ok_or_else(|| Error::Protocol(format!("unknown worker id {id}")))?;
    if range.start != hello.row_start as usize
        || range.len != hello.row_count as usize
        || range.batches.len() != hello.batches as usize
    {
        return Err(Error::Protocol(format!(
            "worker {id} holds rows {}+{} in {} batches, task expects {}+{} in {}",
            hello.row_start,
            hello.row_count,
            hello.batches,
            range.start,
            range.len,
            range.batches.len()
        )));
    }
    Ok(id)
}

/// Connects, runs once, and disconnects.
pub fn run_master<A: AsRef<str>>(
    addrs: &[A],
    task: &CodedTask,
    x: &[f64],
    options: MasterOptions,
) -> Result<RunReport> {
    let mut master = Master::connect(addrs, task, options)?;
    let report = master.run(x);
    master.shutdown();
    report
}
