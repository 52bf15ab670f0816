#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

pub fn bpcc() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bpcc"));
    cmd.env_remove("BPCC_SEED")
        .env_remove("BPCC_DELAY_FACTOR")
        .env_remove("BPCC_DROP")
        .env_remove("BPCC_CRASH_AFTER");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bpcc().args(args).output().expect("bpcc runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "bpcc failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// A `bpcc worker` child process, killed on drop.
pub struct WorkerProcess {
    child: Child,
    pub addr: String,
}

impl WorkerProcess {
    pub fn spawn(dir: &Path, extra: &[&str]) -> Self {
        let mut child = bpcc()
            .arg("worker")
            .arg("--dir")
            .arg(dir)
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("worker starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();
        Self { child, addr }
    }
}

impl Drop for WorkerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn addresses(workers: &[WorkerProcess]) -> String {
    workers.iter().map(|w| w.addr.as_str()).collect::<Vec<_>>().join(",")
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}
