//! Length-prefixed binary frames: a `u32` little-endian length (payload
//! size + 1), one kind byte, then the payload.

use std::io::{self, Read, Write};

use crate::coding::{f64s_from_le, PartialResult};
use crate::error::{Error, Result};

pub const KIND_HELLO: u8 = 0x01;
pub const KIND_INPUT_VECTOR: u8 = 0x02;
pub const KIND_BATCH_RESULT: u8 = 0x03;
pub const KIND_STOP: u8 = 0x04;
pub const KIND_STATS: u8 = 0x05;

/// Default cap on a frame's length field.
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

/// What a worker holds, announced when a master connects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hello {
    pub worker_id: u32,
    pub row_start: u32,
    pub row_count: u32,
    pub batches: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub worker_id: u32,
    pub batch_index: u32,
    pub row_start: u32,
    pub values: Vec<f64>,
}

impl From<BatchResult> for PartialResult {
    fn from(b: BatchResult) -> Self {
        PartialResult {
            worker_id: b.worker_id as usize,
            batch_index: b.batch_index as usize,
            row_start: b.row_start as usize,
            values: b.values,
        }
    }
}

/// Sent by a worker when it finishes or abandons a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub worker_id: u32,
    pub batches_sent: u32,
    pub rows_computed: u64,
    pub busy_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Hello(Hello),
    InputVector(Vec<f64>),
    BatchResult(BatchResult),
    Stop,
    Stats(Stats),
}

impl Frame {
    pub fn kind(&self) -> u8 {
        match self {
            Frame::Hello(_) => KIND_HELLO,
            Frame::InputVector(_) => KIND_INPUT_VECTOR,
            Frame::BatchResult(_) => KIND_BATCH_RESULT,
            Frame::Stop => KIND_STOP,
            Frame::Stats(_) => KIND_STATS,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        match self {
            Frame::Hello(h) => {
                for v in [h.worker_id, h.row_start, h.row_count, h.batches] {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
            Frame::InputVector(x) => put_f64s(&mut payload, x),
            Frame::BatchResult(b) => {
                payload.reserve(16 + 8 * b.values.len());
                for v in [b.worker_id, b.batch_index, b.row_start, b.values.len() as u32] {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                put_f64s(&mut payload, &b.values);
            }
            Frame::Stop => {}
            Frame::Stats(s) => {
                payload.extend_from_slice(&s.worker_id.to_le_bytes());
                payload.extend_from_slice(&s.batches_sent.to_le_bytes());
                payload.extend_from_slice(&s.rows_computed.to_le_bytes());
                payload.extend_from_slice(&s.busy_seconds.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(5 + payload.len());
        out.extend_from_slice(&((payload.len() + 1) as u32).to_le_bytes());
        out.push(self.kind());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(kind: u8, payload: &[u8]) -> Result<Frame> {
        let bad = |what: &str| Error::Protocol(format!("malformed {what} frame ({} payload bytes)", payload.len()));
        let u32_at = |i: usize| u32::from_le_bytes(payload[i..i + 4].try_into().expect("4 bytes"));
        match kind {
            KIND_HELLO => {
                if payload.len() != 16 {
                    return Err(bad("HELLO"));
                }
                Ok(Frame::Hello(Hello {
                    worker_id: u32_at(0),
                    row_start: u32_at(4),
                    row_count: u32_at(8),
                    batches: u32_at(12),
                }))
            }
            KIND_INPUT_VECTOR => {
                if !payload.len().is_multiple_of(8) {
                    return Err(bad("INPUT_VECTOR"));
                }
                Ok(Frame::InputVector(f64s_from_le(payload)))
            }
            KIND_BATCH_RESULT => {
                if payload.len() < 16 || (payload.len() - 16) != 8 * u32_at(12) as usize {
                    return Err(bad("BATCH_RESULT"));
                }
                Ok(Frame::BatchResult(BatchResult {
                    worker_id: u32_at(0),
                    batch_index: u32_at(4),
                    row_start: u32_at(8),
                    values: f64s_from_le(&payload[16..]),
                }))
            }
            KIND_STOP => {
                if !payload.is_empty() {
                    return Err(bad("STOP"));
                }
                Ok(Frame::Stop)
            }
            KIND_STATS => {
                if payload.len() != 24 {
                    return Err(bad("STATS"));
                }
                Ok(Frame::Stats(Stats {
                    worker_id: u32_at(0),
                    batches_sent: u32_at(4),
                    rows_computed: u64::from_le_bytes(payload[8..16].try_into().expect("8 bytes")),
                    busy_seconds: f64::from_le_bytes(payload[16..24].try_into().expect("8 bytes")),
                }))
            }
            other => Err(Error::Protocol(format!("unknown frame kind 0x{other:02x}"))),
        }
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(8 * values.len());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before the length
/// prefix; a length of zero or above `max_frame` is a protocol error.
pub fn read_frame<R: Read>(r: &mut R, max_frame: usize) -> Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len == 0 {
        return Err(Error::Protocol("zero-length frame".into()));
    }
    if len > max_frame {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds cap of {max_frame}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Frame::decode(body[0], &body[1..]).map(Some)
}
