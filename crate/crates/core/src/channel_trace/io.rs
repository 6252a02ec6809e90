//! Trace files.
//!
//! CSV: header `time_s,gain`, one row per sample, shortest round-trip
//! decimal formatting. The sample rate is recovered from the first time step.
//!
//! Binary (all little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 8    | magic `FSOTRC01`          |
//! | 8      | 8    | sample count (u64)        |
//! | 16     | 8    | sample rate, Hz (f64)     |
//! | 24     | 8    | coherence time, s (f64)   |
//! | 32     | 8    | seed (u64)                |
//! | 40     | 8·n  | gains (f64)               |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ChannelTrace;
use crate::error::{FsoError, Result};

pub const TRACE_MAGIC: &[u8; 8] = b"FSOTRC01";
const HEADER_LEN: usize = 40;

pub fn write_csv<W: Write>(trace: &ChannelTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "gain"])?;
    for (i, g) in trace.gains.iter().enumerate() {
        let t = i as f64 / trace.sample_rate_hz;
        w.write_record([t.to_string(), g.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<ChannelTrace> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["time_s", "gain"] {
        return Err(FsoError::Format(format!(
            "expected header `time_s,gain`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut gains = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| FsoError::Format(format!("bad number on data row {}", line + 1)))
        };
        times.push(parse(0)?);
        let g = parse(1)?;
        if !(g >= 0.0) {
            return Err(FsoError::Format(format!("negative gain on data row {}", line + 1)));
        }
        gains.push(g);
    }
    if times.len() < 2 || !(times[1] > times[0]) {
        return Err(FsoError::Format(
            "trace CSV needs at least two increasing time stamps".into(),
        ));
    }
    Ok(ChannelTrace {
        sample_rate_hz: 1.0 / (times[1] - times[0]),
        seed: 0,
        coherence_time_s: 0.0,
        gains,
    })
}

pub fn write_binary<W: Write>(trace: &ChannelTrace, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let io = |e| FsoError::io("<trace output>", e);
    w.write_all(TRACE_MAGIC).map_err(io)?;
    w.write_all(&(trace.gains.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&trace.sample_rate_hz.to_le_bytes()).map_err(io)?;
    w.write_all(&trace.coherence_time_s.to_le_bytes()).map_err(io)?;
    w.write_all(&trace.seed.to_le_bytes()).map_err(io)?;
    for g in &trace.gains {
        w.write_all(&g.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_binary<R: Read>(input: R) -> Result<ChannelTrace> {
    let mut r = BufReader::new(input);
    let io = |e| FsoError::io("<trace input>", e);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| FsoError::Format("trace file shorter than its header".into()))?;
    if &header[..8] != TRACE_MAGIC {
        return Err(FsoError::Format("missing FSOTRC01 magic".into()));
    }
    let word = |i: usize| -> [u8; 8] { header[i..i + 8].try_into().expect("8-byte field") };
    let count = u64::from_le_bytes(word(8)) as usize;
    let sample_rate_hz = f64::from_le_bytes(word(16));
    let coherence_time_s = f64::from_le_bytes(word(24));
    let seed = u64::from_le_bytes(word(32));
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(io)?;
    if body.len() != count * 8 {
        return Err(FsoError::Format(format!(
            "header declares {count} samples but body holds {} bytes",
            body.len()
        )));
    }
    let gains = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte sample")))
        .collect();
    Ok(ChannelTrace {
        sample_rate_hz,
        seed,
        coherence_time_s,
        gains,
    })
}

pub fn save(trace: &ChannelTrace, path: &Path, binary: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| FsoError::io(path, e))?;
    if binary {
        write_binary(trace, file)
    } else {
        write_csv(trace, BufWriter::new(file))
    }
}
