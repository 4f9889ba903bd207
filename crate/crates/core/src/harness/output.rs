//! Trace, event and summary files.
//!
//! Floats are written with 17 significant digits so that reading a file
//! back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::params::DerivedConstants;

use super::engine::{EventRecord, RunOutput, RunSummary, TraceRecord};

pub const TRACE_HEADER: [&str; 18] = [
    "t", "y", "U", "Uc", "d", "m", "f", "V1", "Vhat", "W", "barrier", "V2", "V", "norm_uv", "norm_err",
    "alpha_hat_1", "beta_tilde_0", "event",
];
pub const EVENTS_HEADER: [&str; 5] = ["event_index", "t_j", "dwell", "d_before", "U_new"];

pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONSTANTS_FILE: &str = "constants.txt";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

/// Writes every `decimate`-th row plus every event row and the last row.
pub fn write_trace(path: &Path, trace: &[TraceRecord], decimate: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER)?;
    let last = trace.len().saturating_sub(1);
    for (n, r) in trace.iter().enumerate() {
        if n % decimate.max(1) != 0 && !r.event && n != last {
            continue;
        }
        let mut row: Vec<String> = [r.t, r.y, r.u, r.u_c, r.d, r.m, r.f, r.v1, r.v_hat, r.w, r.barrier]
            .into_iter()
            .map(fmt_f64)
            .collect();
        row.push(fmt_opt(r.v2));
        row.push(fmt_opt(r.v));
        row.extend([r.norm_uv, r.norm_err, r.alpha_hat_1, r.beta_tilde_0].map(fmt_f64));
        row.push(if r.event { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([e.index.to_string(), fmt_f64(e.t), fmt_opt(e.dwell), fmt_f64(e.d_before), fmt_f64(e.u_new)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_text(s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode = {}", s.mode);
    let _ = writeln!(out, "steps = {}", s.steps);
    let _ = writeln!(out, "events = {}", s.events);
    let rows = [
        ("dt", Some(s.dt)),
        ("tau", Some(s.tau)),
        ("gamma", Some(s.gamma)),
        ("c", Some(s.c)),
        ("min_dwell", s.min_dwell),
        ("mean_dwell", s.mean_dwell),
        ("max_dwell", s.max_dwell),
        ("initial_norm_uv", Some(s.initial_norm_uv)),
        ("final_norm_uv", Some(s.final_norm_uv)),
        ("initial_norm_err", Some(s.initial_norm_err)),
        ("final_norm_err", Some(s.final_norm_err)),
        ("v_hat_decay_rate", s.v_hat_decay_rate),
        ("min_m", Some(s.min_m)),
        ("min_w", Some(s.min_w)),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k} = {}", v.map(fmt_f64).unwrap_or_else(|| "none".into()));
    }
    out
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub trace: PathBuf,
    pub events: PathBuf,
    pub summary: PathBuf,
    pub constants: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trace: dir.join(TRACE_FILE),
            events: dir.join(EVENTS_FILE),
            summary: dir.join(SUMMARY_FILE),
            constants: dir.join(CONSTANTS_FILE),
        }
    }
}

pub fn write_run(dir: &Path, out: &RunOutput, consts: &DerivedConstants, decimate: usize) -> Result<RunFiles> {
    fs::create_dir_all(dir)?;
    let files = RunFiles::in_dir(dir);
    write_trace(&files.trace, &out.trace, decimate)?;
    write_events(&files.events, &out.events)?;
    fs::write(&files.summary, summary_text(&out.summary))?;
    fs::write(&files.constants, consts.report())?;
    Ok(files)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::Trace { path: path.to_path_buf(), reason: e.to_string() })
}

fn check_header(path: &Path, r: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = r.headers().map_err(|e| Error::Trace { path: path.to_path_buf(), reason: e.to_string() })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Trace { path: path.to_path_buf(), reason: format!("unexpected header {header:?}") });
    }
    Ok(())
}

fn parse_field(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Trace { path: path.to_path_buf(), reason: format!("line {line}: bad number {s:?}") })
}

fn parse_opt(path: &Path, line: usize, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(path, line, s).map(Some)
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &TRACE_HEADER)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Trace { path: path.to_path_buf(), reason: e.to_string() })?;
        let num = |i: usize| parse_field(path, line, &rec[i]);
        out.push(TraceRecord {
            t: num(0)?,
            y: num(1)?,
            u: num(2)?,
            u_c: num(3)?,
            d: num(4)?,
            m: num(5)?,
            f: num(6)?,
            v1: num(7)?,
            v_hat: num(8)?,
            w: num(9)?,
            barrier: num(10)?,
            v2: parse_opt(path, line, &rec[11])?,
            v: parse_opt(path, line, &rec[12])?,
            norm_uv: num(13)?,
            norm_err: num(14)?,
            alpha_hat_1: num(15)?,
            beta_tilde_0: num(16)?,
            event: match &rec[17] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Trace { path: path.to_path_buf(), reason: format!("line {line}: bad event flag {other:?}") })
                }
            },
        });
    }
    if out.is_empty() {
        return Err(Error::Trace { path: path.to_path_buf(), reason: "no rows".into() });
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &EVENTS_HEADER)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Trace { path: path.to_path_buf(), reason: e.to_string() })?;
        let index = rec[0]
            .parse::<usize>()
            .map_err(|_| Error::Trace { path: path.to_path_buf(), reason: format!("line {line}: bad index") })?;
        out.push(EventRecord {
            index,
            t: parse_field(path, line, &rec[1])?,
            dwell: parse_opt(path, line, &rec[2])?,
            d_before: parse_field(path, line, &rec[3])?,
            u_new: parse_field(path, line, &rec[4])?,
        });
    }
    Ok(out)
}
