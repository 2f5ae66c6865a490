//! File formats: PPG and heart-rate CSVs and binary model files. CSV
//! parsing is strict and reports 1-based line and column positions;
//! nothing is repaired on the way in. Writers emit LF line endings, a
//! trailing newline, and shortest round-trip decimals.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::models::{deserialize, serialize, ModelArtifact, ModelError};
use crate::signal::{HrSeries, PpgRecording, HR_MAX_BPM, HR_MIN_BPM};

/// Sample times may deviate from a uniform grid by at most this.
const SPACING_TOL_S: f64 = 1e-6;

const PPG_HEADER_1CH: &str = "t_s,ch1";
const PPG_HEADER_2CH: &str = "t_s,ch1,ch2";
const HR_HEADER: &str = "t_s,hr_bpm";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{col}: {reason}")]
    Csv {
        path: String,
        line: usize,
        col: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Model {
        path: String,
        source: ModelError,
    },
}

/// A format problem at a 1-based line and column.
#[derive(Debug, PartialEq)]
pub(crate) struct CsvViolation {
    pub line: usize,
    pub col: usize,
    pub reason: String,
}

impl CsvViolation {
    fn new(line: usize, col: usize, reason: impl Into<String>) -> Self {
        Self {
            line,
            col,
            reason: reason.into(),
        }
    }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn attach_path(path: &Path) -> impl Fn(CsvViolation) -> IoError + '_ {
    move |v| IoError::Csv {
        path: path_str(path),
        line: v.line,
        col: v.col,
        reason: v.reason,
    }
}

/// Split one line into fields with their 1-based starting columns.
fn split_fields(line: &str) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, b) in line.bytes().enumerate() {
        if b == b',' {
            out.push((&line[start..i], start + 1));
            start = i + 1;
        }
    }
    out.push((&line[start..], start + 1));
    out
}

fn parse_field(field: &str, line: usize, col: usize, what: &str) -> Result<f64, CsvViolation> {
    let v: f64 = field
        .parse()
        .map_err(|_| CsvViolation::new(line, col, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(CsvViolation::new(
            line,
            col,
            format!("{what} {field:?} is not finite"),
        ));
    }
    Ok(v)
}

/// Data lines of a CSV body: (1-based line number, content), the optional
/// final newline consumed.
fn body_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    trimmed
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .skip(1)
}

fn check_header(text: &str, allowed: &[&str]) -> Result<usize, CsvViolation> {
    let first = text.split('\n').next().unwrap_or("");
    for (i, h) in allowed.iter().enumerate() {
        if first == *h {
            return Ok(i);
        }
    }
    let wanted = allowed
        .iter()
        .map(|h| format!("{h:?}"))
        .collect::<Vec<_>>()
        .join(" or ");
    Err(CsvViolation::new(
        1,
        1,
        format!("expected header {wanted}, found {first:?}"),
    ))
}

/// Times must sit on a uniform grid; returns the rate in Hz.
fn infer_rate(times: &[f64], first_data_line: usize) -> Result<f64, CsvViolation> {
    if times.len() < 2 {
        return Err(CsvViolation::new(
            first_data_line,
            1,
            "need at least 2 samples to infer the sample rate",
        ));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(CsvViolation::new(
            first_data_line + 1,
            1,
            format!("time step {dt} is not positive"),
        ));
    }
    for i in 2..times.len() {
        let step = times[i] - times[i - 1];
        if (step - dt).abs() > SPACING_TOL_S {
            return Err(CsvViolation::new(
                first_data_line + i,
                1,
                format!("time step {step} deviates from {dt} by more than {SPACING_TOL_S}"),
            ));
        }
    }
    Ok((times.len() - 1) as f64 / (times[times.len() - 1] - times[0]))
}

pub(crate) fn parse_ppg_csv(text: &str) -> Result<PpgRecording, CsvViolation> {
    let n_channels = check_header(text, &[PPG_HEADER_1CH, PPG_HEADER_2CH])? + 1;
    let mut times = Vec::new();
    let mut channels = vec![Vec::new(); n_channels];
    for (line_no, line) in body_lines(text) {
        let fields = split_fields(line);
        if fields.len() != n_channels + 1 {
            let col = fields
                .get(n_channels + 1)
                .map(|&(_, c)| c)
                .unwrap_or(line.len() + 1);
            return Err(CsvViolation::new(
                line_no,
                col,
                format!("expected {} fields, found {}", n_channels + 1, fields.len()),
            ));
        }
        times.push(parse_field(fields[0].0, line_no, fields[0].1, "time")?);
        for ch in 0..n_channels {
            let (f, col) = fields[ch + 1];
            channels[ch].push(parse_field(f, line_no, col, "sample")?);
        }
    }
    let fs_hz = infer_rate(&times, 2)?;
    Ok(PpgRecording {
        fs_hz,
        channels,
        t0_s: times[0],
    })
}

pub(crate) fn parse_hr_csv(text: &str) -> Result<HrSeries, CsvViolation> {
    check_header(text, &[HR_HEADER])?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line_no, line) in body_lines(text) {
        let fields = split_fields(line);
        if fields.len() != 2 {
            let col = fields.get(2).map(|&(_, c)| c).unwrap_or(line.len() + 1);
            return Err(CsvViolation::new(
                line_no,
                col,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        times.push(parse_field(fields[0].0, line_no, fields[0].1, "time")?);
        let (f, col) = fields[1];
        let hr = parse_field(f, line_no, col, "heart rate")?;
        if !(HR_MIN_BPM..=HR_MAX_BPM).contains(&hr) {
            return Err(CsvViolation::new(
                line_no,
                col,
                format!("heart rate {hr} outside [{HR_MIN_BPM}, {HR_MAX_BPM}]"),
            ));
        }
        values.push(hr);
    }
    let rate_hz = infer_rate(&times, 2)?;
    Ok(HrSeries {
        rate_hz,
        values,
        t0_s: times[0],
    })
}

pub(crate) fn render_ppg_csv(rec: &PpgRecording) -> String {
    let mut out = String::new();
    out.push_str(if rec.channels.len() == 1 {
        PPG_HEADER_1CH
    } else {
        PPG_HEADER_2CH
    });
    out.push('\n');
    for i in 0..rec.len() {
        let _ = write!(out, "{}", rec.t0_s + i as f64 / rec.fs_hz);
        for ch in &rec.channels {
            let _ = write!(out, ",{}", ch[i]);
        }
        out.push('\n');
    }
    out
}

pub(crate) fn render_hr_csv(series: &HrSeries) -> String {
    let mut out = String::from(HR_HEADER);
    out.push('\n');
    for (i, v) in series.values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", series.time_of(i), v);
    }
    out
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path_str(path),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::File {
        path: path_str(path),
        source,
    })
}

/// Read a PPG recording CSV (`t_s,ch1` or `t_s,ch1,ch2`).
pub fn read_ppg_csv(path: impl AsRef<Path>) -> Result<PpgRecording, IoError> {
    let path = path.as_ref();
    parse_ppg_csv(&read_to_string(path)?).map_err(attach_path(path))
}

pub fn write_ppg_csv(path: impl AsRef<Path>, rec: &PpgRecording) -> Result<(), IoError> {
    write_file(path.as_ref(), render_ppg_csv(rec).as_bytes())
}

/// Read a heart-rate CSV (`t_s,hr_bpm`); rates must lie in [20, 230].
pub fn read_hr_csv(path: impl AsRef<Path>) -> Result<HrSeries, IoError> {
    let path = path.as_ref();
    parse_hr_csv(&read_to_string(path)?).map_err(attach_path(path))
}

pub fn write_hr_csv(path: impl AsRef<Path>, series: &HrSeries) -> Result<(), IoError> {
    write_file(path.as_ref(), render_hr_csv(series).as_bytes())
}

/// Read a binary model file.
pub fn read_model(path: impl AsRef<Path>) -> Result<ModelArtifact, IoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| IoError::File {
        path: path_str(path),
        source,
    })?;
    deserialize(&bytes).map_err(|source| IoError::Model {
        path: path_str(path),
        source,
    })
}

pub fn write_model(path: impl AsRef<Path>, m: &ModelArtifact) -> Result<(), IoError> {
    write_file(path.as_ref(), &serialize(m))
}
