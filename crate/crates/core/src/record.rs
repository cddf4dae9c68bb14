//! On-disk formats: CSV waveform records and JSON analysis reports.
//!
//! A record file starts with `#` metadata lines of whitespace-separated
//! `key=value` pairs, followed by a column header and one row per sample:
//!
//! ```text
//! # format=abc sample_rate_hz=1000 nominal_freq_hz=50 seed=7
//! t,ia,ib,ic
//! 0.0000000000000000e0,...
//! ```
//!
//! Numbers are written with 17 significant digits so a write/read cycle is
//! lossless.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detect::{Analysis, Axis, Classification, DetectionConfig, DetectionReport};
use crate::dq::{Channels, DqError, WaveformRecord};
use crate::hos::SegmentConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Relative deviation allowed between a declared sample rate and the one
/// implied by the time column.
const RATE_TOLERANCE: f64 = 1e-6;

/// Time-column jitter allowed, as a fraction of the sampling interval.
const JITTER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("empty record file")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing metadata: {0}")]
    MissingMeta(&'static str),
    #[error("non-uniform sampling: sample {index} deviates {deviation:.3e} s from the uniform grid (dt = {dt:.6e} s)")]
    NonUniform { index: usize, deviation: f64, dt: f64 },
    #[error("sample rate {declared} Hz disagrees with the time column ({measured} Hz)")]
    RateMismatch { declared: f64, measured: f64 },
    #[error(transparent)]
    Record(#[from] DqError),
    #[error("report contains a non-finite number at {0}")]
    NonFinite(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    Abc,
    Dq,
}

impl RecordFormat {
    fn columns(self) -> &'static [&'static str] {
        match self {
            RecordFormat::Abc => &["t", "ia", "ib", "ic"],
            RecordFormat::Dq => &["t", "id", "iq"],
        }
    }

    fn name(self) -> &'static str {
        match self {
            RecordFormat::Abc => "abc",
            RecordFormat::Dq => "dq",
        }
    }
}

/// Header metadata. Keys other than the standard ones are kept in
/// `extra` in file order; repeated keys are allowed (for example one
/// `event` entry per simulator event).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordMeta {
    pub sample_rate_hz: Option<f64>,
    pub nominal_freq_hz: Option<f64>,
    pub seed: Option<u64>,
    pub t0: f64,
    pub extra: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub format: RecordFormat,
    pub meta: RecordMeta,
    pub record: WaveformRecord,
}

/// Overrides applied while loading, typically from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub sample_rate_hz: Option<f64>,
    pub nominal_freq_hz: Option<f64>,
}

pub fn format_of(record: &WaveformRecord) -> RecordFormat {
    match record.channels() {
        Channels::Abc { .. } => RecordFormat::Abc,
        Channels::Dq { .. } => RecordFormat::Dq,
    }
}

pub fn write_record<W: Write>(
    mut w: W,
    record: &WaveformRecord,
    seed: Option<u64>,
    extra: &[(String, String)],
) -> io::Result<()> {
    let format = format_of(record);
    write!(
        w,
        "# format={} sample_rate_hz={} nominal_freq_hz={}",
        format.name(),
        record.sample_rate_hz(),
        record.nominal_freq_hz
    )?;
    if let Some(s) = seed {
        write!(w, " seed={s}")?;
    }
    writeln!(w)?;
    for (k, v) in extra {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{}", format.columns().join(","))?;
    let cols: Vec<&[f64]> = match record.channels() {
        Channels::Abc { a, b, c } => vec![a, b, c],
        Channels::Dq { d, q } => vec![d, q],
    };
    for i in 0..record.len() {
        write!(w, "{:.16e}", i as f64 * record.dt)?;
        for c in &cols {
            write!(w, ",{:.16e}", c[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_record(
    path: &Path,
    record: &WaveformRecord,
    seed: Option<u64>,
    extra: &[(String, String)],
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_record(&mut w, record, seed, extra)?;
    w.flush()
}

fn parse_err(line: usize, msg: impl Into<String>) -> RecordError {
    RecordError::Parse { line, msg: msg.into() }
}

fn parse_meta_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, RecordError> {
    v.parse()
        .map_err(|_| parse_err(line, format!("bad value for {key}: {v:?}")))
}

pub fn read_record<R: BufRead>(r: R, opts: LoadOptions) -> Result<RecordFile, RecordError> {
    let mut format = None;
    let mut meta = RecordMeta::default();
    let mut header: Option<Vec<String>> = None;
    let mut t = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();

    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('#') {
            if header.is_some() {
                return Err(parse_err(lineno, "metadata after the column header"));
            }
            for tok in rest.split_whitespace() {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| parse_err(lineno, format!("expected key=value, got {tok:?}")))?;
                match k {
                    "format" => {
                        format = Some(match v {
                            "abc" => RecordFormat::Abc,
                            "dq" => RecordFormat::Dq,
                            _ => return Err(parse_err(lineno, format!("unknown format {v:?}"))),
                        })
                    }
                    "sample_rate_hz" => meta.sample_rate_hz = Some(parse_meta_value(lineno, k, v)?),
                    "nominal_freq_hz" => meta.nominal_freq_hz = Some(parse_meta_value(lineno, k, v)?),
                    "seed" => meta.seed = Some(parse_meta_value(lineno, k, v)?),
                    _ => meta.extra.push((k.to_string(), v.to_string())),
                }
            }
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        match &header {
            None => {
                let names: Vec<String> = fields.iter().map(|s| s.to_ascii_lowercase()).collect();
                let fmt = match format {
                    Some(f) => f,
                    None => [RecordFormat::Abc, RecordFormat::Dq]
                        .into_iter()
                        .find(|f| f.columns() == names.as_slice())
                        .ok_or_else(|| parse_err(lineno, "no format marker and unrecognised columns"))?,
                };
                if names != fmt.columns() {
                    return Err(parse_err(
                        lineno,
                        format!("expected columns {}, got {}", fmt.columns().join(","), text),
                    ));
                }
                format = Some(fmt);
                cols = vec![Vec::new(); names.len() - 1];
                header = Some(names);
            }
            Some(names) => {
                if fields.len() != names.len() {
                    return Err(parse_err(
                        lineno,
                        format!("expected {} cells, found {}", names.len(), fields.len()),
                    ));
                }
                let mut values = Vec::with_capacity(fields.len());
                for (name, f) in names.iter().zip(&fields) {
                    if f.is_empty() {
                        return Err(parse_err(lineno, format!("missing {name} cell")));
                    }
                    let v: f64 = f
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad number in {name}: {f:?}")))?;
                    if !v.is_finite() {
                        return Err(parse_err(lineno, format!("non-finite {name}")));
                    }
                    values.push(v);
                }
                t.push(values[0]);
                for (c, v) in cols.iter_mut().zip(&values[1..]) {
                    c.push(*v);
                }
            }
        }
    }

    let format = format.ok_or(RecordError::Empty)?;
    if header.is_none() || t.is_empty() {
        return Err(RecordError::Empty);
    }
    if t.len() < 2 {
        return Err(DqError::TooShort(t.len()).into());
    }
    let dt = uniform_interval(&t)?;
    meta.t0 = t[0];
    let measured = 1.0 / dt;
    let declared = opts.sample_rate_hz.or(meta.sample_rate_hz);
    if let Some(fs) = declared {
        if !((fs - measured).abs() <= RATE_TOLERANCE * measured) {
            return Err(RecordError::RateMismatch { declared: fs, measured });
        }
    }
    meta.sample_rate_hz = Some(measured);
    if opts.nominal_freq_hz.is_some() {
        meta.nominal_freq_hz = opts.nominal_freq_hz;
    }
    let f0 = meta
        .nominal_freq_hz
        .ok_or(RecordError::MissingMeta("nominal_freq_hz"))?;
    let mut it = cols.into_iter();
    let mut next = || it.next().unwrap_or_default();
    let record = match format {
        RecordFormat::Abc => WaveformRecord::three_phase(dt, f0, next(), next(), next())?,
        RecordFormat::Dq => WaveformRecord::dq(dt, f0, next(), next())?,
    };
    Ok(RecordFile { format, meta, record })
}

pub fn load_record(path: &Path, opts: LoadOptions) -> Result<RecordFile, RecordError> {
    read_record(BufReader::new(File::open(path)?), opts)
}

/// Interval of a monotone, uniformly spaced time column.
fn uniform_interval(t: &[f64]) -> Result<f64, RecordError> {
    let n = t.len();
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(RecordError::NonUniform {
            index: 1,
            deviation: t[1] - t[0],
            dt,
        });
    }
    // the grid position carries its own rounding, so the bound also admits a
    // few ulps of the time value itself
    for (i, &ti) in t.iter().enumerate() {
        let expect = t[0] + i as f64 * dt;
        let deviation = ti - expect;
        let slack = JITTER_TOLERANCE * dt + 4.0 * f64::EPSILON * ti.abs().max(expect.abs());
        if deviation.abs() > slack {
            return Err(RecordError::NonUniform {
                index: i,
                deviation,
                dt,
            });
        }
    }
    Ok(dt)
}

/// Lower-case hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub sha256: String,
    pub format: RecordFormat,
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub nominal_freq_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// The effective configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub segment: SegmentConfig,
    pub detection: DetectionConfig,
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub input: InputInfo,
    pub config: ConfigEcho,
    /// Initial phase used for the dq projection of three-phase input.
    pub theta0: Option<f64>,
    pub reports: Vec<DetectionReport>,
}

impl ReportFile {
    pub fn new(
        input: InputInfo,
        segment: SegmentConfig,
        detection: DetectionConfig,
        axes: &[Axis],
        analysis: &Analysis,
    ) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input,
            config: ConfigEcho {
                segment,
                detection,
                axes: axes.to_vec(),
            },
            theta0: analysis.theta0,
            reports: axes.iter().map(|&a| analysis.report(a).clone()).collect(),
        }
    }

    /// Process exit code: 10 if any axis is unilateral, else 11 if any is
    /// bilateral, else 0.
    pub fn exit_code(&self) -> i32 {
        let has = |c| self.reports.iter().any(|r| r.classification == c);
        if has(Classification::UnilateralSaturation) {
            10
        } else if has(Classification::BilateralSaturation) {
            11
        } else {
            0
        }
    }

    /// JSON has no encoding for NaN or infinity, so they are rejected rather
    /// than silently written as null.
    pub fn check_finite(&self) -> Result<(), RecordError> {
        if !(self.input.sample_rate_hz.is_finite() && self.input.nominal_freq_hz.is_finite()) {
            return Err(RecordError::NonFinite("input".into()));
        }
        if self.theta0.is_some_and(|v| !v.is_finite()) {
            return Err(RecordError::NonFinite("theta0".into()));
        }
        for r in &self.reports {
            if report_numbers(r).iter().any(|v| !v.is_finite()) {
                return Err(RecordError::NonFinite(format!("{}-axis report", r.axis)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, RecordError> {
        self.check_finite()?;
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn report_numbers(r: &DetectionReport) -> Vec<f64> {
    let mut v: Vec<f64> = r.fundamental_hz.into_iter().chain(r.eta_sat).collect();
    if let Some(h) = r.harmonic_amplitudes {
        v.push(h.b1);
        v.extend(h.a2);
        v.extend(h.b3);
    }
    for p in r.bic_peaks.entries.iter().chain(&r.tric_peaks.entries) {
        v.push(p.value);
        v.push(p.clamped);
        v.extend(&p.freqs_hz);
    }
    v
}

/// Metadata pairs describing a simulator run, for [`write_record`].
pub fn simulation_meta(spec_digest: &str, events: &[crate::vscsim::Event]) -> Vec<(String, String)> {
    let mut out = vec![("spec_sha256".to_string(), spec_digest.to_string())];
    for e in events {
        // compact JSON has no whitespace, so it survives the key=value split
        let json = serde_json::to_string(e).expect("events serialize");
        out.push(("event".to_string(), json));
    }
    out
}
