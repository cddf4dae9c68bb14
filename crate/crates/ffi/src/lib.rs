//! C interface to `hosdetect`.
//!
//! Records and reports are opaque heap handles created and destroyed through
//! this API. Every fallible call returns an [`HdStatus`]; on failure a
//! message for the calling thread is available from
//! [`hd_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hosdetect::detect::{self, Analysis, Axis};
use hosdetect::hardlimit;
use hosdetect::hos::{DEFAULT_MAX_TRI_BIN, DEFAULT_SEGMENT_CYCLES, DEFAULT_SIGMA_FLOOR};
use hosdetect::{Classification, DetectionConfig, LimitKind, SegmentConfig, WaveformRecord};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidRecord = 3,
    AnalysisFailed = 4,
    /// The requested value does not exist for this report, e.g. a saturation
    /// level when no limiter was detected.
    NotAvailable = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdLimitKind {
    Bilateral = 0,
    Unilateral = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdClassification {
    None = 0,
    Unilateral = 1,
    Bilateral = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdAxis {
    D = 0,
    Q = 1,
}

/// Analysis settings. Zero in any field selects its default.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdAnalyzeOptions {
    /// Segment count M; default is as many as the record holds.
    pub segments: usize,
    /// Segment length N; default covers eight nominal periods.
    pub seg_len: usize,
    /// Coherence threshold for a peak, in (0, 1).
    pub threshold: f64,
    /// Relative magnitude floor applied to each segment spectrum.
    pub sigma_floor: f64,
}

/// A validated waveform record, three-phase or dq.
pub struct HdRecord(WaveformRecord);

/// The result of an analysis: one report per axis.
pub struct HdReport {
    analysis: Analysis,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: HdStatus, msg: impl Into<String>) -> HdStatus {
    set_error(msg);
    status
}

/// Runs `f` with the error slot cleared, converting a panic into a status.
fn guard(f: impl FnOnce() -> HdStatus) -> HdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(HdStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn channel(p: *const f64, len: usize, name: &str) -> Result<Vec<f64>, HdStatus> {
    if p.is_null() {
        return Err(fail(HdStatus::NullPointer, format!("channel {name} is null")));
    }
    Ok(slice::from_raw_parts(p, len).to_vec())
}

fn sampling(sample_rate_hz: f64) -> Result<f64, HdStatus> {
    if sample_rate_hz.is_finite() && sample_rate_hz > 0.0 {
        Ok(1.0 / sample_rate_hz)
    } else {
        Err(fail(
            HdStatus::InvalidArgument,
            format!("sample rate must be finite and > 0, got {sample_rate_hz}"),
        ))
    }
}

unsafe fn put_record(out: *mut *mut HdRecord, build: impl FnOnce() -> Result<WaveformRecord, HdStatus>) -> HdStatus {
    if out.is_null() {
        return fail(HdStatus::NullPointer, "output pointer is null");
    }
    *out = ptr::null_mut();
    match build() {
        Ok(r) => {
            *out = Box::into_raw(Box::new(HdRecord(r)));
            HdStatus::Ok
        }
        Err(s) => s,
    }
}

/// Builds a three-phase record from `len` samples per phase.
///
/// # Safety
/// `a`, `b` and `c` must each point to `len` readable doubles and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hd_record_from_abc(
    a: *const f64,
    b: *const f64,
    c: *const f64,
    len: usize,
    sample_rate_hz: f64,
    nominal_freq_hz: f64,
    out: *mut *mut HdRecord,
) -> HdStatus {
    guard(|| {
        put_record(out, || {
            let dt = sampling(sample_rate_hz)?;
            let (a, b, c) = (channel(a, len, "a")?, channel(b, len, "b")?, channel(c, len, "c")?);
            WaveformRecord::three_phase(dt, nominal_freq_hz, a, b, c)
                .map_err(|e| fail(HdStatus::InvalidRecord, e.to_string()))
        })
    })
}

/// Builds a record from `len` samples of the d and q currents.
///
/// # Safety
/// `d` and `q` must each point to `len` readable doubles and `out` to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hd_record_from_dq(
    d: *const f64,
    q: *const f64,
    len: usize,
    sample_rate_hz: f64,
    nominal_freq_hz: f64,
    out: *mut *mut HdRecord,
) -> HdStatus {
    guard(|| {
        put_record(out, || {
            let dt = sampling(sample_rate_hz)?;
            let (d, q) = (channel(d, len, "d")?, channel(q, len, "q")?);
            WaveformRecord::dq(dt, nominal_freq_hz, d, q).map_err(|e| fail(HdStatus::InvalidRecord, e.to_string()))
        })
    })
}

/// Samples per channel, or 0 for a null handle.
///
/// # Safety
/// `record` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hd_record_len(record: *const HdRecord) -> usize {
    record.as_ref().map_or(0, |r| r.0.len())
}

/// Releases a record. Null is ignored.
///
/// # Safety
/// `record` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hd_record_free(record: *mut HdRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// Options with every field at its default (all zero).
#[no_mangle]
pub extern "C" fn hd_analyze_options_default() -> HdAnalyzeOptions {
    HdAnalyzeOptions {
        segments: 0,
        seg_len: 0,
        threshold: 0.0,
        sigma_floor: 0.0,
    }
}

fn configs(record: &WaveformRecord, o: &HdAnalyzeOptions) -> Result<(SegmentConfig, DetectionConfig), HdStatus> {
    let len = record.len();
    let seg_len = if o.seg_len > 0 {
        o.seg_len
    } else {
        SegmentConfig::covering(len, record.dt, record.nominal_freq_hz, DEFAULT_SEGMENT_CYCLES).seg_len
    };
    let segments = if o.segments > 0 { o.segments } else { len / seg_len };
    let seg = SegmentConfig {
        sigma_floor: if o.sigma_floor > 0.0 {
            o.sigma_floor
        } else {
            DEFAULT_SIGMA_FLOOR
        },
        max_tri_bin: DEFAULT_MAX_TRI_BIN.min(seg_len / 2),
        ..SegmentConfig::new(segments, seg_len)
    };
    seg.validate(len)
        .map_err(|e| fail(HdStatus::InvalidArgument, e.to_string()))?;
    let mut det = DetectionConfig::default();
    if o.threshold != 0.0 {
        det.sigma_b = o.threshold;
    }
    det.validate()
        .map_err(|e| fail(HdStatus::InvalidArgument, e.to_string()))?;
    Ok((seg, det))
}

/// Analyses a record. `options` may be null for all defaults.
///
/// # Safety
/// `record` must be a live handle, `options` null or readable, and `out`
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hd_analyze(
    record: *const HdRecord,
    options: *const HdAnalyzeOptions,
    out: *mut *mut HdReport,
) -> HdStatus {
    guard(|| {
        if out.is_null() {
            return fail(HdStatus::NullPointer, "output pointer is null");
        }
        *out = ptr::null_mut();
        let Some(record) = record.as_ref() else {
            return fail(HdStatus::NullPointer, "record is null");
        };
        let opts = options
            .as_ref()
            .copied()
            .unwrap_or_else(|| hd_analyze_options_default());
        let (seg, det) = match configs(&record.0, &opts) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let analysis = match detect::analyze(&record.0, &seg, &det) {
            Ok(a) => a,
            Err(e) => return fail(HdStatus::AnalysisFailed, e.to_string()),
        };
        let json = match serde_json::to_string_pretty(&analysis) {
            Ok(s) => CString::new(s).expect("json has no interior nul"),
            Err(e) => return fail(HdStatus::AnalysisFailed, e.to_string()),
        };
        *out = Box::into_raw(Box::new(HdReport { analysis, json }));
        HdStatus::Ok
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hd_report_free(report: *mut HdReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

fn axis(a: HdAxis) -> Axis {
    match a {
        HdAxis::D => Axis::D,
        HdAxis::Q => Axis::Q,
    }
}

unsafe fn read_report<T>(
    report: *const HdReport,
    out: *mut T,
    get: impl FnOnce(&HdReport) -> Result<T, HdStatus>,
) -> HdStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(HdStatus::NullPointer, "report is null");
        };
        if out.is_null() {
            return fail(HdStatus::NullPointer, "output pointer is null");
        }
        match get(r) {
            Ok(v) => {
                *out = v;
                HdStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Classification of one axis.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hd_report_classification(
    report: *const HdReport,
    which: HdAxis,
    out: *mut HdClassification,
) -> HdStatus {
    read_report(report, out, |r| {
        Ok(match r.analysis.report(axis(which)).classification {
            Classification::UnilateralSaturation => HdClassification::Unilateral,
            Classification::BilateralSaturation => HdClassification::Bilateral,
            Classification::NoHardLimitNonlinearity => HdClassification::None,
        })
    })
}

/// Estimated saturation level of one axis; `NotAvailable` when no limiter
/// was detected there.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hd_report_eta(report: *const HdReport, which: HdAxis, out: *mut f64) -> HdStatus {
    read_report(report, out, |r| {
        r.analysis.report(axis(which)).eta_sat.ok_or_else(|| {
            fail(
                HdStatus::NotAvailable,
                format!("no saturation level on the {} axis", axis(which)),
            )
        })
    })
}

/// Fundamental frequency found on one axis, in Hz.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hd_report_fundamental_hz(report: *const HdReport, which: HdAxis, out: *mut f64) -> HdStatus {
    read_report(report, out, |r| {
        r.analysis.report(axis(which)).fundamental_hz.ok_or_else(|| {
            fail(
                HdStatus::NotAvailable,
                format!("no dominant tone on the {} axis", axis(which)),
            )
        })
    })
}

/// Initial phase used for the dq projection; `NotAvailable` for dq input.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hd_report_theta0(report: *const HdReport, out: *mut f64) -> HdStatus {
    read_report(report, out, |r| {
        r.analysis
            .theta0
            .ok_or_else(|| fail(HdStatus::NotAvailable, "record was given in dq form"))
    })
}

/// The full report as JSON, owned by the report and valid until it is freed.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hd_report_to_json(report: *const HdReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.json.as_ptr())
}

unsafe fn scalar(out: *mut f64, f: impl FnOnce() -> Result<f64, hardlimit::HardLimitError>) -> HdStatus {
    guard(|| {
        if out.is_null() {
            return fail(HdStatus::NullPointer, "output pointer is null");
        }
        match f() {
            Ok(v) => {
                *out = v;
                HdStatus::Ok
            }
            Err(e) => fail(HdStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Third-harmonic distortion of a bilateral limiter driven at level `eta`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hd_hd3_bilateral(eta: f64, out: *mut f64) -> HdStatus {
    scalar(out, || hardlimit::hd3_bilateral(eta))
}

/// Second-harmonic distortion of a unilateral limiter driven at level `eta`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hd_hd2_unilateral(eta: f64, out: *mut f64) -> HdStatus {
    scalar(out, || hardlimit::hd2_unilateral(eta))
}

/// Saturation level that produces distortion `hd` for the given limiter.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hd_invert_saturation(hd: f64, kind: HdLimitKind, out: *mut f64) -> HdStatus {
    let kind = match kind {
        HdLimitKind::Bilateral => LimitKind::Bilateral,
        HdLimitKind::Unilateral => LimitKind::Unilateral,
    };
    scalar(out, || hardlimit::invert_saturation(hd, kind).map(|s| s.value()))
}

/// Copies the calling thread's last error message into `buf` (nul
/// terminated, truncated to `cap`). Returns the full message length
/// excluding the nul, or 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hd_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && cap > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version, a static nul-terminated string.
#[no_mangle]
pub extern "C" fn hd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
