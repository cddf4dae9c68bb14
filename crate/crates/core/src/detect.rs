//! Peak extraction, classification and saturation-level estimation.
//!
//! A record is reduced to its d and q channels, each channel gets a power
//! spectrum, bicoherence and tricoherence, and the coherence peaks are read
//! against the harmonic grid of the dominant tone:
//!
//! | bicoherence grid peaks | tricoherence grid peaks | class            |
//! |------------------------|-------------------------|------------------|
//! | yes                    | yes                     | unilateral       |
//! | no                     | yes, all-odd indices    | bilateral        |
//! | no                     | no                      | none             |
//!
//! Bicoherence peaks without tricoherence support cannot come from either
//! limiter type; they are flagged as inconsistent and reported as unilateral.

use std::f64::consts::PI;
use std::fmt;

use log::{debug, warn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::{DqError, WaveformRecord};
use crate::hardlimit::{invert_saturation, HardLimitError, LimitKind};
use crate::hos::{CoherenceMap, CoherenceOrder, HosError, PowerSpectrum, SegmentConfig, SpectrumSet};

/// Half-width, in bins, of the window mainlobe summed for harmonic power.
pub const MAINLOBE_RADIUS: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("no dominant tone: strongest bin is {ratio:.2}x the median power")]
    NoDominantTone { ratio: f64 },
    #[error("harmonic {order} at bin {bin:.1} lies beyond the spectrum (N/2 = {half})")]
    HarmonicOutOfRange { order: u32, bin: f64, half: usize },
    #[error("classification {0} has no saturation level")]
    NotSaturated(Classification),
    #[error(transparent)]
    Inversion(#[from] HardLimitError),
    #[error("invalid detection config: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dq transform: {0}")]
    Transform(#[from] DqError),
    #[error("{axis}-axis spectra: {source}")]
    Spectra { axis: Axis, source: HosError },
    #[error("detection config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    D,
    Q,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::D => "d",
            Axis::Q => "q",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    UnilateralSaturation,
    BilateralSaturation,
    NoHardLimitNonlinearity,
}

impl Classification {
    pub fn limit_kind(self) -> Option<LimitKind> {
        match self {
            Classification::UnilateralSaturation => Some(LimitKind::Unilateral),
            Classification::BilateralSaturation => Some(LimitKind::Bilateral),
            Classification::NoHardLimitNonlinearity => None,
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::UnilateralSaturation => "UnilateralSaturation",
            Classification::BilateralSaturation => "BilateralSaturation",
            Classification::NoHardLimitNonlinearity => "NoHardLimitNonlinearity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Coherence threshold for a peak.
    pub sigma_b: f64,
    /// Distance, in bins, a peak may sit from the harmonic grid.
    pub harmonic_tol: f64,
    /// Required excess over the neighbourhood median.
    pub min_prominence: f64,
    /// Cells at or above this coherence skip the local-maximum and
    /// prominence tests. In a noiseless record a whole
    /// neighbourhood can be coherent, leaving no baseline to stand out from.
    pub certain_coherence: f64,
    pub prominence_radius_bi: usize,
    pub prominence_radius_tri: usize,
    /// Strongest bin over median power needed to call a tone dominant.
    pub dominance_ratio: f64,
    /// Highest harmonic index a grid peak may involve to count as evidence.
    pub max_evidence_order: u32,
    /// Evidence must exceed this multiple of its cell's noise-only level.
    pub min_significance: f64,
    /// Off-grid peaks kept in a report (grid peaks are always kept).
    pub max_off_grid_peaks: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            sigma_b: 0.3,
            harmonic_tol: 1.0,
            min_prominence: 0.1,
            certain_coherence: 0.99,
            prominence_radius_bi: 4,
            prominence_radius_tri: 3,
            dominance_ratio: 10.0,
            max_evidence_order: 3,
            min_significance: 4.0,
            max_off_grid_peaks: 32,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::Config(m));
        if !(self.sigma_b > 0.0 && self.sigma_b < 1.0) {
            return bad(format!("sigma_b {} outside (0, 1)", self.sigma_b));
        }
        if !(self.harmonic_tol >= 0.0 && self.harmonic_tol.is_finite()) {
            return bad(format!("harmonic_tol {}", self.harmonic_tol));
        }
        if !(self.min_prominence >= 0.0 && self.min_prominence.is_finite()) {
            return bad(format!("min_prominence {}", self.min_prominence));
        }
        if !(self.certain_coherence > self.sigma_b && self.certain_coherence <= 1.0) {
            return bad(format!(
                "certain_coherence {} outside (sigma_b, 1]",
                self.certain_coherence
            ));
        }
        if !(self.dominance_ratio >= 1.0) {
            return bad(format!("dominance_ratio {}", self.dominance_ratio));
        }
        if !(self.min_significance >= 0.0 && self.min_significance.is_finite()) {
            return bad(format!("min_significance {}", self.min_significance));
        }
        if self.max_evidence_order < 3 {
            return bad(format!("max_evidence_order {} < 3", self.max_evidence_order));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub bins: Vec<usize>,
    pub freqs_hz: Vec<f64>,
    pub value: f64,
    pub clamped: f64,
    /// Harmonic indices when every coordinate lies on the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harmonics: Option<Vec<u32>>,
    /// Value over the cell's rms level under white Gaussian noise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significance: Option<f64>,
    /// Some bin of the cell, or its sum bin, was floored in at least one
    /// segment. Such values mix floored and measured coefficients and are
    /// not used as evidence.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub floor_affected: bool,
}

impl Peak {
    pub fn on_grid(&self) -> bool {
        self.harmonics.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    pub order: CoherenceOrder,
    pub df: f64,
    pub entries: Vec<Peak>,
}

impl PeakList {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn grid_peaks(&self) -> impl Iterator<Item = &Peak> {
        self.entries.iter().filter(|p| p.on_grid())
    }

    /// Tags entries that sit on the harmonic grid of `f0_hz`.
    pub fn annotate_grid(&mut self, f0_hz: f64, tol_bins: f64) {
        let k0 = f0_hz / self.df;
        for p in &mut self.entries {
            p.harmonics = grid_harmonics(&p.bins, k0, tol_bins);
        }
    }

    /// Scores every entry against its noise-only level for segmentation `seg`.
    pub fn annotate_significance(&mut self, seg: &SegmentConfig) {
        for p in &mut self.entries {
            p.significance = Some(p.value / null_level(&p.bins, seg));
        }
    }

    /// Flags entries touching a bin that was floored in any segment.
    pub fn annotate_floor(&mut self, floored: &[f64]) {
        for p in &mut self.entries {
            let sum: usize = p.bins.iter().sum();
            p.floor_affected = p
                .bins
                .iter()
                .chain(std::iter::once(&sum))
                .any(|&k| floored.get(k).copied().unwrap_or(0.0) > 0.0);
        }
    }

    /// Keeps every grid peak and the strongest `max_off_grid` others.
    pub fn truncated(&self, max_off_grid: usize) -> Self {
        let mut off = 0;
        let entries = self
            .entries
            .iter()
            .filter(|p| {
                p.on_grid() || {
                    off += 1;
                    off <= max_off_grid
                }
            })
            .cloned()
            .collect();
        Self {
            order: self.order,
            df: self.df,
            entries,
        }
    }
}

/// Correlation between DFT bins `d` apart for white input under `window`.
fn bin_correlation(window: &[f64], d: isize) -> Complex64 {
    let n = window.len() as f64;
    let energy: f64 = window.iter().map(|w| w * w).sum();
    window
        .iter()
        .enumerate()
        .map(|(l, w)| Complex64::from_polar(w * w, -2.0 * PI * d as f64 * l as f64 / n))
        .sum::<Complex64>()
        / energy
}

fn permanent(m: &[Vec<Complex64>]) -> Complex64 {
    fn rec(m: &[Vec<Complex64>], row: usize, used: &mut [bool]) -> Complex64 {
        if row == m.len() {
            return Complex64::new(1.0, 0.0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..m.len() {
            if !used[j] && m[row][j] != Complex64::new(0.0, 0.0) {
                used[j] = true;
                acc += m[row][j] * rec(m, row + 1, used);
                used[j] = false;
            }
        }
        acc
    }
    rec(m, 0, &mut vec![false; m.len()])
}

/// RMS coherence of the cell at `bins` when the input is white Gaussian
/// noise: `sqrt(perm(R) / M)`, with `R` the window-induced correlation of
/// the cell's bins and their sum bin.
///
/// Repeated or adjacent bins raise the level: a diagonal tricoherence cell
/// `(m, m, m)` sits `sqrt(6)` higher than a cell of well-separated bins.
pub fn null_level(bins: &[usize], seg: &SegmentConfig) -> f64 {
    let w = seg.window.coefficients(seg.seg_len);
    let mut all: Vec<isize> = bins.iter().map(|&b| b as isize).collect();
    all.push(all.iter().sum());
    let r: Vec<Vec<Complex64>> = all
        .iter()
        .map(|&a| all.iter().map(|&b| bin_correlation(&w, a - b)).collect())
        .collect();
    (permanent(&r).re.max(0.0) / seg.segments as f64).sqrt()
}

/// Harmonic index of each coordinate if all lie within `tol` bins of a
/// positive multiple of the fractional fundamental bin `k0`.
pub fn grid_harmonics(bins: &[usize], k0: f64, tol: f64) -> Option<Vec<u32>> {
    if !(k0 > 0.0) {
        return None;
    }
    bins.iter()
        .map(|&b| {
            let i = (b as f64 / k0).round();
            (i >= 1.0 && (b as f64 - i * k0).abs() <= tol).then_some(i as u32)
        })
        .collect()
}

/// Frequency of the strongest non-DC bin, refined by a parabola through the
/// log power of it and its two neighbours.
pub fn fundamental_frequency(p: &PowerSpectrum, dominance_ratio: f64) -> Result<f64, DetectError> {
    let v = &p.values[1..];
    let (imax, &pmax) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(DetectError::NoDominantTone { ratio: 0.0 })?;
    let med = median(v.to_vec());
    let ratio = if med > 0.0 { pmax / med } else { f64::INFINITY };
    if !(pmax > 0.0 && ratio > dominance_ratio) {
        return Err(DetectError::NoDominantTone { ratio });
    }
    let k = imax + 1;
    let mut offset = 0.0;
    if k > 1 && k < p.half() {
        let (a, b, c) = (p.values[k - 1].ln(), p.values[k].ln(), p.values[k + 1].ln());
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            offset = (0.5 * (a - c) / den).clamp(-0.5, 0.5);
        }
    }
    Ok((k as f64 + offset) * p.df)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn neighbourhood(map: &CoherenceMap, c: [usize; 3], radius: usize) -> Vec<usize> {
    let dims = map.dims();
    let domain = map.grid.domain();
    let r = radius as isize;
    let mut out = Vec::new();
    let span: Vec<isize> = (-r..=r).collect();
    let third: &[isize] = if dims == 3 { &span } else { &[0] };
    for &dm in &span {
        for &dn in &span {
            for &dl in third {
                if dm == 0 && dn == 0 && dl == 0 {
                    continue;
                }
                let m = c[0] as isize + dm;
                let n = c[1] as isize + dn;
                let o = c[2] as isize + dl;
                if m < 1 || n < 1 || (dims == 3 && o < 1) {
                    continue;
                }
                let coords = [m as usize, n as usize, o as usize];
                if let Some(i) = domain.index(&coords[..dims]) {
                    out.push(i);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Strict local maxima at or above `sigma_b` that also clear the
/// neighbourhood median by `min_prominence`, strongest first. Cells from
/// `certain_coherence` up are kept unconditionally.
///
/// Neighbours are taken over the full octant and folded back onto the
/// canonical region, so a cell next to a symmetry axis sees its mirror image;
/// a neighbour that folds onto the cell itself is ignored.
pub fn find_peaks(map: &CoherenceMap, cfg: &DetectionConfig) -> PeakList {
    let dims = map.dims();
    let values = map.grid.values();
    let radius = if dims == 2 {
        cfg.prominence_radius_bi
    } else {
        cfg.prominence_radius_tri
    };
    let mut entries = Vec::new();
    for (idx, (c, v)) in map.grid.iter().enumerate() {
        if !(v >= cfg.sigma_b) {
            continue;
        }
        // a certain cell can only be beaten by roundoff or a floor artefact
        let certain = v >= cfg.certain_coherence;
        let near = neighbourhood(map, c, 1);
        if !certain && near.iter().any(|&j| j != idx && values[j] >= v) {
            continue;
        }
        let wide: Vec<f64> = neighbourhood(map, c, radius)
            .into_iter()
            .filter(|&j| j != idx)
            .map(|j| values[j])
            .collect();
        if v < cfg.certain_coherence && v - median(wide) < cfg.min_prominence {
            continue;
        }
        let bins = c[..dims].to_vec();
        entries.push(Peak {
            freqs_hz: bins.iter().map(|&b| b as f64 * map.df).collect(),
            bins,
            value: v,
            clamped: v.clamp(0.0, 1.0),
            harmonics: None,
            significance: None,
            floor_affected: false,
        });
    }
    entries.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.bins.cmp(&b.bins)));
    PeakList {
        order: map.order,
        df: map.df,
        entries,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyOutcome {
    pub classification: Classification,
    /// Peak evidence matched no row of the table (see module docs).
    pub inconsistent_evidence: bool,
}

/// Reads the peak pattern on the harmonic grid of `f0_hz`.
///
/// Only low-order grid peaks (indices up to `max_evidence_order`) count:
/// the lowest-order couplings carry the most power and are the last to sink
/// into noise, while the many high-order cells mostly add false alarms.
/// Peaks scored by [`PeakList::annotate_significance`] must also reach
/// `min_significance`, and floor-affected peaks are ignored.
pub fn classify(bic: &PeakList, tric: &PeakList, f0_hz: f64, cfg: &DetectionConfig) -> ClassifyOutcome {
    let grid = |l: &PeakList, floored: bool| -> Vec<Vec<u32>> {
        let k0 = f0_hz / l.df;
        l.entries
            .iter()
            .filter(|p| p.floor_affected == floored && p.significance.map_or(true, |z| z >= cfg.min_significance))
            .filter_map(|p| grid_harmonics(&p.bins, k0, cfg.harmonic_tol))
            .filter(|h| h.iter().all(|&i| i <= cfg.max_evidence_order))
            .collect()
    };
    let bic_grid = !grid(bic, false).is_empty();
    let tric_grid = grid(tric, false);
    let tric_any = !tric_grid.is_empty();
    let tric_odd = tric_grid.iter().any(|h| h.iter().all(|i| i % 2 == 1));
    // tricoherence that only shows up on floored bins is unobservable, not absent
    let tric_hidden = !tric_any && !grid(tric, true).is_empty();
    let (classification, inconsistent) = match (bic_grid, tric_any, tric_odd) {
        (true, true, _) => (Classification::UnilateralSaturation, false),
        (true, false, _) => (Classification::UnilateralSaturation, !tric_hidden),
        (false, _, true) => (Classification::BilateralSaturation, false),
        (false, true, false) => (Classification::NoHardLimitNonlinearity, true),
        (false, false, _) => (Classification::NoHardLimitNonlinearity, false),
    };
    ClassifyOutcome {
        classification,
        inconsistent_evidence: inconsistent,
    }
}

/// Power summed over the mainlobe around harmonic `order` of `f0_hz`.
pub fn harmonic_power(p: &PowerSpectrum, f0_hz: f64, order: u32) -> Result<f64, DetectError> {
    let bin = order as f64 * f0_hz / p.df;
    if bin + MAINLOBE_RADIUS > p.half() as f64 {
        return Err(DetectError::HarmonicOutOfRange {
            order,
            bin,
            half: p.half(),
        });
    }
    Ok(p.band_power(bin, MAINLOBE_RADIUS))
}

/// `η` from the measured distortion ratio `√(P(h f0) / P(f0))`, `h = 2` for
/// unilateral and `h = 3` for bilateral saturation.
pub fn estimate_saturation(p: &PowerSpectrum, f0_hz: f64, class: Classification) -> Result<f64, DetectError> {
    let kind = class.limit_kind().ok_or(DetectError::NotSaturated(class))?;
    let fundamental = harmonic_power(p, f0_hz, 1)?;
    let harmonic = harmonic_power(p, f0_hz, kind.distortion_order())?;
    let hd = (harmonic / fundamental).sqrt();
    Ok(invert_saturation(hd, kind)?.value())
}

/// Sinusoid amplitudes of the fundamental and the second and third harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicAmplitudes {
    pub b1: f64,
    /// `None` when the harmonic lies past the Nyquist bin.
    pub a2: Option<f64>,
    pub b3: Option<f64>,
}

fn harmonic_amplitudes(p: &PowerSpectrum, f0_hz: f64, power_gain: f64) -> Option<HarmonicAmplitudes> {
    // a tone of amplitude A spreads (A/2)^2 · mean(w^2) over its mainlobe
    let amp = |order| {
        harmonic_power(p, f0_hz, order)
            .ok()
            .map(|pw| 2.0 * (pw / power_gain).sqrt())
    };
    Some(HarmonicAmplitudes {
        b1: amp(1)?,
        a2: amp(2),
        b3: amp(3),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub axis: Axis,
    pub classification: Classification,
    pub fundamental_hz: Option<f64>,
    pub eta_sat: Option<f64>,
    pub bic_peaks: PeakList,
    pub tric_peaks: PeakList,
    pub harmonic_amplitudes: Option<HarmonicAmplitudes>,
    pub inconsistent_evidence: bool,
    pub warnings: Vec<String>,
}

/// Both axis reports plus the phase used for the dq transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub theta0: Option<f64>,
    pub d: DetectionReport,
    pub q: DetectionReport,
}

impl Analysis {
    pub fn report(&self, axis: Axis) -> &DetectionReport {
        match axis {
            Axis::D => &self.d,
            Axis::Q => &self.q,
        }
    }
}

/// Runs the detection chain on one channel. The record mean is removed first
/// so an operating point does not leak into the lowest bins through the
/// window.
pub fn analyze_channel(
    x: &[f64],
    dt: f64,
    axis: Axis,
    seg: &SegmentConfig,
    det: &DetectionConfig,
) -> Result<(DetectionReport, SpectrumSet), AnalysisError> {
    det.validate().map_err(|e| AnalysisError::Config(e.to_string()))?;
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let set = SpectrumSet::compute(&centred, seg, dt).map_err(|source| AnalysisError::Spectra { axis, source })?;

    let mut bic = find_peaks(&set.bicoherence, det);
    let mut tric = find_peaks(&set.tricoherence, det);
    for l in [&mut bic, &mut tric] {
        l.annotate_significance(seg);
        l.annotate_floor(&set.floored);
    }
    let mut warnings = Vec::new();
    let f0 = match fundamental_frequency(&set.power, det.dominance_ratio) {
        Ok(f) => Some(f),
        Err(e) => {
            debug!("{axis} axis: {e}");
            warnings.push(e.to_string());
            None
        }
    };

    let (mut classification, mut inconsistent) = (Classification::NoHardLimitNonlinearity, false);
    let mut eta_sat = None;
    let mut amplitudes = None;
    if let Some(f0) = f0 {
        bic.annotate_grid(f0, det.harmonic_tol);
        tric.annotate_grid(f0, det.harmonic_tol);
        let out = classify(&bic, &tric, f0, det);
        classification = out.classification;
        inconsistent = out.inconsistent_evidence;
        if inconsistent {
            let msg = "peak pattern matches no limiter type".to_string();
            warn!("{axis} axis: {msg}");
            warnings.push(msg);
        }
        let w = seg.window.coefficients(seg.seg_len);
        let gain = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        amplitudes = harmonic_amplitudes(&set.power, f0, gain);
        if classification != Classification::NoHardLimitNonlinearity {
            match estimate_saturation(&set.power, f0, classification) {
                Ok(eta) => eta_sat = Some(eta),
                Err(e) => warnings.push(format!("saturation level: {e}")),
            }
        }
    }
    let report = DetectionReport {
        axis,
        classification,
        fundamental_hz: f0,
        eta_sat,
        bic_peaks: bic.truncated(det.max_off_grid_peaks),
        tric_peaks: tric.truncated(det.max_off_grid_peaks),
        harmonic_amplitudes: amplitudes,
        inconsistent_evidence: inconsistent,
        warnings,
    };
    Ok((report, set))
}

/// Full pipeline: dq transform (for three-phase records), then the d and q
/// channels analysed independently.
pub fn analyze_with_spectra(
    record: &WaveformRecord,
    seg: &SegmentConfig,
    det: &DetectionConfig,
) -> Result<(Analysis, SpectrumSet, SpectrumSet), AnalysisError> {
    let sig = record.to_dq()?;
    let dt = record.dt;
    let (d, q) = std::thread::scope(|s| {
        let q = s.spawn(|| analyze_channel(&sig.xq, dt, Axis::Q, seg, det));
        let d = analyze_channel(&sig.xd, dt, Axis::D, seg, det);
        (d, q.join().expect("q-axis worker panicked"))
    });
    let (d, dset) = d?;
    let (q, qset) = q?;
    let theta0 = record.is_three_phase().then_some(sig.theta0);
    Ok((Analysis { theta0, d, q }, dset, qset))
}

pub fn analyze(record: &WaveformRecord, seg: &SegmentConfig, det: &DetectionConfig) -> Result<Analysis, AnalysisError> {
    analyze_with_spectra(record, seg, det).map(|(a, _, _)| a)
}
