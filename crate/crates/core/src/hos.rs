//! Segment-averaged higher-order spectra.
//!
//! A channel is cut into `M` non-overlapping segments of `N` samples. Each
//! segment is windowed, has its mean removed, and is transformed with a
//! `1/N`-normalised DFT keeping bins `1..=N/2`. Bins far below the segment's
//! strongest bin are then lifted to a small floor (magnitude `σ²·max`, phase
//! kept) so coherence denominators never vanish.
//!
//! From the per-segment spectra `X_k^{(i)}`:
//!
//! ```text
//! P(m)       = mean_i  X_m X_m*
//! B(m, n)    = mean_i  X_m X_n X_{m+n}*
//! T(m, n, o) = mean_i  X_m X_n X_o X_{m+n+o}*
//! bic(m, n)    = |B(m, n)|    / sqrt(P(m) P(n) P(m+n))
//! tric(m, n, o) = |T(m, n, o)| / sqrt(P(m) P(n) P(o) P(m+n+o))
//! ```
//!
//! The bispectrum and trispectrum are permutation symmetric in their
//! arguments, so only the canonical cells `1 <= m <= n (<= o)` with the sum
//! inside `N/2` are computed and stored; lookups of any other ordering map
//! onto them.

use std::fmt;
use std::io::{self, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIGMA_FLOOR: f64 = 0.001;
pub const DEFAULT_MAX_TRI_BIN: usize = 128;
/// Nominal periods a default segment covers.
pub const DEFAULT_SEGMENT_CYCLES: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HosError {
    #[error("invalid segment configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Window coefficients. Hann is the symmetric form `½[1 − cos(2πl/(N−1))]`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => {
                let d = (n - 1) as f64;
                (0..n)
                    .map(|l| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * l as f64 / d).cos()))
                    .collect()
            }
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rect",
        })
    }
}

/// Where the per-segment mean is removed relative to windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanRemoval {
    /// Window first, then subtract the mean of the windowed segment.
    AfterWindow,
    /// Subtract the raw segment mean, then window.
    BeforeWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub segments: usize,
    pub seg_len: usize,
    pub window: Window,
    pub sigma_floor: f64,
    pub max_tri_bin: usize,
    pub mean_removal: MeanRemoval,
}

impl SegmentConfig {
    /// `M` segments of `N` samples with the default window, floor and cap.
    pub fn new(segments: usize, seg_len: usize) -> Self {
        Self {
            segments,
            seg_len,
            window: Window::Hann,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            max_tri_bin: DEFAULT_MAX_TRI_BIN.min(seg_len / 2),
            mean_removal: MeanRemoval::AfterWindow,
        }
    }

    /// Smallest power-of-two segment covering at least `cycles` periods of
    /// `freq_hz`, with as many segments as the record holds.
    pub fn covering(record_len: usize, dt: f64, freq_hz: f64, cycles: f64) -> Self {
        let need = (cycles / (freq_hz * dt)).ceil().max(4.0) as usize;
        let seg_len = need.next_power_of_two();
        Self::new((record_len / seg_len).max(1), seg_len)
    }

    pub fn half(&self) -> usize {
        self.seg_len / 2
    }

    pub fn validate(&self, record_len: usize) -> Result<(), HosError> {
        let err = |m: String| Err(HosError::Config(m));
        if self.segments < 1 {
            return err("at least one segment is required".into());
        }
        if self.seg_len < 4 {
            return err(format!("segment length {} < 4", self.seg_len));
        }
        if self.segments.saturating_mul(self.seg_len) > record_len {
            return err(format!(
                "{} segments x {} samples exceed record length {record_len}",
                self.segments, self.seg_len
            ));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor < 1.0) {
            return err(format!("sigma {} outside (0, 1)", self.sigma_floor));
        }
        if self.max_tri_bin > self.half() {
            return err(format!(
                "max_tri_bin {} exceeds N/2 = {}",
                self.max_tri_bin,
                self.half()
            ));
        }
        Ok(())
    }
}

/// Per-segment DFT coefficients after windowing, mean removal and flooring.
#[derive(Debug, Clone)]
pub struct SegmentSpectra {
    // by_bin[k][i] = X_k of segment i; k = 0 is kept as zero
    by_bin: Vec<Vec<Complex64>>,
    // segments in which each bin was replaced by the floor
    floored: Vec<usize>,
    segments: usize,
    seg_len: usize,
    pub df: f64,
}

impl SegmentSpectra {
    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn seg_len(&self) -> usize {
        self.seg_len
    }

    pub fn half(&self) -> usize {
        self.seg_len / 2
    }

    /// Coefficient of bin `k` in segment `i`.
    pub fn get(&self, segment: usize, k: usize) -> Complex64 {
        self.by_bin[k][segment]
    }

    /// All segments' coefficients at bin `k`.
    pub fn bin(&self, k: usize) -> &[Complex64] {
        &self.by_bin[k]
    }

    /// Fraction of segments in which bin `k` was floored, indexed by bin.
    pub fn floored_fraction(&self) -> Vec<f64> {
        let m = self.segments as f64;
        self.floored.iter().map(|&c| c as f64 / m).collect()
    }
}

/// Splits `x`, windows, removes segment means, transforms and floors.
pub fn segment_window_fft(x: &[f64], cfg: &SegmentConfig, dt: f64) -> Result<SegmentSpectra, HosError> {
    cfg.validate(x.len())?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(HosError::Config(format!("sampling interval {dt}")));
    }
    let n = cfg.seg_len;
    let half = n / 2;
    let window = cfg.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut by_bin = vec![vec![Complex64::new(0.0, 0.0); cfg.segments]; half + 1];
    let mut floored = vec![0usize; half + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let inv_n = 1.0 / n as f64;

    for (i, seg) in x.chunks_exact(n).take(cfg.segments).enumerate() {
        match cfg.mean_removal {
            MeanRemoval::AfterWindow => {
                let mean = seg.iter().zip(&window).map(|(s, w)| s * w).sum::<f64>() * inv_n;
                for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
                    *b = Complex64::new(s * w - mean, 0.0);
                }
            }
            MeanRemoval::BeforeWindow => {
                let mean = seg.iter().sum::<f64>() * inv_n;
                for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
                    *b = Complex64::new((s - mean) * w, 0.0);
                }
            }
        }
        fft.process(&mut buf);

        let peak = buf[1..=half].iter().map(|c| c.norm()).fold(0.0, f64::max) * inv_n;
        let threshold = cfg.sigma_floor * peak;
        let lifted = cfg.sigma_floor * cfg.sigma_floor * peak;
        for k in 1..=half {
            let v = buf[k] * inv_n;
            let mag = v.norm();
            by_bin[k][i] = if mag < threshold {
                floored[k] += 1;
                let phase = if mag > 0.0 { v.arg() } else { 0.0 };
                Complex64::from_polar(lifted, phase)
            } else {
                v
            };
        }
    }
    Ok(SegmentSpectra {
        by_bin,
        floored,
        segments: cfg.segments,
        seg_len: n,
        df: 1.0 / (n as f64 * dt),
    })
}

/// Averaged power per bin. Index `k` is bin `k`; bin 0 is always zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub values: Vec<f64>,
    pub df: f64,
}

impl PowerSpectrum {
    pub fn half(&self) -> usize {
        self.values.len() - 1
    }

    pub fn freq(&self, k: usize) -> f64 {
        k as f64 * self.df
    }

    /// Power summed over bins within `radius` of the fractional bin `centre`.
    pub fn band_power(&self, centre: f64, radius: f64) -> f64 {
        let lo = (centre - radius).ceil().max(1.0) as usize;
        let hi = ((centre + radius).floor() as usize).min(self.half());
        if lo > hi {
            return 0.0;
        }
        self.values[lo..=hi].iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "m,freq_hz,power")?;
        for (k, p) in self.values.iter().enumerate().skip(1) {
            writeln!(w, "{k},{:.16e},{:.16e}", self.freq(k), p)?;
        }
        Ok(())
    }
}

pub fn power_spectrum(s: &SegmentSpectra) -> PowerSpectrum {
    let inv_m = 1.0 / s.segments as f64;
    let mut values = vec![0.0; s.half() + 1];
    for (k, v) in values.iter_mut().enumerate().skip(1) {
        *v = s.bin(k).iter().map(|x| x.norm_sqr()).sum::<f64>() * inv_m;
    }
    PowerSpectrum { values, df: s.df }
}

/// Canonical index layout for a symmetric 2-D or 3-D spectral grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    half: usize,
    cap: usize,
    dims: usize,
    // start of each canonical row; usize::MAX marks an empty row
    offsets: Vec<usize>,
    // (m, row length) for 2-D; (m, n, row length) for 3-D
    len: usize,
}

impl Domain {
    /// Cells `1 <= m <= n`, `m + n <= half`.
    pub fn bi(half: usize) -> Self {
        let mut offsets = vec![usize::MAX; half + 1];
        let mut len = 0;
        for (m, off) in offsets.iter_mut().enumerate().skip(1) {
            if 2 * m > half {
                break;
            }
            *off = len;
            len += half - 2 * m + 1;
        }
        Self {
            half,
            cap: half,
            dims: 2,
            offsets,
            len,
        }
    }

    /// Cells `1 <= m <= n <= o <= cap`, `m + n + o <= half`.
    pub fn tri(half: usize, cap: usize) -> Self {
        let cap = cap.min(half);
        let stride = cap + 1;
        let mut offsets = vec![usize::MAX; stride * stride];
        let mut len = 0;
        for m in 1..=cap {
            for n in m..=cap {
                if let Some(top) = tri_row_top(half, cap, m, n) {
                    offsets[m * stride + n] = len;
                    len += top - n + 1;
                }
            }
        }
        Self {
            half,
            cap,
            dims: 3,
            offsets,
            len,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn half(&self) -> usize {
        self.half
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Storage index of any ordering of `coords`, if the cell is in the domain.
    pub fn index(&self, coords: &[usize]) -> Option<usize> {
        if coords.len() != self.dims {
            return None;
        }
        match self.dims {
            2 => {
                let (m, n) = min_max(coords[0], coords[1]);
                if m == 0 || m + n > self.half {
                    return None;
                }
                Some(self.offsets[m] + (n - m))
            }
            _ => {
                let mut c = [coords[0], coords[1], coords[2]];
                c.sort_unstable();
                let [m, n, o] = c;
                if m == 0 || o > self.cap || m + n + o > self.half {
                    return None;
                }
                let off = self.offsets[m * (self.cap + 1) + n];
                (off != usize::MAX).then(|| off + (o - n))
            }
        }
    }

    /// Canonical coordinates in storage order (third entry unused for 2-D).
    pub fn cells(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::with_capacity(self.len);
        if self.dims == 2 {
            for m in 1..=self.half / 2 {
                for n in m..=self.half - m {
                    out.push([m, n, 0]);
                }
            }
        } else {
            for m in 1..=self.cap {
                for n in m..=self.cap {
                    if let Some(top) = tri_row_top(self.half, self.cap, m, n) {
                        for o in n..=top {
                            out.push([m, n, o]);
                        }
                    }
                }
            }
        }
        out
    }
}

fn tri_row_top(half: usize, cap: usize, m: usize, n: usize) -> Option<usize> {
    let room = half.checked_sub(m + n)?;
    let top = room.min(cap);
    (top >= n).then_some(top)
}

fn min_max(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Values on a canonical symmetric domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricGrid<T> {
    domain: Domain,
    values: Vec<T>,
}

impl<T: Copy> SymmetricGrid<T> {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn get(&self, coords: &[usize]) -> Option<T> {
        self.domain.index(coords).map(|i| self.values[i])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `(coords, value)` pairs over the canonical cells.
    pub fn iter(&self) -> impl Iterator<Item = ([usize; 3], T)> + '_ {
        self.domain.cells().into_iter().zip(self.values.iter().copied())
    }

    pub fn map<U, F: Fn([usize; 3], T) -> U>(&self, f: F) -> SymmetricGrid<U> {
        let values = self
            .domain
            .cells()
            .into_iter()
            .zip(&self.values)
            .map(|(c, v)| f(c, *v))
            .collect();
        SymmetricGrid {
            domain: self.domain.clone(),
            values,
        }
    }
}

pub type Bispectrum = SymmetricGrid<Complex64>;
pub type Trispectrum = SymmetricGrid<Complex64>;

/// `B(m, n) = mean X_m X_n X*_{m+n}` on the canonical region.
pub fn bispectrum(s: &SegmentSpectra) -> Bispectrum {
    let domain = Domain::bi(s.half());
    let inv_m = 1.0 / s.segments as f64;
    let values = domain
        .cells()
        .into_iter()
        .map(|[m, n, _]| {
            let (xm, xn, xs) = (s.bin(m), s.bin(n), s.bin(m + n));
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..s.segments {
                acc += xm[i] * xn[i] * xs[i].conj();
            }
            acc * inv_m
        })
        .collect();
    SymmetricGrid { domain, values }
}

/// `T(m, n, o) = mean X_m X_n X_o X*_{m+n+o}` on the canonical region,
/// capped at `cfg.max_tri_bin`.
pub fn trispectrum(s: &SegmentSpectra, cfg: &SegmentConfig) -> Result<Trispectrum, HosError> {
    if cfg.max_tri_bin > s.half() {
        return Err(HosError::Config(format!(
            "max_tri_bin {} exceeds N/2 = {}",
            cfg.max_tri_bin,
            s.half()
        )));
    }
    let domain = Domain::tri(s.half(), cfg.max_tri_bin);
    let inv_m = 1.0 / s.segments as f64;
    let mut pair = vec![Complex64::new(0.0, 0.0); s.segments];
    let mut values = Vec::with_capacity(domain.len());
    let mut last = (0, 0);
    for [m, n, o] in domain.cells() {
        if (m, n) != last {
            let (xm, xn) = (s.bin(m), s.bin(n));
            for i in 0..s.segments {
                pair[i] = xm[i] * xn[i];
            }
            last = (m, n);
        }
        let (xo, xs) = (s.bin(o), s.bin(m + n + o));
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..s.segments {
            acc += pair[i] * xo[i] * xs[i].conj();
        }
        values.push(acc * inv_m);
    }
    Ok(SymmetricGrid { domain, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherenceOrder {
    Bi,
    Tri,
}

/// Bicoherence or tricoherence values (raw, unclamped) on the canonical domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceMap {
    pub order: CoherenceOrder,
    pub grid: SymmetricGrid<f64>,
    pub df: f64,
}

impl CoherenceMap {
    pub fn get(&self, coords: &[usize]) -> Option<f64> {
        self.grid.get(coords)
    }

    pub fn clamped(&self, coords: &[usize]) -> Option<f64> {
        self.get(coords).map(|v| v.clamp(0.0, 1.0))
    }

    pub fn dims(&self) -> usize {
        self.grid.domain().dims()
    }

    /// Largest raw value and its canonical coordinates.
    pub fn max(&self) -> Option<([usize; 3], f64)> {
        self.grid
            .iter()
            .fold(None, |best: Option<([usize; 3], f64)>, (c, v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((c, v)),
            })
    }

    /// Largest raw value within `radius` bins (per axis) of `coords`.
    pub fn max_near(&self, coords: &[usize], radius: usize) -> Option<([usize; 3], f64)> {
        let d = self.dims();
        let lo = |c: usize| c.saturating_sub(radius).max(1);
        let mut best: Option<([usize; 3], f64)> = None;
        let mut consider = |c: [usize; 3]| {
            if let Some(v) = self.get(&c[..d]) {
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
        };
        for m in lo(coords[0])..=coords[0] + radius {
            for n in lo(coords[1])..=coords[1] + radius {
                if d == 2 {
                    consider([m, n, 0]);
                } else {
                    for o in lo(coords[2])..=coords[2] + radius {
                        consider([m, n, o]);
                    }
                }
            }
        }
        best
    }

    /// CSV rows `m,n[,o],value` over the canonical cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        match self.order {
            CoherenceOrder::Bi => writeln!(w, "m,n,value")?,
            CoherenceOrder::Tri => writeln!(w, "m,n,o,value")?,
        }
        for (c, v) in self.grid.iter() {
            match self.order {
                CoherenceOrder::Bi => writeln!(w, "{},{},{v:.16e}", c[0], c[1])?,
                CoherenceOrder::Tri => writeln!(w, "{},{},{},{v:.16e}", c[0], c[1], c[2])?,
            }
        }
        Ok(())
    }
}

/// CSV rows `m,n[,o],re,im` for a complex spectrum grid.
pub fn write_complex_grid_csv<W: Write>(grid: &SymmetricGrid<Complex64>, mut w: W) -> io::Result<()> {
    let tri = grid.domain().dims() == 3;
    writeln!(w, "{}", if tri { "m,n,o,re,im" } else { "m,n,re,im" })?;
    for (c, v) in grid.iter() {
        if tri {
            writeln!(w, "{},{},{},{:.16e},{:.16e}", c[0], c[1], c[2], v.re, v.im)?;
        } else {
            writeln!(w, "{},{},{:.16e},{:.16e}", c[0], c[1], v.re, v.im)?;
        }
    }
    Ok(())
}

fn coherence_value(num: f64, denom_sq: f64) -> f64 {
    if denom_sq > 0.0 {
        num / denom_sq.sqrt()
    } else {
        0.0
    }
}

pub fn bicoherence(p: &PowerSpectrum, b: &Bispectrum) -> CoherenceMap {
    let pv = &p.values;
    let grid = b.map(|[m, n, _], v| coherence_value(v.norm(), pv[m] * pv[n] * pv[m + n]));
    CoherenceMap {
        order: CoherenceOrder::Bi,
        grid,
        df: p.df,
    }
}

pub fn tricoherence(p: &PowerSpectrum, t: &Trispectrum) -> CoherenceMap {
    let pv = &p.values;
    let grid = t.map(|[m, n, o], v| coherence_value(v.norm(), pv[m] * pv[n] * pv[o] * pv[m + n + o]));
    CoherenceMap {
        order: CoherenceOrder::Tri,
        grid,
        df: p.df,
    }
}

/// Everything the estimators produce for one channel.
#[derive(Debug, Clone)]
pub struct SpectrumSet {
    pub power: PowerSpectrum,
    pub bispec: Bispectrum,
    pub trispec: Trispectrum,
    pub bicoherence: CoherenceMap,
    pub tricoherence: CoherenceMap,
    /// Fraction of segments in which each bin was floored.
    pub floored: Vec<f64>,
    pub df: f64,
}

impl SpectrumSet {
    pub fn compute(x: &[f64], cfg: &SegmentConfig, dt: f64) -> Result<Self, HosError> {
        let spectra = segment_window_fft(x, cfg, dt)?;
        let power = power_spectrum(&spectra);
        let bispec = bispectrum(&spectra);
        let trispec = trispectrum(&spectra, cfg)?;
        let bicoherence = bicoherence(&power, &bispec);
        let tricoherence = tricoherence(&power, &trispec);
        Ok(Self {
            df: power.df,
            floored: spectra.floored_fraction(),
            power,
            bispec,
            trispec,
            bicoherence,
            tricoherence,
        })
    }
}
