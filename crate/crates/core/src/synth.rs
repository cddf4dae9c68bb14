//! Verification signals: phase-coupled tone sums, clipped sinusoids and a
//! first-order low-pass used for linear-invariance checks.
//!
//! Noise levels in dB are variances relative to unit power, so `-20` dB
//! means a variance of `0.01`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::WaveformRecord;
use crate::hardlimit::{HardLimitSpec, SineInput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid sampling rate {0}")]
    SampleRate(f64),
    #[error("frequency {freq} Hz is not below Nyquist ({nyquist} Hz)")]
    AboveNyquist { freq: f64, nyquist: f64 },
    #[error("record length must be positive")]
    EmptyRecord,
    #[error("per-segment random phase needs a positive segment length")]
    MissingSegmentLength,
    #[error("invalid filter cutoff {0} Hz")]
    Cutoff(f64),
    #[error("invalid tone parameter: {0}")]
    Tone(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    Fixed,
    /// Base phase redrawn uniformly for every analysis segment, so the tone
    /// carries no phase relation to the others across segments.
    PerSegmentRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub phase_mode: PhaseMode,
}

impl Tone {
    pub fn new(freq_hz: f64, amplitude: f64, phase: f64) -> Self {
        Self {
            freq_hz,
            amplitude,
            phase,
            phase_mode: PhaseMode::Fixed,
        }
    }

    pub fn per_segment_random(mut self) -> Self {
        self.phase_mode = PhaseMode::PerSegmentRandom;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub tones: Vec<Tone>,
    pub fs: f64,
    pub length: usize,
    /// Per-tone, per-sample phase noise inside the cosine argument.
    pub phase_noise_db: Option<f64>,
    /// Additive Gaussian noise on the summed signal.
    pub additive_noise_db: Option<f64>,
    /// Segment length used by `PerSegmentRandom` tones.
    pub segment_len: Option<usize>,
}

impl ToneSpec {
    pub fn new(tones: Vec<Tone>, fs: f64, length: usize) -> Self {
        Self {
            tones,
            fs,
            length,
            phase_noise_db: None,
            additive_noise_db: None,
            segment_len: None,
        }
    }

    /// Three unit cosines at `f1`, `f2` and `f1 + f2`, the third with phase
    /// `phi3`, each carrying `noise_db` of phase noise.
    pub fn coupled_triplet(f1: f64, f2: f64, phi3: f64, noise_db: f64, fs: f64, length: usize) -> Self {
        Self {
            phase_noise_db: Some(noise_db),
            ..Self::new(
                vec![
                    Tone::new(f1, 1.0, 0.0),
                    Tone::new(f2, 1.0, 0.0),
                    Tone::new(f1 + f2, 1.0, phi3),
                ],
                fs,
                length,
            )
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        check_rate(self.fs)?;
        if self.length == 0 {
            return Err(SynthError::EmptyRecord);
        }
        for t in &self.tones {
            check_nyquist(t.freq_hz, self.fs)?;
            if !(t.amplitude.is_finite() && t.phase.is_finite()) {
                return Err(SynthError::Tone(format!("{t:?}")));
            }
            if t.phase_mode == PhaseMode::PerSegmentRandom && !matches!(self.segment_len, Some(n) if n > 0) {
                return Err(SynthError::MissingSegmentLength);
            }
        }
        Ok(())
    }
}

fn check_rate(fs: f64) -> Result<(), SynthError> {
    if fs.is_finite() && fs > 0.0 {
        Ok(())
    } else {
        Err(SynthError::SampleRate(fs))
    }
}

fn check_nyquist(freq: f64, fs: f64) -> Result<(), SynthError> {
    let nyquist = fs / 2.0;
    if freq.is_finite() && freq >= 0.0 && freq < nyquist {
        Ok(())
    } else {
        Err(SynthError::AboveNyquist { freq, nyquist })
    }
}

fn noise_sigma(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn normal(db: Option<f64>) -> Option<Normal<f64>> {
    db.map(|d| Normal::new(0.0, noise_sigma(d)).expect("finite sigma"))
}

/// Sum of cosines `A cos(2π f n/fs + φ + w(n))`, plus optional additive noise.
pub fn gen_tones(spec: &ToneSpec, seed: u64) -> Result<Vec<f64>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seg_len = spec.segment_len.unwrap_or(spec.length).max(1);
    let n_segments = spec.length.div_ceil(seg_len);

    // segment phases are drawn up front so the phase-noise stream does not
    // depend on which tones are randomised
    let base: Vec<Vec<f64>> = spec
        .tones
        .iter()
        .map(|t| match t.phase_mode {
            PhaseMode::Fixed => vec![t.phase],
            PhaseMode::PerSegmentRandom => (0..n_segments)
                .map(|_| t.phase + rng.gen_range(0.0..2.0 * PI))
                .collect(),
        })
        .collect();

    let phase_noise = normal(spec.phase_noise_db);
    let additive = normal(spec.additive_noise_db);
    let mut out = Vec::with_capacity(spec.length);
    for n in 0..spec.length {
        let seg = n / seg_len;
        let mut acc = 0.0;
        for (t, phases) in spec.tones.iter().zip(&base) {
            let phi = phases[seg.min(phases.len() - 1)];
            let w = phase_noise.map_or(0.0, |d| d.sample(&mut rng));
            acc += t.amplitude * (2.0 * PI * t.freq_hz * n as f64 / spec.fs + phi + w).cos();
        }
        if let Some(d) = additive {
            acc += d.sample(&mut rng);
        }
        out.push(acc);
    }
    Ok(out)
}

/// `apply_limit(A sin(2π f t) + offset)` sampled at `fs`, plus optional
/// additive Gaussian noise.
pub fn gen_clipped_sine(
    input: &SineInput,
    spec: &HardLimitSpec,
    fs: f64,
    length: usize,
    seed: u64,
    noise_db: Option<f64>,
) -> Result<Vec<f64>, SynthError> {
    check_rate(fs)?;
    check_nyquist(input.freq_hz, fs)?;
    if length == 0 {
        return Err(SynthError::EmptyRecord);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(noise_db);
    Ok((0..length)
        .map(|n| {
            let theta = 2.0 * PI * input.freq_hz * n as f64 / fs;
            let y = spec.apply(input.at_angle(theta));
            y + noise.map_or(0.0, |d| d.sample(&mut rng))
        })
        .collect())
}

/// Adds independent Gaussian noise of `noise_db` to every channel.
pub fn add_noise(record: &WaveformRecord, noise_db: f64, seed: u64) -> WaveformRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, noise_sigma(noise_db)).expect("finite sigma");
    record.map_channels(|x| x.iter().map(|v| v + d.sample(&mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    FirstOrderLowPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoff_hz: f64,
    pub fs: f64,
}

impl FilterSpec {
    pub fn low_pass(cutoff_hz: f64, fs: f64) -> Result<Self, SynthError> {
        check_rate(fs)?;
        if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
            return Err(SynthError::Cutoff(cutoff_hz));
        }
        Ok(Self {
            kind: FilterKind::FirstOrderLowPass,
            cutoff_hz,
            fs,
        })
    }

    /// `(b0, b1, a1)` of `y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1]`, from the
    /// bilinear transform prewarped so the -3 dB point lands on the cutoff.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        let k = (PI * self.cutoff_hz / self.fs).tan();
        let b = k / (1.0 + k);
        (b, b, (k - 1.0) / (k + 1.0))
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let (b0, b1, a1) = self.coefficients();
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.fs);
        (b0 + b1 * z1) / (1.0 + a1 * z1)
    }
}

/// Runs the filter, starting from the steady state of a constant input equal
/// to `x[0]`, so constant signals pass through unchanged.
pub fn apply_filter(x: &[f64], spec: &FilterSpec) -> Vec<f64> {
    let (b0, b1, a1) = spec.coefficients();
    let Some(&first) = x.first() else {
        return Vec::new();
    };
    let (mut xp, mut yp) = (first, first);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b1 * xp - a1 * yp;
            xp = v;
            yp = y;
            y
        })
        .collect()
}
