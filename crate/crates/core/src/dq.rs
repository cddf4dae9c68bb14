//! Three-phase records and their dq0 projection.

use std::f64::consts::{FRAC_PI_3, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const TWO_PI_3: f64 = 2.0 * FRAC_PI_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DqError {
    #[error("record needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("sampling interval must be finite and > 0, got {0}")]
    InvalidInterval(f64),
    #[error("nominal frequency must be finite and > 0, got {0}")]
    InvalidFrequency(f64),
    #[error("channel lengths differ: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("channel contains a non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("insufficient data for phase estimation: {0}")]
    InsufficientData(String),
    #[error("record is already in dq form")]
    NotThreePhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum Channels {
    Abc { a: Vec<f64>, b: Vec<f64>, c: Vec<f64> },
    Dq { d: Vec<f64>, q: Vec<f64> },
}

/// A uniformly sampled current record, either three-phase or already in dq form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformRecord {
    pub dt: f64,
    pub nominal_freq_hz: f64,
    channels: Channels,
}

impl WaveformRecord {
    pub fn three_phase(dt: f64, nominal_freq_hz: f64, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self, DqError> {
        validate(dt, nominal_freq_hz, &[&a, &b, &c])?;
        Ok(Self {
            dt,
            nominal_freq_hz,
            channels: Channels::Abc { a, b, c },
        })
    }

    pub fn dq(dt: f64, nominal_freq_hz: f64, d: Vec<f64>, q: Vec<f64>) -> Result<Self, DqError> {
        validate(dt, nominal_freq_hz, &[&d, &q])?;
        Ok(Self {
            dt,
            nominal_freq_hz,
            channels: Channels::Dq { d, q },
        })
    }

    pub fn is_three_phase(&self) -> bool {
        matches!(self.channels, Channels::Abc { .. })
    }

    pub fn channels(&self) -> &Channels {
        &self.channels
    }

    pub fn len(&self) -> usize {
        match &self.channels {
            Channels::Abc { a, .. } => a.len(),
            Channels::Dq { d, .. } => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.nominal_freq_hz
    }

    /// Multiplies every channel by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * k).collect::<Vec<_>>();
        let channels = match &self.channels {
            Channels::Abc { a, b, c } => Channels::Abc {
                a: s(a),
                b: s(b),
                c: s(c),
            },
            Channels::Dq { d, q } => Channels::Dq { d: s(d), q: s(q) },
        };
        Self {
            channels,
            ..self.clone()
        }
    }

    /// Applies `f` to every channel, in a, b, c (or d, q) order.
    pub fn map_channels<F: FnMut(&[f64]) -> Vec<f64>>(&self, mut f: F) -> Self {
        let channels = match &self.channels {
            Channels::Abc { a, b, c } => Channels::Abc {
                a: f(a),
                b: f(b),
                c: f(c),
            },
            Channels::Dq { d, q } => Channels::Dq { d: f(d), q: f(q) },
        };
        Self {
            channels,
            ..self.clone()
        }
    }

    /// Three-phase version of a dq record, rotating from angle `theta0`.
    /// Three-phase records are returned unchanged.
    pub fn to_three_phase(&self, theta0: f64) -> Self {
        match &self.channels {
            Channels::Abc { .. } => self.clone(),
            Channels::Dq { d, q } => {
                let (a, b, c) = inverse_dq0(d, q, None, self.dt, self.nominal_freq_hz, theta0);
                Self {
                    channels: Channels::Abc { a, b, c },
                    ..self.clone()
                }
            }
        }
    }

    /// dq0 signal for the record: three-phase input is projected with the
    /// estimated initial phase, dq input passes straight through.
    pub fn to_dq(&self) -> Result<DqSignal, DqError> {
        match &self.channels {
            Channels::Abc { .. } => {
                let theta0 = estimate_theta0(self)?;
                dq0_transform(self, theta0)
            }
            Channels::Dq { d, q } => Ok(DqSignal {
                xd: d.clone(),
                xq: q.clone(),
                x0: vec![0.0; d.len()],
                theta0: 0.0,
                omega: self.omega(),
            }),
        }
    }
}

fn validate(dt: f64, f0: f64, chans: &[&Vec<f64>]) -> Result<(), DqError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DqError::InvalidInterval(dt));
    }
    if !(f0.is_finite() && f0 > 0.0) {
        return Err(DqError::InvalidFrequency(f0));
    }
    let lens: Vec<usize> = chans.iter().map(|c| c.len()).collect();
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(DqError::LengthMismatch(lens));
    }
    if lens[0] < 2 {
        return Err(DqError::TooShort(lens[0]));
    }
    for c in chans {
        if let Some(i) = c.iter().position(|x| !x.is_finite()) {
            return Err(DqError::NonFinite(i));
        }
    }
    Ok(())
}

/// dq0 components of a record, with the projection's phase and frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqSignal {
    pub xd: Vec<f64>,
    pub xq: Vec<f64>,
    pub x0: Vec<f64>,
    pub theta0: f64,
    pub omega: f64,
}

impl DqSignal {
    pub fn len(&self) -> usize {
        self.xd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xd.is_empty()
    }
}

type Phases<'a> = (&'a [f64], &'a [f64], &'a [f64]);

fn abc_channels(record: &WaveformRecord) -> Result<Phases<'_>, DqError> {
    match record.channels() {
        Channels::Abc { a, b, c } => Ok((a, b, c)),
        Channels::Dq { .. } => Err(DqError::NotThreePhase),
    }
}

/// Initial phase of the fundamental from a closed record.
///
/// Takes the argument of the Hann-weighted fundamental-frequency DFT
/// coefficient of the positive-sequence combination `(2/3)(a + αb + α²c)`,
/// over the largest whole number of fundamental cycles in the record. The
/// window weights are real and symmetric, so a balanced fundamental yields its
/// phase exactly while off-fundamental content is strongly suppressed.
pub fn estimate_theta0(record: &WaveformRecord) -> Result<f64, DqError> {
    let (a, b, c) = abc_channels(record)?;
    let samples_per_cycle = 1.0 / (record.nominal_freq_hz * record.dt);
    let cycles = (a.len() as f64 / samples_per_cycle).floor();
    if cycles < 1.0 {
        return Err(DqError::InsufficientData(format!(
            "{} samples cover less than one {} Hz cycle",
            a.len(),
            record.nominal_freq_hz
        )));
    }
    let span = ((cycles * samples_per_cycle).round() as usize).clamp(2, a.len());
    let alpha = Complex64::from_polar(1.0, TWO_PI_3);
    let alpha2 = alpha * alpha;
    let w = record.omega() * record.dt;
    let denom = (span - 1) as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut scale = 0.0_f64;
    for t in 0..span {
        let win = 0.5 * (1.0 - (2.0 * PI * t as f64 / denom).cos());
        let s = (a[t] + alpha * b[t] + alpha2 * c[t]) * (2.0 / 3.0);
        acc += win * s * Complex64::from_polar(1.0, -w * t as f64);
        scale = scale.max(a[t].abs()).max(b[t].abs()).max(c[t].abs());
    }
    let weight_sum = denom / 2.0;
    if scale == 0.0 || acc.norm() / weight_sum <= 1e-12 * scale {
        return Err(DqError::InsufficientData("no fundamental-frequency content".into()));
    }
    Ok(wrap_phase(acc.arg()))
}

/// Synchronous-reference-frame PLL estimate of the initial phase.
///
/// Streams the record through a PI-controlled angle tracker (gains
/// `kp + ki/s` act on the amplitude-normalised q component) and returns the
/// tracked angle at the last sample minus `ω·t`.
pub fn estimate_theta0_pll(record: &WaveformRecord, kp: f64, ki: f64) -> Result<f64, DqError> {
    let (a, b, c) = abc_channels(record)?;
    let omega = record.omega();
    let dt = record.dt;
    let mut theta = 0.0_f64;
    let mut integ = 0.0_f64;
    for t in 0..a.len() {
        let (sa, sb, sc) = (theta.sin(), (theta - TWO_PI_3).sin(), (theta + TWO_PI_3).sin());
        let (ca, cb, cc) = (theta.cos(), (theta - TWO_PI_3).cos(), (theta + TWO_PI_3).cos());
        let xd = 2.0 / 3.0 * (ca * a[t] + cb * b[t] + cc * c[t]);
        let xq = -2.0 / 3.0 * (sa * a[t] + sb * b[t] + sc * c[t]);
        let amp = xd.hypot(xq);
        let err = if amp > 0.0 { xq / amp } else { 0.0 };
        integ += ki * err * dt;
        if t + 1 < a.len() {
            theta += (omega + kp * err + integ) * dt;
        }
    }
    let elapsed = (a.len() - 1) as f64 * dt;
    if a.len() as f64 * dt * record.nominal_freq_hz < 1.0 {
        return Err(DqError::InsufficientData("record shorter than one cycle".into()));
    }
    Ok(wrap_phase(theta - omega * elapsed))
}

/// Amplitude-invariant dq0 transform with constant `ω = 2π·f0`, sample index
/// `t = 0, 1, ..., L-1`.
pub fn dq0_transform(record: &WaveformRecord, theta0: f64) -> Result<DqSignal, DqError> {
    let (a, b, c) = abc_channels(record)?;
    let omega = record.omega();
    let n = a.len();
    let (mut xd, mut xq, mut x0) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for t in 0..n {
        let ang = omega * t as f64 * record.dt + theta0;
        let (s0, c0) = ang.sin_cos();
        let (s1, c1) = (ang - TWO_PI_3).sin_cos();
        let (s2, c2) = (ang + TWO_PI_3).sin_cos();
        xd.push(2.0 / 3.0 * (c0 * a[t] + c1 * b[t] + c2 * c[t]));
        xq.push(-2.0 / 3.0 * (s0 * a[t] + s1 * b[t] + s2 * c[t]));
        x0.push(1.0 / 3.0 * (a[t] + b[t] + c[t]));
    }
    Ok(DqSignal {
        xd,
        xq,
        x0,
        theta0,
        omega,
    })
}

/// Inverse of [`dq0_transform`]: rebuilds phase currents from dq0 components.
pub fn inverse_dq0(
    xd: &[f64],
    xq: &[f64],
    x0: Option<&[f64]>,
    dt: f64,
    nominal_freq_hz: f64,
    theta0: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let omega = 2.0 * PI * nominal_freq_hz;
    let n = xd.len().min(xq.len());
    let mut out = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for t in 0..n {
        let ang = omega * t as f64 * dt + theta0;
        let zero = x0.map_or(0.0, |z| z[t]);
        let phase = |shift: f64| {
            let (s, c) = (ang + shift).sin_cos();
            c * xd[t] - s * xq[t] + zero
        };
        out.0.push(phase(0.0));
        out.1.push(phase(-TWO_PI_3));
        out.2.push(phase(TWO_PI_3));
    }
    out
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}
