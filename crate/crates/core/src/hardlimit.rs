//! Saturation hard limits driven by a sinusoid.
//!
//! Two limiter shapes are covered:
//!
//! * **bilateral**: `y = clamp(x, -a, a)`, odd symmetric, so only the odd sine
//!   harmonics `B1, B3, B5, ...` survive;
//! * **unilateral**: `y = min(x, A0 + a)`, which clips one polarity only and
//!   produces a DC shift, even cosine harmonics `A2, A4, ...` and odd sine
//!   harmonics.
//!
//! For an input `x(θ) = A0 + A sin θ` the Fourier coefficients use the
//! convention `An = (1/π)∫ y cos nθ dθ`, `Bn = (1/π)∫ y sin nθ dθ` over one
//! period, including `n = 0` (so `A_0` is twice the mean output level).
//!
//! [`fourier_closed_form`] evaluates the tabulated expressions up to order 7,
//! [`fourier_quadrature`] integrates the limiter output numerically and is the
//! independent check on them. The harmonic-distortion ratios `HD3b = B3/B1`
//! and `HD2u = A2/B1` are strictly increasing in the saturation level
//! `η = A/a`, so [`invert_saturation`] recovers `η` from a measured ratio.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::GaussLegendre;

/// Highest order covered by [`fourier_closed_form`].
pub const MAX_CLOSED_FORM_ORDER: u32 = 7;

/// Supremum of `HD3b` (square-wave limit).
pub const HD3_BILATERAL_SUP: f64 = 1.0 / 3.0;

/// Supremum of `HD2u`.
pub const HD2_UNILATERAL_SUP: f64 = 4.0 / (3.0 * PI);

const INVERT_UPPER_ETA: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HardLimitError {
    #[error("limit magnitude must be finite and > 0, got {0}")]
    InvalidLimit(f64),
    #[error("bilateral limits are symmetric about zero; offset {0} is not allowed")]
    BilateralOffset(f64),
    #[error("invalid sine input: {0}")]
    InvalidInput(String),
    #[error("closed form tabulated up to order {MAX_CLOSED_FORM_ORDER}, requested {0}")]
    UnsupportedOrder(u32),
    #[error("closed form for a bilateral limit needs a zero-offset input, got offset {0}")]
    OffsetNotSupported(f64),
    #[error("saturation level must be >= 1, got {0}")]
    Domain(f64),
    #[error("distortion ratio {hd} outside [0, {sup})")]
    OutOfRange { hd: f64, sup: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Bilateral,
    Unilateral,
}

impl LimitKind {
    /// Supremum of the distortion ratio used to invert this kind.
    pub fn hd_supremum(self) -> f64 {
        match self {
            LimitKind::Bilateral => HD3_BILATERAL_SUP,
            LimitKind::Unilateral => HD2_UNILATERAL_SUP,
        }
    }

    /// Harmonic order whose ratio to the fundamental characterises the kind.
    pub fn distortion_order(self) -> u32 {
        match self {
            LimitKind::Bilateral => 3,
            LimitKind::Unilateral => 2,
        }
    }
}

/// A saturation hard limit. `offset` is the base level `A0`; the unilateral
/// upper bound sits at `offset + a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardLimitSpec {
    pub kind: LimitKind,
    pub a: f64,
    pub offset: f64,
}

impl HardLimitSpec {
    pub fn new(kind: LimitKind, a: f64, offset: f64) -> Result<Self, HardLimitError> {
        if !(a.is_finite() && a > 0.0) {
            return Err(HardLimitError::InvalidLimit(a));
        }
        if kind == LimitKind::Bilateral && offset != 0.0 {
            return Err(HardLimitError::BilateralOffset(offset));
        }
        if !offset.is_finite() {
            return Err(HardLimitError::InvalidInput(format!("offset {offset}")));
        }
        Ok(Self { kind, a, offset })
    }

    pub fn bilateral(a: f64) -> Result<Self, HardLimitError> {
        Self::new(LimitKind::Bilateral, a, 0.0)
    }

    pub fn unilateral(a: f64, offset: f64) -> Result<Self, HardLimitError> {
        Self::new(LimitKind::Unilateral, a, offset)
    }

    /// Upper clamp level.
    pub fn upper(&self) -> f64 {
        match self.kind {
            LimitKind::Bilateral => self.a,
            LimitKind::Unilateral => self.offset + self.a,
        }
    }

    /// Lower clamp level, if any.
    pub fn lower(&self) -> Option<f64> {
        match self.kind {
            LimitKind::Bilateral => Some(-self.a),
            LimitKind::Unilateral => None,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        apply_limit(self, x)
    }
}

/// Applies the limiter to one sample.
#[inline]
pub fn apply_limit(spec: &HardLimitSpec, x: f64) -> f64 {
    match spec.kind {
        LimitKind::Bilateral => x.clamp(-spec.a, spec.a),
        LimitKind::Unilateral => x.min(spec.offset + spec.a),
    }
}

/// Sinusoidal drive `offset + amplitude * sin(2π f t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineInput {
    pub amplitude: f64,
    pub freq_hz: f64,
    pub offset: f64,
}

impl SineInput {
    pub fn new(amplitude: f64, freq_hz: f64, offset: f64) -> Result<Self, HardLimitError> {
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(HardLimitError::InvalidInput(format!(
                "amplitude must be > 0, got {amplitude}"
            )));
        }
        if !(freq_hz.is_finite() && freq_hz > 0.0) {
            return Err(HardLimitError::InvalidInput(format!(
                "frequency must be > 0, got {freq_hz}"
            )));
        }
        if !offset.is_finite() {
            return Err(HardLimitError::InvalidInput(format!("offset {offset}")));
        }
        Ok(Self {
            amplitude,
            freq_hz,
            offset,
        })
    }

    /// Input sample at phase angle `theta = ωt`.
    #[inline]
    pub fn at_angle(&self, theta: f64) -> f64 {
        self.offset + self.amplitude * theta.sin()
    }
}

/// Fourier coefficients of order `n`: `cos` is `An`, `sin` is `Bn`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoefficients {
    pub order: u32,
    pub cos: f64,
    pub sin: f64,
}

impl HarmonicCoefficients {
    pub fn magnitude(&self) -> f64 {
        self.cos.hypot(self.sin)
    }

    /// Mean output level for `order == 0` (half of `A_0`).
    pub fn dc_level(&self) -> f64 {
        if self.order == 0 {
            0.5 * self.cos
        } else {
            0.0
        }
    }
}

/// Limit saturation level `η = A / a`, always `>= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SaturationLevel(f64);

impl SaturationLevel {
    pub fn new(eta: f64) -> Result<Self, HardLimitError> {
        if eta.is_finite() && eta >= 1.0 {
            Ok(Self(eta))
        } else {
            Err(HardLimitError::Domain(eta))
        }
    }

    /// Saturation level for a drive amplitude against a limit; inputs below the
    /// limit map to 1.
    pub fn from_amplitude(amplitude: f64, a: f64) -> Self {
        Self((amplitude / a).max(1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Closed-form harmonic coefficients for orders `0..=7`.
///
/// Sub-threshold drives (the limiter never engages) return the input's own
/// coefficients: `B1 = A`, `A_0 = 2·offset`, everything else zero.
pub fn fourier_closed_form(
    spec: &HardLimitSpec,
    input: &SineInput,
    n: u32,
) -> Result<HarmonicCoefficients, HardLimitError> {
    if n > MAX_CLOSED_FORM_ORDER {
        return Err(HardLimitError::UnsupportedOrder(n));
    }
    let big_a = input.amplitude;
    match spec.kind {
        LimitKind::Bilateral => {
            if input.offset != 0.0 {
                return Err(HardLimitError::OffsetNotSupported(input.offset));
            }
            if big_a <= spec.a {
                return Ok(pass_through(input, n));
            }
            Ok(HarmonicCoefficients {
                order: n,
                cos: 0.0,
                sin: bilateral_sine_row(n, spec.a, big_a),
            })
        }
        LimitKind::Unilateral => {
            // clip level measured from the centre of the drive
            let a_eff = spec.upper() - input.offset;
            if a_eff >= big_a {
                return Ok(pass_through(input, n));
            }
            if a_eff <= -big_a {
                let cos = if n == 0 { 2.0 * spec.upper() } else { 0.0 };
                return Ok(HarmonicCoefficients {
                    order: n,
                    cos,
                    sin: 0.0,
                });
            }
            Ok(unilateral_row(n, a_eff, big_a, input.offset))
        }
    }
}

fn pass_through(input: &SineInput, n: u32) -> HarmonicCoefficients {
    let (cos, sin) = match n {
        0 => (2.0 * input.offset, 0.0),
        1 => (0.0, input.amplitude),
        _ => (0.0, 0.0),
    };
    HarmonicCoefficients { order: n, cos, sin }
}

// Bn of the bilateral limit, rows of the tabulated closed forms.
fn bilateral_sine_row(n: u32, a: f64, big_a: f64) -> f64 {
    let r = a / big_a;
    let root = (1.0 - r * r).sqrt();
    let phi = r.asin();
    match n {
        1 => (2.0 * a * root + 2.0 * big_a * phi) / PI,
        3 => 4.0 * a * root.powi(3) / (3.0 * PI),
        5 => {
            let (a2, bb2) = (a * a, big_a * big_a);
            4.0 * a * root * (8.0 * a2 * a2 - 11.0 * a2 * bb2 + 3.0 * bb2 * bb2) / (15.0 * bb2 * bb2 * PI)
        }
        7 => {
            (48.0 * a * (7.0 * phi).cos() + 28.0 * big_a * (6.0 * phi).sin() - 21.0 * big_a * (8.0 * phi).sin())
                / (84.0 * PI)
        }
        _ => 0.0,
    }
}

fn unilateral_row(n: u32, a: f64, big_a: f64, offset: f64) -> HarmonicCoefficients {
    let r = a / big_a;
    let root = (1.0 - r * r).sqrt();
    let phi = r.asin();
    let (a2, bb2) = (a * a, big_a * big_a);
    let (cos, sin) = match n {
        0 => (a + 2.0 * offset - 2.0 / PI * root * big_a - 2.0 * a / PI * phi, 0.0),
        1 => (0.0, (2.0 * a * root + big_a * PI + 2.0 * big_a * phi) / (2.0 * PI)),
        2 => (2.0 * root * (bb2 - a2) / (3.0 * big_a * PI), 0.0),
        3 => (0.0, 2.0 * a * root.powi(3) / (3.0 * PI)),
        4 => (
            2.0 * root * (6.0 * a2 * a2 - 7.0 * a2 * bb2 + bb2 * bb2) / (15.0 * big_a.powi(3) * PI),
            0.0,
        ),
        5 => (
            0.0,
            2.0 * a * (3.0 + 8.0 * r.powi(4) - 11.0 * r * r) * root / (15.0 * PI),
        ),
        6 => (
            2.0 * root * (-80.0 * a2.powi(3) + 128.0 * a2 * a2 * bb2 - 51.0 * a2 * bb2 * bb2 + 3.0 * bb2.powi(3))
                / (105.0 * big_a.powi(5) * PI),
            0.0,
        ),
        7 => (
            0.0,
            (48.0 * a * (7.0 * phi).cos() + 28.0 * big_a * (6.0 * phi).sin() - 21.0 * big_a * (8.0 * phi).sin())
                / (168.0 * PI),
        ),
        _ => unreachable!("order checked by caller"),
    };
    HarmonicCoefficients { order: n, cos, sin }
}

/// Numerically integrates the limiter output against `cos nθ` / `sin nθ`.
///
/// The period is split at every angle where the drive crosses a clamp level,
/// so each piece is analytic and a composite Gauss-Legendre rule converges to
/// machine precision.
pub fn fourier_quadrature(spec: &HardLimitSpec, input: &SineInput, n: u32) -> HarmonicCoefficients {
    let mut breaks = vec![0.0, 2.0 * PI];
    let levels = [Some(spec.upper()), spec.lower()];
    for level in levels.into_iter().flatten() {
        let s = (level - input.offset) / input.amplitude;
        if s.abs() < 1.0 {
            let base = s.asin();
            breaks.push(base.rem_euclid(2.0 * PI));
            breaks.push(PI - base);
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();

    let rule = GaussLegendre::new(32);
    let nf = n as f64;
    let panels = 4 + n as usize / 4;
    let (mut c, mut s) = (0.0, 0.0);
    for w in breaks.windows(2) {
        let y = |t: f64| apply_limit(spec, input.at_angle(t));
        c += rule.integrate(|t| y(t) * (nf * t).cos(), w[0], w[1], panels);
        s += rule.integrate(|t| y(t) * (nf * t).sin(), w[0], w[1], panels);
    }
    HarmonicCoefficients {
        order: n,
        cos: c / PI,
        sin: if n == 0 { 0.0 } else { s / PI },
    }
}

/// Bilateral third-harmonic distortion `B3/B1` as a function of `η`.
pub fn hd3_bilateral(eta: f64) -> Result<f64, HardLimitError> {
    let eta = SaturationLevel::new(eta)?.value();
    let inv = 1.0 / eta;
    let root = (1.0 - inv * inv).sqrt();
    Ok(2.0 * root.powi(3) / (3.0 * (root + eta * inv.asin())))
}

/// Unilateral second-harmonic distortion `A2/B1` as a function of `η`.
pub fn hd2_unilateral(eta: f64) -> Result<f64, HardLimitError> {
    let eta = SaturationLevel::new(eta)?.value();
    let inv = 1.0 / eta;
    let root = (1.0 - inv * inv).sqrt();
    Ok(4.0 * root * (eta * eta - 1.0) / (3.0 * eta * (2.0 * root + eta * PI + 2.0 * eta * inv.asin())))
}

/// Distortion ratio that characterises `kind` at saturation level `eta`.
pub fn harmonic_distortion(kind: LimitKind, eta: f64) -> Result<f64, HardLimitError> {
    match kind {
        LimitKind::Bilateral => hd3_bilateral(eta),
        LimitKind::Unilateral => hd2_unilateral(eta),
    }
}

/// Recovers `η` from a distortion ratio by bisection on `[1, 1e6]`.
pub fn invert_saturation(hd: f64, kind: LimitKind) -> Result<SaturationLevel, HardLimitError> {
    let sup = kind.hd_supremum();
    if !(hd.is_finite() && hd >= 0.0 && hd < sup) {
        return Err(HardLimitError::OutOfRange { hd, sup });
    }
    if hd == 0.0 {
        return SaturationLevel::new(1.0);
    }
    let f = |eta: f64| harmonic_distortion(kind, eta).expect("eta >= 1 inside bracket") - hd;
    let (mut lo, mut hi) = (1.0_f64, INVERT_UPPER_ETA);
    if f(hi) < 0.0 {
        // ratio lies above what η = 1e6 reaches; numerically at the supremum
        return Err(HardLimitError::OutOfRange { hd, sup });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = if f(hi).abs() < f(lo).abs() { hi } else { lo };
    SaturationLevel::new(eta)
}

/// Describing function `N(A) = (Y1/A)·e^{jφ1}` with `φ1 = atan2(A1, B1)`.
///
/// The drive is centred on the limiter's base level (`offset`).
pub fn describing_function(spec: &HardLimitSpec, amplitude: f64) -> Result<Complex64, HardLimitError> {
    let input = SineInput::new(amplitude, 1.0, spec.offset)?;
    let first = fourier_closed_form(spec, &input, 1)?;
    let y1 = first.magnitude();
    let phase = first.cos.atan2(first.sin);
    Ok(Complex64::from_polar(y1 / amplitude, phase))
}
