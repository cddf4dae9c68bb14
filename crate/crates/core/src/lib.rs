//! Detection and classification of hard-limit nonlinearity in converter
//! control loops from terminal current records, using segment-averaged
//! bicoherence and tricoherence.
//!
//! The crate is organised along the processing chain:
//!
//! * [`hardlimit`]: saturation models, harmonic coefficients, distortion
//!   ratios and their inversion;
//! * [`dq`]: three-phase to dq0 conversion and initial-phase estimation;
//! * [`hos`]: power spectrum, bispectrum, trispectrum and coherence maps;
//! * [`detect`]: peak extraction, classification and saturation-level
//!   estimation;
//! * [`synth`] and [`vscsim`]: verification signal generators and a reduced
//!   converter control-loop simulator with a describing-function predictor;
//! * [`record`] and [`cli`]: file formats and the command-line surface.

// `!(x <= y)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod detect;
pub mod dq;
pub mod hardlimit;
pub mod hos;
mod quadrature;
pub mod record;
pub mod synth;
pub mod vscsim;

pub use detect::{analyze, AnalysisError, Classification, DetectionConfig, DetectionReport};
pub use dq::{DqSignal, WaveformRecord};
pub use hardlimit::{HardLimitSpec, LimitKind, SaturationLevel, SineInput};
pub use hos::{CoherenceMap, SegmentConfig, SpectrumSet, Window};
