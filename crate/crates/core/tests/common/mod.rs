#![allow(dead_code)]

use std::f64::consts::PI;

use hosdetect::hardlimit::{HardLimitSpec, LimitKind, SineInput};
use hosdetect::hos::SegmentConfig;
use hosdetect::synth::gen_clipped_sine;
use num_complex::Complex64;

pub const FS: f64 = 1000.0;
pub const F: f64 = 33.8;
pub const LEN: usize = 32_768;

pub fn dt() -> f64 {
    1.0 / FS
}

pub fn limiter(kind: LimitKind) -> HardLimitSpec {
    HardLimitSpec::new(kind, 1.0, 0.0).unwrap()
}

/// Unit-limit clipped sine at `F`, sampled at `FS`.
pub fn clipped_len(kind: LimitKind, eta: f64, len: usize, noise_db: Option<f64>, seed: u64) -> Vec<f64> {
    let input = SineInput::new(eta, F, 0.0).unwrap();
    gen_clipped_sine(&input, &limiter(kind), FS, len, seed, noise_db).unwrap()
}

pub fn clipped(kind: LimitKind, eta: f64, noise_db: Option<f64>, seed: u64) -> Vec<f64> {
    clipped_len(kind, eta, LEN, noise_db, seed)
}

pub fn sine(len: usize) -> Vec<f64> {
    (0..len).map(|n| (2.0 * PI * F * n as f64 / FS).sin()).collect()
}

/// 128 segments of 256 samples: the default segmentation for `F` at `FS`.
pub fn seg() -> SegmentConfig {
    SegmentConfig::covering(LEN, dt(), F, 8.0)
}

/// Nearest bin to frequency `f`.
pub fn bin(f: f64, df: f64) -> usize {
    (f / df).round() as usize
}

/// Windowed, mean-removed, floored segment spectra from a plain O(N^2) DFT,
/// indexed `[segment][bin]`, bins `0..=N/2`.
pub fn naive_spectra(x: &[f64], cfg: &SegmentConfig) -> Vec<Vec<Complex64>> {
    let n = cfg.seg_len;
    let w: Vec<f64> = match cfg.window {
        hosdetect::Window::Hann => (0..n)
            .map(|l| 0.5 * (1.0 - (2.0 * PI * l as f64 / (n - 1) as f64).cos()))
            .collect(),
        hosdetect::Window::Rectangular => vec![1.0; n],
    };
    (0..cfg.segments)
        .map(|i| {
            let seg = &x[i * n..(i + 1) * n];
            let y: Vec<f64> = match cfg.mean_removal {
                hosdetect::hos::MeanRemoval::AfterWindow => {
                    let yw: Vec<f64> = seg.iter().zip(&w).map(|(s, w)| s * w).collect();
                    let mean = yw.iter().sum::<f64>() / n as f64;
                    yw.iter().map(|v| v - mean).collect()
                }
                hosdetect::hos::MeanRemoval::BeforeWindow => {
                    let mean = seg.iter().sum::<f64>() / n as f64;
                    seg.iter().zip(&w).map(|(s, w)| (s - mean) * w).collect()
                }
            };
            let mut out: Vec<Complex64> = (0..=n / 2)
                .map(|k| {
                    y.iter()
                        .enumerate()
                        .map(|(l, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * l) as f64 / n as f64))
                        .sum::<Complex64>()
                        / n as f64
                })
                .collect();
            let peak = out[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
            for c in out[1..].iter_mut() {
                if c.norm() < cfg.sigma_floor * peak {
                    let phase = if c.norm() > 0.0 { c.arg() } else { 0.0 };
                    *c = Complex64::from_polar(cfg.sigma_floor * cfg.sigma_floor * peak, phase);
                }
            }
            out[0] = Complex64::new(0.0, 0.0);
            out
        })
        .collect()
}

fn mean_power(s: &[Vec<Complex64>], k: usize) -> f64 {
    s.iter().map(|seg| seg[k].norm_sqr()).sum::<f64>() / s.len() as f64
}

/// Bicoherence at `(m, n)` straight from the definition, any argument order.
pub fn naive_bicoherence(s: &[Vec<Complex64>], m: usize, n: usize) -> f64 {
    let b = s
        .iter()
        .map(|seg| seg[m] * seg[n] * seg[m + n].conj())
        .sum::<Complex64>()
        / s.len() as f64;
    let d = mean_power(s, m) * mean_power(s, n) * mean_power(s, m + n);
    if d > 0.0 {
        b.norm() / d.sqrt()
    } else {
        0.0
    }
}

/// Tricoherence at `(m, n, o)` straight from the definition.
pub fn naive_tricoherence(s: &[Vec<Complex64>], m: usize, n: usize, o: usize) -> f64 {
    let t = s
        .iter()
        .map(|seg| seg[m] * seg[n] * seg[o] * seg[m + n + o].conj())
        .sum::<Complex64>()
        / s.len() as f64;
    let d = mean_power(s, m) * mean_power(s, n) * mean_power(s, o) * mean_power(s, m + n + o);
    if d > 0.0 {
        t.norm() / d.sqrt()
    } else {
        0.0
    }
}

/// Seeded standard-normal samples.
pub fn gaussian(len: usize, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}
