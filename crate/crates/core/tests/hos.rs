mod common;

use std::f64::consts::PI;

use common::*;
use hosdetect::hardlimit::LimitKind;
use hosdetect::hos::{power_spectrum, segment_window_fft, Domain, MeanRemoval};
use hosdetect::synth::{gen_tones, Tone, ToneSpec};
use hosdetect::{SegmentConfig, SpectrumSet, Window};

fn rect(m: usize, n: usize) -> SegmentConfig {
    SegmentConfig {
        window: Window::Rectangular,
        ..SegmentConfig::new(m, n)
    }
}

#[test]
fn coherence_matches_direct_definition_on_noisy_clip() {
    let x = clipped_len(LimitKind::Unilateral, 2.0, 64 * 128, Some(-40.0), 5);
    for cfg in [
        SegmentConfig::new(64, 128),
        SegmentConfig {
            mean_removal: MeanRemoval::BeforeWindow,
            ..rect(64, 128)
        },
    ] {
        let set = SpectrumSet::compute(&x, &cfg, dt()).unwrap();
        let naive = naive_spectra(&x, &cfg);
        let half = cfg.half();
        let mut worst: f64 = 0.0;
        for m in 1..half {
            for n in m..=half - m {
                worst = worst.max((set.bicoherence.get(&[n, m]).unwrap() - naive_bicoherence(&naive, m, n)).abs());
            }
        }
        for (c, v) in set.tricoherence.grid.iter().step_by(7) {
            worst = worst.max((v - naive_tricoherence(&naive, c[1], c[2], c[0])).abs());
        }
        assert!(worst < 1e-9, "{cfg:?}: {worst:e}");
    }
}

#[test]
fn on_bin_sine_power_is_quarter_amplitude_squared() {
    let (m, n, k, amp) = (8, 64, 5, 3.0);
    let x: Vec<f64> = (0..m * n)
        .map(|l| amp * (2.0 * PI * k as f64 * l as f64 / n as f64 + 0.4).sin())
        .collect();
    let p = power_spectrum(&segment_window_fft(&x, &rect(m, n), 0.01).unwrap());
    assert!((p.values[k] - amp * amp / 4.0).abs() < 1e-12);
    assert!((p.freq(k) - k as f64 / (n as f64 * 0.01)).abs() < 1e-12);
    // every other bin is empty, so lifted to the floor sigma^2 |X_k|
    let floor = (1e-6 * amp / 2.0) * (1e-6 * amp / 2.0);
    for (i, v) in p.values.iter().enumerate().skip(1) {
        if i != k {
            assert!((v - floor).abs() < 1e-6 * floor, "bin {i}: {v:e}");
        }
    }
}

fn quartet(randomize_last: bool) -> f64 {
    let (fs, n, m) = (10.0, 128, 128);
    let f = [0.4688, 0.7813, 1.25];
    let f4: f64 = f.iter().sum();
    let mut last = Tone::new(f4, 1.0, 0.3);
    if randomize_last {
        last = last.per_segment_random();
    }
    let mut spec = ToneSpec::new(
        vec![
            Tone::new(f[0], 1.0, 0.0),
            Tone::new(f[1], 1.0, 1.0),
            Tone::new(f[2], 1.0, 2.0),
            last,
        ],
        fs,
        n * m,
    );
    spec.segment_len = Some(n);
    spec.phase_noise_db = Some(-20.0);
    let x = gen_tones(&spec, 3).unwrap();
    let set = SpectrumSet::compute(&x, &SegmentConfig::new(m, n), 1.0 / fs).unwrap();
    let c: Vec<usize> = f.iter().map(|&v| bin(v, set.df)).collect();
    set.tricoherence.max_near(&c, 1).map_or(0.0, |(_, v)| v)
}

#[test]
fn cubic_phase_coupling_shows_in_tricoherence() {
    let coupled = quartet(false);
    let random = quartet(true);
    assert!(coupled > 0.9, "coupled {coupled}");
    assert!(random < 0.4, "random {random}");
}

#[test]
fn floor_reaches_empty_bins_but_not_harmonics() {
    let clean = SpectrumSet::compute(&sine(LEN), &seg(), dt()).unwrap();
    assert_eq!(clean.floored.len(), seg().half() + 1);
    assert!(clean.floored.iter().filter(|&&f| f == 1.0).count() > 10);
    let noisy = SpectrumSet::compute(&clipped(LimitKind::Bilateral, 2.0, Some(-40.0), 1), &seg(), dt()).unwrap();
    let k = bin(F, noisy.df);
    for h in [1, 3, 5] {
        assert_eq!(noisy.floored[h * k], 0.0);
    }
    // noise keeps every bin above the floor in most segments
    let total = |f: &[f64]| f.iter().sum::<f64>();
    assert!(noisy.floored.iter().all(|&f| f < 0.9));
    assert!(total(&noisy.floored) < 0.5 * total(&clean.floored));
}

#[test]
fn hann_window_is_symmetric_with_zero_ends() {
    let w = Window::Hann.coefficients(9);
    assert_eq!(w[0], 0.0);
    assert!((w[4] - 1.0).abs() < 1e-15);
    for i in 0..9 {
        assert!((w[i] - w[8 - i]).abs() < 1e-15);
    }
    assert!(Window::Rectangular.coefficients(4).iter().all(|&v| v == 1.0));
}

#[test]
fn domains_cover_the_principal_region_once() {
    let half = 16;
    let bi = Domain::bi(half);
    let cells = bi.cells();
    assert_eq!(cells.len(), bi.len());
    for (i, c) in cells.iter().enumerate() {
        assert!(1 <= c[0] && c[0] <= c[1] && c[0] + c[1] <= half);
        assert_eq!(bi.index(&c[..2]), Some(i));
    }
    assert!(bi.index(&[10, 7]).is_none());
    assert_eq!(bi.index(&[3, 5]), bi.index(&[5, 3]));
    let tri = Domain::tri(half, 8);
    for (i, c) in tri.cells().into_iter().enumerate() {
        assert!(c[0] <= c[1] && c[1] <= c[2] && c[0] + c[1] + c[2] <= half && (1..=8).contains(&c[0]) && c[2] <= 8);
        assert_eq!(tri.index(&[c[2], c[0], c[1]]), Some(i));
    }
    assert!(tri.index(&[1, 2, 9]).is_none());
}

#[test]
fn spectra_are_deterministic() {
    let x = gaussian(32 * 64, 8);
    let cfg = SegmentConfig::new(32, 64);
    let a = SpectrumSet::compute(&x, &cfg, 1.0).unwrap();
    let b = SpectrumSet::compute(&x, &cfg, 1.0).unwrap();
    assert_eq!(a.bicoherence.grid.values(), b.bicoherence.grid.values());
    assert_eq!(a.tricoherence.grid.values(), b.tricoherence.grid.values());
}

#[test]
fn segmentation_must_fit_the_record() {
    let x = vec![0.5; 100];
    assert!(SpectrumSet::compute(&x, &SegmentConfig::new(2, 64), 1.0).is_err());
    assert!(SpectrumSet::compute(&x, &SegmentConfig::new(1, 64), 1.0).is_ok());
    assert!(SpectrumSet::compute(&x, &SegmentConfig::new(1, 64), 0.0).is_err());
}
