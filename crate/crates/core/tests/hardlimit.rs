// reference values are quoted as printed by the quadrature, past f64 precision
#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use hosdetect::hardlimit::{
    describing_function, fourier_closed_form, fourier_quadrature, harmonic_distortion, hd2_unilateral, hd3_bilateral,
    invert_saturation, HardLimitSpec, LimitKind, SineInput,
};

// (order, A_n, B_n) from 30-digit adaptive quadrature split at the clip
// crossings, computed outside this crate.
const UNILATERAL_SHIFTED: [(u32, f64, f64); 8] = [
    (0, 0.289809728933949567, 0.0),
    (1, 0.0, 1.715243020134705948),
    (2, 0.217299548968134432, 0.0),
    (3, 0.0, 0.130379729380880659),
    (4, -0.050413495360607188, 0.0),
    (5, 0.0, 0.003129113505141136),
    (6, -0.024287881016095483, 0.0),
    (7, 0.0, -0.020294536161915367),
];

const BILATERAL_OFFSET_INPUT: [(u32, f64, f64); 8] = [
    (0, 0.210733817968629538, 0.0),
    (1, 0.0, 1.220474113955868007),
    (2, 0.183653686882558749, 0.0),
    (3, 0.0, 0.285431037861052129),
    (4, 0.116716589294739213, 0.0),
    (5, 0.0, 0.075752235516549437),
    (6, 0.043017705971088121, 0.0),
    (7, 0.0, 0.010071798757541581),
];

fn check_table(spec: &HardLimitSpec, input: &SineInput, table: &[(u32, f64, f64)]) {
    for &(n, a, b) in table {
        let c = fourier_closed_form(spec, input, n).unwrap();
        assert!((c.cos - a).abs() < 1e-12, "A{n}: {} vs {a}", c.cos);
        assert!((c.sin - b).abs() < 1e-12, "B{n}: {} vs {b}", c.sin);
        let q = fourier_quadrature(spec, input, n);
        assert!(
            (q.cos - a).abs() < 1e-8 && (q.sin - b).abs() < 1e-8,
            "quadrature order {n}"
        );
    }
}

#[test]
fn shifted_unilateral_limit_with_biased_drive() {
    let spec = HardLimitSpec::unilateral(1.0, 0.5).unwrap();
    let input = SineInput::new(2.0, 50.0, 0.3).unwrap();
    check_table(&spec, &input, &UNILATERAL_SHIFTED);
}

#[test]
fn bilateral_limit_with_biased_drive() {
    // no closed form for an asymmetric clamp; quadrature must still agree
    let spec = HardLimitSpec::bilateral(1.0).unwrap();
    let input = SineInput::new(2.5, 50.0, 0.4).unwrap();
    assert!(fourier_closed_form(&spec, &input, 1).is_err());
    for &(n, a, b) in &BILATERAL_OFFSET_INPUT {
        let q = fourier_quadrature(&spec, &input, n);
        assert!(
            (q.cos - a).abs() < 1e-12 && (q.sin - b).abs() < 1e-12,
            "order {n}: {q:?}"
        );
    }
}

#[test]
fn symmetric_bilateral_has_odd_sine_terms_only() {
    let spec = HardLimitSpec::bilateral(1.0).unwrap();
    let input = SineInput::new(3.0, 1.0, 0.0).unwrap();
    for n in 0..=7 {
        let c = fourier_closed_form(&spec, &input, n).unwrap();
        assert_eq!(c.cos, 0.0);
        if n % 2 == 0 {
            assert_eq!(c.sin, 0.0);
        }
        let q = fourier_quadrature(&spec, &input, n);
        assert!((q.sin - c.sin).abs() < 1e-12 && q.cos.abs() < 1e-12, "order {n}");
    }
}

#[test]
fn distortion_ratios_match_reference_values() {
    // (eta, B3/B1 bilateral, |c2|/|c1| unilateral), same reference quadrature
    let table = [
        (1.5, 0.150035682254381447, 0.098682710392846850),
        (2.0, 0.226326315375257081, 0.171326804150091211),
        (5.0, 0.315651842730326982, 0.318614448510635756),
    ];
    for (eta, hd3, hd2) in table {
        assert!((hd3_bilateral(eta).unwrap() - hd3).abs() < 1e-13, "hd3 at {eta}");
        assert!((hd2_unilateral(eta).unwrap() - hd2).abs() < 1e-13, "hd2 at {eta}");
        assert_eq!(
            harmonic_distortion(LimitKind::Bilateral, eta).unwrap(),
            hd3_bilateral(eta).unwrap()
        );
    }
}

#[test]
fn closed_form_is_independent_of_drive_frequency() {
    let spec = HardLimitSpec::bilateral(0.7).unwrap();
    for f in [0.1, 50.0, 1234.5] {
        let input = SineInput::new(1.9, f, 0.0).unwrap();
        let base = SineInput::new(1.9, 1.0, 0.0).unwrap();
        for n in 0..=7 {
            assert_eq!(
                fourier_closed_form(&spec, &input, n).unwrap(),
                fourier_closed_form(&spec, &base, n).unwrap()
            );
        }
    }
}

#[test]
fn limit_scales_out() {
    // y(k·x; k·a) = k·y(x; a), so every coefficient scales by k
    for (kind, offset) in [(LimitKind::Bilateral, 0.0), (LimitKind::Unilateral, 0.1)] {
        let input = SineInput::new(2.0, 1.0, offset).unwrap();
        let base = HardLimitSpec::new(kind, 1.0, 0.0).unwrap();
        let big = HardLimitSpec::new(kind, 1000.0, 0.0).unwrap();
        let big_in = SineInput::new(2000.0, 1.0, 1000.0 * offset).unwrap();
        for n in 0..=7 {
            let a = fourier_closed_form(&base, &input, n).unwrap();
            let b = fourier_closed_form(&big, &big_in, n).unwrap();
            assert!((b.cos - 1000.0 * a.cos).abs() < 1e-9 && (b.sin - 1000.0 * a.sin).abs() < 1e-9);
        }
    }
}

#[test]
fn sub_threshold_drive_passes_through() {
    let spec = HardLimitSpec::unilateral(1.0, 0.0).unwrap();
    let input = SineInput::new(0.6, 1.0, 0.2).unwrap();
    assert!((fourier_closed_form(&spec, &input, 1).unwrap().sin - 0.6).abs() < 1e-15);
    assert!((fourier_closed_form(&spec, &input, 0).unwrap().dc_level() - 0.2).abs() < 1e-15);
    for n in 2..=7 {
        assert!(fourier_closed_form(&spec, &input, n).unwrap().magnitude() < 1e-15);
    }
}

#[test]
fn orders_past_seven_are_rejected() {
    let spec = HardLimitSpec::bilateral(1.0).unwrap();
    let input = SineInput::new(2.0, 1.0, 0.0).unwrap();
    assert!(fourier_closed_form(&spec, &input, 8).is_err());
}

#[test]
fn saturation_inversion_round_trips() {
    for kind in [LimitKind::Bilateral, LimitKind::Unilateral] {
        for eta in [1.01, 1.3, 2.0, 3.7, 10.0, 100.0] {
            let hd = harmonic_distortion(kind, eta).unwrap();
            let back = invert_saturation(hd, kind).unwrap().value();
            assert!((back - eta).abs() < 1e-6 * eta, "{kind:?} {eta}: {back}");
        }
        assert!(invert_saturation(kind.hd_supremum(), kind).is_err());
        assert!(invert_saturation(-0.1, kind).is_err());
        assert!(invert_saturation(f64::NAN, kind).is_err());
    }
}

#[test]
fn below_unity_saturation_is_a_domain_error() {
    assert!(hd3_bilateral(0.99).is_err());
    assert!(hd2_unilateral(f64::INFINITY).is_err());
}

#[test]
fn saturation_describing_function() {
    // N(A) = (2/π)(asin(1/η) + sqrt(1 - 1/η²)/η) for the bilateral clamp
    let spec = HardLimitSpec::bilateral(1.0).unwrap();
    for eta in [1.5f64, 2.0, 8.0] {
        let r = 1.0 / eta;
        let expect = 2.0 / PI * (r.asin() + r * (1.0 - r * r).sqrt());
        let n = describing_function(&spec, eta).unwrap();
        assert!((n.re - expect).abs() < 1e-13 && n.im.abs() < 1e-15, "eta {eta}: {n}");
    }
    assert!((describing_function(&spec, 0.5).unwrap().re - 1.0).abs() < 1e-15);
}
