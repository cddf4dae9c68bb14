use std::f64::consts::PI;

use hosdetect::dq::{wrap_phase, Channels};
use hosdetect::hardlimit::{
    apply_limit, fourier_closed_form, fourier_quadrature, harmonic_distortion, invert_saturation, HardLimitSpec,
    LimitKind, SineInput,
};
use hosdetect::hos::Domain;
use hosdetect::record::{read_record, write_record, LoadOptions};
use hosdetect::{SegmentConfig, SpectrumSet, WaveformRecord};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = LimitKind> {
    prop_oneof![Just(LimitKind::Bilateral), Just(LimitKind::Unilateral)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn limiter_output_respects_the_bound(k in kind(), a in 1e-3f64..1e3, off in -10.0f64..10.0, x in -1e4f64..1e4) {
        let off = if k == LimitKind::Bilateral { 0.0 } else { off };
        let spec = HardLimitSpec::new(k, a, off).unwrap();
        let y = apply_limit(&spec, x);
        prop_assert!(y <= off + a);
        if k == LimitKind::Bilateral {
            prop_assert!(y >= -a);
        }
        // idempotent, and the identity inside the band
        prop_assert_eq!(apply_limit(&spec, y), y);
        if x.abs() < a && x <= off + a {
            prop_assert_eq!(y, x);
        }
    }

    #[test]
    fn closed_form_agrees_with_quadrature(eta in 0.2f64..20.0, bias in -0.8f64..0.8, n in 0u32..=7) {
        let spec = HardLimitSpec::unilateral(1.0, 0.0).unwrap();
        let input = SineInput::new(eta, 1.0, bias).unwrap();
        let c = fourier_closed_form(&spec, &input, n).unwrap();
        let q = fourier_quadrature(&spec, &input, n);
        let scale = eta.max(1.0);
        prop_assert!((c.cos - q.cos).abs() < 1e-7 * scale && (c.sin - q.sin).abs() < 1e-7 * scale, "{c:?} {q:?}");
    }

    #[test]
    fn inversion_round_trips(k in kind(), eta in 1.001f64..500.0) {
        let hd = harmonic_distortion(k, eta).unwrap();
        let back = invert_saturation(hd, k).unwrap().value();
        prop_assert!((back - eta).abs() < 1e-5 * eta, "{eta} -> {back}");
    }

    #[test]
    fn wrapped_phase_is_principal_and_congruent(x in -1e3f64..1e3) {
        let y = wrap_phase(x);
        prop_assert!(y > -PI && y <= PI);
        let turns = (x - y) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn record_text_round_trip(xs in prop::collection::vec(-1e6f64..1e6, 4..64), fs in 100.0f64..1e5) {
        let q: Vec<f64> = xs.iter().map(|v| -0.5 * v).collect();
        let rec = WaveformRecord::dq(1.0 / fs, 50.0, xs.clone(), q.clone()).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, &rec, Some(7), &[]).unwrap();
        let back = read_record(&buf[..], LoadOptions::default()).unwrap();
        prop_assert_eq!(back.meta.seed, Some(7));
        prop_assert!((back.record.dt * fs - 1.0).abs() < 1e-9);
        match back.record.channels() {
            Channels::Dq { d, q: bq } => {
                prop_assert_eq!(d, &xs);
                prop_assert_eq!(bq, &q);
            }
            _ => prop_assert!(false, "format changed"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn coherences_are_finite_and_permutation_free(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..16 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let set = SpectrumSet::compute(&x, &SegmentConfig::new(16, 64), 1.0).unwrap();
        for (_, v) in set.bicoherence.grid.iter().chain(set.tricoherence.grid.iter()) {
            // power-product normalisation, so no upper bound of one
            prop_assert!(v >= 0.0 && v.is_finite());
        }
        let bi = Domain::bi(32);
        for c in bi.cells().into_iter().step_by(5) {
            prop_assert_eq!(set.bicoherence.get(&[c[0], c[1]]), set.bicoherence.get(&[c[1], c[0]]));
        }
        for (c, v) in set.tricoherence.grid.iter().step_by(11) {
            for p in [[c[1], c[0], c[2]], [c[2], c[1], c[0]], [c[0], c[2], c[1]]] {
                prop_assert_eq!(set.tricoherence.get(&p), Some(v));
            }
        }
    }
}
