use std::f64::consts::PI;

use hosdetect::vscsim::{
    case2_reduced, case2_spec, measure_limit_cycle, predict_limit_cycle, preset, relay_textbook_loop, simulate, Event,
    EventAction, LimitSite, PiGains, TransferFunction, VscError, CASE2_STABLE_GI, CASE2_UNSTABLE_GI,
};

#[test]
fn textbook_relay_loop_oscillates_at_phase_crossover() {
    // K/(s(s+1)^2) crosses -180 deg at 1 rad/s with |G| = K/2; the clamp's
    // describing function must equal 2/K there. Amplitudes solved to 30
    // digits outside this crate.
    for (k, eta) in [(10.0, 6.339699062777181), (20.0, 12.719266251479049)] {
        let p = predict_limit_cycle(&relay_textbook_loop(k, 1.0).unwrap()).unwrap();
        assert!((p.freq_hz - 1.0 / (2.0 * PI)).abs() < 1e-9, "{p:?}");
        assert!((p.amplitude - eta).abs() < 1e-6 * eta, "K {k}: {}", p.amplitude);
        assert!(p.bias.abs() < 1e-12);
        assert!((p.gain - 2.0 / k).abs() < 1e-9);
    }
}

#[test]
fn loop_gain_below_two_has_no_limit_cycle() {
    let err = predict_limit_cycle(&relay_textbook_loop(1.5, 1.0).unwrap()).unwrap_err();
    assert!(matches!(err, VscError::NoLimitCycle(_)), "{err}");
}

#[test]
fn transfer_function_evaluation() {
    let g = TransferFunction::new(vec![2.0], vec![1.0, 1.0]).unwrap();
    assert_eq!(g.dc_gain(), Some(2.0));
    let w = 2.0 * PI * 3.0;
    let v = g.at_freq(3.0);
    assert!((v.re - 2.0 / (1.0 + w * w)).abs() < 1e-15 && (v.im + 2.0 * w / (1.0 + w * w)).abs() < 1e-15);
    assert!(TransferFunction::new(vec![1.0], vec![0.0]).is_err());
}

#[test]
fn stable_and_destabilising_gains() {
    let spec = case2_spec();
    assert!(spec.linear_poles(CASE2_STABLE_GI).iter().all(|p| p.re < 0.0));
    assert!(spec.linear_poles(CASE2_UNSTABLE_GI).iter().any(|p| p.re > 0.0));
}

#[test]
fn stable_loop_settles_to_the_operating_point() {
    let spec = case2_spec();
    let sim = simulate(&spec, 2.0, &[]).unwrap();
    let tail = &sim.id[sim.len() - 200..];
    for v in tail {
        assert!((v - spec.id0()).abs() < 1e-6, "{v} vs {}", spec.id0());
    }
    assert!(sim.iq[sim.len() - 1].abs() < 1e-6);
    assert!((sim.vdc[sim.len() - 1] - spec.vdc_ref).abs() < 1e-6);
    assert_eq!(sim.spec_digest, spec.digest());
}

#[test]
fn limit_bounds_the_unstable_loop() {
    let spec = case2_spec();
    let lim = *spec.limit(LimitSite::DOuter).unwrap();
    let events = [
        Event::new(0.2, EventAction::SetGi(CASE2_UNSTABLE_GI)),
        Event::new(0.2, EventAction::PerturbVdc(1e-3)),
    ];
    let sim = simulate(&spec, 3.0, &events).unwrap();
    assert!(sim.id_ref.iter().all(|&v| v <= lim.upper() + 1e-12));
    let start = sim.index_at(2.0);
    let m = measure_limit_cycle(&sim.id[start..], sim.dt).unwrap();
    assert!(m.amplitude > 1e-3 && m.freq_hz > 20.0 && m.freq_hz < 40.0, "{m:?}");

    // the same schedule without the limit has nothing to hold it
    match simulate(&spec.clone().without_limits(), 3.0, &events) {
        Err(VscError::NumericalDivergence { .. }) => {}
        Ok(s) => {
            let peak = |from: f64, to: f64| {
                s.id[s.index_at(from)..s.index_at(to)]
                    .iter()
                    .map(|v| (v - spec.id0()).abs())
                    .fold(0.0, f64::max)
            };
            let (early, late) = (peak(1.5, 2.0), peak(2.5, 3.0));
            assert!(late > 2.0 * early && late > 2.0 * m.amplitude, "{early} -> {late}");
        }
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn simulation_is_deterministic() {
    let spec = case2_spec();
    let ev = [Event::new(0.1, EventAction::SetPower(0.3))];
    assert_eq!(simulate(&spec, 0.5, &ev).unwrap(), simulate(&spec, 0.5, &ev).unwrap());
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = case2_spec();
    spec.dt_sim = 1e-2;
    assert!(matches!(simulate(&spec, 1.0, &[]), Err(VscError::InvalidSpec(_))));
    let mut spec = case2_spec();
    spec.sample_dt = 1.234e-4;
    assert!(simulate(&spec, 1.0, &[]).is_err());
    let spec = case2_spec();
    assert!(simulate(&spec, -1.0, &[]).is_err());
    let bad = [Event::new(0.1, EventAction::SetGi(PiGains::new(-1.0, 0.0)))];
    assert!(simulate(&spec, 1.0, &bad).is_err());
}

#[test]
fn preset_lookup() {
    assert_eq!(preset("case2-reduced"), Some(case2_reduced()));
    assert!(preset("nope").is_none());
    let s = case2_reduced();
    assert_eq!(s.final_gi(), CASE2_UNSTABLE_GI);
    assert!(s.duration >= s.record_start + s.record_len as f64 * s.spec.sample_dt - 1e-9);
}
