use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hosdetect(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hosdetect"))
        .args(args)
        .current_dir(dir)
        .env_remove("HOSDETECT_LOG")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> &Output {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn report(dir: &Path, input: &str, extra: &[&str]) -> (i32, Value) {
    let mut args = vec!["analyze", input, "--out", "report.json"];
    args.extend_from_slice(extra);
    let out = hosdetect(&args, dir);
    assert!(
        out.stderr.is_empty(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json = fs::read_to_string(dir.join("report.json")).unwrap();
    (out.status.code().unwrap(), serde_json::from_str(&json).unwrap())
}

fn class(v: &Value, axis: usize) -> &str {
    v["reports"][axis]["classification"].as_str().unwrap()
}

#[test]
fn exit_codes_follow_the_classification() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = |kind: &str, eta: &str, out: &str| {
        ok(&hosdetect(
            &[
                "gen", "clipped", "--kind", kind, "--eta", eta, "--f", "33.8", "--out", out,
            ],
            d,
        ));
    };
    gen("unilateral", "2", "uni.csv");
    gen("bilateral", "2", "bil.csv");
    ok(&hosdetect(
        &[
            "gen", "tones", "--f", "33.8", "--fs", "1000", "--length", "32768", "--out", "sine.csv",
        ],
        d,
    ));

    let (code, v) = report(d, "uni.csv", &[]);
    assert_eq!(code, 10);
    assert_eq!(class(&v, 0), "UnilateralSaturation");
    assert!((v["reports"][0]["eta_sat"].as_f64().unwrap() - 2.0).abs() < 0.2);

    let (code, v) = report(d, "bil.csv", &[]);
    assert_eq!(code, 11);
    assert_eq!(class(&v, 0), "BilateralSaturation");

    let (code, v) = report(d, "sine.csv", &[]);
    assert_eq!(code, 0);
    assert_eq!(class(&v, 0), "NoHardLimitNonlinearity");
}

#[test]
fn three_phase_round_trip_recovers_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hosdetect(
        &[
            "gen",
            "clipped",
            "--kind",
            "unilateral",
            "--eta",
            "2",
            "--f",
            "33.8",
            "--format",
            "abc",
            "--dc",
            "3",
            "--theta0",
            "0.7",
            "--nominal-freq",
            "50",
            "--noise-db",
            "-40",
            "--seed",
            "3",
            "--out",
            "abc.csv",
        ],
        d,
    ));
    let header = fs::read_to_string(d.join("abc.csv")).unwrap();
    assert!(header.contains("t,ia,ib,ic"));
    let (code, v) = report(d, "abc.csv", &[]);
    assert_eq!(code, 10);
    assert!((v["theta0"].as_f64().unwrap() - 0.7).abs() < 1e-3);
    assert_eq!(class(&v, 1), "NoHardLimitNonlinearity");
}

#[test]
fn generation_and_analysis_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "gen",
        "tones",
        "--f",
        "0.6381,0.8345,coupled",
        "--noise-db",
        "-20",
        "--seed",
        "5",
    ];
    let a = ok(&hosdetect(&args, d)).stdout.clone();
    let b = ok(&hosdetect(&args, d)).stdout.clone();
    assert_eq!(a, b);
    fs::write(d.join("tones.csv"), &a).unwrap();
    let r1 = ok(&hosdetect(&["analyze", "tones.csv"], d)).stdout.clone();
    let r2 = ok(&hosdetect(&["analyze", "tones.csv"], d)).stdout.clone();
    assert_eq!(r1, r2);

    let other = ok(&hosdetect(
        &[
            "gen",
            "tones",
            "--f",
            "0.6381,0.8345,coupled",
            "--noise-db",
            "-20",
            "--seed",
            "6",
        ],
        d,
    ))
    .stdout
    .clone();
    assert_ne!(a, other);
}

#[test]
fn report_echoes_the_effective_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hosdetect(
        &[
            "gen",
            "clipped",
            "--kind",
            "unilateral",
            "--eta",
            "2",
            "--f",
            "33.8",
            "--out",
            "u.csv",
        ],
        d,
    ));
    let (_, v) = report(
        d,
        "u.csv",
        &[
            "--segments",
            "60",
            "--seglen",
            "512",
            "--window",
            "rect",
            "--sigma",
            "0.002",
            "--threshold",
            "0.4",
            "--axis",
            "d",
        ],
    );
    let seg = &v["config"]["segment"];
    assert_eq!(seg["segments"], 60);
    assert_eq!(seg["seg_len"], 512);
    assert_eq!(seg["window"], "rectangular");
    assert_eq!(seg["sigma_floor"], 0.002);
    assert_eq!(v["config"]["detection"]["sigma_b"], 0.4);
    assert_eq!(v["config"]["axes"], serde_json::json!(["d"]));
    assert_eq!(v["reports"].as_array().unwrap().len(), 1);
    assert_eq!(v["input"]["samples"], 32768);
    assert_eq!(v["input"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn spectrum_dump_peaks_at_the_coupled_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rec = ok(&hosdetect(
        &["gen", "tones", "--f", "0.6381,0.8345,coupled", "--noise-db", "-20"],
        d,
    ))
    .stdout
    .clone();
    fs::write(d.join("case.csv"), rec).unwrap();
    ok(&hosdetect(&["spectrum", "case.csv", "--out", "dump", "--axis", "d"], d));
    let grid = fs::read_to_string(d.join("dump/d_bicoherence.csv")).unwrap();
    let mut lines = grid.lines();
    assert_eq!(lines.next(), Some("m,n,value"));
    let best = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse::<usize>().unwrap(),
                f[1].parse::<usize>().unwrap(),
                f[2].parse::<f64>().unwrap(),
            )
        })
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap();
    // 0.6381 and 0.8345 Hz at 10/128 Hz per bin
    assert_eq!((best.0, best.1), (8, 11));
    assert!(best.2 > 0.95);
    for f in ["d_power.csv", "d_bispectrum.csv", "d_tricoherence.csv", "d_peaks.json"] {
        assert!(d.join("dump").join(f).exists(), "{f}");
    }
    assert!(!d.join("dump/q_power.csv").exists());
}

#[test]
fn dump_spectra_alongside_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hosdetect(
        &[
            "gen",
            "clipped",
            "--kind",
            "bilateral",
            "--eta",
            "3",
            "--f",
            "33.8",
            "--out",
            "b.csv",
        ],
        d,
    ));
    let out = hosdetect(&["analyze", "b.csv", "--dump-spectra", "spec", "--out", "r.json"], d);
    assert_eq!(out.status.code(), Some(11));
    assert!(String::from_utf8_lossy(&out.stdout).contains("d: BilateralSaturation"));
    assert!(d.join("spec/q_tricoherence.csv").exists());
}

#[test]
fn simulated_limit_cycle_is_unilateral() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hosdetect(
        &[
            "gen",
            "simulate",
            "--preset",
            "case2-reduced",
            "--noise-db",
            "-60",
            "--out",
            "sim.csv",
        ],
        d,
    ));
    let text = fs::read_to_string(d.join("sim.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# spec_sha256=")));
    let (code, v) = report(d, "sim.csv", &[]);
    assert_eq!(code, 10);
    assert_eq!(class(&v, 1), "NoHardLimitNonlinearity");
}

#[test]
fn malformed_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    fs::write(
        d.join("jitter.csv"),
        "# format=dq sample_rate_hz=1000 nominal_freq_hz=50\nt,id,iq\n0,1,0\n0.001,1,0\n0.0025,1,0\n0.003,1,0\n",
    )
    .unwrap();
    fs::write(
        d.join("garbage.csv"),
        "# format=dq nominal_freq_hz=50\nt,id,iq\n0,1,x\n",
    )
    .unwrap();

    let out = hosdetect(&["analyze", "jitter.csv"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-uniform sampling"));

    for args in [
        &["analyze", "empty.csv"][..],
        &["spectrum", "empty.csv", "--out", "x"],
        &["analyze", "garbage.csv"],
        &["analyze", "missing.csv"],
        &["gen", "clipped", "--kind", "bilateral", "--eta", "2", "--f", "600"],
        &["gen", "simulate", "--preset", "nope"],
    ] {
        let out = hosdetect(args, d);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args:?}");
    }
}

#[test]
fn oversized_segmentation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&hosdetect(
        &[
            "gen",
            "clipped",
            "--kind",
            "bilateral",
            "--eta",
            "2",
            "--f",
            "33.8",
            "--length",
            "1000",
            "--out",
            "s.csv",
        ],
        d,
    ));
    let out = hosdetect(&["analyze", "s.csv", "--segments", "8", "--seglen", "256"], d);
    assert_eq!(out.status.code(), Some(2));
}
