//! End-to-end runs of the `metastab` binary.

use metastab::cli::{Payload, ReportEnvelope};
use metastab::complementing::CauchyStatus;
use std::fs;
use std::path::Path;
use std::process::Command;

fn metastab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_metastab")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn check_complementing_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ok");
    let (code, _) = metastab(&["check-complementing", "--a1", "I", "--a2", "2I", "--e", "0,0,1", "--strict", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let env = ReportEnvelope::read(&out.join("report.json")).unwrap();
    match env.payload {
        Payload::Complementing(r) => assert_eq!(r.verdict.status, CauchyStatus::Satisfied),
        other => panic!("unexpected payload {other:?}"),
    }

    let out = dir.path().join("bad");
    let args = ["check-complementing", "--a1", "I", "--a2", "4,0,0,0,0.25,0,0,0,1", "--e", "0,0,1", "--out", out.to_str().unwrap()];
    let (code, stdout) = metastab(&args);
    assert_eq!(code, 0, "violations only fail under --strict");
    assert!(stdout.contains("Violated"));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(metastab(&strict).0, 2);
}

#[test]
fn invalid_input_exits_one() {
    assert_eq!(metastab(&["check-complementing", "--a1", "-I", "--a2", "I", "--e", "0,0,1"]).0, 1);
    assert_eq!(metastab(&["no-such-command"]).0, 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"version": 1, "unknown_key": 3}"#);
    assert_eq!(metastab(&["audit", "--config", &cfg, "--out", dir.path().to_str().unwrap()]).0, 1);
}

#[test]
fn audit_report_round_trips_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "version": 1,
            "seed": 5,
            "materials": {"eps_plus": "I", "mu_plus": "I", "eps_minus": "-2I", "mu_minus": "-2I"},
            "surface": {"kind": "sphere", "radius": 1.0},
            "audit": {"theorem": "ordered_media", "samples": 128}
        }"#,
    );
    let mut csv = Vec::new();
    let mut envelopes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let (code, _) = metastab(&["audit", "--config", &cfg, "--strict", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        csv.push(fs::read(out.join("series.csv")).unwrap());
        envelopes.push(ReportEnvelope::read(&out.join("report.json")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
    assert_eq!(envelopes[0].payload, envelopes[1].payload);
    assert_eq!(envelopes[0].config_hash, envelopes[1].config_hash);
    assert_eq!(envelopes[0].subcommand, "audit");
}

#[test]
fn critical_contrast_audit_fails_under_strict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "version": 1,
            "materials": {"eps_plus": "I", "mu_plus": "I", "eps_minus": "-I", "mu_minus": "-I"},
            "surface": {"kind": "sphere", "radius": 1.0},
            "audit": {"theorem": "ordered_media", "samples": 64}
        }"#,
    );
    let out = dir.path().join("out");
    assert_eq!(metastab(&["audit", "--config", &cfg, "--strict", "--out", out.to_str().unwrap()]).0, 2);
}

#[test]
fn mie_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "version": 1,
            "mie": {
                "eps_minus": -2.0, "mu_minus": -2.0, "deltas": [1e-3, 1e-4, 1e-5],
                "source": {"kind": "shell_current", "radius": 1.5, "n": 1, "polarization": "TE"}
            }
        }"#,
    );
    let out = dir.path().join("out");
    let (code, _) = metastab(&["mie-sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(metastab::mie::SWEEP_CSV_HEADER));
    assert_eq!(lines.count(), 3);
    match ReportEnvelope::read(&out.join("report.json")).unwrap().payload {
        Payload::Sweep(r) => assert!(r.lap_convergent),
        other => panic!("unexpected payload {other:?}"),
    }
}
