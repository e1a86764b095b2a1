use std::path::Path;
use std::process::{Command, Output};

use active_rheology::config::RunConfig;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_active-rheology"))
}

fn run(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut c = bin();
    c.args(args).arg("--out").arg(out);
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.output().unwrap()
}

fn report(out: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join(format!("{name}.json"))).unwrap()).unwrap()
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

const SMALL: &str = r#"{"ensemble": {"side": 8.0, "lambda1": 0.02, "realizations": 3},
  "numerics": {"n": 64}}"#;

#[test]
fn dilute_point_dipole_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"ensemble": {"dim": 3},
            "force": {"kind": "dipole", "fbar": 1.0, "offset": 1.5, "gamma": -1.0, "width": 0.3},
            "physics": {"strain": [[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]]},
            "dilute": {"point_dipole": {"offset": 2.0, "fmag": 1.0, "shear": 1.0}}}"#,
    );
    let o = run(&["dilute"], Some(&cfg), &dir.path().join("out"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&dir.path().join("out"), "dilute");
    // γ(s/2)·r·fmag·(1 − (5/2)/8 + (3/2)/32) at d = 3, r = 2: −(64 − 20 + 3)/64
    let oracle = -47.0 / 64.0;
    let v = r["report"]["point_dipole"]["shear_scalar"].as_f64().unwrap();
    assert!((v - oracle).abs() < 1e-12, "{v}");
    let cfg = RunConfig::read(&cfg).unwrap();
    assert_eq!(r["provenance"]["config_hash"].as_str().unwrap(), cfg.hash());
}

#[test]
fn effective_on_empty_ensembles_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"ensemble": {"side": 8.0, "lambda1": 0.0, "realizations": 2}, "numerics": {"n": 32}}"#);
    let out = dir.path().join("out");
    let o = run(&["effective"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b: Vec<f64> = report(&out, "effective")["report"]["bpas"]["mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let id = [1.0, 0.0, 0.0, 1.0];
    for (x, y) in b.iter().zip(id) {
        assert!((x - y).abs() < 1e-12, "{b:?}");
    }
}

#[test]
fn unknown_key_fails_with_the_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"physics": {"kapa": 0.1}}"#);
    let o = run(&["dilute"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kapa"));
    let cfg = write_config(dir.path(), r#"{"ensemble": {"realizations": 0}}"#);
    let o = run(&["gen"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ensemble.realizations"));
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = run(&["effective", "--workers", workers, "--seed", "5"], Some(&cfg), out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(run(&["gen", "--seed", "5"], Some(&cfg), out).status.success());
    }
    for f in ["effective.json", "gen.json", "ensemble_000.txt", "ensemble_002.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(run(&["gen", "--seed", "6"], Some(&cfg), &c).status.success());
    assert_ne!(std::fs::read(a.join("gen.json")).unwrap(), std::fs::read(c.join("gen.json")).unwrap());
    assert_eq!(report(&c, "gen")["provenance"]["seed"].as_u64(), Some(6));
}

#[test]
fn gen_writes_audited_ensembles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(run(&["gen"], Some(&cfg), &out).status.success());
    let r = report(&out, "gen");
    let ens = r["report"]["ensembles"].as_array().unwrap();
    assert_eq!(ens.len(), 3);
    for (k, e) in ens.iter().enumerate() {
        let read = active_rheology::ensemble::ParticleEnsemble::read(&out.join(format!("ensemble_{k:03}.txt"))).unwrap();
        read.audit_hardcore().unwrap();
        assert_eq!(read.len() as u64, e["particles"].as_u64().unwrap());
        if let Some(g) = e["min_surface_gap"].as_f64() {
            assert!(g >= 2.0 * 0.5 - 1e-12);
        }
    }
    let resolved = RunConfig::read(&out.join("resolved_config.json")).unwrap();
    assert_eq!(resolved.hash(), r["provenance"]["config_hash"].as_str().unwrap());
}

#[test]
fn corrector_and_micro_emit_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"ensemble": {"side": 8.0, "lambda1": 0.02, "realizations": 1}, "numerics": {"n": 64, "flow_n": 64},
            "physics": {"eps": 0.25, "kappa": 0.1}}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["corrector"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["psi.vel", "phi.vel", "psi_residuals.csv", "phi_residuals.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(std::fs::read_to_string(out.join("psi_residuals.csv")).unwrap().starts_with("iter,div_res,rigid_res"));
    let o = run(&["micro"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(out.join("micro_fixed_point.csv")).unwrap().starts_with("iter,diff,norm,ratio,resolved"));
    assert!(report(&out, "micro")["report"]["guaranteed"].as_bool().unwrap());
}

#[test]
fn config_subcommand_prints_the_shipped_default() {
    let o = bin().arg("config").output().unwrap();
    assert!(o.status.success());
    let printed = RunConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(printed, RunConfig::default());
}
