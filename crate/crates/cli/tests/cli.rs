use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn grid() -> Value {
    json!({"dim": 2, "outer": [[0, 1], [0, 1]], "inner": [[0.25, 0.75], [0.25, 0.75]], "n_outer": 17, "T": 1.0, "nt": 17})
}

fn run(dir: &Path, sub: &str, cfg: &Value, extra: &[&str]) -> Output {
    let p = dir.join(format!("{sub}.json"));
    std::fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mfgip"))
        .arg(sub)
        .arg("--config")
        .arg(&p)
        .args(extra)
        .env_remove(mfg_cli::OUT_ROOT_VAR)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_f64(p: &Path) -> Vec<f64> {
    std::fs::read(p).unwrap().chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

#[test]
fn stationary_forward_writes_constant_measurements() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({
        "grid": grid(),
        "costs": {"f_true": {"kind": "linear", "c": 1.0}, "g": {"radius": 0.125, "psi": {"name": "linear"}}},
        "m0": {"kind": "uniform"},
        "out": "o"
    });
    let o = run(d.path(), "forward", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let u0 = read_f64(&d.path().join("o/measurement/u_at0.bin"));
    assert!(u0.iter().all(|v| (v - 1.0).abs() < 1e-8));
    let side: Value = serde_json::from_slice(&std::fs::read(d.path().join("o/measurement/u_at0.json")).unwrap()).unwrap();
    assert_eq!(side["dims"], json!([9, 9]));
    assert_eq!(side["complex"], json!(false));
    let man: Value = serde_json::from_slice(&std::fs::read(d.path().join("o/manifest.json")).unwrap()).unwrap();
    for key in ["config_hash", "grid_hash", "code_version", "seed"] {
        assert!(man.get(key).is_some(), "manifest lacks {key}");
    }
}

#[test]
fn divergent_forward_exits_two_with_history() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({
        "grid": grid(),
        "costs": {"f_true": {"kind": "linear", "c": 80.0}, "g": {"radius": 0.125, "psi": {"name": "linear"}}},
        "m0": {"kind": "random", "amplitude": 0.9},
        "solver": {"theta": 1.0},
        "out": "o"
    });
    let o = run(d.path(), "forward", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(d.path().join("o/residual_history.csv").exists());
}

#[test]
fn config_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({"grid": grid(), "costs": {"f_true": {"kind": "file", "coeffs": ["missing.bin"], "a1": 0.5}}, "out": "o"});
    assert_eq!(run(d.path(), "forward", &cfg, &[]).status.code(), Some(1));
    let bad = json!({"grid": grid(), "unknown_key": 1});
    assert_eq!(run(d.path(), "forward", &bad, &[]).status.code(), Some(1));
    let empty = json!({"grid": grid(), "verify": {"suites": []}, "out": "o"});
    assert_eq!(run(d.path(), "verify", &empty, &[]).status.code(), Some(1));
}

#[test]
fn tampered_mass_tolerance_fails_verification() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({"grid": grid(), "verify": {"suites": [{"suite": "mass", "samples": 2, "tol": 1e-16}]}, "out": "o"});
    let o = run(d.path(), "verify", &cfg, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("mass"), "{}", stderr(&o));
    let ok = json!({"grid": grid(), "verify": {"suites": [
        {"suite": "mass", "samples": 2},
        {"suite": "carleman_plus", "sampler": {"count": 4}},
        {"suite": "energy"}
    ]}, "out": "o2"});
    let o = run(d.path(), "verify", &ok, &["--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.path().join("o2/verify/carleman_plus_ratios.csv").exists());
}

fn cgo(xi: [f64; 2], eta: [f64; 2], sign: &str) -> Value {
    json!({"lambda": 4.0, "xi": xi, "eta": eta, "tau": 0.0, "sign": sign})
}

#[test]
fn mismatched_probe_pair_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({
        "grid": grid(),
        "probe": {"pairs": [{"plus": cgo([1.0, 0.0], [0.0, 1.0], "+"), "minus": cgo([-1.0, 0.0], [0.0, 1.0], "-")}]},
        "out": "o"
    });
    let o = run(d.path(), "reconstruct", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn probe_command_writes_factored_fields() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({"grid": grid(), "probe": {"cgo": [cgo([1.0, 0.0], [0.0, 1.0], "+")]}, "out": "o"});
    let o = run(d.path(), "probe", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let side: Value = serde_json::from_slice(&std::fs::read(d.path().join("o/probe0.json")).unwrap()).unwrap();
    assert_eq!(side["factored"], json!(true));
    let rows: Value = serde_json::from_slice(&std::fs::read(d.path().join("o/probes.json")).unwrap()).unwrap();
    assert!(rows[0]["residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn equal_costs_reconstruct_to_zero_deterministically() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({"grid": grid(), "probe": {"per_axis": 3}, "reconstruct": {"options": {"modes": 3}}, "seed": 3});
    let a = run(d.path(), "reconstruct", &cfg, &["--out", d.path().join("a").to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = run(d.path(), "reconstruct", &cfg, &["--out", d.path().join("b").to_str().unwrap(), "--workers", "1"]);
    assert_eq!(a.stdout, b.stdout);
    let s: Value = serde_json::from_slice(&std::fs::read(d.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(s[0]["within_floor"], json!(true));
    assert_eq!(s[0]["l2_norm"].as_f64().unwrap(), 0.0);
    let c = run(d.path(), "reconstruct", &cfg, &["--out", d.path().join("c").to_str().unwrap(), "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn catalog_and_linearize_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = json!({"grid": grid(), "directions": [{"kind": "cosine", "k": [1, 0], "amp": 0.1}, {"kind": "positive", "floor": 0.5}], "out": "o"});
    let o = run(d.path(), "catalog", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("exp_shifted"));
    let o = run(d.path(), "linearize", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(d.path().join("o/order2/measurement/manifest.json").exists());
}
