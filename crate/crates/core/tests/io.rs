use mfg_core::analysis::{check_carleman, draw_samples, SamplerSpec};
use mfg_core::costs::{Psi, RunningCost, TerminalCost, TerminalCostSpec};
use mfg_core::exec::Parallelism;
use mfg_core::forward::{measure, solve_mfg, SolverOptions};
use mfg_core::io::*;
use mfg_core::ops::Sign;
use mfg_core::{ComplexField, FactoredField, Field, Grid, GridSpec};
use num_complex::Complex64;

fn small() -> Grid {
    Grid::new(GridSpec::coarse(17, 9)).unwrap()
}

#[test]
fn fields_round_trip_bit_exactly() {
    let g = small();
    let dir = tempfile::tempdir().unwrap();
    let n = g.outer().len();
    let vals: Vec<f64> = (0..n * g.nt()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
    let f = Field::from_raw(n, g.nt(), false, vals).unwrap();
    let h = FieldHeader::on(g.outer(), &g, g.nt());
    let p = dir.path().join("f.bin");
    write_field(&p, &h, &f).unwrap();
    let (h2, f2) = read_field(&p).unwrap();
    assert_eq!(h2, h);
    assert_eq!(f2.values(), f.values());
    assert_eq!(std::fs::metadata(&p).unwrap().len(), (n * g.nt() * 8) as u64);

    let z = ComplexField::from_raw(n, 1, true, (0..n).map(|i| Complex64::new(i as f64, -0.5 * i as f64)).collect()).unwrap();
    let pz = dir.path().join("z.bin");
    write_complex_field(&pz, &h, &z).unwrap();
    let (hz, z2) = read_complex_field(&pz).unwrap();
    assert!(hz.complex && !hz.factored);
    assert_eq!(z2.values(), z.values());
    assert!(read_field(&pz).is_err());

    let ff = FactoredField { log_envelope: Field::constant(n, 1, 3.5), oscillator: z.clone() };
    let pf = dir.path().join("ff.bin");
    write_factored_field(&pf, &h, &ff).unwrap();
    let (_, ff2) = read_factored_field(&pf).unwrap();
    assert_eq!(ff2.log_envelope.values(), ff.log_envelope.values());
    assert_eq!(ff2.oscillator.values(), z.values());
}

#[test]
fn truncated_files_are_data_errors() {
    let g = small();
    let dir = tempfile::tempdir().unwrap();
    let n = g.inner().len();
    let p = dir.path().join("f.bin");
    write_field(&p, &FieldHeader::on(g.inner(), &g, 1), &Field::spatial(vec![1.0; n])).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(read_field(&p), Err(mfg_core::Error::Data(_))));
    assert!(matches!(read_field(&dir.path().join("none.bin")), Err(mfg_core::Error::Data(_))));
}

#[test]
fn measurement_directory_round_trips() {
    let g = small();
    let f = RunningCost::exp_shifted(g.outer().len(), 2).unwrap();
    let gt = TerminalCost::new(g.outer(), TerminalCostSpec { radius: 0.125, psi: Psi::Exp { a: 1.0 } }).unwrap();
    let m0: Vec<f64> = g.outer().coords().iter().map(|x| 1.0 + 0.02 * (2.0 * std::f64::consts::PI * x[0]).cos()).collect();
    let sol = solve_mfg(&g, &f, &gt, &m0, &SolverOptions::default()).unwrap();
    let data = measure(&sol, &g);
    let dir = tempfile::tempdir().unwrap();
    let man = write_measurement(dir.path(), &g, &data, "exp", "cos", serde_json::json!({"tol": 1e-12})).unwrap();
    assert_eq!(man.files.len(), 6);
    let (man2, back) = read_measurement(dir.path(), &g).unwrap();
    assert_eq!(man2, man);
    assert_eq!(back.sub(&data).max_abs(), 0.0);
    let other = Grid::new(GridSpec::coarse(17, 17)).unwrap();
    assert!(matches!(read_measurement(dir.path(), &other), Err(mfg_core::Error::Data(_))));
    let h1 = hash_tree(dir.path(), &[]).unwrap();
    let h2 = hash_tree(dir.path(), &["manifest.json"]).unwrap();
    assert_ne!(h1, h2);
    assert_eq!(h1, hash_tree(dir.path(), &[]).unwrap());
}

#[test]
fn estimate_report_writes_json_and_csv() {
    let g = small();
    let spec = SamplerSpec { count: 2, ..SamplerSpec::default() };
    let rep = check_carleman(&g, &draw_samples(&spec), &[2.0, 4.0], Sign::Plus, &spec, Parallelism::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_estimate(dir.path(), &rep).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("carleman_plus_ratios.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sample,lambda,ratio");
    assert_eq!(lines.len(), 5);
    assert!(lines[2].starts_with("0,4.0,"));
    let back: mfg_core::analysis::EstimateReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("carleman_plus.json")).unwrap()).unwrap();
    assert_eq!(back, rep);
}
