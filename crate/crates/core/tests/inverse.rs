use mfg_core::costs::{DirectionSpec, Psi, RunningCost, TerminalCost, TerminalCostSpec};
use mfg_core::forward::{measure_fields, MeasurementData};
use mfg_core::inverse::*;
use mfg_core::linearized::*;
use mfg_core::{Field, Grid, GridSpec};
use num_complex::Complex64;
use std::f64::consts::PI;

fn small() -> Grid {
    Grid::new(GridSpec::coarse(17, 17)).unwrap()
}

fn terminal(grid: &Grid) -> TerminalCost {
    TerminalCost::new(grid.outer(), TerminalCostSpec { radius: 0.125, psi: Psi::Exp { a: 1.0 } }).unwrap()
}

/// `F^(1) = 1 + amp · s(x)` with `s` a product of sines vanishing off Ω.
fn bumped(grid: &Grid, amp: f64, a: usize, b: usize) -> RunningCost {
    let inner = grid.inner();
    let (x0, y0) = (inner.axis(0).lo, inner.axis(1).lo);
    let (lx, ly) = (inner.axis(0).len(), inner.axis(1).len());
    let bump = inner.sample(|x| (a as f64 * PI * (x[0] - x0) / lx).sin() * (b as f64 * PI * (x[1] - y0) / ly).sin());
    let c: Vec<f64> = grid.extend_zero(&bump).iter().map(|v| 1.0 + amp * v).collect();
    RunningCost::new(vec![c, vec![0.5; grid.outer().len()]], 0.4, None).unwrap()
}

fn drive(grid: &Grid, k: [f64; 2]) -> Vec<Complex64> {
    grid.inner()
        .coords()
        .iter()
        .map(|x| Complex64::new(0.0, -(k[0] * x[0] + k[1] * x[1])).exp())
        .collect()
}

fn linearized_data(grid: &Grid, f: &RunningCost, g: &TerminalCost, dir: &[f64]) -> (MeasurementData, Field) {
    let lin = solve_linearized1(grid, f, g, dir, &LateralBc::NeumannOnOuter).unwrap();
    (measure_fields(grid, &lin.u, &lin.m), grid.restrict_field(&lin.m))
}

#[test]
fn boundary_functional_matches_volume_identity() {
    let grid = small();
    let g = terminal(&grid);
    let f_ref = bumped(&grid, 0.0, 1, 1);
    let f_true = bumped(&grid, 0.4, 1, 2);
    let dir = DirectionSpec::Bump { center: vec![0.45, 0.55], radius: 0.3, amp: 1.0 }.build(&grid).unwrap().into_values();
    let (d_true, m_true) = linearized_data(&grid, &f_true, &g, &dir);
    let (d_ref, _) = linearized_data(&grid, &f_ref, &g, &dir);
    let diff = d_true.sub(&d_ref);
    let f1_ref = grid.restrict(f_ref.coeff(1).unwrap());
    for k in [[0.0, 0.0], [2.0 * PI, 0.0], [2.0 * PI, 4.0 * PI]] {
        let test = adjoint_test(&grid, &f1_ref, drive(&grid, k)).unwrap();
        let b = boundary_functional(&grid, &f1_ref, &diff, &test).unwrap();
        let v = eval_identity_costs(&grid, &f_true, &f_ref, 1, &m_true, &test.p, Quadrature::Scheme).unwrap();
        assert!((b - v).norm() <= 1e-6 * v.norm().max(1.0), "k {k:?}: {b} vs {v}");
        assert!(v.norm() > 1e-4, "identity is not trivially zero: {v}");
        let same = eval_identity_costs(&grid, &f_ref, &f_ref, 1, &m_true, &test.p, Quadrature::Scheme).unwrap();
        assert_eq!(same.norm(), 0.0);
    }
}

use mfg_core::cgo::{CGOParams, CorrectionOptions};
use mfg_core::costs::positive_direction;
use mfg_core::exec::Parallelism;
use mfg_core::forward::SolverOptions;
use mfg_core::ops::{Bc, Sign};
use mfg_core::{Error, Region};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(n: usize, nt: usize, rng: &mut ChaCha8Rng) -> Field {
    Field::from_levels((0..nt).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(), false)
}

#[test]
fn green_identity_closes_for_zero_surface_data() {
    let grid = small();
    let sp = grid.inner();
    let nt = grid.nt();
    let f_ref = bumped(&grid, 0.2, 2, 1);
    let f1 = grid.restrict(f_ref.coeff(1).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let test = adjoint_test(&grid, &f1, drive(&grid, [2.0 * PI, PI])).unwrap();
    let sys = SpaceTimeSystem::new(&grid, Bc::Dirichlet, Coupling::Potential(&f1), Coupling::Laplacian, TerminalLink::Data).unwrap();
    for _ in 0..3 {
        let mut u = random_field(sp.len(), nt, &mut rng);
        let mut m = random_field(sp.len(), nt, &mut rng);
        for n in 0..nt {
            for k in sp.boundary_nodes() {
                u.level_mut(n)[k] = 0.0;
                m.level_mut(n)[k] = 0.0;
            }
        }
        u.set_level(0, &vec![0.0; sp.len()]);
        u.set_level(nt - 1, &vec![0.0; sp.len()]);
        m.set_level(0, &vec![0.0; sp.len()]);
        m.set_level(nt - 1, &vec![0.0; sp.len()]);
        let (ru, rm) = sys.residual_rows(&u, &m);
        // pair the manufactured sources with the test exactly as the identity does
        let w = sp.weights();
        let mut s = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for n in 0..nt {
            for k in sp.interior_nodes() {
                if n + 1 < nt {
                    s += test.p.level(n)[k] * ru.level(n)[k] * w[k] * grid.dt();
                    scale += (test.p.level(n)[k] * ru.level(n)[k]).norm() * w[k] * grid.dt();
                }
                if n > 0 {
                    s += test.q.level(n)[k] * rm.level(n)[k] * w[k] * grid.dt();
                }
            }
        }
        assert!(s.norm() <= 1e-8 * scale.max(1.0), "{s} against scale {scale}");
    }
}

#[test]
fn zero_difference_gives_zero_functional() {
    let grid = small();
    let f1 = vec![1.0; grid.inner().len()];
    let test = adjoint_test(&grid, &f1, drive(&grid, [PI, 0.0])).unwrap();
    let b = boundary_functional(&grid, &f1, &MeasurementData::zeros(&grid), &test).unwrap();
    assert_eq!(b.norm(), 0.0);
}

#[test]
fn missing_extension_slices_are_a_data_error() {
    let grid = small();
    let f1 = vec![1.0; grid.inner().len()];
    let test = adjoint_test(&grid, &f1, drive(&grid, [PI, 0.0])).unwrap();
    let mut d = MeasurementData::zeros(&grid);
    d.u_at_t.clear();
    assert!(matches!(boundary_functional(&grid, &f1, &d, &test), Err(Error::Data(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn functional_is_linear_in_the_test(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, seed in 0u64..1000) {
        let grid = small();
        let sp = grid.inner();
        let nt = grid.nt();
        let f1 = vec![1.0; sp.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nb = sp.boundary_nodes().len();
        let rv = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let d = MeasurementData {
            u_at0: rv(&mut rng, sp.len()),
            m_at_t: rv(&mut rng, sp.len()),
            u_sigma: random_field(nb, nt, &mut rng),
            m_sigma: random_field(nb, nt, &mut rng),
            u_at_t: rv(&mut rng, sp.len()),
            m_at0: rv(&mut rng, sp.len()),
        };
        let t1 = adjoint_test(&grid, &f1, drive(&grid, [PI, 0.0])).unwrap();
        let t2 = adjoint_test(&grid, &f1, drive(&grid, [0.0, 2.0 * PI])).unwrap();
        let z = Complex64::new(a, b);
        let w = Complex64::new(c, 0.5);
        let combo = t1.scaled(z).add(&t2.scaled(w)).unwrap();
        let lhs = boundary_functional(&grid, &f1, &d, &combo).unwrap();
        let rhs = z * boundary_functional(&grid, &f1, &d, &t1).unwrap() + w * boundary_functional(&grid, &f1, &d, &t2).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        // and in the data
        let d2 = MeasurementData::combine(&[(a, &d), (c, &d)]);
        let l2 = boundary_functional(&grid, &f1, &d2, &t1).unwrap();
        let r2 = boundary_functional(&grid, &f1, &d, &t1).unwrap() * (a + c);
        prop_assert!((l2 - r2).norm() <= 1e-12 * r2.norm().max(1.0));
    }
}

#[test]
fn quadratures_match_independent_sums() {
    let grid = small();
    let sp = grid.inner();
    let nt = grid.nt();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d: Vec<f64> = (0..sp.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = random_field(sp.len(), nt, &mut rng);
    let rho = random_field(sp.len(), nt, &mut rng).to_complex();
    let trap = eval_identity(&grid, &d, &m, &rho, Quadrature::Trapezoid).unwrap();
    let prod = Field::from_levels(
        (0..nt).map(|n| (0..sp.len()).map(|k| rho.level(n)[k] * d[k] * m.level(n)[k]).collect()).collect(),
        false,
    );
    let oracle = grid.integrate(&prod, Region::Cylinder).unwrap();
    assert!((trap - oracle).norm() <= 1e-12 * oracle.norm().max(1.0));
    // the scheme quadrature is the left sum over interior nodes
    let h = sp.dx(0) * sp.dx(1);
    let mut s = Complex64::new(0.0, 0.0);
    for n in 0..nt - 1 {
        for k in sp.interior_nodes() {
            s += prod.level(n)[k] * h * grid.dt();
        }
    }
    let scheme = eval_identity(&grid, &d, &m, &rho, Quadrature::Scheme).unwrap();
    assert!((scheme - s).norm() <= 1e-12 * s.norm().max(1.0));
    // second-order convergence on smooth integrands
    let fine = Grid::new(GridSpec::coarse(65, 65)).unwrap();
    let smooth = |g: &Grid| {
        let sp = g.inner();
        let d = sp.sample(|x| (PI * x[0]).sin());
        let lv = |t: f64| sp.sample(|x| (1.0 + t) * (PI * x[1]).cos().powi(2));
        let m = Field::from_levels(g.times().iter().map(|&t| lv(t)).collect(), false);
        let one = Field::constant(sp.len(), g.nt(), Complex64::new(1.0, 0.0));
        eval_identity(g, &d, &m, &one, Quadrature::Trapezoid).unwrap().re
    };
    // ∫ sin(πx) dx over [¼,¾] · ∫ cos²(πy) dy over [¼,¾] · ∫ (1+t) dt
    let exact = (2.0f64.sqrt() / PI) * (0.25 - 0.5 / PI) * 1.5;
    let (ec, ef) = ((smooth(&grid) - exact).abs(), (smooth(&fine) - exact).abs());
    let rate = ec / ef;
    assert!((14.0..18.0).contains(&rate), "{ec} {ef}");
}

#[test]
fn first_measurement_derivative_matches_linearization() {
    let grid = small();
    let g = terminal(&grid);
    let f = bumped(&grid, 0.3, 1, 1);
    let dir = positive_direction(&grid, 0.5).into_values();
    let opts = SolverOptions::default();
    let fd = mfg_core::inverse::measurement_derivative(&grid, &f, &g, &dir, 1, 1e-3, &opts, Parallelism::Sequential).unwrap();
    let (lin, _) = linearized_data(&grid, &f, &g, &dir);
    let err = fd.sub(&lin).max_abs() / lin.max_abs();
    assert!(err < 1e-4, "{err}");
    assert!(matches!(
        mfg_core::inverse::measurement_derivative(&grid, &f, &g, &dir, 5, 1e-3, &opts, Parallelism::Sequential),
        Err(Error::Capability(_))
    ));
}

fn reference_setup() -> (Grid, TerminalCost, RunningCost, Vec<f64>) {
    let grid = Grid::reference();
    let g = terminal(&grid);
    let f_ref = RunningCost::exp_shifted(grid.outer().len(), 2).unwrap();
    let dir = positive_direction(&grid, 0.5).into_values();
    (grid, g, f_ref, dir)
}

fn band_limited(grid: &Grid) -> Vec<f64> {
    let (a, b) = (grid.inner().axis(0).lo, grid.inner().axis(1).lo);
    let l = grid.inner().axis(0).len();
    grid.inner().sample(|x| {
        let (s, t) = (PI * (x[0] - a) / l, PI * (x[1] - b) / l);
        0.3 * s.sin() * t.sin() + 0.15 * (2.0 * s).sin() * t.sin() - 0.1 * s.sin() * (3.0 * t).sin()
    })
}

fn order_data(grid: &Grid, f_true: &RunningCost, f_ref: &RunningCost, g: &TerminalCost, dir: &[f64], k: usize) -> MeasurementData {
    let opts = SolverOptions::default();
    let eps = if k == 1 { 1e-2 } else { 2e-2 };
    let a = mfg_core::inverse::measurement_derivative(grid, f_true, g, dir, k, eps, &opts, Parallelism::Rayon).unwrap();
    let b = mfg_core::inverse::measurement_derivative(grid, f_ref, g, dir, k, eps, &opts, Parallelism::Rayon).unwrap();
    a.sub(&b)
}

#[test]
fn order_one_closed_loop_and_provenance() {
    let (grid, g, f_ref, dir) = reference_setup();
    let truth = band_limited(&grid);
    let f_true = f_ref.with_added(1, &grid.extend_zero(&truth)).unwrap();
    let diff = order_data(&grid, &f_true, &f_ref, &g, &dir, 1);
    let plan = ProbePlan::lattice(&grid, 5);
    assert_eq!(plan.frequencies.len(), 25);
    let r = reconstruct_order1(&grid, &f_ref, &g, &dir, &diff, &plan, &ReconstructionOptions::default())
        .unwrap()
        .with_truth(&grid, &truth)
        .unwrap();
    let e = r.error.clone().unwrap();
    assert!(e.relative_l2 <= 0.10, "{e:?}");
    assert!(r.imag_residue <= 0.01, "{}", r.imag_residue);
    assert!(r.residual < 0.1);
    assert!(r.absolute.iter().zip(&r.recovered).all(|(a, d)| a - d > 0.0));
    assert!(!r.provenance.contains(&hash_values(f_true.coeff(1).unwrap())));
    assert!(r.provenance.contains(&hash_values(f_ref.coeff(1).unwrap())));
    // identical measurements
    let same = reconstruct_order1(&grid, &f_ref, &g, &dir, &MeasurementData::zeros(&grid), &plan, &ReconstructionOptions::default()).unwrap();
    assert!(same.l2_norm(&grid) <= 2.0 * same.floor, "{} vs floor {}", same.l2_norm(&grid), same.floor);
}

#[test]
fn out_of_band_truth_against_projection() {
    let (grid, g, f_ref, dir) = reference_setup();
    let sp = grid.inner();
    let truth = sp.sample(|x| 0.3 * (-((x[0] - 0.45).powi(2) + (x[1] - 0.55).powi(2)) / 0.01).exp());
    let f_true = f_ref.with_added(1, &grid.extend_zero(&truth)).unwrap();
    let diff = order_data(&grid, &f_true, &f_ref, &g, &dir, 1);
    let r = reconstruct_order1(&grid, &f_ref, &g, &dir, &diff, &ProbePlan::lattice(&grid, 5), &ReconstructionOptions::default())
        .unwrap()
        .with_truth(&grid, &truth)
        .unwrap();
    let e = r.error.unwrap();
    assert!(e.projected_relative_l2 <= 0.10, "{e:?}");
}

#[test]
fn order_two_closed_loop_with_positive_weight() {
    let (grid, g, f_ref, dir) = reference_setup();
    let truth = band_limited(&grid);
    let f_true = f_ref.with_added(2, &grid.extend_zero(&truth)).unwrap();
    let diff = order_data(&grid, &f_true, &f_ref, &g, &dir, 2);
    let plan = ProbePlan::lattice(&grid, 5);
    let r = reconstruct_order_k(&grid, 2, &f_ref, &g, &dir, &diff, &plan, &ReconstructionOptions::default())
        .unwrap()
        .with_truth(&grid, &truth)
        .unwrap();
    assert_eq!(r.masked_fraction, 0.0);
    assert!(r.mask.iter().all(|m| !m));
    assert!(r.error.clone().unwrap().relative_l2 <= 0.15, "{:?}", r.error);
    let zero = reconstruct_order_k(&grid, 2, &f_ref, &g, &dir, &MeasurementData::zeros(&grid), &plan, &ReconstructionOptions::default()).unwrap();
    assert_eq!(zero.l2_norm(&grid), 0.0);
    assert!(matches!(
        reconstruct_order_k(&grid, 5, &f_ref, &g, &dir, &diff, &plan, &ReconstructionOptions::default()),
        Err(Error::Capability(_))
    ));
}

#[test]
fn vanishing_weight_is_rejected() {
    let grid = small();
    let g = terminal(&grid);
    let f_ref = RunningCost::exp_shifted(grid.outer().len(), 2).unwrap();
    // a direction that changes sign across Ω leaves a band of small weight
    let dir = DirectionSpec::Cosine { k: vec![1, 0], amp: 1.0 }.build(&grid).unwrap().into_values();
    let opts = ReconstructionOptions { weight_floor: 0.3, ..Default::default() };
    let r = reconstruct_order_k(&grid, 2, &f_ref, &g, &dir, &MeasurementData::zeros(&grid), &ProbePlan::lattice(&grid, 3), &opts);
    assert!(matches!(r, Err(Error::Conditioning(_))), "{r:?}");
}

fn cgo_pair(lambda: f64, s: f64) -> (CGOParams, CGOParams) {
    let mut plus = CGOParams::new(lambda, [0.0, 1.0], [1.0, 0.0], 0.0, Sign::Plus);
    plus.scale = s;
    let mut minus = plus;
    minus.sign = Sign::Minus;
    (plus, minus)
}

#[test]
fn fourier_sample_vanishes_for_equal_costs_and_checks_phases() {
    let grid = small();
    let g = terminal(&grid);
    let f = bumped(&grid, 0.0, 1, 1);
    let (plus, minus) = cgo_pair(4.0, 1.0);
    let z = MeasurementData::zeros(&grid);
    let opts = CorrectionOptions::default();
    let s = fourier_sample(&grid, &f, &g, &z, &z, &plus, &minus, &opts).unwrap();
    assert!(s.value.norm() <= 1e-7);
    let (k, tau) = s.frequency.unwrap();
    assert!((k[0] - 2.0).abs() < 1e-12 && k[1].abs() < 1e-12 && tau == 0.0);
    let mut bad = minus;
    bad.xi = [1.0, 0.0];
    bad.eta = [0.0, 1.0];
    assert!(matches!(fourier_sample(&grid, &f, &g, &z, &z, &plus, &bad, &opts), Err(Error::Probe(_))));
}

#[test]
fn fourier_sample_tracks_the_phase_of_the_coefficient() {
    let grid = small();
    let g = terminal(&grid);
    let f_ref = bumped(&grid, 0.0, 1, 1);
    let f_true = bumped(&grid, 0.3, 2, 1);
    let d = grid.restrict(&f_true.coeff(1).unwrap().iter().zip(f_ref.coeff(1).unwrap()).map(|(a, b)| a - b).collect::<Vec<_>>());
    let (plus, minus) = cgo_pair(2.0, 2.0);
    let (re, im) = runge_direction(&grid, &plus);
    let m = |f: &RunningCost, dir: &[f64]| linearized_data(&grid, f, &g, dir).0;
    let dre = m(&f_true, &re).sub(&m(&f_ref, &re));
    let dim = m(&f_true, &im).sub(&m(&f_ref, &im));
    let s = fourier_sample(&grid, &f_ref, &g, &dre, &dim, &plus, &minus, &CorrectionOptions::default()).unwrap();
    let k = s.frequency.unwrap().0;
    let sp = grid.inner();
    let v: Vec<Complex64> = sp.coords().iter().zip(&d).map(|(x, dv)| Complex64::new(0.0, -(k[0] * x[0] + k[1] * x[1])).exp() * dv).collect();
    let oracle = sp.integral(&v) / sp.volume();
    // finite-λ samples are windowed by the probe; the phase survives
    let cos = (s.value * oracle.conj()).re / (s.value.norm() * oracle.norm());
    assert!(cos > 0.9, "{} vs {oracle}", s.value);
}

#[test]
fn richardson_removes_the_tail() {
    let v = |l: f64| Complex64::new(0.7, -0.2) + Complex64::new(0.3, 0.1) * l.powf(-0.5);
    let x = richardson(v(4.0), 4.0, v(16.0), 16.0, 0.5).unwrap();
    assert!((x - Complex64::new(0.7, -0.2)).norm() < 1e-14);
    assert!(richardson(v(4.0), 4.0, v(4.0), 4.0, 0.5).is_err());
}
