use mfg_core::costs::{DirectionSpec, Psi, RunningCost, TerminalCost, TerminalCostSpec};
use mfg_core::forward::{solve_mfg, SolverOptions};
use mfg_core::linearized::*;
use mfg_core::ops::{l2_norm_q, Bc};
use mfg_core::{Field, Grid, GridSpec};
use num_complex::Complex64;
use std::f64::consts::PI;

fn small() -> Grid {
    Grid::new(GridSpec::coarse(17, 17)).unwrap()
}

fn costs(grid: &Grid, psi: Psi) -> (RunningCost, TerminalCost) {
    let f = RunningCost::exp_shifted(grid.outer().len(), 3).unwrap();
    let g = TerminalCost::new(grid.outer(), TerminalCostSpec { radius: 0.125, psi }).unwrap();
    (f, g)
}

fn dir(grid: &Grid, k: Vec<usize>, amp: f64) -> Vec<f64> {
    DirectionSpec::Cosine { k, amp }.build(grid).unwrap().into_values()
}

fn bump(grid: &Grid, c: [f64; 2]) -> Vec<f64> {
    DirectionSpec::Bump { center: c.to_vec(), radius: 0.3, amp: 1.0 }.build(grid).unwrap().into_values()
}

#[test]
fn zero_direction_gives_zero() {
    let grid = small();
    let (f, g) = costs(&grid, Psi::Linear);
    let s = solve_linearized1(&grid, &f, &g, &vec![0.0; grid.outer().len()], &LateralBc::NeumannOnOuter).unwrap();
    assert_eq!(s.u.max_abs(), 0.0);
    assert_eq!(s.m.max_abs(), 0.0);
}

#[test]
fn decoupled_heat_mode_decays_at_discrete_rate() {
    let grid = Grid::new(GridSpec { dim: 1, outer: vec![[0.0, 1.0]], inner: vec![[0.25, 0.75]], n_outer: 65, t_final: 0.2, nt: 41 }).unwrap();
    let sp = grid.outer();
    let zero = vec![0.0; sp.len()];
    let sys = SpaceTimeSystem::new(&grid, Bc::Neumann, Coupling::Potential(&zero), Coupling::Laplacian, TerminalLink::Data).unwrap();
    let mut sf = Field::zeros(sp.len(), grid.nt());
    sf.set_level(0, &sp.sample(|x| (PI * x[0]).cos()));
    let (u, m, _) = sys.solve(&Field::zeros(sp.len(), grid.nt()), &sf).unwrap();
    assert!(u.max_abs() < 1e-12);
    let dx = sp.dx(0);
    let mu = (2.0 - 2.0 * (PI * dx).cos()) / (dx * dx);
    let n = grid.nt() - 1;
    let expect = (1.0 + mu * grid.dt()).powi(-(n as i32));
    assert!((m.level(n)[0] - expect).abs() < 1e-9, "{} vs {expect}", m.level(n)[0]);
    // and close to the continuous e^{-π² T}
    assert!((m.level(n)[0] - (-PI * PI * 0.2f64).exp()).abs() < 2e-2);
}

#[test]
fn first_order_matches_finite_differences() {
    let grid = small();
    let (f, g) = costs(&grid, Psi::Exp { a: 1.0 });
    let f1 = bump(&grid, [0.4, 0.55]);
    let lin = solve_linearized1(&grid, &f, &g, &f1, &LateralBc::NeumannOnOuter).unwrap();
    assert!((lin.u.level(grid.nt() - 1).iter().zip(&g.delta(lin.m.level(grid.nt() - 1))).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)) < 1e-9);
    let opts = SolverOptions::default();
    let err = |eps: f64| {
        let m0: Vec<f64> = f1.iter().map(|v| 1.0 + eps * v).collect();
        let s = solve_mfg(&grid, &f, &g, &m0, &opts).unwrap();
        let d = s.m.zip_map(&lin.m, |a, b| (a - 1.0) / eps - b);
        l2_norm_q(&grid, &d)
    };
    let (e1, e2) = (err(1e-2), err(5e-3));
    let r = e1 / e2;
    assert!((1.7..=2.3).contains(&r), "ratio {r} ({e1:e}, {e2:e})");
}

#[test]
fn second_order_symmetric_and_consistent() {
    let grid = small();
    let (f, g) = costs(&grid, Psi::Exp { a: 1.0 });
    let fa = bump(&grid, [0.4, 0.55]);
    let fb = dir(&grid, vec![1, 2], 0.5);
    let a = solve_linearized1(&grid, &f, &g, &fa, &LateralBc::NeumannOnOuter).unwrap();
    let b = solve_linearized1(&grid, &f, &g, &fb, &LateralBc::NeumannOnOuter).unwrap();
    let ab = solve_linearized2(&grid, &f, &g, &a, &b).unwrap();
    let ba = solve_linearized2(&grid, &f, &g, &b, &a).unwrap();
    assert!(ab.u.sub(&ba.u).max_abs() <= 1e-10);
    assert_eq!(ab.m.level(0).iter().fold(0.0f64, |x, v| x.max(v.abs())), 0.0);
    let opts = SolverOptions::default();
    let solve = |e1: f64, e2: f64| {
        let m0: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| 1.0 + e1 * x + e2 * y).collect();
        solve_mfg(&grid, &f, &g, &m0, &opts).unwrap().u
    };
    let err = |eps: f64| {
        let (pp, pm, mp, mm) = (solve(eps, eps), solve(eps, -eps), solve(-eps, eps), solve(-eps, -eps));
        let mut d = pp.sub(&pm).sub(&mp).add(&mm).scale(0.25 / (eps * eps));
        d = d.sub(&ab.u);
        l2_norm_q(&grid, &d) / l2_norm_q(&grid, &ab.u)
    };
    let e = err(1e-2);
    // central differences: O(ε²) in fact, well inside O(ε)
    assert!(e < 1e-2, "{e}");
    // N = 2 through the general recursion matches
    let (u2, _) = solve_linearized_n(&grid, &f, &g, &[&fa, &fb]).unwrap();
    assert!(u2.sub(&ab.u).max_abs() < 1e-12);
}

#[test]
fn third_order_matches_finite_differences() {
    let grid = small();
    let (f, g) = costs(&grid, Psi::Exp { a: 1.0 });
    let d1 = bump(&grid, [0.4, 0.55]);
    let d2 = dir(&grid, vec![1, 2], 0.5);
    let d3 = dir(&grid, vec![2, 1], 0.5);
    let (u3, _) = solve_linearized_n(&grid, &f, &g, &[&d1, &d2, &d3]).unwrap();
    let eps = 2e-2;
    let opts = SolverOptions::default();
    let mut acc = Field::zeros(grid.outer().len(), grid.nt());
    for s in 0..8u32 {
        let sg = |b: u32| if s & (1 << b) != 0 { -1.0 } else { 1.0 };
        let m0: Vec<f64> = (0..d1.len()).map(|k| 1.0 + eps * (sg(0) * d1[k] + sg(1) * d2[k] + sg(2) * d3[k])).collect();
        let u = solve_mfg(&grid, &f, &g, &m0, &opts).unwrap().u;
        acc = acc.add(&u.scale(sg(0) * sg(1) * sg(2)));
    }
    let fd = acc.scale(1.0 / (8.0 * eps * eps * eps));
    let rel = l2_norm_q(&grid, &fd.sub(&u3)) / l2_norm_q(&grid, &u3);
    assert!(rel < 5e-2, "{rel}");
    assert!(matches!(solve_linearized_n(&grid, &f, &g, &[&d1, &d1, &d1, &d1, &d1]), Err(mfg_core::Error::Capability(_))));
}

#[test]
fn inherited_traces_reproduce_outer_solution() {
    let grid = small();
    let (f, g) = costs(&grid, Psi::Linear);
    let f1 = bump(&grid, [0.45, 0.5]);
    let outer = solve_linearized1(&grid, &f, &g, &f1, &LateralBc::NeumannOnOuter).unwrap();
    let u = grid.restrict_field(&outer.u);
    let m = grid.restrict_field(&outer.m);
    let inner = solve_linearized1(&grid, &f, &g, &grid.restrict(&f1), &LateralBc::DirichletDataOnInner { u: u.clone(), m: m.clone() }).unwrap();
    assert!(inner.u.sub(&u).max_abs() < 1e-9);
    assert!(inner.m.sub(&m).max_abs() < 1e-9);
}

#[test]
fn adjoint_zero_and_reversal() {
    let grid = small();
    let sp = grid.inner();
    let f1 = vec![1.3; sp.len()];
    let z = solve_adjoint::<f64>(&grid, &f1, &AdjointDrive::Terminal(vec![0.0; sp.len()])).unwrap();
    assert_eq!(z.rho.max_abs() + z.v.max_abs(), 0.0);
    let drive: Vec<Complex64> = (0..sp.len())
        .map(|k| {
            let x = sp.coord(k);
            Complex64::new(0.0, -(3.0 * x[0] + 5.0 * x[1])).exp()
        })
        .collect();
    let adj = solve_adjoint(&grid, &f1, &AdjointDrive::Terminal(drive.clone())).unwrap();
    let n = grid.nt() - 1;
    for k in sp.boundary_nodes() {
        for l in 0..=n {
            assert_eq!(adj.rho.level(l)[k], Complex64::new(0.0, 0.0));
            assert_eq!(adj.v.level(l)[k], Complex64::new(0.0, 0.0));
        }
    }
    assert!(adj.v.level(0).iter().all(|z| z.norm() == 0.0));
    let (p, q) = solve_adjoint_reversed(&grid, &f1, &drive).unwrap();
    for l in 1..n {
        for k in 0..sp.len() {
            assert!((p.level(l)[k] - adj.rho.level(n - l)[k]).norm() < 1e-10);
            assert!((q.level(l)[k] - adj.v.level(n - l)[k]).norm() < 1e-10);
        }
    }
}
