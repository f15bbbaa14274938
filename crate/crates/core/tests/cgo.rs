use mfg_core::cgo::*;
use mfg_core::costs::{TerminalCost, TerminalCostSpec};
use mfg_core::linearized::{Coupling, SpaceTimeSystem, TerminalLink};
use mfg_core::ops::{Bc, Sign};
use mfg_core::{Grid, GridSpec};
use num_complex::Complex64;

fn plus(l: f64) -> CGOParams {
    CGOParams::new(l, [1.0, 0.0], [0.0, 1.0], 1.0, Sign::Plus)
}

#[test]
fn leading_term_shape() {
    let grid = Grid::reference();
    let p = plus(4.0);
    let lt = leading_term(&p, &grid).unwrap();
    assert!(lt.oscillator.level(0).iter().all(|z| z.norm() == 0.0));
    for n in 0..grid.nt() {
        let th = p.theta(grid.time(n), 1.0);
        for z in lt.oscillator.level(n) {
            assert!((z.norm() - th).abs() < 1e-14);
        }
    }
    let mut pc = p;
    pc.envelope = Envelope::Continuous;
    let lt = leading_term(&pc, &grid).unwrap();
    let k = grid.inner().idx(0, 8);
    assert_eq!(grid.inner().coord(k), [0.25, 0.5]);
    let n = 32;
    let t: f64 = 0.5;
    let direct = (-16.0 * t).exp() * (1.0 - (-(4f64.powf(0.75)) * t).exp()) * Complex64::new(0.0, -(4.0 * 0.25) - (0.5 + t)).exp();
    assert!((lt.value(n, k) - direct).norm() < 1e-14 * direct.norm().max(1e-300) + 1e-17);
    let g1 = Grid::new(GridSpec { dim: 1, outer: vec![[0.0, 1.0]], inner: vec![[0.25, 0.75]], n_outer: 33, t_final: 1.0, nt: 9 }).unwrap();
    assert!(matches!(leading_term(&p, &g1), Err(mfg_core::Error::Capability(_))));
    let mut bad = p;
    bad.eta = [1.0, 0.0];
    assert!(leading_term(&bad, &grid).is_err());
}

/// Dense least-norm solve of the decoupled density equation on a tiny grid.
#[test]
fn decoupled_correction_matches_dense_least_norm() {
    let grid = Grid::new(GridSpec { dim: 2, outer: vec![[0.0, 1.0]; 2], inner: vec![[0.25, 0.75]; 2], n_outer: 13, t_final: 1.0, nt: 6 }).unwrap();
    let sp = grid.inner();
    let p = plus(3.0);
    let f1 = vec![0.0; sp.len()];
    let probe = solve_correction(&p, &grid, &f1, TerminalMode::Zero, &CorrectionOptions::default()).unwrap();
    assert!(probe.u.oscillator.max_abs() == 0.0);
    let lead = leading_term(&p, &grid).unwrap().oscillator;
    let r = p.log_decay(&grid).exp();
    let dt = grid.dt();
    let nt = grid.nt();
    let interior = sp.interior_nodes();
    let ni = interior.len();
    let pos = |k: usize| interior.iter().position(|&q| q == k);
    let nu = ni * nt;
    let ne = ni * (nt - 1);
    // rows: for n=1..N, interior node i: (y^n - y^{n-1}/r)/dt - Δ0 y^n = -(residual of lead with zero bc)
    let mut a = vec![vec![Complex64::new(0.0, 0.0); nu]; ne];
    let mut b = vec![Complex64::new(0.0, 0.0); ne];
    let h = sp.dx(0);
    let tw = grid.time_weights();
    for n in 1..nt {
        let lap = mfg_core::ops::laplacian_dirichlet(sp, lead.level(n));
        for (ii, &k) in interior.iter().enumerate() {
            let row = (n - 1) * ni + ii;
            a[row][n * ni + ii] += Complex64::new(1.0 / dt + 4.0 / (h * h), 0.0);
            a[row][(n - 1) * ni + ii] += Complex64::new(-1.0 / (r * dt), 0.0);
            let (i, j) = sp.ij(k);
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let q = sp.idx((i as i64 + di) as usize, (j as i64 + dj) as usize);
                if let Some(jj) = pos(q) {
                    a[row][n * ni + jj] += Complex64::new(-1.0 / (h * h), 0.0);
                }
            }
            b[row] = -((lead.level(n)[k] - lead.level(n - 1)[k] / r) / dt - lap[k]);
        }
    }
    // y = W^{-1} A^H (A W^{-1} A^H)^{-1} b with W = tw (space weights equal)
    let winv: Vec<f64> = (0..nu).map(|c| 1.0 / tw[c / ni]).collect();
    let mut m = vec![vec![Complex64::new(0.0, 0.0); ne]; ne];
    for i in 0..ne {
        for j in 0..ne {
            m[i][j] = (0..nu).map(|c| a[i][c] * a[j][c].conj() * winv[c]).sum();
        }
    }
    // Gaussian elimination
    let mut z = b.clone();
    for c in 0..ne {
        let piv = m[c][c];
        for rr in c + 1..ne {
            let f = m[rr][c] / piv;
            for cc in c..ne {
                let v = m[c][cc];
                m[rr][cc] -= f * v;
            }
            let v = z[c];
            z[rr] -= f * v;
        }
    }
    for c in (0..ne).rev() {
        let mut s = z[c];
        for cc in c + 1..ne {
            s -= m[c][cc] * z[cc];
        }
        z[c] = s / m[c][c];
    }
    for n in 0..nt {
        for (ii, &k) in interior.iter().enumerate() {
            let c = n * ni + ii;
            let y: Complex64 = (0..ne).map(|rr| a[rr][c].conj() * z[rr]).sum::<Complex64>() * winv[c];
            let got = probe.correction.oscillator.level(n)[k];
            assert!((got - y).norm() < 1e-10, "n {n} k {k}: {got} vs {y}");
        }
    }
    // boundary: total density vanishes
    for k in sp.boundary_nodes() {
        assert!(probe.density_oscillator().level(3)[k].norm() < 1e-15);
    }
}

#[test]
fn coupled_probe_residual_and_mirror() {
    let grid = Grid::reference();
    let g = TerminalCost::new(grid.outer(), TerminalCostSpec::default()).unwrap();
    let f1 = vec![1.0; grid.inner().len()];
    let pr = solve_correction(&plus(8.0), &grid, &f1, TerminalMode::DeltaG(&g), &CorrectionOptions::default()).unwrap();
    assert!(pr.residual <= 1e-8, "{}", pr.residual);
    let again = probe_residual(&pr, &grid, &f1, TerminalMode::DeltaG(&g)).unwrap();
    assert!(again <= 1e-8);
    assert!(pr.contraction < 1.0);

    // (−) probe solves the adjoint rows once the envelope is applied
    let mut pm = plus(4.0);
    pm.sign = Sign::Minus;
    let m = solve_correction(&pm, &grid, &f1, TerminalMode::DeltaG(&g), &CorrectionOptions::default()).unwrap();
    assert!(probe_residual(&m, &grid, &f1, TerminalMode::Zero).unwrap() < 1e-8);
    let (v, rho) = m.unfactored().unwrap();
    let sys = SpaceTimeSystem::new(&grid, Bc::Dirichlet, Coupling::Laplacian, Coupling::Potential(&f1), TerminalLink::Data).unwrap();
    let (rb, rf) = sys.residual_rows(&rho, &v);
    let scale = rho.max_abs() / grid.dt();
    let nt = grid.nt();
    for n in 0..nt - 1 {
        assert!(rb.level(n).iter().all(|z| z.norm() < 1e-9 * scale));
    }
    for n in 0..nt {
        assert!(rf.level(n).iter().all(|z| z.norm() < 1e-9 * scale));
    }
    assert!(v.level(0).iter().all(|z| z.norm() < 1e-12 * scale));
    // leading part of the mirrored construction equals the analytic (−) leading term
    let lt = leading_term(&pm, &grid).unwrap();
    assert!(lt.oscillator.sub(&m.leading.oscillator).max_abs() < 1e-12);
}

#[test]
fn certificate_single_lambda_is_vacuous() {
    let grid = Grid::new(GridSpec::coarse(17, 17)).unwrap();
    let f1 = vec![1.0; grid.inner().len()];
    let rep = decay_certificate(&plus(4.0), &grid, &f1, TerminalMode::Zero, &[4.0], &CorrectionOptions::default()).unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert!(rep.pass);
    assert!(decay_certificate(&plus(4.0), &grid, &f1, TerminalMode::Zero, &[8.0, 4.0], &CorrectionOptions::default()).is_err());
}
