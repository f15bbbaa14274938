//! Nonlinear forward solver: damped Picard alternating a backward HJB sweep
//! and a forward conservative KFP sweep, both implicit Euler.

use crate::banded::BandedLu;
use crate::costs::{RunningCost, TerminalCost};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::ops::{self, Bc};
use crate::scalar::max_abs;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Picard damping `θ ∈ (0, 1]`.
    pub theta: f64,
    pub max_iter: usize,
    /// Tolerance on `max |m̃ - m|` between sweeps.
    pub tol: f64,
    /// Tolerance of the lagged inner iteration for `|∇u|²/2`.
    pub hjb_tol: f64,
    pub hjb_max_inner: usize,
    /// Abort once the residual exceeds this multiple of the first one.
    pub divergence_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            theta: 0.5,
            max_iter: 400,
            tol: 1e-12,
            hjb_tol: 1e-10,
            hjb_max_inner: 60,
            divergence_factor: 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub hjb: f64,
    pub kfp: f64,
    pub coupled: f64,
    pub terminal: f64,
}

#[derive(Clone, Debug)]
pub struct SolutionPair {
    pub u: Field,
    pub m: Field,
    pub residuals: Residuals,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Factored heat matrix `I/dt - L` on Ω′ shared by both sweeps.
pub struct ForwardContext<'a> {
    pub grid: &'a Grid,
    heat: BandedLu,
}

impl<'a> ForwardContext<'a> {
    pub fn new(grid: &'a Grid) -> Result<Self> {
        let heat = ops::implicit_matrix(grid.outer(), 1.0 / grid.dt(), Bc::Neumann, None).factor()?;
        Ok(ForwardContext { grid, heat })
    }

    /// Backward sweep with a prescribed terminal slice and per-level source
    /// `src(n)` on the right of `-u_t - Δu + |∇u|²/2 = src`.
    pub fn hjb_backward_with<S>(&self, terminal: Vec<f64>, src: S, tol: f64, max_inner: usize) -> Result<Field>
    where
        S: Fn(usize) -> Vec<f64>,
    {
        let g = self.grid.outer();
        let nt = self.grid.nt();
        let idt = 1.0 / self.grid.dt();
        let mut u = Field::zeros(g.len(), nt);
        u.set_level(nt - 1, &terminal);
        for n in (0..nt - 1).rev() {
            let next = u.level(n + 1).to_vec();
            let base: Vec<f64> = src(n).iter().zip(&next).map(|(s, v)| s + v * idt).collect();
            let mut v = next;
            let mut converged = false;
            for _ in 0..max_inner {
                let q = ops::grad_dot(g, &v, &v, Bc::Neumann);
                let mut rhs: Vec<f64> = base.iter().zip(&q).map(|(b, q)| b - 0.5 * q).collect();
                self.heat.solve_in_place(&mut rhs);
                let diff = v.iter().zip(&rhs).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                v = rhs;
                if !diff.is_finite() {
                    break;
                }
                if diff <= tol * max_abs(&v).max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Solver(format!(
                    "lagged HJB iteration did not converge at time level {n}"
                )));
            }
            u.set_level(n, &v);
        }
        Ok(u)
    }

    pub fn hjb_backward(&self, m: &Field, f: &RunningCost, g: &TerminalCost, opts: &SolverOptions) -> Result<Field> {
        let nt = self.grid.nt();
        let terminal = g.eval(m.level(nt - 1));
        self.hjb_backward_with(terminal, |n| f.eval(m.level(n)), opts.hjb_tol, opts.hjb_max_inner)
    }

    /// Forward conservative density sweep for a fixed value function.
    pub fn kfp_forward(&self, u: &Field, m0: &[f64]) -> Result<Field> {
        let g = self.grid.outer();
        let nt = self.grid.nt();
        let idt = 1.0 / self.grid.dt();
        let mut m = Field::zeros(g.len(), nt);
        m.set_level(0, m0);
        for n in 1..nt {
            let un = u.level(n);
            let jump = ops::max_neighbour_jump(g, un);
            if jump >= 2.0 {
                return Err(Error::Solver(format!(
                    "value jump {jump:.3} >= 2 at level {n}: density matrix is not an M-matrix"
                )));
            }
            let prev = m.level(n - 1).to_vec();
            let x = self.kfp_step(un, &prev, idt).map_err(|e| match e {
                Error::Solver(s) => Error::Solver(format!("density step {n}: {s}")),
                other => other,
            })?;
            m.set_level(n, &x);
        }
        Ok(m)
    }

    fn kfp_step(&self, un: &[f64], prev: &[f64], idt: f64) -> Result<Vec<f64>> {
        let g = self.grid.outer();
        // fixed point x = H^{-1}(prev/dt + div(x ∇u)); every iterate keeps the
        // mass of `prev` because H preserves weighted sums
        let mut x = prev.to_vec();
        let mut last = f64::INFINITY;
        for _ in 0..40 {
            let d = ops::flux_divergence(g, &x, un, Bc::Neumann);
            let mut r: Vec<f64> = prev.iter().zip(&d).map(|(p, d)| p * idt + d).collect();
            self.heat.solve_in_place(&mut r);
            let diff = x.iter().zip(&r).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            x = r;
            if diff <= 1e-15 * max_abs(&x).max(1.0) {
                return Ok(x);
            }
            if !(diff < 0.7 * last) && last.is_finite() {
                break;
            }
            last = diff;
        }
        let mut rhs: Vec<f64> = prev.iter().map(|p| p * idt).collect();
        ops::implicit_matrix(g, idt, Bc::Neumann, Some(un))
            .factor()?
            .solve_in_place(&mut rhs);
        Ok(rhs)
    }
}

pub fn solve_hjb_backward(grid: &Grid, m: &Field, f: &RunningCost, g: &TerminalCost) -> Result<Field> {
    ForwardContext::new(grid)?.hjb_backward(m, f, g, &SolverOptions::default())
}

pub fn solve_kfp_forward(grid: &Grid, u: &Field, m0: &[f64]) -> Result<Field> {
    ForwardContext::new(grid)?.kfp_forward(u, m0)
}

fn check_initial_density(grid: &Grid, m0: &[f64]) -> Result<()> {
    let g = grid.outer();
    if m0.len() != g.len() {
        return Err(Error::Domain("initial density does not match the outer grid".into()));
    }
    if m0.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Config("initial density must be nonnegative".into()));
    }
    let mass = g.integral(m0);
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::Config(format!("initial density has mass {mass}, expected 1")));
    }
    Ok(())
}

/// Discrete residuals of both equations for a candidate pair.
pub fn residuals(grid: &Grid, f: &RunningCost, g: &TerminalCost, u: &Field, m: &Field) -> Residuals {
    let sp = grid.outer();
    let nt = grid.nt();
    let idt = 1.0 / grid.dt();
    let mut hjb: f64 = 0.0;
    let mut kfp: f64 = 0.0;
    for n in 0..nt - 1 {
        let (un, un1) = (u.level(n), u.level(n + 1));
        let lap = ops::laplacian_neumann(sp, un);
        let q = ops::grad_dot(sp, un, un, Bc::Neumann);
        let fm = f.eval(m.level(n));
        for k in 0..sp.len() {
            let r = (un[k] - un1[k]) * idt - lap[k] + 0.5 * q[k] - fm[k];
            hjb = hjb.max(r.abs());
        }
    }
    for n in 1..nt {
        let (mn, mp) = (m.level(n), m.level(n - 1));
        let lap = ops::laplacian_neumann(sp, mn);
        let d = ops::flux_divergence(sp, mn, u.level(n), Bc::Neumann);
        for k in 0..sp.len() {
            let r = (mn[k] - mp[k]) * idt - lap[k] - d[k];
            kfp = kfp.max(r.abs());
        }
    }
    let gt = g.eval(m.level(nt - 1));
    let terminal = gt
        .iter()
        .zip(u.level(nt - 1))
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Residuals {
        hjb,
        kfp,
        coupled: 0.0,
        terminal,
    }
}

/// Damped Picard iteration for the coupled system.
pub fn solve_mfg(grid: &Grid, f: &RunningCost, g: &TerminalCost, m0: &[f64], opts: &SolverOptions) -> Result<SolutionPair> {
    check_initial_density(grid, m0)?;
    if f.nodes() != grid.outer().len() {
        return Err(Error::Domain("running cost does not match the outer grid".into()));
    }
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(Error::Config(format!("damping θ = {} outside (0,1]", opts.theta)));
    }
    let ctx = ForwardContext::new(grid)?;
    let nt = grid.nt();
    let mut m = Field::from_levels(vec![m0.to_vec(); nt], false);
    let mut history = Vec::new();
    let not_converged = |history: &Vec<f64>| Error::NotConverged {
        iterations: history.len(),
        last: history.last().copied().unwrap_or(f64::NAN),
        history: history.clone(),
    };
    for it in 1..=opts.max_iter {
        let u = match ctx.hjb_backward(&m, f, g, opts) {
            Ok(u) => u,
            Err(_) if !history.is_empty() => return Err(not_converged(&history)),
            Err(e) => return Err(e),
        };
        let mt = match ctx.kfp_forward(&u, m0) {
            Ok(v) => v,
            Err(_) if !history.is_empty() => return Err(not_converged(&history)),
            Err(e) => return Err(e),
        };
        let res = m.values().iter().zip(mt.values()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        history.push(res);
        if !res.is_finite() || res > opts.divergence_factor * history[0].max(opts.tol) {
            return Err(not_converged(&history));
        }
        if res <= opts.tol {
            let u = ctx.hjb_backward(&mt, f, g, opts)?;
            let mut r = residuals(grid, f, g, &u, &mt);
            r.coupled = res;
            log::debug!("picard converged in {it} sweeps, residual {res:.2e}");
            return Ok(SolutionPair {
                u,
                m: mt,
                residuals: r,
                iterations: it,
                history,
            });
        }
        let th = opts.theta;
        m = m.zip_map(&mt, |a, b| (1.0 - th) * a + th * b);
    }
    Err(not_converged(&history))
}

/// Restriction of a solution to the observation surface of Q.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementData {
    /// `u(·, 0)` on Ω.
    pub u_at0: Vec<f64>,
    /// `m(·, T)` on Ω.
    pub m_at_t: Vec<f64>,
    /// `u` on ∂Ω at every level, nodes ordered as `inner().boundary_nodes()`.
    pub u_sigma: Field,
    pub m_sigma: Field,
    /// Extension slices `u(·, T)` and `m(·, 0)` on Ω.
    pub u_at_t: Vec<f64>,
    pub m_at0: Vec<f64>,
}

impl MeasurementData {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.inner().len();
        let nb = grid.inner().boundary_nodes().len();
        MeasurementData {
            u_at0: vec![0.0; n],
            m_at_t: vec![0.0; n],
            u_sigma: Field::zeros(nb, grid.nt()),
            m_sigma: Field::zeros(nb, grid.nt()),
            u_at_t: vec![0.0; n],
            m_at0: vec![0.0; n],
        }
    }

    /// Linear combination `Σ c_i d_i`.
    pub fn combine(terms: &[(f64, &MeasurementData)]) -> MeasurementData {
        let first = terms[0].1;
        let lin = |get: &dyn Fn(&MeasurementData) -> &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; get(first).len()];
            for (c, d) in terms {
                for (o, v) in out.iter_mut().zip(get(d)) {
                    *o += c * v;
                }
            }
            out
        };
        let nb = first.u_sigma.nodes();
        let nt = first.u_sigma.levels();
        MeasurementData {
            u_at0: lin(&|d| &d.u_at0),
            m_at_t: lin(&|d| &d.m_at_t),
            u_sigma: Field::from_raw(nb, nt, false, lin(&|d| d.u_sigma.values())).expect("shape"),
            m_sigma: Field::from_raw(nb, nt, false, lin(&|d| d.m_sigma.values())).expect("shape"),
            u_at_t: lin(&|d| &d.u_at_t),
            m_at0: lin(&|d| &d.m_at0),
        }
    }

    pub fn sub(&self, other: &MeasurementData) -> MeasurementData {
        MeasurementData::combine(&[(1.0, self), (-1.0, other)])
    }

    pub fn max_abs(&self) -> f64 {
        [
            max_abs(&self.u_at0),
            max_abs(&self.m_at_t),
            self.u_sigma.max_abs(),
            self.m_sigma.max_abs(),
            max_abs(&self.u_at_t),
            max_abs(&self.m_at0),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        let n = grid.inner().len();
        let nb = grid.inner().boundary_nodes().len();
        let ok = [&self.u_at0, &self.m_at_t, &self.u_at_t, &self.m_at0].iter().all(|v| v.len() == n)
            && self.u_sigma.nodes() == nb
            && self.m_sigma.nodes() == nb
            && self.u_sigma.levels() == grid.nt()
            && self.m_sigma.levels() == grid.nt();
        if ok {
            Ok(())
        } else {
            Err(Error::Data("measurement shapes do not match the inner grid".into()))
        }
    }
}

/// Restrict an outer space-time pair `(u, m)` to the observation surface.
pub fn measure_fields(grid: &Grid, u: &Field, m: &Field) -> MeasurementData {
    let nt = grid.nt();
    let bnodes = grid.inner().boundary_nodes();
    let trace = |f: &Field| {
        let levels = (0..nt)
            .map(|n| {
                let lv = f.level(n);
                bnodes.iter().map(|&k| lv[grid.inner_to_outer(k)]).collect()
            })
            .collect();
        Field::from_levels(levels, false)
    };
    MeasurementData {
        u_at0: grid.restrict(u.level(0)),
        m_at_t: grid.restrict(m.level(nt - 1)),
        u_sigma: trace(u),
        m_sigma: trace(m),
        u_at_t: grid.restrict(u.level(nt - 1)),
        m_at0: grid.restrict(m.level(0)),
    }
}

pub fn measure(sol: &SolutionPair, grid: &Grid) -> MeasurementData {
    measure_fields(grid, &sol.u, &sol.m)
}
