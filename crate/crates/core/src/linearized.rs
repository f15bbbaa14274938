//! Linearizations of the discrete system around the stationary pair `(B, 1)`
//! and the adjoint system, all solved as one space-time linear template:
//!
//! ```text
//! (b^n - b^{n+1})/dt - Δb^n - C_b(f^n) = s_b^n    n < N,   b^N = link(f^N) + s_b^N
//! (f^n - f^{n-1})/dt - Δf^n - C_f(b^n) = s_f^n    n ≥ 1,   f^0 = s_f^0
//! ```
//!
//! with `C` a multiplication by a coefficient or the Laplacian. Under
//! Dirichlet boundaries the boundary rows are identities carrying data.

use crate::banded::BandedLu;
use crate::costs::{RunningCost, TerminalCost};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{Grid, SpaceGrid};
use crate::krylov::{gmres, GmresOptions, GmresReport};
use crate::ops::{self, Bc};
use crate::scalar::{norm2, Scalar};

#[derive(Clone, Copy, Debug)]
pub enum Coupling<'a> {
    Potential(&'a [f64]),
    Laplacian,
}

#[derive(Clone, Copy, Debug)]
pub enum TerminalLink<'a> {
    /// `b^N = δG f^N`; on the inner grid `δG` acts on the zero extension.
    DeltaG(&'a TerminalCost),
    /// `b^N` is prescribed by the right-hand side.
    Data,
}

pub struct SpaceTimeSystem<'a> {
    grid: &'a Grid,
    space: &'a SpaceGrid,
    bc: Bc,
    back: Coupling<'a>,
    fwd: Coupling<'a>,
    link: TerminalLink<'a>,
    heat: BandedLu,
    rows: Vec<bool>,
    pub gmres: GmresOptions,
}

impl<'a> SpaceTimeSystem<'a> {
    /// Neumann on Ω′ or Dirichlet on Ω.
    pub fn new(grid: &'a Grid, bc: Bc, back: Coupling<'a>, fwd: Coupling<'a>, link: TerminalLink<'a>) -> Result<Self> {
        let space = match bc {
            Bc::Neumann => grid.outer(),
            Bc::Dirichlet => grid.inner(),
        };
        for c in [back, fwd] {
            if let Coupling::Potential(p) = c {
                if p.len() != space.len() {
                    return Err(Error::Domain("coupling coefficient does not match the grid".into()));
                }
            }
        }
        let heat = ops::implicit_matrix(space, 1.0 / grid.dt(), bc, None).factor()?;
        let rows = (0..space.len()).map(|k| bc == Bc::Neumann || !space.is_boundary(k)).collect();
        Ok(SpaceTimeSystem {
            grid,
            space,
            bc,
            back,
            fwd,
            link,
            heat,
            rows,
            gmres: GmresOptions::default(),
        })
    }

    pub fn space(&self) -> &SpaceGrid {
        self.space
    }

    pub fn bc(&self) -> Bc {
        self.bc
    }

    fn slice_len(&self) -> usize {
        self.space.len()
    }

    pub fn len(&self) -> usize {
        2 * self.slice_len() * self.grid.nt()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn couple<T: Scalar>(&self, c: Coupling, v: &[T], out: &mut [T]) {
        match c {
            Coupling::Potential(p) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = if self.rows[k] { v[k] * p[k] } else { T::zero() };
                }
            }
            Coupling::Laplacian => ops::laplacian_into(self.space, v, self.bc, out),
        }
    }

    fn link_apply<T: Scalar>(&self, f_n: &[T]) -> Vec<T> {
        match self.link {
            TerminalLink::Data => vec![T::zero(); f_n.len()],
            TerminalLink::DeltaG(g) => match self.bc {
                Bc::Neumann => g.delta(f_n),
                Bc::Dirichlet => g.delta_inner(self.grid, f_n),
            },
        }
    }

    /// Row residual map `x = [b; f] -> A x`.
    pub fn apply<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        let s = self.slice_len();
        let nt = self.grid.nt();
        let idt = 1.0 / self.grid.dt();
        let (xb, xf) = x.split_at(s * nt);
        let (ob, of) = out.split_at_mut(s * nt);
        let mut lap = vec![T::zero(); s];
        let mut cpl = vec![T::zero(); s];
        for n in 0..nt {
            let b = &xb[n * s..(n + 1) * s];
            let f = &xf[n * s..(n + 1) * s];
            let o = &mut ob[n * s..(n + 1) * s];
            if n + 1 < nt {
                let b1 = &xb[(n + 1) * s..(n + 2) * s];
                ops::laplacian_into(self.space, b, self.bc, &mut lap);
                self.couple(self.back, f, &mut cpl);
                for k in 0..s {
                    o[k] = if self.rows[k] { (b[k] - b1[k]) * idt - lap[k] - cpl[k] } else { b[k] };
                }
            } else {
                let l = self.link_apply(f);
                for k in 0..s {
                    o[k] = if self.rows[k] { b[k] - l[k] } else { b[k] };
                }
            }
            let o = &mut of[n * s..(n + 1) * s];
            if n == 0 {
                o.copy_from_slice(f);
            } else {
                let f0 = &xf[(n - 1) * s..n * s];
                ops::laplacian_into(self.space, f, self.bc, &mut lap);
                self.couple(self.fwd, b, &mut cpl);
                for k in 0..s {
                    o[k] = if self.rows[k] { (f[k] - f0[k]) * idt - lap[k] - cpl[k] } else { f[k] };
                }
            }
        }
    }

    /// One block Gauss-Seidel sweep: forward sweep for `f` without `C_f`,
    /// then backward sweep for `b` with `f` frozen.
    pub fn precondition<T: Scalar>(&self, r: &[T], z: &mut [T]) {
        let s = self.slice_len();
        let nt = self.grid.nt();
        let idt = 1.0 / self.grid.dt();
        let (rb, rf) = r.split_at(s * nt);
        let (zb, zf) = z.split_at_mut(s * nt);
        zf[..s].copy_from_slice(&rf[..s]);
        for n in 1..nt {
            let (prev, cur) = zf.split_at_mut(n * s);
            let prev = &prev[(n - 1) * s..];
            let cur = &mut cur[..s];
            for k in 0..s {
                cur[k] = if self.rows[k] { rf[n * s + k] + prev[k] * idt } else { rf[n * s + k] };
            }
            self.heat.solve_in_place(cur);
        }
        let l = self.link_apply(&zf[(nt - 1) * s..]);
        for k in 0..s {
            zb[(nt - 1) * s + k] = rb[(nt - 1) * s + k] + if self.rows[k] { l[k] } else { T::zero() };
        }
        let mut cpl = vec![T::zero(); s];
        for n in (0..nt - 1).rev() {
            self.couple(self.back, &zf[n * s..(n + 1) * s], &mut cpl);
            let (cur, next) = zb.split_at_mut((n + 1) * s);
            let cur = &mut cur[n * s..];
            let next = &next[..s];
            for k in 0..s {
                cur[k] = if self.rows[k] { rb[n * s + k] + next[k] * idt + cpl[k] } else { rb[n * s + k] };
            }
            self.heat.solve_in_place(cur);
        }
    }

    /// Solve with right-hand side stacked as `[s_b; s_f]`.
    pub fn solve_stacked<T: Scalar>(&self, rhs: &[T]) -> Result<(Vec<T>, GmresReport)> {
        let mut x = vec![T::zero(); rhs.len()];
        self.precondition(rhs, &mut x);
        let rep = gmres(|v, o| self.apply(v, o), |v, o| self.precondition(v, o), rhs, &mut x, &self.gmres)?;
        let mut ax = vec![T::zero(); rhs.len()];
        self.apply(&x, &mut ax);
        let res: Vec<T> = ax.iter().zip(rhs).map(|(a, b)| *a - *b).collect();
        let rel = norm2(&res) / norm2(rhs).max(f64::MIN_POSITIVE);
        if rel > 1e-10 {
            return Err(Error::NotConverged {
                iterations: rep.iterations,
                last: rel,
                history: rep.history,
            });
        }
        Ok((x, rep))
    }

    pub fn solve<T: Scalar>(&self, src_b: &Field<T>, src_f: &Field<T>) -> Result<(Field<T>, Field<T>, GmresReport)> {
        let (s, nt) = (self.slice_len(), self.grid.nt());
        for fld in [src_b, src_f] {
            if fld.nodes() != s || fld.levels() != nt {
                return Err(Error::Domain("source field has the wrong shape".into()));
            }
        }
        let mut rhs = src_b.values().to_vec();
        rhs.extend_from_slice(src_f.values());
        let (x, rep) = self.solve_stacked(&rhs)?;
        let (xb, xf) = x.split_at(s * nt);
        Ok((
            Field::from_raw(s, nt, false, xb.to_vec())?,
            Field::from_raw(s, nt, false, xf.to_vec())?,
            rep,
        ))
    }

    /// `A [b; f]` as two fields.
    pub fn residual_rows<T: Scalar>(&self, b: &Field<T>, f: &Field<T>) -> (Field<T>, Field<T>) {
        let (s, nt) = (self.slice_len(), self.grid.nt());
        let mut x = b.values().to_vec();
        x.extend_from_slice(f.values());
        let mut out = vec![T::zero(); x.len()];
        self.apply(&x, &mut out);
        let (ob, of) = out.split_at(s * nt);
        (
            Field::from_raw(s, nt, false, ob.to_vec()).expect("shape"),
            Field::from_raw(s, nt, false, of.to_vec()).expect("shape"),
        )
    }
}

/// Lateral conditions for the linearized systems.
#[derive(Clone, Debug)]
pub enum LateralBc {
    NeumannOnOuter,
    DirichletZeroOnInner,
    /// Inner-grid fields whose boundary entries give the lateral data; the
    /// last level of `u` also supplies the terminal slice, since `δG` is
    /// nonlocal and cannot be evaluated from Ω alone.
    DirichletDataOnInner { u: Field, m: Field },
}

impl LateralBc {
    fn bc(&self) -> Bc {
        match self {
            LateralBc::NeumannOnOuter => Bc::Neumann,
            _ => Bc::Dirichlet,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearizedOrder1 {
    pub u: Field,
    pub m: Field,
    pub f: Vec<f64>,
    pub bc: Bc,
    pub iterations: usize,
    pub history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LinearizedOrder2 {
    pub u: Field,
    pub m: Field,
    pub iterations: usize,
}

/// Adjoint pair, stored in physical time: `v(0) = 0`, `ρ(T) = drive`, and
/// zero lateral data on Σ.
#[derive(Clone, Debug)]
pub struct AdjointPair<T: Scalar = f64> {
    pub v: Field<T>,
    pub rho: Field<T>,
    pub iterations: usize,
}

impl<T: Scalar> AdjointPair<T> {
    /// Dual test functions in reversed time: `p^n = ρ^{N-n}` pairs with the
    /// value-function rows, `q^n = v^{N-n}` with the density rows.
    pub fn reversed(&self) -> (Field<T>, Field<T>) {
        (self.rho.time_reversed(), self.v.time_reversed())
    }
}

fn coeff_on(f: &RunningCost, k: usize, grid: &Grid, bc: Bc) -> Vec<f64> {
    let n = grid.outer().len();
    let c = f.coeff(k).map(|c| c.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    match bc {
        Bc::Neumann => c,
        Bc::Dirichlet => grid.restrict(&c),
    }
}

fn set_boundary_data(space: &SpaceGrid, dst: &mut Field, data: &Field) {
    for n in 0..dst.levels() {
        let d = data.level(n).to_vec();
        let l = dst.level_mut(n);
        for k in space.boundary_nodes() {
            l[k] = d[k];
        }
    }
}

/// First-order linearization with initial direction `f1` (on the grid that
/// matches `bc`).
pub fn solve_linearized1(grid: &Grid, f: &RunningCost, g: &TerminalCost, f1: &[f64], bc: &LateralBc) -> Result<LinearizedOrder1> {
    let b = bc.bc();
    let c1 = coeff_on(f, 1, grid, b);
    let link = match bc {
        LateralBc::DirichletDataOnInner { .. } => TerminalLink::Data,
        _ => TerminalLink::DeltaG(g),
    };
    let sys = SpaceTimeSystem::new(grid, b, Coupling::Potential(&c1), Coupling::Laplacian, link)?;
    let (s, nt) = (sys.space().len(), grid.nt());
    if f1.len() != s {
        return Err(Error::Domain("direction does not match the grid".into()));
    }
    let mut sb = Field::zeros(s, nt);
    let mut sf = Field::zeros(s, nt);
    sf.set_level(0, f1);
    if let LateralBc::DirichletDataOnInner { u, m } = bc {
        if u.nodes() != s || m.nodes() != s || u.levels() != nt || m.levels() != nt {
            return Err(Error::Domain("lateral data has the wrong shape".into()));
        }
        set_boundary_data(sys.space(), &mut sb, u);
        set_boundary_data(sys.space(), &mut sf, m);
        sb.set_level(nt - 1, u.level(nt - 1));
        // initial slice keeps f1 inside, data on the boundary
        let mut init = f1.to_vec();
        for k in sys.space().boundary_nodes() {
            init[k] = m.level(0)[k];
        }
        sf.set_level(0, &init);
    } else if b == Bc::Dirichlet {
        let mut init = f1.to_vec();
        for k in sys.space().boundary_nodes() {
            init[k] = 0.0;
        }
        sf.set_level(0, &init);
    }
    let (u, m, rep) = sys.solve(&sb, &sf)?;
    Ok(LinearizedOrder1 {
        u,
        m,
        f: f1.to_vec(),
        bc: b,
        iterations: rep.iterations,
        history: rep.history,
    })
}

/// Partitions of the set bits of `mask` into blocks.
fn set_partitions(mask: u32) -> Vec<Vec<u32>> {
    if mask == 0 {
        return vec![vec![]];
    }
    let low = mask & mask.wrapping_neg();
    let rest = mask & !low;
    let mut out = Vec::new();
    // the block holding the lowest element is `low | sub` for a subset of rest
    let mut sub = rest;
    loop {
        let block = low | sub;
        for mut p in set_partitions(rest & !sub) {
            p.push(block);
            out.push(p);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Mixed-derivative forcing for the subset `mask` from lower-order solutions
/// `sols[sub]` (value, density) on the outer grid.
fn order_sources(grid: &Grid, f: &RunningCost, g: &TerminalCost, mask: u32, sols: &[Option<(Field, Field)>]) -> (Field, Field) {
    let sp = grid.outer();
    let nt = grid.nt();
    let s = sp.len();
    let mut sb = Field::zeros(s, nt);
    let mut sf = Field::zeros(s, nt);
    let get = |m: u32| sols[m as usize].as_ref().expect("lower order solved first");
    // ordered splits A ⊔ B = mask, both nonempty
    let mut a = (mask - 1) & mask;
    while a != 0 {
        let bset = mask & !a;
        let (ua, ma) = get(a);
        let (ub, _) = get(bset);
        for n in 0..nt {
            if n + 1 < nt {
                let q = ops::grad_dot(sp, ua.level(n), ub.level(n), Bc::Neumann);
                for (o, v) in sb.level_mut(n).iter_mut().zip(q) {
                    *o -= 0.5 * v;
                }
            }
            if n > 0 {
                let d = ops::flux_divergence(sp, ma.level(n), ub.level(n), Bc::Neumann);
                for (o, v) in sf.level_mut(n).iter_mut().zip(d) {
                    *o += v;
                }
            }
        }
        a = (a - 1) & mask;
    }
    for p in set_partitions(mask) {
        let j = p.len();
        if j < 2 {
            continue;
        }
        if let Some(c) = f.coeff(j) {
            for n in 0..nt - 1 {
                let o = sb.level_mut(n);
                for k in 0..s {
                    let mut v = c[k];
                    for &blk in &p {
                        v *= get(blk).1.level(n)[k];
                    }
                    o[k] += v;
                }
            }
        }
        if j <= 4 {
            let hs: Vec<&[f64]> = p.iter().map(|&blk| get(blk).1.level(nt - 1)).collect();
            let t = g.variation(&hs);
            for (o, v) in sb.level_mut(nt - 1).iter_mut().zip(t) {
                *o += v;
            }
        }
    }
    (sb, sf)
}

/// Solutions for every nonempty subset of the directions, indexed by bit
/// mask. Outer grid, Neumann walls.
pub fn solve_linearized_all(grid: &Grid, f: &RunningCost, g: &TerminalCost, dirs: &[&[f64]]) -> Result<Vec<Option<(Field, Field)>>> {
    let order = dirs.len();
    if order == 0 || order > 4 {
        return Err(Error::Capability(format!("linearization order {order} not supported (1..=4)")));
    }
    let s = grid.outer().len();
    if dirs.iter().any(|d| d.len() != s) {
        return Err(Error::Domain("direction does not match the outer grid".into()));
    }
    let c1 = coeff_on(f, 1, grid, Bc::Neumann);
    let sys = SpaceTimeSystem::new(grid, Bc::Neumann, Coupling::Potential(&c1), Coupling::Laplacian, TerminalLink::DeltaG(g))?;
    let full = (1u32 << order) - 1;
    let mut masks: Vec<u32> = (1..=full).collect();
    masks.sort_by_key(|m| m.count_ones());
    let mut sols: Vec<Option<(Field, Field)>> = vec![None; full as usize + 1];
    for mask in masks {
        let (sb, mut sf) = if mask.count_ones() == 1 {
            (Field::zeros(s, grid.nt()), Field::zeros(s, grid.nt()))
        } else {
            order_sources(grid, f, g, mask, &sols)
        };
        if mask.count_ones() == 1 {
            sf.set_level(0, dirs[mask.trailing_zeros() as usize]);
        }
        let zero = sb.max_abs() == 0.0 && sf.max_abs() == 0.0;
        let (u, m) = if zero {
            (sb, sf)
        } else {
            let (u, m, _) = sys.solve(&sb, &sf)?;
            (u, m)
        };
        sols[mask as usize] = Some((u, m));
    }
    Ok(sols)
}

/// Second-order linearization from two first-order solutions on Ω′.
pub fn solve_linearized2(grid: &Grid, f: &RunningCost, g: &TerminalCost, a: &LinearizedOrder1, b: &LinearizedOrder1) -> Result<LinearizedOrder2> {
    if a.bc != Bc::Neumann || b.bc != Bc::Neumann {
        return Err(Error::Capability("higher orders are posed on the outer grid".into()));
    }
    let sols = vec![None, Some((a.u.clone(), a.m.clone())), Some((b.u.clone(), b.m.clone()))];
    let (sb, sf) = order_sources(grid, f, g, 3, &sols);
    if sb.max_abs() == 0.0 && sf.max_abs() == 0.0 {
        return Ok(LinearizedOrder2 { u: sb, m: sf, iterations: 0 });
    }
    let c1 = coeff_on(f, 1, grid, Bc::Neumann);
    let sys = SpaceTimeSystem::new(grid, Bc::Neumann, Coupling::Potential(&c1), Coupling::Laplacian, TerminalLink::DeltaG(g))?;
    let (u, m, rep) = sys.solve(&sb, &sf)?;
    Ok(LinearizedOrder2 { u, m, iterations: rep.iterations })
}

/// The fully mixed derivative `∂_{ε_1} ... ∂_{ε_N}` of `(u, m)`.
pub fn solve_linearized_n(grid: &Grid, f: &RunningCost, g: &TerminalCost, dirs: &[&[f64]]) -> Result<(Field, Field)> {
    let mut sols = solve_linearized_all(grid, f, g, dirs)?;
    let full = (1usize << dirs.len()) - 1;
    Ok(sols[full].take().expect("full mask solved"))
}

/// Right-hand side of the adjoint system.
#[derive(Clone, Debug)]
pub enum AdjointDrive<T: Scalar> {
    /// `ρ(T)` on Ω (boundary entries ignored).
    Terminal(Vec<T>),
    /// Interior sources for the `ρ` and `v` equations, plus `ρ(T)`.
    Source { rho: Field<T>, v: Field<T>, terminal: Vec<T> },
}

/// Adjoint system on Q with zero lateral data:
/// `v_t - Δv = F^(1) ρ`, `-ρ_t - Δρ - Δv = 0`, `v(0) = 0`.
/// `f1` lives on Ω.
pub fn solve_adjoint<T: Scalar>(grid: &Grid, f1: &[f64], drive: &AdjointDrive<T>) -> Result<AdjointPair<T>> {
    let sys = SpaceTimeSystem::new(grid, Bc::Dirichlet, Coupling::Laplacian, Coupling::Potential(f1), TerminalLink::Data)?;
    let (s, nt) = (grid.inner().len(), grid.nt());
    let (mut sb, mut sf, terminal) = match drive {
        AdjointDrive::Terminal(t) => (Field::zeros(s, nt), Field::zeros(s, nt), t.clone()),
        AdjointDrive::Source { rho, v, terminal } => (rho.clone(), v.clone(), terminal.clone()),
    };
    if terminal.len() != s || sb.nodes() != s || sf.nodes() != s {
        return Err(Error::Domain("adjoint drive does not match the inner grid".into()));
    }
    sb.set_level(nt - 1, &terminal);
    sf.set_level(0, &vec![T::zero(); s]);
    let bnodes = grid.inner().boundary_nodes();
    for n in 0..nt {
        for fld in [&mut sb, &mut sf] {
            let l = fld.level_mut(n);
            for &k in &bnodes {
                l[k] = T::zero();
            }
        }
    }
    if sb.max_abs() == 0.0 && sf.max_abs() == 0.0 {
        return Ok(AdjointPair { v: sf, rho: sb, iterations: 0 });
    }
    let (rho, v, rep) = sys.solve(&sb, &sf)?;
    Ok(AdjointPair {
        v,
        rho,
        iterations: rep.iterations,
    })
}

/// The adjoint solved directly in reversed time `t ↦ T - t`, where it reads
/// as a forward problem for `p = ρ(T-·)` from `p(0) = drive` coupled to a
/// backward problem for `q = v(T-·)` with `q(T) = 0`.
pub fn solve_adjoint_reversed<T: Scalar>(grid: &Grid, f1: &[f64], drive: &[T]) -> Result<(Field<T>, Field<T>)> {
    let sys = SpaceTimeSystem::new(grid, Bc::Dirichlet, Coupling::Potential(f1), Coupling::Laplacian, TerminalLink::Data)?;
    let (s, nt) = (grid.inner().len(), grid.nt());
    let sb = Field::zeros(s, nt);
    let mut sf = Field::zeros(s, nt);
    let mut d = drive.to_vec();
    for k in grid.inner().boundary_nodes() {
        d[k] = T::zero();
    }
    sf.set_level(0, &d);
    let (q, p, _) = sys.solve(&sb, &sf)?;
    Ok((p, q))
}
