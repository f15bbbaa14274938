//! Complex geometric optics probes on Q.
//!
//! A (+) probe solves the zero-Dirichlet system
//!
//! ```text
//! -u_t - Δu = F m,   m_t - Δm - Δu = 0,   u(T) = δG m(T)
//! ```
//!
//! with `m = ψ (θ₊ e^{-i(η·x + τt)} + w)`, `ψ = E(t) e^{-iλξ·x}`. The
//! envelope `E^n = r^n`, `r = 1/(1 + dt μ)`, is the one the discrete heat
//! operator propagates exactly for the phase `e^{-iλξ·x}` (`μ` is its
//! discrete symbol), so `ψ` solves the discrete heat equation away from
//! Σ. All unknowns are kept envelope-stripped.
//!
//! The density equation has no initial condition, so every step of the
//! fixed-point map picks the correction of least `L²(Q)` norm. This is done
//! mode by mode in the Dirichlet sine basis, where it reduces to one
//! tridiagonal system in time. A (−) probe is the time mirror and complex
//! conjugate of a (+) probe with zero terminal coupling.

use crate::costs::TerminalCost;
use crate::error::{Error, Result};
use crate::field::{ComplexField, FactoredField, Field};
use crate::grid::{Grid, SpaceGrid};
use crate::ops::{self, Sign};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Sign in front of `(η, τ)` inside the (−) probe oscillation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MinusPhase {
    /// `e^{-i(η·x + τt)}`, the form that pairs with a (+) probe into
    /// `e^{-i(η₁+η₂)·x}`.
    #[default]
    Negative,
    /// `e^{+i(η·x + τt)}`.
    Positive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    /// `n ln r` with the exact discrete decay factor.
    #[default]
    Discrete,
    /// `-λ²t`.
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CGOParams {
    pub lambda: f64,
    pub xi: [f64; 2],
    pub eta: [f64; 2],
    pub tau: f64,
    pub sign: Sign,
    /// Stretch `s`: the probe uses `sλ`, `sη`, `s²τ`.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub minus_phase: MinusPhase,
    #[serde(default)]
    pub envelope: Envelope,
}

fn one() -> f64 {
    1.0
}

impl CGOParams {
    pub fn new(lambda: f64, xi: [f64; 2], eta: [f64; 2], tau: f64, sign: Sign) -> Self {
        CGOParams {
            lambda,
            xi,
            eta,
            tau,
            sign,
            scale: 1.0,
            minus_phase: MinusPhase::Negative,
            envelope: Envelope::Discrete,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if grid.dim() < 2 {
            return Err(Error::Capability("probes need two space dimensions".into()));
        }
        let n = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        if (n(self.xi) - 1.0).abs() > 1e-12 || (n(self.eta) - 1.0).abs() > 1e-12 {
            return Err(Error::Config("ξ and η must be unit vectors".into()));
        }
        if (self.xi[0] * self.eta[0] + self.xi[1] * self.eta[1]).abs() > 1e-12 {
            return Err(Error::Config("ξ and η must be orthogonal".into()));
        }
        if !(self.lambda > 0.0) || !(self.scale > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config("λ and the stretch must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda_eff(&self) -> f64 {
        self.scale * self.lambda
    }

    pub fn eta_eff(&self) -> [f64; 2] {
        [self.scale * self.eta[0], self.scale * self.eta[1]]
    }

    pub fn tau_eff(&self) -> f64 {
        self.scale * self.scale * self.tau
    }

    /// `θ₊(t)` or `θ₋(t)`.
    pub fn theta(&self, t: f64, t_final: f64) -> f64 {
        let k = self.lambda_eff().powf(0.75);
        match self.sign {
            Sign::Plus => 1.0 - (-k * t).exp(),
            Sign::Minus => 1.0 - (-k * (t_final - t)).exp(),
        }
    }

    /// Discrete symbol of `-Δ` on `e^{-iλξ·x}`.
    pub fn symbol(&self, space: &SpaceGrid) -> f64 {
        let l = self.lambda_eff();
        (0..2)
            .map(|a| {
                let h = space.dx(a);
                (2.0 - 2.0 * (l * self.xi[a] * h).cos()) / (h * h)
            })
            .sum()
    }

    /// `ln r`.
    pub fn log_decay(&self, grid: &Grid) -> f64 {
        match self.envelope {
            Envelope::Discrete => -(1.0 + grid.dt() * self.symbol(grid.inner())).ln(),
            Envelope::Continuous => -self.lambda_eff().powi(2) * grid.dt(),
        }
    }

    /// Per-level log envelope (`∓` by sign).
    pub fn log_envelope(&self, grid: &Grid) -> Vec<f64> {
        let nt = grid.nt();
        let lr = self.log_decay(grid);
        (0..nt)
            .map(|n| match (self.envelope, self.sign) {
                (Envelope::Discrete, Sign::Plus) => n as f64 * lr,
                (Envelope::Discrete, Sign::Minus) => -(n as f64) * lr,
                (Envelope::Continuous, s) => -s.value() * self.lambda_eff().powi(2) * grid.time(n),
            })
            .collect()
    }

    /// Parameters of the (+) construction whose mirror is this (−) probe,
    /// and the constant phase that aligns the mirrored oscillator.
    fn mirror_source(&self, t_final: f64) -> (CGOParams, Complex64) {
        let mut p = *self;
        p.sign = Sign::Plus;
        match self.minus_phase {
            MinusPhase::Negative => {
                p.eta = [-self.eta[0], -self.eta[1]];
            }
            MinusPhase::Positive => {
                p.tau = -self.tau;
            }
        }
        let phase = Complex64::new(0.0, -p.tau_eff() * t_final).exp();
        (p, phase)
    }
}

/// Leading term in factored form on the inner grid.
pub fn leading_term(params: &CGOParams, grid: &Grid) -> Result<FactoredField> {
    params.validate(grid)?;
    let sp = grid.inner();
    let nt = grid.nt();
    let l = params.lambda_eff();
    let eta = params.eta_eff();
    let tau = params.tau_eff();
    let s = params.sign.value();
    let phase_sign = match (params.sign, params.minus_phase) {
        (Sign::Plus, _) => -1.0,
        (Sign::Minus, MinusPhase::Negative) => -1.0,
        (Sign::Minus, MinusPhase::Positive) => 1.0,
    };
    let mut osc = ComplexField::zeros(sp.len(), nt);
    for n in 0..nt {
        let t = grid.time(n);
        let th = params.theta(t, grid.t_final());
        let lvl = osc.level_mut(n);
        for (k, o) in lvl.iter_mut().enumerate() {
            let x = sp.coord(k);
            let a = -s * l * (params.xi[0] * x[0] + params.xi[1] * x[1])
                + phase_sign * (eta[0] * x[0] + eta[1] * x[1] + tau * t);
            *o = Complex64::new(0.0, a).exp() * th;
        }
    }
    Ok(FactoredField::with_time_envelope(&params.log_envelope(grid), osc))
}

/// Coupling at `t = T` used by the (+) construction.
#[derive(Clone, Copy, Debug)]
pub enum TerminalMode<'a> {
    DeltaG(&'a TerminalCost),
    Zero,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CorrectionOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        CorrectionOptions { tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Clone, Debug)]
pub struct CGOProbe {
    pub params: CGOParams,
    /// `ψ θ e^{∓i(η,τ)}` factored.
    pub leading: FactoredField,
    /// Correction (`ψ w`), same envelope.
    pub correction: FactoredField,
    /// Companion value-function component, same envelope.
    pub u: FactoredField,
    pub residual: f64,
    pub contraction: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    /// `‖w‖_{L²(Q)}`.
    pub w_norm: f64,
}

impl CGOProbe {
    /// Density component `leading + correction` (envelope-stripped).
    pub fn density_oscillator(&self) -> ComplexField {
        self.leading.oscillator.add(&self.correction.oscillator)
    }

    pub fn density(&self) -> FactoredField {
        self.leading.add_oscillator(&self.correction.oscillator)
    }

    /// Materialized `(u, m)`; fails when the envelope overflows.
    pub fn unfactored(&self) -> Result<(ComplexField, ComplexField)> {
        Ok((self.u.unfactored()?, self.density().unfactored()?))
    }
}

/// Sine transform on the interior lattice of a 2D grid together with the
/// Dirichlet symbols `μ_ab` of `-Δ`.
struct SineBasis {
    nx: usize,
    ny: usize,
    sx: Vec<f64>,
    sy: Vec<f64>,
    mu: Vec<f64>,
    interior: Vec<usize>,
}

fn sine_matrix(m: usize) -> Vec<f64> {
    let n1 = (m + 1) as f64;
    let c = (2.0 / n1).sqrt();
    let mut s = vec![0.0; m * m];
    for a in 0..m {
        for i in 0..m {
            s[a * m + i] = c * (((a + 1) * (i + 1)) as f64 * std::f64::consts::PI / n1).sin();
        }
    }
    s
}

impl SineBasis {
    fn new(sp: &SpaceGrid) -> Self {
        let nx = sp.nx() - 2;
        let ny = sp.ny() - 2;
        let (hx, hy) = (sp.dx(0), sp.dx(1));
        let mut mu = vec![0.0; nx * ny];
        for b in 0..ny {
            for a in 0..nx {
                let ex = (2.0 - 2.0 * ((a + 1) as f64 * std::f64::consts::PI / (nx + 1) as f64).cos()) / (hx * hx);
                let ey = (2.0 - 2.0 * ((b + 1) as f64 * std::f64::consts::PI / (ny + 1) as f64).cos()) / (hy * hy);
                mu[a + nx * b] = ex + ey;
            }
        }
        let interior = (0..ny).flat_map(|j| (0..nx).map(move |i| sp.idx(i + 1, j + 1))).collect();
        SineBasis {
            nx,
            ny,
            sx: sine_matrix(nx),
            sy: sine_matrix(ny),
            mu,
            interior,
        }
    }

    fn modes(&self) -> usize {
        self.nx * self.ny
    }

    /// The transform is an involution.
    fn transform(&self, v: &[Complex64]) -> Vec<Complex64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut tmp = vec![c0(); nx * ny];
        for j in 0..ny {
            for a in 0..nx {
                let mut s = c0();
                for i in 0..nx {
                    s += v[i + nx * j] * self.sx[a * nx + i];
                }
                tmp[a + nx * j] = s;
            }
        }
        let mut out = vec![c0(); nx * ny];
        for b in 0..ny {
            for a in 0..nx {
                let mut s = c0();
                for j in 0..ny {
                    s += tmp[a + nx * j] * self.sy[b * ny + j];
                }
                out[a + nx * b] = s;
            }
        }
        out
    }

    fn gather(&self, full: &[Complex64]) -> Vec<Complex64> {
        self.interior.iter().map(|&k| full[k]).collect()
    }

    fn scatter(&self, v: &[Complex64], full: &mut [Complex64]) {
        for (&k, &x) in self.interior.iter().zip(v) {
            full[k] = x;
        }
    }
}

/// Factored tridiagonal `C W⁻¹ Cᵀ` for one mode.
struct ModeSystem {
    a: f64,
    b: f64,
    // Thomas factors of the N×N system
    cprime: Vec<f64>,
    denom: Vec<f64>,
    sub: Vec<f64>,
}

impl ModeSystem {
    fn new(a: f64, b: f64, w: &[f64]) -> Self {
        let nn = w.len() - 1;
        let diag: Vec<f64> = (1..=nn).map(|n| b * b / w[n - 1] + a * a / w[n]).collect();
        let off: Vec<f64> = (1..nn).map(|n| -a * b / w[n]).collect();
        let mut cprime = vec![0.0; nn];
        let mut denom = vec![0.0; nn];
        denom[0] = diag[0];
        for i in 1..nn {
            cprime[i - 1] = off[i - 1] / denom[i - 1];
            denom[i] = diag[i] - off[i - 1] * cprime[i - 1];
        }
        ModeSystem { a, b, cprime, denom, sub: off }
    }

    /// Least-weighted-norm `y_0..y_N` with `a y_n - b y_{n-1} = g_n`.
    fn solve(&self, g: &[Complex64], w: &[f64]) -> Vec<Complex64> {
        let nn = g.len();
        let mut z = vec![c0(); nn];
        z[0] = g[0] / self.denom[0];
        for i in 1..nn {
            z[i] = (g[i] - z[i - 1] * self.sub[i - 1]) / self.denom[i];
        }
        for i in (0..nn - 1).rev() {
            z[i] = z[i] - z[i + 1] * self.cprime[i];
        }
        // multipliers z_n for rows n = 1..N; y = W⁻¹ Cᵀ z
        (0..=nn)
            .map(|j| {
                let mut s = c0();
                if j >= 1 {
                    s += z[j - 1] * self.a;
                }
                if j < nn {
                    s -= z[j] * self.b;
                }
                s / w[j]
            })
            .collect()
    }
}

struct Construction<'a> {
    grid: &'a Grid,
    basis: SineBasis,
    f1: &'a [f64],
    terminal: TerminalMode<'a>,
    r: f64,
    idt: f64,
    tw: Vec<f64>,
    modes: Vec<ModeSystem>,
    lead: ComplexField,
    /// Interior part of the lifted leading-term residual, per level.
    h: Vec<Vec<Complex64>>,
}

impl<'a> Construction<'a> {
    fn new(grid: &'a Grid, params: &CGOParams, f1: &'a [f64], terminal: TerminalMode<'a>) -> Result<Self> {
        let sp = grid.inner();
        if f1.len() != sp.len() {
            return Err(Error::Domain("coefficient does not match the inner grid".into()));
        }
        let basis = SineBasis::new(sp);
        let r = params.log_decay(grid).exp();
        let idt = 1.0 / grid.dt();
        let tw = grid.time_weights();
        let modes = basis.mu.iter().map(|&mu| ModeSystem::new(idt + mu, idt / r, &tw)).collect();
        let lead = leading_term(params, grid)?.oscillator;
        let nt = grid.nt();
        let mut h = vec![Vec::new(); nt];
        for n in 1..nt {
            let lap = ops::laplacian_dirichlet(sp, lead.level(n));
            let (cur, prev) = (lead.level(n), lead.level(n - 1));
            let full: Vec<Complex64> = (0..sp.len()).map(|k| -((cur[k] - prev[k] / r) * idt - lap[k])).collect();
            h[n] = basis.gather(&full);
        }
        Ok(Construction {
            grid,
            basis,
            f1,
            terminal,
            r,
            idt,
            tw,
            modes,
            lead,
            h,
        })
    }

    /// Interior density `m̃ = L̃ + ρ̃` (boundary zero) from interior `ρ̃`.
    fn density(&self, rho: &[Vec<Complex64>]) -> ComplexField {
        let sp = self.grid.inner();
        let mut m = ComplexField::zeros(sp.len(), self.grid.nt());
        for (n, rn) in rho.iter().enumerate() {
            let l = self.basis.gather(self.lead.level(n));
            let v: Vec<Complex64> = l.iter().zip(rn).map(|(a, b)| *a + *b).collect();
            self.basis.scatter(&v, m.level_mut(n));
        }
        m
    }

    /// Backward sweep for `ũ` given the density.
    fn value(&self, m: &ComplexField) -> ComplexField {
        let sp = self.grid.inner();
        let nt = self.grid.nt();
        let mut u = ComplexField::zeros(sp.len(), nt);
        let term = match self.terminal {
            TerminalMode::Zero => vec![c0(); sp.len()],
            TerminalMode::DeltaG(g) => {
                let mut v = g.delta_inner(self.grid, m.level(nt - 1));
                for k in sp.boundary_nodes() {
                    v[k] = c0();
                }
                v
            }
        };
        u.set_level(nt - 1, &term);
        let mut next = self.basis.transform(&self.basis.gather(&term));
        for n in (0..nt - 1).rev() {
            let src: Vec<Complex64> = self
                .basis
                .interior
                .iter()
                .map(|&k| m.level(n)[k] * self.f1[k])
                .collect();
            let sh = self.basis.transform(&src);
            let cur: Vec<Complex64> = (0..self.basis.modes())
                .map(|q| (next[q] * (self.r * self.idt) + sh[q]) / (self.idt + self.basis.mu[q]))
                .collect();
            let phys = self.basis.transform(&cur);
            self.basis.scatter(&phys, u.level_mut(n));
            next = cur;
        }
        u
    }

    /// Least-norm correction for a given `ũ`.
    fn correction(&self, u: &ComplexField) -> Vec<Vec<Complex64>> {
        let sp = self.grid.inner();
        let nt = self.grid.nt();
        let nm = self.basis.modes();
        // mode-major right-hand sides for n = 1..N
        let mut g = vec![vec![c0(); nt - 1]; nm];
        for n in 1..nt {
            let lap = ops::laplacian_dirichlet(sp, u.level(n));
            let rhs: Vec<Complex64> = self.basis.gather(&lap).iter().zip(&self.h[n]).map(|(a, b)| *a + *b).collect();
            let hat = self.basis.transform(&rhs);
            for q in 0..nm {
                g[q][n - 1] = hat[q];
            }
        }
        let ys: Vec<Vec<Complex64>> = (0..nm).map(|q| self.modes[q].solve(&g[q], &self.tw)).collect();
        (0..nt)
            .map(|n| {
                let hat: Vec<Complex64> = (0..nm).map(|q| ys[q][n]).collect();
                self.basis.transform(&hat)
            })
            .collect()
    }

    fn norm(&self, rho: &[Vec<Complex64>]) -> f64 {
        let w = self.grid.inner().weight(self.basis.interior[0]);
        rho.iter()
            .zip(&self.tw)
            .map(|(r, t)| t * w * r.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn distance(&self, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
        let d: Vec<Vec<Complex64>> = a
            .iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| *p - *q).collect())
            .collect();
        self.norm(&d)
    }

    /// Row residual of the envelope-stripped system relative to the size of
    /// its forcing.
    fn residual(&self, u: &ComplexField, m: &ComplexField) -> f64 {
        let sp = self.grid.inner();
        let nt = self.grid.nt();
        let mut res = 0.0;
        let mut scale = 0.0;
        let w = sp.weights();
        let tw = &self.tw;
        for n in 0..nt {
            let lap_u = ops::laplacian_dirichlet(sp, u.level(n));
            let lap_m = ops::laplacian_dirichlet(sp, m.level(n));
            for k in sp.interior_nodes() {
                let wk = w[k] * tw[n];
                if n + 1 < nt {
                    let ru = (u.level(n)[k] - u.level(n + 1)[k] * self.r) * self.idt - lap_u[k] - m.level(n)[k] * self.f1[k];
                    res += wk * ru.norm_sqr();
                    scale += wk * (self.lead.level(n)[k] * self.f1[k]).norm_sqr();
                }
                if n > 0 {
                    let rm = (m.level(n)[k] - m.level(n - 1)[k] / self.r) * self.idt - lap_m[k] - lap_u[k];
                    res += wk * rm.norm_sqr();
                }
            }
            if n > 0 {
                scale += tw[n] * w[self.basis.interior[0]] * self.h[n].iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        if let TerminalMode::DeltaG(g) = self.terminal {
            let d = g.delta_inner(self.grid, m.level(nt - 1));
            for k in sp.interior_nodes() {
                res += w[k] * (u.level(nt - 1)[k] - d[k]).norm_sqr();
            }
        }
        for k in sp.boundary_nodes() {
            for n in 0..nt {
                res += (u.level(n)[k].norm_sqr() + m.level(n)[k].norm_sqr()) * w[k] * tw[n];
            }
        }
        (res / scale.max(f64::MIN_POSITIVE)).sqrt()
    }
}

fn solve_plus(params: &CGOParams, grid: &Grid, f1: &[f64], terminal: TerminalMode, opts: &CorrectionOptions) -> Result<CGOProbe> {
    let c = Construction::new(grid, params, f1, terminal)?;
    let nt = grid.nt();
    let ni = c.basis.modes();
    let mut rho = vec![vec![c0(); ni]; nt];
    let mut history: Vec<f64> = Vec::new();
    let mut contraction: f64 = 0.0;
    let mut iterations = 0;
    loop {
        let m = c.density(&rho);
        let u = c.value(&m);
        let next = c.correction(&u);
        let d = c.distance(&next, &rho);
        rho = next;
        iterations += 1;
        if let Some(&prev) = history.last() {
            if prev > 0.0 {
                contraction = contraction.max(d / prev);
            }
        }
        history.push(d);
        let scale = c.norm(&rho).max(1.0);
        if d <= opts.tol * scale {
            break;
        }
        if history.len() >= 3 && contraction >= 1.0 {
            return Err(Error::Probe(format!(
                "fixed-point map is not a contraction at λ = {} (factor {contraction:.3}); increase λ",
                params.lambda
            )));
        }
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged {
                iterations,
                last: d,
                history,
            });
        }
    }
    let m = c.density(&rho);
    let u = c.value(&m);
    let residual = c.residual(&u, &m);
    let sp = grid.inner();
    let mut corr = ComplexField::zeros(sp.len(), nt);
    for n in 0..nt {
        let lvl = corr.level_mut(n);
        for k in 0..sp.len() {
            lvl[k] = m.level(n)[k] - c.lead.level(n)[k];
        }
    }
    let env = params.log_envelope(grid);
    let w_norm = ops::l2_norm_q(grid, &corr);
    Ok(CGOProbe {
        params: *params,
        leading: FactoredField::with_time_envelope(&env, c.lead.clone()),
        correction: FactoredField::with_time_envelope(&env, corr),
        u: FactoredField::with_time_envelope(&env, u),
        residual,
        contraction,
        iterations,
        history,
        w_norm,
    })
}

/// Mirror `k ↦ N-k` with conjugation and a constant phase.
fn mirror(f: &ComplexField, phase: Complex64) -> ComplexField {
    let nt = f.levels();
    let levels = (0..nt)
        .map(|k| f.level(nt - 1 - k).iter().map(|z| z.conj() * phase).collect())
        .collect();
    Field::from_levels(levels, false)
}

/// Construct the probe for `params`. (+) probes use `terminal`; (−) probes
/// always have `u(0) = 0` and no terminal coupling.
pub fn solve_correction(params: &CGOParams, grid: &Grid, f1: &[f64], terminal: TerminalMode, opts: &CorrectionOptions) -> Result<CGOProbe> {
    params.validate(grid)?;
    match params.sign {
        Sign::Plus => solve_plus(params, grid, f1, terminal, opts),
        Sign::Minus => {
            let (src, phase) = params.mirror_source(grid.t_final());
            let plus = solve_plus(&src, grid, f1, TerminalMode::Zero, opts)?;
            let env = params.log_envelope(grid);
            let leading = leading_term(params, grid)?;
            let corr = mirror(&plus.correction.oscillator, phase);
            let u = mirror(&plus.u.oscillator, phase);
            Ok(CGOProbe {
                params: *params,
                leading,
                correction: FactoredField::with_time_envelope(&env, corr),
                u: FactoredField::with_time_envelope(&env, u),
                residual: plus.residual,
                contraction: plus.contraction,
                iterations: plus.iterations,
                history: plus.history,
                w_norm: plus.w_norm,
            })
        }
    }
}

/// Largest relative row residual of a probe re-inserted into the
/// envelope-stripped system (recomputed from the stored fields).
pub fn probe_residual(probe: &CGOProbe, grid: &Grid, f1: &[f64], terminal: TerminalMode) -> Result<f64> {
    match probe.params.sign {
        Sign::Plus => {
            let c = Construction::new(grid, &probe.params, f1, terminal)?;
            Ok(c.residual(&probe.u.oscillator, &probe.density_oscillator()))
        }
        Sign::Minus => {
            // the mirror is its own inverse
            let (src, phase) = probe.params.mirror_source(grid.t_final());
            let c = Construction::new(grid, &src, f1, TerminalMode::Zero)?;
            let u = mirror(&probe.u.oscillator, phase);
            let m = mirror(&probe.density_oscillator(), phase);
            Ok(c.residual(&u, &m))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub lambda: f64,
    pub w_norm: f64,
    pub contraction: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub strictly_decreasing: bool,
    pub slope: f64,
    pub pass: bool,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `‖w‖_{L²(Q)}` over a list of `λ` sharing the other parameters of
/// `template`. Passes when the norms strictly decrease and the log-log slope
/// is at most `-0.4` (vacuous for a single `λ`).
pub fn decay_certificate(template: &CGOParams, grid: &Grid, f1: &[f64], terminal: TerminalMode, lambdas: &[f64], opts: &CorrectionOptions) -> Result<DecayReport> {
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("λ list must be increasing".into()));
    }
    let mut rows = Vec::new();
    for &l in lambdas {
        let mut p = *template;
        p.lambda = l;
        let probe = solve_correction(&p, grid, f1, terminal, opts)?;
        rows.push(DecayRow {
            lambda: l,
            w_norm: probe.w_norm,
            contraction: probe.contraction,
            iterations: probe.iterations,
        });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].w_norm < w[0].w_norm);
    let slope = if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.w_norm).collect();
        loglog_slope(&x, &y)
    } else {
        0.0
    };
    let pass = rows.len() < 2 || (strictly_decreasing && slope <= -0.4);
    Ok(DecayReport {
        rows,
        strictly_decreasing,
        slope,
        pass,
    })
}

/// Smallest `λ` on `candidates` (increasing) whose observed contraction
/// factor is below `target`.
pub fn calibrate_lambda_min(template: &CGOParams, grid: &Grid, f1: &[f64], terminal: TerminalMode, candidates: &[f64], target: f64) -> Result<(f64, f64)> {
    let opts = CorrectionOptions { tol: 1e-8, max_iter: 60 };
    for &l in candidates {
        let mut p = *template;
        p.lambda = l;
        match solve_correction(&p, grid, f1, terminal, &opts) {
            Ok(probe) if probe.contraction < target => return Ok((l, probe.contraction)),
            Ok(_) | Err(Error::Probe(_)) | Err(Error::NotConverged { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Probe(format!("no candidate λ reaches contraction factor {target}")))
}
