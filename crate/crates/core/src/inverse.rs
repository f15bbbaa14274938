//! Duality identity, boundary functional and coefficient reconstruction.
//!
//! The identity pairs the difference of two linearized solutions with
//! test functions `(p, q)` that solve the discrete adjoint of the
//! reference system in real time. Everything the reconstruction consumes
//! is either reference-side (known cost, adjoint solves) or a measurement
//! difference on the observation surface of Q.

use crate::cgo::{CGOParams, CGOProbe};
use crate::costs::{RunningCost, TerminalCost};
use crate::error::{Error, Result};
use crate::exec::{par_map, Parallelism};
use crate::field::{ComplexField, Field};
use crate::forward::{measure, solve_mfg, MeasurementData, SolverOptions};
use crate::grid::{hex_digest, Grid};
use crate::linearized::{solve_adjoint, solve_linearized1, AdjointDrive, Coupling, LateralBc, SpaceTimeSystem, TerminalLink};
use crate::ops::{Bc, Sign};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Test functions on the inner grid, real time: `p` pairs with the
/// value-function rows (`n < N`), `q` with the density rows (`n ≥ 1`).
/// The true test is `e^{log_scale} (p, q)`.
#[derive(Clone, Debug)]
pub struct TestPair<T: Scalar = Complex64> {
    pub p: Field<T>,
    pub q: Field<T>,
    pub log_scale: f64,
}

impl<T: Scalar> TestPair<T> {
    pub fn from_adjoint(pair: &crate::linearized::AdjointPair<T>) -> Self {
        let (p, q) = pair.reversed();
        TestPair { p, q, log_scale: 0.0 }
    }

    pub fn scaled(&self, c: T) -> Self {
        TestPair {
            p: self.p.map(|v| v * c),
            q: self.q.map(|v| v * c),
            log_scale: self.log_scale,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.log_scale != other.log_scale {
            return Err(Error::Domain("test pairs carry different scales".into()));
        }
        Ok(TestPair {
            p: self.p.add(&other.p),
            q: self.q.add(&other.q),
            log_scale: self.log_scale,
        })
    }
}

/// Test pair from a (−) probe. The probe stores the adjoint in the
/// backward-time form; reversing it gives a pair whose envelope decays
/// from `t = 0`, normalized by the envelope at `T`.
pub fn cgo_test_pair(probe: &CGOProbe, grid: &Grid) -> Result<TestPair<Complex64>> {
    if probe.params.sign != Sign::Minus {
        return Err(Error::Probe("adjoint tests come from (−) probes".into()));
    }
    let nt = grid.nt();
    let rho = probe.density();
    let top = rho.log_envelope.level(nt - 1)[0];
    let flip = |f: &crate::field::FactoredField| -> ComplexField {
        let levels = (0..nt)
            .map(|n| {
                let k = nt - 1 - n;
                let env = f.log_envelope.level(k);
                f.oscillator
                    .level(k)
                    .iter()
                    .zip(env)
                    .map(|(z, l)| z * (l - top).exp())
                    .collect()
            })
            .collect();
        Field::from_levels(levels, false)
    };
    Ok(TestPair {
        p: flip(&rho),
        q: flip(&probe.u),
        log_scale: top,
    })
}

/// Solve the reference adjoint for a terminal drive and return its test pair.
pub fn adjoint_test<T: Scalar>(grid: &Grid, f1_inner: &[f64], drive: Vec<T>) -> Result<TestPair<T>> {
    let pair = solve_adjoint(grid, f1_inner, &AdjointDrive::Terminal(drive))?;
    Ok(TestPair::from_adjoint(&pair))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Left-endpoint sum over `n < N` on interior nodes: the one the
    /// discrete identity closes with.
    #[default]
    Scheme,
    /// Trapezoid in time and space over all of Q.
    Trapezoid,
}

fn check_q(grid: &Grid, what: &str, nodes: usize, levels: usize) -> Result<()> {
    if nodes != grid.inner().len() || levels != grid.nt() {
        return Err(Error::Domain(format!(
            "{what} has shape {nodes}×{levels}, expected {}×{}",
            grid.inner().len(),
            grid.nt()
        )));
    }
    Ok(())
}

/// `∫_Q d · m · ρ` for a coefficient difference `d` on Ω.
pub fn eval_identity<T: Scalar>(grid: &Grid, d: &[f64], m: &Field, rho: &Field<T>, quad: Quadrature) -> Result<T> {
    let sp = grid.inner();
    if d.len() != sp.len() {
        return Err(Error::Domain("coefficient difference does not live on Ω".into()));
    }
    check_q(grid, "density", m.nodes(), m.levels())?;
    check_q(grid, "test field", rho.nodes(), rho.levels())?;
    let nt = grid.nt();
    let w = sp.weights();
    let mut s = T::zero();
    match quad {
        Quadrature::Scheme => {
            let dt = grid.dt();
            let nodes = sp.interior_nodes();
            for n in 0..nt - 1 {
                let (ml, rl) = (m.level(n), rho.level(n));
                let mut acc = T::zero();
                for &k in &nodes {
                    acc += rl[k] * (w[k] * d[k] * ml[k]);
                }
                s += acc * dt;
            }
        }
        Quadrature::Trapezoid => {
            for (n, tw) in grid.time_weights().into_iter().enumerate() {
                let (ml, rl) = (m.level(n), rho.level(n));
                let mut acc = T::zero();
                for k in 0..sp.len() {
                    acc += rl[k] * (w[k] * d[k] * ml[k]);
                }
                s += acc * tw;
            }
        }
    }
    Ok(s)
}

/// `eval_identity` with `d = F₁^(k) − F₂^(k)` restricted to Ω.
pub fn eval_identity_costs<T: Scalar>(
    grid: &Grid,
    f1: &RunningCost,
    f2: &RunningCost,
    k: usize,
    m: &Field,
    rho: &Field<T>,
    quad: Quadrature,
) -> Result<T> {
    eval_identity(grid, &coefficient_difference(grid, f1, f2, k)?, m, rho, quad)
}

/// `F₁^(k) − F₂^(k)` on Ω (missing orders count as zero).
pub fn coefficient_difference(grid: &Grid, f1: &RunningCost, f2: &RunningCost, k: usize) -> Result<Vec<f64>> {
    if f1.nodes() != grid.outer().len() || f2.nodes() != grid.outer().len() {
        return Err(Error::Domain("running costs do not match the outer grid".into()));
    }
    let n = grid.outer().len();
    let zero = vec![0.0; n];
    let a = f1.coeff(k).unwrap_or(&zero);
    let b = f2.coeff(k).unwrap_or(&zero);
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(grid.restrict(&d))
}

/// Inner-grid pair carrying the measured values on the observation
/// surface and zero elsewhere.
pub fn surface_extension(grid: &Grid, data: &MeasurementData) -> Result<(Field, Field)> {
    data.check_shape(grid)?;
    let sp = grid.inner();
    let nt = grid.nt();
    let mut u = Field::zeros(sp.len(), nt);
    let mut m = Field::zeros(sp.len(), nt);
    u.set_level(0, &data.u_at0);
    u.set_level(nt - 1, &data.u_at_t);
    m.set_level(0, &data.m_at0);
    m.set_level(nt - 1, &data.m_at_t);
    let bnodes = sp.boundary_nodes();
    for n in 0..nt {
        let (us, ms) = (data.u_sigma.level(n), data.m_sigma.level(n));
        let lu = u.level_mut(n);
        for (i, &k) in bnodes.iter().enumerate() {
            lu[k] = us[i];
        }
        let lm = m.level_mut(n);
        for (i, &k) in bnodes.iter().enumerate() {
            lm[k] = ms[i];
        }
    }
    Ok((u, m))
}

/// Boundary aggregate of the identity: the reference rows applied to the
/// surface extension of `diff`, paired with the test. For a difference
/// of two linearized solutions it equals `∫ (F₁ − F₂) m₁ p` with
/// [`Quadrature::Scheme`].
pub fn boundary_functional<T: Scalar>(grid: &Grid, f1_ref_inner: &[f64], diff: &MeasurementData, test: &TestPair<T>) -> Result<T> {
    check_q(grid, "test p", test.p.nodes(), test.p.levels())?;
    check_q(grid, "test q", test.q.nodes(), test.q.levels())?;
    let (zu, zm) = surface_extension(grid, diff)?;
    let sys = SpaceTimeSystem::new(
        grid,
        Bc::Dirichlet,
        Coupling::Potential(f1_ref_inner),
        Coupling::Laplacian,
        TerminalLink::Data,
    )?;
    let (ru, rm) = sys.residual_rows(&zu, &zm);
    let sp = grid.inner();
    let w = sp.weights();
    let nodes = sp.interior_nodes();
    let nt = grid.nt();
    let dt = grid.dt();
    let mut s = T::zero();
    for n in 0..nt {
        let mut acc = T::zero();
        if n + 1 < nt {
            let (r, p) = (ru.level(n), test.p.level(n));
            for &k in &nodes {
                acc += p[k] * (w[k] * r[k]);
            }
        }
        if n > 0 {
            let (r, q) = (rm.level(n), test.q.level(n));
            for &k in &nodes {
                acc += q[k] * (w[k] * r[k]);
            }
        }
        s += acc * dt;
    }
    Ok(s)
}

/// Central stencil `(offset, weight)` of the `k`-th derivative (divide by `ε^k`).
fn stencil(k: usize) -> Result<&'static [(i32, f64)]> {
    Ok(match k {
        1 => &[(1, 0.5), (-1, -0.5)],
        2 => &[(1, 1.0), (0, -2.0), (-1, 1.0)],
        3 => &[(2, 0.5), (1, -1.0), (-1, 1.0), (-2, -0.5)],
        4 => &[(2, 1.0), (1, -4.0), (0, 6.0), (-1, -4.0), (-2, 1.0)],
        _ => return Err(Error::Capability(format!("measurement derivatives of order {k} are not supported"))),
    })
}

/// `k`-th directional derivative of the measurement map at `m0 = 1`
/// along `direction`, by central differences of full forward solves.
pub fn measurement_derivative(
    grid: &Grid,
    f: &RunningCost,
    g: &TerminalCost,
    direction: &[f64],
    k: usize,
    eps: f64,
    opts: &SolverOptions,
    mode: Parallelism,
) -> Result<MeasurementData> {
    let st = stencil(k)?;
    if direction.len() != grid.outer().len() {
        return Err(Error::Domain("direction does not live on Ω′".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let jobs: Vec<i32> = st.iter().map(|s| s.0).collect();
    let solved = par_map(mode, jobs, |j| {
        let m0: Vec<f64> = direction.iter().map(|d| 1.0 + j as f64 * eps * d).collect();
        solve_mfg(grid, f, g, &m0, opts).map(|s| measure(&s, grid))
    });
    let data = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let scale = eps.powi(k as i32);
    let terms: Vec<(f64, &MeasurementData)> = st.iter().zip(&data).map(|(s, d)| (s.1 / scale, d)).collect();
    Ok(MeasurementData::combine(&terms))
}

/// Dirichlet sine modes `sin(aπx̂/L₁) sin(bπŷ/L₂)`, `a, b = 1..=modes`,
/// on the inner grid.
pub fn sine_band(grid: &Grid, modes: usize) -> Vec<Vec<f64>> {
    let sp = grid.inner();
    let (x0, y0) = (sp.axis(0).lo, sp.axis(1).lo);
    let (lx, ly) = (sp.axis(0).len(), sp.axis(1).len());
    let mut out = Vec::with_capacity(modes * modes);
    for b in 1..=modes {
        for a in 1..=modes {
            out.push(sp.sample(|x| (a as f64 * PI * (x[0] - x0) / lx).sin() * (b as f64 * PI * (x[1] - y0) / ly).sin()));
        }
    }
    out
}

/// Largest spatial frequency of [`sine_band`].
pub fn band_radius(grid: &Grid, modes: usize) -> f64 {
    let sp = grid.inner();
    let l = sp.axis(0).len().min(sp.axis(1).len());
    PI * modes as f64 / l
}

/// Discrete L²(Ω) projection onto the sine band.
pub fn band_projection(grid: &Grid, modes: usize, f: &[f64]) -> Result<Vec<f64>> {
    let sp = grid.inner();
    let basis = sine_band(grid, modes);
    let n = basis.len();
    let gram = DMatrix::from_fn(n, n, |i, j| sp.pair(&basis[i], &basis[j]));
    let rhs = DVector::from_fn(n, |i, _| sp.pair(&basis[i], f));
    let c = gram
        .cholesky()
        .ok_or_else(|| Error::Conditioning("sine band is not resolved by the grid".into()))?
        .solve(&rhs);
    Ok(expand(&basis, c.as_slice()))
}

fn expand(basis: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; basis.first().map_or(0, Vec::len)];
    for (phi, ci) in basis.iter().zip(c) {
        for (o, v) in out.iter_mut().zip(phi) {
            *o += ci * v;
        }
    }
    out
}

/// Terminal drives `ρ(T) = e^{-ik·x}` for the adjoint tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub frequencies: Vec<[f64; 2]>,
}

impl ProbePlan {
    /// `k = π (a/L₁, b/L₂)` for `a, b < per_axis`.
    pub fn lattice(grid: &Grid, per_axis: usize) -> Self {
        let sp = grid.inner();
        let (lx, ly) = (sp.axis(0).len(), sp.axis(1).len());
        let frequencies = (0..per_axis)
            .flat_map(|b| (0..per_axis).map(move |a| [PI * a as f64 / lx, PI * b as f64 / ly]))
            .collect();
        ProbePlan { frequencies }
    }

    pub fn band(&self) -> f64 {
        self.frequencies.iter().map(|k| k[0].hypot(k[1])).fold(0.0, f64::max)
    }

    pub fn drive(&self, grid: &Grid, j: usize) -> Vec<Complex64> {
        let k = self.frequencies[j];
        grid.inner()
            .coords()
            .iter()
            .map(|x| Complex64::new(0.0, -(k[0] * x[0] + k[1] * x[1])).exp())
            .collect()
    }

    /// Adjoint tests for every frequency, in plan order.
    pub fn tests(&self, grid: &Grid, f1_inner: &[f64], mode: Parallelism) -> Result<Vec<TestPair<Complex64>>> {
        let jobs: Vec<usize> = (0..self.frequencies.len()).collect();
        par_map(mode, jobs, |j| adjoint_test(grid, f1_inner, self.drive(grid, j))).into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ridge {
    /// Weight relative to `σ_max²` of the design matrix.
    Fixed(f64),
    /// Corner of the L-curve over a log grid of relative weights.
    LCurve,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionOptions {
    /// Sine modes per axis.
    pub modes: usize,
    pub ridge: Ridge,
    /// Weight updates with the current estimate (order 1 only).
    pub born_iterations: usize,
    /// Mask threshold relative to the largest time-averaged weight.
    pub weight_floor: f64,
    /// Largest masked fraction of Ω before the weight is rejected.
    pub max_masked: f64,
    /// Expected absolute error of each sample, for the regularization floor.
    pub noise_level: f64,
    pub parallelism: Parallelism,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        ReconstructionOptions {
            modes: 5,
            ridge: Ridge::LCurve,
            born_iterations: 3,
            weight_floor: 1e-3,
            max_masked: 0.2,
            noise_level: 0.0,
            parallelism: Parallelism::Rayon,
        }
    }
}

/// Content hashes of every input the pipeline read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub inputs: Vec<(String, String)>,
}

impl Provenance {
    fn record(&mut self, label: &str, values: &[f64]) {
        self.inputs.push((label.to_string(), hash_values(values)));
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.inputs.iter().any(|(_, h)| h == hash)
    }
}

pub fn hash_values(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex_digest(&bytes)
}

fn hash_measurement(d: &MeasurementData) -> String {
    let mut all = d.u_at0.clone();
    all.extend_from_slice(&d.m_at_t);
    all.extend_from_slice(d.u_sigma.values());
    all.extend_from_slice(d.m_sigma.values());
    all.extend_from_slice(&d.u_at_t);
    all.extend_from_slice(&d.m_at0);
    hash_values(&all)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub k: [f64; 2],
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub relative_l2: f64,
    /// Relative to the band-limited projection of the truth.
    pub projected_relative_l2: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub order: usize,
    /// `F_true^(k) − F_ref^(k)` on Ω.
    pub recovered: Vec<f64>,
    /// `F_ref^(k) + recovered` on Ω.
    pub absolute: Vec<f64>,
    pub band: f64,
    pub modes: usize,
    pub ridge_weight: f64,
    /// Relative residual of the real least-squares fit.
    pub residual: f64,
    /// `‖Im c‖ / ‖Re c‖` of an unconstrained, unregularized complex fit.
    pub imag_residue: f64,
    /// Noise-driven L²(Ω) bound on the recovered field.
    pub floor: f64,
    pub condition: f64,
    pub warning: Option<String>,
    pub mask: Vec<bool>,
    pub masked_fraction: f64,
    pub born_history: Vec<f64>,
    pub samples: Vec<SampleRow>,
    pub provenance: Provenance,
    pub error: Option<ErrorMetrics>,
}

impl ReconstructionResult {
    /// Attach error metrics against a known difference on Ω.
    pub fn with_truth(mut self, grid: &Grid, truth: &[f64]) -> Result<Self> {
        let sp = grid.inner();
        if truth.len() != sp.len() {
            return Err(Error::Domain("truth does not live on Ω".into()));
        }
        let proj = band_projection(grid, self.modes, truth)?;
        let err = |r: &[f64]| {
            let e: Vec<f64> = self.recovered.iter().zip(r).map(|(a, b)| a - b).collect();
            sp.l2_norm(&e) / sp.l2_norm(r).max(f64::MIN_POSITIVE)
        };
        self.error = Some(ErrorMetrics {
            relative_l2: err(truth),
            projected_relative_l2: err(&proj),
            max_abs: self.recovered.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        });
        Ok(self)
    }

    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        grid.inner().l2_norm(&self.recovered)
    }
}

struct Fit {
    coeffs: Vec<f64>,
    alpha: f64,
    residual: f64,
    imag_residue: f64,
    /// `‖A_α⁺‖₂`.
    pinv_norm: f64,
    condition: f64,
}

fn filtered(u: &DMatrix<f64>, s: &DVector<f64>, vt: &DMatrix<f64>, b: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let ub = u.transpose() * b;
    let scaled = DVector::from_fn(s.len(), |i, _| if s[i] > 0.0 { s[i] / (s[i] * s[i] + alpha) * ub[i] } else { 0.0 });
    vt.transpose() * scaled
}

/// Knee of an L-curve: after scaling both log axes to `[0, 1]`, the point
/// farthest below the chord joining the ends (clockwise side).
fn corner(points: &[(f64, f64)]) -> usize {
    let span = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let (x0, sx) = span(&|p| p.0);
    let (y0, sy) = span(&|p| p.1);
    let pts: Vec<(f64, f64)> = points.iter().map(|p| ((p.0 - x0) / sx, (p.1 - y0) / sy)).collect();
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let mut best = (0usize, f64::MIN);
    for (i, p) in pts.iter().enumerate() {
        let d = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Ridge fit of real coefficients to complex samples `A c ≈ b`.
fn ridge_fit(a: &DMatrix<Complex64>, b: &DVector<Complex64>, ridge: Ridge) -> Result<Fit> {
    let (rows, cols) = a.shape();
    let ar = DMatrix::from_fn(2 * rows, cols, |i, j| if i < rows { a[(i, j)].re } else { a[(i - rows, j)].im });
    let br = DVector::from_fn(2 * rows, |i, _| if i < rows { b[i].re } else { b[i - rows].im });
    let svd = ar.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => return Err(Error::Solver("singular value decomposition failed".into())),
    };
    let s = svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smax > 0.0) {
        return Err(Error::Conditioning("design matrix vanishes".into()));
    }
    let bnorm = br.norm();
    let alpha = match ridge {
        Ridge::Fixed(r) => {
            if !(r >= 0.0) {
                return Err(Error::Config("ridge weight must be nonnegative".into()));
            }
            r * smax * smax
        }
        Ridge::LCurve => {
            if bnorm == 0.0 {
                1e-8 * smax * smax
            } else {
                let grid: Vec<f64> = (0..57).map(|i| 10f64.powf(-14.0 + 0.25 * i as f64) * smax * smax).collect();
                let pts: Vec<(f64, f64)> = grid
                    .iter()
                    .map(|&al| {
                        let x = filtered(&u, &s, &vt, &br, al);
                        let r = (&ar * &x - &br).norm().max(1e-13 * bnorm);
                        (r.ln(), x.norm().max(1e-300).ln())
                    })
                    .collect();
                let c = corner(&pts);
                // exact data give no vertical branch: the only knee is where
                // the ridge starts shrinking the solution, so back off to the
                // largest weight that still leaves ‖x‖ unchanged
                let eta0 = pts[0].1;
                if eta0 - pts[c / 2].1 < 0.01 {
                    let stable = pts.iter().rposition(|p| (p.1 - eta0).abs() < 1e-3).unwrap_or(0);
                    grid[stable.min(c)]
                } else {
                    grid[c]
                }
            }
        }
    };
    let x = filtered(&u, &s, &vt, &br, alpha);
    let residual = if bnorm > 0.0 { (&ar * &x - &br).norm() / bnorm } else { 0.0 };
    let pinv_norm = s.iter().map(|&si| si / (si * si + alpha)).fold(0.0, f64::max);
    // consistency of the data with a real coefficient: unconstrained
    // complex fit, regularized only against exact singularity
    let ah = a.adjoint();
    let normal = &ah * a + DMatrix::<Complex64>::identity(cols, cols) * Complex64::new(1e-12 * smax * smax, 0.0);
    let imag_residue = match normal.cholesky() {
        Some(ch) => {
            let c = ch.solve(&(&ah * b));
            let re: f64 = c.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
            let im: f64 = c.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
            if re > 0.0 {
                im / re
            } else {
                0.0
            }
        }
        None => f64::NAN,
    };
    Ok(Fit {
        coeffs: x.iter().copied().collect(),
        alpha,
        residual,
        imag_residue,
        pinv_norm,
        condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
    })
}

/// Per-node weights `W_j(x) = Σ_{n<N} dt w(x) a^n(x) p_j^n(x)`.
fn identity_weights(grid: &Grid, a: &Field, tests: &[TestPair<Complex64>], mask: &[bool]) -> Vec<Vec<Complex64>> {
    let sp = grid.inner();
    let w = sp.weights();
    let nodes = sp.interior_nodes();
    let (nt, dt) = (grid.nt(), grid.dt());
    tests
        .iter()
        .map(|t| {
            let mut out = vec![Complex64::new(0.0, 0.0); sp.len()];
            for n in 0..nt - 1 {
                let (al, pl) = (a.level(n), t.p.level(n));
                for &k in &nodes {
                    if !mask[k] {
                        out[k] += pl[k] * (dt * w[k] * al[k]);
                    }
                }
            }
            out
        })
        .collect()
}

struct Problem<'a> {
    grid: &'a Grid,
    basis: Vec<Vec<f64>>,
    samples: DVector<Complex64>,
    opts: &'a ReconstructionOptions,
}

impl Problem<'_> {
    fn design(&self, weights: &[Vec<Complex64>]) -> DMatrix<Complex64> {
        DMatrix::from_fn(weights.len(), self.basis.len(), |j, c| {
            self.basis[c].iter().zip(&weights[j]).map(|(phi, w)| w * phi).sum()
        })
    }

    fn floor(&self, fit: &Fit) -> f64 {
        let sp = self.grid.inner();
        let phi = self.basis.iter().map(|b| sp.l2_norm(b)).fold(0.0, f64::max);
        let rows = 2.0 * self.samples.len() as f64;
        let noise = self.opts.noise_level * rows.sqrt() + 64.0 * f64::EPSILON * self.samples.norm();
        fit.pinv_norm * noise * phi * (self.basis.len() as f64).sqrt()
    }

    fn solve(&self, weights: &[Vec<Complex64>]) -> Result<(Vec<f64>, Fit)> {
        let fit = ridge_fit(&self.design(weights), &self.samples, self.opts.ridge)?;
        Ok((expand(&self.basis, &fit.coeffs), fit))
    }
}

fn sample_rows(plan: &ProbePlan, b: &DVector<Complex64>) -> Vec<SampleRow> {
    plan.frequencies
        .iter()
        .zip(b.iter())
        .map(|(k, v)| SampleRow { k: *k, re: v.re, im: v.im })
        .collect()
}

fn check_plan(plan: &ProbePlan, basis: usize) -> Option<String> {
    if 2 * plan.frequencies.len() < basis {
        Some(format!(
            "{} complex samples for {basis} real unknowns: the fit relies on the ridge",
            plan.frequencies.len()
        ))
    } else {
        None
    }
}

/// Order-1 reconstruction from the first measurement derivative
/// difference along `direction`.
pub fn reconstruct_order1(
    grid: &Grid,
    f_ref: &RunningCost,
    g: &TerminalCost,
    direction: &[f64],
    diff: &MeasurementData,
    plan: &ProbePlan,
    opts: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    diff.check_shape(grid)?;
    if plan.frequencies.is_empty() {
        return Err(Error::Config("empty probe plan".into()));
    }
    let mut prov = Provenance::default();
    prov.record("grid", &grid.spec().inner.iter().flatten().copied().collect::<Vec<_>>());
    prov.record("reference F^(1)", f_ref.coeff(1).unwrap_or(&[]));
    prov.record("direction", direction);
    prov.inputs.push(("measurement difference".into(), hash_measurement(diff)));
    let f1_ref = grid.restrict(f_ref.coeff(1).unwrap_or(&[]));
    let tests = plan.tests(grid, &f1_ref, opts.parallelism)?;
    let b: Vec<Complex64> = tests
        .iter()
        .map(|t| boundary_functional(grid, &f1_ref, diff, t))
        .collect::<Result<_>>()?;
    let problem = Problem {
        grid,
        basis: sine_band(grid, opts.modes),
        samples: DVector::from_vec(b),
        opts,
    };
    let mask = vec![false; grid.inner().len()];
    let mut estimate = vec![0.0; grid.inner().len()];
    let mut born_history = Vec::new();
    let mut warning = check_plan(plan, problem.basis.len());
    let mut last = None;
    for it in 0..=opts.born_iterations {
        let f_est = match f_ref.with_added(1, &grid.extend_zero(&estimate)) {
            Ok(f) => f,
            Err(_) => {
                warning = Some("estimate violates the lower bound on F^(1); Born updates stopped".into());
                break;
            }
        };
        let lin = solve_linearized1(grid, &f_est, g, direction, &LateralBc::NeumannOnOuter)?;
        let m1 = grid.restrict_field(&lin.m);
        let weights = identity_weights(grid, &m1, &tests, &mask);
        let (next, fit) = problem.solve(&weights)?;
        let change: Vec<f64> = next.iter().zip(&estimate).map(|(a, b)| a - b).collect();
        let sp = grid.inner();
        let rel = sp.l2_norm(&change) / sp.l2_norm(&next).max(f64::MIN_POSITIVE);
        born_history.push(rel);
        estimate = next;
        last = Some(fit);
        if rel < 1e-8 || it == opts.born_iterations {
            break;
        }
    }
    let fit = last.ok_or_else(|| Error::Solver("no fit was computed".into()))?;
    let floor = problem.floor(&fit);
    let absolute = f1_ref.iter().zip(&estimate).map(|(a, b)| a + b).collect();
    Ok(ReconstructionResult {
        order: 1,
        recovered: estimate,
        absolute,
        band: band_radius(grid, opts.modes),
        modes: opts.modes,
        ridge_weight: fit.alpha,
        residual: fit.residual,
        imag_residue: fit.imag_residue,
        floor,
        condition: fit.condition,
        warning,
        mask,
        masked_fraction: 0.0,
        born_history,
        samples: sample_rows(plan, &problem.samples),
        provenance: prov,
        error: None,
    })
}

/// Order-`k` reconstruction (`2 ≤ k ≤ 4`) from the `k`-th measurement
/// derivative difference along `direction`. `f_ref` must already carry
/// the recovered orders below `k`, so that both sides share them.
pub fn reconstruct_order_k(
    grid: &Grid,
    k: usize,
    f_ref: &RunningCost,
    g: &TerminalCost,
    direction: &[f64],
    diff: &MeasurementData,
    plan: &ProbePlan,
    opts: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    if !(2..=4).contains(&k) {
        return Err(Error::Capability(format!("order {k} reconstruction needs 2 ≤ k ≤ 4")));
    }
    diff.check_shape(grid)?;
    if plan.frequencies.is_empty() {
        return Err(Error::Config("empty probe plan".into()));
    }
    let mut prov = Provenance::default();
    prov.record("grid", &grid.spec().inner.iter().flatten().copied().collect::<Vec<_>>());
    for j in 1..=f_ref.order() {
        prov.record(&format!("reference F^({j})"), f_ref.coeff(j).unwrap_or(&[]));
    }
    prov.record("direction", direction);
    prov.inputs.push((format!("order-{k} measurement difference"), hash_measurement(diff)));
    let sp = grid.inner();
    let f1_ref = grid.restrict(f_ref.coeff(1).unwrap_or(&[]));
    let lin = solve_linearized1(grid, f_ref, g, direction, &LateralBc::NeumannOnOuter)?;
    let m1 = grid.restrict_field(&lin.m);
    let weight = m1.map(|v| v.powi(k as i32));
    // time-averaged weight decides the mask
    let nt = grid.nt();
    let avg: Vec<f64> = (0..sp.len())
        .map(|x| (0..nt - 1).map(|n| weight.level(n)[x].abs()).sum::<f64>() / (nt - 1) as f64)
        .collect();
    let interior = sp.interior_nodes();
    let top = interior.iter().map(|&x| avg[x]).fold(0.0, f64::max);
    let mut mask = vec![false; sp.len()];
    for &x in &interior {
        mask[x] = avg[x] < opts.weight_floor * top;
    }
    let masked_fraction = interior.iter().filter(|&&x| mask[x]).count() as f64 / interior.len() as f64;
    if masked_fraction > opts.max_masked {
        return Err(Error::Conditioning(format!(
            "order-{k} weight is below the floor on {:.0}% of Ω; choose a direction with positive values on Ω",
            100.0 * masked_fraction
        )));
    }
    let tests = plan.tests(grid, &f1_ref, opts.parallelism)?;
    let b: Vec<Complex64> = tests
        .iter()
        .map(|t| boundary_functional(grid, &f1_ref, diff, t))
        .collect::<Result<_>>()?;
    let problem = Problem {
        grid,
        basis: sine_band(grid, opts.modes),
        samples: DVector::from_vec(b),
        opts,
    };
    let weights = identity_weights(grid, &weight, &tests, &mask);
    let (estimate, fit) = problem.solve(&weights)?;
    let floor = problem.floor(&fit);
    let zero = vec![0.0; grid.outer().len()];
    let fk_ref = grid.restrict(f_ref.coeff(k).unwrap_or(&zero));
    let absolute = fk_ref.iter().zip(&estimate).map(|(a, b)| a + b).collect();
    Ok(ReconstructionResult {
        order: k,
        recovered: estimate,
        absolute,
        band: band_radius(grid, opts.modes),
        modes: opts.modes,
        ridge_weight: fit.alpha,
        residual: fit.residual,
        imag_residue: fit.imag_residue,
        floor,
        condition: fit.condition,
        warning: check_plan(plan, problem.basis.len()),
        mask,
        masked_fraction,
        born_history: Vec::new(),
        samples: sample_rows(plan, &problem.samples),
        provenance: prov,
        error: None,
    })
}

/// Identity value against a probe pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySample {
    pub value: Complex64,
    /// `(k, τ-sum)` when both inputs are CGO-generated with matched `ξ`.
    pub frequency: Option<([f64; 2], f64)>,
    pub lambda: f64,
}

/// Real and imaginary parts of the mean-free initial direction
/// `e^{-i(λξ+η)·x}` on Ω′ (effective parameters): the data-side probe.
pub fn runge_direction(grid: &Grid, plus: &CGOParams) -> (Vec<f64>, Vec<f64>) {
    let sp = grid.outer();
    let l = plus.lambda_eff();
    let eta = plus.eta_eff();
    let phase = |x: [f64; 2]| -((l * plus.xi[0] + eta[0]) * x[0] + (l * plus.xi[1] + eta[1]) * x[1]);
    let mean_free = |v: Vec<f64>| crate::costs::PerturbationDirection::mean_free(sp, v).into_values();
    (mean_free(sp.sample(|x| phase(x).cos())), mean_free(sp.sample(|x| phase(x).sin())))
}

/// A (+, −) pair whose `ξ` and `λ` agree, so the `λ`-phases cancel.
pub fn check_probe_pair(plus: &CGOParams, minus: &CGOParams) -> Result<()> {
    if plus.sign != Sign::Plus || minus.sign != Sign::Minus {
        return Err(Error::Probe("probe pair must be (+, −)".into()));
    }
    let dxi = (plus.xi[0] - minus.xi[0]).abs() + (plus.xi[1] - minus.xi[1]).abs();
    if dxi > 1e-12 || plus.lambda_eff() != minus.lambda_eff() {
        return Err(Error::Probe("probe pair has mismatched ξ or λ; the λ-phases would not cancel".into()));
    }
    Ok(())
}

/// Fourier sample of `F_true^(1) − F_ref^(1)` at `k = s(η₊ + η₋)`:
/// the identity value against the (−) probe, divided by the same pairing
/// for `e^{ik·x}` so that it approximates `|Ω|⁻¹ ∫_Ω d e^{-ik·x}`.
/// `diff_re`/`diff_im` are the first-derivative measurement differences
/// along the two parts of [`runge_direction`].
pub fn fourier_sample(
    grid: &Grid,
    f_ref: &RunningCost,
    g: &TerminalCost,
    diff_re: &MeasurementData,
    diff_im: &MeasurementData,
    plus: &CGOParams,
    minus: &CGOParams,
    opts: &crate::cgo::CorrectionOptions,
) -> Result<IdentitySample> {
    check_probe_pair(plus, minus)?;
    plus.validate(grid)?;
    minus.validate(grid)?;
    let f1 = grid.restrict(f_ref.coeff(1).unwrap_or(&[]));
    let probe = crate::cgo::solve_correction(minus, grid, &f1, crate::cgo::TerminalMode::Zero, opts)?;
    let test = cgo_test_pair(&probe, grid)?;
    let i = Complex64::new(0.0, 1.0);
    let value = boundary_functional(grid, &f1, diff_re, &test)? + i * boundary_functional(grid, &f1, diff_im, &test)?;
    let (dre, dim) = runge_direction(grid, plus);
    let mre = grid.restrict_field(&solve_linearized1(grid, f_ref, g, &dre, &LateralBc::NeumannOnOuter)?.m);
    let mim = grid.restrict_field(&solve_linearized1(grid, f_ref, g, &dim, &LateralBc::NeumannOnOuter)?.m);
    let (e1, e2) = (plus.eta_eff(), minus.eta_eff());
    let k = [e1[0] + e2[0], e1[1] + e2[1]];
    let sp = grid.inner();
    let (c, s): (Vec<f64>, Vec<f64>) = sp
        .coords()
        .iter()
        .map(|x| {
            let a = k[0] * x[0] + k[1] * x[1];
            (a.cos(), a.sin())
        })
        .unzip();
    // pairing of e^{ikx} (mre + i mim) with p, split into real coefficient fields
    let q = Quadrature::Scheme;
    let norm = eval_identity(grid, &c, &mre, &test.p, q)? - eval_identity(grid, &s, &mim, &test.p, q)?
        + i * (eval_identity(grid, &s, &mre, &test.p, q)? + eval_identity(grid, &c, &mim, &test.p, q)?);
    if !(norm.norm() > 0.0) {
        return Err(Error::Probe("probe pair has a vanishing normalization".into()));
    }
    let value = value / norm;
    if !value.is_finite() {
        return Err(Error::Probe("non-finite identity sample".into()));
    }
    Ok(IdentitySample {
        value,
        frequency: Some((k, plus.tau_eff() + minus.tau_eff())),
        lambda: plus.lambda,
    })
}

/// Two-point extrapolation of `v(λ) = v∞ + c λ^{-p}`.
pub fn richardson(v1: Complex64, l1: f64, v2: Complex64, l2: f64, p: f64) -> Result<Complex64> {
    let (a, b) = (l1.powf(p), l2.powf(p));
    if !(l1 > 0.0 && l2 > 0.0) || a == b {
        return Err(Error::Config("extrapolation needs two distinct positive λ".into()));
    }
    Ok((v2 * b - v1 * a) / (b - a))
}

/// [`fourier_sample`] at two `λ` with the `λ^{-1/2}` tail removed.
/// `data(λ)` must return the measurement differences for the Runge
/// direction of the (+) probe at that `λ`.
pub fn fourier_sample_extrapolated<D>(
    grid: &Grid,
    f_ref: &RunningCost,
    g: &TerminalCost,
    data: D,
    plus: &CGOParams,
    minus: &CGOParams,
    lambdas: [f64; 2],
    opts: &crate::cgo::CorrectionOptions,
) -> Result<(IdentitySample, [IdentitySample; 2])>
where
    D: Fn(&CGOParams) -> Result<(MeasurementData, MeasurementData)>,
{
    let at = |l: f64| -> Result<IdentitySample> {
        let (mut a, mut b) = (*plus, *minus);
        a.lambda = l;
        b.lambda = l;
        let (re, im) = data(&a)?;
        fourier_sample(grid, f_ref, g, &re, &im, &a, &b, opts)
    };
    let s1 = at(lambdas[0])?;
    let s2 = at(lambdas[1])?;
    let value = richardson(s1.value, lambdas[0], s2.value, lambdas[1], 0.5)?;
    Ok((
        IdentitySample {
            value,
            frequency: s2.frequency,
            lambda: f64::INFINITY,
        },
        [s1, s2],
    ))
}
