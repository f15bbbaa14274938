//! Numerical certificates for the weighted estimates, the a-priori bounds
//! of the linearized systems and their energy identity.
//!
//! The constants involved are not quantified analytically; what can be
//! checked is that the inequalities hold with some constant that stays
//! put across samples and across `λ`.

use crate::costs::{RunningCost, TerminalCost};
use crate::error::{Error, Result};
use crate::exec::{par_map, Parallelism};
use crate::field::Field;
use crate::grid::Grid;
use crate::linearized::{solve_adjoint, solve_linearized1, AdjointDrive, LateralBc};
use crate::ops::{h_minus1_norm, l2_norm_q, laplacian_dirichlet, Sign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub id: String,
    pub samples: usize,
    pub skipped: usize,
    /// Geometric-mean constant over all samples and `λ`.
    pub constant: f64,
    /// Per-`λ` fitted constants (empty for estimates without `λ`).
    pub constants: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Ratios, sample-major then `λ`.
    pub ratios: Vec<f64>,
    /// Declared stability factor (an artifact convention).
    pub threshold: f64,
    /// Observed spread: `max/min` of the per-`λ` constants, or
    /// `max/median` of the ratios.
    pub spread: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

fn geometric_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Random conforming samples `u = Σ c_ab φ_ab(x) P_ab(t)` with Dirichlet
/// sine modes on Ω and `P_ab` vanishing at `T` (the (+) estimate) or at
/// `0` (the (−) estimate).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSpec {
    pub count: usize,
    /// Sine modes per axis.
    pub modes: usize,
    /// Degree of the free polynomial factor.
    pub degree: usize,
    pub seed: u64,
    /// Composite Gauss–Legendre intervals in time.
    pub time_intervals: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            count: 20,
            modes: 3,
            degree: 2,
            seed: 0,
            time_intervals: 512,
        }
    }
}

/// One sample: mode amplitudes and, per mode, the free polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanSample {
    pub amplitude: Vec<f64>,
    pub poly: Vec<Vec<f64>>,
}

impl CarlemanSample {
    /// `u = (T − t) sin(πx̂)` on the first mode.
    pub fn single_mode(modes: usize) -> Self {
        let mut amplitude = vec![0.0; modes * modes];
        amplitude[0] = 1.0;
        CarlemanSample {
            amplitude,
            poly: vec![vec![1.0]; modes * modes],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude.iter().all(|a| *a == 0.0)
    }

    /// Vanishing factor times the free polynomial, and its derivative.
    fn time_factor(&self, j: usize, t: f64, t_final: f64, sign: Sign) -> (f64, f64) {
        let (z, dz) = match sign {
            Sign::Plus => (t_final - t, -1.0),
            Sign::Minus => (t, 1.0),
        };
        let c = &self.poly[j];
        // Horner for q and q'; `powi` rounds differently once inlined
        let (mut q, mut dq) = (0.0, 0.0);
        for ci in c.iter().rev() {
            dq = dq * t + q;
            q = q * t + ci;
        }
        (z * q, dz * q + z * dq)
    }

    /// Sample with `t ↦ T − t` applied to every polynomial.
    pub fn reflected(&self, t_final: f64) -> Self {
        let poly = self
            .poly
            .iter()
            .map(|c| {
                // expand Σ c_i (T − t)^i
                let n = c.len();
                let mut out = vec![0.0; n];
                for (i, ci) in c.iter().enumerate() {
                    for k in 0..=i {
                        let binom = (1..=k).fold(1.0, |b, j| b * (i + 1 - j) as f64 / j as f64);
                        out[k] += ci * binom * t_final.powi((i - k) as i32) * (-1.0f64).powi(k as i32);
                    }
                }
                out
            })
            .collect();
        CarlemanSample {
            amplitude: self.amplitude.clone(),
            poly,
        }
    }
}

pub fn draw_samples(spec: &SamplerSpec) -> Vec<CarlemanSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nm = spec.modes * spec.modes;
    (0..spec.count)
        .map(|_| {
            let amplitude = (0..nm)
                .map(|j| {
                    let (a, b) = (j % spec.modes + 1, j / spec.modes + 1);
                    rng.gen_range(-1.0..1.0) / (a * a + b * b) as f64
                })
                .collect();
            let poly = (0..nm)
                .map(|_| {
                    let mut c: Vec<f64> = (0..=spec.degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    c[0] += 2.0f64.copysign(c[0]);
                    c
                })
                .collect();
            CarlemanSample { amplitude, poly }
        })
        .collect()
}

/// Spatial Gram matrices of the sine modes on Ω, evaluated analytically
/// at the inner nodes and integrated with the grid quadrature.
struct ModeGram {
    n: usize,
    /// `∫ φ_i φ_j`, `∫ φ_i Δφ_j`, `∫ Δφ_i Δφ_j`, `∫_∂Ω ∂_ν φ_i ∂_ν φ_j`.
    mass: Vec<f64>,
    mixed: Vec<f64>,
    lap: Vec<f64>,
    flux: Vec<f64>,
}

impl ModeGram {
    fn new(grid: &Grid, modes: usize) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::Capability("the estimate suites run in two dimensions".into()));
        }
        let sp = grid.inner();
        let (x0, y0) = (sp.axis(0).lo, sp.axis(1).lo);
        let (lx, ly) = (sp.axis(0).len(), sp.axis(1).len());
        let n = modes * modes;
        let ab = |j: usize| ((j % modes + 1) as f64 * PI / lx, (j / modes + 1) as f64 * PI / ly);
        let phi: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let (ka, kb) = ab(j);
                sp.sample(|x| (ka * (x[0] - x0)).sin() * (kb * (x[1] - y0)).sin())
            })
            .collect();
        let dphi: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let (ka, kb) = ab(j);
                phi[j].iter().map(|v| -(ka * ka + kb * kb) * v).collect()
            })
            .collect();
        // outward normal derivative along each edge, 1D trapezoid weights
        let ax = sp.axis(0);
        let ay = sp.axis(1);
        let edge = |j: usize| -> Vec<(f64, f64)> {
            let (ka, kb) = ab(j);
            let mut out = Vec::new();
            for i in 0..ax.n {
                let x = ax.coord(i) - x0;
                let w = ax.weight(i);
                // y = y0 (normal −y) and y = y0 + ly (normal +y)
                out.push((w, -(ka * x).sin() * kb));
                out.push((w, (ka * x).sin() * kb * (kb * ly).cos()));
            }
            for i in 0..ay.n {
                let y = ay.coord(i) - y0;
                let w = ay.weight(i);
                out.push((w, -ka * (kb * y).sin()));
                out.push((w, ka * (ka * lx).cos() * (kb * y).sin()));
            }
            out
        };
        let edges: Vec<Vec<(f64, f64)>> = (0..n).map(edge).collect();
        let mut g = ModeGram {
            n,
            mass: vec![0.0; n * n],
            mixed: vec![0.0; n * n],
            lap: vec![0.0; n * n],
            flux: vec![0.0; n * n],
        };
        for i in 0..n {
            for j in 0..n {
                g.mass[i * n + j] = sp.pair(&phi[i], &phi[j]);
                g.mixed[i * n + j] = sp.pair(&phi[i], &dphi[j]);
                g.lap[i * n + j] = sp.pair(&dphi[i], &dphi[j]);
                g.flux[i * n + j] = edges[i].iter().zip(&edges[j]).map(|(a, b)| a.0 * a.1 * b.1).sum();
            }
        }
        Ok(g)
    }

    fn form(&self, m: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += a[i] * m[i * self.n + j] * b[j];
            }
        }
        s
    }
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Both sides of the weighted estimate for one sample, each divided by
/// the largest weight `e^{2λ²T}` (so no exponential exceeds 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanSides {
    pub lhs: f64,
    pub rhs: f64,
    pub rhs_terms: [f64; 3],
}

pub fn carleman_sides(grid: &Grid, sample: &CarlemanSample, lambda: f64, sign: Sign, intervals: usize) -> Result<CarlemanSides> {
    let nm = sample.amplitude.len();
    let modes = (nm as f64).sqrt().round() as usize;
    if modes * modes != nm || sample.poly.len() != nm {
        return Err(Error::Config("sample does not span a square mode set".into()));
    }
    let gram = ModeGram::new(grid, modes)?;
    Ok(sides_with(&gram, grid.t_final(), sample, lambda, sign, intervals))
}

fn sides_with(gram: &ModeGram, t_final: f64, sample: &CarlemanSample, lambda: f64, sign: Sign, intervals: usize) -> CarlemanSides {
    let nm = gram.n;
    let l2 = lambda * lambda;
    let h = t_final / intervals as f64;
    let (mut lhs, mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0);
    let mut a = vec![0.0; nm];
    let mut b = vec![0.0; nm];
    for iv in 0..intervals {
        let mid = (iv as f64 + 0.5) * h;
        for (xg, wg) in GAUSS4 {
            let t = mid + 0.5 * h * xg;
            // e^{±2λ²t} / max over [0, T]
            let w = 0.5 * h * wg * match sign {
                Sign::Plus => (2.0 * l2 * (t - t_final)).exp(),
                Sign::Minus => (-2.0 * l2 * t).exp(),
            };
            for j in 0..nm {
                let (p, dp) = sample.time_factor(j, t, t_final, sign);
                a[j] = sample.amplitude[j] * p;
                b[j] = sample.amplitude[j] * dp;
            }
            // (∓u_t − Δu)² = u_t² ± 2 u_t Δu + (Δu)²
            let s = match sign {
                Sign::Plus => 1.0,
                Sign::Minus => -1.0,
            };
            let integrand = gram.form(&gram.mass, &b, &b) + 2.0 * s * gram.form(&gram.mixed, &b, &a) + gram.form(&gram.lap, &a, &a);
            lhs += w * integrand;
            t0 += w * l2 * l2 * gram.form(&gram.mass, &a, &a);
            t1 += w * gram.form(&gram.lap, &a, &a);
            t2 += w * l2 * gram.form(&gram.flux, &a, &a);
        }
    }
    CarlemanSides {
        lhs,
        rhs: t0 + t1 + t2,
        rhs_terms: [t0, t1, t2],
    }
}

/// Ratio suite for the (+) or (−) weighted estimate over `λ`.
pub fn check_carleman(grid: &Grid, samples: &[CarlemanSample], lambdas: &[f64], sign: Sign, spec: &SamplerSpec, mode: Parallelism) -> Result<EstimateReport> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Config("λ schedule must be nonempty and positive".into()));
    }
    let modes = samples.first().map_or(spec.modes, |s| (s.amplitude.len() as f64).sqrt().round() as usize);
    let gram = ModeGram::new(grid, modes)?;
    let t_final = grid.t_final();
    let mut notes = Vec::new();
    let live: Vec<&CarlemanSample> = samples.iter().filter(|s| !s.is_zero()).collect();
    let skipped = samples.len() - live.len();
    if skipped > 0 {
        notes.push(format!("{skipped} zero samples skipped"));
    }
    if sign == Sign::Minus {
        notes.push("hypotheses mirrored: u(·,0) = 0 and zero lateral data".into());
    }
    let gram = &gram;
    let rows: Vec<Vec<f64>> = par_map(mode, live, |s| {
        lambdas
            .iter()
            .map(|&l| {
                let c = sides_with(gram, t_final, s, l, sign, spec.time_intervals);
                c.lhs / c.rhs
            })
            .collect()
    });
    let ratios: Vec<f64> = rows.iter().flatten().copied().collect();
    let positive = ratios.iter().all(|r| r.is_finite() && *r > 0.0);
    let constants: Vec<f64> = (0..lambdas.len())
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).filter(|r| *r > 0.0).collect();
            geometric_mean(&col)
        })
        .collect();
    let cmax = constants.iter().cloned().fold(f64::MIN, f64::max);
    let cmin = constants.iter().cloned().fold(f64::MAX, f64::min);
    let spread = cmax / cmin;
    let threshold = 3.0;
    Ok(EstimateReport {
        id: match sign {
            Sign::Plus => "carleman_plus".into(),
            Sign::Minus => "carleman_minus".into(),
        },
        samples: rows.len(),
        skipped,
        constant: geometric_mean(&ratios.iter().copied().filter(|r| *r > 0.0).collect::<Vec<_>>()),
        constants,
        lambdas: lambdas.to_vec(),
        ratios,
        threshold,
        spread,
        pass: positive && !rows.is_empty() && spread <= threshold,
        notes,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    crate::cgo::loglog_slope(x, y)
}

/// Log-log slopes in `λ` of the two sides (unnormalized by the common
/// weight) for one sample.
pub fn carleman_slopes(grid: &Grid, sample: &CarlemanSample, lambdas: &[f64], sign: Sign, intervals: usize) -> Result<(f64, f64)> {
    let mut l = Vec::new();
    let mut r = Vec::new();
    for &lam in lambdas {
        let s = carleman_sides(grid, sample, lam, sign, intervals)?;
        l.push(s.lhs);
        r.push(s.rhs);
    }
    Ok((loglog_slope(lambdas, &l), loglog_slope(lambdas, &r)))
}

/// Random band-limited spatial fields on Ω vanishing on ∂Ω.
pub fn band_limited_fields(grid: &Grid, count: usize, modes: usize, seed: u64) -> Vec<Vec<f64>> {
    let sp = grid.inner();
    let (x0, y0) = (sp.axis(0).lo, sp.axis(1).lo);
    let (lx, ly) = (sp.axis(0).len(), sp.axis(1).len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c: Vec<f64> = (0..modes * modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
            sp.sample(|x| {
                let mut s = 0.0;
                for j in 0..modes * modes {
                    let (a, b) = ((j % modes + 1) as f64, (j / modes + 1) as f64);
                    s += c[j] / (a * a + b * b) * (a * PI * (x[0] - x0) / lx).sin() * (b * PI * (x[1] - y0) / ly).sin();
                }
                s
            })
        })
        .collect()
}

fn spread_report(id: &str, ratios: Vec<f64>, skipped: usize, notes: Vec<String>) -> EstimateReport {
    let ok: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite() && *r > 0.0).collect();
    let med = median(&ok);
    let mx = ok.iter().cloned().fold(0.0, f64::max);
    let spread = mx / med;
    let threshold = 5.0;
    EstimateReport {
        id: id.into(),
        samples: ratios.len(),
        skipped,
        constant: mx,
        constants: Vec::new(),
        lambdas: Vec::new(),
        pass: !ok.is_empty() && ok.len() == ratios.len() && spread <= threshold,
        ratios,
        threshold,
        spread,
        notes,
    }
}

/// `‖m‖_{L²(Q)} / ‖m(0)‖_{H⁻¹(Ω)}` for the zero-lateral-data linearized
/// system with `m(0) = f` (fields on Ω).
pub fn check_apriori_forward(grid: &Grid, f: &RunningCost, g: &TerminalCost, samples: &[Vec<f64>], mode: Parallelism) -> Result<EstimateReport> {
    let sp = grid.inner();
    let live: Vec<&Vec<f64>> = samples.iter().filter(|s| s.iter().any(|v| *v != 0.0)).collect();
    let skipped = samples.len() - live.len();
    let out: Vec<Result<f64>> = par_map(mode, live, |s| {
        let lin = solve_linearized1(grid, f, g, s, &LateralBc::DirichletZeroOnInner)?;
        Ok(l2_norm_q(grid, &lin.m) / h_minus1_norm(sp, s)?)
    });
    let ratios = out.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(spread_report("apriori_forward", ratios, skipped, Vec::new()))
}

/// `‖ρ‖_{L²(Q)} / ‖ρ(T)‖_{H⁻¹(Ω)}` for the adjoint system.
pub fn check_apriori_adjoint(grid: &Grid, f1_inner: &[f64], samples: &[Vec<f64>], mode: Parallelism) -> Result<EstimateReport> {
    let sp = grid.inner();
    let live: Vec<&Vec<f64>> = samples.iter().filter(|s| s.iter().any(|v| *v != 0.0)).collect();
    let skipped = samples.len() - live.len();
    let out: Vec<Result<f64>> = par_map(mode, live, |s| {
        let pair = solve_adjoint(grid, f1_inner, &AdjointDrive::Terminal(s.clone()))?;
        Ok(l2_norm_q(grid, &pair.rho) / h_minus1_norm(sp, s)?)
    });
    let ratios = out.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(spread_report("apriori_adjoint", ratios, skipped, Vec::new()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `∫u(T)m(T) − ∫u(0)m(0)`.
    pub lhs: f64,
    /// `−∫_Q F m² − ∫_Q |∇u|²`.
    pub rhs: f64,
    pub defect: f64,
    /// `∫_Q F m² + ∫ u(T)m(T) ≤ ∫ u(0)m(0)` up to the defect.
    pub sign_ok: bool,
}

/// Time-integrated energy identity of a zero-lateral-data pair on Q;
/// `f1` is `F^(1)` on Ω. `|∇u|²` is the discrete Dirichlet form of the
/// scheme's Laplacian, so the defect is purely temporal.
pub fn check_energy_identity(grid: &Grid, f1: &[f64], u: &Field, m: &Field) -> Result<EnergyReport> {
    let sp = grid.inner();
    let nt = grid.nt();
    if u.nodes() != sp.len() || m.nodes() != sp.len() || u.levels() != nt || m.levels() != nt || f1.len() != sp.len() {
        return Err(Error::Domain("energy identity needs fields on Q".into()));
    }
    let lhs = sp.pair(u.level(nt - 1), m.level(nt - 1)) - sp.pair(u.level(0), m.level(0));
    let tw = grid.time_weights();
    let (mut fm2, mut grad) = (0.0, 0.0);
    for n in 0..nt {
        let ml = m.level(n);
        let fm: Vec<f64> = ml.iter().zip(f1).map(|(a, b)| a * b).collect();
        fm2 += tw[n] * sp.pair(&fm, ml);
        let lap = laplacian_dirichlet(sp, u.level(n));
        let mut interior = u.level(n).to_vec();
        for k in sp.boundary_nodes() {
            interior[k] = 0.0;
        }
        grad -= tw[n] * sp.pair(&lap, &interior);
    }
    let rhs = -fm2 - grad;
    let defect = lhs - rhs;
    let start = sp.pair(u.level(0), m.level(0));
    let end = sp.pair(u.level(nt - 1), m.level(nt - 1));
    Ok(EnergyReport {
        lhs,
        rhs,
        defect,
        sign_ok: fm2 + end <= start + defect.abs(),
    })
}
