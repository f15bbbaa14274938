//! Running costs `F(x,z) = Σ_k F^(k)(x) (z-1)^k / k!` and the convolutional
//! terminal cost `G(m) = S[ψ(S m)]`, where `S` is a separable smoothing
//! with a compact even kernel, reflected at the walls of Ω′.

use crate::error::{Error, Result};
use crate::grid::{Grid, SpaceGrid};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Truncated Taylor series of the running cost around `z = 1`, stored on
/// the outer grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningCost {
    coeffs: Vec<Vec<f64>>,
    a1: f64,
    tag: Option<String>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl RunningCost {
    /// `coeffs[k-1]` is `F^(k)`; requires `F^(1) > a1 > 0` everywhere.
    pub fn new(coeffs: Vec<Vec<f64>>, a1: f64, tag: Option<String>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Config("running cost needs at least F^(1)".into()));
        }
        let n = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != n) {
            return Err(Error::Config("coefficient fields differ in size".into()));
        }
        if !(a1 > 0.0) {
            return Err(Error::Config(format!("a1 = {a1} must be positive")));
        }
        let min = coeffs[0].iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > a1) {
            return Err(Error::Config(format!(
                "min F^(1) = {min} does not exceed a1 = {a1}"
            )));
        }
        if coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite cost coefficient".into()));
        }
        Ok(RunningCost { coeffs, a1, tag })
    }

    /// `c (z - 1)`.
    pub fn linear(nodes: usize, c: f64) -> Result<Self> {
        RunningCost::new(vec![vec![c; nodes]], 0.5 * c, Some(format!("{c}*(z-1)")))
    }

    /// `e^{z-1} - 1` truncated at order `k`.
    pub fn exp_shifted(nodes: usize, k: usize) -> Result<Self> {
        RunningCost::new(vec![vec![1.0; nodes]; k.max(1)], 0.5, Some("e^(z-1)-1".into()))
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn nodes(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    /// `F^(k)` for `k >= 1`, or `None` beyond the truncation order.
    pub fn coeff(&self, k: usize) -> Option<&[f64]> {
        if k == 0 {
            None
        } else {
            self.coeffs.get(k - 1).map(Vec::as_slice)
        }
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    /// Pointwise series evaluation; exactly zero at `m = 1`.
    pub fn eval(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        self.eval_into(m, &mut out);
        out
    }

    pub fn eval_into(&self, m: &[f64], out: &mut [f64]) {
        for (i, (&mi, o)) in m.iter().zip(out.iter_mut()).enumerate() {
            let z = mi - 1.0;
            let mut p = 1.0;
            let mut s = 0.0;
            for (k, c) in self.coeffs.iter().enumerate() {
                p *= z;
                s += c[i] * p / factorial(k + 1);
            }
            *o = s;
        }
    }

    /// Restriction of every coefficient to Ω.
    pub fn restricted(&self, grid: &Grid) -> Vec<Vec<f64>> {
        self.coeffs.iter().map(|c| grid.restrict(c)).collect()
    }

    /// Copy with `delta` added to `F^(k)`, padding missing orders with zero.
    pub fn with_added(&self, k: usize, delta: &[f64]) -> Result<Self> {
        if k == 0 || delta.len() != self.nodes() {
            return Err(Error::Config("invalid coefficient update".into()));
        }
        let mut coeffs = self.coeffs.clone();
        while coeffs.len() < k {
            coeffs.push(vec![0.0; self.nodes()]);
        }
        for (c, d) in coeffs[k - 1].iter_mut().zip(delta) {
            *c += d;
        }
        RunningCost::new(coeffs, self.a1, None)
    }
}

/// Registered nonlinearities `ψ(s)` of the terminal cost; all are
/// nondecreasing in `s` and independent of `z`, so `G(·,1)` is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Psi {
    /// `ψ(s) = s`
    Linear,
    /// `ψ(s) = s + a (s-1)^3`, `a >= 0`
    Cubic { a: f64 },
    /// `ψ(s) = 1 + (e^{a(s-1)} - 1) / a`, `a > 0`
    Exp { a: f64 },
}

impl Psi {
    /// `[ψ, ψ', ψ'', ψ''', ψ'''']` at `s`.
    pub fn derivatives(&self, s: f64) -> [f64; 5] {
        match *self {
            Psi::Linear => [s, 1.0, 0.0, 0.0, 0.0],
            Psi::Cubic { a } => {
                let d = s - 1.0;
                [s + a * d * d * d, 1.0 + 3.0 * a * d * d, 6.0 * a * d, 6.0 * a, 0.0]
            }
            Psi::Exp { a } => {
                let e = (a * (s - 1.0)).exp();
                [1.0 + (e - 1.0) / a, e, a * e, a * a * e, a * a * a * e]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Psi::Cubic { a } if !(a >= 0.0) => Err(Error::Config("cubic ψ needs a >= 0".into())),
            Psi::Exp { a } if !(a > 0.0) => Err(Error::Config("exponential ψ needs a > 0".into())),
            _ => {
                for i in 0..=60 {
                    let s = i as f64 * 0.05;
                    if self.derivatives(s)[1] < 0.0 {
                        return Err(Error::Config(format!("∂sψ < 0 at s = {s}")));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalCostSpec {
    /// Kernel radius in units of length.
    pub radius: f64,
    pub psi: Psi,
}

impl Default for TerminalCostSpec {
    fn default() -> Self {
        TerminalCostSpec {
            radius: 0.125,
            psi: Psi::Linear,
        }
    }
}

/// Bump `exp(-1 / (1 - (d/r)²))` on `|d| < r`.
pub fn bump(d: f64, r: f64) -> f64 {
    let q = d / r;
    if q.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - q * q)).exp()
    }
}

/// Dense folded 1D smoothing matrix for one axis.
fn folded_kernel(axis: &crate::grid::Axis, r: f64) -> Vec<f64> {
    let n = axis.n;
    let dx = axis.dx();
    let period = 2 * (n - 1) as i64;
    let reach = (r / dx).ceil() as i64 + 1;
    let norm: f64 = (-reach..=reach).map(|k| bump(k as f64 * dx, r) * dx).sum();
    let mut m = vec![0.0; n * n];
    for i in 0..n as i64 {
        for q in i - reach..=i + reach {
            let w = bump((i - q) as f64 * dx, r) * dx / norm;
            if w == 0.0 {
                continue;
            }
            let mut p = q.rem_euclid(period);
            if p > (n - 1) as i64 {
                p = period - p;
            }
            m[i as usize * n + p as usize] += w;
        }
    }
    m
}

/// Convolutional terminal cost on the outer grid.
#[derive(Clone, Debug)]
pub struct TerminalCost {
    spec: TerminalCostSpec,
    space: SpaceGrid,
    kernels: Vec<Vec<f64>>,
    b: f64,
}

impl TerminalCost {
    pub fn new(space: &SpaceGrid, spec: TerminalCostSpec) -> Result<Self> {
        spec.psi.validate()?;
        for a in space.axes() {
            if !(spec.radius > 0.0) || spec.radius >= 0.5 * a.len() {
                return Err(Error::Config(format!(
                    "kernel radius {} leaks outside Ω′ (axis length {})",
                    spec.radius,
                    a.len()
                )));
            }
            if spec.radius < 2.0 * a.dx() {
                return Err(Error::Config(format!(
                    "kernel radius {} is under-resolved (dx = {})",
                    spec.radius,
                    a.dx()
                )));
            }
        }
        let kernels = space.axes().iter().map(|a| folded_kernel(a, spec.radius)).collect();
        let b = spec.psi.derivatives(1.0)[0];
        Ok(TerminalCost {
            spec,
            space: space.clone(),
            kernels,
            b,
        })
    }

    pub fn spec(&self) -> &TerminalCostSpec {
        &self.spec
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    /// The constant `G(·, 1)`.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Stored bound `C` with `‖δG h‖ ≤ C ‖h‖` in the trapezoid `L²`.
    pub fn delta_bound(&self) -> f64 {
        self.spec.psi.derivatives(1.0)[1].abs()
    }

    /// The smoothing `S h`.
    pub fn smooth<T: Scalar>(&self, h: &[T]) -> Vec<T> {
        let g = &self.space;
        let nx = g.nx();
        let kx = &self.kernels[0];
        let mut tmp = vec![T::zero(); g.len()];
        for j in 0..g.ny() {
            for i in 0..nx {
                let row = &kx[i * nx..(i + 1) * nx];
                let mut s = T::zero();
                for (p, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        s += h[p + nx * j] * w;
                    }
                }
                tmp[i + nx * j] = s;
            }
        }
        if g.dim() == 1 {
            return tmp;
        }
        let ny = g.ny();
        let ky = &self.kernels[1];
        let mut out = vec![T::zero(); g.len()];
        for j in 0..ny {
            let row = &ky[j * ny..(j + 1) * ny];
            for i in 0..nx {
                let mut s = T::zero();
                for (p, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        s += tmp[i + nx * p] * w;
                    }
                }
                out[i + nx * j] = s;
            }
        }
        out
    }

    /// `G(m_T) = S[ψ(S m_T)]`.
    pub fn eval(&self, m_t: &[f64]) -> Vec<f64> {
        let s = self.smooth(m_t);
        let p: Vec<f64> = s.iter().map(|&v| self.spec.psi.derivatives(v)[0]).collect();
        self.smooth(&p)
    }

    /// `j`-th variation at `m ≡ 1` applied to `hs` (`j = hs.len()`, at most 4):
    /// `S[ψ^(j)(1) Π S h_i]`.
    pub fn variation<T: Scalar>(&self, hs: &[&[T]]) -> Vec<T> {
        let j = hs.len();
        assert!((1..=4).contains(&j), "variation order {j} not supported");
        let c = self.spec.psi.derivatives(1.0)[j];
        if c == 0.0 {
            return vec![T::zero(); self.space.len()];
        }
        let mut prod = vec![T::from_re(c); self.space.len()];
        for h in hs {
            let sh = self.smooth(h);
            for (p, v) in prod.iter_mut().zip(sh) {
                *p = *p * v;
            }
        }
        self.smooth(&prod)
    }

    pub fn delta<T: Scalar>(&self, h: &[T]) -> Vec<T> {
        self.variation(&[h])
    }

    pub fn delta2<T: Scalar>(&self, h1: &[T], h2: &[T]) -> Vec<T> {
        self.variation(&[h1, h2])
    }

    /// `δG` applied to a field on Ω: zero-extend, apply, restrict.
    pub fn delta_inner<T: Scalar>(&self, grid: &Grid, h: &[T]) -> Vec<T> {
        grid.restrict(&self.delta(&grid.extend_zero(h)))
    }

    /// The kernel as a field on Ω′ centred at the box centre (unit integral
    /// up to quadrature).
    pub fn kernel_field(&self) -> Vec<f64> {
        let g = &self.space;
        let c: Vec<f64> = g.axes().iter().map(|a| 0.5 * (a.lo + a.hi)).collect();
        let r = self.spec.radius;
        let norms: Vec<f64> = g
            .axes()
            .iter()
            .map(|a| {
                let reach = (r / a.dx()).ceil() as i64 + 1;
                (-reach..=reach).map(|k| bump(k as f64 * a.dx(), r) * a.dx()).sum()
            })
            .collect();
        g.sample(|x| {
            (0..g.dim())
                .map(|a| bump(x[a] - c[a], r) / norms[a])
                .product()
        })
    }
}

/// Mean-free initial-density direction `f_l` on Ω′.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationDirection {
    values: Vec<f64>,
}

impl PerturbationDirection {
    pub fn new(space: &SpaceGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::Domain("direction does not match grid".into()));
        }
        let mean = space.integral(&values);
        if mean.abs() > 1e-12 {
            return Err(Error::Config(format!("direction has mean {mean:e}")));
        }
        Ok(PerturbationDirection { values })
    }

    /// Subtract the mean before validating.
    pub fn mean_free(space: &SpaceGrid, mut values: Vec<f64>) -> Self {
        let mean = space.integral(&values) / space.volume();
        values.iter_mut().for_each(|v| *v -= mean);
        PerturbationDirection { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Closed-form perturbation directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionSpec {
    /// `amp Π cos(k_a π x_a)` over Ω′ (mean free when some `k_a > 0`).
    Cosine { k: Vec<usize>, amp: f64 },
    /// Bump of the given radius centred at `center`, minus its mean.
    Bump { center: Vec<f64>, radius: f64, amp: f64 },
    /// Plateau that is at least `floor` on Ω and mean free on Ω′: a broad
    /// bump covering Ω, rescaled, minus its mean.
    Positive { floor: f64 },
}

impl DirectionSpec {
    pub fn build(&self, grid: &Grid) -> Result<PerturbationDirection> {
        let g = grid.outer();
        let vals = match self {
            DirectionSpec::Cosine { k, amp } => {
                if k.len() != g.dim() || k.iter().all(|&v| v == 0) {
                    return Err(Error::Config("cosine direction needs a nonzero mode per axis list".into()));
                }
                g.sample(|x| {
                    let lens: Vec<f64> = g.axes().iter().map(|a| a.len()).collect();
                    amp * (0..g.dim())
                        .map(|a| (k[a] as f64 * PI * (x[a] - g.axis(a).lo) / lens[a]).cos())
                        .product::<f64>()
                })
            }
            DirectionSpec::Bump { center, radius, amp } => {
                if center.len() != g.dim() {
                    return Err(Error::Config("bump centre has wrong dimension".into()));
                }
                g.sample(|x| {
                    let d2: f64 = (0..g.dim()).map(|a| (x[a] - center[a]).powi(2)).sum();
                    amp * bump(d2.sqrt(), *radius) / bump(0.0, *radius)
                })
            }
            DirectionSpec::Positive { floor } => positive_direction(grid, *floor).into_values(),
        };
        Ok(PerturbationDirection::mean_free(g, vals))
    }
}

/// Mean-free direction whose values on Ω are all at least `floor`: a
/// smooth plateau equal to 1 on a neighbourhood of Ω, scaled so that after
/// removing the mean the minimum over Ω is `floor`.
pub fn positive_direction(grid: &Grid, floor: f64) -> PerturbationDirection {
    let g = grid.outer();
    let inner = grid.spec().inner.clone();
    let plateau = g.sample(|x| {
        (0..g.dim())
            .map(|a| {
                let (lo, hi) = (inner[a][0], inner[a][1]);
                let half = 0.5 * (hi - lo);
                let c = 0.5 * (lo + hi);
                let d = ((x[a] - c).abs() - half).max(0.0);
                let width = (lo - g.axis(a).lo).min(g.axis(a).hi - hi);
                if d >= width {
                    0.0
                } else {
                    bump(d, width) / bump(0.0, width)
                }
            })
            .product()
    });
    let mean = g.integral(&plateau) / g.volume();
    // on Ω the plateau is 1, so the shifted value there is 1 - mean
    let scale = floor / (1.0 - mean);
    PerturbationDirection::mean_free(g, plateau.iter().map(|v| v * scale).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub min: f64,
    pub pass: bool,
}

/// Random smooth unit-mass density on Ω′.
pub fn random_density(space: &SpaceGrid, rng: &mut ChaCha8Rng, amplitude: f64) -> Vec<f64> {
    let modes: Vec<(usize, usize, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0..4),
                if space.dim() == 2 { rng.gen_range(0..4) } else { 0 },
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let raw = space.sample(|x| {
        modes
            .iter()
            .map(|&(a, b, c)| c * (a as f64 * PI * x[0]).cos() * (b as f64 * PI * x[1]).cos())
            .sum::<f64>()
    });
    let mx = raw.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let mut m: Vec<f64> = raw.iter().map(|v| (1.0 + amplitude * v / mx).max(0.0)).collect();
    let mass = space.integral(&m);
    m.iter_mut().for_each(|v| *v /= mass);
    m
}

/// Sample `∫ (F(m1) - F(m2)) (m1 - m2)` over random density pairs.
pub fn check_monotonicity(f: &RunningCost, space: &SpaceGrid, trials: usize, seed: u64) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min = f64::INFINITY;
    for t in 0..trials.max(1) {
        let amp = 0.2 + 0.7 * (t as f64 / trials.max(1) as f64);
        let m1 = random_density(space, &mut rng, amp);
        let m2 = random_density(space, &mut rng, amp);
        let (f1, f2) = (f.eval(&m1), f.eval(&m2));
        let integrand: Vec<f64> = (0..m1.len()).map(|k| (f1[k] - f2[k]) * (m1[k] - m2[k])).collect();
        min = min.min(space.integral(&integrand));
    }
    MonotonicityReport {
        trials: trials.max(1),
        min,
        pass: min >= -1e-10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_evaluation() {
        let f = RunningCost::new(vec![vec![1.0], vec![1.0]], 0.5, None).unwrap();
        assert!((f.eval(&[1.2])[0] - 0.22).abs() < 1e-15);
        assert_eq!(f.eval(&[1.0])[0], 0.0);
        let lin = RunningCost::linear(3, 1.0).unwrap();
        assert_eq!(lin.eval(&[1.0, 1.25, 0.5]), vec![0.0, 0.25, -0.5]);
    }

    #[test]
    fn rejects_small_first_coefficient() {
        assert!(RunningCost::new(vec![vec![0.4, 1.0]], 0.5, None).is_err());
    }

    #[test]
    fn terminal_cost_at_uniform_density() {
        let g = SpaceGrid::unit_square(33);
        for psi in [Psi::Linear, Psi::Cubic { a: 0.5 }, Psi::Exp { a: 2.0 }] {
            let tc = TerminalCost::new(&g, TerminalCostSpec { radius: 0.125, psi }).unwrap();
            let v = tc.eval(&vec![1.0; g.len()]);
            assert!(v.iter().all(|x| (x - tc.b()).abs() < 1e-12));
        }
    }

    #[test]
    fn kernel_radius_validation() {
        let g = SpaceGrid::unit_square(33);
        assert!(TerminalCost::new(&g, TerminalCostSpec { radius: 0.6, psi: Psi::Linear }).is_err());
    }

    #[test]
    fn smoothing_is_self_adjoint() {
        let g = SpaceGrid::unit_square(17);
        let tc = TerminalCost::new(&g, TerminalCostSpec { radius: 0.2, psi: Psi::Linear }).unwrap();
        let a = g.sample(|x| (5.0 * x[0]).sin() + x[1]);
        let b = g.sample(|x| (x[0] * x[1] * 9.0).cos());
        let lhs = g.pair(&tc.smooth(&a), &b);
        let rhs = g.pair(&a, &tc.smooth(&b));
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn positive_direction_floor() {
        let grid = Grid::reference();
        let f = positive_direction(&grid, 0.5);
        let inner = grid.restrict(f.values());
        let min = inner.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - 0.5).abs() < 1e-9, "{min}");
        assert!(grid.outer().integral(f.values()).abs() < 1e-12);
    }

    #[test]
    fn monotone_catalog() {
        let g = SpaceGrid::unit_square(17);
        let f = RunningCost::linear(g.len(), 1.0).unwrap();
        assert!(check_monotonicity(&f, &g, 10, 3).pass);
        let e = RunningCost::exp_shifted(g.len(), 4).unwrap();
        assert!(check_monotonicity(&e, &g, 10, 3).pass);
    }

    #[test]
    fn strongly_concave_cost_is_flagged() {
        let g = SpaceGrid::unit_square(17);
        let f = RunningCost::new(vec![vec![1.0; g.len()], vec![-40.0; g.len()]], 0.5, None).unwrap();
        assert!(!check_monotonicity(&f, &g, 20, 3).pass);
    }
}
