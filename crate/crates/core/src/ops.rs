//! Vertex-centred finite-volume stencils and the norms built on them.
//!
//! Along every axis the operator at node `i` is `Σ_faces (f_j - f_i) / (dx w_i)`
//! where `w_i` is the 1D trapezoid weight. Away from walls this is the usual
//! three-point stencil; at a Neumann wall it equals the mirrored-ghost
//! stencil. The weighted sum over all nodes telescopes to zero, which is what
//! makes the density update conserve mass exactly.

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::field::{FactoredField, Field};
use crate::grid::{Grid, SpaceGrid};
use crate::scalar::Scalar;

/// How rows touching the grid boundary are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bc {
    /// Homogeneous Neumann walls: every node carries a row.
    Neumann,
    /// Only interior nodes carry rows; boundary values are data.
    Dirichlet,
}

/// `(neighbour, coefficient)` pairs of node `k` along axis `a`.
#[inline]
fn axis_neighbours(g: &SpaceGrid, k: usize, a: usize) -> ([(usize, f64); 2], usize) {
    let n = g.axis(a).n;
    let p = g.axis_index(k, a);
    let s = g.stride(a);
    let dx = g.dx(a);
    let mut out = [(0usize, 0.0f64); 2];
    let mut cnt = 0;
    let c = if p == 0 || p + 1 == n { 2.0 / (dx * dx) } else { 1.0 / (dx * dx) };
    if p > 0 {
        out[cnt] = (k - s, c);
        cnt += 1;
    }
    if p + 1 < n {
        out[cnt] = (k + s, c);
        cnt += 1;
    }
    (out, cnt)
}

fn has_row(g: &SpaceGrid, k: usize, bc: Bc) -> bool {
    bc == Bc::Neumann || !g.is_boundary(k)
}

/// Discrete Laplacian; rows that do not exist under `bc` are left at zero.
pub fn laplacian_into<T: Scalar>(g: &SpaceGrid, f: &[T], bc: Bc, out: &mut [T]) {
    for k in 0..g.len() {
        if !has_row(g, k, bc) {
            out[k] = T::zero();
            continue;
        }
        let mut s = T::zero();
        for a in 0..g.dim() {
            let (nb, cnt) = axis_neighbours(g, k, a);
            for &(j, c) in &nb[..cnt] {
                s += (f[j] - f[k]) * c;
            }
        }
        out[k] = s;
    }
}

pub fn laplacian_neumann<T: Scalar>(g: &SpaceGrid, f: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); f.len()];
    laplacian_into(g, f, Bc::Neumann, &mut out);
    out
}

/// Laplacian with the exterior treated as zero: boundary values are ignored
/// and the output vanishes on boundary nodes.
pub fn laplacian_dirichlet<T: Scalar>(g: &SpaceGrid, f: &[T]) -> Vec<T> {
    let mut z = f.to_vec();
    for k in g.boundary_nodes() {
        z[k] = T::zero();
    }
    let mut out = vec![T::zero(); f.len()];
    laplacian_into(g, &z, Bc::Dirichlet, &mut out);
    out
}

/// Conservative `div(a ∇b)` with arithmetic-mean face values of `a`.
pub fn flux_divergence_into<T: Scalar>(g: &SpaceGrid, a: &[T], b: &[T], bc: Bc, out: &mut [T]) {
    for k in 0..g.len() {
        if !has_row(g, k, bc) {
            out[k] = T::zero();
            continue;
        }
        let mut s = T::zero();
        for ax in 0..g.dim() {
            let (nb, cnt) = axis_neighbours(g, k, ax);
            for &(j, c) in &nb[..cnt] {
                s += (a[j] + a[k]) * (b[j] - b[k]) * (0.5 * c);
            }
        }
        out[k] = s;
    }
}

pub fn flux_divergence<T: Scalar>(g: &SpaceGrid, a: &[T], b: &[T], bc: Bc) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    flux_divergence_into(g, a, b, bc, &mut out);
    out
}

/// Centred gradient component along axis `ax`; zero on walls normal to `ax`
/// (mirror symmetry) and on boundary nodes under [`Bc::Dirichlet`].
#[inline]
fn grad_component<T: Scalar>(g: &SpaceGrid, f: &[T], k: usize, ax: usize, bc: Bc) -> T {
    if !has_row(g, k, bc) {
        return T::zero();
    }
    let n = g.axis(ax).n;
    let p = g.axis_index(k, ax);
    if p == 0 || p + 1 == n {
        return T::zero();
    }
    let s = g.stride(ax);
    (f[k + s] - f[k - s]) / (2.0 * g.dx(ax))
}

/// Pointwise `∇f · ∇h` with centred gradients.
pub fn grad_dot<T: Scalar>(g: &SpaceGrid, f: &[T], h: &[T], bc: Bc) -> Vec<T> {
    (0..g.len())
        .map(|k| {
            (0..g.dim())
                .map(|ax| grad_component(g, f, k, ax, bc) * grad_component(g, h, k, ax, bc))
                .sum()
        })
        .collect()
}

/// Assemble `c0 I - L` (and optionally `- div(a_face ∇u)` acting on the
/// unknown density, with `u` fixed). Rows absent under `bc` become identity.
pub fn implicit_matrix(g: &SpaceGrid, c0: f64, bc: Bc, drift: Option<&[f64]>) -> BandMatrix {
    let bw = if g.dim() == 2 { g.nx() } else { 1 };
    let mut m = BandMatrix::zeros(g.len(), bw);
    for k in 0..g.len() {
        if !has_row(g, k, bc) {
            m.set(k, k, 1.0);
            continue;
        }
        m.add(k, k, c0);
        for a in 0..g.dim() {
            let (nb, cnt) = axis_neighbours(g, k, a);
            for &(j, c) in &nb[..cnt] {
                m.add(k, j, -c);
                m.add(k, k, c);
                if let Some(u) = drift {
                    // (m_j + m_k)/2 (u_j - u_k) c
                    let d = 0.5 * c * (u[j] - u[k]);
                    m.add(k, j, -d);
                    m.add(k, k, -d);
                }
            }
        }
    }
    m
}

/// Largest jump of `u` between grid neighbours; the implicit density
/// matrix is an M-matrix while this stays below 2.
pub fn max_neighbour_jump(g: &SpaceGrid, u: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..g.len() {
        for a in 0..g.dim() {
            let p = g.axis_index(k, a);
            if p + 1 < g.axis(a).n {
                worst = worst.max((u[k + g.stride(a)] - u[k]).abs());
            }
        }
    }
    worst
}

/// `‖f‖_{H⁻¹}` with `‖f‖² = ∫ f w`, `-Δw = f`, `w = 0` on the boundary of `g`.
pub fn h_minus1_norm(g: &SpaceGrid, f: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::Domain("field does not match grid".into()));
    }
    let lu = implicit_matrix(g, 0.0, Bc::Dirichlet, None).factor()?;
    let mut w = f.to_vec();
    for k in g.boundary_nodes() {
        w[k] = 0.0;
    }
    lu.solve_in_place(&mut w);
    let s = g.pair(f, &w);
    if !s.is_finite() {
        return Err(Error::Solver("H^-1 solve produced non-finite values".into()));
    }
    Ok(s.max(0.0).sqrt())
}

/// Sign of the Carleman-type weight `e^{±2λ²t}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `sqrt(∫_Q |f|² e^{±2λ²t})` for an unfactored field on the inner grid.
pub fn weighted_l2_norm<T: Scalar>(grid: &Grid, f: &Field<T>, lambda: f64, sign: Sign) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Domain("λ must be nonnegative".into()));
    }
    if f.nodes() != grid.inner().len() || f.levels() != grid.nt() {
        return Err(Error::Domain("field is not defined on Q".into()));
    }
    let expo = 2.0 * lambda * lambda * grid.t_final();
    if expo > crate::field::MAX_LOG_MAGNITUDE {
        return Err(Error::Range(format!(
            "e^{{2λ²T}} = e^{expo:.1} overflows; use the factored representation"
        )));
    }
    let tw = grid.time_weights();
    let sp = grid.inner();
    let s: f64 = (0..grid.nt())
        .map(|n| {
            let wt = (2.0 * sign.value() * lambda * lambda * grid.time(n)).exp();
            tw[n] * wt * sp.l2_norm(f.level(n)).powi(2)
        })
        .sum();
    Ok(s.sqrt())
}

/// Natural log of the weighted norm of a factored field, evaluated without
/// forming any exponential larger than 1.
pub fn weighted_log_l2_norm_factored(grid: &Grid, f: &FactoredField, lambda: f64, sign: Sign) -> Result<f64> {
    if f.nodes() != grid.inner().len() || f.levels() != grid.nt() {
        return Err(Error::Domain("field is not defined on Q".into()));
    }
    let tw = grid.time_weights();
    let sp = grid.inner();
    let mut terms = Vec::with_capacity(f.nodes() * f.levels());
    for n in 0..grid.nt() {
        let lt = sign.value() * 2.0 * lambda * lambda * grid.time(n);
        let env = f.log_envelope.level(n);
        let osc = f.oscillator.level(n);
        for k in 0..sp.len() {
            let a = osc[k].norm_sqr();
            if a > 0.0 {
                terms.push(a.ln() + 2.0 * env[k] + lt + (tw[n] * sp.weight(k)).ln());
            }
        }
    }
    if terms.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let mx = terms.iter().cloned().fold(f64::MIN, f64::max);
    let s: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
    Ok(0.5 * (mx + s.ln()))
}

pub fn weighted_l2_norm_factored(grid: &Grid, f: &FactoredField, lambda: f64, sign: Sign) -> Result<f64> {
    Ok(weighted_log_l2_norm_factored(grid, f, lambda, sign)?.exp())
}

/// Plain `L²(Q)` norm.
pub fn l2_norm_q<T: Scalar>(grid: &Grid, f: &Field<T>) -> f64 {
    let tw = grid.time_weights();
    let sp = grid.space(if f.nodes() == grid.inner().len() {
        crate::grid::Region::Cylinder
    } else {
        crate::grid::Region::OuterCylinder
    });
    (0..f.levels())
        .map(|n| tw[n] * sp.l2_norm(f.level(n)).powi(2))
        .sum::<f64>()
        .sqrt()
}
