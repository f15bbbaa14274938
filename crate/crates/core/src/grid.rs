//! Space-time meshes for the outer cylinder Q′ = Ω′×[0,T] and the observed
//! subcylinder Q = Ω×[0,T]. Both boxes are vertex-centred tensor grids and
//! the inner nodes are a subset of the outer ones.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Axis { lo, hi, n }
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.dx()
        }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// 1D trapezoid weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }
}

/// Rectangular node set in one or two dimensions. Node `(i, j)` is stored
/// at `i + nx * j`; in 1D `j` is always 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceGrid {
    axes: Vec<Axis>,
}

impl SpaceGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Capability(format!(
                "only 1D and 2D grids are supported, got dim {}",
                axes.len()
            )));
        }
        for a in &axes {
            if a.n < 3 || !(a.hi > a.lo) {
                return Err(Error::Config(format!("degenerate axis {a:?}")));
            }
        }
        Ok(SpaceGrid { axes })
    }

    /// Uniform grid on `[0,1]` with `n` points.
    pub fn unit_interval(n: usize) -> Self {
        SpaceGrid::new(vec![Axis::new(0.0, 1.0, n)]).expect("valid axis")
    }

    pub fn unit_square(n: usize) -> Self {
        SpaceGrid::new(vec![Axis::new(0.0, 1.0, n), Axis::new(0.0, 1.0, n)]).expect("valid axes")
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    pub fn nx(&self) -> usize {
        self.axes[0].n
    }

    pub fn ny(&self) -> usize {
        if self.axes.len() == 2 {
            self.axes[1].n
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self, axis: usize) -> f64 {
        self.axes[axis].dx()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i + self.nx() * j
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx(), k / self.nx())
    }

    /// Stride of axis `a` in the flat index.
    pub fn stride(&self, a: usize) -> usize {
        if a == 0 {
            1
        } else {
            self.nx()
        }
    }

    /// Index of node `k` along axis `a`.
    pub fn axis_index(&self, k: usize, a: usize) -> usize {
        let (i, j) = self.ij(k);
        if a == 0 {
            i
        } else {
            j
        }
    }

    /// Coordinates of node `k`; `y = 0` in 1D.
    pub fn coord(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        let x = self.axes[0].coord(i);
        let y = if self.dim() == 2 { self.axes[1].coord(j) } else { 0.0 };
        [x, y]
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.coord(k)).collect()
    }

    pub fn weight(&self, k: usize) -> f64 {
        let (i, j) = self.ij(k);
        let mut w = self.axes[0].weight(i);
        if self.dim() == 2 {
            w *= self.axes[1].weight(j);
        }
        w
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.weight(k)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        let on_x = i == 0 || i + 1 == self.nx();
        let on_y = self.dim() == 2 && (j == 0 || j + 1 == self.ny());
        on_x || on_y
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_boundary(k)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| !self.is_boundary(k)).collect()
    }

    /// Surface quadrature on the boundary nodes, indexed like
    /// [`SpaceGrid::boundary_nodes`]. In 1D the boundary is two points of unit
    /// measure; in 2D each node collects its trapezoid share along every edge
    /// it lies on.
    pub fn boundary_weights(&self) -> Vec<f64> {
        let nodes = self.boundary_nodes();
        if self.dim() == 1 {
            return vec![1.0; nodes.len()];
        }
        nodes
            .iter()
            .map(|&k| {
                let (i, j) = self.ij(k);
                let mut w = 0.0;
                if i == 0 || i + 1 == self.nx() {
                    w += self.axes[1].weight(j);
                }
                if j == 0 || j + 1 == self.ny() {
                    w += self.axes[0].weight(i);
                }
                w
            })
            .collect()
    }

    /// Discrete L² inner product `Σ w_k conj(a_k) b_k`.
    pub fn dot<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (x, y))| x.conj() * *y * self.weight(k))
            .sum()
    }

    /// Bilinear quadrature `Σ w_k a_k b_k` (no conjugation).
    pub fn pair<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (x, y))| *x * *y * self.weight(k))
            .sum()
    }

    pub fn integral<T: Scalar>(&self, f: &[T]) -> T {
        f.iter().enumerate().map(|(k, x)| *x * self.weight(k)).sum()
    }

    pub fn l2_norm<T: Scalar>(&self, f: &[T]) -> f64 {
        f.iter()
            .enumerate()
            .map(|(k, x)| x.abs2() * self.weight(k))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.coord(k))).collect()
    }
}

/// Serializable description of a [`Grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// Per-axis `[lo, hi]` of Ω′.
    pub outer: Vec<[f64; 2]>,
    /// Per-axis `[lo, hi]` of Ω; must sit on outer nodes.
    pub inner: Vec<[f64; 2]>,
    /// Outer points per axis.
    pub n_outer: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub nt: usize,
}

impl GridSpec {
    /// Ω′ = [0,1]², Ω = [0.25,0.75]², 33×33 points, 65 levels on [0,1].
    pub fn reference() -> Self {
        GridSpec {
            dim: 2,
            outer: vec![[0.0, 1.0]; 2],
            inner: vec![[0.25, 0.75]; 2],
            n_outer: 33,
            t_final: 1.0,
            nt: 65,
        }
    }

    /// Same geometry as [`GridSpec::reference`] at a coarser resolution.
    pub fn coarse(n_outer: usize, nt: usize) -> Self {
        GridSpec {
            n_outer,
            nt,
            ..GridSpec::reference()
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::reference()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    outer: SpaceGrid,
    inner: SpaceGrid,
    offset: [usize; 2],
}

/// Integration domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// Ω′ (spatial field on the outer grid).
    Outer,
    /// Ω (spatial field on the inner grid).
    Inner,
    /// Ω′ at time level `n`.
    OuterSlice(usize),
    /// Ω at time level `n`.
    InnerSlice(usize),
    /// Q′ = Ω′×[0,T].
    OuterCylinder,
    /// Q = Ω×[0,T].
    Cylinder,
    /// Σ = ∂Ω×[0,T], integrating the boundary nodes of a field on Q.
    Sigma,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if spec.dim != spec.outer.len() || spec.dim != spec.inner.len() {
            return Err(Error::Config("extent lists must have length dim".into()));
        }
        if spec.nt < 3 {
            return Err(Error::Config(format!("nt = {} < 3", spec.nt)));
        }
        if !(spec.t_final > 0.0) {
            return Err(Error::Config("T must be positive".into()));
        }
        let vol: f64 = spec.outer.iter().map(|e| e[1] - e[0]).product();
        if (vol - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("|Ω′| = {vol}, expected 1")));
        }
        let outer = SpaceGrid::new(
            spec.outer
                .iter()
                .map(|e| Axis::new(e[0], e[1], spec.n_outer))
                .collect(),
        )?;
        let mut offset = [0usize; 2];
        let mut inner_axes = Vec::new();
        for (a, (oe, ie)) in spec.outer.iter().zip(&spec.inner).enumerate() {
            let dx = outer.dx(a);
            let lo = (ie[0] - oe[0]) / dx;
            let hi = (ie[1] - oe[0]) / dx;
            let (lo_i, hi_i) = (lo.round(), hi.round());
            if (lo - lo_i).abs() > 1e-9 || (hi - hi_i).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "inner extent {ie:?} on axis {a} is not aligned with outer nodes"
                )));
            }
            let (lo_i, hi_i) = (lo_i as i64, hi_i as i64);
            let last = spec.n_outer as i64 - 1;
            if lo_i < 2 || hi_i > last - 2 || hi_i - lo_i < 2 {
                return Err(Error::Config(format!(
                    "inner extent {ie:?} on axis {a} needs at least 2 cells of margin"
                )));
            }
            offset[a] = lo_i as usize;
            inner_axes.push(Axis::new(ie[0], ie[1], (hi_i - lo_i + 1) as usize));
        }
        let inner = SpaceGrid::new(inner_axes)?;
        Ok(Grid {
            spec,
            outer,
            inner,
            offset,
        })
    }

    pub fn reference() -> Self {
        Grid::new(GridSpec::reference()).expect("reference grid is valid")
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn outer(&self) -> &SpaceGrid {
        &self.outer
    }

    pub fn inner(&self) -> &SpaceGrid {
        &self.inner
    }

    pub fn nt(&self) -> usize {
        self.spec.nt
    }

    pub fn t_final(&self) -> f64 {
        self.spec.t_final
    }

    pub fn dt(&self) -> f64 {
        self.spec.t_final / (self.spec.nt - 1) as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n + 1 == self.spec.nt {
            self.spec.t_final
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt()).map(|n| self.time(n)).collect()
    }

    /// Trapezoid weights in time.
    pub fn time_weights(&self) -> Vec<f64> {
        let nt = self.nt();
        (0..nt)
            .map(|n| if n == 0 || n + 1 == nt { 0.5 * self.dt() } else { self.dt() })
            .collect()
    }

    /// Outer index of inner node `k`.
    pub fn inner_to_outer(&self, k: usize) -> usize {
        let (i, j) = self.inner.ij(k);
        let oj = if self.dim() == 2 { j + self.offset[1] } else { 0 };
        self.outer.idx(i + self.offset[0], oj)
    }

    pub fn restrict<T: Scalar>(&self, f: &[T]) -> Vec<T> {
        (0..self.inner.len()).map(|k| f[self.inner_to_outer(k)]).collect()
    }

    /// Zero extension of an inner field to Ω′.
    pub fn extend_zero<T: Scalar>(&self, f: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.outer.len()];
        for (k, v) in f.iter().enumerate() {
            out[self.inner_to_outer(k)] = *v;
        }
        out
    }

    /// Restriction of every level of an outer space-time field.
    pub fn restrict_field<T: Scalar>(&self, f: &Field<T>) -> Field<T> {
        let levels = (0..f.levels()).map(|n| self.restrict(f.level(n))).collect();
        Field::from_levels(levels, f.is_spatial())
    }

    /// Stable content hash of the grid description.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.spec).expect("grid spec serializes");
        hex_digest(&bytes)
    }

    pub fn space(&self, region: Region) -> &SpaceGrid {
        match region {
            Region::Outer | Region::OuterSlice(_) | Region::OuterCylinder => &self.outer,
            _ => &self.inner,
        }
    }

    /// Trapezoid quadrature of `f` over `region`.
    pub fn integrate<T: Scalar>(&self, f: &Field<T>, region: Region) -> Result<T> {
        let space = self.space(region);
        if f.nodes() != space.len() {
            return Err(Error::Domain(format!(
                "field has {} nodes, region {region:?} has {}",
                f.nodes(),
                space.len()
            )));
        }
        let need_time = matches!(region, Region::OuterCylinder | Region::Cylinder | Region::Sigma);
        let need_level = match region {
            Region::OuterSlice(n) | Region::InnerSlice(n) => Some(n),
            _ => None,
        };
        if need_time && f.levels() != self.nt() {
            return Err(Error::Domain(format!(
                "space-time region {region:?} needs {} levels, field has {}",
                self.nt(),
                f.levels()
            )));
        }
        if !need_time && need_level.is_none() && !f.is_spatial() {
            return Err(Error::Domain(format!("region {region:?} needs a spatial field")));
        }
        match region {
            Region::Outer | Region::Inner => Ok(space.integral(f.level(0))),
            Region::OuterSlice(n) | Region::InnerSlice(n) => {
                if n >= f.levels() {
                    return Err(Error::Domain(format!("level {n} out of range")));
                }
                Ok(space.integral(f.level(n)))
            }
            Region::OuterCylinder | Region::Cylinder => Ok(self
                .time_weights()
                .iter()
                .enumerate()
                .map(|(n, &w)| space.integral(f.level(n)) * w)
                .sum()),
            Region::Sigma => {
                let nodes = space.boundary_nodes();
                let bw = space.boundary_weights();
                Ok(self
                    .time_weights()
                    .iter()
                    .enumerate()
                    .map(|(n, &w)| {
                        let lv = f.level(n);
                        nodes.iter().zip(&bw).map(|(&k, &b)| lv[k] * b).sum::<T>() * w
                    })
                    .sum())
            }
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_grid_layout() {
        let g = Grid::reference();
        assert_eq!(g.outer().len(), 33 * 33);
        assert_eq!(g.inner().nx(), 17);
        assert!((g.dt() - 1.0 / 64.0).abs() < 1e-15);
        let k = g.inner_to_outer(0);
        assert_eq!(g.outer().coord(k), [0.25, 0.25]);
    }

    #[test]
    fn rejects_thin_margin() {
        let mut s = GridSpec::reference();
        s.inner = vec![[1.0 / 32.0, 0.75]; 2];
        assert!(Grid::new(s).is_err());
    }

    #[test]
    fn rejects_non_unit_volume() {
        let mut s = GridSpec::reference();
        s.outer = vec![[0.0, 1.0], [0.0, 2.0]];
        s.inner = vec![[0.25, 0.75], [0.5, 1.5]];
        assert!(Grid::new(s).is_err());
    }

    #[test]
    fn boundary_weights_sum_to_perimeter() {
        let g = Grid::reference();
        let s: f64 = g.inner().boundary_weights().iter().sum();
        assert!((s - 2.0).abs() < 1e-12);
    }
}
