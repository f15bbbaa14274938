//! Banded LU without pivoting for diagonally dominant stencil matrices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major band storage: entry `(i, j)` with `|i - j| <= bw` lives at
/// `i * (2 bw + 1) + (j + bw - i)`.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    a: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            a: vec![0.0; n * (2 * bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw, "({i},{j}) outside band {}", self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.a[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.a[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.a[s] = v;
    }

    /// Replace row `i` by the identity row.
    pub fn identity_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        let hi = (i + self.bw).min(self.n - 1);
        for j in lo..=hi {
            self.set(i, j, 0.0);
        }
        self.set(i, i, 1.0);
    }

    pub fn matvec<T: Scalar>(&self, x: &[T], y: &mut [T]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = T::zero();
            for j in lo..=hi {
                s += x[j] * self.a[self.slot(i, j)];
            }
            y[i] = s;
        }
    }

    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let piv = self.a[self.slot(k, k)];
            if !(piv.abs() > 1e-300) || !piv.is_finite() {
                return Err(Error::Solver(format!("zero pivot at row {k}")));
            }
            let hi = (k + bw).min(n - 1);
            for i in k + 1..=hi {
                let sik = self.slot(i, k);
                let l = self.a[sik] / piv;
                self.a[sik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=hi {
                    let skj = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.a[sij] -= l * self.a[skj];
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

/// In-place LU factors; unit lower part below the diagonal.
#[derive(Clone, Debug)]
pub struct BandedLu {
    m: BandMatrix,
}

impl BandedLu {
    pub fn n(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place<T: Scalar>(&self, b: &mut [T]) {
        let (n, bw) = (self.m.n, self.m.bw);
        let a = &self.m.a;
        let w = 2 * bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &a[i * w..(i + 1) * w];
            let mut s = b[i];
            for j in lo..i {
                s -= b[j] * row[j + bw - i];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let row = &a[i * w..(i + 1) * w];
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= b[j] * row[j + bw - i];
            }
            b[i] = s / row[bw];
        }
    }
}

/// Thomas algorithm for a tridiagonal system with scalar entries; `sub[0]`
/// and `sup[n-1]` are ignored.
pub fn solve_tridiagonal<T>(sub: &[T], diag: &[T], sup: &[T], rhs: &mut [T])
where
    T: Scalar + std::ops::Div<Output = T>,
{
    let n = diag.len();
    let mut c = vec![T::zero(); n];
    let mut d = diag[0];
    c[0] = sup[0] / d;
    rhs[0] = rhs[0] / d;
    for i in 1..n {
        d = diag[i] - sub[i] * c[i - 1];
        if i + 1 < n {
            c[i] = sup[i] / d;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i] * next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, bw: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = BandMatrix::zeros(n, bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let hi = (i + bw).min(n - 1);
            let mut off = 0.0;
            for j in lo..=hi {
                if j != i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    off += v.abs();
                    m.set(i, j, v);
                }
            }
            m.set(i, i, off + 1.0);
        }
        m
    }

    #[test]
    fn banded_solve_recovers_rhs() {
        let m = random_band(40, 5, 1);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 40];
        m.matvec(&x, &mut b);
        let lu = m.factor().unwrap();
        lu.solve_in_place(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_rhs_matches_two_real_solves() {
        let m = random_band(25, 3, 2);
        let lu = m.factor().unwrap();
        let re: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let im: Vec<f64> = (0..25).map(|i| (i as f64).cos()).collect();
        let mut z: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let (mut r, mut s) = (re.clone(), im.clone());
        lu.solve_in_place(&mut z);
        lu.solve_in_place(&mut r);
        lu.solve_in_place(&mut s);
        for k in 0..25 {
            assert!((z[k].re - r[k]).abs() < 1e-13 && (z[k].im - s[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn thomas_matches_banded() {
        let n = 12;
        let m = random_band(n, 1, 3);
        let sub: Vec<f64> = (0..n).map(|i| if i > 0 { m.get(i, i - 1) } else { 0.0 }).collect();
        let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        let sup: Vec<f64> = (0..n).map(|i| if i + 1 < n { m.get(i, i + 1) } else { 0.0 }).collect();
        let mut b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut c = b.clone();
        solve_tridiagonal(&sub, &diag, &sup, &mut b);
        m.factor().unwrap().solve_in_place(&mut c);
        for k in 0..n {
            assert!((b[k] - c[k]).abs() < 1e-12);
        }
    }
}
