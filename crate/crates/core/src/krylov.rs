//! Restarted GMRES with right preconditioning, real or complex.

use crate::error::{Error, Result};
use crate::scalar::{dotc, norm2, Scalar};
use num_complex::Complex64;

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tol: 1e-11,
            restart: 60,
            max_iter: 600,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresReport {
    pub iterations: usize,
    /// Relative residual `‖b - Ax‖ / ‖b‖` after each inner step.
    pub history: Vec<f64>,
    pub relative_residual: f64,
}

/// Solve `A x = b` starting from `x` (in place). `apply(v, out)` computes
/// `A v`; `precond(v, out)` approximates `A^{-1} v`.
pub fn gmres<T, A, P>(apply: A, precond: P, b: &[T], x: &mut [T], opts: &GmresOptions) -> Result<GmresReport>
where
    T: Scalar,
    A: Fn(&[T], &mut [T]),
    P: Fn(&[T], &mut [T]),
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut history = Vec::new();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(GmresReport {
            iterations: 0,
            history,
            relative_residual: 0.0,
        });
    }
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut av = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    loop {
        apply(x, &mut av);
        let r: Vec<T> = b.iter().zip(&av).map(|(bi, ai)| *bi - *ai).collect();
        let beta = norm2(&r);
        let rel = beta / bnorm;
        if rel <= opts.tol {
            return Ok(GmresReport {
                iterations: total,
                history,
                relative_residual: rel,
            });
        }
        if total >= opts.max_iter || !rel.is_finite() {
            return Err(Error::NotConverged {
                iterations: total,
                last: rel,
                history,
            });
        }
        let mut basis: Vec<Vec<T>> = vec![r.iter().map(|v| *v / beta).collect()];
        let mut h = vec![vec![Complex64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![Complex64::new(0.0, 0.0); m];
        let mut sn = vec![Complex64::new(0.0, 0.0); m];
        let mut g = vec![Complex64::new(0.0, 0.0); m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut zs: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut k_used = 0;
        for j in 0..m {
            precond(&basis[j], &mut z);
            apply(&z, &mut av);
            zs.push(z.clone());
            // modified Gram-Schmidt, twice for stability
            let mut w = av.clone();
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = dotc(q, &w);
                    h[i][j] += c.to_complex();
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= c * *qi;
                    }
                }
            }
            let hn = norm2(&w);
            h[j + 1][j] = Complex64::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let d = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if d == 0.0 {
                cs[j] = Complex64::new(1.0, 0.0);
                sn[j] = Complex64::new(0.0, 0.0);
            } else {
                cs[j] = a / d;
                sn[j] = bb / d;
            }
            h[j][j] = Complex64::new(d, 0.0);
            h[j + 1][j] = Complex64::new(0.0, 0.0);
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            total += 1;
            k_used = j + 1;
            let rel = g[j + 1].norm() / bnorm;
            history.push(rel);
            if rel <= opts.tol || hn == 0.0 || total >= opts.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| *v / hn).collect());
        }
        // back substitution
        let mut y = vec![Complex64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= h[i][l] * y[l];
            }
            y[i] = s / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&zs) {
            let c = T::from_complex(*yi);
            for (xv, zv) in x.iter_mut().zip(zi) {
                *xv += c * *zv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_real() {
        let n = 40;
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let mut s = 3.0 * v[i];
                if i > 0 {
                    s -= 1.2 * v[i - 1];
                }
                if i + 1 < n {
                    s -= 0.7 * v[i + 1];
                }
                out[i] = s;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let rep = gmres(apply, |v, o| o.copy_from_slice(v), &b, &mut x, &GmresOptions { restart: 8, ..Default::default() }).unwrap();
        let mut r = vec![0.0; n];
        apply(&x, &mut r);
        let err = r.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err} after {}", rep.iterations);
    }

    #[test]
    fn solves_complex_diagonal() {
        let d: Vec<Complex64> = (0..10).map(|i| Complex64::new(1.0 + i as f64, 0.5)).collect();
        let b = vec![Complex64::new(1.0, -1.0); 10];
        let mut x = vec![Complex64::new(0.0, 0.0); 10];
        let apply = |v: &[Complex64], o: &mut [Complex64]| {
            for i in 0..10 {
                o[i] = d[i] * v[i];
            }
        };
        gmres(apply, |v, o| o.copy_from_slice(v), &b, &mut x, &GmresOptions::default()).unwrap();
        for i in 0..10 {
            assert!((x[i] * d[i] - b[i]).norm() < 1e-10);
        }
    }
}
