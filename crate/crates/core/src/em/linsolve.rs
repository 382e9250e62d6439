//! Linear solvers for the coupled-dipole systems: dense LU and restarted GMRES.

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Systems with more unknowns than this use GMRES instead of dense LU.
    pub dense_limit: usize,
    /// Relative residual target for GMRES.
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
    /// Hard cap on the number of polarisable voxels.
    pub max_voxels: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            dense_limit: 9000,
            tolerance: 1e-8,
            restart: 80,
            max_iterations: 4000,
            max_voxels: 250_000,
        }
    }
}

pub(crate) struct DenseLu {
    lu: PartialPivLu<c64>,
    n: usize,
}

impl DenseLu {
    pub(crate) fn factor(a: &Mat<c64>) -> Self {
        DenseLu { lu: a.partial_piv_lu(), n: a.nrows() }
    }

    /// Solves for every column of `rhs`.
    pub(crate) fn solve(&self, rhs: &Mat<c64>) -> Result<Mat<c64>> {
        debug_assert_eq!(rhs.nrows(), self.n);
        let x = self.lu.solve(rhs);
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                let v = x[(i, j)];
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::Domain("singular coupled-dipole system".into()));
                }
            }
        }
        Ok(x)
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
///
/// `apply(x, y)` must write `A·x` into `y`.
pub(crate) fn gmres<F>(apply: F, b: &[Complex64], opts: &SolverOptions) -> Result<Vec<Complex64>>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let m = opts.restart.max(1).min(n.max(1));
    let mut work = vec![zero; n];
    let mut total = 0usize;
    let mut residual;

    loop {
        apply(&x, &mut work);
        let r: Vec<Complex64> = b.iter().zip(&work).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        residual = beta / b_norm;
        if residual <= opts.tolerance {
            return Ok(x);
        }
        if total >= opts.max_iterations {
            return Err(Error::NoConvergence { residual, iterations: total });
        }

        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|c| c / beta).collect());
        let mut h = vec![vec![zero; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![zero; m];
        let mut g = vec![zero; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut used = 0;

        for j in 0..m {
            let mut w = vec![zero; n];
            apply(&basis[j], &mut w);
            for i in 0..=j {
                let hij: Complex64 = basis[i].iter().zip(&w).map(|(v, wk)| v.conj() * wk).sum();
                h[i][j] = hij;
                for (wk, v) in w.iter_mut().zip(&basis[i]) {
                    *wk -= hij * v;
                }
            }
            let h_next = norm(&w);
            h[j + 1][j] = Complex64::new(h_next, 0.0);

            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i].conj() * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = zero;
            } else {
                cs[j] = a.norm() / denom;
                let phase = if a.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { a / a.norm() };
                sn[j] = phase * bb.conj() / denom;
            }
            h[j][j] = cs[j] * a + sn[j] * bb;
            h[j + 1][j] = zero;
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] *= cs[j];

            used = j + 1;
            total += 1;
            residual = g[j + 1].norm() / b_norm;
            if residual <= opts.tolerance || h_next == 0.0 || total >= opts.max_iterations {
                break;
            }
            basis.push(w.iter().map(|c| c / h_next).collect());
        }

        // Back substitution on the upper-triangular Hessenberg block.
        let mut y = vec![zero; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for k in i + 1..used {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, v) in x.iter_mut().zip(&basis[k]) {
                *xi += yk * v;
            }
        }
        if !x.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::NoConvergence { residual: f64::NAN, iterations: total });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> Vec<Vec<Complex64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let x = ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5;
                        let d = if i == j { 4.0 } else { 0.0 };
                        Complex64::new(d + 0.3 * x, 0.2 * x * x)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn gmres_agrees_with_dense_lu() {
        let n = 40;
        let a = test_matrix(n);
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let opts = SolverOptions { restart: 7, tolerance: 1e-12, ..Default::default() };
        let x = gmres(
            |v, out| {
                for i in 0..n {
                    out[i] = (0..n).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &b,
            &opts,
        )
        .unwrap();

        let m = Mat::from_fn(n, n, |i, j| a[i][j]);
        let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
        let y = DenseLu::factor(&m).solve(&rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - y[(i, 0)]).norm() < 1e-9);
        }
    }

    #[test]
    fn gmres_reports_non_convergence() {
        let n = 30;
        let a = test_matrix(n);
        let b = vec![Complex64::new(1.0, 0.0); n];
        let opts = SolverOptions { restart: 2, max_iterations: 3, tolerance: 1e-14, ..Default::default() };
        let err = gmres(
            |v, out| {
                for i in 0..n {
                    out[i] = (0..n).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &b,
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }
}
