//! Small dense symmetric eigensolver and a conjugate-gradient driver.

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations, sorted by
/// ascending eigenvalue. Column `k` of the returned vectors pairs with value `k`.
pub fn sym_eigen<const N: usize>(m: &[[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut a = *m;
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..N {
            for j in (i + 1)..N {
                off += a[i][j] * a[i][j];
            }
        }
        let scale: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-34 * scale || off == 0.0 {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: [usize; N] = std::array::from_fn(|i| i);
    idx.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = std::array::from_fn(|k| a[idx[k]][idx[k]]);
    let mut vecs = [[0.0; N]; N];
    for k in 0..N {
        // fix the sign so the largest component is positive, for reproducible output
        let col: [f64; N] = std::array::from_fn(|r| v[r][idx[k]]);
        let big = col
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sgn = if big < 0.0 { -1.0 } else { 1.0 };
        for r in 0..N {
            vecs[r][k] = sgn * col[r];
        }
    }
    (vals, vecs)
}

pub fn mat_mul_t<const R: usize, const C: usize>(m: &[[f64; C]; R]) -> [[f64; R]; R] {
    let mut out = [[0.0; R]; R];
    for i in 0..R {
        for j in 0..R {
            out[i][j] = (0..C).map(|k| m[i][k] * m[j][k]).sum();
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric positive definite operator on a flat vector.
pub trait LinearOperator {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { tol: 1e-8, max_iter: None }
    }
}

impl CgOptions {
    pub fn iteration_cap(&self, n: usize) -> usize {
        self.max_iter.unwrap_or_else(|| ((50.0 * (n as f64).sqrt()).ceil() as usize).max(100))
    }
}

/// Approximate inverse applied inside [`pcg`].
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Conjugate gradients from the initial guess in `x`. Convergence is declared
/// when `|b - Ax| <= tol * |b|`.
pub fn cg<A: LinearOperator>(op: &A, b: &[f64], x: &mut [f64], opts: CgOptions) -> Result<SolveStats> {
    pcg(op, &Identity, b, x, opts)
}

/// Preconditioned conjugate gradients; the stopping rule uses the true residual norm.
pub fn pcg<A: LinearOperator, P: Preconditioner>(op: &A, pc: &P, b: &[f64], x: &mut [f64], opts: CgOptions) -> Result<SolveStats> {
    let n = op.len();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    pc.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rr = dot(&r, &r);
    let cap = opts.iteration_cap(n);
    let target = opts.tol * bnorm;
    let mut it = 0;
    while rr.sqrt() > target {
        if it >= cap {
            return Err(Error::NotConverged { iterations: it, residual: rr.sqrt() / bnorm });
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotConverged { iterations: it, residual: rr.sqrt() / bnorm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        // guard against drift of the recursive residual
        if it % 500 == 0 {
            op.apply(x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        rr = dot(&r, &r);
        pc.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(SolveStats { iterations: it, residual: rr.sqrt() / bnorm })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(Vec<Vec<f64>>);
    impl LinearOperator for Dense {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for (i, row) in self.0.iter().enumerate() {
                y[i] = dot(row, x);
            }
        }
    }

    #[test]
    fn eigen_diagonal() {
        let m = [[4.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let (vals, vecs) = sym_eigen(&m);
        assert_eq!(vals, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vecs[3][0], 1.0);
    }

    #[test]
    fn eigen_reconstructs() {
        let m = [[2.0, 1.0, 0.5, 0.0], [1.0, 3.0, 0.2, 0.1], [0.5, 0.2, 1.0, 0.3], [0.0, 0.1, 0.3, 0.5]];
        let (vals, vecs) = sym_eigen(&m);
        for k in 0..4 {
            for i in 0..4 {
                let mv: f64 = (0..4).map(|j| m[i][j] * vecs[j][k]).sum();
                assert!((mv - vals[k] * vecs[i][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 50;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 2.0;
            if i > 0 {
                a[i][i - 1] = -1.0;
            }
            if i + 1 < n {
                a[i][i + 1] = -1.0;
            }
        }
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let op = Dense(a);
        let mut b = vec![0.0; n];
        op.apply(&xs, &mut b);
        let mut x = vec![0.0; n];
        let st = cg(&op, &b, &mut x, CgOptions { tol: 1e-12, max_iter: None }).unwrap();
        assert!(st.iterations <= n + 1);
        for i in 0..n {
            assert!((x[i] - xs[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_cap() {
        let n = 30;
        let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { (i + 1) as f64 } else { 0.0 }).collect()).collect();
        let op = Dense(a);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let e = cg(&op, &b, &mut x, CgOptions { tol: 1e-14, max_iter: Some(3) }).unwrap_err();
        assert!(matches!(e, Error::NotConverged { iterations: 3, .. }));
    }
}
