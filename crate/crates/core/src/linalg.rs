//! Sparse symmetric systems whose kernel is the constant field per
//! component, as produced by translation-invariant energies.

use std::sync::Once;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::lattice::remove_mean;

/// Above this many unknowns `Method::Auto` switches to conjugate gradients.
pub const CG_THRESHOLD: usize = 100_000;

static SEQ: Once = Once::new();

fn faer_sequential() {
    // keep factorizations bit-reproducible regardless of the thread pool
    SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Compressed sparse row matrix with summed duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> CsrMatrix {
        t.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col[k], self.val[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|(c, _)| *c == j).map(|(_, v)| v).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[i * self.n + j] += v;
            }
        }
        a
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij − A_ji|`
    pub fn asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push((i, j, v));
            }
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Auto,
    Direct,
    Cg,
}

enum Kind {
    Llt(Llt<usize, f64>),
    Lu(Lu<usize, f64>),
    Cg { a: CsrMatrix, shift: f64 },
}

/// Solver for `A x = b` on the zero-mean subspace, `A` symmetric with the
/// per-component constants as its kernel. The direct path pins one degree of
/// freedom per component, the iterative path adds a rank-`d` shift on the
/// constants. Both return the zero-mean solution.
pub struct ZeroMeanSolver {
    n: usize,
    d: usize,
    kind: Kind,
}

impl ZeroMeanSolver {
    pub fn new(a: &CsrMatrix, d: usize, method: Method) -> Result<ZeroMeanSolver> {
        let n = a.n();
        if n == 0 || !n.is_multiple_of(d) {
            return Err(Error::InvalidInput(format!(
                "system of size {n} with stride {d}"
            )));
        }
        let method = match method {
            Method::Auto if n > CG_THRESHOLD => Method::Cg,
            Method::Auto => Method::Direct,
            m => m,
        };
        let kind = match method {
            Method::Cg => {
                let diag = a.diag();
                let shift = diag.iter().sum::<f64>() / n as f64;
                Kind::Cg {
                    a: a.clone(),
                    shift,
                }
            }
            _ => direct(a, d)?,
        };
        Ok(ZeroMeanSolver { n, d, kind })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let mut rhs = b.to_vec();
        remove_mean(&mut rhs, self.d);
        let mut x = match &self.kind {
            Kind::Llt(f) => {
                pin_rhs(&mut rhs, self.d);
                let m = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
                let s = f.solve(&m);
                (0..self.n).map(|i| s[(i, 0)]).collect()
            }
            Kind::Lu(f) => {
                pin_rhs(&mut rhs, self.d);
                let m = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
                let s = f.solve(&m);
                (0..self.n).map(|i| s[(i, 0)]).collect()
            }
            Kind::Cg { a, shift } => cg(a, *shift, self.d, &rhs)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite solution".into()));
        }
        remove_mean(&mut x, self.d);
        Ok(x)
    }
}

fn pin_rhs(rhs: &mut [f64], d: usize) {
    for r in rhs.iter_mut().take(d) {
        *r = 0.0;
    }
}

fn direct(a: &CsrMatrix, d: usize) -> Result<Kind> {
    faer_sequential();
    let n = a.n();
    let scale = a
        .diag()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(a.nnz() + d);
    for i in 0..n {
        for (j, v) in a.row(i) {
            if i >= d && j >= d {
                t.push(Triplet::new(i, j, v));
            }
        }
    }
    for k in 0..d {
        t.push(Triplet::new(k, k, scale));
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
        .map_err(|e| Error::Singular(format!("sparse assembly failed: {e:?}")))?;
    if let Ok(llt) = m.sp_cholesky(Side::Lower) {
        return Ok(Kind::Llt(llt));
    }
    m.sp_lu()
        .map(Kind::Lu)
        .map_err(|e| Error::Singular(format!("LU failed: {e:?}")))
}

fn cg(a: &CsrMatrix, shift: f64, d: usize, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n();
    let nodes = (n / d) as f64;
    let apply = |x: &[f64]| {
        let mut y = a.matvec(x);
        for k in 0..d {
            let mean = x.iter().skip(k).step_by(d).sum::<f64>() / nodes;
            for v in y.iter_mut().skip(k).step_by(d) {
                *v += shift * mean;
            }
        }
        y
    };
    let inv_diag: Vec<f64> = a
        .diag()
        .iter()
        .map(|v| {
            let v = v + shift / nodes;
            if v.abs() > 0.0 {
                1.0 / v
            } else {
                1.0
            }
        })
        .collect();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = 20 * n + 100;
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Singular("CG met a non-positive direction".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= 1e-14 * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        context: "conjugate gradients".into(),
        iterations: max_iter,
        residual: dot(&r, &r).sqrt() / bnorm,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense solve of a small symmetric (possibly indefinite) system, row-major.
pub fn dense_solve(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    faer_sequential();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = Mat::from_fn(n, n, |i, j| a[i * n + j]);
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = m.partial_piv_lu().solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("dense system".into()));
    }
    Ok(out)
}

/// Smallest eigenvalue of a small dense symmetric matrix.
pub fn dense_min_eigenvalue(a: &[f64], n: usize) -> Result<f64> {
    faer_sequential();
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let m = Mat::from_fn(n, n, |i, j| 0.5 * (a[i * n + j] + a[j * n + i]));
    let ev = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Singular(format!("eigenvalues: {e:?}")))?;
    Ok(ev.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let w = 1.0 + (i % 3) as f64;
            t.push((i, i, w));
            t.push((j, j, w));
            t.push((i, j, -w));
            t.push((j, i, -w));
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![3.0, 4.0]);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn direct_and_cg_agree() {
        let a = ring(40);
        let mut b: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        remove_mean(&mut b, 1);
        let x1 = ZeroMeanSolver::new(&a, 1, Method::Direct)
            .unwrap()
            .solve(&b)
            .unwrap();
        let x2 = ZeroMeanSolver::new(&a, 1, Method::Cg)
            .unwrap()
            .solve(&b)
            .unwrap();
        let ax = a.matvec(&x1);
        for i in 0..40 {
            assert!((ax[i] - b[i]).abs() < 1e-10);
            assert!((x1[i] - x2[i]).abs() < 1e-9);
        }
        assert!(x1.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn dense_helpers() {
        let x = dense_solve(&[2.0, 1.0, 1.0, 3.0], 2, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        let e = dense_min_eigenvalue(&[2.0, 0.0, 0.0, -1.0], 2).unwrap();
        assert!((e + 1.0).abs() < 1e-14);
    }
}
