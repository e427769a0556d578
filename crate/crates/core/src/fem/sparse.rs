//! Minimal sparse linear algebra: COO assembly, CSR storage, a diagonally
//! preconditioned conjugate gradient for the SPD systems, BiCGStab with a
//! dense LU fallback for the small nonsymmetric deformation systems.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("solver did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("matrix is not positive definite (negative curvature at iteration {iteration})")]
    NegativeCurvature { iteration: usize },
    #[error("solver breakdown: {0}")]
    Breakdown(String),
    #[error("matrix is singular")]
    Singular,
}

/// Triplet accumulator. Duplicate entries are summed on compression in a
/// fixed (row, col, insertion) order, so assembly is deterministic.
#[derive(Debug, Clone)]
pub struct CooMatrix {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl CooMatrix {
    pub fn new(n: usize) -> Self {
        CooMatrix {
            n,
            entries: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        if value != 0.0 {
            self.entries.push((row as u32, col as u32, value));
        }
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    /// Rewrites the triplets through `f`; used for constraint elimination.
    pub fn retain_map(&mut self, mut f: impl FnMut(u32, u32, f64) -> Option<(u32, u32, f64)>) {
        let mut out = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            if let Some(e) = f(r, c, v) {
                out.push(e);
            }
        }
        self.entries = out;
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by_key(|&k| (self.entries[k].0, self.entries[k].1));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut last: Option<(u32, u32)> = None;
        for &k in &order {
            let (r, c, v) = self.entries[k];
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = acc;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        for k in self.row_ptr[row]..self.row_ptr[row + 1] {
            if self.cols[k] as usize == col {
                return self.vals[k];
            }
        }
        0.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A - A^T| over all entries; tests use this symmetry witness.
    pub fn symmetry_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                defect = defect.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        defect
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                dense[i * self.n + self.cols[k] as usize] += self.vals[k];
            }
        }
        dense
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn default_cg_max_iters(n: usize) -> usize {
    ((20.0 * (n as f64).sqrt()).ceil() as usize).max(100)
}

/// Jacobi-preconditioned conjugate gradient; converges to
/// ||A x - b|| <= rel_tol ||b|| (verified on the true residual).
pub fn solve_cg(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iters: Option<usize>,
) -> Result<Vec<f64>, SolveError> {
    let n = a.n();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tol = rel_tol * b_norm;
    let max_iters = max_iters.unwrap_or_else(|| default_cg_max_iters(n));
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for iteration in 0..max_iters {
        a.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(SolveError::NegativeCurvature { iteration });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if norm(&r) <= tol {
            // guard against recurrence drift with one true residual
            a.matvec(&x, &mut q);
            let mut true_r = 0.0;
            for i in 0..n {
                let d = b[i] - q[i];
                true_r += d * d;
                r[i] = d;
            }
            if true_r.sqrt() <= tol {
                return Ok(x);
            }
            z = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        z = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::NotConverged {
        iterations: max_iters,
        residual: norm(&r) / b_norm,
    })
}

/// Jacobi-preconditioned BiCGStab for the nonsymmetric deformation solves.
pub fn solve_bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iters: Option<usize>,
) -> Result<Vec<f64>, SolveError> {
    let n = a.n();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tol = rel_tol * b_norm;
    let max_iters = max_iters.unwrap_or_else(|| 2 * default_cg_max_iters(n));
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(x, d)| x * d).collect() };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..max_iters {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return Err(SolveError::Breakdown("rho vanished".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precond(&p);
        a.matvec(&ph, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < 1e-300 {
            return Err(SolveError::Breakdown("r0·v vanished".into()));
        }
        alpha = rho / r0v;
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if norm(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(x);
        }
        let sh = precond(&s);
        a.matvec(&sh, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(SolveError::Breakdown("t vanished".into()));
        }
        omega = dot(&t, &s) / tt;
        if omega == 0.0 {
            return Err(SolveError::Breakdown("omega vanished".into()));
        }
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol {
            return Ok(x);
        }
    }
    Err(SolveError::NotConverged {
        iterations: max_iters,
        residual: norm(&r) / b_norm,
    })
}

/// Dense LU with partial pivoting; `dense` is row-major n x n and is
/// consumed by the factorization.
pub fn solve_dense_lu(mut dense: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, SolveError> {
    let n = b.len();
    assert_eq!(dense.len(), n * n);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (pivot_row, pivot) = (k..n)
            .map(|i| (i, dense[i * n + k].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if pivot < 1e-300 {
            return Err(SolveError::Singular);
        }
        if pivot_row != k {
            for j in 0..n {
                dense.swap(k * n + j, pivot_row * n + j);
            }
            perm.swap(k, pivot_row);
            b.swap(k, pivot_row);
        }
        let dkk = dense[k * n + k];
        for i in (k + 1)..n {
            let factor = dense[i * n + k] / dkk;
            dense[i * n + k] = factor;
            if factor != 0.0 {
                for j in (k + 1)..n {
                    dense[i * n + j] -= factor * dense[k * n + j];
                }
                b[i] -= factor * b[k];
            }
        }
    }
    let mut x = b;
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc -= dense[i * n + j] * x[j];
        }
        x[i] = acc / dense[i * n + i];
    }
    Ok(x)
}

const DENSE_FALLBACK_LIMIT: usize = 3000;

/// Nonsymmetric solve: BiCGStab first, dense LU fallback for small systems
/// when the iteration stalls.
pub fn solve_nonsymmetric(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
) -> Result<Vec<f64>, SolveError> {
    match solve_bicgstab(a, b, rel_tol, None) {
        Ok(x) => Ok(x),
        Err(err) if a.n() <= DENSE_FALLBACK_LIMIT => {
            let _ = err;
            solve_dense_lu(a.to_dense(), b.to_vec())
        }
        Err(err) => Err(err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let mut coo = CooMatrix::new(3);
        for i in 0..3 {
            coo.push(i, i, 1.0);
        }
        let a = coo.to_csr();
        let x = solve_cg(&a, &[1.0, -2.0, 3.0], 1e-12, None).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_spd() {
        let mut coo = CooMatrix::new(2);
        coo.push(0, 0, 2.0);
        coo.push(0, 1, 1.0);
        coo.push(1, 0, 1.0);
        coo.push(1, 1, 2.0);
        let x = solve_cg(&coo.to_csr(), &[3.0, 3.0], 1e-12, None).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn indefinite_reports_negative_curvature() {
        let mut coo = CooMatrix::new(2);
        coo.push(0, 0, 1.0);
        coo.push(1, 1, -1.0);
        let res = solve_cg(&coo.to_csr(), &[1.0, 1.0], 1e-12, None);
        assert!(matches!(res, Err(SolveError::NegativeCurvature { .. })));
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let mut coo = CooMatrix::new(2);
        coo.push(0, 0, 1.0);
        coo.push(0, 0, 2.5);
        coo.push(1, 1, 1.0);
        let a = coo.to_csr();
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.symmetry_defect(), 0.0);
    }

    #[test]
    fn bicgstab_and_lu_match_on_nonsymmetric() {
        // small advection-diffusion-like nonsymmetric matrix
        let n = 20;
        let mut coo = CooMatrix::new(n);
        for i in 0..n {
            coo.push(i, i, 3.0);
            if i > 0 {
                coo.push(i, i - 1, -1.4);
            }
            if i + 1 < n {
                coo.push(i, i + 1, -0.6);
            }
        }
        let a = coo.to_csr();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x1 = solve_bicgstab(&a, &b, 1e-12, None).unwrap();
        let x2 = solve_dense_lu(a.to_dense(), b.clone()).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-9);
        }
        let mut r = vec![0.0; n];
        a.matvec(&x1, &mut r);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn lu_detects_singularity() {
        let mut coo = CooMatrix::new(2);
        coo.push(0, 0, 1.0);
        coo.push(0, 1, 2.0);
        coo.push(1, 0, 2.0);
        coo.push(1, 1, 4.0);
        let res = solve_dense_lu(coo.to_csr().to_dense(), vec![1.0, 1.0]);
        assert!(matches!(res, Err(SolveError::Singular)));
    }
}
