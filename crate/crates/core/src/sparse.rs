//! Sparse symmetric matrices and direct/iterative solvers.
//!
//! The FEM stiffness matrices produced in this crate have a fixed 9-point
//! stencil and a small bandwidth, so the direct path is a banded Cholesky
//! factorization; a Jacobi-preconditioned conjugate gradient method covers
//! sizes where the band no longer fits comfortably in memory.

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Symmetry is by construction of the callers;
/// both triangles are stored so matrix-vector products are a single pass.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            per_row[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in per_row.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            let mut last = usize::MAX;
            for &(j, v) in row.iter() {
                if j == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = j;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Maximum `i - j` over stored entries (equals the symmetric bandwidth).
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if j < i {
                    bw = bw.max(i - j);
                }
            }
        }
        bw
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut out = ndarray::Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[[i, self.col_idx[k]]] += self.values[k];
            }
        }
        out
    }
}

/// Cholesky factorization of a banded SPD matrix, `L` stored by rows:
/// `data[i * (bw + 1) + (bw - (i - j))] = L[i][j]` for `i - bw <= j <= i`.
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn new(a: &CsrMatrix, bw: usize) -> Result<BandCholesky> {
        let n = a.n;
        let w = bw + 1;
        let mut data = vec![0.0f64; n * w];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if j <= i {
                    debug_assert!(i - j <= bw, "entry outside declared bandwidth");
                    data[i * w + (bw - (i - j))] += a.values[k];
                }
            }
        }
        // In-place banded Cholesky. Row i of L overlaps row j on the index
        // range shared by both bands; offsets line up as a sliding window.
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw);
                let start = lo.max(jlo);
                let mut acc = data[i * w + (bw - (i - j))];
                // sum_{k=start..j} L[i][k] * L[j][k]
                let ioff = i * w + bw - i; // data[ioff + k] = L[i][k]
                let joff = j * w + bw - j;
                for k in start..j {
                    acc -= data[ioff.wrapping_add(k)] * data[joff.wrapping_add(k)];
                }
                if i == j {
                    if acc <= 0.0 {
                        return Err(Error::NotPositiveDefinite(format!(
                            "banded Cholesky: pivot {acc:.3e} at row {i}"
                        )));
                    }
                    data[i * w + bw] = acc.sqrt();
                } else {
                    data[i * w + (bw - (i - j))] = acc / data[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { n, bw, data })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut acc = x[i];
            let ioff = i * w + bw - i;
            for k in lo..i {
                acc -= self.data[ioff.wrapping_add(k)] * x[k];
            }
            x[i] = acc / self.data[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut acc = x[i];
            for k in i + 1..=hi {
                // L[k][i] stored in row k at offset bw - (k - i)
                acc -= self.data[k * w + (bw - (k - i))] * x[k];
            }
            x[i] = acc / self.data[i * w + bw];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let n = a.n;
    let mut diag = vec![0.0f64; n];
    for i in 0..n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            if a.col_idx[k] == i {
                diag[i] += a.values[k];
            }
        }
    }
    for (i, d) in diag.iter().enumerate() {
        if *d <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "pcg: nonpositive diagonal {d:.3e} at row {i}"
            )));
        }
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0f64; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0f64; n];
    for _ in 0..max_iters {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::NotPositiveDefinite(
                "pcg: nonpositive curvature".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence(format!(
        "pcg: residual above {rel_tol:e} after {max_iters} iterations"
    )))
}
