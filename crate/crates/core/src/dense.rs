//! Dense linear algebra kernels.
//!
//! Everything operates on `ndarray::Array2<f64>` in standard (row-major)
//! layout. The kernels are written for the shapes that dominate tensor-train
//! workloads: tall-and-skinny factorizations, small square solves and
//! quasi-optimal row selection. Loop orders are arranged so the hot paths
//! stream over contiguous rows.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};

/// Machine-precision threshold used to decide Jacobi rotation convergence.
const JACOBI_TOL: f64 = 1e-15;

/// Thin QR factorization `M = Q * R` via Householder reflections.
///
/// For an `m x n` input returns `Q` of shape `m x p` with orthonormal columns
/// and `R` of shape `p x n` upper triangular, `p = min(m, n)`. The diagonal
/// of `R` is normalized to be nonnegative so results are deterministic.
pub fn qr_thin(m: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = m.dim();
    let p = rows.min(cols);
    let mut a = m.as_standard_layout().into_owned();
    // Householder vectors, one per elimination step, each of length rows - k.
    let mut reflectors: Vec<Array1<f64>> = Vec::with_capacity(p);

    let mut w = vec![0.0f64; cols];
    for k in 0..p {
        let mut norm2 = 0.0;
        for i in k..rows {
            let x = a[[i, k]];
            norm2 += x * x;
        }
        let norm = norm2.sqrt();
        if norm == 0.0 {
            reflectors.push(Array1::zeros(rows - k));
            continue;
        }
        let x0 = a[[k, k]];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        // v = x - alpha * e1, normalized.
        let mut v = Array1::zeros(rows - k);
        v[0] = x0 - alpha;
        for i in k + 1..rows {
            v[i - k] = a[[i, k]];
        }
        let vnorm = v.dot(&v).sqrt();
        if vnorm == 0.0 {
            reflectors.push(v);
            a[[k, k]] = alpha;
            continue;
        }
        v.mapv_inplace(|t| t / vnorm);

        // Apply I - 2 v v^T to the trailing block, two row-contiguous passes.
        let nw = cols - k;
        w[..nw].fill(0.0);
        for i in k..rows {
            let vi = v[i - k];
            if vi == 0.0 {
                continue;
            }
            let row = a.row(i);
            let rs = row.as_slice().expect("standard layout");
            for (j, wj) in w[..nw].iter_mut().enumerate() {
                *wj += vi * rs[k + j];
            }
        }
        for i in k..rows {
            let vi = 2.0 * v[i - k];
            if vi == 0.0 {
                continue;
            }
            let mut row = a.row_mut(i);
            let rs = row.as_slice_mut().expect("standard layout");
            for (j, wj) in w[..nw].iter().enumerate() {
                rs[k + j] -= vi * wj;
            }
        }
        a[[k, k]] = alpha;
        for i in k + 1..rows {
            a[[i, k]] = 0.0;
        }
        reflectors.push(v);
    }

    let mut r = Array2::zeros((p, cols));
    for i in 0..p {
        for j in i..cols {
            r[[i, j]] = a[[i, j]];
        }
    }

    // Accumulate Q = H_0 * ... * H_{p-1} * [I_p; 0].
    let mut q = Array2::zeros((rows, p));
    for j in 0..p {
        q[[j, j]] = 1.0;
    }
    let mut wq = vec![0.0f64; p];
    for k in (0..p).rev() {
        let v = &reflectors[k];
        if v.iter().all(|&t| t == 0.0) {
            continue;
        }
        wq.fill(0.0);
        for i in k..rows {
            let vi = v[i - k];
            if vi == 0.0 {
                continue;
            }
            let row = q.row(i);
            let rs = row.as_slice().expect("standard layout");
            for (j, wj) in wq.iter_mut().enumerate() {
                *wj += vi * rs[j];
            }
        }
        for i in k..rows {
            let vi = 2.0 * v[i - k];
            if vi == 0.0 {
                continue;
            }
            let mut row = q.row_mut(i);
            let rs = row.as_slice_mut().expect("standard layout");
            for (j, wj) in wq.iter().enumerate() {
                rs[j] -= vi * wj;
            }
        }
    }

    // Fix signs so diag(R) >= 0.
    for j in 0..p {
        if r[[j, j]] < 0.0 {
            for c in j..cols {
                r[[j, c]] = -r[[j, c]];
            }
            for i in 0..rows {
                q[[i, j]] = -q[[i, j]];
            }
        }
    }
    (q, r)
}

/// Result of a tolerance-truncated SVD, `M ~= u * diag(s) * vt`.
#[derive(Debug, Clone)]
pub struct SvdTruncated {
    /// `m x r`, orthonormal columns.
    pub u: Array2<f64>,
    /// Singular values, nonincreasing, strictly positive.
    pub s: Vec<f64>,
    /// `r x n`, orthonormal rows.
    pub vt: Array2<f64>,
}

impl SvdTruncated {
    /// Retained rank.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `diag(s) * vt`, the factor carried forward in TT sweeps.
    pub fn sv(&self) -> Array2<f64> {
        let mut out = self.vt.clone();
        for (i, &si) in self.s.iter().enumerate() {
            out.row_mut(i).mapv_inplace(|t| t * si);
        }
        out
    }
}

/// Truncated singular value decomposition.
///
/// The retained rank `r` is the smallest rank whose discarded tail satisfies
/// `||M - M_r||_F <= rel_tol * ||M||_F`, additionally capped by `rank_cap`.
/// A zero matrix yields rank 0 with empty factors. Computed by a thin QR
/// followed by one-sided Jacobi iteration, which keeps both singular vectors
/// orthonormal to machine precision.
pub fn svd_truncate(m: &Array2<f64>, rel_tol: f64, rank_cap: usize) -> SvdTruncated {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return SvdTruncated {
            u: Array2::zeros((rows, 0)),
            s: Vec::new(),
            vt: Array2::zeros((0, cols)),
        };
    }
    if rows < cols {
        let t = svd_truncate(&m.t().as_standard_layout().into_owned(), rel_tol, rank_cap);
        return SvdTruncated {
            u: t.vt.t().to_owned(),
            s: t.s,
            vt: t.u.t().to_owned(),
        };
    }

    // Tall or square: reduce to a square factor first when it pays off.
    let (q_pre, work) = if rows > cols {
        let (q, r) = qr_thin(m);
        (Some(q), r)
    } else {
        (None, m.as_standard_layout().into_owned())
    };
    let n = cols;

    // One-sided Jacobi on the columns of `work`, stored transposed so each
    // column lives in a contiguous row.
    let mut wt = work.t().to_owned().as_standard_layout().to_owned();
    let mut vt: Array2<f64> = Array2::eye(n);
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (a, b, c) = {
                    let rp = wt.row(p);
                    let rq = wt.row(q);
                    let sp = rp.as_slice().unwrap();
                    let sq = rq.as_slice().unwrap();
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut c = 0.0;
                    for i in 0..n {
                        a += sp[i] * sp[i];
                        b += sq[i] * sq[i];
                        c += sp[i] * sq[i];
                    }
                    (a, b, c)
                };
                if a == 0.0 || b == 0.0 {
                    continue;
                }
                if c.abs() <= JACOBI_TOL * (a * b).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_rows(&mut wt, p, q, cs, sn);
                rotate_rows(&mut vt, p, q, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values and ordering.
    let mut sv: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let r = wt.row(i);
            (r.dot(&r).sqrt(), i)
        })
        .collect();
    sv.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());

    // Suffix sums, accumulated smallest-first so that tiny tails are not
    // destroyed by cancellation against the dominant singular values.
    let mut suffix = vec![0.0f64; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + sv[i].0 * sv[i].0;
    }
    let budget = rel_tol * rel_tol * suffix[0];
    let mut rank = 0usize;
    while rank < n && rank < rank_cap && suffix[rank] > budget && sv[rank].0 > 0.0 {
        rank += 1;
    }

    let mut u = Array2::zeros((rows, rank));
    let mut vt_out = Array2::zeros((rank, n));
    for (out_i, &(s, src)) in sv.iter().take(rank).enumerate() {
        let inv = 1.0 / s;
        match &q_pre {
            Some(q) => {
                // u_col = Q * (w_src / s)
                let w = wt.row(src);
                for i in 0..rows {
                    let mut acc = 0.0;
                    let qrow = q.row(i);
                    let qs = qrow.as_slice().unwrap();
                    let ws = w.as_slice().unwrap();
                    for j in 0..n {
                        acc += qs[j] * ws[j];
                    }
                    u[[i, out_i]] = acc * inv;
                }
            }
            None => {
                for i in 0..rows {
                    u[[i, out_i]] = wt[[src, i]] * inv;
                }
            }
        }
        vt_out.row_mut(out_i).assign(&vt.row(src));
    }

    SvdTruncated {
        u,
        s: sv.iter().take(rank).map(|&(s, _)| s).collect(),
        vt: vt_out,
    }
}

fn rotate_rows(m: &mut Array2<f64>, p: usize, q: usize, cs: f64, sn: f64) {
    let n = m.ncols();
    let (mut top, mut bot) = m.multi_slice_mut((s![p, ..], s![q, ..]));
    let ts = top.as_slice_mut().unwrap();
    let bs = bot.as_slice_mut().unwrap();
    for i in 0..n {
        let x = ts[i];
        let y = bs[i];
        ts[i] = cs * x - sn * y;
        bs[i] = sn * x + cs * y;
    }
}

/// Rows selected by [`maxvol`]; the j-th pivot corresponds to the j-th
/// column of the induced interpolation identity `M[pivots, :] = I`.
#[derive(Debug, Clone)]
pub struct PivotSet {
    indices: Vec<usize>,
}

impl PivotSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Quasi-maximum-volume row selection.
///
/// Picks `r` rows of the full-column-rank `n x r` matrix `m` such that every
/// entry of `m * m[rows, :]^{-1}` has modulus at most `1 + dominance_tol`.
/// Starts from the pivot rows of a row-pivoted LU factorization and then
/// performs single-row swaps, each strictly increasing the selected
/// submatrix volume. Callers should pass an orthonormal `m` for the
/// textbook guarantees, but any full-rank matrix is accepted.
pub fn maxvol(m: &Array2<f64>, dominance_tol: f64, max_iters: usize) -> Result<PivotSet> {
    let (n, r) = m.dim();
    if r == 0 {
        return Err(Error::invalid("maxvol: zero columns"));
    }
    if n < r {
        return Err(Error::invalid(format!(
            "maxvol: need at least as many rows as columns, got {n} x {r}"
        )));
    }

    // Initial pivots from Gaussian elimination with row pivoting.
    let mut work = m.clone();
    let mut pivots = Vec::with_capacity(r);
    let mut used = vec![false; n];
    for j in 0..r {
        let mut best = usize::MAX;
        let mut best_val = 0.0;
        for i in 0..n {
            if used[i] {
                continue;
            }
            let v = work[[i, j]].abs();
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        if best == usize::MAX || best_val == 0.0 {
            return Err(Error::Singular(format!(
                "maxvol: rank-deficient input at column {j}"
            )));
        }
        used[best] = true;
        pivots.push(best);
        let pivot_row: Vec<f64> = (j..r).map(|c| work[[best, c]]).collect();
        for i in 0..n {
            if used[i] {
                continue;
            }
            let f = work[[i, j]] / pivot_row[0];
            if f == 0.0 {
                continue;
            }
            for (off, &pv) in pivot_row.iter().enumerate() {
                work[[i, j + off]] -= f * pv;
            }
        }
    }

    // B = M * M[pivots, :]^{-1}, computed row by row through an LU of the
    // pivot submatrix transpose.
    let mut sub_t = Array2::zeros((r, r));
    for (j, &pi) in pivots.iter().enumerate() {
        for c in 0..r {
            sub_t[[c, j]] = m[[pi, c]];
        }
    }
    let lu = LuFactors::new(sub_t)?;
    let mut b = Array2::zeros((n, r));
    let mut rhs = vec![0.0f64; r];
    for i in 0..n {
        for c in 0..r {
            rhs[c] = m[[i, c]];
        }
        lu.solve_in_place(&mut rhs);
        for c in 0..r {
            b[[i, c]] = rhs[c];
        }
    }

    let bound = 1.0 + dominance_tol;
    for _ in 0..max_iters {
        let mut bi = 0usize;
        let mut bj = 0usize;
        let mut bv = 0.0f64;
        for i in 0..n {
            let row = b.row(i);
            let rs = row.as_slice().unwrap();
            for (j, &v) in rs.iter().enumerate() {
                if v.abs() > bv {
                    bv = v.abs();
                    bi = i;
                    bj = j;
                }
            }
        }
        if bv <= bound {
            break;
        }
        // Swap row bi into pivot slot bj and update B by a rank-1 correction.
        let piv = b[[bi, bj]];
        let mut top: Vec<f64> = b.row(bi).to_vec();
        top[bj] -= 1.0;
        pivots[bj] = bi;
        for i in 0..n {
            let f = b[[i, bj]] / piv;
            if f == 0.0 {
                continue;
            }
            let mut row = b.row_mut(i);
            let rs = row.as_slice_mut().unwrap();
            for (c, &tv) in top.iter().enumerate() {
                rs[c] -= f * tv;
            }
        }
    }

    Ok(PivotSet { indices: pivots })
}

/// LU factorization with partial pivoting of a small square matrix.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: Array2<f64>,
    perm: Vec<usize>,
    /// Ratio of largest to smallest pivot magnitude; a cheap condition
    /// estimate adequate for warning purposes.
    pub condition_estimate: f64,
}

impl LuFactors {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (n, nc) = a.dim();
        if n != nc {
            return Err(Error::shape(format!("LU: square matrix required, got {n} x {nc}")));
        }
        let mut lu = a;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut max_piv = 0.0f64;
        let mut min_piv = f64::INFINITY;
        for k in 0..n {
            let mut best = k;
            let mut best_val = lu[[k, k]].abs();
            for i in k + 1..n {
                let v = lu[[i, k]].abs();
                if v > best_val {
                    best_val = v;
                    best = i;
                }
            }
            if best_val == 0.0 {
                return Err(Error::Singular(format!("LU: zero pivot at step {k}")));
            }
            if best != k {
                perm.swap(k, best);
                for c in 0..n {
                    let t = lu[[k, c]];
                    lu[[k, c]] = lu[[best, c]];
                    lu[[best, c]] = t;
                }
            }
            let piv = lu[[k, k]];
            max_piv = max_piv.max(piv.abs());
            min_piv = min_piv.min(piv.abs());
            for i in k + 1..n {
                let f = lu[[i, k]] / piv;
                lu[[i, k]] = f;
                if f == 0.0 {
                    continue;
                }
                for c in k + 1..n {
                    lu[[i, c]] -= f * lu[[k, c]];
                }
            }
        }
        let condition_estimate = if n == 0 { 1.0 } else { max_piv / min_piv };
        Ok(LuFactors { lu, perm, condition_estimate })
    }

    /// Solves `A x = b` in place (`b` becomes `x`).
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.perm.len();
        debug_assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc / self.lu[[i, i]];
        }
        b.copy_from_slice(&x);
    }
}

/// Solution of a small dense linear system `A X = B`.
#[derive(Debug, Clone)]
pub struct SmallSolve {
    pub x: Array2<f64>,
    /// Ratio of extreme pivot magnitudes from the LU factorization.
    pub condition_estimate: f64,
    /// Set when `condition_estimate > 1e14`; the solution is returned but
    /// should be treated with suspicion.
    pub ill_conditioned: bool,
}

/// Solves `A X = B` by LU with partial pivoting. `A` is `m x m`, `B` is
/// `m x k`. Exactly singular input is an error; ill conditioning only sets
/// a warning flag on the result.
pub fn solve_small(a: &Array2<f64>, b: &Array2<f64>) -> Result<SmallSolve> {
    let (m, _) = a.dim();
    let (bm, k) = b.dim();
    if bm != m {
        return Err(Error::shape(format!(
            "solve_small: rhs rows {bm} do not match matrix size {m}"
        )));
    }
    let lu = LuFactors::new(a.clone())?;
    let mut x = Array2::zeros((m, k));
    let mut col = vec![0.0f64; m];
    for j in 0..k {
        for i in 0..m {
            col[i] = b[[i, j]];
        }
        lu.solve_in_place(&mut col);
        for i in 0..m {
            x[[i, j]] = col[i];
        }
    }
    let cond = lu.condition_estimate;
    Ok(SmallSolve {
        x,
        condition_estimate: cond,
        ill_conditioned: cond > 1e14,
    })
}

/// Eigendecomposition of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, ordered like `values`.
    pub vectors: Array2<f64>,
}

impl TridiagEigen {
    /// First component of every eigenvector; the piece Gauss quadrature
    /// weights are made of.
    pub fn first_components(&self) -> Vec<f64> {
        (0..self.values.len()).map(|j| self.vectors[[0, j]]).collect()
    }
}

/// Implicit QL iteration with Wilkinson shifts for a symmetric tridiagonal
/// matrix given by its diagonal and subdiagonal.
pub fn symtridiag_eig(diag: &[f64], offdiag: &[f64]) -> Result<TridiagEigen> {
    let n = diag.len();
    if n == 0 {
        return Err(Error::invalid("symtridiag_eig: empty matrix"));
    }
    if offdiag.len() + 1 != n {
        return Err(Error::shape(format!(
            "symtridiag_eig: offdiagonal length {} does not match size {n}",
            offdiag.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0f64; n];
    e[..n - 1].copy_from_slice(offdiag);
    let mut z: Array2<f64> = Array2::eye(n);

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::NoConvergence(
                    "symtridiag_eig: QL iteration limit".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    // Sort ascending, carrying eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, dst]] = z[[k, src]];
        }
    }
    Ok(TridiagEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn frob(m: &Array2<f64>) -> f64 {
        m.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn qr_identity_stays_identity() {
        let eye: Array2<f64> = Array2::eye(3);
        let (q, r) = qr_thin(&eye);
        assert!(frob(&(&q - &eye)) < 1e-14);
        assert!(frob(&(&r - &eye)) < 1e-14);
    }

    #[test]
    fn qr_single_column_matches_hand_gram_schmidt() {
        let m = array![[3.0], [4.0]];
        let (q, r) = qr_thin(&m);
        assert!((q[[0, 0]] - 0.6).abs() < 1e-14);
        assert!((q[[1, 0]] - 0.8).abs() < 1e-14);
        assert!((r[[0, 0]] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn qr_random_orthonormal_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(rows, cols) in &[(20usize, 5usize), (5, 5), (4, 7), (40, 1)] {
            let m = random_matrix(&mut rng, rows, cols);
            let (q, r) = qr_thin(&m);
            let p = rows.min(cols);
            assert_eq!(q.dim(), (rows, p));
            assert_eq!(r.dim(), (p, cols));
            let qtq = q.t().dot(&q);
            let eye: Array2<f64> = Array2::eye(p);
            assert!(frob(&(&qtq - &eye)) < 1e-13, "Q^T Q deviates");
            let err = frob(&(&q.dot(&r) - &m));
            assert!(err <= 1e-13 * frob(&m).max(1.0), "QR reconstruction {err}");
            for j in 0..p {
                assert!(r[[j, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn svd_rank_one_detected() {
        let a = array![[1.0], [2.0], [-1.0]];
        let b = array![[3.0, 0.5, -2.0, 1.0]];
        let m = a.dot(&b);
        let f = svd_truncate(&m, 1e-8, 10);
        assert_eq!(f.rank(), 1);
        let rec = f.u.dot(&f.sv());
        assert!(frob(&(&rec - &m)) < 1e-12 * frob(&m));
    }

    #[test]
    fn svd_truncates_by_tail_norm() {
        let m = Array2::from_diag(&array![1.0, 1e-3, 1e-9]);
        let f = svd_truncate(&m, 1e-6, 10);
        assert_eq!(f.rank(), 2);
        // Identity with a coarse tolerance: sqrt((4-r)/4) <= 0.9 first holds
        // at r = 1.
        let eye: Array2<f64> = Array2::eye(4);
        let f = svd_truncate(&eye, 0.9, 10);
        assert_eq!(f.rank(), 1);
    }

    #[test]
    fn svd_zero_matrix_rank_zero() {
        let m = Array2::zeros((5, 3));
        let f = svd_truncate(&m, 1e-10, 10);
        assert_eq!(f.rank(), 0);
        assert_eq!(f.u.dim(), (5, 0));
        assert_eq!(f.vt.dim(), (0, 3));
    }

    #[test]
    fn svd_rank_cap_respected_and_factors_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(rows, cols) in &[(30usize, 8usize), (8, 30), (12, 12)] {
            let m = random_matrix(&mut rng, rows, cols);
            let f = svd_truncate(&m, 0.0, 5);
            assert_eq!(f.rank(), 5);
            let utu = f.u.t().dot(&f.u);
            let vvt = f.vt.dot(&f.vt.t());
            let eye: Array2<f64> = Array2::eye(5);
            assert!(frob(&(&utu - &eye)) < 1e-13);
            assert!(frob(&(&vvt - &eye)) < 1e-13);
            for w in f.s.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn svd_full_reconstruction_error_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let rows = rng.random_range(2..40);
            let cols = rng.random_range(2..40);
            let m = random_matrix(&mut rng, rows, cols);
            let tol = 10f64.powf(rng.random_range(-12.0..-0.5));
            let f = svd_truncate(&m, tol, usize::MAX);
            let rec = f.u.dot(&f.sv());
            let err = frob(&(&rec - &m));
            assert!(
                err <= tol * frob(&m) + 1e-12 * frob(&m),
                "tail bound violated: err {err}, tol {tol}"
            );
        }
    }

    #[test]
    fn maxvol_identity_selects_all_rows() {
        let eye: Array2<f64> = Array2::eye(4);
        let p = maxvol(&eye, 0.01, 100).unwrap();
        assert_eq!(p.indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn maxvol_single_column_picks_largest_entry() {
        let m = array![[1.0], [2.0], [3.0]];
        let p = maxvol(&m, 0.01, 100).unwrap();
        assert_eq!(p.indices(), &[2]);
    }

    #[test]
    fn maxvol_rejects_rank_deficient() {
        let m = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        assert!(maxvol(&m, 0.01, 100).is_err());
    }

    fn subset_volume(m: &Array2<f64>, rows: &[usize]) -> f64 {
        let r = rows.len();
        let mut sub = Array2::zeros((r, r));
        for (i, &ri) in rows.iter().enumerate() {
            for j in 0..r {
                sub[[i, j]] = m[[ri, j]];
            }
        }
        match LuFactors::new(sub) {
            Ok(lu) => {
                let mut det: f64 = 1.0;
                for k in 0..r {
                    det *= lu.lu[[k, k]];
                }
                det.abs()
            }
            Err(_) => 0.0,
        }
    }

    fn max_volume_exhaustive(m: &Array2<f64>, r: usize) -> f64 {
        let n = m.nrows();
        let mut best = 0.0f64;
        let mut idx: Vec<usize> = (0..r).collect();
        loop {
            best = best.max(subset_volume(m, &idx));
            // next combination
            let mut i = r;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] != i + n - r {
                    break;
                }
            }
            if idx[i] == i + n - r {
                return best;
            }
            idx[i] += 1;
            for j in i + 1..r {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn maxvol_dominance_and_near_optimal_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let g = random_matrix(&mut rng, 20, 5);
            let (q, _) = qr_thin(&g);
            let p = maxvol(&q, 0.01, 100).unwrap();
            // Dominance: |Q * Q_L^{-1}| <= 1.01 everywhere.
            let mut sub = Array2::zeros((5, 5));
            for (j, &pi) in p.indices().iter().enumerate() {
                for c in 0..5 {
                    sub[[j, c]] = q[[pi, c]];
                }
            }
            let solved = solve_small(&sub.t().to_owned(), &q.t().to_owned()).unwrap();
            let b = solved.x.t().to_owned();
            let max_entry = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(max_entry <= 1.01 + 1e-9, "dominance violated: {max_entry}");
            // Volume within factor 5 of the exhaustive optimum.
            let vol = subset_volume(&q, p.indices());
            let best = max_volume_exhaustive(&q, 5);
            assert!(vol >= 0.2 * best, "volume {vol} too small vs {best}");
        }
    }

    #[test]
    fn solve_small_diagonal() {
        let a = Array2::from_diag(&array![2.0, 4.0]);
        let b = array![[2.0], [8.0]];
        let s = solve_small(&a, &b).unwrap();
        assert!((s.x[[0, 0]] - 1.0).abs() < 1e-14);
        assert!((s.x[[1, 0]] - 2.0).abs() < 1e-14);
        assert!(!s.ill_conditioned);
    }

    #[test]
    fn solve_small_identity_returns_rhs() {
        let a: Array2<f64> = Array2::eye(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_matrix(&mut rng, 6, 4);
        let s = solve_small(&a, &b).unwrap();
        assert!(frob(&(&s.x - &b)) < 1e-14);
    }

    #[test]
    fn solve_small_random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = random_matrix(&mut rng, 30, 30);
        let a = g.t().dot(&g) + Array2::<f64>::eye(30);
        let b = random_matrix(&mut rng, 30, 3);
        let s = solve_small(&a, &b).unwrap();
        let res = frob(&(&a.dot(&s.x) - &b));
        assert!(res <= 1e-10 * frob(&b).max(1.0), "residual {res}");
    }

    #[test]
    fn solve_small_rejects_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![[1.0], [1.0]];
        assert!(solve_small(&a, &b).is_err());
    }

    #[test]
    fn solve_small_flags_ill_conditioned() {
        let a = Array2::from_diag(&array![1.0, 1e-16]);
        let b = array![[1.0], [1.0]];
        let s = solve_small(&a, &b).unwrap();
        assert!(s.ill_conditioned);
    }

    #[test]
    fn tridiag_scalar_and_two_by_two() {
        let e = symtridiag_eig(&[5.0], &[]).unwrap();
        assert!((e.values[0] - 5.0).abs() < 1e-14);
        assert!((e.vectors[[0, 0]].abs() - 1.0).abs() < 1e-14);

        // [[0, 1], [1, 0]] has eigenvalues -1 and 1.
        let e = symtridiag_eig(&[0.0, 0.0], &[1.0]).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tridiag_hermite_three_nodes() {
        // Jacobi matrix of probabilists' Hermite, n = 3: diag 0,
        // offdiag sqrt(1), sqrt(2); roots are -sqrt(3), 0, sqrt(3).
        let e = symtridiag_eig(&[0.0, 0.0, 0.0], &[1.0, 2f64.sqrt()]).unwrap();
        let r3 = 3f64.sqrt();
        assert!((e.values[0] + r3).abs() < 1e-13);
        assert!(e.values[1].abs() < 1e-13);
        assert!((e.values[2] - r3).abs() < 1e-13);
    }

    #[test]
    fn tridiag_reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in [2usize, 5, 16, 33] {
            let diag: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let off: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let e = symtridiag_eig(&diag, &off).unwrap();
            for w in e.values.windows(2) {
                assert!(w[0] <= w[1]);
            }
            let vtv = e.vectors.t().dot(&e.vectors);
            let eye: Array2<f64> = Array2::eye(n);
            assert!(frob(&(&vtv - &eye)) < 1e-12);
            // T v = lambda v per pair.
            for j in 0..n {
                for i in 0..n {
                    let mut tv = diag[i] * e.vectors[[i, j]];
                    if i > 0 {
                        tv += off[i - 1] * e.vectors[[i - 1, j]];
                    }
                    if i + 1 < n {
                        tv += off[i] * e.vectors[[i + 1, j]];
                    }
                    assert!(
                        (tv - e.values[j] * e.vectors[[i, j]]).abs() < 1e-12,
                        "reconstruction failed at ({i},{j})"
                    );
                }
            }
        }
    }
}
