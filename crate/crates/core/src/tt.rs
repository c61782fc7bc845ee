//! Tensor-train tensors and operators.
//!
//! A tensor `v(j_0, ..., j_d)` is stored as a chain of order-3 blocks
//! `v^(k)` of shape `(r_{k-1}, n_k, r_k)` with boundary ranks
//! `r_{-1} = r_d = 1`:
//!
//! ```text
//! v(j_0,...,j_d) = sum over alpha of
//!     v^(0)[1, j_0, a_0] v^(1)[a_0, j_1, a_1] ... v^(d)[a_{d-1}, j_d, 1]
//! ```
//!
//! Blocks are kept in standard (row-major) layout, so the two foldings used
//! throughout — the left folding `(r_{k-1} n_k) x r_k` with the rank index
//! slowest, and the right folding `r_{k-1} x (n_k r_k)` with the mode index
//! slowest — are plain reshapes.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayD, IxDyn};
use rand::Rng;

use crate::dense::{qr_thin, svd_truncate};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Default ceiling on the number of entries [`TtTensor::full_expand`] will
/// materialize.
pub const FULL_EXPAND_CAP: usize = 1_000_000;

/// A full multi-level index, one entry per mode.
pub type MultiIndex = Vec<usize>;

/// Orthogonalization direction for TT sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

/// Left folding `(r_{k-1} n_k) x r_k` of a TT block.
pub fn fold_left(b: &Array3<f64>) -> Array2<f64> {
    let (r0, n, r1) = b.dim();
    b.to_shape((r0 * n, r1)).unwrap().into_owned()
}

/// Right folding `r_{k-1} x (n_k r_k)` of a TT block.
pub fn fold_right(b: &Array3<f64>) -> Array2<f64> {
    let (r0, n, r1) = b.dim();
    b.to_shape((r0, n * r1)).unwrap().into_owned()
}

/// Inverse of [`fold_left`].
pub fn unfold_left(m: &Array2<f64>, n: usize) -> Array3<f64> {
    let (rn, r1) = m.dim();
    debug_assert_eq!(rn % n, 0);
    m.to_shape((rn / n, n, r1)).unwrap().into_owned()
}

/// Inverse of [`fold_right`].
pub fn unfold_right(m: &Array2<f64>, n: usize) -> Array3<f64> {
    let (r0, nr) = m.dim();
    debug_assert_eq!(nr % n, 0);
    m.to_shape((r0, n, nr / n)).unwrap().into_owned()
}

/// Tensor in tensor-train format.
#[derive(Debug, Clone)]
pub struct TtTensor {
    blocks: Vec<Array3<f64>>,
}

impl TtTensor {
    /// Wraps a block chain, validating boundary ranks and rank matching.
    pub fn new(blocks: Vec<Array3<f64>>) -> Result<TtTensor> {
        if blocks.is_empty() {
            return Err(Error::invalid("TtTensor: no blocks"));
        }
        if blocks[0].dim().0 != 1 {
            return Err(Error::shape(format!(
                "TtTensor: first block has left rank {}, expected 1",
                blocks[0].dim().0
            )));
        }
        if blocks.last().unwrap().dim().2 != 1 {
            return Err(Error::shape(format!(
                "TtTensor: last block has right rank {}, expected 1",
                blocks.last().unwrap().dim().2
            )));
        }
        for k in 0..blocks.len() {
            let (r0, n, r1) = blocks[k].dim();
            if n == 0 || r0 == 0 || r1 == 0 {
                return Err(Error::shape(format!("TtTensor: block {k} has a zero dimension")));
            }
            if k + 1 < blocks.len() && r1 != blocks[k + 1].dim().0 {
                return Err(Error::shape(format!(
                    "TtTensor: rank mismatch between blocks {k} and {}: {} vs {}",
                    k + 1,
                    r1,
                    blocks[k + 1].dim().0
                )));
            }
        }
        Ok(TtTensor { blocks })
    }

    pub(crate) fn from_blocks_unchecked(blocks: Vec<Array3<f64>>) -> TtTensor {
        TtTensor { blocks }
    }

    /// Number of modes (`d + 1` in the index convention above).
    pub fn num_modes(&self) -> usize {
        self.blocks.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim().1).collect()
    }

    /// Interior ranks `r_0, ..., r_{d-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.blocks[..self.blocks.len() - 1]
            .iter()
            .map(|b| b.dim().2)
            .collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn block(&self, k: usize) -> &Array3<f64> {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[Array3<f64>] {
        &self.blocks
    }

    /// Rank-1 tensor from per-mode factor vectors.
    pub fn rank_one(factors: &[Vec<f64>]) -> Result<TtTensor> {
        if factors.is_empty() {
            return Err(Error::invalid("rank_one: no factors"));
        }
        let blocks = factors
            .iter()
            .map(|f| {
                Array3::from_shape_vec((1, f.len(), 1), f.clone())
                    .map_err(|_| Error::invalid("rank_one: empty factor"))
            })
            .collect::<Result<Vec<_>>>()?;
        TtTensor::new(blocks)
    }

    /// All-zero tensor with unit ranks.
    pub fn zeros(mode_sizes: &[usize]) -> Result<TtTensor> {
        TtTensor::rank_one(&mode_sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>())
    }

    /// Constant tensor with unit ranks.
    pub fn constant(mode_sizes: &[usize], value: f64) -> Result<TtTensor> {
        let mut factors: Vec<Vec<f64>> =
            mode_sizes.iter().map(|&n| vec![1.0; n]).collect();
        if let Some(f) = factors.first_mut() {
            f.iter_mut().for_each(|x| *x = value);
        }
        TtTensor::rank_one(&factors)
    }

    /// Random TT tensor with entries uniform in `[-1, 1)`; ranks are clamped
    /// to feasible values. Intended for tests and initial guesses.
    pub fn random<R: Rng>(mode_sizes: &[usize], ranks: &[usize], rng: &mut R) -> Result<TtTensor> {
        let d1 = mode_sizes.len();
        if d1 == 0 {
            return Err(Error::invalid("random: no modes"));
        }
        if ranks.len() + 1 != d1 {
            return Err(Error::shape(format!(
                "random: {} interior ranks needed, got {}",
                d1 - 1,
                ranks.len()
            )));
        }
        let mut blocks = Vec::with_capacity(d1);
        for k in 0..d1 {
            let r0 = if k == 0 { 1 } else { ranks[k - 1].max(1) };
            let r1 = if k == d1 - 1 { 1 } else { ranks[k].max(1) };
            blocks.push(Array3::from_shape_fn((r0, mode_sizes[k], r1), |_| {
                rng.random::<f64>() * 2.0 - 1.0
            }));
        }
        TtTensor::new(blocks)
    }

    /// Evaluates a single entry.
    pub fn element(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.num_modes() {
            return Err(Error::shape(format!(
                "element: index length {} vs {} modes",
                idx.len(),
                self.num_modes()
            )));
        }
        let mut carry: Vec<f64> = vec![1.0];
        for (k, b) in self.blocks.iter().enumerate() {
            let (r0, n, r1) = b.dim();
            if idx[k] >= n {
                return Err(Error::invalid(format!(
                    "element: index {} out of range for mode {k} of size {n}",
                    idx[k]
                )));
            }
            let mut next = vec![0.0f64; r1];
            for a in 0..r0 {
                let ca = carry[a];
                if ca == 0.0 {
                    continue;
                }
                for (b_idx, nv) in next.iter_mut().enumerate() {
                    *nv += ca * b[[a, idx[k], b_idx]];
                }
            }
            carry = next;
        }
        Ok(carry[0])
    }

    /// Expands to a dense array; errors above [`FULL_EXPAND_CAP`] entries.
    pub fn full_expand(&self) -> Result<ArrayD<f64>> {
        self.full_expand_with_cap(FULL_EXPAND_CAP)
    }

    pub fn full_expand_with_cap(&self, cap: usize) -> Result<ArrayD<f64>> {
        let sizes = self.mode_sizes();
        let total: usize = sizes.iter().try_fold(1usize, |acc, &n| {
            acc.checked_mul(n).filter(|&t| t <= cap)
        }).ok_or_else(|| {
            Error::invalid(format!("full_expand: more than {cap} entries"))
        })?;
        let mut acc = fold_left(&self.blocks[0]); // (n_0, r_0), left rank 1
        for b in &self.blocks[1..] {
            let m = acc.nrows();
            let (_, n, r1) = b.dim();
            let tmp = acc.dot(&fold_right(b)); // (m, n * r1)
            acc = tmp.to_shape((m * n, r1)).unwrap().into_owned();
        }
        debug_assert_eq!(acc.dim(), (total, 1));
        let flat: Vec<f64> = acc.column(0).to_vec();
        Ok(ArrayD::from_shape_vec(IxDyn(&sizes), flat).unwrap())
    }

    /// Frobenius inner product with another TT tensor of the same mode sizes.
    pub fn inner(&self, other: &TtTensor) -> Result<f64> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::shape("inner: mode sizes differ"));
        }
        // carry C has shape (r^self_k, r^other_k)
        let u0 = fold_left(&self.blocks[0]); // (n0, r)
        let v0 = fold_left(&other.blocks[0]);
        let mut c = u0.t().dot(&v0);
        for k in 1..self.num_modes() {
            let vb = &other.blocks[k];
            let (_, n, rv1) = vb.dim();
            let d = c.dot(&fold_right(vb)); // (ru, n * rv1)
            let ru = d.nrows();
            let d = d.to_shape((ru * n, rv1)).unwrap().into_owned();
            c = fold_left(&self.blocks[k]).t().dot(&d);
        }
        Ok(c[[0, 0]])
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.inner(self).map(|v| v.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Scales the tensor by a constant.
    pub fn scale(&self, s: f64) -> TtTensor {
        let mut blocks = self.blocks.clone();
        blocks[0].mapv_inplace(|v| v * s);
        TtTensor { blocks }
    }

    /// Adds another TT tensor; ranks add blockwise.
    pub fn add(&self, other: &TtTensor) -> Result<TtTensor> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::shape("add: mode sizes differ"));
        }
        let d1 = self.num_modes();
        if d1 == 1 {
            let mut b = self.blocks[0].clone();
            b += &other.blocks[0];
            return Ok(TtTensor { blocks: vec![b] });
        }
        let mut blocks = Vec::with_capacity(d1);
        for k in 0..d1 {
            let a = &self.blocks[k];
            let b = &other.blocks[k];
            let (ar0, n, ar1) = a.dim();
            let (br0, _, br1) = b.dim();
            let block = if k == 0 {
                let mut m = Array3::zeros((1, n, ar1 + br1));
                for j in 0..n {
                    for c in 0..ar1 {
                        m[[0, j, c]] = a[[0, j, c]];
                    }
                    for c in 0..br1 {
                        m[[0, j, ar1 + c]] = b[[0, j, c]];
                    }
                }
                m
            } else if k == d1 - 1 {
                let mut m = Array3::zeros((ar0 + br0, n, 1));
                for j in 0..n {
                    for r in 0..ar0 {
                        m[[r, j, 0]] = a[[r, j, 0]];
                    }
                    for r in 0..br0 {
                        m[[ar0 + r, j, 0]] = b[[r, j, 0]];
                    }
                }
                m
            } else {
                let mut m = Array3::zeros((ar0 + br0, n, ar1 + br1));
                for j in 0..n {
                    for r in 0..ar0 {
                        for c in 0..ar1 {
                            m[[r, j, c]] = a[[r, j, c]];
                        }
                    }
                    for r in 0..br0 {
                        for c in 0..br1 {
                            m[[ar0 + r, j, ar1 + c]] = b[[r, j, c]];
                        }
                    }
                }
                m
            };
            blocks.push(block);
        }
        Ok(TtTensor { blocks })
    }

    /// Returns an orthogonalized copy. After `Left`, every left folding of
    /// blocks `0..d` has orthonormal columns; after `Right`, every right
    /// folding of blocks `1..=d` has orthonormal rows. The represented
    /// tensor is unchanged up to roundoff.
    pub fn orthogonalize(&self, dir: Direction) -> TtTensor {
        let mut blocks = self.blocks.clone();
        let d1 = blocks.len();
        match dir {
            Direction::Left => {
                for k in 0..d1 - 1 {
                    let n = blocks[k].dim().1;
                    let (q, r) = qr_thin(&fold_left(&blocks[k]));
                    blocks[k] = unfold_left(&q, n);
                    let nb = blocks[k + 1].dim().1;
                    let carried = r.dot(&fold_right(&blocks[k + 1]));
                    blocks[k + 1] = unfold_right(&carried, nb);
                }
            }
            Direction::Right => {
                for k in (1..d1).rev() {
                    let n = blocks[k].dim().1;
                    let m = fold_right(&blocks[k]);
                    let (q, r) = qr_thin(&m.t().as_standard_layout().into_owned());
                    blocks[k] = unfold_right(&q.t().as_standard_layout().into_owned(), n);
                    let nb = blocks[k - 1].dim().1;
                    let carried = fold_left(&blocks[k - 1])
                        .dot(&r.t().as_standard_layout().into_owned());
                    blocks[k - 1] = unfold_left(&carried, nb);
                }
            }
        }
        TtTensor { blocks }
    }

    /// TT rounding: recompresses ranks so the result differs from the input
    /// by at most `rel_tol` in relative Frobenius norm, with every rank
    /// additionally capped by `rank_cap`. Each of the `d` truncation steps
    /// runs at `rel_tol / sqrt(d)` so errors accumulate within budget.
    pub fn round(&self, rel_tol: f64, rank_cap: usize) -> TtTensor {
        let d1 = self.num_modes();
        if d1 == 1 {
            return self.clone();
        }
        let steps = (d1 - 1) as f64;
        let tol_step = rel_tol / steps.sqrt();
        let mut v = self.orthogonalize(Direction::Left);
        for k in (1..d1).rev() {
            let n = v.blocks[k].dim().1;
            let m = fold_right(&v.blocks[k]);
            let f = svd_truncate(&m, tol_step, rank_cap);
            if f.rank() == 0 {
                return TtTensor::zeros(&self.mode_sizes()).unwrap();
            }
            v.blocks[k] = unfold_right(&f.vt, n);
            let mut carry = f.u; // (r_{k-1}, p) columns scaled by s
            for (j, &s) in f.s.iter().enumerate() {
                carry.column_mut(j).mapv_inplace(|t| t * s);
            }
            let nb = v.blocks[k - 1].dim().1;
            let carried = fold_left(&v.blocks[k - 1]).dot(&carry);
            v.blocks[k - 1] = unfold_left(&carried, nb);
        }
        v
    }

    /// Values of the interface `U^{(>k)}` at explicit index rows.
    ///
    /// `rows[t]` lists indices for modes `k+1, ..., d`; the result has shape
    /// `(r_k, rows.len())`. For `k = d` the result is a row of ones.
    pub fn right_interface_at(&self, k: usize, rows: &[MultiIndex]) -> Result<Array2<f64>> {
        let d1 = self.num_modes();
        let rk = if k + 1 < d1 { self.blocks[k + 1].dim().0 } else { 1 };
        let mut out = Array2::zeros((rk, rows.len()));
        for (t, row) in rows.iter().enumerate() {
            if row.len() != d1 - 1 - k {
                return Err(Error::shape(format!(
                    "right_interface_at: row {t} has length {}, expected {}",
                    row.len(),
                    d1 - 1 - k
                )));
            }
            let mut w: Vec<f64> = vec![1.0];
            for (off, &j) in row.iter().enumerate().rev() {
                let b = &self.blocks[k + 1 + off];
                let (r0, n, r1) = b.dim();
                if j >= n {
                    return Err(Error::invalid(format!(
                        "right_interface_at: index {j} out of range for mode {} of size {n}",
                        k + 1 + off
                    )));
                }
                let mut nw = vec![0.0f64; r0];
                for (a, nv) in nw.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..r1 {
                        acc += b[[a, j, c]] * w[c];
                    }
                    *nv = acc;
                }
                w = nw;
            }
            for (a, &val) in w.iter().enumerate() {
                out[[a, t]] = val;
            }
        }
        Ok(out)
    }

    /// Values of the interface `U^{(<k)}` at explicit index rows.
    ///
    /// `rows[t]` lists indices for modes `0, ..., k-1`; the result has shape
    /// `(rows.len(), r_{k-1})`.
    pub fn left_interface_at(&self, k: usize, rows: &[MultiIndex]) -> Result<Array2<f64>> {
        let rk = if k == 0 { 1 } else { self.blocks[k - 1].dim().2 };
        let mut out = Array2::zeros((rows.len(), rk));
        for (t, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::shape(format!(
                    "left_interface_at: row {t} has length {}, expected {k}",
                    row.len()
                )));
            }
            let mut w: Vec<f64> = vec![1.0];
            for (off, &j) in row.iter().enumerate() {
                let b = &self.blocks[off];
                let (r0, n, r1) = b.dim();
                if j >= n {
                    return Err(Error::invalid(format!(
                        "left_interface_at: index {j} out of range for mode {off} of size {n}"
                    )));
                }
                let mut nw = vec![0.0f64; r1];
                for a in 0..r0 {
                    let wa = w[a];
                    if wa == 0.0 {
                        continue;
                    }
                    for (c, nv) in nw.iter_mut().enumerate() {
                        *nv += wa * b[[a, j, c]];
                    }
                }
                w = nw;
            }
            for (c, &val) in w.iter().enumerate() {
                out[[t, c]] = val;
            }
        }
        Ok(out)
    }

    // ---- binary serialization -------------------------------------------

    /// Writes the tensor in the `TTB1` binary format: a 4-byte magic tag,
    /// little-endian u64 mode count, mode sizes, interior ranks, then block
    /// entries as little-endian f64 in row-major (rank-major) order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"TTB1")?;
        let d1 = self.num_modes() as u64;
        w.write_all(&d1.to_le_bytes())?;
        for n in self.mode_sizes() {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for r in self.ranks() {
            w.write_all(&(r as u64).to_le_bytes())?;
        }
        let mut buf = Vec::new();
        for b in &self.blocks {
            buf.clear();
            for &v in b.as_standard_layout().iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a tensor written by [`TtTensor::write_to`]. Parse failures name
    /// the byte offset and, for truncation, expected versus available sizes.
    pub fn read_from<R: Read>(r: &mut R) -> Result<TtTensor> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        read_exact_at(r, &mut magic, &mut offset, "magic tag")?;
        if &magic != b"TTB1" {
            return Err(Error::Parse {
                offset: 0,
                msg: format!("bad magic {:?}, expected \"TTB1\"", magic),
            });
        }
        let d1 = read_u64(r, &mut offset, "mode count")?;
        if d1 == 0 {
            return Err(Error::Parse {
                offset: 4,
                msg: "mode count is zero".into(),
            });
        }
        if d1 > 1 << 20 {
            return Err(Error::Parse {
                offset: 4,
                msg: format!("implausible mode count {d1}"),
            });
        }
        let d1 = d1 as usize;
        let mut sizes = Vec::with_capacity(d1);
        for k in 0..d1 {
            let at = offset;
            let n = read_u64(r, &mut offset, "mode size")?;
            if n == 0 || n > 1 << 40 {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("invalid size {n} for mode {k}"),
                });
            }
            sizes.push(n as usize);
        }
        let mut ranks = Vec::with_capacity(d1 - 1);
        for k in 0..d1 - 1 {
            let at = offset;
            let rk = read_u64(r, &mut offset, "rank")?;
            if rk == 0 || rk > 1 << 30 {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("invalid rank {rk} at bond {k}"),
                });
            }
            ranks.push(rk as usize);
        }
        let mut blocks = Vec::with_capacity(d1);
        for k in 0..d1 {
            let r0 = if k == 0 { 1 } else { ranks[k - 1] };
            let r1 = if k == d1 - 1 { 1 } else { ranks[k] };
            let count = r0
                .checked_mul(sizes[k])
                .and_then(|t| t.checked_mul(r1))
                .and_then(|t| t.checked_mul(8))
                .ok_or(Error::Parse {
                    offset,
                    msg: format!("block {k} size overflows"),
                })?;
            let mut raw = vec![0u8; count];
            read_exact_at(r, &mut raw, &mut offset, &format!("block {k} payload"))?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push(Array3::from_shape_vec((r0, sizes[k], r1), vals).unwrap());
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Parse {
                offset,
                msg: "trailing data after final block".into(),
            });
        }
        TtTensor::new(blocks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TtTensor> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        TtTensor::read_from(&mut f)
    }
}

fn read_u64<R: Read>(r: &mut R, offset: &mut u64, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_at(r, &mut b, offset, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    let mut filled = 0usize;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::Parse {
                offset: *offset,
                msg: format!(
                    "truncated stream while reading {what}: expected {} more bytes, got {filled}",
                    buf.len()
                ),
            });
        }
        filled += n;
    }
    *offset += buf.len() as u64;
    Ok(())
}

/// One block of a TT operator, tagged by its structure.
#[derive(Debug, Clone)]
pub enum MatrixBlock {
    /// `(R_{k-1}, n_out, n_in, R_k)`.
    Dense(Array4<f64>),
    /// `(R_{k-1}, n, R_k)` holding the diagonal `A(j, j)`.
    Diagonal(Array3<f64>),
    /// A grid of sparse spatial operators, `mats[gl * r_right + gr]`, all of
    /// identical square size.
    SparseSpatial {
        r_left: usize,
        r_right: usize,
        n: usize,
        mats: Vec<CsrMatrix>,
    },
}

impl MatrixBlock {
    /// `(R_{k-1}, n_out, n_in, R_k)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        match self {
            MatrixBlock::Dense(a) => a.dim(),
            MatrixBlock::Diagonal(a) => {
                let (r0, n, r1) = a.dim();
                (r0, n, n, r1)
            }
            MatrixBlock::SparseSpatial { r_left, r_right, n, .. } => (*r_left, *n, *n, *r_right),
        }
    }
}

/// Linear operator in TT (matrix product operator) form.
#[derive(Debug, Clone)]
pub struct TtMatrix {
    blocks: Vec<MatrixBlock>,
}

impl TtMatrix {
    pub fn new(blocks: Vec<MatrixBlock>) -> Result<TtMatrix> {
        if blocks.is_empty() {
            return Err(Error::invalid("TtMatrix: no blocks"));
        }
        if blocks[0].dims().0 != 1 || blocks.last().unwrap().dims().3 != 1 {
            return Err(Error::shape("TtMatrix: boundary ranks must be 1"));
        }
        for k in 0..blocks.len() {
            let d = blocks[k].dims();
            if let MatrixBlock::SparseSpatial { r_left, r_right, mats, n } = &blocks[k] {
                if mats.len() != r_left * r_right {
                    return Err(Error::shape(format!(
                        "TtMatrix: block {k} expects {} sparse operators, got {}",
                        r_left * r_right,
                        mats.len()
                    )));
                }
                if mats.iter().any(|m| m.n != *n) {
                    return Err(Error::shape(format!("TtMatrix: block {k} has mixed sizes")));
                }
            }
            if k + 1 < blocks.len() && d.3 != blocks[k + 1].dims().0 {
                return Err(Error::shape(format!(
                    "TtMatrix: rank mismatch between blocks {k} and {}",
                    k + 1
                )));
            }
        }
        Ok(TtMatrix { blocks })
    }

    pub fn num_modes(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize) -> &MatrixBlock {
        &self.blocks[k]
    }

    /// Identity operator on the given mode sizes (rank 1, diagonal blocks).
    pub fn identity(mode_sizes: &[usize]) -> Result<TtMatrix> {
        if mode_sizes.is_empty() {
            return Err(Error::invalid("identity: no modes"));
        }
        TtMatrix::new(
            mode_sizes
                .iter()
                .map(|&n| MatrixBlock::Diagonal(Array3::ones((1, n, 1))))
                .collect(),
        )
    }

    /// Applies the operator to a TT tensor. Output ranks are the products of
    /// operator and argument ranks; the composite output rank index orders
    /// the operator rank slowest.
    pub fn matvec(&self, v: &TtTensor) -> Result<TtTensor> {
        if self.num_modes() != v.num_modes() {
            return Err(Error::shape("matvec: mode count mismatch"));
        }
        let mut blocks = Vec::with_capacity(self.num_modes());
        for k in 0..self.num_modes() {
            let vb = v.block(k);
            let (vr0, vn, vr1) = vb.dim();
            let (ar0, n_out, n_in, ar1) = self.blocks[k].dims();
            if n_in != vn {
                return Err(Error::shape(format!(
                    "matvec: block {k} expects mode size {n_in}, tensor has {vn}"
                )));
            }
            let mut out = Array3::zeros((ar0 * vr0, n_out, ar1 * vr1));
            match &self.blocks[k] {
                MatrixBlock::Dense(a) => {
                    for gl in 0..ar0 {
                        for al in 0..vr0 {
                            for j in 0..n_out {
                                for gr in 0..ar1 {
                                    for be in 0..vr1 {
                                        let mut acc = 0.0;
                                        for jp in 0..n_in {
                                            acc += a[[gl, j, jp, gr]] * vb[[al, jp, be]];
                                        }
                                        out[[gl * vr0 + al, j, gr * vr1 + be]] = acc;
                                    }
                                }
                            }
                        }
                    }
                }
                MatrixBlock::Diagonal(a) => {
                    for gl in 0..ar0 {
                        for al in 0..vr0 {
                            for j in 0..n_out {
                                for gr in 0..ar1 {
                                    let av = a[[gl, j, gr]];
                                    for be in 0..vr1 {
                                        out[[gl * vr0 + al, j, gr * vr1 + be]] =
                                            av * vb[[al, j, be]];
                                    }
                                }
                            }
                        }
                    }
                }
                MatrixBlock::SparseSpatial { r_left, r_right, mats, .. } => {
                    let mut xin = vec![0.0f64; n_in];
                    let mut xout = vec![0.0f64; n_out];
                    for gl in 0..*r_left {
                        for gr in 0..*r_right {
                            let m = &mats[gl * r_right + gr];
                            for al in 0..vr0 {
                                for be in 0..vr1 {
                                    for j in 0..n_in {
                                        xin[j] = vb[[al, j, be]];
                                    }
                                    m.matvec(&xin, &mut xout);
                                    for (j, &xv) in xout.iter().enumerate() {
                                        out[[gl * vr0 + al, j, gr * vr1 + be]] = xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            blocks.push(out);
        }
        TtTensor::new(blocks)
    }

    /// Dense matrix expansion for small operators (testing aid); errors when
    /// either side exceeds `cap` rows/columns.
    pub fn to_dense(&self, cap: usize) -> Result<Array2<f64>> {
        let mut rows = 1usize;
        let mut cols = 1usize;
        for b in &self.blocks {
            let (_, n_out, n_in, _) = b.dims();
            rows = rows
                .checked_mul(n_out)
                .filter(|&t| t <= cap)
                .ok_or_else(|| Error::invalid("to_dense: too many rows"))?;
            cols = cols
                .checked_mul(n_in)
                .filter(|&t| t <= cap)
                .ok_or_else(|| Error::invalid("to_dense: too many columns"))?;
        }
        // acc[(out, in), r]: dense expansion over grouped (row, col) modes
        let mut acc: Array2<f64> = Array2::ones((1, 1));
        let mut out_sz = 1usize;
        let mut in_sz = 1usize;
        for b in &self.blocks {
            let (r0, n_out, n_in, r1) = b.dims();
            let dense = match b {
                MatrixBlock::Dense(a) => a.clone(),
                MatrixBlock::Diagonal(a) => {
                    let mut full = Array4::zeros((r0, n_out, n_in, r1));
                    for gl in 0..r0 {
                        for j in 0..n_out {
                            for gr in 0..r1 {
                                full[[gl, j, j, gr]] = a[[gl, j, gr]];
                            }
                        }
                    }
                    full
                }
                MatrixBlock::SparseSpatial { r_left, r_right, mats, .. } => {
                    let mut full = Array4::zeros((r0, n_out, n_in, r1));
                    for gl in 0..*r_left {
                        for gr in 0..*r_right {
                            let d = mats[gl * r_right + gr].to_dense();
                            for j in 0..n_out {
                                for jp in 0..n_in {
                                    full[[gl, j, jp, gr]] = d[[j, jp]];
                                }
                            }
                        }
                    }
                    full
                }
            };
            let mut next = Array2::zeros((out_sz * n_out * in_sz * n_in, r1));
            for o in 0..out_sz {
                for i in 0..in_sz {
                    for j in 0..n_out {
                        for jp in 0..n_in {
                            let dst = ((o * n_out + j) * in_sz + i) * n_in + jp;
                            for gr in 0..r1 {
                                let mut accv = 0.0;
                                for gl in 0..r0 {
                                    accv += acc[[o * in_sz + i, gl]] * dense[[gl, j, jp, gr]];
                                }
                                next[[dst, gr]] += accv;
                            }
                        }
                    }
                }
            }
            out_sz *= n_out;
            in_sz *= n_in;
            acc = next;
        }
        let mut m = Array2::zeros((out_sz, in_sz));
        for o in 0..out_sz {
            for i in 0..in_sz {
                m[[o, i]] = acc[[o * in_sz + i, 0]];
            }
        }
        Ok(m)
    }
}
