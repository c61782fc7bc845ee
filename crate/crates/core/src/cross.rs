//! TT-cross approximation of black-box tensors from adaptively chosen
//! fibers.
//!
//! The driver alternates forward and backward sweeps. Each forward step
//! evaluates the fiber matrix `V(composite(a, j_k), b)` over the current
//! index sets `I_{<k} x {j_k} x J_{>k}`, orthogonalizes its left folding,
//! picks dominant rows with maxvol and stores the block in interpolation
//! form `Q Q(L,:)^{-1}`, so the resulting tensor reproduces the evaluated
//! fibers exactly at the cross points. Backward steps mirror this on the
//! right folding and rebuild the right index sets.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{maxvol, qr_thin, svd_truncate, LuFactors};
use crate::error::{Error, Result};
use crate::tt::{fold_left, fold_right, unfold_left, unfold_right, MultiIndex, TtTensor};

/// Black-box tensor evaluator with a built-in evaluation counter.
///
/// The closure receives a batch of full multi-indices and must return one
/// value per row, deterministically.
pub struct Evaluator<'a> {
    f: Box<dyn Fn(&[MultiIndex]) -> Vec<f64> + Sync + 'a>,
    count: AtomicU64,
}

impl<'a> Evaluator<'a> {
    pub fn new(f: impl Fn(&[MultiIndex]) -> Vec<f64> + Sync + 'a) -> Evaluator<'a> {
        Evaluator { f: Box::new(f), count: AtomicU64::new(0) }
    }

    /// Evaluates a batch, bumping the counter and rejecting non-finite
    /// values with the offending index in the message.
    pub fn eval(&self, batch: &[MultiIndex]) -> Result<Vec<f64>> {
        self.count.fetch_add(batch.len() as u64, Ordering::Relaxed);
        let vals = (self.f)(batch);
        if vals.len() != batch.len() {
            return Err(Error::shape(format!(
                "evaluator returned {} values for {} indices",
                vals.len(),
                batch.len()
            )));
        }
        for (i, v) in vals.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "evaluation at index {:?} returned {v}",
                    batch[i]
                )));
            }
        }
        Ok(vals)
    }

    /// Total number of tensor entries requested so far.
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// Nested interpolation index sets maintained by the cross sweeps.
///
/// `left[k]` holds the rows of `I_{<k}` (tuples over modes `0..k`), so
/// `left[0]` is the single empty row; `right[k]` holds the rows of `J_{>k}`
/// (tuples over modes `k+1..=d`), so `right[d]` is the single empty row.
#[derive(Debug, Clone)]
pub struct CrossIndexSets {
    pub left: Vec<Vec<MultiIndex>>,
    pub right: Vec<Vec<MultiIndex>>,
}

/// Extends left index rows by the mode-`k` index selected by each composite
/// pivot `a * n_k + j`.
pub fn merge_left(
    left_rows: &[MultiIndex],
    n_k: usize,
    pivots: &[usize],
) -> Result<Vec<MultiIndex>> {
    let limit = left_rows.len() * n_k;
    pivots
        .iter()
        .map(|&p| {
            if p >= limit {
                return Err(Error::invalid(format!(
                    "merge_left: pivot {p} out of composite range {limit}"
                )));
            }
            let mut row = left_rows[p / n_k].clone();
            row.push(p % n_k);
            Ok(row)
        })
        .collect()
}

/// Prepends the mode-`k` index selected by each composite pivot
/// `j * r_k + a` to the corresponding right index row.
pub fn merge_right(
    right_rows: &[MultiIndex],
    n_k: usize,
    pivots: &[usize],
) -> Result<Vec<MultiIndex>> {
    let r = right_rows.len();
    let limit = n_k * r;
    pivots
        .iter()
        .map(|&p| {
            if p >= limit {
                return Err(Error::invalid(format!(
                    "merge_right: pivot {p} out of composite range {limit}"
                )));
            }
            let mut row = Vec::with_capacity(right_rows[p % r].len() + 1);
            row.push(p / r);
            row.extend_from_slice(&right_rows[p % r]);
            Ok(row)
        })
        .collect()
}

/// Starting point for [`tt_cross`].
pub enum CrossInit {
    /// Use an existing TT decomposition; the first forward sweep
    /// orthogonalizes its blocks to seed the index sets without evaluating.
    Guess(TtTensor),
    /// Seed every right index set with `count` random rows (deduplicated)
    /// drawn from a generator with the given seed. The first forward sweep
    /// then truncates ranks by SVD instead of exact QR.
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct CrossOptions {
    /// Relative stopping tolerance between successive iterations; also the
    /// truncation tolerance of the first random-initialized sweep.
    pub rel_tol: f64,
    pub max_sweeps: usize,
    pub rank_cap: usize,
    /// Maxvol dominance slack.
    pub dominance_tol: f64,
    pub maxvol_iters: usize,
}

impl Default for CrossOptions {
    fn default() -> Self {
        CrossOptions {
            rel_tol: 1e-8,
            max_sweeps: 20,
            rank_cap: 4096,
            dominance_tol: 0.01,
            maxvol_iters: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossStats {
    /// Completed forward+backward iterations.
    pub sweeps: usize,
    /// Tensor entries requested from the evaluator during this run.
    pub evaluations: u64,
    pub converged: bool,
    /// `|v - v_prev| / |v|` at the last completed iteration.
    pub final_residual: f64,
    /// Largest rank seen at each bond over the whole run.
    pub max_bond_ranks: Vec<usize>,
    /// Index sets at termination.
    pub index_sets: CrossIndexSets,
}

/// Builds a TT approximation of the black-box tensor `f` over the given
/// mode sizes by alternating maxvol cross interpolation.
pub fn tt_cross(
    f: &Evaluator,
    mode_sizes: &[usize],
    init: CrossInit,
    opts: &CrossOptions,
) -> Result<(TtTensor, CrossStats)> {
    if mode_sizes.is_empty() {
        return Err(Error::invalid("tt_cross: no modes"));
    }
    if mode_sizes.iter().any(|&n| n == 0) {
        return Err(Error::invalid("tt_cross: zero mode size"));
    }
    if !(opts.rel_tol > 0.0 && opts.rel_tol < 1.0) {
        return Err(Error::invalid(format!(
            "tt_cross: rel_tol must lie in (0,1), got {}",
            opts.rel_tol
        )));
    }
    let d1 = mode_sizes.len();
    let base_count = f.count();

    let mut left: Vec<Vec<MultiIndex>> = vec![vec![Vec::new()]; d1];
    let mut right: Vec<Vec<MultiIndex>>;
    let mut blocks;
    let mut right_ready;
    let first_sweep_svd;
    match init {
        CrossInit::Guess(g) => {
            if g.mode_sizes() != mode_sizes {
                return Err(Error::shape(format!(
                    "tt_cross: guess has mode sizes {:?}, expected {:?}",
                    g.mode_sizes(),
                    mode_sizes
                )));
            }
            right = vec![vec![Vec::new()]; d1];
            blocks = g.blocks().to_vec();
            right_ready = false;
            first_sweep_svd = false;
        }
        CrossInit::Random { count, seed } => {
            if count == 0 {
                return Err(Error::invalid("tt_cross: random init needs count >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            right = Vec::with_capacity(d1);
            for k in 0..d1 {
                if k + 1 == d1 {
                    right.push(vec![Vec::new()]);
                    continue;
                }
                // Distinct rows, saturating at the size of the index space
                // (short tuples near the last mode have few combinations).
                let space = (k + 1..d1)
                    .try_fold(1usize, |acc, m| acc.checked_mul(mode_sizes[m]))
                    .unwrap_or(usize::MAX);
                let target = count.min(space);
                let mut rows: Vec<MultiIndex> = Vec::with_capacity(target);
                let mut attempts = 0usize;
                while rows.len() < target && attempts < 100 * target {
                    attempts += 1;
                    let row: MultiIndex = (k + 1..d1)
                        .map(|m| rng.random_range(0..mode_sizes[m]))
                        .collect();
                    if !rows.contains(&row) {
                        rows.push(row);
                    }
                }
                right.push(rows);
            }
            blocks = (0..d1)
                .map(|k| {
                    let r0 = if k == 0 { 1 } else { right[k - 1].len() };
                    ndarray::Array3::zeros((r0, mode_sizes[k], right[k].len()))
                })
                .collect();
            right_ready = true;
            first_sweep_svd = true;
        }
    }

    let mut fresh = vec![false; d1];
    // Per-bond truncation budget for the first random-init sweep: splitting
    // rel_tol over the bonds keeps the cumulative truncation within rel_tol,
    // mirroring the convention used by TT rounding.
    let bond_tol = opts.rel_tol / ((d1.saturating_sub(1)).max(1) as f64).sqrt();
    let mut max_bond_ranks = vec![1usize; d1.saturating_sub(1)];
    let mut v_prev: Option<TtTensor> = None;
    let mut sweeps = 0usize;
    let mut converged = false;
    let mut final_residual = f64::INFINITY;

    for sweep in 0..opts.max_sweeps {
        // Forward half-sweep: build left index sets.
        for k in 0..d1 {
            if right_ready && !fresh[k] {
                blocks[k] = evaluate_block(f, &left[k], mode_sizes[k], &right[k])?;
                fresh[k] = true;
                note_ranks(&mut max_bond_ranks, k, &left[k], &right[k]);
            }
            if k + 1 == d1 {
                continue;
            }
            let v_fold = fold_left(&blocks[k]);
            let (q, r_mat) = if first_sweep_svd && sweep == 0 {
                let fac = svd_truncate(&v_fold, bond_tol, opts.rank_cap);
                if fac.rank() == 0 {
                    return Err(Error::Singular(format!(
                        "tt_cross: rank collapsed to zero at mode {k}"
                    )));
                }
                let sv = fac.sv();
                (fac.u, sv)
            } else {
                qr_thin(&v_fold)
            };
            let pivots = maxvol(&q, opts.dominance_tol, opts.maxvol_iters)?;
            let q_l = gather_rows(&q, pivots.indices());
            blocks[k] = unfold_left(&interp_left(&q, &q_l)?, mode_sizes[k]);
            fresh[k] = false;
            let carry = q_l.dot(&r_mat);
            let nb = blocks[k + 1].dim().1;
            blocks[k + 1] = unfold_right(&carry.dot(&fold_right(&blocks[k + 1])), nb);
            fresh[k + 1] = false;
            left[k + 1] = merge_left(&left[k], mode_sizes[k], pivots.indices())?;
        }

        // Backward half-sweep: evaluate and rebuild right index sets.
        for k in (0..d1).rev() {
            if !fresh[k] {
                blocks[k] = evaluate_block(f, &left[k], mode_sizes[k], &right[k])?;
                fresh[k] = true;
                note_ranks(&mut max_bond_ranks, k, &left[k], &right[k]);
            }
            if k == 0 {
                continue;
            }
            let m = fold_right(&blocks[k]);
            let (q, r_mat) = qr_thin(&m.t().as_standard_layout().into_owned());
            let pivots = maxvol(&q, opts.dominance_tol, opts.maxvol_iters)?;
            let q_l = gather_rows(&q, pivots.indices());
            // V^{<k|} = Q(L,:)^{-T} Q^T
            let interp = interp_left(&q, &q_l)?; // Q Q(L,:)^{-1}, shape (n r, rho)
            blocks[k] = unfold_right(
                &interp.t().as_standard_layout().into_owned(),
                mode_sizes[k],
            );
            fresh[k] = false;
            let carry = r_mat.t().dot(&q_l.t()); // (r_{k-1}, rho)
            let nb = blocks[k - 1].dim().1;
            blocks[k - 1] = unfold_left(&fold_left(&blocks[k - 1]).dot(&carry), nb);
            fresh[k - 1] = false;
            right[k - 1] = merge_right(&right[k], mode_sizes[k], pivots.indices())?;
        }
        right_ready = true;
        sweeps = sweep + 1;

        let v = TtTensor::new(blocks.clone())?;
        if let Some(prev) = &v_prev {
            let vnorm = v.norm();
            let diff = v.add(&prev.scale(-1.0))?.norm();
            final_residual = if vnorm > 0.0 { diff / vnorm } else { diff };
            if diff <= opts.rel_tol * vnorm {
                converged = true;
                v_prev = Some(v);
                break;
            }
        }
        v_prev = Some(v);
    }

    let v = v_prev.expect("at least one sweep runs");
    let stats = CrossStats {
        sweeps,
        evaluations: f.count() - base_count,
        converged,
        final_residual,
        max_bond_ranks,
        index_sets: CrossIndexSets { left, right },
    };
    Ok((v, stats))
}

fn note_ranks(
    max_bond_ranks: &mut [usize],
    k: usize,
    left: &[MultiIndex],
    right: &[MultiIndex],
) {
    if k > 0 {
        max_bond_ranks[k - 1] = max_bond_ranks[k - 1].max(left.len());
    }
    if k < max_bond_ranks.len() {
        max_bond_ranks[k] = max_bond_ranks[k].max(right.len());
    }
}

/// Evaluates the fiber matrix over `I_{<k} x {0..n_k} x J_{>k}` with the
/// composite row index `(a, j)`, `a` slowest.
fn evaluate_block(
    f: &Evaluator,
    left: &[MultiIndex],
    n_k: usize,
    right: &[MultiIndex],
) -> Result<ndarray::Array3<f64>> {
    let rl = left.len();
    let rc = right.len();
    let mut batch = Vec::with_capacity(rl * n_k * rc);
    for lrow in left {
        for j in 0..n_k {
            for rrow in right {
                let mut idx = Vec::with_capacity(lrow.len() + 1 + rrow.len());
                idx.extend_from_slice(lrow);
                idx.push(j);
                idx.extend_from_slice(rrow);
                batch.push(idx);
            }
        }
    }
    let vals = f.eval(&batch)?;
    Ok(ndarray::Array3::from_shape_vec((rl, n_k, rc), vals).unwrap())
}

fn gather_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (t, &r) in rows.iter().enumerate() {
        out.row_mut(t).assign(&m.row(r));
    }
    out
}

/// Computes `Q Q_L^{-1}` by solving `Q_L^T X^T = Q^T` row by row.
pub(crate) fn interp_left(q: &Array2<f64>, q_l: &Array2<f64>) -> Result<Array2<f64>> {
    let lu = LuFactors::new(q_l.t().as_standard_layout().into_owned())?;
    let mut out = Array2::zeros((q.nrows(), q.ncols()));
    let mut buf = vec![0.0f64; q.ncols()];
    for i in 0..q.nrows() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = q[[i, j]];
        }
        lu.solve_in_place(&mut buf);
        for (j, &b) in buf.iter().enumerate() {
            out[[i, j]] = b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enumerate_max_err(v: &TtTensor, f: impl Fn(&[usize]) -> f64) -> (f64, f64) {
        // returns (max abs error, max abs value)
        let sizes = v.mode_sizes();
        let mut idx = vec![0usize; sizes.len()];
        let mut max_err = 0.0f64;
        let mut max_val = 0.0f64;
        loop {
            let want = f(&idx);
            let got = v.element(&idx).unwrap();
            max_err = max_err.max((want - got).abs());
            max_val = max_val.max(want.abs());
            let mut c = sizes.len();
            loop {
                if c == 0 {
                    return (max_err, max_val);
                }
                c -= 1;
                idx[c] += 1;
                if idx[c] < sizes[c] {
                    break;
                }
                idx[c] = 0;
            }
        }
    }

    #[test]
    fn merge_left_base_case_uses_selected_mode_indices() {
        let base = vec![Vec::new()];
        let merged = merge_left(&base, 5, &[3, 0]).unwrap();
        assert_eq!(merged, vec![vec![3], vec![0]]);
    }

    #[test]
    fn merge_left_unflattens_composite_with_slow_row_index() {
        let left = vec![vec![2], vec![5]];
        // composite (a=1, j=2) -> 1 * 3 + 2 = 5
        let merged = merge_left(&left, 3, &[5]).unwrap();
        assert_eq!(merged, vec![vec![5, 2]]);
    }

    #[test]
    fn merge_right_unflattens_composite_with_slow_mode_index() {
        let right = vec![vec![2], vec![5]];
        // composite (j=2, a=1) -> 2 * 2 + 1 = 5
        let merged = merge_right(&right, 3, &[5]).unwrap();
        assert_eq!(merged, vec![vec![2, 5]]);
    }

    #[test]
    fn merges_reject_out_of_range_pivots() {
        assert!(merge_left(&[vec![0]], 3, &[3]).is_err());
        assert!(merge_right(&[vec![0]], 3, &[3]).is_err());
    }

    #[test]
    fn rank_one_product_recovered_exactly() {
        let a = [1.0, -0.5, 2.0, 0.25, 3.0, -1.0];
        let b = [2.0, 0.5, 1.5, -2.0, 1.0];
        let c = [0.1, 4.0, -0.3, 1.0];
        let f = Evaluator::new(|batch: &[MultiIndex]| {
            batch.iter().map(|i| a[i[0]] * b[i[1]] * c[i[2]]).collect()
        });
        let (v, stats) = tt_cross(
            &f,
            &[6, 5, 4],
            CrossInit::Random { count: 3, seed: 7 },
            &CrossOptions { rel_tol: 1e-10, ..CrossOptions::default() },
        )
        .unwrap();
        assert_eq!(v.ranks(), vec![1, 1], "rank-1 structure should be found");
        let (err, scale) = enumerate_max_err(&v, |i| a[i[0]] * b[i[1]] * c[i[2]]);
        assert!(err <= 1e-12 * scale.max(1.0), "max err {err}");
        assert!(stats.converged);

        // No hidden evaluations: every step evaluates at most
        // r_{k-1} n_k r_k entries, twice per sweep.
        let n = [6usize, 5, 4];
        let mut per_sweep = 0u64;
        for k in 0..3 {
            let rl = if k == 0 { 1 } else { stats.max_bond_ranks[k - 1] };
            let rr = if k == 2 { 1 } else { stats.max_bond_ranks[k] };
            per_sweep += 2 * (rl * n[k] * rr) as u64;
        }
        assert!(
            stats.evaluations <= stats.sweeps as u64 * per_sweep,
            "{} evaluations exceed bound {}",
            stats.evaluations,
            stats.sweeps as u64 * per_sweep
        );
    }

    #[test]
    fn inverse_distance_tensor_matches_enumeration() {
        let f = Evaluator::new(|batch: &[MultiIndex]| {
            batch
                .iter()
                .map(|i| 1.0 / ((i[0] + i[1] + i[2] + 1) as f64))
                .collect()
        });
        let (v, _) = tt_cross(
            &f,
            &[8, 8, 8],
            CrossInit::Random { count: 10, seed: 3 },
            &CrossOptions { rel_tol: 1e-8, ..CrossOptions::default() },
        )
        .unwrap();
        let (err, scale) = enumerate_max_err(&v, |i| 1.0 / ((i[0] + i[1] + i[2] + 1) as f64));
        assert!(err <= 1e-7 * scale, "relative max error {}", err / scale);
    }

    #[test]
    fn exact_tt_tensors_recovered_from_enough_random_rows() {
        let mut seed_rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let sizes = vec![4, 5, 3, 4];
            let ranks = vec![2, 3, 2];
            let target = TtTensor::random(&sizes, &ranks, &mut seed_rng).unwrap();
            let t = &target;
            let f = Evaluator::new(move |batch: &[MultiIndex]| {
                batch.iter().map(|i| t.element(i).unwrap()).collect()
            });
            let (v, _) = tt_cross(
                &f,
                &sizes,
                CrossInit::Random { count: 5, seed: 100 + trial },
                &CrossOptions { rel_tol: 1e-10, ..CrossOptions::default() },
            )
            .unwrap();
            let (err, scale) = enumerate_max_err(&v, |i| target.element(i).unwrap());
            assert!(err <= 1e-12 * scale, "trial {trial}: max err {err} scale {scale}");
        }
    }

    #[test]
    fn guess_initialization_refines_to_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sizes = vec![5, 4, 5];
        let target = TtTensor::random(&sizes, &[3, 2], &mut rng).unwrap();
        let t = &target;
        let f = Evaluator::new(move |batch: &[MultiIndex]| {
            batch.iter().map(|i| t.element(i).unwrap()).collect()
        });
        let guess = TtTensor::random(&sizes, &[4, 4], &mut rng).unwrap();
        let (v, stats) = tt_cross(
            &f,
            &sizes,
            CrossInit::Guess(guess),
            &CrossOptions { rel_tol: 1e-10, ..CrossOptions::default() },
        )
        .unwrap();
        assert!(stats.converged);
        let (err, scale) = enumerate_max_err(&v, |i| target.element(i).unwrap());
        assert!(err <= 1e-10 * scale, "max err {err}");
    }

    #[test]
    fn index_sets_stay_nested_and_interpolation_holds() {
        let f = Evaluator::new(|batch: &[MultiIndex]| {
            batch
                .iter()
                .map(|i| (1.0 + i[0] as f64).ln() + (i[1] as f64) * 0.3 + ((i[2] * i[1]) as f64).sqrt())
                .collect()
        });
        let sizes = [6usize, 6, 6];
        let (v, stats) = tt_cross(
            &f,
            &sizes,
            CrossInit::Random { count: 4, seed: 11 },
            &CrossOptions { rel_tol: 1e-9, ..CrossOptions::default() },
        )
        .unwrap();
        let sets = &stats.index_sets;

        // Nestedness: every row of I_{<k+1} extends a row of I_{<k}.
        for k in 0..sizes.len() - 1 {
            for row in &sets.left[k + 1] {
                let (head, tail) = row.split_at(row.len() - 1);
                assert!(sets.left[k].iter().any(|r| r == head), "left rows not nested");
                assert!(tail[0] < sizes[k]);
            }
        }
        for k in (1..sizes.len()).rev() {
            for row in &sets.right[k - 1] {
                let tail = &row[1..];
                assert!(
                    sets.right[k].iter().any(|r| r == tail),
                    "right rows not nested"
                );
            }
        }

        // Interpolation: the TT reproduces f at the most recent cross
        // fibers I_{<k} x {j_k} x J_{>k}.
        for k in 0..sizes.len() {
            for lrow in &sets.left[k] {
                for j in 0..sizes[k] {
                    for rrow in &sets.right[k] {
                        let mut idx = lrow.clone();
                        idx.push(j);
                        idx.extend_from_slice(rrow);
                        let want = (1.0 + idx[0] as f64).ln()
                            + (idx[1] as f64) * 0.3
                            + ((idx[2] * idx[1]) as f64).sqrt();
                        let got = v.element(&idx).unwrap();
                        assert!(
                            (want - got).abs() <= 1e-12 * want.abs().max(1.0),
                            "cross point {idx:?}: want {want}, got {got}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn non_finite_evaluation_is_reported_with_index() {
        // Every index with j_1 = 1 is poisoned; the sweep tabulates all of
        // mode 1, so the first full fiber evaluation must trip over it.
        let f = Evaluator::new(|batch: &[MultiIndex]| {
            batch
                .iter()
                .map(|i| if i[1] == 1 { f64::NAN } else { 1.0 })
                .collect()
        });
        let err = tt_cross(
            &f,
            &[3, 3],
            CrossInit::Random { count: 2, seed: 5 },
            &CrossOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::NonFinite(msg) => {
                assert!(msg.contains("NaN"), "{msg}");
                assert!(msg.contains('['), "should cite the index: {msg}");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn evaluator_counts_requests() {
        let f = Evaluator::new(|batch: &[MultiIndex]| vec![1.0; batch.len()]);
        f.eval(&[vec![0], vec![1]]).unwrap();
        f.eval(&[vec![2]]).unwrap();
        assert_eq!(f.count(), 3);
    }

    #[test]
    fn single_mode_tensor_is_tabulated_directly() {
        let f = Evaluator::new(|batch: &[MultiIndex]| {
            batch.iter().map(|i| (i[0] as f64).powi(2)).collect()
        });
        let (v, _) = tt_cross(
            &f,
            &[7],
            CrossInit::Random { count: 1, seed: 0 },
            &CrossOptions::default(),
        )
        .unwrap();
        for j in 0..7 {
            assert!((v.element(&[j]).unwrap() - (j as f64).powi(2)).abs() < 1e-14);
        }
    }
}
