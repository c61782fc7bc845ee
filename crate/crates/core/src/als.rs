//! Hybrid alternating solver for parameter-dependent diffusion systems in
//! TT format.
//!
//! One sweep consists of
//!  1. a spatial step: deterministic FEM solves at the parameter samples
//!     selected behind bond 0, compressed into an orthonormal reduced basis,
//!  2. a forward pass over the parametric modes, each solved block-diagonally
//!     in the reduced frame (optionally enriched by residual directions),
//!  3. a backward pass that re-solves, truncates, and rebuilds the sample
//!     index sets by maxvol so the solver interpolates itself at the samples.
//!
//! The coefficient TT doubles as the operator: its spatial block columns
//! assemble stiffness pieces, its parametric blocks act diagonally.

use std::time::Instant;

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cross::{interp_left, merge_right};
use crate::dense::{maxvol, qr_thin, svd_truncate, LuFactors};
use crate::error::{Error, Result};
use crate::fem::{det_solve, Mesh, StiffnessAssembler};
use crate::tt::{fold_left, fold_right, unfold_left, unfold_right, MultiIndex, TtTensor};

const MAXVOL_TOL: f64 = 0.01;
const MAXVOL_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlsMode {
    /// Initialization plus a single full sweep; no residual enrichment.
    OneShot,
    /// Sweep with residual enrichment until the relative change between
    /// sweeps drops below `rel_tol` or `max_sweeps` is exhausted.
    Iterative,
}

#[derive(Debug, Clone, Copy)]
pub struct AlsOptions {
    pub rel_tol: f64,
    pub max_sweeps: usize,
    pub mode: AlsMode,
    /// Residual directions appended per bond and sample rows kept for the
    /// residual index sets.
    pub enrich_rank: usize,
    pub rank_cap: usize,
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            rel_tol: 1e-6,
            max_sweeps: 20,
            mode: AlsMode::Iterative,
            enrich_rank: 4,
            rank_cap: 4096,
            seed: 0x0a15,
        }
    }
}

/// Cost and convergence record of one solver run. The `time_coeff` and
/// `time_qoi` slots are filled by the caller (coefficient construction and
/// output extraction happen outside the solver).
#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub sweeps: usize,
    pub det_solve_count: usize,
    pub max_rank: usize,
    pub time_coeff: f64,
    pub time_det: f64,
    pub time_proj: f64,
    pub time_stoch: f64,
    pub time_qoi: f64,
    pub converged: bool,
    pub final_rel_change: f64,
    pub rel_change_history: Vec<f64>,
    /// Bonds whose rank was reduced by tolerance truncation (both sweep
    /// directions truncate).
    pub truncation_events: usize,
}

/// Interfaces and sample index sets maintained across sweeps.
///
/// Indexing: entry `k` of the `*_left` vectors belongs to solving mode `k`
/// (projections through modes `< k`, trivial at `k = 0`); entry `k` of the
/// `*_right` vectors sits behind bond `k` (restrictions over modes `> k`,
/// trivial at the last bond).
#[derive(Debug, Clone)]
pub struct ProjectionState {
    /// `(r_{k-1}, r_{k-1}, R_{k-1})` operator projections.
    pub a_left: Vec<Array3<f64>>,
    /// `(r_{k-1}, rho_{k-1})` rhs projections.
    pub f_left: Vec<Array2<f64>>,
    /// `(R_k, r_k)` coefficient interfaces at the sample rows.
    pub c_right: Vec<Array2<f64>>,
    /// `(rho_k, r_k)` rhs interfaces at the sample rows.
    pub f_right: Vec<Array2<f64>>,
    /// Sample rows over modes `k+1..` behind bond `k`.
    pub j_right: Vec<Vec<MultiIndex>>,
    /// Residual sample rows used for enrichment.
    pub j_tilde: Vec<Vec<MultiIndex>>,
}

impl ProjectionState {
    /// Right interface of `t` at this state's sample rows behind bond `k`,
    /// recomputed from scratch; the incrementally maintained `c_right` /
    /// `f_right` must agree with it.
    pub fn recompute_right(&self, t: &TtTensor, k: usize) -> Result<Array2<f64>> {
        t.right_interface_at(k, &self.j_right[k])
    }
}

pub struct AlsCross<'a> {
    mesh: &'a Mesh,
    coeff: &'a TtTensor,
    rhs: &'a TtTensor,
    opts: AlsOptions,
    asm: StiffnessAssembler,
    /// Spatial coefficient columns, `(M, R_1)`.
    c0: Array2<f64>,
    /// Spatial rhs columns, `(N, rho_1)`.
    f0: Array2<f64>,
    pub state: ProjectionState,
    blocks: Vec<Array3<f64>>,
    report: SolveReport,
    rng: ChaCha8Rng,
}

impl<'a> AlsCross<'a> {
    pub fn new(
        coeff: &'a TtTensor,
        mesh: &'a Mesh,
        rhs: &'a TtTensor,
        opts: AlsOptions,
    ) -> Result<AlsCross<'a>> {
        let d1 = coeff.num_modes();
        if d1 < 2 {
            return Err(Error::invalid("als: need at least one parametric mode"));
        }
        if rhs.num_modes() != d1 {
            return Err(Error::shape(format!(
                "als: coefficient has {d1} modes, rhs {}",
                rhs.num_modes()
            )));
        }
        if coeff.mode_sizes()[0] != mesh.num_nodes() {
            return Err(Error::shape(format!(
                "als: coefficient spatial mode {} vs {} grid nodes",
                coeff.mode_sizes()[0],
                mesh.num_nodes()
            )));
        }
        if rhs.mode_sizes()[0] != mesh.num_free_dofs() {
            return Err(Error::shape(format!(
                "als: rhs spatial mode {} vs {} free dofs",
                rhs.mode_sizes()[0],
                mesh.num_free_dofs()
            )));
        }
        if coeff.mode_sizes()[1..] != rhs.mode_sizes()[1..] {
            return Err(Error::shape("als: coefficient and rhs parametric modes differ"));
        }
        if !(opts.rel_tol > 0.0 && opts.rel_tol < 1.0) {
            return Err(Error::invalid(format!("als: rel_tol {} outside (0,1)", opts.rel_tol)));
        }

        let asm = StiffnessAssembler::new(mesh);
        let c0 = fold_left(coeff.block(0));
        let f0 = fold_left(rhs.block(0));

        // Initial guess: spatial block empty (overwritten by the first
        // spatial step), parametric part copied from the coefficient.
        let mut blocks = Vec::with_capacity(d1);
        blocks.push(Array3::zeros((1, mesh.num_free_dofs(), coeff.block(1).dim().0)));
        for k in 1..d1 {
            blocks.push(coeff.block(k).clone());
        }

        let state = ProjectionState {
            a_left: vec![Array3::ones((1, 1, 1)); d1],
            f_left: vec![Array2::ones((1, 1)); d1],
            c_right: vec![Array2::ones((1, 1)); d1],
            f_right: vec![Array2::ones((1, 1)); d1],
            j_right: vec![vec![Vec::new()]; d1],
            j_tilde: vec![vec![Vec::new()]; d1],
        };

        let mut solver = AlsCross {
            mesh,
            coeff,
            rhs,
            opts,
            asm,
            c0,
            f0,
            state,
            blocks,
            report: SolveReport::default(),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
        };
        solver.init_backward()?;
        if solver.opts.mode == AlsMode::Iterative {
            solver.init_tilde();
        }
        Ok(solver)
    }

    pub fn solution(&self) -> TtTensor {
        TtTensor::from_blocks_unchecked(self.blocks.clone())
    }

    pub fn report(&self) -> &SolveReport {
        &self.report
    }

    /// From-scratch recomputation of the left projections at solving mode
    /// `k >= 1` by direct interface products over blocks `0..k`: dense
    /// operators for the spatial mode, then plain nested-loop contractions.
    /// Valid while the forward-pass blocks are current (the backward pass
    /// rescales them); the incrementally maintained `a_left[k]` / `f_left[k]`
    /// must agree with the result. Diagnostic mirror of `recompute_right`,
    /// small instances only (dense spatial operators).
    pub fn recompute_left(&self, k: usize) -> Result<(Array3<f64>, Array2<f64>)> {
        if k == 0 || k >= self.num_modes() {
            return Err(Error::invalid(format!(
                "recompute_left: mode {k} out of range 1..{}",
                self.num_modes()
            )));
        }
        let q = fold_left(&self.blocks[0]);
        let r1 = q.ncols();
        let rc1 = self.c0.ncols();
        let mut a = Array3::zeros((r1, r1, rc1));
        for g in 0..rc1 {
            let a_g = self.asm.assemble_linear(&self.c0.column(g).to_vec())?.to_dense();
            a.slice_mut(s![.., .., g]).assign(&q.t().dot(&a_g).dot(&q));
        }
        let mut f = q.t().dot(&self.f0);
        for m in 1..k {
            let ub = &self.blocks[m];
            let cb = self.coeff.block(m);
            let fb = self.rhs.block(m);
            let (r, n_m, rnew) = ub.dim();
            let rc_in = cb.dim().0;
            let rc_out = cb.dim().2;
            let rho_in = fb.dim().0;
            let rho_out = fb.dim().2;
            let mut a_next = Array3::zeros((rnew, rnew, rc_out));
            let mut f_next = Array2::zeros((rnew, rho_out));
            for j in 0..n_m {
                for g_out in 0..rc_out {
                    for b1 in 0..rnew {
                        for b2 in 0..rnew {
                            let mut acc = 0.0;
                            for a1 in 0..r {
                                for a2 in 0..r {
                                    let mut cg = 0.0;
                                    for g_in in 0..rc_in {
                                        cg += a[[a1, a2, g_in]] * cb[[g_in, j, g_out]];
                                    }
                                    acc += ub[[a1, j, b1]] * cg * ub[[a2, j, b2]];
                                }
                            }
                            a_next[[b1, b2, g_out]] += acc;
                        }
                    }
                }
                for t_out in 0..rho_out {
                    for b in 0..rnew {
                        let mut acc = 0.0;
                        for a1 in 0..r {
                            for t_in in 0..rho_in {
                                acc += ub[[a1, j, b]] * f[[a1, t_in]] * fb[[t_in, j, t_out]];
                            }
                        }
                        f_next[[b, t_out]] += acc;
                    }
                }
            }
            a = a_next;
            f = f_next;
        }
        Ok((a, f))
    }

    fn num_modes(&self) -> usize {
        self.blocks.len()
    }

    /// Builds the initial sample sets by a maxvol pass right-to-left over
    /// the initial guess, normalizing each block so its selected fibers form
    /// the identity.
    fn init_backward(&mut self) -> Result<()> {
        let d1 = self.num_modes();
        for k in (1..d1).rev() {
            let n_k = self.blocks[k].dim().1;
            let fold = fold_right(&self.blocks[k]);
            let (q, r_mat) = qr_thin(&fold.t().as_standard_layout().into_owned());
            let piv = maxvol(&q, MAXVOL_TOL, MAXVOL_ITERS)?;
            let q_l = gather(&q, piv.indices());
            let newfold = interp_left(&q, &q_l)?.t().as_standard_layout().into_owned();
            self.blocks[k] = unfold_right(&newfold, n_k);
            // fold = (Q_L R)^T newfold, so the value of the guess is kept
            let carry = q_l.dot(&r_mat).t().as_standard_layout().into_owned();
            let n_prev = self.blocks[k - 1].dim().1;
            self.blocks[k - 1] =
                unfold_left(&fold_left(&self.blocks[k - 1]).dot(&carry), n_prev);
            self.advance_right_sets(k, piv.indices())?;
        }
        Ok(())
    }

    /// Random residual sample rows, distinct per bond, `enrich_rank` each.
    fn init_tilde(&mut self) {
        let d1 = self.num_modes();
        let sizes: Vec<usize> = (0..d1).map(|m| self.blocks[m].dim().1).collect();
        for k in 0..d1 - 1 {
            let space = (k + 1..d1)
                .try_fold(1usize, |acc, m| acc.checked_mul(sizes[m]))
                .unwrap_or(usize::MAX);
            let target = self.opts.enrich_rank.max(1).min(space);
            let mut rows: Vec<MultiIndex> = Vec::with_capacity(target);
            let mut attempts = 0usize;
            while rows.len() < target && attempts < 100 * target {
                attempts += 1;
                let row: MultiIndex =
                    (k + 1..d1).map(|m| self.rng.random_range(0..sizes[m])).collect();
                if !rows.contains(&row) {
                    rows.push(row);
                }
            }
            self.state.j_tilde[k] = rows;
        }
    }

    /// Updates `j_right`, `c_right`, `f_right` behind bond `k-1` from the
    /// pivot columns chosen at mode `k`.
    fn advance_right_sets(&mut self, k: usize, pivots: &[usize]) -> Result<()> {
        let n_k = self.blocks[k].dim().1;
        self.state.j_right[k - 1] = merge_right(&self.state.j_right[k], n_k, pivots)?;
        self.state.c_right[k - 1] =
            restrict_interface(self.coeff.block(k), &self.state.c_right[k], pivots);
        self.state.f_right[k - 1] =
            restrict_interface(self.rhs.block(k), &self.state.f_right[k], pivots);
        Ok(())
    }

    /// Truncation tolerance for solution blocks: one order below the
    /// stopping threshold, so rounding noise cannot hold the sampled
    /// residual above `rel_tol` once the iteration has converged.
    fn solution_tol(&self) -> f64 {
        self.opts.rel_tol * 0.1
    }

    /// Deterministic solves at the bond-0 samples, reduced-basis compression,
    /// optional residual enrichment, and projection of operator and rhs onto
    /// the new basis.
    pub fn spatial_step(&mut self) -> Result<()> {
        let n = self.mesh.num_free_dofs();
        let r0 = self.state.j_right[0].len();
        let snap_c = self.c0.dot(&self.state.c_right[0]);
        let snap_f = self.f0.dot(&self.state.f_right[0]);

        let t_det = Instant::now();
        let mut w = Array2::zeros((n, r0));
        for s_i in 0..r0 {
            let c_nodal = snap_c.column(s_i).to_vec();
            let a = self.asm.assemble(&c_nodal)?;
            let b = snap_f.column(s_i).to_vec();
            let sol = det_solve(&a, &b).map_err(|e| {
                Error::NoConvergence(format!(
                    "deterministic solve failed at spatial sample {s_i}: {e}"
                ))
            })?;
            self.report.det_solve_count += 1;
            for (i, v) in sol.iter().enumerate() {
                w[[i, s_i]] = *v;
            }
        }
        self.report.time_det += t_det.elapsed().as_secs_f64();

        let t_stoch = Instant::now();
        let fac = svd_truncate(&w, self.solution_tol(), self.opts.rank_cap);
        if fac.rank() == 0 {
            return Err(Error::Singular(
                "spatial step: all deterministic solutions are zero".into(),
            ));
        }
        if fac.rank() < r0.min(n) {
            self.report.truncation_events += 1;
        }
        let mut carry = fac.sv();
        let mut q = fac.u;
        self.report.time_stoch += t_stoch.elapsed().as_secs_f64();

        if self.opts.mode == AlsMode::Iterative {
            let t_enr = Instant::now();
            if let Some(z) = self.spatial_residual_basis(&q)? {
                let rz = z.ncols();
                q = concatenate(Axis(1), &[q.view(), z.view()]).expect("row counts match");
                let mut carry_ext = Array2::zeros((carry.nrows() + rz, carry.ncols()));
                carry_ext.slice_mut(s![..carry.nrows(), ..]).assign(&carry);
                carry = carry_ext;
            }
            self.report.time_stoch += t_enr.elapsed().as_secs_f64();
        }

        let rq = q.ncols();
        self.blocks[0] = unfold_left(&q, n);
        let n1 = self.blocks[1].dim().1;
        self.blocks[1] = unfold_right(&carry.dot(&fold_right(&self.blocks[1])), n1);

        // Project the operator pieces and the rhs onto the new basis.
        let t_proj = Instant::now();
        let rc1 = self.c0.ncols();
        let mut a1 = Array3::zeros((rq, rq, rc1));
        for g in 0..rc1 {
            let a_g = self.asm.assemble_linear(&self.c0.column(g).to_vec())?;
            let mut aq = Array2::zeros((n, rq));
            let mut col = vec![0.0f64; n];
            for j in 0..rq {
                a_g.matvec(&q.column(j).to_vec(), &mut col);
                for i in 0..n {
                    aq[[i, j]] = col[i];
                }
            }
            a1.slice_mut(s![.., .., g]).assign(&q.t().dot(&aq));
        }
        self.state.a_left[1] = a1;
        self.state.f_left[1] = q.t().dot(&self.f0);
        self.report.time_proj += t_proj.elapsed().as_secs_f64();
        Ok(())
    }

    /// Orthogonal complement of the sampled spatial residual against `q`,
    /// truncated to `enrich_rank` directions. `None` when the residual
    /// vanishes or adds nothing outside `span(q)`.
    fn spatial_residual_basis(&mut self, q: &Array2<f64>) -> Result<Option<Array2<f64>>> {
        let rows = self.state.j_tilde[0].clone();
        let rt = rows.len();
        if rt == 0 {
            return Ok(None);
        }
        let n = self.mesh.num_free_dofs();
        let c_t = self.coeff.right_interface_at(0, &rows)?;
        let f_t = self.rhs.right_interface_at(0, &rows)?;
        let u_t = interface_right(&self.blocks, 0, &rows)?;
        let u_spatial = fold_left(&self.blocks[0]).dot(&u_t);
        let c_nodal = self.c0.dot(&c_t);
        let f_at = self.f0.dot(&f_t);

        let mut z = Array2::zeros((n, rt));
        for b in 0..rt {
            let a = self.asm.assemble_linear(&c_nodal.column(b).to_vec())?;
            let au = a.matvec_alloc(&u_spatial.column(b).to_vec());
            for i in 0..n {
                z[[i, b]] = f_at[[i, b]] - au[i];
            }
        }
        let scale = frob(&f_at.view());
        // twice for numerical orthogonality
        for _ in 0..2 {
            let proj = q.t().dot(&z);
            z -= &q.dot(&proj);
        }
        if frob(&z.view()) <= 1e-13 * scale.max(1e-300) {
            return Ok(None);
        }
        let fac = svd_truncate(&z, 1e-12, self.opts.enrich_rank.max(1));
        if fac.rank() == 0 {
            return Ok(None);
        }
        Ok(Some(fac.u))
    }

    /// Solves the reduced block-diagonal problem at parametric mode `k`:
    /// one dense `r x r` system per (grid node, sample) pair.
    fn solve_block(&self, k: usize) -> Result<Array3<f64>> {
        let a = &self.state.a_left[k];
        let (r, _, rc_in) = a.dim();
        let cb = self.coeff.block(k);
        let fb = self.rhs.block(k);
        let n_k = cb.dim().1;
        let cr = &self.state.c_right[k];
        let fr = &self.state.f_right[k];
        let fl = &self.state.f_left[k];
        let rk = cr.ncols();
        let af = a.to_shape((r * r, rc_in)).expect("a_left is standard layout");

        let mut out = Array3::zeros((r, n_k, rk));
        for j in 0..n_k {
            let c_j = cb.slice(s![.., j, ..]);
            let f_j = fb.slice(s![.., j, ..]);
            let bh = af.dot(&c_j).dot(cr); // (r^2, rk)
            let g = fl.dot(&f_j).dot(fr); // (r, rk)
            for alpha in 0..rk {
                let bmat =
                    Array2::from_shape_fn((r, r), |(i1, i2)| bh[[i1 * r + i2, alpha]]);
                let lu = LuFactors::new(bmat).map_err(|e| {
                    Error::Singular(format!(
                        "reduced block at mode {k}, node {j}, sample {alpha}: {e}"
                    ))
                })?;
                let mut x: Vec<f64> = (0..r).map(|i| g[[i, alpha]]).collect();
                lu.solve_in_place(&mut x);
                for (i, v) in x.iter().enumerate() {
                    out[[i, j, alpha]] = *v;
                }
            }
        }
        Ok(out)
    }

    /// Residual of the freshly solved block `ub` at the residual sample rows
    /// behind bond `k`, shape `(r, n_k, #tilde rows)`.
    fn residual_block(&self, k: usize, ub: &Array3<f64>) -> Result<Array3<f64>> {
        let rows = &self.state.j_tilde[k];
        let rt = rows.len();
        let a = &self.state.a_left[k];
        let (r, _, rc_in) = a.dim();
        let cb = self.coeff.block(k);
        let fb = self.rhs.block(k);
        let n_k = cb.dim().1;
        let c_t = self.coeff.right_interface_at(k, rows)?;
        let f_t = self.rhs.right_interface_at(k, rows)?;
        let u_t = interface_right(&self.blocks, k, rows)?;
        let fl = &self.state.f_left[k];
        let af = a.to_shape((r * r, rc_in)).expect("a_left is standard layout");

        let mut z = Array3::zeros((r, n_k, rt));
        for j in 0..n_k {
            let c_j = cb.slice(s![.., j, ..]);
            let f_j = fb.slice(s![.., j, ..]);
            let bt = af.dot(&c_j).dot(&c_t); // (r^2, rt)
            let gt = fl.dot(&f_j).dot(&f_t); // (r, rt)
            let uu = ub.slice(s![.., j, ..]).dot(&u_t); // (r, rt)
            for b in 0..rt {
                for i1 in 0..r {
                    let mut acc = gt[[i1, b]];
                    for i2 in 0..r {
                        acc -= bt[[i1 * r + i2, b]] * uu[[i2, b]];
                    }
                    z[[i1, j, b]] = acc;
                }
            }
        }
        Ok(z)
    }

    /// Forward step at parametric mode `k`: reduced solve, tolerance
    /// truncation, optional enrichment, re-orthogonalization, projection.
    /// Forward step at parametric mode `k`: reduced solve, bond truncation,
    /// optional residual enrichment, and advance of the left projections.
    pub fn forward_step(&mut self, k: usize) -> Result<()> {
        let d1 = self.num_modes();
        let t_stoch = Instant::now();
        let solved = self.solve_block(k)?;
        if k == d1 - 1 {
            self.blocks[k] = solved;
            self.report.time_stoch += t_stoch.elapsed().as_secs_f64();
            return Ok(());
        }
        let n_k = solved.dim().1;
        let rk = solved.dim().2;
        let bond_tol = self.solution_tol() / (d1 as f64).sqrt();
        let fold = fold_left(&solved);
        let fac = svd_truncate(&fold, bond_tol, self.opts.rank_cap);
        if fac.rank() == 0 {
            return Err(Error::Singular(format!("solution collapsed to zero at mode {k}")));
        }
        if fac.rank() < rk.min(fold.nrows()) {
            self.report.truncation_events += 1;
        }
        let carry0 = fac.sv(); // (r', rk)
        let qu = fac.u;
        let rk_t = qu.ncols();

        let concat = if self.opts.mode == AlsMode::Iterative {
            let z = self.residual_block(k, &solved)?;
            let zfold = fold_left(&z);
            let zn = frob(&zfold.view());
            if zn > 1e-13 * frob(&fold.view()).max(1e-300) {
                let zfac = svd_truncate(&zfold, 1e-12, self.opts.enrich_rank.max(1));
                if zfac.rank() > 0 {
                    concatenate(Axis(1), &[qu.view(), zfac.u.view()]).expect("rows match")
                } else {
                    qu
                }
            } else {
                qu
            }
        } else {
            qu
        };

        let (qq, rr) = qr_thin(&concat);
        self.blocks[k] = unfold_left(&qq, n_k);
        let carry = rr.slice(s![.., ..rk_t]).dot(&carry0); // (r_new, rk)
        let n_next = self.blocks[k + 1].dim().1;
        self.blocks[k + 1] =
            unfold_right(&carry.dot(&fold_right(&self.blocks[k + 1])), n_next);
        self.report.time_stoch += t_stoch.elapsed().as_secs_f64();

        let t_proj = Instant::now();
        self.project_forward(k);
        self.report.time_proj += t_proj.elapsed().as_secs_f64();
        Ok(())
    }

    /// Advances `a_left[k+1]`, `f_left[k+1]` through the (orthonormalized)
    /// block at mode `k`.
    fn project_forward(&mut self, k: usize) {
        let ub = &self.blocks[k];
        let (r, n_k, rnew) = ub.dim();
        let a = &self.state.a_left[k];
        let rc_in = a.dim().2;
        let cb = self.coeff.block(k);
        let rc_out = cb.dim().2;
        let fb = self.rhs.block(k);
        let rho_out = fb.dim().2;
        let fl = &self.state.f_left[k];
        let af = a.to_shape((r * r, rc_in)).expect("a_left is standard layout");

        let mut a_next = Array3::zeros((rnew, rnew, rc_out));
        let mut f_next = Array2::zeros((rnew, rho_out));
        for j in 0..n_k {
            let u_j = ub.slice(s![.., j, ..]).as_standard_layout().into_owned();
            let c_j = cb.slice(s![.., j, ..]);
            let m_j = af.dot(&c_j); // (r^2, rc_out)
            for g in 0..rc_out {
                let t = Array2::from_shape_fn((r, r), |(i1, i2)| m_j[[i1 * r + i2, g]]);
                let p = u_j.t().dot(&t.dot(&u_j));
                a_next.slice_mut(s![.., .., g]).scaled_add(1.0, &p);
            }
            let f_j = fb.slice(s![.., j, ..]);
            f_next += &u_j.t().dot(&fl.dot(&f_j));
        }
        self.state.a_left[k + 1] = a_next;
        self.state.f_left[k + 1] = f_next;
    }

    /// Backward step at parametric mode `k`: re-solve (except at the last
    /// mode, which the forward pass just solved), update the residual rows,
    /// truncate, and rebuild the sample sets behind bond `k-1`.
    fn backward_step(&mut self, k: usize) -> Result<()> {
        let d1 = self.num_modes();
        let t_stoch = Instant::now();
        if k != d1 - 1 {
            self.blocks[k] = self.solve_block(k)?;
        }
        if self.opts.mode == AlsMode::Iterative {
            let solved = self.blocks[k].clone();
            self.update_tilde(k, &solved)?;
        }

        let n_k = self.blocks[k].dim().1;
        let r_left = self.blocks[k].dim().0;
        let bond_tol = self.solution_tol() / (d1 as f64).sqrt();
        let fold = fold_right(&self.blocks[k]);
        let fac = svd_truncate(
            &fold.t().as_standard_layout().into_owned(),
            bond_tol,
            self.opts.rank_cap,
        );
        if fac.rank() == 0 {
            return Err(Error::Singular(format!("solution collapsed to zero at mode {k}")));
        }
        if fac.rank() < r_left.min(fold.ncols()) {
            self.report.truncation_events += 1;
        }
        let sv = fac.sv();
        let q = fac.u; // (n_k r_k, r')
        let piv = maxvol(&q, MAXVOL_TOL, MAXVOL_ITERS)?;
        let q_l = gather(&q, piv.indices());
        let newfold = interp_left(&q, &q_l)?.t().as_standard_layout().into_owned();
        self.blocks[k] = unfold_right(&newfold, n_k);
        // fold ~= (sv)^T Q^T = ((sv)^T Q_L^T) newfold
        let carry = sv.t().dot(&q_l.t()); // (r_{k-1}, r')
        let n_prev = self.blocks[k - 1].dim().1;
        self.blocks[k - 1] = unfold_left(&fold_left(&self.blocks[k - 1]).dot(&carry), n_prev);
        self.report.time_stoch += t_stoch.elapsed().as_secs_f64();

        let t_proj = Instant::now();
        self.advance_right_sets(k, piv.indices())?;
        self.report.time_proj += t_proj.elapsed().as_secs_f64();
        Ok(())
    }

    /// Maxvol update of the residual sample rows behind bond `k-1` from the
    /// residual of the solved block at mode `k`. A vanishing residual keeps
    /// the previous rows.
    fn update_tilde(&mut self, k: usize, solved: &Array3<f64>) -> Result<()> {
        let z = self.residual_block(k, solved)?;
        let n_k = z.dim().1;
        let rt = z.dim().2;
        let zfold = fold_right(&z); // (r_{k-1}, n_k rt)
        if frob(&zfold.view()) <= 1e-300 {
            return Ok(());
        }
        let fac = svd_truncate(
            &zfold.t().as_standard_layout().into_owned(),
            1e-12,
            self.opts.enrich_rank.max(1),
        );
        if fac.rank() == 0 {
            return Ok(());
        }
        let piv = maxvol(&fac.u, MAXVOL_TOL, MAXVOL_ITERS)?;
        let mut pivots = piv.indices().to_vec();
        pivots.truncate(self.opts.enrich_rank.max(1));
        let merged = merge_right(&self.state.j_tilde[k], n_k, &pivots)?;
        let _ = rt;
        self.state.j_tilde[k - 1] = merged;
        Ok(())
    }

    /// One full sweep: spatial step, forward pass, backward pass.
    pub fn run_sweep(&mut self) -> Result<()> {
        let d1 = self.num_modes();
        self.spatial_step()?;
        for k in 1..d1 {
            self.forward_step(k)?;
        }
        for k in (1..d1).rev() {
            self.backward_step(k)?;
        }
        self.report.sweeps += 1;
        let ranks = self.solution_ranks();
        if let Some(&m) = ranks.iter().max() {
            self.report.max_rank = self.report.max_rank.max(m);
        }
        Ok(())
    }

    fn solution_ranks(&self) -> Vec<usize> {
        self.blocks.iter().take(self.num_modes() - 1).map(|b| b.dim().2).collect()
    }

    pub fn solve(mut self) -> Result<(TtTensor, SolveReport)> {
        let mut prev = self.solution();
        loop {
            self.run_sweep()?;
            let now = self.solution();
            let change = now.add(&prev.scale(-1.0))?.norm();
            let scale = now.norm();
            let rel = if scale > 0.0 {
                change / scale
            } else if change > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            self.report.rel_change_history.push(rel);
            self.report.final_rel_change = rel;
            prev = now;
            if self.opts.mode == AlsMode::OneShot {
                self.report.converged = true;
                break;
            }
            if rel <= self.opts.rel_tol {
                self.report.converged = true;
                break;
            }
            if self.report.sweeps >= self.opts.max_sweeps {
                break;
            }
        }
        Ok((prev, self.report))
    }
}

/// Solves the parameter-dependent system defined by a coefficient TT (over
/// all grid nodes) and a rhs TT (over free dofs).
pub fn als_cross_solve(
    coeff: &TtTensor,
    mesh: &Mesh,
    rhs: &TtTensor,
    opts: AlsOptions,
) -> Result<(TtTensor, SolveReport)> {
    AlsCross::new(coeff, mesh, rhs, opts)?.solve()
}

/// Right-hand side TT induced by the Dirichlet lift: the lift is linear in
/// the coefficient, so the rhs inherits the coefficient's parametric blocks
/// with the spatial block mapped column by column.
pub fn rhs_from_coefficient(coeff: &TtTensor, mesh: &Mesh) -> Result<TtTensor> {
    if coeff.num_modes() < 2 {
        return Err(Error::invalid("rhs_from_coefficient: need a parametric mode"));
    }
    if coeff.mode_sizes()[0] != mesh.num_nodes() {
        return Err(Error::shape(format!(
            "rhs_from_coefficient: spatial mode {} vs {} grid nodes",
            coeff.mode_sizes()[0],
            mesh.num_nodes()
        )));
    }
    let asm = StiffnessAssembler::new(mesh);
    let c0 = fold_left(coeff.block(0));
    let n = mesh.num_free_dofs();
    let rc1 = c0.ncols();
    let mut f0 = Array3::zeros((1, n, rc1));
    for g in 0..rc1 {
        let b = asm.lift_rhs(&c0.column(g).to_vec())?;
        for (i, v) in b.iter().enumerate() {
            f0[[0, i, g]] = *v;
        }
    }
    let mut blocks = vec![f0];
    for k in 1..coeff.num_modes() {
        blocks.push(coeff.block(k).clone());
    }
    TtTensor::new(blocks)
}

fn gather(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), m.ncols()));
    for (t, &r) in rows.iter().enumerate() {
        out.row_mut(t).assign(&m.row(r));
    }
    out
}

fn frob(m: &ndarray::ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Interface column `B_{k+1}[:, j_{k+1}, :] ... B_{d}[:, j_d, :] * 1` per
/// sample row, assembled right to left.
fn interface_right(
    blocks: &[Array3<f64>],
    k: usize,
    rows: &[MultiIndex],
) -> Result<Array2<f64>> {
    let d1 = blocks.len();
    let rk = blocks[k].dim().2;
    let mut out = Array2::zeros((rk, rows.len()));
    for (t, row) in rows.iter().enumerate() {
        if row.len() != d1 - k - 1 {
            return Err(Error::shape(format!(
                "interface row {t} has {} entries, expected {}",
                row.len(),
                d1 - k - 1
            )));
        }
        let mut v = vec![1.0f64];
        for m in (k + 1..d1).rev() {
            let b = &blocks[m];
            let (rl, n_m, _rr) = b.dim();
            let j = row[m - k - 1];
            if j >= n_m {
                return Err(Error::invalid(format!(
                    "interface row {t}: index {j} out of bounds for mode {m} (size {n_m})"
                )));
            }
            let mut nv = vec![0.0f64; rl];
            for (a, slot) in nv.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (bb, vv) in v.iter().enumerate() {
                    acc += b[[a, j, bb]] * vv;
                }
                *slot = acc;
            }
            v = nv;
        }
        for (a, vv) in v.iter().enumerate() {
            out[[a, t]] = *vv;
        }
    }
    Ok(out)
}

/// Coefficient (or rhs) interface advanced through block `k` and restricted
/// to the pivot columns: column `t` is `B[:, j, :] * right[:, alpha]` for
/// pivot `p_t = j * r_k + alpha`.
fn restrict_interface(
    block: &Array3<f64>,
    right: &Array2<f64>,
    pivots: &[usize],
) -> Array2<f64> {
    let (rl, _n, rr) = block.dim();
    let rk = right.ncols();
    let mut out = Array2::zeros((rl, pivots.len()));
    for (t, &p) in pivots.iter().enumerate() {
        let j = p / rk;
        let alpha = p % rk;
        for i in 0..rl {
            let mut acc = 0.0;
            for g in 0..rr {
                acc += block[[i, j, g]] * right[[g, alpha]];
            }
            out[[i, t]] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_stiffness;
    use crate::model::{
        coeff_affine_tt, psi_tables, CoeffForm, KleSpec, ParamDist, ParamGrid,
    };
    use crate::tt::TtTensor;

    fn spec() -> KleSpec {
        KleSpec {
            nu: 4.0,
            sigma2: 1.0,
            k0: 1,
            form: CoeffForm::Affine,
            dist: ParamDist::Uniform,
            trunc_tol: 1e-2,
        }
    }

    fn tiny_problem() -> (Mesh, TtTensor, TtTensor, ParamGrid) {
        let mesh = Mesh::with_cells(4).unwrap();
        let grid = ParamGrid::gauss(ParamDist::Uniform, &[3, 3]).unwrap();
        let coeff = coeff_affine_tt(&spec(), &mesh, &grid).unwrap();
        let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
        (mesh, coeff, rhs, grid)
    }

    /// Dense solve of every parameter combination of the tiny problem.
    fn dense_reference(
        mesh: &Mesh,
        grid: &ParamGrid,
        d: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let psi = psi_tables(&spec(), d, mesh);
        let sizes = grid.mode_sizes();
        let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
        for &nk in &sizes {
            let mut next = Vec::new();
            for c in &combos {
                for j in 0..nk {
                    let mut cc = c.clone();
                    cc.push(j);
                    next.push(cc);
                }
            }
            combos = next;
        }
        let mut sols = Vec::with_capacity(combos.len());
        for combo in &combos {
            let mut c_nodal = vec![10.0f64; mesh.num_nodes()];
            for (k, &j) in combo.iter().enumerate() {
                let y = grid.nodes[k][j];
                for (ci, p) in c_nodal.iter_mut().zip(psi.row(k).iter()) {
                    *ci += y * p;
                }
            }
            let a = assemble_stiffness(mesh, &c_nodal).unwrap();
            let b = crate::fem::dirichlet_lift_rhs(mesh, &c_nodal).unwrap();
            sols.push(det_solve(&a, &b).unwrap());
        }
        (sols, combos)
    }

    #[test]
    fn constant_coefficient_gives_parameter_free_ramp() {
        let mesh = Mesh::with_cells(8).unwrap();
        let grid = ParamGrid::gauss(ParamDist::Uniform, &[3, 2]).unwrap();
        let flat = KleSpec { sigma2: 0.0, ..spec() };
        let coeff = coeff_affine_tt(&flat, &mesh, &grid).unwrap();
        let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
        let opts = AlsOptions { mode: AlsMode::OneShot, rel_tol: 1e-8, ..Default::default() };
        let (u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();

        assert_eq!(report.det_solve_count, 1, "rank-1 coefficient needs one solve");
        assert!(report.converged);
        let m = mesh.cells_per_side();
        for i1 in 1..m {
            for i2 in 0..=m {
                let dof = mesh.free_dof(i1, i2).unwrap();
                let want = 1.0 - i1 as f64 / m as f64;
                for j1 in 0..3 {
                    for j2 in 0..2 {
                        let got = u.element(&[dof, j1, j2]).unwrap();
                        assert!(
                            (got - want).abs() < 1e-10,
                            "dof {dof} at ({j1},{j2}): {got} vs {want}"
                        );
                    }
                }
            }
        }
        let rounded = u.round(1e-10, usize::MAX);
        assert_eq!(rounded.ranks(), vec![1, 1], "parametric ranks collapse");
    }

    #[test]
    fn tiny_instance_matches_dense_block_diagonal_solve() {
        let (mesh, coeff, rhs, grid) = tiny_problem();
        let opts = AlsOptions { rel_tol: 1e-11, ..Default::default() };
        let (u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
        assert!(report.converged, "tiny instance should converge: {report:?}");

        let (sols, combos) = dense_reference(&mesh, &grid, 2);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (sol, combo) in sols.iter().zip(combos.iter()) {
            for (i, &want) in sol.iter().enumerate() {
                let mut idx = vec![i];
                idx.extend_from_slice(combo);
                let got = u.element(&idx).unwrap();
                num += (got - want) * (got - want);
                den += want * want;
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-9, "relative error vs dense solve: {rel}");
    }

    #[test]
    fn selection_identity_and_restriction_consistency() {
        let (mesh, coeff, rhs, _) = tiny_problem();
        let mut solver =
            AlsCross::new(&coeff, &mesh, &rhs, AlsOptions { rel_tol: 1e-10, ..Default::default() })
                .unwrap();
        solver.run_sweep().unwrap();
        solver.run_sweep().unwrap();
        let u = solver.solution();
        let d1 = u.num_modes();
        for k in 0..d1 - 1 {
            let iface = u.right_interface_at(k, &solver.state.j_right[k]).unwrap();
            let r = iface.nrows();
            assert_eq!(iface.ncols(), r);
            for i in 0..r {
                for j in 0..r {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (iface[[i, j]] - want).abs() < 1e-12,
                        "bond {k}: interface[{i},{j}] = {}",
                        iface[[i, j]]
                    );
                }
            }
            let c_fresh = solver.state.recompute_right(&coeff, k).unwrap();
            let c_inc = &solver.state.c_right[k];
            let scale = frob(&c_fresh.view()).max(1.0);
            let diff = (&c_fresh - c_inc).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff < 1e-12 * scale, "bond {k}: c_right drift {diff}");
            let f_fresh = solver.state.recompute_right(&rhs, k).unwrap();
            let f_inc = &solver.state.f_right[k];
            let fdiff = (&f_fresh - f_inc).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(fdiff < 1e-12 * frob(&f_fresh.view()).max(1.0), "bond {k}: f_right {fdiff}");
        }
    }

    #[test]
    fn spatial_projection_matches_dense_frames() {
        let (mesh, coeff, rhs, _) = tiny_problem();
        let mut solver =
            AlsCross::new(&coeff, &mesh, &rhs, AlsOptions { rel_tol: 1e-10, ..Default::default() })
                .unwrap();
        // stop mid-sweep so blocks 0..k are exactly the frames the
        // projections were built with (the backward pass rescales them)
        solver.spatial_step().unwrap();
        solver.forward_step(1).unwrap();

        // a_left[1] against dense Q^T A_g Q
        let q = fold_left(&solver.blocks[0]);
        let c0 = fold_left(coeff.block(0));
        for g in 0..c0.ncols() {
            let a_g = solver.asm.assemble_linear(&c0.column(g).to_vec()).unwrap().to_dense();
            let want = q.t().dot(&a_g.dot(&q));
            let got = solver.state.a_left[1].slice(s![.., .., g]).to_owned();
            let scale = frob(&want.view()).max(1.0);
            let diff = (&want - &got).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff < 1e-12 * scale, "a_left[1] column {g}: drift {diff}");
        }

        // a_left[2] against the explicit frame over (space, first mode)
        let b1 = &solver.blocks[1];
        let (r0, n1, r1) = b1.dim();
        let n = mesh.num_free_dofs();
        let mut frame = Array2::zeros((n * n1, r1));
        for i in 0..n {
            for j in 0..n1 {
                for b in 0..r1 {
                    let mut acc = 0.0;
                    for a in 0..r0 {
                        acc += q[[i, a]] * b1[[a, j, b]];
                    }
                    frame[[i * n1 + j, b]] = acc;
                }
            }
        }
        let cb = coeff.block(1);
        let rc2 = cb.dim().2;
        for g2 in 0..rc2 {
            // dense operator sum_g A_g (x) diag(c1[g, :, g2])
            let mut a_dense = Array2::zeros((n * n1, n * n1));
            for g in 0..c0.ncols() {
                let a_g =
                    solver.asm.assemble_linear(&c0.column(g).to_vec()).unwrap().to_dense();
                for i in 0..n {
                    for ip in 0..n {
                        let v = a_g[[i, ip]];
                        if v == 0.0 {
                            continue;
                        }
                        for j in 0..n1 {
                            a_dense[[i * n1 + j, ip * n1 + j]] += v * cb[[g, j, g2]];
                        }
                    }
                }
            }
            let want = frame.t().dot(&a_dense.dot(&frame));
            let got = solver.state.a_left[2].slice(s![.., .., g2]).to_owned();
            let scale = frob(&want.view()).max(1.0);
            let diff = (&want - &got).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff < 1e-11 * scale, "a_left[2] column {g2}: drift {diff}");
        }
    }

    #[test]
    fn reduced_blocks_satisfy_their_own_systems() {
        let (mesh, coeff, rhs, _) = tiny_problem();
        let mut solver =
            AlsCross::new(&coeff, &mesh, &rhs, AlsOptions { rel_tol: 1e-10, ..Default::default() })
                .unwrap();
        solver.spatial_step().unwrap();
        let k = 1;
        let out = solver.solve_block(k).unwrap();
        let a = &solver.state.a_left[k];
        let (r, _, rc_in) = a.dim();
        let af = a.to_shape((r * r, rc_in)).unwrap();
        let cb = coeff.block(k);
        let fb = rhs.block(k);
        let cr = &solver.state.c_right[k];
        let fr = &solver.state.f_right[k];
        let fl = &solver.state.f_left[k];
        for j in 0..cb.dim().1 {
            let bh = af.dot(&cb.slice(s![.., j, ..])).dot(cr);
            let g = fl.dot(&fb.slice(s![.., j, ..])).dot(fr);
            for alpha in 0..cr.ncols() {
                let bmat = Array2::from_shape_fn((r, r), |(i1, i2)| bh[[i1 * r + i2, alpha]]);
                let x: Vec<f64> = (0..r).map(|i| out[[i, j, alpha]]).collect();
                let mut res = 0.0f64;
                let mut gn = 0.0f64;
                for i1 in 0..r {
                    let mut acc = -g[[i1, alpha]];
                    gn += g[[i1, alpha]] * g[[i1, alpha]];
                    for i2 in 0..r {
                        acc += bmat[[i1, i2]] * x[i2];
                    }
                    res += acc * acc;
                }
                assert!(
                    res.sqrt() <= 1e-10 * gn.sqrt().max(1e-300),
                    "block ({j},{alpha}) residual {}",
                    res.sqrt()
                );
            }
        }
    }

    #[test]
    fn sampled_residual_decreases_until_tolerance() {
        let (mesh, coeff, rhs, grid) = tiny_problem();
        let tol = 1e-9;
        let mut solver = AlsCross::new(
            &coeff,
            &mesh,
            &rhs,
            AlsOptions { rel_tol: tol, ..Default::default() },
        )
        .unwrap();
        let psi = psi_tables(&spec(), 2, &mesh);
        let samples: Vec<Vec<usize>> = vec![vec![0, 0], vec![2, 1], vec![1, 2], vec![2, 2]];
        let mut history = Vec::new();
        for _ in 0..6 {
            solver.run_sweep().unwrap();
            let u = solver.solution();
            let mut worst = 0.0f64;
            for combo in &samples {
                let mut c_nodal = vec![10.0f64; mesh.num_nodes()];
                for (k, &j) in combo.iter().enumerate() {
                    for (ci, p) in c_nodal.iter_mut().zip(psi.row(k).iter()) {
                        *ci += grid.nodes[k][j] * p;
                    }
                }
                let a = assemble_stiffness(&mesh, &c_nodal).unwrap();
                let b = crate::fem::dirichlet_lift_rhs(&mesh, &c_nodal).unwrap();
                let uvec: Vec<f64> = (0..mesh.num_free_dofs())
                    .map(|i| {
                        let mut idx = vec![i];
                        idx.extend_from_slice(combo);
                        u.element(&idx).unwrap()
                    })
                    .collect();
                let au = a.matvec_alloc(&uvec);
                let rn: f64 =
                    au.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst = worst.max(rn / bn);
            }
            history.push(worst);
            if worst <= tol {
                break;
            }
        }
        assert!(
            history.last().unwrap() <= &(10.0 * tol),
            "sampled residual stalled: {history:?}"
        );
        for w in history.windows(2) {
            if w[0] > 10.0 * tol {
                assert!(w[1] < w[0], "residual did not decrease: {history:?}");
            }
        }
    }

    #[test]
    fn zero_rhs_is_reported_as_rank_collapse() {
        let (mesh, coeff, rhs, _) = tiny_problem();
        let zero = TtTensor::zeros(&rhs.mode_sizes()).unwrap();
        let err = als_cross_solve(&coeff, &mesh, &zero, AlsOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn mode_shape_mismatches_are_rejected() {
        let (mesh, coeff, rhs, _) = tiny_problem();
        let other = Mesh::with_cells(8).unwrap();
        assert!(AlsCross::new(&coeff, &other, &rhs, AlsOptions::default()).is_err());
        let bad_rhs = TtTensor::constant(&[mesh.num_free_dofs(), 3, 4], 1.0).unwrap();
        assert!(AlsCross::new(&coeff, &mesh, &bad_rhs, AlsOptions::default()).is_err());
    }
}
