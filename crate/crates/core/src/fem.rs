//! Bilinear finite elements on the unit square.
//!
//! The domain is meshed by `m x m` square cells. The solution satisfies
//! Dirichlet conditions `u = 1` at `x1 = 0` and `u = 0` at `x1 = 1`;
//! the `x2 = 0, 1` edges are natural (Neumann) boundaries. Free DOFs are
//! the nodes with interior `x1` and any `x2`, numbered with `x2` fastest,
//! giving `N = (m - 1)(m + 1)` unknowns. The Dirichlet data enters through
//! a lifted right-hand side, so the parametric system keeps the low-rank
//! structure of the coefficient.

use crate::error::{Error, Result};
use crate::sparse::{pcg, BandCholesky, CsrMatrix};

/// Largest bandwidth for which [`det_solve`] picks the banded direct
/// factorization; beyond this (mesh levels above 5) memory for the band
/// storage outgrows the cost of preconditioned CG.
const DIRECT_BANDWIDTH_LIMIT: usize = 258;

/// Uniform square mesh described by the number of cells per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mesh {
    m: usize,
}

impl Mesh {
    /// Mesh of the discretization hierarchy: level `l >= 2` has
    /// `m = 2^(l+3)` cells per side, so level 2 starts at `h = 1/32`.
    pub fn from_level(level: u32) -> Result<Mesh> {
        if level < 2 {
            return Err(Error::invalid(format!("mesh level must be >= 2, got {level}")));
        }
        if level > 24 {
            return Err(Error::invalid(format!("mesh level {level} is out of range")));
        }
        Ok(Mesh { m: 1usize << (level + 3) })
    }

    /// Mesh with an explicit cell count per side (mainly for small tests).
    pub fn with_cells(m: usize) -> Result<Mesh> {
        if m < 2 {
            return Err(Error::invalid(format!("mesh needs at least 2 cells per side, got {m}")));
        }
        Ok(Mesh { m })
    }

    pub fn cells_per_side(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Grid nodes per side.
    pub fn nodes_per_side(&self) -> usize {
        self.m + 1
    }

    /// Total grid nodes, including Dirichlet boundaries.
    pub fn num_nodes(&self) -> usize {
        (self.m + 1) * (self.m + 1)
    }

    /// Free DOFs: `(m - 1)(m + 1)`.
    pub fn num_free_dofs(&self) -> usize {
        (self.m - 1) * (self.m + 1)
    }

    /// Linear index of the grid node `(i1, i2)`, `x2` fastest.
    pub fn node_index(&self, i1: usize, i2: usize) -> usize {
        debug_assert!(i1 <= self.m && i2 <= self.m);
        i1 * (self.m + 1) + i2
    }

    /// Coordinates of a node by linear index.
    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let i1 = node / (self.m + 1);
        let i2 = node % (self.m + 1);
        (i1 as f64 * self.h(), i2 as f64 * self.h())
    }

    /// Free-DOF index of node `(i1, i2)`, or None on a Dirichlet boundary.
    pub fn free_dof(&self, i1: usize, i2: usize) -> Option<usize> {
        if i1 == 0 || i1 == self.m || i2 > self.m {
            None
        } else {
            Some((i1 - 1) * (self.m + 1) + i2)
        }
    }
}

/// Reference-cell tensor `k[s][i][j] = \int phi_s grad(phi_i).grad(phi_j)`
/// over the unit square, by 2x2 Gauss quadrature (exact here). Local corner
/// order: `t = 2 a + b` for corner `(a, b)` with `a` along `x1`.
fn reference_tensor() -> [[[f64; 4]; 4]; 4] {
    let g = 0.5 - 1.0 / (2.0 * 3f64.sqrt());
    let pts = [g, 1.0 - g];
    let shape = |t: usize, x: f64, y: f64| -> f64 {
        let a = t / 2;
        let b = t % 2;
        (if a == 0 { 1.0 - x } else { x }) * (if b == 0 { 1.0 - y } else { y })
    };
    let grad = |t: usize, x: f64, y: f64| -> (f64, f64) {
        let a = t / 2;
        let b = t % 2;
        let lx = if a == 0 { 1.0 - x } else { x };
        let ly = if b == 0 { 1.0 - y } else { y };
        let dx = if a == 0 { -1.0 } else { 1.0 };
        let dy = if b == 0 { -1.0 } else { 1.0 };
        (dx * ly, lx * dy)
    };
    let mut k = [[[0.0f64; 4]; 4]; 4];
    for &x in &pts {
        for &y in &pts {
            let w = 0.25;
            for s in 0..4 {
                let ps = shape(s, x, y);
                for i in 0..4 {
                    let (gix, giy) = grad(i, x, y);
                    for j in 0..=i {
                        let (gjx, gjy) = grad(j, x, y);
                        k[s][i][j] += w * ps * (gix * gjx + giy * gjy);
                    }
                }
            }
        }
    }
    // Symmetrize exactly so assembled matrices are bitwise symmetric.
    for s in 0..4 {
        for i in 0..4 {
            for j in 0..i {
                k[s][j][i] = k[s][i][j];
            }
        }
    }
    k
}

/// Reusable assembly context for one mesh: sparsity pattern and (for
/// moderate meshes) a precomputed cell-to-slot scatter map, so repeated
/// assemblies over many coefficient samples stay cheap.
pub struct StiffnessAssembler {
    mesh: Mesh,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// `scatter[cell * 16 + ti * 4 + tj]` = CSR slot + 1, or 0 when either
    /// node is constrained. Skipped for very large meshes.
    scatter: Option<Vec<u32>>,
    kref: [[[f64; 4]; 4]; 4],
}

impl StiffnessAssembler {
    pub fn new(mesh: &Mesh) -> StiffnessAssembler {
        let m = mesh.m;
        let np = m + 1;
        let n = mesh.num_free_dofs();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for i1 in 1..m {
            for i2 in 0..np {
                for j1 in (i1 - 1).max(1)..=(i1 + 1).min(m - 1) {
                    for j2 in i2.saturating_sub(1)..=(i2 + 1).min(m) {
                        col_idx.push((j1 - 1) * np + j2);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }

        let scatter = if m <= 1024 {
            let mut map = vec![0u32; m * m * 16];
            for c1 in 0..m {
                for c2 in 0..m {
                    let cell = c1 * m + c2;
                    for ti in 0..4 {
                        let gi1 = c1 + ti / 2;
                        let gi2 = c2 + ti % 2;
                        let Some(i) = mesh.free_dof(gi1, gi2) else { continue };
                        for tj in 0..4 {
                            let gj1 = c1 + tj / 2;
                            let gj2 = c2 + tj % 2;
                            let Some(j) = mesh.free_dof(gj1, gj2) else { continue };
                            let slot = (row_ptr[i]..row_ptr[i + 1])
                                .find(|&s| col_idx[s] == j)
                                .expect("9-point pattern covers cell couplings");
                            map[cell * 16 + ti * 4 + tj] = (slot + 1) as u32;
                        }
                    }
                }
            }
            Some(map)
        } else {
            None
        };

        StiffnessAssembler { mesh: *mesh, row_ptr, col_idx, scatter, kref: reference_tensor() }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn local_matrix(&self, c: [f64; 4]) -> [[f64; 4]; 4] {
        let mut kl = [[0.0f64; 4]; 4];
        for s in 0..4 {
            let cs = c[s];
            let ks = &self.kref[s];
            for i in 0..4 {
                for j in 0..4 {
                    kl[i][j] += cs * ks[i][j];
                }
            }
        }
        kl
    }

    /// Assembles the free-DOF stiffness matrix for nodal coefficient values
    /// `c_nodal` (all grid nodes, `x2` fastest). A nonpositive coefficient
    /// is allowed but reported on stderr since the system may lose
    /// definiteness.
    pub fn assemble(&self, c_nodal: &[f64]) -> Result<CsrMatrix> {
        if c_nodal.iter().cloned().fold(f64::INFINITY, f64::min) <= 0.0 {
            eprintln!("warning: nonpositive diffusion coefficient; system may be indefinite");
        }
        self.assemble_linear(c_nodal)
    }

    /// Same assembly without the definiteness warning: the bilinear form is
    /// linear in `c_nodal`, so sign-indefinite weights (expansion terms of a
    /// coefficient rather than a coefficient itself) are legitimate inputs.
    pub fn assemble_linear(&self, c_nodal: &[f64]) -> Result<CsrMatrix> {
        let mesh = &self.mesh;
        let m = mesh.m;
        let np = m + 1;
        if c_nodal.len() != mesh.num_nodes() {
            return Err(Error::shape(format!(
                "assemble: {} nodal values for {} grid nodes",
                c_nodal.len(),
                mesh.num_nodes()
            )));
        }
        let mut values = vec![0.0f64; self.col_idx.len()];
        for c1 in 0..m {
            for c2 in 0..m {
                let base = c1 * np + c2;
                let c = [
                    c_nodal[base],
                    c_nodal[base + 1],
                    c_nodal[base + np],
                    c_nodal[base + np + 1],
                ];
                let kl = self.local_matrix(c);
                if let Some(map) = &self.scatter {
                    let cell = c1 * m + c2;
                    for ti in 0..4 {
                        for tj in 0..4 {
                            let slot = map[cell * 16 + ti * 4 + tj];
                            if slot != 0 {
                                values[(slot - 1) as usize] += kl[ti][tj];
                            }
                        }
                    }
                } else {
                    for ti in 0..4 {
                        let Some(i) = mesh.free_dof(c1 + ti / 2, c2 + ti % 2) else { continue };
                        for tj in 0..4 {
                            let Some(j) = mesh.free_dof(c1 + tj / 2, c2 + tj % 2) else {
                                continue;
                            };
                            let slot = (self.row_ptr[i]..self.row_ptr[i + 1])
                                .find(|&s| self.col_idx[s] == j)
                                .expect("pattern covers couplings");
                            values[slot] += kl[ti][tj];
                        }
                    }
                }
            }
        }
        Ok(CsrMatrix {
            n: mesh.num_free_dofs(),
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        })
    }

    /// Lifted right-hand side carrying the `u = 1` condition at `x1 = 0`:
    /// `b_i = -sum_s A_{i,s}` over boundary nodes `s` at `x1 = 0`. Only
    /// cells in the first column contribute. Linear in the coefficient.
    pub fn lift_rhs(&self, c_nodal: &[f64]) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let m = mesh.m;
        let np = m + 1;
        if c_nodal.len() != mesh.num_nodes() {
            return Err(Error::shape(format!(
                "lift_rhs: {} nodal values for {} grid nodes",
                c_nodal.len(),
                mesh.num_nodes()
            )));
        }
        let mut b = vec![0.0f64; mesh.num_free_dofs()];
        for c2 in 0..m {
            let c = [
                c_nodal[c2],
                c_nodal[c2 + 1],
                c_nodal[np + c2],
                c_nodal[np + c2 + 1],
            ];
            let kl = self.local_matrix(c);
            for ti in 0..4 {
                let Some(i) = mesh.free_dof(ti / 2, c2 + ti % 2) else { continue };
                for tj in 0..4 {
                    if tj / 2 == 0 {
                        // boundary corner at x1 = 0, Dirichlet value 1
                        b[i] -= kl[ti][tj];
                    }
                }
            }
        }
        Ok(b)
    }
}

/// One-off assembly; build a [`StiffnessAssembler`] instead when solving
/// many samples on the same mesh.
pub fn assemble_stiffness(mesh: &Mesh, c_nodal: &[f64]) -> Result<CsrMatrix> {
    StiffnessAssembler::new(mesh).assemble(c_nodal)
}

/// One-off Dirichlet lift; see [`StiffnessAssembler::lift_rhs`].
pub fn dirichlet_lift_rhs(mesh: &Mesh, c_nodal: &[f64]) -> Result<Vec<f64>> {
    StiffnessAssembler::new(mesh).lift_rhs(c_nodal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Banded direct solve for small bandwidth, Jacobi-PCG otherwise.
    Auto,
    BandCholesky,
    Pcg,
}

/// Solves the SPD system to a relative residual of 1e-12.
pub fn det_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    det_solve_with(a, b, SolveMethod::Auto)
}

pub fn det_solve_with(a: &CsrMatrix, b: &[f64], method: SolveMethod) -> Result<Vec<f64>> {
    if b.len() != a.n {
        return Err(Error::shape(format!("det_solve: rhs length {} vs {}", b.len(), a.n)));
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; a.n]);
    }
    let method = match method {
        SolveMethod::Auto => {
            if a.bandwidth() <= DIRECT_BANDWIDTH_LIMIT {
                SolveMethod::BandCholesky
            } else {
                SolveMethod::Pcg
            }
        }
        m => m,
    };
    let mut x = match method {
        SolveMethod::BandCholesky => {
            let chol = BandCholesky::new(a, a.bandwidth())?;
            let mut x = chol.solve(b);
            // Refinement passes while roundoff keeps the residual above
            // target; each contracts by roughly cond * unit roundoff, so
            // badly conditioned coefficients may need more than one.
            for _ in 0..4 {
                if relative_residual(a, b, &x, bnorm) <= 1e-12 {
                    break;
                }
                let mut r = b.to_vec();
                let ax = a.matvec_alloc(&x);
                for (ri, axi) in r.iter_mut().zip(ax.iter()) {
                    *ri -= axi;
                }
                let dx = chol.solve(&r);
                for (xi, di) in x.iter_mut().zip(dx.iter()) {
                    *xi += di;
                }
            }
            x
        }
        SolveMethod::Pcg => pcg(a, b, 1e-13, 20 * a.n + 100)?,
        SolveMethod::Auto => unreachable!(),
    };
    let rel = relative_residual(a, b, &x, bnorm);
    if rel > 1e-12 {
        // A second refinement for the iterative path.
        if method == SolveMethod::Pcg {
            let mut r = b.to_vec();
            let ax = a.matvec_alloc(&x);
            for (ri, axi) in r.iter_mut().zip(ax.iter()) {
                *ri -= axi;
            }
            let dx = pcg(a, &r, 1e-3, 20 * a.n + 100)?;
            for (xi, di) in x.iter_mut().zip(dx.iter()) {
                *xi += di;
            }
        }
        let rel = relative_residual(a, b, &x, bnorm);
        if rel > 1e-12 {
            return Err(Error::NoConvergence(format!(
                "det_solve: relative residual {rel:.3e} above 1e-12"
            )));
        }
    }
    Ok(x)
}

fn relative_residual(a: &CsrMatrix, b: &[f64], x: &[f64], bnorm: f64) -> f64 {
    let ax = a.matvec_alloc(x);
    let mut r2 = 0.0;
    for i in 0..b.len() {
        let d = b[i] - ax[i];
        r2 += d * d;
    }
    r2.sqrt() / bnorm
}

/// Weights `w` with `w^T u = \int u_h` over the subdomain
/// `[6/8, 7/8] x [7/8, 1]`, exact for bilinear `u_h` (`h^2/4` per cell
/// corner). Requires the cell count to resolve the subdomain boundaries.
pub fn qoi_weights(mesh: &Mesh) -> Result<Vec<f64>> {
    let m = mesh.m;
    if m % 8 != 0 {
        return Err(Error::invalid(format!(
            "qoi_weights: {m} cells per side cannot resolve the eighth-aligned subdomain"
        )));
    }
    let q = m / 8;
    let quarter = mesh.h() * mesh.h() / 4.0;
    let mut w = vec![0.0f64; mesh.num_free_dofs()];
    for c1 in 6 * q..7 * q {
        for c2 in 7 * q..8 * q {
            for t in 0..4 {
                let dof = mesh
                    .free_dof(c1 + t / 2, c2 + t % 2)
                    .expect("subdomain nodes are interior in x1");
                w[dof] += quarter;
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn level_two_mesh_has_expected_size() {
        let mesh = Mesh::from_level(2).unwrap();
        assert_eq!(mesh.cells_per_side(), 32);
        assert!((mesh.h() - 1.0 / 32.0).abs() < 1e-16);
        assert_eq!(mesh.num_free_dofs(), 31 * 33);
        assert!(Mesh::from_level(1).is_err());
    }

    #[test]
    fn tiny_mesh_dof_numbering_skips_dirichlet_columns() {
        let mesh = Mesh::with_cells(4).unwrap();
        assert_eq!(mesh.num_free_dofs(), 15);
        assert_eq!(mesh.free_dof(0, 2), None);
        assert_eq!(mesh.free_dof(4, 0), None);
        assert_eq!(mesh.free_dof(1, 0), Some(0));
        assert_eq!(mesh.free_dof(2, 2), Some(7));
    }

    #[test]
    fn unit_coefficient_interior_diagonal_is_eight_thirds() {
        let mesh = Mesh::with_cells(4).unwrap();
        let c = vec![1.0; mesh.num_nodes()];
        let a = assemble_stiffness(&mesh, &c).unwrap();
        let d = mesh.free_dof(2, 2).unwrap();
        let dense = a.to_dense();
        assert!((dense[[d, d]] - 8.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn assembly_is_linear_in_the_coefficient() {
        let mesh = Mesh::with_cells(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c1: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.random::<f64>() + 0.5).collect();
        let c2: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.random::<f64>() + 0.5).collect();
        let combo: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| 1.5 * a + 0.25 * b).collect();
        let a1 = assemble_stiffness(&mesh, &c1).unwrap();
        let a2 = assemble_stiffness(&mesh, &c2).unwrap();
        let ac = assemble_stiffness(&mesh, &combo).unwrap();
        for s in 0..ac.values.len() {
            let want = 1.5 * a1.values[s] + 0.25 * a2.values[s];
            assert!((ac.values[s] - want).abs() <= 1e-14 * want.abs().max(1.0));
        }
        // doubling is exact
        let cd: Vec<f64> = c1.iter().map(|v| 2.0 * v).collect();
        let ad = assemble_stiffness(&mesh, &cd).unwrap();
        for s in 0..ad.values.len() {
            assert_eq!(ad.values[s], 2.0 * a1.values[s]);
        }
    }

    #[test]
    fn assembled_matrix_is_exactly_symmetric() {
        let mesh = Mesh::with_cells(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let c: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.random::<f64>() + 0.2).collect();
        let a = assemble_stiffness(&mesh, &c).unwrap();
        let dense = a.to_dense();
        for i in 0..a.n {
            for j in 0..a.n {
                assert_eq!(dense[[i, j]], dense[[j, i]]);
            }
        }
        assert_eq!(a.bandwidth(), mesh.cells_per_side() + 2);
    }

    #[test]
    fn lift_touches_only_first_interior_column() {
        let mesh = Mesh::with_cells(4).unwrap();
        let c = vec![1.0; mesh.num_nodes()];
        let b = dirichlet_lift_rhs(&mesh, &c).unwrap();
        for i1 in 1..4 {
            for i2 in 0..=4 {
                let v = b[mesh.free_dof(i1, i2).unwrap()];
                if i1 == 1 {
                    assert!(v != 0.0, "({i1},{i2}) should be lifted");
                } else {
                    assert_eq!(v, 0.0, "({i1},{i2}) should be untouched");
                }
            }
        }
    }

    #[test]
    fn constant_coefficient_solution_is_one_minus_x1() {
        for m in [4usize, 32] {
            let mesh = Mesh::with_cells(m).unwrap();
            let c = vec![10.0; mesh.num_nodes()];
            let asm = StiffnessAssembler::new(&mesh);
            let a = asm.assemble(&c).unwrap();
            let b = asm.lift_rhs(&c).unwrap();
            let u = det_solve(&a, &b).unwrap();
            for i1 in 1..m {
                for i2 in 0..=m {
                    let want = 1.0 - i1 as f64 * mesh.h();
                    let got = u[mesh.free_dof(i1, i2).unwrap()];
                    assert!((got - want).abs() <= 1e-12, "m={m} ({i1},{i2}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn lift_scales_with_coefficient_but_solution_does_not() {
        let mesh = Mesh::with_cells(8).unwrap();
        let asm = StiffnessAssembler::new(&mesh);
        let c1 = vec![1.0; mesh.num_nodes()];
        let c10 = vec![10.0; mesh.num_nodes()];
        let b1 = asm.lift_rhs(&c1).unwrap();
        let b10 = asm.lift_rhs(&c10).unwrap();
        for (x, y) in b1.iter().zip(b10.iter()) {
            assert!((10.0 * x - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
        let u1 = det_solve(&asm.assemble(&c1).unwrap(), &b1).unwrap();
        let u10 = det_solve(&asm.assemble(&c10).unwrap(), &b10).unwrap();
        for (x, y) in u1.iter().zip(u10.iter()) {
            assert!((x - y).abs() <= 1e-11);
        }
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let mesh = Mesh::with_cells(4).unwrap();
        let c = vec![1.0; mesh.num_nodes()];
        let a = assemble_stiffness(&mesh, &c).unwrap();
        let u = det_solve(&a, &vec![0.0; a.n]).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variable_coefficient_solve_meets_residual_target() {
        let mesh = Mesh::with_cells(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c: Vec<f64> =
            (0..mesh.num_nodes()).map(|_| 0.5 + 1.5 * rng.random::<f64>()).collect();
        let a = assemble_stiffness(&mesh, &c).unwrap();
        let b: Vec<f64> = (0..a.n).map(|_| rng.random::<f64>() - 0.5).collect();
        let u = det_solve(&a, &b).unwrap();
        let r = {
            let ax = a.matvec_alloc(&u);
            let mut s = 0.0;
            for i in 0..a.n {
                s += (b[i] - ax[i]).powi(2);
            }
            s.sqrt()
        };
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(r <= 1e-12 * bn, "relative residual {}", r / bn);
    }

    #[test]
    fn pcg_and_direct_paths_agree() {
        let mesh = Mesh::with_cells(8).unwrap();
        let c = vec![3.0; mesh.num_nodes()];
        let asm = StiffnessAssembler::new(&mesh);
        let a = asm.assemble(&c).unwrap();
        let b = asm.lift_rhs(&c).unwrap();
        let ud = det_solve_with(&a, &b, SolveMethod::BandCholesky).unwrap();
        let ui = det_solve_with(&a, &b, SolveMethod::Pcg).unwrap();
        for (x, y) in ud.iter().zip(ui.iter()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn qoi_weights_integrate_constants_and_ramps_exactly() {
        for m in [8usize, 32] {
            let mesh = Mesh::with_cells(m).unwrap();
            let w = qoi_weights(&mesh).unwrap();
            let total: f64 = w.iter().sum();
            assert!((total - 1.0 / 64.0).abs() < 1e-15, "m={m}: area {total}");
            let mut ramp = 0.0;
            for i1 in 1..m {
                for i2 in 0..=m {
                    ramp += w[mesh.free_dof(i1, i2).unwrap()] * (1.0 - i1 as f64 * mesh.h());
                }
            }
            assert!((ramp - 0.0029296875).abs() < 1e-15, "m={m}: ramp {ramp}");
        }
    }

    #[test]
    fn qoi_weights_live_only_on_the_subdomain_closure() {
        let mesh = Mesh::with_cells(16).unwrap();
        let w = qoi_weights(&mesh).unwrap();
        for i1 in 1..16 {
            for i2 in 0..=16 {
                let (x1, x2) = (i1 as f64 / 16.0, i2 as f64 / 16.0);
                let inside =
                    (0.75..=0.875).contains(&x1) && (0.875..=1.0).contains(&x2);
                let v = w[mesh.free_dof(i1, i2).unwrap()];
                if inside {
                    assert!(v > 0.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn qoi_weights_need_eighth_aligned_meshes() {
        assert!(qoi_weights(&Mesh::with_cells(12).unwrap()).is_err());
    }
}
