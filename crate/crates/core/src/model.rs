//! Synthetic Karhunen-Loeve diffusion field, dimension truncation, Gauss
//! collocation grids and TT construction of the coefficient tensor.
//!
//! The random field is
//!
//! ```text
//! w(x, y) = sum_{k=1}^{d} y^k sqrt(eta_k) cos(2 pi rho1(k) x1) cos(2 pi rho2(k) x2)
//! ```
//!
//! with frequencies enumerated along anti-diagonals by `tau(k)` and spectral
//! weights `eta_k` proportional to `D_k = (k - k0)^(-nu)` past the plateau
//! `k <= k0`. The coefficient is `10 + w` (affine) or `exp(w)` (log form).

use ndarray::{Array2, Array3};

use crate::cross::{tt_cross, CrossInit, CrossOptions, CrossStats, Evaluator};
use crate::dense::symtridiag_eig;
use crate::error::{Error, Result};
use crate::fem::Mesh;
use crate::tt::TtTensor;

/// Random-index count used when building log-form coefficients for the PDE
/// study; plain library calls default to far fewer.
pub const DEFAULT_LOG_INIT_COUNT: usize = 800;

pub const TRUNCATION_DIM_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffForm {
    Affine,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamDist {
    Uniform,
    Normal,
}

/// Parameters of the synthetic KLE field.
#[derive(Debug, Clone, Copy)]
pub struct KleSpec {
    pub nu: f64,
    pub sigma2: f64,
    /// Inverse correlation length (plateau width of the decay profile).
    pub k0: u32,
    pub form: CoeffForm,
    pub dist: ParamDist,
    pub trunc_tol: f64,
}

impl KleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::invalid(format!("kle: nu must be positive, got {}", self.nu)));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(Error::invalid(format!("kle: sigma2 must be >= 0, got {}", self.sigma2)));
        }
        if self.k0 < 1 {
            return Err(Error::invalid("kle: k0 must be >= 1"));
        }
        if !(self.trunc_tol > 0.0) {
            return Err(Error::invalid(format!(
                "kle: trunc_tol must be positive, got {}",
                self.trunc_tol
            )));
        }
        if self.form == CoeffForm::Affine && self.dist != ParamDist::Uniform {
            return Err(Error::invalid(
                "kle: the affine form is only well posed with uniform parameters",
            ));
        }
        Ok(())
    }
}

/// Anti-diagonal counter: largest `t` with `t (t + 1) / 2 <= k`.
pub fn tau(k: usize) -> usize {
    let mut t = (-0.5 + (0.25 + 2.0 * k as f64).sqrt()).floor() as usize;
    while (t + 1) * (t + 2) / 2 <= k {
        t += 1;
    }
    while t * (t + 1) / 2 > k {
        t -= 1;
    }
    t
}

/// Frequency pair `(rho1, rho2)` of term `k >= 1`.
pub fn frequencies(k: usize) -> (usize, usize) {
    let t = tau(k);
    let r1 = k - t * (t + 1) / 2;
    (r1, t - r1)
}

/// Spectral profile `D_k`.
fn decay(spec: &KleSpec, k: usize) -> f64 {
    if k <= spec.k0 as usize {
        1.0
    } else {
        ((k - spec.k0 as usize) as f64).powf(-spec.nu)
    }
}

fn decay_sum(spec: &KleSpec, d: usize) -> f64 {
    (1..=d).map(|m| decay(spec, m)).sum()
}

/// Term variance `eta_k` for truncation dimension `d`.
pub fn eta(spec: &KleSpec, d: usize, k: usize) -> f64 {
    spec.sigma2 * decay(spec, k) / decay_sum(spec, d)
}

/// KLE basis function `psi_k(x) = sqrt(eta_k) cos(2 pi rho1 x1) cos(2 pi rho2 x2)`.
pub fn kle_term(spec: &KleSpec, d: usize, k: usize, x1: f64, x2: f64) -> f64 {
    let (r1, r2) = frequencies(k);
    let two_pi = 2.0 * std::f64::consts::PI;
    eta(spec, d, k).sqrt() * (two_pi * r1 as f64 * x1).cos() * (two_pi * r2 as f64 * x2).cos()
}

/// Smallest `d` with `sigma2 D_{d+1} / sum_{m<=d} D_m < trunc_tol`;
/// never returns 0, errors past [`TRUNCATION_DIM_CAP`].
pub fn truncation_dim(spec: &KleSpec) -> Result<usize> {
    spec.validate()?;
    let mut partial = 0.0;
    for d in 1..=TRUNCATION_DIM_CAP {
        partial += decay(spec, d);
        if spec.sigma2 * decay(spec, d + 1) / partial < spec.trunc_tol {
            return Ok(d);
        }
    }
    Err(Error::NoConvergence(format!(
        "truncation_dim: tolerance {} unreachable within {TRUNCATION_DIM_CAP} terms",
        spec.trunc_tol
    )))
}

/// Gauss quadrature for the parameter density: probabilists' Hermite for
/// `Normal`, Legendre mapped to U(-sqrt(3), sqrt(3)) for `Uniform`. Weights
/// sum to one.
pub fn gauss_grid(dist: ParamDist, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("gauss_grid: need at least one node"));
    }
    let diag = vec![0.0f64; n];
    let offdiag: Vec<f64> = match dist {
        ParamDist::Normal => (1..n).map(|j| (j as f64).sqrt()).collect(),
        ParamDist::Uniform => (1..n)
            .map(|j| {
                let jf = j as f64;
                jf / (4.0 * jf * jf - 1.0).sqrt()
            })
            .collect(),
    };
    let eig = symtridiag_eig(&diag, &offdiag)?;
    let scale = match dist {
        ParamDist::Normal => 1.0,
        ParamDist::Uniform => 3f64.sqrt(),
    };
    let nodes: Vec<f64> = eig.values.iter().map(|v| v * scale).collect();
    let weights: Vec<f64> = eig.first_components().iter().map(|v| v * v).collect();
    Ok((nodes, weights))
}

/// Tensor-product collocation grid over the parameter domain.
#[derive(Debug, Clone)]
pub struct ParamGrid {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl ParamGrid {
    pub fn gauss(dist: ParamDist, sizes: &[usize]) -> Result<ParamGrid> {
        if sizes.is_empty() {
            return Err(Error::invalid("ParamGrid: no modes"));
        }
        let mut nodes = Vec::with_capacity(sizes.len());
        let mut weights = Vec::with_capacity(sizes.len());
        for &n in sizes {
            let (x, w) = gauss_grid(dist, n)?;
            nodes.push(x);
            weights.push(w);
        }
        let grid = ParamGrid { nodes, weights };
        grid.validate()?;
        Ok(grid)
    }

    pub fn num_modes(&self) -> usize {
        self.nodes.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.len()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.weights.len() {
            return Err(Error::shape("ParamGrid: node/weight mode counts differ"));
        }
        for (k, (x, w)) in self.nodes.iter().zip(self.weights.iter()).enumerate() {
            if x.len() != w.len() || x.is_empty() {
                return Err(Error::shape(format!("ParamGrid: mode {k} sizes inconsistent")));
            }
            if x.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::invalid(format!("ParamGrid: mode {k} nodes not increasing")));
            }
            if w.iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid(format!("ParamGrid: mode {k} has nonpositive weights")));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-13 {
                return Err(Error::invalid(format!(
                    "ParamGrid: mode {k} weights sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Anisotropic mode sizes `n_k = max(1, ceil(n + (1 - n) ln D_k / ln D_d))`,
/// keeping `n` on the plateau and tapering to 1 at `k = d`. When `D_d = 1`
/// (e.g. `d <= k0`) the taper is undefined and every mode keeps `n`.
pub fn anisotropic_sizes(n: usize, spec: &KleSpec, d: usize) -> Vec<usize> {
    let dd = decay(spec, d);
    if dd >= 1.0 || n <= 1 {
        return vec![n.max(1); d];
    }
    let denom = dd.ln();
    (1..=d)
        .map(|k| {
            let dk = decay(spec, k);
            let raw = n as f64 + (1.0 - n as f64) * dk.ln() / denom;
            (raw.ceil() as isize).max(1) as usize
        })
        .collect()
}

/// Values of `psi_k` at every grid node of the mesh: row `k - 1` holds term
/// `k` over nodes in mesh order.
pub fn psi_tables(spec: &KleSpec, d: usize, mesh: &Mesh) -> Array2<f64> {
    let nn = mesh.num_nodes();
    let mut t = Array2::zeros((d, nn));
    for k in 1..=d {
        let amp = eta(spec, d, k).sqrt();
        let (r1, r2) = frequencies(k);
        let two_pi = 2.0 * std::f64::consts::PI;
        for node in 0..nn {
            let (x1, x2) = mesh.node_coords(node);
            t[[k - 1, node]] =
                amp * (two_pi * r1 as f64 * x1).cos() * (two_pi * r2 as f64 * x2).cos();
        }
    }
    t
}

/// Nodal coefficient values for one parameter sample `y`.
pub fn coeff_nodal(spec: &KleSpec, psi: &Array2<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (d, nn) = psi.dim();
    if y.len() != d {
        return Err(Error::shape(format!("coeff_nodal: sample length {} vs d = {d}", y.len())));
    }
    let mut c = vec![0.0f64; nn];
    for k in 0..d {
        let yk = y[k];
        if yk == 0.0 {
            continue;
        }
        for (ci, v) in c.iter_mut().zip(psi.row(k).iter()) {
            *ci += yk * v;
        }
    }
    match spec.form {
        CoeffForm::Affine => c.iter_mut().for_each(|v| *v += 10.0),
        CoeffForm::Log => c.iter_mut().for_each(|v| *v = v.exp()),
    }
    Ok(c)
}

/// Exact TT decomposition of the affine coefficient
/// `c(i, j) = 10 + sum_k psi_k(x_i) y^k_{j_k}` over all mesh grid nodes.
///
/// The construction carries one "done" channel plus pending channels for
/// the terms not yet bound to their parameter, giving ranks `d + 1 - k`;
/// a final rounding pass removes whatever is redundant (e.g. when some
/// `psi_k` vanish).
pub fn coeff_affine_tt(spec: &KleSpec, mesh: &Mesh, grid: &ParamGrid) -> Result<TtTensor> {
    spec.validate()?;
    if spec.form != CoeffForm::Affine {
        return Err(Error::invalid("coeff_affine_tt: spec form is not affine"));
    }
    let d = grid.num_modes();
    let psi = psi_tables(spec, d, mesh);
    let nn = mesh.num_nodes();

    let mut blocks = Vec::with_capacity(d + 1);
    let mut spatial = Array3::zeros((1, nn, d + 1));
    for i in 0..nn {
        spatial[[0, i, 0]] = 10.0;
        for k in 1..=d {
            spatial[[0, i, k]] = psi[[k - 1, i]];
        }
    }
    blocks.push(spatial);
    for k in 1..=d {
        let y = &grid.nodes[k - 1];
        let rin = d + 2 - k;
        let rout = d + 1 - k;
        let mut b = Array3::zeros((rin, y.len(), rout));
        for (j, &yj) in y.iter().enumerate() {
            b[[0, j, 0]] = 1.0; // done stays done
            b[[1, j, 0]] = yj; // term k binds its parameter
            for i in 1..rout {
                b[[1 + i, j, i]] = 1.0; // later terms pass through
            }
        }
        blocks.push(b);
    }
    Ok(TtTensor::new(blocks)?.round(1e-13, usize::MAX))
}

/// TT approximation of the log-form coefficient
/// `c(i, j) = exp(sum_k psi_k(x_i) y^k_{j_k})` via cross interpolation with
/// random index initialization.
pub fn coeff_log_tt(
    spec: &KleSpec,
    mesh: &Mesh,
    grid: &ParamGrid,
    rel_tol: f64,
    init_count: usize,
    seed: u64,
) -> Result<(TtTensor, CrossStats)> {
    spec.validate()?;
    if spec.form != CoeffForm::Log {
        return Err(Error::invalid("coeff_log_tt: spec form is not log"));
    }
    let d = grid.num_modes();
    let psi = psi_tables(spec, d, mesh);
    let nodes = grid.nodes.clone();
    let mut sizes = Vec::with_capacity(d + 1);
    sizes.push(mesh.num_nodes());
    sizes.extend(grid.mode_sizes());

    let f = Evaluator::new(move |batch: &[Vec<usize>]| {
        batch
            .iter()
            .map(|idx| {
                let i = idx[0];
                let mut s = 0.0;
                for k in 0..d {
                    s += psi[[k, i]] * nodes[k][idx[k + 1]];
                }
                s.exp()
            })
            .collect()
    });
    tt_cross(
        &f,
        &sizes,
        CrossInit::Random { count: init_count, seed },
        &CrossOptions { rel_tol, ..CrossOptions::default() },
    )
}
