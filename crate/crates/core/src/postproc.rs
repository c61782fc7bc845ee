//! Output-side processing: extracting the scalar quantity of interest from
//! a solution TT, computing its moments by cross-approximated powers against
//! the quadrature weights, recovering a maximum-entropy density from those
//! moments, and the log-averaged run error metric.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cross::{tt_cross, CrossInit, CrossOptions, Evaluator};
use crate::dense::{symtridiag_eig, LuFactors};
use crate::error::{Error, Result};
use crate::model::ParamGrid;
use crate::tt::{fold_left, fold_right, unfold_right, TtTensor};

/// Moments `Q_1..Q_S` of the quantity of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub values: Vec<f64>,
}

impl MomentSet {
    pub fn new(values: Vec<f64>) -> Result<MomentSet> {
        let m = MomentSet { values };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("MomentSet: need at least one moment"));
        }
        if let Some(p) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("MomentSet: moment {} not finite", p + 1)));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.values.len()
    }

    /// 2-norm of the moment vector; the error metric consumes this.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Exponential-polynomial density `P(q) = exp(sum_p lambda_p q^p)` on a
/// bounded support.
#[derive(Debug, Clone)]
pub struct PdfModel {
    /// `lambda_0..lambda_S` in natural coordinates.
    pub lambda: Vec<f64>,
    pub support: (f64, f64),
    pub quad_points: usize,
    /// Same exponent polynomial in the coordinate x = (q - gamma)/delta
    /// mapping the support to [-1, 1]. For narrow supports away from the
    /// origin the natural coefficients are huge and cancel; evaluating in
    /// the scaled coordinate keeps the density accurate.
    scaled: Vec<f64>,
}

impl PdfModel {
    fn map(&self) -> (f64, f64) {
        (0.5 * (self.support.0 + self.support.1), 0.5 * (self.support.1 - self.support.0))
    }

    /// Builds a model from natural-coordinate multipliers.
    pub fn from_natural(lambda: Vec<f64>, support: (f64, f64), quad_points: usize) -> PdfModel {
        let (gamma, delta) = (0.5 * (support.0 + support.1), 0.5 * (support.1 - support.0));
        // ln P(gamma + delta x) = sum_p x^p [ sum_{i>=p} lambda_i C(i,p) gamma^(i-p) delta^p ]
        let s = lambda.len().saturating_sub(1);
        let mut scaled = vec![0.0f64; s + 1];
        for (i, &li) in lambda.iter().enumerate() {
            for (p, slot) in scaled.iter_mut().enumerate().take(i + 1) {
                *slot += li * binomial(i, p) * gamma.powi((i - p) as i32) * delta.powi(p as i32);
            }
        }
        PdfModel { lambda, support, quad_points, scaled }
    }

    fn from_scaled(scaled: Vec<f64>, support: (f64, f64), quad_points: usize) -> PdfModel {
        let (gamma, delta) = (0.5 * (support.0 + support.1), 0.5 * (support.1 - support.0));
        // lambda_i = sum_{p>=i} scaled_p C(p,i) (-gamma)^(p-i) / delta^p
        let s = scaled.len().saturating_sub(1);
        let mut lambda = vec![0.0f64; s + 1];
        for (p, &sp) in scaled.iter().enumerate() {
            let dp = delta.powi(p as i32);
            for (i, slot) in lambda.iter_mut().enumerate().take(p + 1) {
                *slot += sp * binomial(p, i) * (-gamma).powi((p - i) as i32) / dp;
            }
        }
        PdfModel { lambda, support, quad_points, scaled }
    }

    /// Density value; zero outside the support.
    pub fn density(&self, q: f64) -> f64 {
        if q < self.support.0 || q > self.support.1 {
            return 0.0;
        }
        let (gamma, delta) = self.map();
        let x = (q - gamma) / delta;
        let mut e = 0.0;
        let mut xp = 1.0;
        for &l in &self.scaled {
            e += l * xp;
            xp *= x;
        }
        e.exp()
    }

    /// Uniform sampling of the density for plotting / CSV export.
    pub fn sample_grid(&self, count: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.support;
        let n = count.max(2);
        (0..n)
            .map(|i| {
                let q = a + (b - a) * i as f64 / (n - 1) as f64;
                (q, self.density(q))
            })
            .collect()
    }
}

/// Contracts the spatial mode of a solution TT with the QoI weight vector
/// and applies the fixed `-0.2` offset, leaving a tensor over the parameter
/// modes only.
pub fn spatial_qoi(u: &TtTensor, w: &[f64]) -> Result<TtTensor> {
    if u.num_modes() < 2 {
        return Err(Error::invalid("spatial_qoi: no parametric modes"));
    }
    let n = u.mode_sizes()[0];
    if w.len() != n {
        return Err(Error::shape(format!(
            "spatial_qoi: {} weights for spatial mode of size {n}",
            w.len()
        )));
    }
    let u0 = fold_left(u.block(0)); // (n, r1)
    let r1 = u0.ncols();
    let mut v = Array2::zeros((1, r1));
    for a in 0..r1 {
        let mut acc = 0.0;
        for i in 0..n {
            acc += w[i] * u0[[i, a]];
        }
        v[[0, a]] = acc;
    }
    let n1 = u.block(1).dim().1;
    let mut blocks = Vec::with_capacity(u.num_modes() - 1);
    blocks.push(unfold_right(&v.dot(&fold_right(u.block(1))), n1));
    for k in 2..u.num_modes() {
        blocks.push(u.block(k).clone());
    }
    let q = TtTensor::new(blocks)?;
    let sizes = q.mode_sizes();
    q.add(&TtTensor::constant(&sizes, -0.2)?)
}

/// Moments `Q_p = E[Q^p]` for `p = 1..=s`: each power is re-approximated by
/// cross interpolation of `element(qy)^p` and contracted with the rank-1
/// tensor of quadrature weights.
pub fn moments(qy: &TtTensor, grid: &ParamGrid, s: usize, rel_tol: f64) -> Result<MomentSet> {
    if s == 0 {
        return Err(Error::invalid("moments: need s >= 1"));
    }
    if qy.mode_sizes() != grid.mode_sizes() {
        return Err(Error::shape(format!(
            "moments: tensor modes {:?} vs grid modes {:?}",
            qy.mode_sizes(),
            grid.mode_sizes()
        )));
    }
    let weight = TtTensor::rank_one(&grid.weights)?;
    // Random cross initialization caps the attainable ranks, so scale the
    // budget with the rank of the base tensor.
    let init_count = (4 * qy.max_rank()).clamp(32, 512);
    let mut values = Vec::with_capacity(s);
    for p in 1..=s {
        let f = Evaluator::new(|batch: &[Vec<usize>]| {
            batch
                .iter()
                .map(|idx| qy.element(idx).expect("cross stays in bounds").powi(p as i32))
                .collect()
        });
        let (vp, _stats) = tt_cross(
            &f,
            &qy.mode_sizes(),
            CrossInit::Random { count: init_count, seed: 1000 + p as u64 },
            &CrossOptions { rel_tol, ..CrossOptions::default() },
        )?;
        values.push(vp.inner(&weight)?);
    }
    MomentSet::new(values)
}

/// Support interval for density recovery: the sampled range of the tensor
/// padded by three sample standard deviations on both sides.
pub fn support_from_tensor(qy: &TtTensor, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::invalid("support_from_tensor: need samples >= 1"));
    }
    let sizes = qy.mode_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..samples {
        let idx: Vec<usize> = sizes.iter().map(|&n| rng.random_range(0..n)).collect();
        let v = qy.element(&idx)?;
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / samples as f64;
    let var = (sumsq / samples as f64 - mean * mean).max(0.0);
    let pad = 3.0 * var.sqrt();
    Ok((lo - pad, hi + pad))
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Gauss-Legendre rule on [-1, 1] with weights summing to 2.
fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let diag = vec![0.0f64; n];
    let offdiag: Vec<f64> = (1..n)
        .map(|j| {
            let jf = j as f64;
            jf / (4.0 * jf * jf - 1.0).sqrt()
        })
        .collect();
    let eig = symtridiag_eig(&diag, &offdiag)?;
    let weights: Vec<f64> = eig.first_components().iter().map(|v| 2.0 * v * v).collect();
    Ok((eig.values, weights))
}

/// Maximum-entropy density with the given moments on a fixed support.
///
/// The Newton iteration runs in affinely rescaled coordinates (`q` mapped to
/// [-1, 1]) so the Hankel-type Hessians stay conditioned; the returned
/// multipliers are mapped back to natural coordinates by binomial
/// re-expansion. An empty moment set reduces to the normalization constraint
/// alone and yields the uniform density.
pub fn maxent_pdf(
    m: &MomentSet,
    support: (f64, f64),
    quad_points: usize,
    newton_tol: f64,
    max_newton: usize,
) -> Result<PdfModel> {
    let (a, b) = support;
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("maxent_pdf: bad support [{a}, {b}]")));
    }
    let s = m.values.len();
    let gamma = 0.5 * (a + b);
    let delta = 0.5 * (b - a);

    // moments of the mapped variable x = (q - gamma)/delta, mu0 = 1
    let mut mu_nat = vec![1.0f64];
    mu_nat.extend_from_slice(&m.values);
    let mut mu = vec![0.0f64; s + 1];
    for (p, slot) in mu.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..=p {
            acc += binomial(p, i) * (-gamma).powi((p - i) as i32) * mu_nat[i];
        }
        *slot = acc / delta.powi(p as i32);
    }

    let (x, w) = gauss_legendre(quad_points.max(s + 2))?;
    // powers of the quadrature nodes up to 2s
    let mut xp = vec![vec![1.0f64; x.len()]];
    for p in 1..=(2 * s).max(1) {
        let prev = &xp[p - 1];
        xp.push(prev.iter().zip(x.iter()).map(|(pv, xv)| pv * xv).collect());
    }

    // start from the uniform density on [-1, 1]
    let mut lam = vec![0.0f64; s + 1];
    lam[0] = (0.5f64).ln();
    let density = |lam: &[f64]| -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, _)| {
                let mut e = 0.0;
                for (p, &l) in lam.iter().enumerate() {
                    e += l * xp[p][j];
                }
                e.exp()
            })
            .collect()
    };
    let residual = |dens: &[f64]| -> Vec<f64> {
        (0..=s)
            .map(|p| {
                let int: f64 =
                    dens.iter().enumerate().map(|(j, dv)| w[j] * xp[p][j] * dv).sum();
                int - mu[p]
            })
            .collect()
    };

    let mut dens = density(&lam);
    let mut res = residual(&dens);
    let mut rnorm = res.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for _ in 0..max_newton {
        if rnorm <= newton_tol {
            // the fit describes the mapped density on [-1, 1]; the natural
            // one is P(q) = P~(x)/delta, so fold -ln delta into the constant
            // term, then recover natural multipliers by binomial expansion
            let mut scaled = lam.clone();
            scaled[0] -= delta.ln();
            return Ok(PdfModel::from_scaled(scaled, support, quad_points.max(s + 2)));
        }
        let mut h = Array2::zeros((s + 1, s + 1));
        for p in 0..=s {
            for q in p..=s {
                let v: f64 =
                    dens.iter().enumerate().map(|(j, dv)| w[j] * xp[p + q][j] * dv).sum();
                h[[p, q]] = v;
                h[[q, p]] = v;
            }
        }
        let lu = LuFactors::new(h).map_err(|_| {
            Error::NoConvergence(
                "maxent_pdf: singular moment Hessian; widen the support or use fewer moments"
                    .into(),
            )
        })?;
        let mut step: Vec<f64> = res.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut step);

        // step halving on the residual norm
        let mut scale = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> =
                lam.iter().zip(step.iter()).map(|(l, d)| l + scale * d).collect();
            let tdens = density(&trial);
            let tres = residual(&tdens);
            let tnorm = tres.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if tnorm.is_finite() && tnorm < rnorm {
                lam = trial;
                dens = tdens;
                res = tres;
                rnorm = tnorm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NoConvergence(format!(
        "maxent_pdf: moment residual {rnorm:.3e} after {max_newton} iterations; \
         widen the support or use fewer moments"
    )))
}

/// Log-averaged relative error of repeated runs against a reference:
/// `exp(mean log ||Q - Q*|| - log ||Q*||)`. A run that reproduces the
/// reference exactly zeroes the geometric mean.
pub fn run_error(runs: &[MomentSet], reference: &MomentSet) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::invalid("run_error: need at least one run"));
    }
    let rnorm = reference.norm();
    if rnorm <= 0.0 {
        return Err(Error::invalid("run_error: reference moment vector is zero"));
    }
    let mut mean_log = 0.0f64;
    for (i, run) in runs.iter().enumerate() {
        if run.order() != reference.order() {
            return Err(Error::shape(format!(
                "run_error: run {i} has {} moments, reference {}",
                run.order(),
                reference.order()
            )));
        }
        let dev: f64 = run
            .values
            .iter()
            .zip(reference.values.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dev == 0.0 {
            return Ok(0.0);
        }
        mean_log += dev.ln();
    }
    mean_log /= runs.len() as f64;
    Ok((mean_log - rnorm.ln()).exp())
}

/// Relative L2 distance of two densities over their common support,
/// normalized by the second argument (the reference).
pub fn pdf_distance(pa: &PdfModel, pb: &PdfModel) -> f64 {
    let lo = pa.support.0.max(pb.support.0);
    let hi = pa.support.1.min(pb.support.1);
    if !(hi > lo) {
        return f64::INFINITY;
    }
    let n = pa.quad_points.max(pb.quad_points).max(2);
    let (x, w) = gauss_legendre(n).expect("legendre nodes");
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (xi, wi) in x.iter().zip(w.iter()) {
        let q = mid + half * xi;
        let da = pa.density(q);
        let db = pb.density(q);
        num += wi * (da - db) * (da - db);
        den += wi * db * db;
    }
    (num / den).sqrt()
}
