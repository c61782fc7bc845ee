//! Monte Carlo and randomly-shifted lattice QMC moment estimators. These
//! sample the coefficient directly (no tensor structure) and serve as
//! independent checks on the TT pipeline.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{det_solve, qoi_weights, Mesh, StiffnessAssembler};
use crate::model::{coeff_nodal, psi_tables, KleSpec, ParamDist};
use crate::postproc::MomentSet;

/// One parametric problem instance prepared for pointwise sampling:
/// expansion tables, assembler, and QoI weights for a fixed mesh level and
/// truncation dimension.
pub struct SampledProblem {
    spec: KleSpec,
    d: usize,
    asm: StiffnessAssembler,
    psi: Array2<f64>,
    weights: Vec<f64>,
}

impl SampledProblem {
    pub fn new(spec: KleSpec, level: u32, d: usize) -> Result<SampledProblem> {
        SampledProblem::with_mesh(spec, &Mesh::from_level(level)?, d)
    }

    pub fn with_mesh(spec: KleSpec, mesh: &Mesh, d: usize) -> Result<SampledProblem> {
        spec.validate()?;
        if d == 0 {
            return Err(Error::invalid("SampledProblem: need d >= 1"));
        }
        let psi = psi_tables(&spec, d, mesh);
        let weights = qoi_weights(mesh)?;
        let asm = StiffnessAssembler::new(mesh);
        Ok(SampledProblem { spec, d, asm, psi, weights })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn dist(&self) -> ParamDist {
        self.spec.dist
    }

    /// Deterministic QoI at one parameter point: assemble, solve, contract.
    pub fn qoi_at(&self, y: &[f64]) -> Result<f64> {
        let c = coeff_nodal(&self.spec, &self.psi, y)?;
        let a = self.asm.assemble(&c)?;
        let b = self.asm.lift_rhs(&c)?;
        let u = det_solve(&a, &b)?;
        let q: f64 = self.weights.iter().zip(u.iter()).map(|(w, ui)| w * ui).sum();
        Ok(q - 0.2)
    }
}

fn qoi_batch(problem: &SampledProblem, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, y)| {
            problem
                .qoi_at(y)
                .map_err(|e| Error::NoConvergence(format!("sample {i}: {e}")))
        })
        .collect()
}

fn moments_of(qs: &[f64], s: usize) -> MomentSet {
    let n = qs.len() as f64;
    let values = (1..=s)
        .map(|p| qs.iter().map(|q| q.powi(p as i32)).sum::<f64>() / n)
        .collect();
    MomentSet { values }
}

/// Plain Monte Carlo estimate of the first `s` moments together with the
/// standard error of each moment estimate.
pub fn mc_moments(
    problem: &SampledProblem,
    n: usize,
    s: usize,
    seed: u64,
) -> Result<(MomentSet, Vec<f64>)> {
    if n < 2 {
        return Err(Error::invalid("mc_moments: need n >= 2"));
    }
    if s == 0 {
        return Err(Error::invalid("mc_moments: need s >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = problem.dim();
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| match problem.dist() {
                    ParamDist::Uniform => {
                        let s3 = 3f64.sqrt();
                        rng.random::<f64>() * 2.0 * s3 - s3
                    }
                    ParamDist::Normal => rng.sample(StandardNormal),
                })
                .collect()
        })
        .collect();
    let qs = qoi_batch(problem, &samples)?;
    let m = moments_of(&qs, s);
    // identical samples have zero spread by definition; the two-pass
    // formula would report ulp-level noise from the mean rounding
    let all_same = qs.windows(2).all(|w| w[0] == w[1]);
    let std_errors = (1..=s)
        .map(|p| {
            if all_same {
                return 0.0;
            }
            let mean = m.values[p - 1];
            let var = qs
                .iter()
                .map(|q| {
                    let dv = q.powi(p as i32) - mean;
                    dv * dv
                })
                .sum::<f64>()
                / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        })
        .collect();
    m.validate()?;
    Ok((m, std_errors))
}

/// Rank-1 lattice rule: points `frac(i z / n + shift)`.
#[derive(Debug, Clone)]
pub struct LatticeRule {
    pub z: Vec<u64>,
    pub n: u64,
    pub shift: Vec<f64>,
    pub seed: u64,
}

impl LatticeRule {
    /// Builds a rule with `2^m` points and a random shift drawn from `seed`.
    pub fn new(z: Vec<u64>, m: u32, seed: u64) -> Result<LatticeRule> {
        if z.is_empty() {
            return Err(Error::invalid("LatticeRule: empty generating vector"));
        }
        if m >= 63 {
            return Err(Error::invalid("LatticeRule: 2^m overflows"));
        }
        let n = 1u64 << m;
        let z = z.into_iter().map(|zk| zk % n).collect::<Vec<_>>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..z.len()).map(|_| rng.random::<f64>()).collect();
        Ok(LatticeRule { z, n, shift, seed })
    }

    /// Korobov fallback `z_k = 76^k mod n` used when no vector file is given.
    pub fn korobov(d: usize, m: u32, seed: u64) -> Result<LatticeRule> {
        if m >= 63 {
            return Err(Error::invalid("LatticeRule: 2^m overflows"));
        }
        let n = 1u64 << m;
        let mut z = Vec::with_capacity(d);
        let mut acc = 1u64;
        for _ in 0..d {
            z.push(acc);
            acc = (acc as u128 * 76 % n as u128) as u64;
        }
        LatticeRule::new(z, m, seed)
    }

    /// Reads a generating vector from a text file, one integer per line,
    /// using the first `d` lines.
    pub fn from_file(path: &std::path::Path, d: usize, m: u32, seed: u64) -> Result<LatticeRule> {
        let text = std::fs::read_to_string(path)?;
        let mut z = Vec::with_capacity(d);
        for (ln, line) in text.lines().enumerate() {
            if z.len() == d {
                break;
            }
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v: u64 = t.parse().map_err(|_| Error::Parse {
                offset: ln as u64 + 1,
                msg: format!("bad generating-vector entry {t:?}"),
            })?;
            z.push(v);
        }
        if z.len() < d {
            return Err(Error::invalid(format!(
                "generating vector file has {} entries, need {d}",
                z.len()
            )));
        }
        LatticeRule::new(z, m, seed)
    }

    /// The i-th point of the rule restricted to `n` points, in [0, 1)^d.
    pub fn point(&self, i: u64, n: u64) -> Vec<f64> {
        self.z
            .iter()
            .zip(self.shift.iter())
            .map(|(&zk, &sh)| {
                let frac = ((i as u128 * zk as u128) % n as u128) as f64 / n as f64;
                let x = frac + sh;
                x - x.floor()
            })
            .collect()
    }
}

/// Inverse standard normal CDF, rational approximation with absolute error
/// well under 1e-9 on (0, 1).
pub fn inv_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
            + 6.7265770927008700853e4)
            * r
            + 4.5921953931549871457e4)
            * r
            + 1.3731693765509461125e4)
            * r
            + 1.9715909503065514427e3)
            * r
            + 1.3314166789178437745e2)
            * r
            + 3.3871328727963666080e0)
            * q;
        let den = ((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
            + 3.9307895800092710610e4)
            * r
            + 2.1213794301586595867e4)
            * r
            + 5.3941960214247511077e3)
            * r
            + 6.8718700749205790830e2)
            * r
            + 4.2313330701600911252e1)
            * r
            + 1.0;
        return num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
            + 2.41780725177450611770e-1)
            * r
            + 1.27045825245236838258e0)
            * r
            + 3.64784832476320460504e0)
            * r
            + 5.76949722146069140550e0)
            * r
            + 4.63033784615654529590e0)
            * r
            + 1.42343711074968357734e0;
        let den = ((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
            + 1.51986665636164571966e-2)
            * r
            + 1.48103976427480074590e-1)
            * r
            + 6.89767334985100004550e-1)
            * r
            + 1.67638483018380384940e0)
            * r
            + 2.05319162663775882187e0)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 1.24266094738807843860e-3)
            * r
            + 2.65321895265761230930e-2)
            * r
            + 2.96560571828504891230e-1)
            * r
            + 1.78482653991729133580e0)
            * r
            + 5.46378491116411436990e0)
            * r
            + 6.65790464350110377720e0;
        let den = ((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7)
            * r
            + 1.84631831751005468180e-5)
            * r
            + 7.86869131145613259100e-4)
            * r
            + 1.48753612908506148525e-2)
            * r
            + 1.36929880922735805310e-1)
            * r
            + 5.99832206555887937690e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn lattice_to_param(x: &[f64], dist: ParamDist) -> Vec<f64> {
    match dist {
        ParamDist::Uniform => {
            let s3 = 3f64.sqrt();
            x.iter().map(|&xi| s3 * (2.0 * xi - 1.0)).collect()
        }
        ParamDist::Normal => x
            .iter()
            .map(|&xi| {
                // an exact zero maps to -inf; the shift makes it measure
                // zero, so nudge instead of erroring
                let xi = if xi <= 0.0 { 2f64.powi(-64) } else { xi };
                inv_normal_cdf(xi)
            })
            .collect(),
    }
}

/// Randomly-shifted lattice QMC estimate of the first `s` moments using
/// `2^m` points of `rule`.
pub fn qmc_moments(
    problem: &SampledProblem,
    m: u32,
    rule: &LatticeRule,
    s: usize,
) -> Result<MomentSet> {
    if rule.z.len() < problem.dim() {
        return Err(Error::shape(format!(
            "qmc_moments: rule dimension {} below problem dimension {}",
            rule.z.len(),
            problem.dim()
        )));
    }
    if s == 0 {
        return Err(Error::invalid("qmc_moments: need s >= 1"));
    }
    if m >= 63 {
        return Err(Error::invalid("qmc_moments: 2^m overflows"));
    }
    let n = 1u64 << m;
    let d = problem.dim();
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let x = rule.point(i, n);
            lattice_to_param(&x[..d], problem.dist())
        })
        .collect();
    let qs = qoi_batch(problem, &samples)?;
    let ms = moments_of(&qs, s);
    ms.validate()?;
    Ok(ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoeffForm;

    fn constant_spec() -> KleSpec {
        KleSpec {
            nu: 4.0,
            sigma2: 0.0,
            k0: 1,
            form: CoeffForm::Affine,
            dist: ParamDist::Uniform,
            trunc_tol: 1e-2,
        }
    }

    fn affine_spec() -> KleSpec {
        KleSpec {
            nu: 4.0,
            sigma2: 0.5,
            k0: 1,
            form: CoeffForm::Affine,
            dist: ParamDist::Uniform,
            trunc_tol: 1e-2,
        }
    }

    #[test]
    fn constant_coefficient_gives_zero_spread() {
        let p = SampledProblem::with_mesh(constant_spec(), &Mesh::with_cells(8).unwrap(), 1).unwrap();
        let (m, se) = mc_moments(&p, 16, 2, 42).unwrap();
        let want = 0.0029296875 - 0.2;
        assert!((m.values[0] - want).abs() < 1e-10, "{}", m.values[0]);
        assert!((m.values[1] - want * want).abs() < 1e-10);
        assert_eq!(se, vec![0.0, 0.0]);
    }

    #[test]
    fn fixed_seed_reproduces_estimates_exactly() {
        let p = SampledProblem::with_mesh(affine_spec(), &Mesh::with_cells(8).unwrap(), 3).unwrap();
        let (m1, se1) = mc_moments(&p, 32, 3, 7).unwrap();
        let (m2, se2) = mc_moments(&p, 32, 3, 7).unwrap();
        assert_eq!(m1.values, m2.values);
        assert_eq!(se1, se2);
        let (m3, _) = mc_moments(&p, 32, 3, 8).unwrap();
        assert_ne!(m1.values, m3.values);
    }

    #[test]
    fn mc_agrees_with_tensor_grid_quadrature() {
        let p = SampledProblem::with_mesh(affine_spec(), &Mesh::with_cells(8).unwrap(), 2).unwrap();
        // reference: full tensor Gauss quadrature in the two parameters
        let grid = crate::model::ParamGrid::gauss(ParamDist::Uniform, &[8, 8]).unwrap();
        let mut want = 0.0;
        for (i, &yi) in grid.nodes[0].iter().enumerate() {
            for (j, &yj) in grid.nodes[1].iter().enumerate() {
                let q = p.qoi_at(&[yi, yj]).unwrap();
                want += grid.weights[0][i] * grid.weights[1][j] * q;
            }
        }
        let (m, se) = mc_moments(&p, 4096, 1, 11).unwrap();
        assert!(
            (m.values[0] - want).abs() <= 3.0 * se[0],
            "mc {} vs quadrature {} (se {})",
            m.values[0],
            want,
            se[0]
        );
        assert!(se[0] > 0.0);
    }

    #[test]
    fn unit_generating_vector_enumerates_quarters() {
        let rule = LatticeRule { z: vec![1], n: 4, shift: vec![0.0], seed: 0 };
        let pts: Vec<f64> = (0..4).map(|i| rule.point(i, 4)[0]).collect();
        assert_eq!(pts, vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn lattice_points_are_rotation_invariant_as_a_set() {
        let rule = LatticeRule::korobov(2, 5, 3).unwrap();
        let n = 32u64;
        let mut a: Vec<(u64, u64)> = (0..n)
            .map(|i| {
                let p = rule.point(i, n);
                ((p[0] * n as f64).round() as u64, (p[1] * n as f64).round() as u64)
            })
            .collect();
        let mut b: Vec<(u64, u64)> = (0..n)
            .map(|i| {
                let p = rule.point((i + 1) % n, n);
                ((p[0] * n as f64).round() as u64, (p[1] * n as f64).round() as u64)
            })
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn qmc_integrates_constants_exactly() {
        let p = SampledProblem::with_mesh(constant_spec(), &Mesh::with_cells(8).unwrap(), 1).unwrap();
        let rule = LatticeRule::korobov(1, 4, 5).unwrap();
        let m = qmc_moments(&p, 4, &rule, 1).unwrap();
        let want = 0.0029296875 - 0.2;
        assert!((m.values[0] - want).abs() < 1e-10, "{}", m.values[0]);
    }

    #[test]
    fn qmc_beats_mc_on_smooth_univariate_integrand() {
        // integral of exp(y) over U(-sqrt3, sqrt3)
        let s3 = 3f64.sqrt();
        let exact = (s3.exp() - (-s3).exp()) / (2.0 * s3);
        let n = 256u64;

        let rule = LatticeRule::korobov(1, 8, 21).unwrap();
        let qmc: f64 = (0..n)
            .map(|i| {
                let x = rule.point(i, n)[0];
                (s3 * (2.0 * x - 1.0)).exp()
            })
            .sum::<f64>()
            / n as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mc: f64 = (0..n)
            .map(|_| (rng.random::<f64>() * 2.0 * s3 - s3).exp())
            .sum::<f64>()
            / n as f64;

        assert!(
            (qmc - exact).abs() <= (mc - exact).abs(),
            "qmc err {} vs mc err {}",
            (qmc - exact).abs(),
            (mc - exact).abs()
        );
        assert!((qmc - exact).abs() < 0.05);
    }

    #[test]
    fn inverse_normal_hits_reference_quantiles() {
        let got = inv_normal_cdf(0.975);
        assert!((got - 1.9599639845400545).abs() < 1e-9, "{got}");
        assert_eq!(inv_normal_cdf(0.5), 0.0);
        // deep tail against frozen reference values
        assert!((inv_normal_cdf(1e-12) + 7.034483825301132).abs() < 1e-9);
        assert!((inv_normal_cdf(1e-6) + 4.753424308822899).abs() < 1e-9);
        // symmetry, restricted to p where 1-p is exactly representable
        for p in [1e-4, 0.01, 0.1, 0.3, 0.45, 0.7, 0.9] {
            let a = inv_normal_cdf(p);
            let b = inv_normal_cdf(1.0 - p);
            assert!((a + b).abs() < 1e-9, "symmetry at {p}: {a} vs {b}");
        }
        // monotonicity across the piecewise boundaries
        let mut prev = f64::NEG_INFINITY;
        for i in 1..2000 {
            let v = inv_normal_cdf(i as f64 / 2000.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn generating_vector_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zvec.txt");
        std::fs::write(&path, "1\n433\n\n229\n").unwrap();
        let rule = LatticeRule::from_file(&path, 3, 8, 1).unwrap();
        assert_eq!(rule.z, vec![1, 433 % 256, 229]);
        assert!(LatticeRule::from_file(&path, 5, 8, 1).is_err());
        std::fs::write(&path, "1\nxyz\n").unwrap();
        let err = LatticeRule::from_file(&path, 2, 8, 1).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 2, .. }), "{err:?}");
    }

    #[test]
    fn normal_lattice_handles_the_origin_point() {
        let spec = KleSpec {
            nu: 4.0,
            sigma2: 0.1,
            k0: 1,
            form: CoeffForm::Log,
            dist: ParamDist::Normal,
            trunc_tol: 1e-2,
        };
        let p = SampledProblem::with_mesh(spec, &Mesh::with_cells(8).unwrap(), 2).unwrap();
        // zero shift: point 0 is the origin, which must be nudged, not fail
        let rule = LatticeRule { z: vec![1, 76 % 16], n: 16, shift: vec![0.0, 0.0], seed: 0 };
        let m = qmc_moments(&p, 4, &rule, 1).unwrap();
        assert!(m.values[0].is_finite());
    }
}
