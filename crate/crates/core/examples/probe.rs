//! Scratch calibration runs; not part of the test suite.

use std::time::Instant;

use ttuq::als::{als_cross_solve, AlsMode, AlsOptions};
use ttuq::baselines::{qmc_moments, LatticeRule, SampledProblem};
use ttuq::fem::{assemble_stiffness, det_solve, dirichlet_lift_rhs, qoi_weights, Mesh};
use ttuq::model::{
    anisotropic_sizes, coeff_log_tt, coeff_nodal, psi_tables, truncation_dim, CoeffForm,
    KleSpec, ParamDist, ParamGrid,
};
use ttuq::postproc::{maxent_pdf, moments, pdf_distance, spatial_qoi, support_from_tensor};
use ttuq::als::rhs_from_coefficient;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn log_spec(nu: f64, sigma2: f64, trunc_tol: f64) -> KleSpec {
    KleSpec {
        nu,
        sigma2,
        k0: 1,
        form: CoeffForm::Log,
        dist: ParamDist::Normal,
        trunc_tol,
    }
}

fn eps_for_level(level: u32) -> f64 {
    2f64.powf(-2.034 * level as f64 - 5.579)
}

/// One-shot log-normal pipeline: returns (Q1, report-ish info) at the level.
fn q1_log(
    nu: f64,
    sigma2: f64,
    trunc_tol: f64,
    level: u32,
    n: usize,
    eps: f64,
    init: usize,
    seed: u64,
) -> (f64, usize, usize, f64, f64) {
    let spec = log_spec(nu, sigma2, trunc_tol);
    let d = truncation_dim(&spec).unwrap();
    let mesh = Mesh::from_level(level).unwrap();
    let grid = ParamGrid::gauss(spec.dist, &vec![n; d]).unwrap();
    let t0 = Instant::now();
    let (coeff, _stats) = coeff_log_tt(&spec, &mesh, &grid, eps, init, seed).unwrap();
    let t_coeff = t0.elapsed().as_secs_f64();
    let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
    let opts = AlsOptions { rel_tol: eps, mode: AlsMode::OneShot, seed, ..Default::default() };
    let t1 = Instant::now();
    let (u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
    let t_solve = t1.elapsed().as_secs_f64();
    let w = qoi_weights(&mesh).unwrap();
    let q = spatial_qoi(&u, &w).unwrap();
    let m = moments(&q, &grid, 1, eps).unwrap();
    (m.values[0], d, report.det_solve_count, t_coeff, t_solve)
}

fn c5() {
    // level 2, nu 4, log-normal, eps 1e-4: TT vs direct solves at 20 points
    let eps = 1e-4;
    let spec = log_spec(4.0, 1.0, eps);
    let d = truncation_dim(&spec).unwrap();
    println!("d = {d}");
    let mesh = Mesh::from_level(2).unwrap();
    let grid = ParamGrid::gauss(spec.dist, &vec![5; d]).unwrap();
    let t0 = Instant::now();
    let (coeff, stats) = coeff_log_tt(&spec, &mesh, &grid, eps, 300, 7).unwrap();
    println!("coeff: {:.1}s ranks {:?} evals {}", t0.elapsed().as_secs_f64(), coeff.ranks(), stats.evaluations);
    let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
    let opts = AlsOptions { rel_tol: eps, mode: AlsMode::OneShot, seed: 7, ..Default::default() };
    let t1 = Instant::now();
    let (u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
    println!("solve: {:.1}s det_solves {} max_rank {}", t1.elapsed().as_secs_f64(), report.det_solve_count, report.max_rank);

    let psi = psi_tables(&spec, d, &mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let idx: Vec<usize> = (0..d).map(|k| rng.random_range(0..grid.nodes[k].len())).collect();
        let y: Vec<f64> = (0..d).map(|k| grid.nodes[k][idx[k]]).collect();
        let c = coeff_nodal(&spec, &psi, &y).unwrap();
        let a = assemble_stiffness(&mesh, &c).unwrap();
        let b = dirichlet_lift_rhs(&mesh, &c).unwrap();
        let direct = det_solve(&a, &b).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, want) in direct.iter().enumerate() {
            let mut full = vec![i];
            full.extend_from_slice(&idx);
            let got = u.element(&full).unwrap();
            num += (got - want) * (got - want);
            den += want * want;
        }
        let rel = (num / den).sqrt();
        worst = worst.max(rel);
    }
    println!("worst rel spatial 2-norm over 20 points: {worst:.3e} (bound {:.1e})", 10.0 * eps);
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

fn c6() {
    let t0 = Instant::now();
    let mut mvecs: Vec<Vec<f64>> = Vec::new();
    for level in [2u32, 3, 4, 5] {
        let eps = eps_for_level(level);
        let spec = log_spec(4.0, 1.0, eps);
        let d = truncation_dim(&spec).unwrap();
        let mesh = Mesh::from_level(level).unwrap();
        let sizes = anisotropic_sizes(7, &spec, d);
        let grid = ParamGrid::gauss(spec.dist, &sizes).unwrap();
        let tc0 = Instant::now();
        let (coeff, stats) = coeff_log_tt(&spec, &mesh, &grid, eps, 300, 5).unwrap();
        let tc = tc0.elapsed().as_secs_f64();
        let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
        let opts = AlsOptions { rel_tol: eps, mode: AlsMode::OneShot, seed: 5, ..Default::default() };
        let ts0 = Instant::now();
        let (u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
        let ts = ts0.elapsed().as_secs_f64();
        let w = qoi_weights(&mesh).unwrap();
        let q = spatial_qoi(&u, &w).unwrap();
        let m = moments(&q, &grid, 10, eps).unwrap();
        println!(
            "level {level}: eps {eps:.3e} d {d} sizes {:?} r0 {} cross_conv {} coeff {tc:.1}s solve {ts:.1}s Q1 {:.6e}",
            &sizes[..sizes.len().min(6)], report.det_solve_count, stats.converged, m.values[0]
        );
        mvecs.push(m.values.clone());
    }
    let rf = &mvecs[3];
    let rnorm = rf.iter().map(|v| v * v).sum::<f64>().sqrt();
    let errs: Vec<f64> = mvecs[..3]
        .iter()
        .map(|mv| {
            mv.iter().zip(rf.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / rnorm
        })
        .collect();
    println!("rel moment-vector errs: {errs:?}");
    let n = errs.len() as f64;
    let xs: Vec<f64> = (2..5).map(|l| -((l + 3) as f64) * std::f64::consts::LN_2).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
    println!("slope in h: {slope:.3}");
    let factor = (errs[0] / 1.2272e-3).max(1.2272e-3 / errs[0]);
    println!("level-2 err {:.4e} vs 1.2272e-3: factor {factor:.2}", errs[0]);
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

fn c7() {
    let t0 = Instant::now();
    let level = 3u32;
    let eps = 1e-6;
    let spec = log_spec(4.0, 1.0, eps);
    let d = truncation_dim(&spec).unwrap();
    println!("d = {d}");
    let mesh = Mesh::from_level(level).unwrap();
    let w = qoi_weights(&mesh).unwrap();
    let mut mvecs: Vec<Vec<f64>> = Vec::new();
    for n in [1usize, 2, 3, 4, 5, 6] {
        let tn = Instant::now();
        let sizes = anisotropic_sizes(n, &spec, d);
        let grid = ParamGrid::gauss(spec.dist, &sizes).unwrap();
        let (coeff, cs) = coeff_log_tt(&spec, &mesh, &grid, eps, 300, 7).unwrap();
        let tc = tn.elapsed().as_secs_f64();
        let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
        let opts =
            AlsOptions { rel_tol: eps, mode: AlsMode::OneShot, seed: 7, ..Default::default() };
        let (u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
        let q = spatial_qoi(&u, &w).unwrap();
        let m = moments(&q, &grid, 10, eps).unwrap();
        println!(
            "n {n}: sizes {:?} Q1 = {:.8e} (r0 = {}, conv {}, r_coeff {}, coeff {tc:.1}s, total {:.1}s)",
            &sizes[..sizes.len().min(8)],
            m.values[0],
            report.det_solve_count,
            cs.converged,
            coeff.max_rank(),
            tn.elapsed().as_secs_f64()
        );
        mvecs.push(m.values.clone());
    }
    let rf = &mvecs[5];
    let rnorm = rf.iter().map(|v| v * v).sum::<f64>().sqrt();
    let errs: Vec<f64> = mvecs[..5]
        .iter()
        .map(|mv| {
            mv.iter().zip(rf.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / rnorm
        })
        .collect();
    println!("rel moment-vector errs: {errs:?}");
    for i in 0..4 {
        println!("ratio {} -> {}: {:.3}", i + 1, i + 2, errs[i + 1] / errs[i]);
    }
    let factor = (errs[1] / 3.1614e-3).max(3.1614e-3 / errs[1]);
    println!("n=2 err {:.4e} vs 3.1614e-3: factor {factor:.2}", errs[1]);
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

fn c8() {
    let t0 = Instant::now();
    let eps_l = eps_for_level(2);
    let spec = log_spec(4.0, 1.0, eps_l);
    let problem = SampledProblem::new(spec.clone(), 2, truncation_dim(&spec).unwrap()).unwrap();
    let d = problem.dim();
    println!("d = {d}");
    let mut pts = Vec::new();
    for m in 8..=13u32 {
        let mut ests = Vec::new();
        for shift in 0..16u64 {
            let rule = LatticeRule::korobov(d, m, 4000 + shift).unwrap();
            let ms = qmc_moments(&problem, m, &rule, 1).unwrap();
            ests.push(ms.values[0]);
        }
        let mean = ests.iter().sum::<f64>() / ests.len() as f64;
        let var = ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
            / (ests.len() - 1) as f64;
        let err = (var / ests.len() as f64).sqrt();
        println!("N = 2^{m}: mean {mean:.8e} shift-err {err:.3e} ({:.1}s)", t0.elapsed().as_secs_f64());
        pts.push((m as f64, err.ln() / std::f64::consts::LN_2));
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - xm) * (p.0 - xm)).sum::<f64>();
    println!("slope in log2 N: {slope:.3} (want -0.97 +- 0.25)");
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

fn c9() {
    let t0 = Instant::now();
    let mesh = Mesh::from_level(3).unwrap();
    let mut counts = Vec::new();
    for eps in [1e-3, 1e-4, 1e-5] {
        let spec = log_spec(4.0, 1.0, eps);
        let d = truncation_dim(&spec).unwrap();
        let grid = ParamGrid::gauss(spec.dist, &vec![4; d]).unwrap();
        let (coeff, _) = coeff_log_tt(&spec, &mesh, &grid, eps, 300, 7).unwrap();
        let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
        let opts =
            AlsOptions { rel_tol: eps, mode: AlsMode::OneShot, seed: 7, ..Default::default() };
        let (_u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
        println!(
            "eps {eps:.0e}: d = {d}, coeff r1 = {}, det solves = {} ({:.1}s)",
            coeff.ranks()[0],
            report.det_solve_count,
            t0.elapsed().as_secs_f64()
        );
        counts.push(report.det_solve_count);
    }
    println!("growth r0(1e-5)/r0(1e-3) = {:.2}", counts[2] as f64 / counts[0] as f64);
}

fn c10() {
    let t0 = Instant::now();
    let eps = 1e-5;
    let spec = log_spec(4.0, 1.0, eps_for_level(3));
    let d = truncation_dim(&spec).unwrap();
    println!("d = {d}");
    let mesh = Mesh::from_level(3).unwrap();
    let grid = ParamGrid::gauss(spec.dist, &vec![5; d]).unwrap();
    let (coeff, _) = coeff_log_tt(&spec, &mesh, &grid, eps, 300, 7).unwrap();
    let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
    let opts = AlsOptions { rel_tol: eps, mode: AlsMode::OneShot, seed: 7, ..Default::default() };
    let (u, _) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
    let w = qoi_weights(&mesh).unwrap();
    let q = spatial_qoi(&u, &w).unwrap();
    println!("setup {:.1}s", t0.elapsed().as_secs_f64());
    let support = support_from_tensor(&q, 10_000, 42).unwrap();
    println!("support: {support:?}");
    let m8 = moments(&q, &grid, 8, eps).unwrap();
    println!("moments: {:?}", m8.values);
    let mut models = Vec::new();
    for s in 2..=8usize {
        let ms = ttuq::postproc::MomentSet::new(m8.values[..s].to_vec()).unwrap();
        let pdf = maxent_pdf(&ms, support, 200, 1e-10, 200);
        match pdf {
            Ok(p) => models.push((s, p)),
            Err(e) => println!("S = {s}: maxent failed: {e}"),
        }
    }
    let p8 = models.iter().find(|(s, _)| *s == 8).map(|(_, p)| p.clone()).unwrap();
    for (s, p) in &models {
        if *s == 8 {
            continue;
        }
        let e = pdf_distance(p, &p8);
        println!("S = {s}: ||P_S - P_8||/||P_8|| = {e:.4e}");
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

fn phase(which: &str) {
    // nu = 4: log-normal one-shot at level 3 (fine mesh, few modes).
    // nu = 2.5: affine iterative at level 2 (many modes, growing ranks).
    if which != "nu25" {
        let eps = eps_for_level(3);
        let spec = log_spec(4.0, 1.0, eps);
        let d = truncation_dim(&spec).unwrap();
        let mesh = Mesh::from_level(3).unwrap();
        let grid = ParamGrid::gauss(spec.dist, &vec![4; d]).unwrap();
        let (coeff, _) = coeff_log_tt(&spec, &mesh, &grid, eps, 300, 7).unwrap();
        let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
        let opts =
            AlsOptions { rel_tol: eps, mode: AlsMode::OneShot, seed: 7, ..Default::default() };
        let (_u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
        println!(
            "nu 4 level 3: d = {d} det {:.3}s proj {:.3}s stoch {:.3}s (r0 = {}, r_max = {})",
            report.time_det, report.time_proj, report.time_stoch, report.det_solve_count,
            report.max_rank
        );
    }
    if which != "nu4" {
        let eps = 1e-4;
        let spec = KleSpec {
            nu: 2.5,
            sigma2: 0.5,
            k0: 1,
            form: CoeffForm::Affine,
            dist: ParamDist::Uniform,
            trunc_tol: eps,
        };
        let d = truncation_dim(&spec).unwrap();
        let mesh = Mesh::from_level(2).unwrap();
        let grid = ParamGrid::gauss(spec.dist, &vec![4; d]).unwrap();
        let coeff = ttuq::model::coeff_affine_tt(&spec, &mesh, &grid).unwrap();
        let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
        let opts = AlsOptions {
            rel_tol: eps,
            mode: AlsMode::Iterative,
            seed: 7,
            ..Default::default()
        };
        let (_u, report) = als_cross_solve(&coeff, &mesh, &rhs, opts).unwrap();
        println!(
            "nu 2.5 level 2: d = {d} det {:.3}s proj {:.3}s stoch {:.3}s (sweeps = {}, det solves = {}, r_max = {})",
            report.time_det, report.time_proj, report.time_stoch, report.sweeps,
            report.det_solve_count, report.max_rank
        );
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "c5" => c5(),
        "c6" => c6(),
        "c7" => c7(),
        "c8" => c8(),
        "c9" => c9(),
        "c10" => c10(),
        "c11" => c11(),
        "phase" => phase(&std::env::args().nth(2).unwrap_or_default()),
        other => eprintln!("unknown probe {other:?}"),
    }
}

fn c11() {
    let eps: f64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(1e-5);
    let spec = KleSpec {
        nu: 4.0,
        sigma2: 0.5,
        k0: 1,
        form: CoeffForm::Affine,
        dist: ParamDist::Uniform,
        trunc_tol: 1e-5,
    };
    let d = truncation_dim(&spec).unwrap();
    println!("d = {d}");
    let mesh = Mesh::from_level(2).unwrap();
    let grid = ParamGrid::gauss(spec.dist, &vec![4; d]).unwrap();
    let coeff = ttuq::model::coeff_affine_tt(&spec, &mesh, &grid).unwrap();
    let rhs = rhs_from_coefficient(&coeff, &mesh).unwrap();
    let opts =
        AlsOptions { rel_tol: eps, mode: AlsMode::Iterative, seed: 7, ..Default::default() };
    let mut solver = ttuq::als::AlsCross::new(&coeff, &mesh, &rhs, opts).unwrap();

    let psi = psi_tables(&spec, d, &mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let pts: Vec<Vec<usize>> = (0..20)
        .map(|_| (0..d).map(|k| rng.random_range(0..grid.nodes[k].len())).collect())
        .collect();
    let n_free = mesh.num_free_dofs();
    let sample_residual = |u: &ttuq::tt::TtTensor| -> (f64, f64) {
        let mut worst = 0.0f64;
        let mut mean = 0.0f64;
        for idx in &pts {
            let y: Vec<f64> = (0..d).map(|k| grid.nodes[k][idx[k]]).collect();
            let c = coeff_nodal(&spec, &psi, &y).unwrap();
            let a = assemble_stiffness(&mesh, &c).unwrap();
            let b = dirichlet_lift_rhs(&mesh, &c).unwrap();
            let mut uy = vec![0.0f64; n_free];
            for (i, slot) in uy.iter_mut().enumerate() {
                let mut full = vec![i];
                full.extend_from_slice(idx);
                *slot = u.element(&full).unwrap();
            }
            let au = {
                let mut out = vec![0.0f64; n_free];
                a.matvec(&uy, &mut out);
                out
            };
            let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut r2 = 0.0;
            for i in 0..n_free {
                let di = b[i] - au[i];
                r2 += di * di;
            }
            let rel = r2.sqrt() / bn;
            worst = worst.max(rel);
            mean += rel / 20.0;
        }
        (worst, mean)
    };
    let mut reached = false;
    for sweep in 1..=20 {
        solver.run_sweep().unwrap();
        let (w_post, m_post) = sample_residual(&solver.solution());
        println!("sweep {sweep}: post {w_post:.3e}/{m_post:.3e} r_max {}", solver.solution().max_rank());
        if w_post <= 1e-5 {
            reached = true;
            break;
        }
    }
    println!("reached = {reached}");
}
