//! Experiment pipeline: coefficient construction, solves, moments, PDFs,
//! baselines, and the CSV result protocol.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use ttuq::als::{als_cross_solve, rhs_from_coefficient, AlsMode, AlsOptions, SolveReport};
use ttuq::baselines::{mc_moments, qmc_moments, LatticeRule, SampledProblem};
use ttuq::fem::{qoi_weights, Mesh};
use ttuq::model::{
    anisotropic_sizes, coeff_affine_tt, coeff_log_tt, truncation_dim, CoeffForm, ParamGrid,
};
use ttuq::postproc::{
    maxent_pdf, moments, run_error, spatial_qoi, support_from_tensor, MomentSet,
};
use ttuq::{Error, Result, TtTensor};

use crate::config::{eps_for_level, ExperimentConfig, Method};

/// Mesh, truncation dimension, and collocation grid derived from a config.
pub struct ProblemSetup {
    pub mesh: Mesh,
    pub d: usize,
    pub grid: ParamGrid,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<ProblemSetup> {
    let d = truncation_dim(&cfg.kle)?;
    let sizes = anisotropic_sizes(cfg.base_n, &cfg.kle, d);
    let grid = ParamGrid::gauss(cfg.kle.dist, &sizes)?;
    let mesh = Mesh::from_level(cfg.level)?;
    Ok(ProblemSetup { mesh, d, grid })
}

pub fn build_coeff(cfg: &ExperimentConfig, st: &ProblemSetup, seed: u64) -> Result<TtTensor> {
    match cfg.kle.form {
        CoeffForm::Affine => coeff_affine_tt(&cfg.kle, &st.mesh, &st.grid),
        CoeffForm::Log => {
            let (c, _stats) =
                coeff_log_tt(&cfg.kle, &st.mesh, &st.grid, cfg.eps, cfg.coeff_init_count, seed)?;
            Ok(c)
        }
    }
}

pub fn solve(
    cfg: &ExperimentConfig,
    st: &ProblemSetup,
    coeff: &TtTensor,
    seed: u64,
) -> Result<(TtTensor, SolveReport)> {
    let rhs = rhs_from_coefficient(coeff, &st.mesh)?;
    let opts = AlsOptions {
        rel_tol: cfg.eps,
        max_sweeps: cfg.max_sweeps,
        mode: if cfg.one_shot { AlsMode::OneShot } else { AlsMode::Iterative },
        enrich_rank: cfg.enrich_rank,
        seed,
        ..AlsOptions::default()
    };
    als_cross_solve(coeff, &st.mesh, &rhs, opts)
}

pub fn qoi_moments(
    cfg: &ExperimentConfig,
    st: &ProblemSetup,
    solution: &TtTensor,
) -> Result<MomentSet> {
    let w = qoi_weights(&st.mesh)?;
    let q = spatial_qoi(solution, &w)?;
    moments(&q, &st.grid, cfg.s, cfg.eps)
}

/// One CSV result row; wall-time columns are excluded from determinism
/// guarantees, everything else is reproducible from config plus seed.
pub struct RunRow {
    pub method: &'static str,
    pub level: u32,
    pub eps: f64,
    pub d: usize,
    pub n: usize,
    pub r_max: usize,
    pub n_det_solves: usize,
    pub wall_coeff: f64,
    pub wall_det: f64,
    pub wall_proj: f64,
    pub wall_stoch: f64,
    pub wall_qoi: f64,
    pub seed: u64,
    pub q: Vec<f64>,
    pub err: Option<f64>,
}

pub fn csv_header(s: usize) -> String {
    let mut h = String::from(
        "method,level,eps,d,n,r_max,n_det_solves,wall_coeff_s,wall_det_s,wall_proj_s,wall_stoch_s,wall_qoi_s,seed",
    );
    for p in 1..=s {
        write!(h, ",Q{p}").unwrap();
    }
    h.push_str(",err_vs_reference");
    h
}

pub fn csv_row(r: &RunRow) -> String {
    let mut line = format!(
        "{},{},{:.17e},{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
        r.method,
        r.level,
        r.eps,
        r.d,
        r.n,
        r.r_max,
        r.n_det_solves,
        r.wall_coeff,
        r.wall_det,
        r.wall_proj,
        r.wall_stoch,
        r.wall_qoi,
        r.seed
    );
    for q in &r.q {
        write!(line, ",{q:.17e}").unwrap();
    }
    match r.err {
        Some(e) => write!(line, ",{e:.17e}").unwrap(),
        None => line.push(','),
    }
    line
}

fn load_reference(path: &Path, s: usize) -> Result<MomentSet> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Parse {
            offset: i as u64 + 1,
            msg: format!("bad reference value {t:?}"),
        })?;
        values.push(v);
    }
    if values.len() < s {
        return Err(Error::invalid(format!(
            "reference file {} has {} moments, need {s}",
            path.display(),
            values.len()
        )));
    }
    values.truncate(s);
    MomentSet::new(values)
}

fn reference_for(cfg: &ExperimentConfig) -> Result<Option<MomentSet>> {
    match (&cfg.reference, cfg.err_vs_reference) {
        (Some(p), _) => Ok(Some(load_reference(p, cfg.s)?)),
        (None, false) => Ok(None),
        (None, true) => {
            Err(Error::invalid("err_vs_reference = true needs a reference path"))
        }
    }
}

fn err_against(m: &MomentSet, reference: Option<&MomentSet>) -> Result<Option<f64>> {
    match reference {
        None => Ok(None),
        Some(r) => Ok(Some(run_error(std::slice::from_ref(m), r)?)),
    }
}

fn tt_row(
    cfg: &ExperimentConfig,
    st: &ProblemSetup,
    reference: Option<&MomentSet>,
    seed: u64,
) -> Result<RunRow> {
    let t0 = Instant::now();
    let coeff = build_coeff(cfg, st, seed)?;
    let wall_coeff = t0.elapsed().as_secs_f64();
    let (u, report) = solve(cfg, st, &coeff, seed)?;
    let t1 = Instant::now();
    let m = qoi_moments(cfg, st, &u)?;
    let wall_qoi = t1.elapsed().as_secs_f64();
    let err = err_against(&m, reference)?;
    Ok(RunRow {
        method: "tt",
        level: cfg.level,
        eps: cfg.eps,
        d: st.d,
        n: cfg.base_n,
        r_max: report.max_rank,
        n_det_solves: report.det_solve_count,
        wall_coeff: wall_coeff + report.time_coeff,
        wall_det: report.time_det,
        wall_proj: report.time_proj,
        wall_stoch: report.time_stoch,
        wall_qoi: wall_qoi + report.time_qoi,
        seed,
        q: m.values,
        err,
    })
}

fn mc_row(
    cfg: &ExperimentConfig,
    st: &ProblemSetup,
    reference: Option<&MomentSet>,
    seed: u64,
) -> Result<RunRow> {
    let problem = SampledProblem::with_mesh(cfg.kle.clone(), &st.mesh, st.d)?;
    let t0 = Instant::now();
    let (m, _se) = mc_moments(&problem, cfg.mc_samples, cfg.s, seed)?;
    let wall = t0.elapsed().as_secs_f64();
    let err = err_against(&m, reference)?;
    Ok(RunRow {
        method: "mc",
        level: cfg.level,
        eps: cfg.eps,
        d: st.d,
        n: cfg.base_n,
        r_max: 0,
        n_det_solves: cfg.mc_samples,
        wall_coeff: 0.0,
        wall_det: wall,
        wall_proj: 0.0,
        wall_stoch: 0.0,
        wall_qoi: 0.0,
        seed,
        q: m.values,
        err,
    })
}

fn qmc_row(
    cfg: &ExperimentConfig,
    st: &ProblemSetup,
    reference: Option<&MomentSet>,
    seed: u64,
) -> Result<RunRow> {
    let problem = SampledProblem::with_mesh(cfg.kle.clone(), &st.mesh, st.d)?;
    let rule = match &cfg.qmc_zfile {
        Some(p) => LatticeRule::from_file(p, st.d, cfg.qmc_m, seed)?,
        None => LatticeRule::korobov(st.d, cfg.qmc_m, seed)?,
    };
    let t0 = Instant::now();
    let m = qmc_moments(&problem, cfg.qmc_m, &rule, cfg.s)?;
    let wall = t0.elapsed().as_secs_f64();
    let err = err_against(&m, reference)?;
    Ok(RunRow {
        method: "qmc",
        level: cfg.level,
        eps: cfg.eps,
        d: st.d,
        n: cfg.base_n,
        r_max: 0,
        n_det_solves: 1usize << cfg.qmc_m,
        wall_coeff: 0.0,
        wall_det: wall,
        wall_proj: 0.0,
        wall_stoch: 0.0,
        wall_qoi: 0.0,
        seed,
        q: m.values,
        err,
    })
}

fn method_row(
    cfg: &ExperimentConfig,
    st: &ProblemSetup,
    reference: Option<&MomentSet>,
    method: Method,
    seed: u64,
) -> Result<RunRow> {
    match method {
        Method::Tt => tt_row(cfg, st, reference, seed),
        Method::Mc => mc_row(cfg, st, reference, seed),
        Method::Qmc => qmc_row(cfg, st, reference, seed),
    }
}

fn collect_rows(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<RunRow>> {
    let st = setup(cfg)?;
    let reference = reference_for(cfg)?;
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (0..cfg.runs).map(move |i| (m, cfg.seed + i as u64)))
        .collect();
    // runs are independent; rows come back in protocol order
    jobs.par_iter()
        .map(|&(m, seed)| method_row(cfg, &st, reference.as_ref(), m, seed))
        .collect()
}

fn write_rows(path: &Path, s: usize, rows: &[RunRow], append: bool) -> Result<()> {
    let fresh = !append || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    let mut text = String::new();
    if fresh {
        text.push_str(&csv_header(s));
        text.push('\n');
    }
    for r in rows {
        text.push_str(&csv_row(r));
        text.push('\n');
    }
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let rows = collect_rows(cfg, &cfg.methods)?;
    write_rows(&cfg.out, cfg.s, &rows, false)?;
    println!("wrote {} rows to {}", rows.len(), cfg.out.display());
    Ok(())
}

pub fn cmd_build_coeff(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    let coeff = build_coeff(cfg, &st, cfg.seed)?;
    coeff.save(&cfg.coeff_path)?;
    println!(
        "coefficient: d = {}, modes = {:?}, max rank = {} -> {}",
        st.d,
        coeff.mode_sizes(),
        coeff.max_rank(),
        cfg.coeff_path.display()
    );
    Ok(())
}

fn check_modes(name: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!(
            "{name} mode sizes {got:?} do not match config expectation {want:?}; \
             rebuild with the current config"
        )));
    }
    Ok(())
}

fn expected_coeff_modes(st: &ProblemSetup) -> Vec<usize> {
    let mut v = vec![st.mesh.num_nodes()];
    v.extend(st.grid.mode_sizes());
    v
}

fn expected_solution_modes(st: &ProblemSetup) -> Vec<usize> {
    let mut v = vec![st.mesh.num_free_dofs()];
    v.extend(st.grid.mode_sizes());
    v
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    let coeff = TtTensor::load(&cfg.coeff_path)?;
    check_modes("coefficient", &coeff.mode_sizes(), &expected_coeff_modes(&st))?;
    let (u, report) = solve(cfg, &st, &coeff, cfg.seed)?;
    u.save(&cfg.solution_path)?;
    println!(
        "solve: sweeps = {}, det solves = {}, max rank = {}, converged = {} -> {}",
        report.sweeps,
        report.det_solve_count,
        report.max_rank,
        report.converged,
        cfg.solution_path.display()
    );
    Ok(())
}

pub fn cmd_moments(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    let u = TtTensor::load(&cfg.solution_path)?;
    check_modes("solution", &u.mode_sizes(), &expected_solution_modes(&st))?;
    let m = qoi_moments(cfg, &st, &u)?;
    let mut text = String::from("p,Q_p\n");
    for (p, v) in m.values.iter().enumerate() {
        writeln!(text, "{},{v:.17e}", p + 1).unwrap();
    }
    std::fs::write(&cfg.moments_path, text)?;
    println!(
        "moments Q1..Q{}: {:?} -> {}",
        cfg.s,
        m.values,
        cfg.moments_path.display()
    );
    Ok(())
}

pub fn cmd_pdf(cfg: &ExperimentConfig) -> Result<()> {
    let st = setup(cfg)?;
    let u = TtTensor::load(&cfg.solution_path)?;
    check_modes("solution", &u.mode_sizes(), &expected_solution_modes(&st))?;
    let w = qoi_weights(&st.mesh)?;
    let q = spatial_qoi(&u, &w)?;
    let m = moments(&q, &st.grid, cfg.s, cfg.eps)?;
    let support = match cfg.pdf_support {
        Some(s) => s,
        None => support_from_tensor(&q, 10_000, cfg.seed)?,
    };
    let pdf = maxent_pdf(&m, support, 200, 1e-10, 200)?;
    let mut text = String::from("q,density\n");
    for (qv, dv) in pdf.sample_grid(cfg.pdf_points) {
        writeln!(text, "{qv:.12e},{dv:.12e}").unwrap();
    }
    std::fs::write(&cfg.pdf_path, text)?;
    println!(
        "pdf on [{:.4e}, {:.4e}] from {} moments -> {}",
        support.0,
        support.1,
        cfg.s,
        cfg.pdf_path.display()
    );
    Ok(())
}

pub fn cmd_baseline(cfg: &ExperimentConfig) -> Result<()> {
    let methods: Vec<Method> =
        cfg.methods.iter().copied().filter(|&m| m != Method::Tt).collect();
    if methods.is_empty() {
        return Err(Error::invalid("baseline needs methods mc and/or qmc"));
    }
    let rows = collect_rows(cfg, &methods)?;
    write_rows(&cfg.out, cfg.s, &rows, false)?;
    println!("wrote {} baseline rows to {}", rows.len(), cfg.out.display());
    Ok(())
}

/// Sweeps levels and/or base grid sizes, appending rows to the output CSV.
/// Each level re-derives its tolerance from the calibrated fit unless the
/// truncation tolerance was pinned explicitly.
pub fn cmd_study(cfg: &ExperimentConfig) -> Result<()> {
    let levels = if cfg.study_levels.is_empty() {
        vec![cfg.level]
    } else {
        cfg.study_levels.clone()
    };
    let ns = if cfg.study_n.is_empty() { vec![cfg.base_n] } else { cfg.study_n.clone() };
    let trunc_pinned = cfg.kle.trunc_tol != cfg.eps;
    let mut total = 0;
    for &level in &levels {
        for &n in &ns {
            let mut c = cfg.clone();
            c.level = level;
            c.base_n = n;
            if level != cfg.level {
                c.eps = eps_for_level(level);
                if !trunc_pinned {
                    c.kle.trunc_tol = c.eps;
                }
            }
            let rows = collect_rows(&c, &c.methods)?;
            write_rows(&cfg.out, cfg.s, &rows, true)?;
            total += rows.len();
        }
    }
    println!("study appended {total} rows to {}", cfg.out.display());
    Ok(())
}
