//! coeff cross timing probe
use std::time::Instant;
use ttuq::model::{coeff_log_tt, truncation_dim, CoeffForm, KleSpec, ParamDist, ParamGrid};
use ttuq::fem::Mesh;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let nu: f64 = args[1].parse().unwrap();
    let eps: f64 = args[2].parse().unwrap();
    let n: usize = args[3].parse().unwrap();
    let init: usize = args[4].parse().unwrap();
    let spec = KleSpec { nu, sigma2: 0.5, k0: 1, form: CoeffForm::Log, dist: ParamDist::Normal, trunc_tol: eps };
    let d = truncation_dim(&spec).unwrap();
    let mesh = Mesh::from_level(2).unwrap();
    let grid = ParamGrid::gauss(spec.dist, &vec![n; d]).unwrap();
    let t0 = Instant::now();
    let (coeff, stats) = coeff_log_tt(&spec, &mesh, &grid, eps, init, 7).unwrap();
    println!(
        "d = {d}: {:.1}s, sweeps = {}, evals = {}, converged = {}, r_max = {}, ranks = {:?}",
        t0.elapsed().as_secs_f64(),
        stats.sweeps,
        stats.evaluations,
        stats.converged,
        coeff.max_rank(),
        coeff.ranks()
    );
}
