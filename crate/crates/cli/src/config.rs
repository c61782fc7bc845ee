//! Flat `key = value` experiment configuration with dotted section prefixes
//! (`kle.nu = 4`). No nesting, no quoting; `#` starts a comment.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ttuq::model::{CoeffForm, KleSpec, ParamDist};
use ttuq::{Error, Result};

#[derive(Debug, Clone)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, u64)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i as u64 + 1;
            let stripped = match line.find('#') {
                Some(p) => &line[..p],
                None => line,
            };
            if stripped.trim().is_empty() {
                continue;
            }
            let eq = stripped.find('=').ok_or(Error::Parse {
                offset: ln,
                msg: format!("expected `key = value`, got {:?}", stripped.trim()),
            })?;
            let key = stripped[..eq].trim().to_string();
            let value = stripped[eq + 1..].trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse { offset: ln, msg: "empty key".into() });
            }
            if entries.insert(key.clone(), (value, ln)).is_some() {
                return Err(Error::Parse { offset: ln, msg: format!("duplicate key {key:?}") });
            }
        }
        Ok(RawConfig { entries })
    }

    fn take(&mut self, key: &str) -> Option<(String, u64)> {
        self.entries.remove(key)
    }

    fn parse_as<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, ln)) => v.parse::<T>().map(Some).map_err(|_| Error::Parse {
                offset: ln,
                msg: format!("bad value {v:?} for {key}"),
            }),
        }
    }

    fn remaining(&self) -> Vec<&str> {
        self.entries.keys().map(|k| k.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Tt,
    Mc,
    Qmc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tt => "tt",
            Method::Mc => "mc",
            Method::Qmc => "qmc",
        }
    }

    pub fn from_str(s: &str) -> Result<Method> {
        match s {
            "tt" => Ok(Method::Tt),
            "mc" => Ok(Method::Mc),
            "qmc" => Ok(Method::Qmc),
            other => Err(Error::invalid(format!("unknown method {other:?} (tt, mc, qmc)"))),
        }
    }
}

/// The calibrated spatial-error fit: discretization error at level `l` is
/// about `2^(-2.034 l - 5.579)`, used to synchronize one tolerance across
/// the mesh level, the KLE truncation, and the TT solves.
pub fn eps_for_level(level: u32) -> f64 {
    2f64.powf(-2.034 * level as f64 - 5.579)
}

pub fn level_for_eps(eps: f64) -> u32 {
    let l = (-eps.log2() - 5.579) / 2.034;
    (l.round().max(2.0)) as u32
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kle: KleSpec,
    pub level: u32,
    pub base_n: usize,
    pub eps: f64,
    pub one_shot: bool,
    pub enrich_rank: usize,
    pub max_sweeps: usize,
    pub s: usize,
    pub runs: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    pub coeff_path: PathBuf,
    pub solution_path: PathBuf,
    pub moments_path: PathBuf,
    pub pdf_path: PathBuf,
    pub pdf_points: usize,
    pub pdf_support: Option<(f64, f64)>,
    pub coeff_init_count: usize,
    pub mc_samples: usize,
    pub qmc_m: u32,
    pub qmc_zfile: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub err_vs_reference: bool,
    pub study_levels: Vec<u32>,
    pub study_n: Vec<usize>,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<ExperimentConfig> {
        let mut raw = RawConfig::parse(text)?;

        let nu: f64 = raw.parse_as("kle.nu")?.unwrap_or(4.0);
        let sigma2: f64 = raw.parse_as("kle.sigma2")?.unwrap_or(1.0);
        let k0: u32 = raw.parse_as("kle.k0")?.unwrap_or(1);
        let form = match raw.take("kle.form") {
            None => CoeffForm::Affine,
            Some((v, ln)) => match v.as_str() {
                "affine" => CoeffForm::Affine,
                "log" => CoeffForm::Log,
                other => {
                    return Err(Error::Parse {
                        offset: ln,
                        msg: format!("kle.form must be affine or log, got {other:?}"),
                    })
                }
            },
        };
        let dist = match raw.take("kle.dist") {
            None => match form {
                CoeffForm::Affine => ParamDist::Uniform,
                CoeffForm::Log => ParamDist::Normal,
            },
            Some((v, ln)) => match v.as_str() {
                "uniform" => ParamDist::Uniform,
                "normal" => ParamDist::Normal,
                other => {
                    return Err(Error::Parse {
                        offset: ln,
                        msg: format!("kle.dist must be uniform or normal, got {other:?}"),
                    })
                }
            },
        };

        // one epsilon drives the level, the KLE truncation, and the TT
        // tolerances; either side may be given and the other is derived
        let level_opt: Option<u32> = raw.parse_as("level")?;
        let eps_opt: Option<f64> = raw.parse_as("eps")?;
        let (level, eps) = match (level_opt, eps_opt) {
            (Some(l), Some(e)) => (l, e),
            (Some(l), None) => (l, eps_for_level(l)),
            (None, Some(e)) => (level_for_eps(e), e),
            (None, None) => (2, eps_for_level(2)),
        };
        let trunc_tol: f64 = raw.parse_as("kle.trunc_tol")?.unwrap_or(eps);

        let kle = KleSpec { nu, sigma2, k0, form, dist, trunc_tol };
        kle.validate()?;

        let one_shot = match raw.take("mode") {
            None => false,
            Some((v, ln)) => match v.as_str() {
                "oneshot" => true,
                "iterative" => false,
                other => {
                    return Err(Error::Parse {
                        offset: ln,
                        msg: format!("mode must be oneshot or iterative, got {other:?}"),
                    })
                }
            },
        };

        let methods = match raw.take("methods") {
            None => vec![Method::Tt],
            Some((v, ln)) => {
                let mut ms = Vec::new();
                for part in v.split(',') {
                    let m = Method::from_str(part.trim())
                        .map_err(|e| Error::Parse { offset: ln, msg: e.to_string() })?;
                    ms.push(m);
                }
                ms
            }
        };

        let parse_list_u32 = |raw: &mut RawConfig, key: &str| -> Result<Vec<u32>> {
            match raw.take(key) {
                None => Ok(Vec::new()),
                Some((v, ln)) => v
                    .split(',')
                    .map(|p| {
                        p.trim().parse::<u32>().map_err(|_| Error::Parse {
                            offset: ln,
                            msg: format!("bad entry {:?} in {key}", p.trim()),
                        })
                    })
                    .collect(),
            }
        };
        let study_levels = parse_list_u32(&mut raw, "study.levels")?;
        let study_n = parse_list_u32(&mut raw, "study.n")?
            .into_iter()
            .map(|v| v as usize)
            .collect();

        let pdf_support = match (
            raw.parse_as::<f64>("pdf.support_lo")?,
            raw.parse_as::<f64>("pdf.support_hi")?,
        ) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => {
                return Err(Error::invalid(
                    "pdf.support_lo and pdf.support_hi must be given together",
                ))
            }
        };

        let cfg = ExperimentConfig {
            kle,
            level,
            base_n: raw.parse_as("n")?.unwrap_or(7),
            eps,
            one_shot,
            enrich_rank: raw.parse_as("enrich_rank")?.unwrap_or(4),
            max_sweeps: raw.parse_as("max_sweeps")?.unwrap_or(20),
            s: raw.parse_as("s")?.unwrap_or(4),
            runs: raw.parse_as("runs")?.unwrap_or(16),
            seed: raw.parse_as("seed")?.unwrap_or(20177),
            methods,
            out: raw.parse_as("out")?.unwrap_or_else(|| PathBuf::from("results.csv")),
            coeff_path: raw.parse_as("coeff_path")?.unwrap_or_else(|| PathBuf::from("coeff.ttb")),
            solution_path: raw
                .parse_as("solution_path")?
                .unwrap_or_else(|| PathBuf::from("solution.ttb")),
            moments_path: raw
                .parse_as("moments_path")?
                .unwrap_or_else(|| PathBuf::from("moments.csv")),
            pdf_path: raw.parse_as("pdf_path")?.unwrap_or_else(|| PathBuf::from("pdf.csv")),
            pdf_points: raw.parse_as("pdf.points")?.unwrap_or(500),
            pdf_support,
            coeff_init_count: raw.parse_as("coeff.init_count")?.unwrap_or(800),
            mc_samples: raw.parse_as("mc.samples")?.unwrap_or(1024),
            qmc_m: raw.parse_as("qmc.m")?.unwrap_or(10),
            qmc_zfile: raw.parse_as("qmc.zfile")?,
            reference: raw.parse_as("reference")?,
            err_vs_reference: raw.parse_as("err_vs_reference")?.unwrap_or(false),
            study_levels,
            study_n,
        };

        let leftover = raw.remaining();
        if !leftover.is_empty() {
            return Err(Error::invalid(format!("unknown config keys: {}", leftover.join(", "))));
        }
        if cfg.runs == 0 {
            return Err(Error::invalid("runs must be >= 1"));
        }
        if cfg.s == 0 {
            return Err(Error::invalid("s must be >= 1"));
        }
        if cfg.methods.is_empty() {
            return Err(Error::invalid("methods must not be empty"));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_text(&text)
    }
}
