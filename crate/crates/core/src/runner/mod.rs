//! Iterates `x^{k+1} = x^k − γ_k·g^k` and records per-round metrics.
//!
//! Repeats run in parallel, each on its own random stream
//! `(seed, Repeat, r)`, and are reduced in repeat order, so a trace depends
//! only on the configuration and never on the thread count.

mod trace;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorKind};
use crate::linalg::{weighted_sqnorm, Vector};
use crate::problem::QuadraticProblem;
use crate::rng::{self, Purpose};
use crate::sketch::{self, SketchSample};
use crate::theory;

pub use trace::{load_csv, parse_csv, read_trace, write_trace, CsvRow, OutputFormat, RepeatTrace, Trace, CSV_HEADER};

/// Any metric beyond this magnitude marks the run as diverged.
pub const DIVERGENCE_GUARD: f64 = 1e100;

/// Floor applied to function gaps before taking `log10`.
pub const LOG_FLOOR: f64 = 1e-300;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "IST_LAB_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `γ_k = γ₀ / divide_by^{⌊k/period⌋}`.
    Staircase { gamma0: f64, divide_by: f64, period: usize },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { gamma } => gamma > 0.0 && gamma.is_finite(),
            StepSchedule::Staircase { gamma0, divide_by, period } => {
                gamma0 > 0.0 && gamma0.is_finite() && divide_by > 1.0 && period >= 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("invalid step schedule {self:?}")))
        }
    }

    pub fn gamma_at(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::Staircase { gamma0, divide_by, period } => gamma0 / divide_by.powi((k / period) as i32),
        }
    }

    /// Same shape with a new base step.
    pub fn with_gamma(&self, gamma: f64) -> StepSchedule {
        match *self {
            StepSchedule::Constant { .. } => StepSchedule::Constant { gamma },
            StepSchedule::Staircase { divide_by, period, .. } => StepSchedule::Staircase { gamma0: gamma, divide_by, period },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "f_gap_rel_log")]
    FGapRelLog,
    #[serde(rename = "grad_sq")]
    GradSq,
    #[serde(rename = "grad_sq_Linv")]
    GradSqLinv,
    #[serde(rename = "dist_L_to_xstar")]
    DistLToXstar,
    #[serde(rename = "dist_to_xinf")]
    DistToXinf,
    #[serde(rename = "submodel_loss_avg")]
    SubmodelLossAvg,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::FGapRelLog,
        Metric::GradSq,
        Metric::GradSqLinv,
        Metric::DistLToXstar,
        Metric::DistToXinf,
        Metric::SubmodelLossAvg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::FGapRelLog => "f_gap_rel_log",
            Metric::GradSq => "grad_sq",
            Metric::GradSqLinv => "grad_sq_Linv",
            Metric::DistLToXstar => "dist_L_to_xstar",
            Metric::DistToXinf => "dist_to_xinf",
            Metric::SubmodelLossAvg => "submodel_loss_avg",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown metric '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Policy {
    /// Standard normal entries from stream `(seed, Init, 0)`; `seed` defaults
    /// to the run seed.
    Gaussian {
        #[serde(default)]
        seed: Option<u64>,
    },
    Zeros,
    Given { x: Vec<f64> },
}

impl X0Policy {
    pub fn resolve(&self, d: usize, run_seed: u64) -> Result<Vector> {
        match self {
            X0Policy::Gaussian { seed } => {
                let mut r = rng::stream(seed.unwrap_or(run_seed), Purpose::Init, 0);
                Ok(Vector::from_fn(d, |_, _| rng::standard_normal(&mut r)))
            }
            X0Policy::Zeros => Ok(Vector::zeros(d)),
            X0Policy::Given { x } => {
                if x.len() != d {
                    return Err(Error::DimMismatch { expected: d, got: x.len() });
                }
                Ok(Vector::from_column_slice(x))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub estimator: EstimatorKind,
    pub schedule: StepSchedule,
    /// Number of rounds `K`; `K = 0` records the initial metrics only.
    pub k: usize,
    pub seed: u64,
    pub repeats: usize,
    pub x0: X0Policy,
    pub metrics: Vec<Metric>,
    /// Store every iterate (memory `repeats·(K+1)·d`).
    pub keep_iterates: bool,
}

impl RunConfig {
    pub fn new(estimator: EstimatorKind, gamma: f64, k: usize, seed: u64) -> Self {
        RunConfig {
            estimator,
            schedule: StepSchedule::Constant { gamma },
            k,
            seed,
            repeats: 1,
            x0: X0Policy::Gaussian { seed: None },
            metrics: vec![Metric::FGapRelLog],
            keep_iterates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.repeats == 0 {
            return Err(Error::ConfigInvalid("repeats must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(m) = self.metrics.iter().find(|m| !seen.insert(**m)) {
            return Err(Error::ConfigInvalid(format!("metric '{m}' listed twice")));
        }
        Ok(())
    }
}

/// Quantities shared by all repeats.
struct Reference {
    x_star: Option<Vector>,
    x_inf: Option<Vector>,
}

impl Reference {
    fn build(p: &QuadraticProblem, cfg: &RunConfig) -> Result<Self> {
        let needs_star = cfg
            .metrics
            .iter()
            .any(|m| matches!(m, Metric::FGapRelLog | Metric::GradSqLinv | Metric::DistLToXstar));
        let x_star = if needs_star {
            Some(p.solution().map_err(|e| Error::ConfigInvalid(format!("metrics need x*: {e}")))?)
        } else {
            None
        };
        let x_inf = if cfg.metrics.contains(&Metric::DistToXinf) {
            let x = match cfg.estimator {
                EstimatorKind::Ist(k) => theory::fixed_point(p, k),
                EstimatorKind::Dgd | EstimatorKind::Cgd(_) => p.solution(),
            };
            Some(x.map_err(|e| Error::ConfigInvalid(format!("dist_to_xinf needs x_inf: {e}")))?)
        } else {
            None
        };
        Ok(Reference { x_star, x_inf })
    }
}

fn metric_values(
    p: &QuadraticProblem,
    cfg: &RunConfig,
    reference: &Reference,
    x: &Vector,
    sample: &SketchSample,
    gap0: f64,
) -> Result<Vec<f64>> {
    let mut grad: Option<Vector> = None;
    let mut dist: Option<f64> = None;
    let mut out = Vec::with_capacity(cfg.metrics.len());
    for m in &cfg.metrics {
        let mut dist_l = || -> Result<f64> {
            if let Some(v) = dist {
                return Ok(v);
            }
            let xs = reference.x_star.as_ref().expect("x* resolved");
            let v = weighted_sqnorm(&(x - xs), p.l_bar())?.max(0.0);
            dist = Some(v);
            Ok(v)
        };
        let v = match m {
            Metric::FGapRelLog => {
                let gap = 0.5 * dist_l()?;
                gap.max(LOG_FLOOR).log10() - gap0.max(LOG_FLOOR).log10()
            }
            Metric::DistLToXstar | Metric::GradSqLinv => dist_l()?,
            Metric::GradSq => {
                if grad.is_none() {
                    grad = Some(p.grad(x)?);
                }
                grad.as_ref().unwrap().norm_squared()
            }
            Metric::DistToXinf => (x - reference.x_inf.as_ref().expect("x_inf resolved")).norm(),
            Metric::SubmodelLossAvg => {
                let mut total = 0.0;
                for i in 0..p.n() {
                    total += p.f_i_val(i, &sample.apply(i, x)?)?;
                }
                total / p.n() as f64
            }
        };
        out.push(v);
    }
    Ok(out)
}

fn diverged(x: &Vector, values: &[f64]) -> bool {
    let bad = |v: f64| !v.is_finite() || v.abs() > DIVERGENCE_GUARD;
    x.iter().any(|&v| bad(v)) || values.iter().any(|&v| bad(v))
}

fn run_repeat(p: &QuadraticProblem, cfg: &RunConfig, reference: &Reference, x0: &Vector, r: usize) -> Result<RepeatTrace> {
    let mut rng = rng::stream(cfg.seed, Purpose::Repeat, r as u64);
    let kind = cfg.estimator.sketch();
    let gap0 = match &reference.x_star {
        Some(xs) => 0.5 * weighted_sqnorm(&(x0 - xs), p.l_bar())?.max(0.0),
        None => 0.0,
    };
    let mut x = x0.clone();
    let mut values = Vec::with_capacity(cfg.k + 1);
    let mut iterates = cfg.keep_iterates.then(Vec::new);
    let mut diverged_at = None;
    for k in 0..=cfg.k {
        let sample = sketch::sample(kind, p, &mut rng)?;
        let row = metric_values(p, cfg, reference, &x, &sample, gap0)?;
        if diverged(&x, &row) {
            diverged_at = Some(k);
            break;
        }
        values.push(row);
        if let Some(it) = iterates.as_mut() {
            it.push(x.as_slice().to_vec());
        }
        if k == cfg.k {
            break;
        }
        let g = estimator::evaluate(cfg.estimator, &sample, p, &x)?;
        x -= g * cfg.schedule.gamma_at(k);
    }
    let final_f = if diverged_at.is_none() { Some(p.f_val(&x)?) } else { None };
    Ok(RepeatTrace { repeat: r, values, diverged_at, final_f, iterates })
}

/// Worker count: `IST_LAB_THREADS` if set to a positive integer, otherwise
/// the machine parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1))
}

pub fn run(p: &QuadraticProblem, cfg: &RunConfig) -> Result<Trace> {
    run_with_threads(p, cfg, thread_count())
}

pub fn run_with_threads(p: &QuadraticProblem, cfg: &RunConfig, threads: usize) -> Result<Trace> {
    cfg.validate()?;
    cfg.estimator.validate_for(p)?;
    let reference = Reference::build(p, cfg)?;
    let x0 = cfg.x0.resolve(p.d(), cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    let repeats: Vec<RepeatTrace> = pool.install(|| {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|r| run_repeat(p, cfg, &reference, &x0, r))
            .collect::<Result<_>>()
    })?;
    Ok(Trace::from_repeats(cfg.metrics.clone(), cfg.k, repeats))
}

/// One trace per step size, sharing the problem and `x⁰`.
pub fn sweep(p: &QuadraticProblem, base: &RunConfig, gammas: &[f64]) -> Result<Vec<Trace>> {
    if gammas.is_empty() {
        return Err(Error::ConfigInvalid("empty step-size list".into()));
    }
    gammas
        .iter()
        .map(|&g| {
            let cfg = RunConfig { schedule: base.schedule.with_gamma(g), ..base.clone() };
            run(p, &cfg)
        })
        .collect()
}
