//! Experiment file schema and problem sources.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::problem::{gen_heterogeneous, gen_homogeneous, ProblemFile, QuadraticProblem};
use crate::runner::{Metric, OutputFormat, RunConfig, StepSchedule, X0Policy};
use crate::sketch::SketchSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum GenMode {
    #[serde(rename = "het")]
    #[value(name = "het")]
    Het,
    #[serde(rename = "hom")]
    #[value(name = "hom")]
    Hom,
    #[serde(rename = "het-interp")]
    #[value(name = "het-interp")]
    HetInterp,
    #[serde(rename = "hom-interp")]
    #[value(name = "hom-interp")]
    HomInterp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub mode: GenMode,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Apply the diagonal change of variables (homogeneous modes only).
    #[serde(default)]
    pub precondition: bool,
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<QuadraticProblem> {
        let p = match self.mode {
            GenMode::Het | GenMode::HetInterp => {
                if self.precondition {
                    return Err(Error::ConfigInvalid("precondition applies to homogeneous modes only".into()));
                }
                gen_heterogeneous(self.n, self.d, self.seed)?
            }
            GenMode::Hom | GenMode::HomInterp => {
                let p = gen_homogeneous(self.n, self.d, self.seed)?;
                if self.precondition {
                    p.precondition_homogeneous()?.0
                } else {
                    p
                }
            }
        };
        Ok(match self.mode {
            GenMode::HetInterp | GenMode::HomInterp => p.set_interpolation(),
            _ => p,
        })
    }
}

/// A problem given as a file path, a generator spec, or inline data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Path(PathBuf),
    Generate(GeneratorSpec),
    Inline(ProblemFile),
}

impl ProblemSource {
    /// Loads the problem; relative paths are taken from `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<QuadraticProblem> {
        match self {
            ProblemSource::Path(p) => QuadraticProblem::load(base_dir.join(p)),
            ProblemSource::Generate(g) => g.generate(),
            ProblemSource::Inline(f) => QuadraticProblem::from_file_repr(f.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Ist,
    Dgd,
    Cgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub format: OutputFormat,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub problem: ProblemSource,
    pub estimator: EstimatorName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch: Option<SketchSpec>,
    pub schedule: StepSchedule,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    pub metrics: Vec<Metric>,
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<X0Policy>,
}

fn one() -> usize {
    1
}

impl ExperimentFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn estimator_kind(&self, p: &QuadraticProblem) -> Result<EstimatorKind> {
        let sketch = |what: &str| {
            self.sketch
                .as_ref()
                .ok_or_else(|| Error::ConfigInvalid(format!("estimator '{what}' requires a sketch")))?
                .resolve(p.n(), p.d())
        };
        Ok(match self.estimator {
            EstimatorName::Dgd => {
                if self.sketch.is_some() {
                    return Err(Error::ConfigInvalid("estimator 'dgd' takes no sketch".into()));
                }
                EstimatorKind::Dgd
            }
            EstimatorName::Ist => EstimatorKind::Ist(sketch("ist")?),
            EstimatorName::Cgd => EstimatorKind::Cgd(sketch("cgd")?),
        })
    }

    pub fn run_config(&self, p: &QuadraticProblem) -> Result<RunConfig> {
        let cfg = RunConfig {
            estimator: self.estimator_kind(p)?,
            schedule: self.schedule,
            k: self.k,
            seed: self.seed,
            repeats: self.repeats,
            x0: self.x0.clone().unwrap_or(X0Policy::Gaussian { seed: None }),
            metrics: self.metrics.clone(),
            keep_iterates: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sidecar written next to every trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub artifact: String,
    pub version: String,
    /// Fully resolved experiment: file-based problems are inlined and the
    /// schedule carries the step size actually used.
    pub experiment: ExperimentFile,
    pub estimator: String,
    pub diverged_repeats: Vec<usize>,
}

pub fn meta_path(trace_path: &Path) -> PathBuf {
    let mut s = trace_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}
