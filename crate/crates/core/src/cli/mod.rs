//! Command-line front end.
//!
//! Exit codes: 0 success (inadmissible θ and diverged runs are results, not
//! failures), 1 other errors, 2 usage or configuration errors, 3 generation
//! failure, 4 sketch/problem shape mismatch.

mod experiment;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::problem::QuadraticProblem;
use crate::runner::{self, OutputFormat, StepSchedule, Trace};
use crate::sketch::SketchSpec;
use crate::theory;

pub use experiment::{
    meta_path, EstimatorName, ExperimentFile, GenMode, GeneratorSpec, OutputSpec, ProblemSource, RunMeta,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_GENERATION: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ist-lab", version, about = "Independent subnetwork training on distributed quadratics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random problem file.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "het")]
        mode: GenMode,
        /// Apply the diagonal change of variables (homogeneous modes).
        #[arg(long)]
        precondition: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the convergence certificate of a problem/sketch pair as JSON.
    Theory {
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        sketch: SketchArgs,
        /// Step size for rho (default 1/theta).
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run one experiment.
    Run(RunArgs),
    /// Run one experiment per step size.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
    },
}

#[derive(Debug, Args)]
struct SketchArgs {
    /// identity, perm_q, perm_multiset, scaled_perm_homog, scaled_perm_het, rand_q, bernoulli
    #[arg(long)]
    sketch: String,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
}

impl SketchArgs {
    fn spec(&self) -> SketchSpec {
        SketchSpec { kind: self.sketch.clone(), q: self.q, p: self.p }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment file; the flags below build one inline when it is absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    problem: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "config")]
    estimator: Option<EstimatorArg>,
    #[arg(long, conflicts_with = "config")]
    sketch: Option<String>,
    #[arg(long, conflicts_with = "config")]
    q: Option<usize>,
    #[arg(long, conflicts_with = "config")]
    p: Option<f64>,
    #[arg(long, conflicts_with = "config")]
    gamma: Option<f64>,
    #[arg(long = "K", conflicts_with = "config")]
    k: Option<usize>,
    #[arg(long, conflicts_with = "config")]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "config")]
    repeats: Option<usize>,
    #[arg(long, value_delimiter = ',', conflicts_with = "config")]
    metrics: Option<Vec<String>>,
    #[arg(long, value_enum, conflicts_with = "config")]
    format: Option<FormatArg>,
    #[arg(long, conflicts_with = "config")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum EstimatorArg {
    Ist,
    Dgd,
    Cgd,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl RunArgs {
    /// The experiment plus the directory relative paths resolve against.
    /// `default_gamma` stands in for a missing `--gamma` (sweeps override it).
    fn experiment(&self, default_gamma: Option<f64>) -> Result<(ExperimentFile, PathBuf)> {
        if let Some(path) = &self.config {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            return Ok((ExperimentFile::load(path)?, base));
        }
        let need = |name: &str| Error::ConfigInvalid(format!("--{name} is required without --config"));
        let estimator = match self.estimator.unwrap_or(EstimatorArg::Ist) {
            EstimatorArg::Ist => EstimatorName::Ist,
            EstimatorArg::Dgd => EstimatorName::Dgd,
            EstimatorArg::Cgd => EstimatorName::Cgd,
        };
        let metrics = match &self.metrics {
            Some(names) => names.iter().map(|m| m.parse()).collect::<Result<_>>()?,
            None => vec![runner::Metric::FGapRelLog],
        };
        let format = match self.format.unwrap_or(FormatArg::Csv) {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
        let exp = ExperimentFile {
            problem: ProblemSource::Path(self.problem.clone().ok_or_else(|| need("problem"))?),
            estimator,
            sketch: self.sketch.as_ref().map(|s| SketchSpec { kind: s.clone(), q: self.q, p: self.p }),
            schedule: StepSchedule::Constant { gamma: self.gamma.or(default_gamma).ok_or_else(|| need("gamma"))? },
            k: self.k.ok_or_else(|| need("K"))?,
            seed: self.seed.unwrap_or(0),
            repeats: self.repeats.unwrap_or(1),
            metrics,
            output: OutputSpec { format, path: self.out.clone().ok_or_else(|| need("out"))? },
            x0: None,
        };
        Ok((exp, PathBuf::new()))
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid(_) | Error::InvalidProblemFile(_) | Error::Json(_) => EXIT_USAGE,
        Error::DegenerateEnsemble { .. } => EXIT_GENERATION,
        Error::IncompatibleShape(_) | Error::DimMismatch { .. } | Error::NonPositiveDiagonal { .. } => EXIT_SHAPE,
        _ => EXIT_ERROR,
    }
}

fn cmd_gen(spec: &GeneratorSpec, out_path: &Path, out: &mut dyn Write) -> Result<()> {
    let p = spec.generate()?;
    p.save(out_path)?;
    let s = p.l_bar_spectrum();
    writeln!(out, "lambda_min(L_bar) = {:e}", s.lambda_min())?;
    writeln!(out, "lambda_max(L_bar) = {:e}", s.lambda_max())?;
    Ok(())
}

fn cmd_theory(problem: &Path, sketch: &SketchSpec, gamma: Option<f64>, out: &mut dyn Write) -> Result<()> {
    let p = QuadraticProblem::load(problem)?;
    let kind = sketch.resolve(p.n(), p.d())?;
    let cert = theory::certificate(&p, kind, gamma)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&cert)?)?;
    Ok(())
}

/// Runs one resolved experiment and writes the trace plus its sidecar.
fn execute(exp: &ExperimentFile, base: &Path, p: &QuadraticProblem, path: &Path) -> Result<Trace> {
    let cfg = exp.run_config(p)?;
    let trace = runner::run(p, &cfg)?;
    let out_path = base.join(path);
    runner::write_trace(&trace, exp.output.format, &out_path)?;
    let mut resolved = exp.clone();
    if let ProblemSource::Path(_) = resolved.problem {
        resolved.problem = ProblemSource::Inline(p.to_file_repr());
    }
    resolved.output.path = path.to_path_buf();
    let meta = RunMeta {
        artifact: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: resolved,
        estimator: cfg.estimator.to_string(),
        diverged_repeats: trace.repeats.iter().filter(|r| r.diverged_at.is_some()).map(|r| r.repeat).collect(),
    };
    std::fs::write(meta_path(&out_path), serde_json::to_string_pretty(&meta)?)?;
    Ok(trace)
}

fn report(trace: &Trace, path: &Path, estimator: &EstimatorKind, out: &mut dyn Write) -> Result<()> {
    let diverged = trace.repeats.iter().filter(|r| r.diverged_at.is_some()).count();
    writeln!(
        out,
        "{estimator}: {} repeats x {} rounds -> {} ({diverged} diverged)",
        trace.repeats.len(),
        trace.k,
        path.display()
    )?;
    Ok(())
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let (exp, base) = args.experiment(None)?;
    let p = exp.problem.load(&base)?;
    let trace = execute(&exp, &base, &p, &exp.output.path)?;
    report(&trace, &base.join(&exp.output.path), &exp.estimator_kind(&p)?, out)
}

/// `out.csv` with step 0.5 becomes `out_gamma0.5.csv`.
pub fn sweep_path(path: &Path, gamma: f64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_gamma{gamma}.{}", ext.to_string_lossy()),
        None => format!("{stem}_gamma{gamma}"),
    };
    path.with_file_name(name)
}

fn cmd_sweep(args: &RunArgs, gammas: &[f64], out: &mut dyn Write) -> Result<()> {
    let (exp, base) = args.experiment(gammas.first().copied())?;
    let p = exp.problem.load(&base)?;
    for &g in gammas {
        let mut e = exp.clone();
        e.schedule = exp.schedule.with_gamma(g);
        let path = sweep_path(&exp.output.path, g);
        e.output.path = path.clone();
        let trace = execute(&e, &base, &p, &path)?;
        report(&trace, &base.join(&path), &e.estimator_kind(&p)?, out)?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gen { n, d, seed, mode, precondition, out: path } => {
            let spec = GeneratorSpec { mode: *mode, n: *n, d: *d, seed: *seed, precondition: *precondition };
            cmd_gen(&spec, path, out)
        }
        Command::Theory { problem, sketch, gamma } => cmd_theory(problem, &sketch.spec(), *gamma, out),
        Command::Run(args) => cmd_run(args, out),
        Command::Sweep { run, gammas } => cmd_sweep(run, gammas, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
