//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage, parse and input errors, 3 when the
//! numerics fail (lasso non-convergence, objective blow-up).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{self, CandidatePool, EvalSplit, Metrics};
use crate::solver::{self, Init, Projection, SolverOptions, SolverReport};
use crate::sparse::SparseMatrix;
use crate::structure::{self, Metric, StructureBuild, StructureOptions};
use crate::synth::{self, SynthConfig};
use crate::types::{Hyperparams, Orientation, StructureMatrix, TaggingMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const THREADS_ENV: &str = "TAGCOMPLETE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tagcomplete", version, about = "Image tag completion by structured low-rank factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn the feature-space (S) or tag-space (T) reconstruction matrix.
    BuildStructure(BuildStructureArgs),
    /// Fit D = UV + E and write the completed score matrix.
    Complete(CompleteArgs),
    /// Score a ranking against a held-out split.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic instance and run the whole pipeline on it.
    SynthBench(SynthBenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    S,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectionArg {
    Clip,
    Rescale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Data,
    Random,
}

#[derive(Debug, Args)]
pub struct BuildStructureArgs {
    /// Feature matrix (CSV, one image per row); required for --mode s.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Tagging matrix (MatrixMarket); required for --mode t. In s mode
    /// the tags are appended to the features as 0/1 columns.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, default_value_t = 200)]
    pub knn: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub metric: MetricArg,
    /// Use raw feature rows instead of unit-normalized ones.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// Run manifest; explicit flags take precedence over its entries.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub s: Option<PathBuf>,
    #[arg(long)]
    pub t: Option<PathBuf>,
    /// Features used to build S when --s is not given.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Hyperparameter overrides as `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of basis vectors [default: 100]
    #[arg(long = "K", alias = "k")]
    pub n_basis: Option<usize>,
    /// [default: 0.5]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// [default: 0.7]
    #[arg(long)]
    pub beta: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub eta: Option<f64>,
    /// Replace D by (SD + DT)/2 before fitting.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub reinit: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub inner_sweeps: usize,
    #[arg(long, value_enum, default_value_t = ProjectionArg::Clip)]
    pub projection: ProjectionArg,
    #[arg(long, value_enum, default_value_t = InitArg::Data)]
    pub init: InitArg,
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    #[arg(long)]
    pub out_scores: Option<PathBuf>,
    /// Write scores as MatrixMarket instead of CSV.
    #[arg(long)]
    pub sparse_out: bool,
    /// Objective trace, one value per line, initial value first.
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Score matrix (CSV, or MatrixMarket when the name ends in .mtx).
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Let observed tags compete for the top N.
    #[arg(long)]
    pub include_observed: bool,
}

#[derive(Debug, Args)]
pub struct SynthBenchArgs {
    /// Benchmark config with optional [synth] and [hyperparams] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the generated inputs, structures and scores here.
    #[arg(long)]
    pub emit_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of a synth-bench config file.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub synth: SynthConfig,
    pub hyperparams: Hyperparams,
    pub cutoffs: Vec<usize>,
    pub reinit: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    #[serde(default)]
    synth: SynthConfig,
    /// Overrides on top of the bench defaults, not the library defaults.
    #[serde(default)]
    hyperparams: toml::Table,
    cutoffs: Option<Vec<usize>>,
    reinit: Option<bool>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            synth: SynthConfig::default(),
            hyperparams: Hyperparams {
                n_basis: 20,
                ..Hyperparams::default()
            },
            cutoffs: vec![2],
            reinit: true,
        }
    }
}

impl BenchConfig {
    pub fn read(path: &Path) -> Result<BenchConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message,
        };
        let file: BenchFile = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        let base = BenchConfig::default();
        Ok(BenchConfig {
            synth: file.synth,
            hyperparams: io::merge_hyperparams(&base.hyperparams, file.hyperparams).map_err(parse_err)?,
            cutoffs: file.cutoffs.unwrap_or(base.cutoffs),
            reinit: file.reinit.unwrap_or(base.reinit),
        })
    }
}

/// Ordered `key=value` report lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report(Vec<(String, String)>);

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn push_metrics(&mut self, prefix: &str, n: usize, m: &Metrics) {
        self.push(format!("{prefix}AP@{n}"), io::format_f64(m.precision));
        self.push(format!("{prefix}AR@{n}"), io::format_f64(m.recall));
        self.push(format!("{prefix}C@{n}"), io::format_f64(m.coverage));
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = self.render();
        io::write_atomic(path, |w| w.write_all(text.as_bytes()))
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let stdout = std::io::stdout();
    match run(cli.command, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NumericalBlowUp { trace, .. } = &e {
                for (i, v) in trace.iter().enumerate() {
                    eprintln!("trace[{}]={}", i + 1, io::format_f64(*v));
                }
            }
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    let report = match command {
        Command::BuildStructure(a) => build_structure(&a)?,
        Command::Complete(a) => complete(&a)?,
        Command::Evaluate(a) => evaluate(&a)?,
        Command::SynthBench(a) => synth_bench(&a)?,
    };
    out.write_all(report.render().as_bytes()).map_err(|source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn summarize_build(report: &mut Report, build: &StructureBuild) {
    let m = build.matrix.coeffs();
    report.push("items", build.matrix.size());
    report.push("nnz", m.nnz());
    report.push("skipped", build.skipped.len());
    report.push("kkt_max", format!("{:e}", build.max_kkt()));
    report.push("kkt_mean", format!("{:e}", build.mean_kkt()));
}

pub fn build_structure(a: &BuildStructureArgs) -> Result<Report> {
    let hp = Hyperparams {
        alpha: a.alpha,
        mu: a.mu,
        knn_k: a.knn,
        ..Hyperparams::default()
    };
    let opts = StructureOptions {
        metric: a.metric.into(),
        normalize_rows: !a.no_normalize,
        ..StructureOptions::default()
    };
    let mut report = Report::default();
    let build = match a.mode {
        Mode::S => {
            let path = a
                .features
                .as_deref()
                .ok_or_else(|| Error::invalid("--mode s needs --features"))?;
            let mut x = io::read_feature_matrix(path)?;
            if let Some(tags) = &a.tags {
                x = x.with_tags(&io::read_tagging_matrix(tags)?)?;
            }
            report.push("mode", "s");
            structure::build_s(&x, &hp, &opts)?
        }
        Mode::T => {
            let path = a.tags.as_deref().ok_or_else(|| Error::invalid("--mode t needs --tags"))?;
            if a.features.is_some() {
                warn!("--features is ignored in t mode");
            }
            report.push("mode", "t");
            structure::build_t(&io::read_tagging_matrix(path)?, &hp, &opts)?
        }
    };
    summarize_build(&mut report, &build);
    io::write_sparse_matrix(&a.out, build.matrix.coeffs())?;
    Ok(report)
}

fn read_structure(path: &Path, orientation: Orientation) -> Result<StructureMatrix> {
    StructureMatrix::new(io::read_sparse_matrix(path)?, orientation)
}

fn relative_residual(d: &TaggingMatrix, scores: &Array2<f64>) -> f64 {
    let d = d.to_dense();
    let denom = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    let num = (&d - scores).iter().map(|x| x * x).sum::<f64>().sqrt();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

fn write_scores(path: &Path, scores: &Array2<f64>, sparse: bool) -> Result<()> {
    if sparse {
        io::write_sparse_matrix(path, &SparseMatrix::from_dense(scores))
    } else {
        io::write_dense_matrix(path, scores)
    }
}

fn write_trace(path: &Path, values: &[f64]) -> Result<()> {
    io::write_atomic(path, |w| {
        for &v in values {
            writeln!(w, "{}", io::format_f64(v))?;
        }
        Ok(())
    })
}

fn push_fit(report: &mut Report, fit: &SolverReport) {
    report.push("iterations", fit.iterations);
    report.push("converged", fit.converged);
    report.push("initial_objective", io::format_f64(fit.initial_objective));
    let tail = fit.trace.len().saturating_sub(5);
    for (i, v) in fit.trace.iter().enumerate().skip(tail) {
        report.push(format!("trace[{}]", i + 1), io::format_f64(*v));
    }
    report.push("objective", io::format_f64(fit.final_objective()));
    report.push("max_column_norm", io::format_f64(fit.model.max_column_norm()));
}

pub fn complete(a: &CompleteArgs) -> Result<Report> {
    let manifest = a.manifest.as_deref().map(io::Manifest::read).transpose()?;
    let pick = |flag: &Option<PathBuf>, from: Option<&PathBuf>| flag.clone().or_else(|| from.cloned());

    let tags_path = pick(&a.tags, manifest.as_ref().map(|m| &m.tags))
        .ok_or_else(|| Error::invalid("complete needs --tags or --manifest"))?;
    let s_path = pick(&a.s, manifest.as_ref().and_then(|m| m.s.as_ref()));
    let t_path = pick(&a.t, manifest.as_ref().and_then(|m| m.t.as_ref()));
    let features_path = pick(&a.features, manifest.as_ref().and_then(|m| m.features.as_ref()));

    let mut hp = Hyperparams::default();
    if let Some(p) = manifest.as_ref().and_then(|m| m.hyperparams.as_ref()) {
        hp = io::read_hyperparams(p, &hp)?;
    }
    if let Some(p) = &a.config {
        hp = io::read_hyperparams(p, &hp)?;
    }
    macro_rules! flag {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                hp.$field = v;
            }
        };
    }
    flag!(n_basis, a.n_basis);
    flag!(lambda, a.lambda);
    flag!(gamma, a.gamma);
    flag!(beta, a.beta);
    flag!(eta, a.eta);
    flag!(rng_seed, a.seed);
    flag!(max_outer_iters, a.max_iters);
    flag!(rel_tol, a.rel_tol);
    hp.validate()?;

    let d = io::read_tagging_matrix(&tags_path)?;
    let s = match (&s_path, &features_path) {
        (Some(p), _) => read_structure(p, Orientation::Rows)?,
        (None, Some(f)) => {
            info!("building S from {}", f.display());
            structure::build_s(&io::read_feature_matrix(f)?, &hp, &StructureOptions::default())?.matrix
        }
        (None, None) => return Err(Error::invalid("complete needs --s or --features")),
    };
    let t = match &t_path {
        Some(p) => read_structure(p, Orientation::Columns)?,
        None => {
            info!("building T from the tags");
            structure::build_t(&d, &hp, &StructureOptions::default())?.matrix
        }
    };
    let target = if a.reinit {
        structure::reinitialize(&d, &s, &t)?
    } else {
        d.clone()
    };

    let opts = SolverOptions {
        inner_sweeps: a.inner_sweeps,
        projection: match a.projection {
            ProjectionArg::Clip => Projection::Clip,
            ProjectionArg::Rescale => Projection::Rescale,
        },
        init: match a.init {
            InitArg::Data => Init::DataColumns,
            InitArg::Random => Init::Random,
        },
    };
    let fit = match solver::fit(&target, &s, &t, &hp, &opts) {
        Ok(f) => f,
        Err(e @ Error::NumericalBlowUp { .. }) => {
            if let (Some(p), Error::NumericalBlowUp { trace, .. }) = (&a.out_trace, &e) {
                write_trace(p, trace)?;
            }
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let scores = fit.model.completed();

    let mut report = Report::default();
    push_fit(&mut report, &fit);
    report.push("relative_residual", io::format_f64(relative_residual(&target, &scores)));
    report.push("trace_monotone", solver::trace_is_monotone(&fit.full_block_trace(), 1e-10));

    if let Some(p) = &a.out_trace {
        let values: Vec<f64> = std::iter::once(fit.initial_objective).chain(fit.trace.iter().copied()).collect();
        write_trace(p, &values)?;
    }
    if let Some(p) = &a.out_scores {
        write_scores(p, &scores, a.sparse_out)?;
    }
    if let Some(p) = &a.out_model {
        io::write_model(
            p,
            &io::ModelFile {
                model: fit.model.clone(),
                hyperparams: hp.clone(),
                trace: fit.trace.clone(),
            },
        )?;
    }
    Ok(report)
}

fn pool(include_observed: bool) -> CandidatePool {
    if include_observed {
        CandidatePool::All
    } else {
        CandidatePool::ExcludeObserved
    }
}

fn score_at(scores: &Array2<f64>, split: &EvalSplit, n: usize, pool: CandidatePool) -> Result<Metrics> {
    metrics::evaluate(&metrics::rank_predictions(scores, split, n, pool)?, split)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Report> {
    let scores = io::read_scores(&a.scores)?;
    let split = io::read_split(&a.split)?;
    let pool = pool(a.include_observed);
    let preds = metrics::rank_predictions(&scores, &split, a.n, pool)?;
    let m = metrics::evaluate(&preds, &split)?;
    let mut report = Report::default();
    report.push_metrics("", a.n, &m);
    report.push("test_images", preds.images.len());
    report.push("truncated", preds.truncated.len());
    if let Some(p) = &a.out {
        report.save(p)?;
    }
    Ok(report)
}

pub fn synth_bench(a: &SynthBenchArgs) -> Result<Report> {
    let mut cfg = match &a.config {
        Some(p) => BenchConfig::read(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.synth.rng_seed = seed;
        cfg.hyperparams.rng_seed = seed;
    }
    if cfg.cutoffs.is_empty() || cfg.cutoffs.contains(&0) {
        return Err(Error::invalid("cutoffs must be a non-empty list of positive integers"));
    }
    cfg.hyperparams.validate()?;
    let seed = cfg.synth.rng_seed;

    let inst = synth::generate(&cfg.synth)?;
    let split = synth::delete_tags(&inst.truth, cfg.synth.delete_fraction, seed.wrapping_add(1))?;
    let opts = StructureOptions::default();
    let s = structure::build_s(&inst.features, &cfg.hyperparams, &opts)?;
    let t = structure::build_t(split.observed(), &cfg.hyperparams, &opts)?;
    let target = if cfg.reinit {
        structure::reinitialize(split.observed(), &s.matrix, &t.matrix)?
    } else {
        split.observed().clone()
    };
    let fit = solver::fit(&target, &s.matrix, &t.matrix, &cfg.hyperparams, &SolverOptions::default())?;
    let scores = fit.model.completed();
    let baseline = metrics::permuted_scores(&scores, seed.wrapping_add(2));

    let mut report = Report::default();
    report.push("seed", seed);
    report.push("images", inst.truth.n_images());
    report.push("tags", inst.truth.n_tags());
    push_fit(&mut report, &fit);
    for &n in &cfg.cutoffs {
        report.push_metrics("", n, &score_at(&scores, &split, n, CandidatePool::ExcludeObserved)?);
        report.push_metrics("baseline_", n, &score_at(&baseline, &split, n, CandidatePool::ExcludeObserved)?);
        report.push_metrics("chance_", n, &metrics::chance_metrics(&split, n, CandidatePool::ExcludeObserved)?);
    }

    if let Some(dir) = &a.emit_dir {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        io::write_sparse_matrix(&dir.join("tags.mtx"), split.observed().matrix())?;
        io::write_sparse_matrix(&dir.join("truth.mtx"), inst.truth.matrix())?;
        io::write_dense_matrix(&dir.join("features.csv"), inst.features.data())?;
        io::write_split(&dir.join("split.txt"), &split)?;
        io::write_sparse_matrix(&dir.join("s.mtx"), s.matrix.coeffs())?;
        io::write_sparse_matrix(&dir.join("t.mtx"), t.matrix.coeffs())?;
        io::write_dense_matrix(&dir.join("scores.csv"), &scores)?;
    }
    if let Some(p) = &a.out {
        report.save(p)?;
    }
    Ok(report)
}
