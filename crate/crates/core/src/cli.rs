//! The `vcache` command line.
//!
//! Every subcommand writes a `config.json` echo next to its outputs;
//! `vcache replay --config <echo>` reruns it. `--threads` and `--out-dir`
//! are deliberately left out of the echo: neither changes any output byte.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use walkdir::WalkDir;

use crate::coreset::{self, Budget, CoresetConfig, CoresetError, SelectionManifest};
use crate::difficulty::{self, DifficultyConfig, DifficultyError};
use crate::flowsim::{self, FlowError, FlowField, GmmField, MlpField, SamplerConfig, TrainConfig};
use crate::ingest::{self, Dataset, IngestError};
use crate::metrics;
use crate::vcache::{self, CacheConfig, CacheError};

pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_MISSING_LOSSES: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_DIVERGED: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    MissingLosses(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io(_) => EXIT_IO,
            CliError::MissingLosses(_) => EXIT_MISSING_LOSSES,
            CliError::NonFinite(_) => EXIT_NON_FINITE,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<DifficultyError> for CliError {
    fn from(e: DifficultyError) -> Self {
        match e {
            DifficultyError::MissingLosses(_) => CliError::MissingLosses(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<CoresetError> for CliError {
    fn from(e: CoresetError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::NonFiniteState(_) => CliError::NonFinite(e.to_string()),
            FlowError::DivergedTraining(_) => CliError::Diverged(e.to_string()),
            FlowError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::Flow(f) => f.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::NonFinite(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "vcache", version, about = "Velocity-caching sampler and coreset selection")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for artifacts; created if absent.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Write a seeded synthetic JSONL dataset.
    Synth(SynthArgs),
    /// Difficulty scoring, k-NN propagation and greedy coreset selection.
    Select(SelectArgs),
    /// Compare cached and full sampling on a velocity field.
    BenchCache(BenchArgs),
    /// Fit a small flow-matching network to a point set.
    TrainFlow(TrainArgs),
    /// Summarize the JSON artifacts found under a directory.
    Report(ReportArgs),
    /// Rerun a command from its config.json echo.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    /// Output file; defaults to `<out-dir>/dataset.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    None,
    Random,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    /// JSONL dataset, or a VCEM1 matrix (`.bin`/`.vcem`).
    #[arg(long)]
    pub data: PathBuf,
    /// Count (`10`), fraction (`0.1`) or percentage (`10%`).
    #[arg(long, default_value = "10%")]
    pub budget: Budget,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub gamma_f: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gamma_r: f64,
    #[arg(long, default_value_t = 0.25)]
    pub sample_fraction: f64,
    #[arg(long, value_enum, default_value_t = Baseline::None)]
    pub baseline: Baseline,
    /// Output directory; overrides `--out-dir`.
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `gmm:<path>`, `mlp:<path>`, or `gmm:bundled`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FieldSpec {
    BundledGmm,
    Gmm(PathBuf),
    Mlp(PathBuf),
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::BundledGmm => write!(f, "gmm:bundled"),
            FieldSpec::Gmm(p) => write!(f, "gmm:{}", p.display()),
            FieldSpec::Mlp(p) => write!(f, "mlp:{}", p.display()),
        }
    }
}

impl FromStr for FieldSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            Some(("gmm", "bundled")) => Ok(FieldSpec::BundledGmm),
            Some(("gmm", p)) if !p.is_empty() => Ok(FieldSpec::Gmm(p.into())),
            Some(("mlp", p)) if !p.is_empty() => Ok(FieldSpec::Mlp(p.into())),
            _ => Err(format!("field must be gmm:<path>, mlp:<path> or gmm:bundled, got {s:?}")),
        }
    }
}

impl From<FieldSpec> for String {
    fn from(f: FieldSpec) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for FieldSpec {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl FieldSpec {
    pub fn load(&self) -> Result<Box<dyn FlowField>> {
        match self {
            FieldSpec::BundledGmm => Ok(Box::new(GmmField::bundled())),
            FieldSpec::Gmm(p) => {
                let text = fs::read_to_string(p)?;
                let field: GmmField = serde_json::from_str(&text)
                    .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
                Ok(Box::new(field))
            }
            FieldSpec::Mlp(p) => {
                let text = fs::read_to_string(p)?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
                Ok(Box::new(MlpField::from_json(&value)?))
            }
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long, default_value = "gmm:bundled")]
    pub field: FieldSpec,
    #[arg(long, default_value_t = 35)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub alpha: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 0.4)]
    pub k: f64,
    #[arg(long, default_value_t = 2)]
    pub min_onset: usize,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Include wall-clock timings in the report (not byte-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// JSONL file with one JSON array of numbers per line.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[serde(skip)]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub in_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Contents of `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub seed: u64,
    #[serde(flatten)]
    pub command: Command,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    pool.install(|| dispatch(&cli.command, cli.seed, &cli.out_dir))
}

fn dispatch(command: &Command, seed: u64, out_dir: &Path) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, seed, out_dir),
        Command::Select(a) => cmd_select(a, seed, out_dir),
        Command::BenchCache(a) => cmd_bench_cache(a, seed, out_dir),
        Command::TrainFlow(a) => cmd_train_flow(a, seed, out_dir),
        Command::Report(a) => cmd_report(a),
        Command::Replay(a) => {
            let text = fs::read_to_string(&a.config)?;
            let echo: ConfigEcho = serde_json::from_str(&text)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", a.config.display())))?;
            dispatch(&echo.command, echo.seed, out_dir)
        }
    }
}

fn echo(seed: u64, command: &Command, path: &Path) -> Result<()> {
    write_json(
        path,
        &ConfigEcho {
            seed,
            command: command.clone(),
        },
    )
}

pub fn cmd_synth(a: &SynthArgs, seed: u64, out_dir: &Path) -> Result<()> {
    let ds = ingest::synth_dataset(seed, a.n, a.dim, a.clusters, a.spread)?;
    let path = a.out.clone().unwrap_or_else(|| out_dir.join("dataset.jsonl"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    ingest::save_jsonl(&ds, &path)?;
    let echo_path = path.with_extension("config.json");
    let mut args = a.clone();
    args.out = None;
    echo(seed, &Command::Synth(args), &echo_path)?;
    println!("n={} d={} path={}", ds.len(), ds.dim(), path.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let is_matrix = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("bin") | Some("vcem")
    );
    Ok(if is_matrix {
        ingest::load_matrix(path)?
    } else {
        ingest::load_jsonl(path)?
    })
}

fn fmt_opt_rank(r: Option<usize>) -> String {
    r.map(|r| r.to_string()).unwrap_or_default()
}

pub fn cmd_select(a: &SelectArgs, seed: u64, out_dir: &Path) -> Result<()> {
    let dir = a.out.clone().unwrap_or_else(|| out_dir.to_path_buf());
    let ds = load_dataset(&a.data)?;
    let dcfg = DifficultyConfig {
        sample_fraction: a.sample_fraction,
        seed,
    };
    let ccfg = CoresetConfig {
        k_neighbors: a.k,
        gamma_f: a.gamma_f,
        gamma_r: a.gamma_r,
        budget: a.budget,
    };
    ccfg.validate()?;
    dcfg.validate()?;
    a.budget.resolve(ds.len())?;
    let x = difficulty::difficulties(&ds, &dcfg)?;
    let (manifest, propagated) = coreset::run_pipeline(&ds, &x, &ccfg)?;

    ensure_dir(&dir)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    let mut rank = vec![None; ds.len()];
    for p in &manifest.picks {
        rank[p.index] = Some(p.rank);
    }
    let mut w = create(&dir.join("scores.csv"))?;
    writeln!(w, "index,id,x,x_prime,picked_rank")?;
    for i in 0..ds.len() {
        writeln!(
            w,
            "{i},{},{},{},{}",
            ds.record(i).id,
            x[i],
            propagated[i],
            fmt_opt_rank(rank[i])
        )?;
    }
    w.flush()?;
    if a.baseline == Baseline::Random {
        let base = coreset::random_baseline(&ds, a.budget, seed)?;
        write_json(&dir.join("baseline_manifest.json"), &base)?;
    }
    let mut args = a.clone();
    args.out = None;
    echo(seed, &Command::Select(args), &dir.join("config.json"))?;
    println!(
        "selected {} of {} -> {}",
        manifest.picks.len(),
        ds.len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_bench_cache(a: &BenchArgs, seed: u64, out_dir: &Path) -> Result<()> {
    let dir = a.out.clone().unwrap_or_else(|| out_dir.to_path_buf());
    let field = a.field.load()?;
    let scfg = SamplerConfig {
        n_steps: a.steps,
        n_samples: a.samples,
        seed,
    };
    let ccfg = CacheConfig {
        threshold: a.k,
        interval: a.alpha,
        adjust: a.m,
        min_onset: a.min_onset,
    };
    let mut report = vcache::bench_cache(field.as_ref(), &scfg, &ccfg)?;
    if !a.timing {
        report.timing = None;
    }
    ensure_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    let mut w = create(&dir.join("smoothness.csv"))?;
    report.representative.cached_series.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("smoothness_full.csv"))?;
    writeln!(w, "step,delta")?;
    for (t, d) in report.representative.full_deltas.iter().enumerate() {
        writeln!(w, "{t},{d}")?;
    }
    w.flush()?;
    let mut w = create(&dir.join("deviations.csv"))?;
    metrics::write_deviation_csv(&report.deviations, &mut w)?;
    w.flush()?;
    let mut args = a.clone();
    args.out = None;
    echo(seed, &Command::BenchCache(args), &dir.join("config.json"))?;
    println!(
        "reuse_fraction={:.4} evaluation_reduction={:.4} mean_rel_dev={:.5} -> {}",
        report.reuse_fraction.mean,
        report.evaluation_reduction,
        report.endpoint_deviation.mean_rel,
        dir.display()
    );
    Ok(())
}

/// Reads one JSON array of numbers per non-blank line.
pub fn load_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<Vec<f64>>(l)
                .map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn cmd_train_flow(a: &TrainArgs, seed: u64, out_dir: &Path) -> Result<()> {
    let dir = a.out.clone().unwrap_or_else(|| out_dir.to_path_buf());
    let points = load_points(&a.points)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        momentum: a.momentum,
        seed,
        hidden: a.hidden,
    };
    let trained = flowsim::train_mlp(&points, &cfg)?;
    ensure_dir(&dir)?;
    write_json(&dir.join("model.json"), &trained.field.to_json())?;
    let mut w = create(&dir.join("loss.csv"))?;
    writeln!(w, "epoch,loss")?;
    for (e, l) in trained.loss_history.iter().enumerate() {
        writeln!(w, "{e},{l}")?;
    }
    w.flush()?;
    let mut args = a.clone();
    args.out = None;
    echo(seed, &Command::TrainFlow(args), &dir.join("config.json"))?;
    println!(
        "trained {} epochs, final loss {} -> {}",
        trained.loss_history.len(),
        trained.loss_history.last().map_or(f64::NAN, |l| *l),
        dir.display()
    );
    Ok(())
}

struct SelectRow {
    run: String,
    method: String,
    n: usize,
    picks: usize,
    mean_score: f64,
    min_score: f64,
}

struct BenchRow {
    run: String,
    steps: u64,
    samples: u64,
    reuse: f64,
    reduction: f64,
    deviation: f64,
    energy: f64,
}

fn run_label(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file);
    rel.to_string_lossy().into_owned()
}

/// Markdown summary of every manifest and bench report under `in_dir`.
pub fn build_report(in_dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = WalkDir::new(in_dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut selects = Vec::new();
    let mut benches = Vec::new();
    for f in &files {
        let Ok(text) = fs::read_to_string(f) else { continue };
        let Ok(v) = serde_json::from_str::<Value>(&text) else { continue };
        if v.get("picks").is_some() {
            let Ok(m) = serde_json::from_value::<SelectionManifest>(v) else { continue };
            let scores: Vec<f64> = m.picks.iter().map(|p| p.score).collect();
            selects.push(SelectRow {
                run: run_label(in_dir, f),
                method: m.method.clone(),
                n: m.n,
                picks: m.picks.len(),
                mean_score: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
                min_score: scores.iter().copied().fold(f64::INFINITY, f64::min),
            });
        } else if v.get("evaluation_reduction").is_some() {
            let num = |p: &str| v.pointer(p).and_then(Value::as_f64).unwrap_or(f64::NAN);
            benches.push(BenchRow {
                run: run_label(in_dir, f),
                steps: v.pointer("/sampler/n_steps").and_then(Value::as_u64).unwrap_or(0),
                samples: v.pointer("/sampler/n_samples").and_then(Value::as_u64).unwrap_or(0),
                reuse: num("/reuse_fraction/mean"),
                reduction: num("/evaluation_reduction"),
                deviation: num("/endpoint_deviation/mean_rel"),
                energy: num("/energy_distance"),
            });
        }
    }
    if selects.is_empty() && benches.is_empty() {
        return Err(CliError::Invalid(format!(
            "no manifests or bench reports under {}",
            in_dir.display()
        )));
    }
    let frac = |r: &SelectRow| r.picks as f64 / r.n.max(1) as f64;
    selects.sort_by(|a, b| frac(a).total_cmp(&frac(b)).then_with(|| a.run.cmp(&b.run)));

    let mut out = String::from("# Run summary\n\n");
    if !selects.is_empty() {
        out.push_str("## Coreset selection\n\n");
        out.push_str("| run | method | n | picks | budget % | mean score | min score |\n");
        out.push_str("|---|---|---:|---:|---:|---:|---:|\n");
        for r in &selects {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.1} | {:.6} | {:.6} |\n",
                r.run,
                r.method,
                r.n,
                r.picks,
                100.0 * frac(r),
                r.mean_score,
                r.min_score
            ));
        }
        out.push('\n');
    }
    if !benches.is_empty() {
        out.push_str("## Velocity caching\n\n");
        out.push_str(
            "| run | steps | samples | reuse_fraction | evaluation reduction | mean rel. deviation | energy distance |\n",
        );
        out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
        for r in &benches {
            out.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.4} | {:.6} | {:.3e} |\n",
                r.run, r.steps, r.samples, r.reuse, r.reduction, r.deviation, r.energy
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    if !a.in_dir.is_dir() {
        return Err(CliError::Invalid(format!("{} is not a directory", a.in_dir.display())));
    }
    let text = build_report(&a.in_dir)?;
    fs::write(a.in_dir.join("summary.md"), &text)?;
    print!("{text}");
    Ok(())
}
