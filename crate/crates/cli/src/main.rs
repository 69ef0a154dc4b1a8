//! `lifemine`: command-line front end for the lifestyle mining pipeline.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or configuration,
//! 1 for any other failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lifemine::factorize::io::{write_factor_model, write_tensor_model};
use lifemine::lifestyle::{self, TimeMode};
use lifemine::model::{self, Format};
use lifemine::pipeline::{self, AnalysisConfig, LifestyleMode, PipelineConfig};
use lifemine::preprocess::{self, ExtensionConfig};
use lifemine::stats::{self, Bucketing, DayFilter};
use lifemine::synth::{self, MatrixKind, SynthSpec};
use lifemine::{cp_als, nmf, ActivityMatrix, ActivityTensor, CpConfig, CpInit, Dataset, NmfConfig};

#[derive(Parser)]
#[command(
    name = "lifemine",
    version,
    about = "Mine latent lifestyles from geo-tagged check-ins"
)]
struct Cli {
    /// Run single-threaded.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw check-ins (and optional venues and users) into a dataset directory.
    Ingest(IngestArgs),
    /// Filter tourists and low-activity users, then attach venue-less posts to venues.
    Preprocess(PreprocessArgs),
    /// City-level statistics as CSV.
    Stats(StatsArgs),
    /// Export a user x hour or user x category activity matrix.
    Matrix(MatrixArgs),
    /// Export a user x time x category activity tensor.
    Tensor(TensorArgs),
    /// Non-negative matrix factorization of an activity matrix.
    Nmf(NmfArgs),
    /// CP decomposition of an activity tensor.
    Cp(CpArgs),
    /// Fit a lifestyle model and write the lifestyle report.
    Lifestyles(LifestylesArgs),
    /// Generate a synthetic dataset from a spec.
    Synth(SynthArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Check-in file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Defaults to the file extension.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    venues: Option<PathBuf>,
    #[arg(long)]
    users: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    radius_m: f64,
    #[arg(long, default_value_t = 7, allow_negative_numbers = true)]
    min_span_days: i64,
    #[arg(long, default_value_t = 10)]
    min_checkins: usize,
    /// Extend before filtering users.
    #[arg(long)]
    extend_first: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Metric {
    Visitfreq,
    Box,
    Ccdf,
    Shares,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long, default_value = "hour24")]
    bucket: Bucketing,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long, default_value = "all")]
    days: DayFilter,
    /// Keep suffix-related category names apart.
    #[arg(long)]
    no_dedup: bool,
    /// Restrict to one city's users.
    #[arg(long)]
    city: Option<String>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Kind {
    Temporal,
    Spatial,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value = "all")]
    days: DayFilter,
    #[arg(long, default_value_t = 100)]
    top_categories: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TensorArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "hour24")]
    time: TimeMode,
    #[arg(long, default_value_t = 100)]
    top_p: usize,
    #[arg(long, default_value_t = 5)]
    prune_h: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NmfArgs {
    /// Matrix CSV with a `user_id` column followed by one column per feature.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CpArgs {
    /// Long-format tensor CSV: `user_id,time,category,count`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 12)]
    k: usize,
    #[arg(long, default_value = "svd")]
    init: CpInit,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Compare error improvement relative to the previous error.
    #[arg(long)]
    relative_tol: bool,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Also write min-max normalised factor matrices.
    #[arg(long)]
    minmax: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LifestylesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    mode: LifestyleMode,
    /// Defaults: temporal 3, spatial 10, tensor 12.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "all")]
    days: DayFilter,
    /// Zero skips clustering.
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Scale weight rows to unit L1 norm before clustering.
    #[arg(long)]
    normalize_rows: bool,
    #[arg(long, default_value_t = 100)]
    top_categories: usize,
    #[arg(long, default_value_t = 5)]
    prune_h: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value = "svd")]
    init: CpInit,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Override the generator file's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    radius_m: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    min_span_days: Option<i64>,
    #[arg(long)]
    min_checkins: Option<usize>,
    #[arg(long)]
    extend_first: bool,
}

/// Failures that map to exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: lifemine::Error) -> anyhow::Error {
    match e {
        lifemine::Error::InvalidArgument(m) => Invalid(m).into(),
        other => other.into(),
    }
}

fn load(dir: &Path) -> anyhow::Result<Dataset> {
    let (ds, report) =
        Dataset::load_dir(dir).with_context(|| format!("loading {}", dir.display()))?;
    let rejected =
        report.checkins.rejects.len() + report.venues.rejects.len() + report.users.rejects.len();
    if rejected > 0 {
        log::warn!("{rejected} rows rejected while loading {}", dir.display());
    }
    Ok(ds)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let format = match a.format {
        Some(f) => f,
        None if a.input.extension().is_some_and(|e| e == "jsonl") => Format::Jsonl,
        None => Format::Csv,
    };
    let (checkins, creport) = model::read_checkins(open(&a.input)?, format)?;
    let (venues, vreport) = match &a.venues {
        Some(p) => model::read_venues(open(p)?, Format::Csv)?,
        None => Default::default(),
    };
    let (users, ureport) = match &a.users {
        Some(p) => model::read_users(open(p)?, Format::Csv)?,
        None => Default::default(),
    };
    let ds = Dataset::new(checkins, venues, users).with_provenance(a.input.display().to_string());
    ds.write_dir(&a.out)?;
    let validation = model::validate_dataset(&ds);
    let report = serde_json::json!({
        "checkins": creport,
        "venues": vreport,
        "users": ureport,
        "validation": validation,
    });
    let mut f = create(&a.out.join("ingest_report.json"))?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    f.flush()?;
    println!(
        "{} of {} check-in rows accepted, {} rejected; {} validation issues",
        creport.accepted,
        creport.total_rows,
        creport.rejects.len(),
        validation.issues.len()
    );
    Ok(())
}

fn run_preprocess(a: PreprocessArgs) -> anyhow::Result<()> {
    let cfg = ExtensionConfig {
        radius_m: a.radius_m,
        min_span_days: a.min_span_days,
        min_checkins: a.min_checkins,
        ..Default::default()
    };
    cfg.validate().map_err(invalid)?;
    let ds = load(&a.input)?;
    let before = ds.checkins.len();
    let out = preprocess::preprocess(&ds, &cfg, a.extend_first)?;
    out.write_dir(&a.out)?;
    println!(
        "{before} -> {} check-ins, {} -> {} users",
        out.checkins.len(),
        ds.users.len(),
        out.users.len()
    );
    Ok(())
}

fn run_stats(a: StatsArgs) -> anyhow::Result<()> {
    let mut ds = load(&a.input)?;
    if let Some(city) = &a.city {
        let keep = ds
            .users
            .values()
            .filter(|u| &u.city == city)
            .map(|u| u.user_id.clone())
            .collect();
        ds = ds.retain_users(&keep);
    }
    let sink = create(&a.out)?;
    let svg = match a.metric {
        Metric::Visitfreq => {
            stats::write_visit_stats_csv(sink, &stats::visiting_frequency(&ds))?;
            None
        }
        Metric::Box => {
            let boxes = stats::category_box_stats(&stats::visiting_frequency(&ds), &ds.venues)
                .map_err(invalid)?;
            stats::write_box_stats_csv(sink, &boxes)?;
            Some(lifemine::svg::box_plot(&boxes, "visiting frequency"))
        }
        Metric::Ccdf => {
            let curve = stats::ccdf(&stats::venue_checkin_counts(&ds));
            stats::write_ccdf_csv(sink, &curve)?;
            Some(lifemine::svg::ccdf_loglog(&curve, "check-ins per venue"))
        }
        Metric::Shares => {
            let series = stats::share_series(&ds, a.bucket, a.top_n, a.days, !a.no_dedup);
            stats::write_share_series_csv(sink, &series)?;
            Some(lifemine::svg::stacked_area(&series, "category shares"))
        }
    };
    if let Some(path) = &a.svg {
        match svg {
            Some(text) => create(path)?.write_all(text.as_bytes())?,
            None => log::warn!("no chart for this metric"),
        }
    }
    Ok(())
}

fn run_matrix(a: MatrixArgs) -> anyhow::Result<()> {
    let ds = load(&a.input)?;
    let m = match a.kind {
        Kind::Temporal => lifestyle::build_temporal_matrix(&ds, a.days),
        Kind::Spatial => {
            let cats = lifestyle::most_frequent_categories(&ds, a.top_categories);
            lifestyle::build_spatial_matrix(&ds, &cats).map_err(invalid)?
        }
    };
    let mut f = create(&a.out)?;
    m.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

fn run_tensor(a: TensorArgs) -> anyhow::Result<()> {
    let ds = load(&a.input)?;
    let built = lifestyle::build_tensor(&ds, a.time, a.top_p, a.prune_h).map_err(invalid)?;
    let mut f = create(&a.out)?;
    built.tensor.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

fn run_nmf(a: NmfArgs) -> anyhow::Result<()> {
    let m = ActivityMatrix::read_csv(open(&a.input)?)?;
    let cfg = NmfConfig {
        k: a.k,
        tol: a.tol,
        max_iter: a.max_iter,
        seed: a.seed,
    };
    let model = nmf(&m, &cfg).map_err(invalid)?;
    write_factor_model(&a.out, &model)?;
    println!(
        "{} iterations, converged: {}, relative error {:.6}",
        model.iterations,
        model.converged,
        model.relative_error(&m)
    );
    Ok(())
}

fn run_cp(a: CpArgs) -> anyhow::Result<()> {
    let t = ActivityTensor::read_csv(open(&a.input)?)?;
    let cfg = CpConfig {
        k: a.k,
        tol: a.tol,
        relative_tol: a.relative_tol,
        max_iter: a.max_iter,
        init: a.init,
        seed: a.seed,
    };
    let model = cp_als(&t, &cfg).map_err(invalid)?;
    write_tensor_model(&a.out, &model, a.minmax)?;
    println!(
        "{} sweeps, converged: {}, fit {:.6}",
        model.iterations,
        model.converged,
        model.fit()
    );
    Ok(())
}

fn run_lifestyles(a: LifestylesArgs) -> anyhow::Result<()> {
    let mut cfg = AnalysisConfig::new(a.mode);
    cfg.k = a.k;
    cfg.days = a.days;
    cfg.clusters = a.clusters;
    cfg.restarts = a.restarts;
    cfg.normalize_rows = a.normalize_rows;
    cfg.top_categories = a.top_categories;
    cfg.prune_h = a.prune_h;
    cfg.tol = a.tol;
    cfg.max_iter = a.max_iter;
    cfg.init = a.init;
    cfg.svg = a.svg;
    cfg.validate().map_err(invalid)?;
    let ds = load(&a.input)?;
    let summary = pipeline::run_lifestyle(&ds, &cfg, a.seed, &a.out, &a.out).map_err(invalid)?;
    println!(
        "{}: k = {}, {} users, relative error {:.6}",
        summary.name, summary.k, summary.rows, summary.relative_error
    );
    Ok(())
}

fn run_synth(a: SynthArgs) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let mut spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Invalid(e.to_string()))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(invalid)?;
    let ds = synth::generate_dataset(&spec)?;
    ds.write_dir(&a.out)?;
    let truth = synth::generate_matrix(&spec, MatrixKind::Temporal)?;
    let labels: Vec<String> = if spec.temporal_profiles.is_none() {
        synth::CIRCADIAN_NAMES
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        (0..truth.l.nrows())
            .map(|j| format!("component_{j}"))
            .collect()
    };
    let mut f = create(&a.out.join("planted_temporal_W.csv"))?;
    ActivityMatrix::new(truth.w, truth.matrix.row_keys.clone(), labels)?.write_csv(&mut f)?;
    f.flush()?;
    println!(
        "{} check-ins, {} users, {} venues",
        ds.checkins.len(),
        ds.users.len(),
        ds.venues.len()
    );
    Ok(())
}

fn run_run(a: RunArgs) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::load(&a.config).map_err(|e| match e {
        lifemine::Error::Json(j) => Invalid(format!("{}: {j}", a.config.display())).into(),
        other => invalid(other),
    })?;
    if let Some(out) = a.out {
        cfg.output = Some(out);
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(r) = a.radius_m {
        cfg.preprocess.radius_m = r;
    }
    if let Some(s) = a.min_span_days {
        cfg.preprocess.min_span_days = s;
    }
    if let Some(c) = a.min_checkins {
        cfg.preprocess.min_checkins = c;
    }
    if a.extend_first {
        cfg.preprocess.extend_first = true;
    }
    cfg.validate().map_err(invalid)?;
    let Some(out) = cfg.output.clone() else {
        return Err(Invalid("no output directory: pass --out or set \"output\"".into()).into());
    };
    let manifest = pipeline::run_pipeline(&cfg, &out)?;
    println!(
        "{} report files written to {}",
        manifest.files.len() + 1,
        out.display()
    );
    Ok(())
}

fn init_threads(deterministic: bool) -> anyhow::Result<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var("LIFEMINE_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Some(n),
                _ => bail!(Invalid(format!(
                    "LIFEMINE_THREADS must be a positive integer, got {v:?}"
                ))),
            },
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = init_threads(cli.deterministic).and_then(|()| match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Preprocess(a) => run_preprocess(a),
        Command::Stats(a) => run_stats(a),
        Command::Matrix(a) => run_matrix(a),
        Command::Tensor(a) => run_tensor(a),
        Command::Nmf(a) => run_nmf(a),
        Command::Cp(a) => run_cp(a),
        Command::Lifestyles(a) => run_lifestyles(a),
        Command::Synth(a) => run_synth(a),
        Command::Run(a) => run_run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
