//! End-to-end runs: load or synthesise a dataset, preprocess it, compute
//! city statistics, fit the configured lifestyle models and write a report
//! directory with a manifest.
//!
//! Report layout:
//!
//! ```text
//! out/
//!   config.json      resolved configuration; `lifemine run --config` accepts it
//!   manifest.json    version, seeds, dataset counts, analysis summaries, file list
//!   dataset/         preprocessed dataset (checkins.csv, venues.csv, users.csv)
//!   stats/<scope>/   visit_frequency.csv, category_box.csv, venue_ccdf.csv, shares_*.csv
//!   models/<name>/   factor CSVs and meta.json
//!   lifestyles/<name>/  group_means.csv, clusters.json, time_ranges.json, summary.json
//! ```
//!
//! `<scope>` is `all` plus one directory per city. A failed run leaves its
//! partial output in place next to a `FAILED` file holding the error.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::io::{write_factor_model, write_tensor_model};
use crate::factorize::{cp_als, nmf, CpConfig, CpInit, Factors, NmfConfig};
use crate::lifestyle::{
    build_spatial_matrix, build_temporal_matrix, build_tensor, circadian_labels,
    cluster_preferences, extract_time_ranges, group_preferences, most_frequent_categories,
    Grouping, KMeansConfig, TimeMode, TimeRanges,
};
use crate::model::{Dataset, DirReport};
use crate::preprocess::{preprocess, ExtensionConfig, TieBreak};
use crate::stats::{self, Bucketing, DayFilter};
use crate::synth::{generate_dataset, SynthSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// Directory with `checkins.csv` (or `.jsonl`), `venues.csv`, `users.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Synthetic spec JSON, generated in place of a dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub radius_m: f64,
    pub min_span_days: i64,
    pub min_checkins: usize,
    pub tie_break: TieBreak,
    /// Run extension before the user filters.
    pub extend_first: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        let e = ExtensionConfig::default();
        PreprocessConfig {
            radius_m: e.radius_m,
            min_span_days: e.min_span_days,
            min_checkins: e.min_checkins,
            tie_break: e.tie_break,
            extend_first: false,
        }
    }
}

impl PreprocessConfig {
    pub fn extension(&self) -> ExtensionConfig {
        ExtensionConfig {
            radius_m: self.radius_m,
            tie_break: self.tie_break,
            min_span_days: self.min_span_days,
            min_checkins: self.min_checkins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub enabled: bool,
    pub top_n: usize,
    pub buckets: Vec<Bucketing>,
    pub days: Vec<DayFilter>,
    /// Merge suffix-related category names when choosing the top `n`.
    pub dedup: bool,
    pub svg: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            enabled: true,
            top_n: 10,
            buckets: vec![Bucketing::Hour24, Bucketing::Dow7],
            days: vec![DayFilter::All],
            dedup: true,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LifestyleMode {
    Temporal,
    Spatial,
    TensorHour,
    TensorDow,
}

impl LifestyleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LifestyleMode::Temporal => "temporal",
            LifestyleMode::Spatial => "spatial",
            LifestyleMode::TensorHour => "tensor-hour",
            LifestyleMode::TensorDow => "tensor-dow",
        }
    }

    pub fn default_k(self) -> usize {
        match self {
            LifestyleMode::Temporal => 3,
            LifestyleMode::Spatial => 10,
            LifestyleMode::TensorHour | LifestyleMode::TensorDow => 12,
        }
    }

    fn is_tensor(self) -> bool {
        matches!(self, LifestyleMode::TensorHour | LifestyleMode::TensorDow)
    }
}

impl FromStr for LifestyleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(LifestyleMode::Temporal),
            "spatial" => Ok(LifestyleMode::Spatial),
            "tensor-hour" => Ok(LifestyleMode::TensorHour),
            "tensor-dow" => Ok(LifestyleMode::TensorDow),
            other => Err(Error::invalid(format!("unknown lifestyle mode {other:?}"))),
        }
    }
}

fn default_top() -> usize {
    100
}
fn default_prune() -> usize {
    5
}
fn default_clusters() -> usize {
    5
}
fn default_restarts() -> usize {
    10
}
fn default_tol() -> f64 {
    1e-5
}
fn default_max_iter() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Output directory name; defaults to the mode, suffixed by the day
    /// filter for temporal runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mode: LifestyleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Temporal mode only.
    #[serde(default)]
    pub days: DayFilter,
    /// Spatial columns, or the tensor's category count `P`.
    #[serde(default = "default_top")]
    pub top_categories: usize,
    /// Tensor modes drop users with fewer check-ins.
    #[serde(default = "default_prune")]
    pub prune_h: usize,
    /// Zero skips clustering.
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub normalize_rows: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub relative_tol: bool,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub init: CpInit,
    /// Overrides the seed derived from the root seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub svg: bool,
}

impl AnalysisConfig {
    pub fn new(mode: LifestyleMode) -> Self {
        AnalysisConfig {
            name: None,
            mode,
            k: None,
            days: DayFilter::All,
            top_categories: default_top(),
            prune_h: default_prune(),
            clusters: default_clusters(),
            restarts: default_restarts(),
            normalize_rows: false,
            tol: default_tol(),
            relative_tol: false,
            max_iter: default_max_iter(),
            init: CpInit::default(),
            seed: None,
            svg: false,
        }
    }

    pub fn name(&self) -> String {
        match (&self.name, self.mode) {
            (Some(n), _) => n.clone(),
            (None, LifestyleMode::Temporal) if self.days != DayFilter::All => {
                format!("temporal-{}", self.days.as_str())
            }
            (None, m) => m.as_str().to_string(),
        }
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(self.mode.default_k())
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.name();
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(Error::invalid(format!("invalid analysis name {name:?}")));
        }
        if self.k() == 0 {
            return Err(Error::invalid(format!("{name}: k must be >= 1")));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("{name}: tol must be >= 0")));
        }
        if self.max_iter == 0 || self.top_categories == 0 {
            return Err(Error::invalid(format!(
                "{name}: max_iter and top_categories must be >= 1"
            )));
        }
        if self.clusters > 0 && self.restarts == 0 {
            return Err(Error::invalid(format!("{name}: restarts must be >= 1")));
        }
        Ok(())
    }
}

fn default_analyses() -> Vec<AnalysisConfig> {
    let mut weekday = AnalysisConfig::new(LifestyleMode::Temporal);
    weekday.days = DayFilter::Weekday;
    let mut weekend = weekday.clone();
    weekend.days = DayFilter::Weekend;
    vec![
        weekday,
        weekend,
        AnalysisConfig::new(LifestyleMode::Spatial),
        AnalysisConfig::new(LifestyleMode::TensorHour),
        AnalysisConfig::new(LifestyleMode::TensorDow),
    ]
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default = "default_analyses")]
    pub analyses: Vec<AnalysisConfig>,
    /// Report directory; not echoed into the report.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: default_seed(),
            input: InputConfig::default(),
            preprocess: PreprocessConfig::default(),
            stats: StatsConfig::default(),
            analyses: default_analyses(),
            output: None,
        }
    }
}

impl PipelineConfig {
    /// Parses a config file; relative input paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.input.dataset, &mut cfg.input.synth]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.input.dataset, &self.input.synth) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::invalid(
                    "exactly one of input.dataset and input.synth is required",
                ))
            }
        }
        self.preprocess.extension().validate()?;
        if self.stats.enabled && self.stats.top_n == 0 {
            return Err(Error::invalid("stats.top_n must be >= 1"));
        }
        let mut names = BTreeSet::new();
        for a in &self.analyses {
            a.validate()?;
            if !names.insert(a.name()) {
                return Err(Error::invalid(format!(
                    "duplicate analysis name {:?}",
                    a.name()
                )));
            }
        }
        Ok(())
    }

    pub fn analysis_seed(&self, a: &AnalysisConfig) -> u64 {
        a.seed.unwrap_or_else(|| {
            crate::rng::derive_seed(self.seed, &format!("analysis/{}", a.name()))
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRanges {
    pub component: usize,
    pub label: String,
    /// `None` when the component's profile carries no activity.
    pub ranges: Option<TimeRanges>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub name: String,
    pub mode: LifestyleMode,
    pub k: usize,
    pub seed: u64,
    pub rows: usize,
    pub columns: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters_inertia: Option<f64>,
    pub warnings: Vec<String>,
}

/// Fraction of a fitted profile's peak below which an hour is inactive.
pub const SUPPORT_FLOOR: f64 = 0.2;

fn profile_ranges(profiles: &[Vec<f64>]) -> (Vec<ComponentRanges>, Vec<String>) {
    let mut warnings = Vec::new();
    let extracted: Vec<Option<TimeRanges>> = profiles
        .iter()
        .enumerate()
        .map(|(j, p)| {
            // Fitted profiles never reach exact zero, so hours below a fifth
            // of the peak count as inactive. CP factors may also dip negative.
            let peak = p.iter().copied().fold(0.0, f64::max);
            let clipped: Vec<f64> = p
                .iter()
                .map(|&v| if v >= SUPPORT_FLOOR * peak { v } else { 0.0 })
                .collect();
            match extract_time_ranges(&clipped) {
                Ok(r) => Some(r),
                Err(e) => {
                    warnings.push(format!("component {j}: {e}"));
                    None
                }
            }
        })
        .collect();
    let labels = if extracted.iter().all(Option::is_some) {
        let all: Vec<TimeRanges> = extracted.iter().flatten().cloned().collect();
        circadian_labels(&all)
    } else {
        (0..extracted.len())
            .map(|j| format!("component_{j}"))
            .collect()
    };
    let out = extracted
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(component, (ranges, label))| ComponentRanges {
            component,
            label,
            ranges,
        })
        .collect();
    (out, warnings)
}

fn write_group_means<F: Factors + ?Sized>(path: &Path, model: &F, ds: &Dataset) -> Result<()> {
    let k = model.weights().ncols();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["grouping".to_string(), "group".into(), "size".into()];
    header.extend((0..k).map(|j| format!("component_{j}")));
    w.write_record(&header)?;
    for (grouping, tag) in [
        (Grouping::City, "city"),
        (Grouping::CityGender, "city_gender"),
    ] {
        for g in group_preferences(model, &ds.users, grouping) {
            let mut rec = vec![tag.to_string(), g.key.to_string(), g.size.to_string()];
            rec.extend(g.mean.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fits one lifestyle model on `ds`, writing factors to `model_dir` and the
/// lifestyle report to `report_dir` (the two may coincide).
pub fn run_lifestyle(
    ds: &Dataset,
    a: &AnalysisConfig,
    seed: u64,
    model_dir: &Path,
    report_dir: &Path,
) -> Result<AnalysisSummary> {
    a.validate()?;
    let k = a.k();
    let mut warnings = Vec::new();
    fs::create_dir_all(model_dir).map_err(|e| Error::io(model_dir, e))?;
    fs::create_dir_all(report_dir).map_err(|e| Error::io(report_dir, e))?;

    // (model, hour-of-day profiles when applicable, columns, profiles for plots)
    let fitted: (
        Box<dyn Factors>,
        Option<Vec<Vec<f64>>>,
        Vec<String>,
        Vec<Vec<f64>>,
        usize,
        bool,
        f64,
    );
    if a.mode.is_tensor() {
        let time_mode = if a.mode == LifestyleMode::TensorHour {
            TimeMode::Hour24
        } else {
            TimeMode::Dow7
        };
        let built = build_tensor(ds, time_mode, a.top_categories, a.prune_h)?;
        warnings.extend(built.warnings);
        let cfg = CpConfig {
            k,
            tol: a.tol,
            relative_tol: a.relative_tol,
            max_iter: a.max_iter,
            init: a.init,
            seed,
        };
        let model = cp_als(&built.tensor, &cfg)?;
        write_tensor_model(model_dir, &model, true)?;
        let time_profiles: Vec<Vec<f64>> =
            model.l_m.rows().into_iter().map(|r| r.to_vec()).collect();
        let hours = (time_mode == TimeMode::Hour24).then(|| time_profiles.clone());
        fitted = (
            Box::new(model.clone()),
            hours,
            model.times.clone(),
            time_profiles,
            model.iterations,
            model.converged,
            model.relative_error(),
        );
    } else {
        let matrix = match a.mode {
            LifestyleMode::Temporal => build_temporal_matrix(ds, a.days),
            _ => {
                let cats = most_frequent_categories(ds, a.top_categories);
                if cats.len() < a.top_categories {
                    warnings.push(format!(
                        "only {} categories available, fewer than top_categories = {}",
                        cats.len(),
                        a.top_categories
                    ));
                }
                build_spatial_matrix(ds, &cats)?
            }
        };
        let cfg = NmfConfig {
            k,
            tol: a.tol,
            max_iter: a.max_iter,
            seed,
        };
        let model = nmf(&matrix, &cfg)?;
        write_factor_model(model_dir, &model)?;
        let profiles: Vec<Vec<f64>> = model.l.rows().into_iter().map(|r| r.to_vec()).collect();
        let hours = (a.mode == LifestyleMode::Temporal).then(|| profiles.clone());
        let err = model.relative_error(&matrix);
        fitted = (
            Box::new(model.clone()),
            hours,
            model.col_labels.clone(),
            profiles,
            model.iterations,
            model.converged,
            err,
        );
    }
    let (model, hours, columns, profiles, iterations, converged, relative_error) = fitted;
    if !converged {
        warnings.push(format!(
            "solver stopped at max_iter = {} before meeting tol",
            a.max_iter
        ));
    }

    write_group_means(&report_dir.join("group_means.csv"), model.as_ref(), ds)?;

    let mut plot_names: Vec<String> = (0..k).map(|j| format!("component_{j}")).collect();
    if let Some(hours) = &hours {
        let (ranges, w) = profile_ranges(hours);
        warnings.extend(w);
        plot_names = ranges.iter().map(|r| r.label.clone()).collect();
        write_json(&report_dir.join("time_ranges.json"), &ranges)?;
    }

    let mut clusters_inertia = None;
    if a.clusters > 0 {
        let rows = model.weights().nrows();
        if a.clusters > rows {
            warnings.push(format!(
                "clustering skipped: {} clusters for {rows} users",
                a.clusters
            ));
        } else {
            let km = KMeansConfig {
                n_clusters: a.clusters,
                restarts: a.restarts,
                max_iter: 300,
                seed,
                normalize_rows: a.normalize_rows,
            };
            let clusters = cluster_preferences(model.as_ref(), &ds.users, &km)?;
            clusters_inertia = Some(clusters.inertia);
            write_json(&report_dir.join("clusters.json"), &clusters)?;
        }
    }

    if a.svg {
        let named: Vec<(String, Vec<f64>)> = plot_names.into_iter().zip(profiles).collect();
        let svg = crate::svg::profile_lines(&columns, &named, &format!("{} lifestyles", a.name()));
        write_text(&report_dir.join("profiles.svg"), &svg)?;
    }

    for w in &warnings {
        log::warn!("{}: {w}", a.name());
    }
    let summary = AnalysisSummary {
        name: a.name(),
        mode: a.mode,
        k,
        seed,
        rows: model.weights().nrows(),
        columns,
        iterations,
        converged,
        relative_error,
        clusters_inertia,
        warnings,
    };
    write_json(&report_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Stats CSVs (and optional SVGs) for one scope.
pub fn write_stats(ds: &Dataset, cfg: &StatsConfig, dir: &Path) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let visits = stats::visiting_frequency(ds);
    stats::write_visit_stats_csv(create(&dir.join("visit_frequency.csv"))?, &visits)?;
    match stats::category_box_stats(&visits, &ds.venues) {
        Ok(boxes) => {
            stats::write_box_stats_csv(create(&dir.join("category_box.csv"))?, &boxes)?;
            if cfg.svg {
                write_text(
                    &dir.join("category_box.svg"),
                    &crate::svg::box_plot(&boxes, "visiting frequency"),
                )?;
            }
        }
        Err(e) => warnings.push(format!("category box stats skipped: {e}")),
    }
    let curve = stats::ccdf(&stats::venue_checkin_counts(ds));
    stats::write_ccdf_csv(create(&dir.join("venue_ccdf.csv"))?, &curve)?;
    if cfg.svg {
        write_text(
            &dir.join("venue_ccdf.svg"),
            &crate::svg::ccdf_loglog(&curve, "check-ins per venue"),
        )?;
    }
    for &b in &cfg.buckets {
        for &d in &cfg.days {
            let series = stats::share_series(ds, b, cfg.top_n, d, cfg.dedup);
            let stem = format!("shares_{}_{}", b.as_str(), d.as_str());
            stats::write_share_series_csv(create(&dir.join(format!("{stem}.csv")))?, &series)?;
            if cfg.svg {
                write_text(
                    &dir.join(format!("{stem}.svg")),
                    &crate::svg::stacked_area(&series, &stem),
                )?;
            }
        }
    }
    Ok(warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub checkins: usize,
    pub venueless: usize,
    pub users: usize,
    pub venues: usize,
}

impl DatasetCounts {
    pub fn of(ds: &Dataset) -> Self {
        DatasetCounts {
            checkins: ds.checkins.len(),
            venueless: ds.checkins.iter().filter(|c| c.venue_id.is_none()).count(),
            users: ds.users.len(),
            venues: ds.venues.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub input: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<DirReport>,
    pub before_preprocess: DatasetCounts,
    pub after_preprocess: DatasetCounts,
    pub analyses: Vec<AnalysisSummary>,
    pub warnings: Vec<String>,
    /// Report files relative to the output directory, excluding the manifest.
    pub files: Vec<String>,
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(
                rel.components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/"),
            );
        }
    }
    Ok(())
}

fn load_input(cfg: &PipelineConfig) -> Result<(Dataset, Option<DirReport>, String)> {
    if let Some(dir) = &cfg.input.dataset {
        let (ds, report) = Dataset::load_dir(dir)?;
        let rejected = report.checkins.rejects.len()
            + report.venues.rejects.len()
            + report.users.rejects.len();
        if rejected > 0 {
            log::warn!("{rejected} input rows rejected");
        }
        Ok((ds, Some(report), "dataset".into()))
    } else if let Some(path) = &cfg.input.synth {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec = SynthSpec::from_json(&text)?;
        Ok((
            generate_dataset(&spec)?,
            None,
            format!("synth seed={}", spec.seed),
        ))
    } else {
        Err(Error::invalid("no input configured"))
    }
}

fn run_stages(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    write_json(&out.join("config.json"), cfg)?;
    let (raw, ingest, input) = load_input(cfg)?;
    log::info!(
        "loaded {} check-ins from {} users",
        raw.checkins.len(),
        raw.users.len()
    );
    let before = DatasetCounts::of(&raw);
    let mut warnings = Vec::new();
    if raw.venues.is_empty() {
        warnings.push("no venues: extension skipped".to_string());
    }
    let ds = preprocess(
        &raw,
        &cfg.preprocess.extension(),
        cfg.preprocess.extend_first,
    )?;
    drop(raw);
    let after = DatasetCounts::of(&ds);
    log::info!(
        "{} check-ins from {} users after preprocessing",
        after.checkins,
        after.users
    );
    ds.write_dir(&out.join("dataset"))?;

    if cfg.stats.enabled {
        let mut scopes: Vec<(String, Dataset)> = vec![("all".into(), ds.clone())];
        let cities: BTreeSet<&str> = ds.users.values().map(|u| u.city.as_str()).collect();
        for city in cities {
            let keep = ds
                .users
                .values()
                .filter(|u| u.city == city)
                .map(|u| u.user_id.clone())
                .collect();
            scopes.push((city.to_string(), ds.retain_users(&keep)));
        }
        for (scope, sub) in &scopes {
            for w in write_stats(sub, &cfg.stats, &out.join("stats").join(scope))? {
                warnings.push(format!("stats/{scope}: {w}"));
            }
        }
    }

    let mut analyses = Vec::new();
    for a in &cfg.analyses {
        let name = a.name();
        log::info!("analysis {name}");
        let summary = run_lifestyle(
            &ds,
            a,
            cfg.analysis_seed(a),
            &out.join("models").join(&name),
            &out.join("lifestyles").join(&name),
        )
        .map_err(|e| Error::invalid(format!("analysis {name}: {e}")))?;
        analyses.push(summary);
    }

    let mut files = Vec::new();
    list_files(out, out, &mut files)?;
    files.sort();
    Ok(Manifest {
        tool: "lifemine".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        input,
        ingest,
        before_preprocess: before,
        after_preprocess: after,
        analyses,
        warnings,
        files,
    })
}

/// Runs every stage into `out`. Invalid configs fail before anything is
/// written; later failures leave a `FAILED` marker beside partial output.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    match run_stages(cfg, out) {
        Ok(manifest) => {
            write_json(&out.join("manifest.json"), &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = write_text(&marker, &format!("{e}\n"));
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"seed": 1, "radius": 30}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<PipelineConfig>(r#"{"preprocess": {"radius": 30}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn negative_radius_is_invalid() {
        let mut cfg = PipelineConfig::default();
        cfg.input.synth = Some("x.json".into());
        cfg.validate().unwrap();
        cfg.preprocess.radius_m = -1.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn input_must_be_unique() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_err());
        cfg.input.synth = Some("a".into());
        cfg.input.dataset = Some("b".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn analysis_names_and_seeds() {
        let cfg = PipelineConfig::default();
        let names: Vec<String> = cfg.analyses.iter().map(|a| a.name()).collect();
        assert_eq!(
            names,
            vec![
                "temporal-weekday",
                "temporal-weekend",
                "spatial",
                "tensor-hour",
                "tensor-dow"
            ]
        );
        let seeds: BTreeSet<u64> = cfg.analyses.iter().map(|a| cfg.analysis_seed(a)).collect();
        assert_eq!(seeds.len(), 5);
        let mut dup = cfg.clone();
        dup.input.synth = Some("a".into());
        dup.analyses
            .push(AnalysisConfig::new(LifestyleMode::Spatial));
        assert!(dup.validate().is_err());
    }

    #[test]
    fn config_round_trips_without_output() {
        let mut cfg = PipelineConfig::default();
        cfg.output = Some("/tmp/out".into());
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(!text.contains("/tmp/out"));
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(
            back,
            PipelineConfig {
                output: None,
                ..cfg
            }
        );
    }
}
