//! From datasets to activity matrices and tensors, and the analyses run on
//! the resulting factor models: group preference means, get-up / most-active
//! / go-to-bed ranges, and k-means clustering of preference vectors.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Timelike};
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{ActivityMatrix, ActivityTensor, Factors};
use crate::model::{Dataset, Gender, UserProfile};
use crate::stats::DayFilter;

/// Users sorted by `(city, user_id)`, so that each city occupies a
/// contiguous block of matrix rows.
pub fn ordered_users(ds: &Dataset) -> Vec<&UserProfile> {
    let mut users: Vec<&UserProfile> = ds.users.values().collect();
    users.sort_by(|a, b| a.city.cmp(&b.city).then_with(|| a.user_id.cmp(&b.user_id)));
    users
}

fn row_index(users: &[&UserProfile]) -> HashMap<String, usize> {
    users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.user_id.clone(), i))
        .collect()
}

/// Check-ins per user and hour of day under `day`. Every registered user
/// gets a row, zero if nothing passes the filter.
pub fn build_temporal_matrix(ds: &Dataset, day: DayFilter) -> ActivityMatrix {
    let users = ordered_users(ds);
    let index = row_index(&users);
    let mut values = Array2::zeros((users.len(), 24));
    for c in &ds.checkins {
        if !day.admits(&c.timestamp) {
            continue;
        }
        if let Some(&r) = index.get(&c.user_id) {
            values[[r, c.timestamp.hour() as usize]] += 1.0;
        }
    }
    ActivityMatrix::new(
        values,
        users.iter().map(|u| u.user_id.clone()).collect(),
        (0..24).map(|h| h.to_string()).collect(),
    )
    .expect("temporal matrix is well formed")
}

/// Check-ins per user and category. A multi-category check-in increments
/// each listed category; categories outside `categories` are ignored.
pub fn build_spatial_matrix(ds: &Dataset, categories: &[String]) -> Result<ActivityMatrix> {
    let users = ordered_users(ds);
    let index = row_index(&users);
    let cols: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(j, c)| (c.as_str(), j))
        .collect();
    let mut values = Array2::zeros((users.len(), categories.len()));
    for c in &ds.checkins {
        if let Some(&r) = index.get(&c.user_id) {
            for cat in &c.categories {
                if let Some(&j) = cols.get(cat.as_str()) {
                    values[[r, j]] += 1.0;
                }
            }
        }
    }
    ActivityMatrix::new(
        values,
        users.iter().map(|u| u.user_id.clone()).collect(),
        categories.to_vec(),
    )
}

/// Category contribution counts over the whole dataset.
pub fn category_counts(ds: &Dataset) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for c in &ds.checkins {
        for cat in &c.categories {
            *counts.entry(cat.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// The `n` most frequent categories, ties broken by name.
pub fn most_frequent_categories(ds: &Dataset, n: usize) -> Vec<String> {
    crate::stats::top_categories(&category_counts(ds), n, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    Hour24,
    Dow7,
}

impl TimeMode {
    pub fn len(self) -> usize {
        match self {
            TimeMode::Hour24 => 24,
            TimeMode::Dow7 => 7,
        }
    }

    fn bucket(self, t: &chrono::NaiveDateTime) -> usize {
        match self {
            TimeMode::Hour24 => t.hour() as usize,
            TimeMode::Dow7 => t.weekday().num_days_from_monday() as usize,
        }
    }

    fn labels(self) -> Vec<String> {
        match self {
            TimeMode::Hour24 => (0..24).map(|h| h.to_string()).collect(),
            TimeMode::Dow7 => ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl FromStr for TimeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hour24" => Ok(TimeMode::Hour24),
            "dow7" => Ok(TimeMode::Dow7),
            other => Err(Error::invalid(format!("unknown time mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuild {
    pub tensor: ActivityTensor,
    pub warnings: Vec<String>,
}

/// User x time x category counts. Users with fewer than `prune_h`
/// check-ins are dropped first; the `top_p` most frequent categories among
/// the remaining users are kept.
pub fn build_tensor(
    ds: &Dataset,
    time_mode: TimeMode,
    top_p: usize,
    prune_h: usize,
) -> Result<TensorBuild> {
    let mut warnings = Vec::new();
    let totals: HashMap<&str, usize> = ds
        .checkins_by_user()
        .into_iter()
        .map(|(u, idx)| (u, idx.len()))
        .collect();
    let users: Vec<&UserProfile> = ordered_users(ds)
        .into_iter()
        .filter(|u| totals.get(u.user_id.as_str()).copied().unwrap_or(0) >= prune_h)
        .collect();
    if users.is_empty() {
        return Err(Error::invalid(format!(
            "no user has at least {prune_h} check-ins"
        )));
    }
    let index = row_index(&users);

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for c in ds
        .checkins
        .iter()
        .filter(|c| index.contains_key(&c.user_id))
    {
        for cat in &c.categories {
            *counts.entry(cat.clone()).or_insert(0) += 1;
        }
    }
    let categories = crate::stats::top_categories(&counts, top_p, false);
    if categories.len() < top_p {
        let msg = format!(
            "only {} categories available, fewer than top_p = {top_p}; using all",
            categories.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if categories.is_empty() {
        return Err(Error::invalid(
            "no categorised check-ins to build a tensor from",
        ));
    }
    let cols: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(j, c)| (c.as_str(), j))
        .collect();

    let mut values = Array3::zeros((users.len(), time_mode.len(), categories.len()));
    for c in &ds.checkins {
        let Some(&r) = index.get(&c.user_id) else {
            continue;
        };
        let t = time_mode.bucket(&c.timestamp);
        for cat in &c.categories {
            if let Some(&j) = cols.get(cat.as_str()) {
                values[[r, t, j]] += 1.0;
            }
        }
    }
    let mut tensor = ActivityTensor::new(
        values,
        users.iter().map(|u| u.user_id.clone()).collect(),
        time_mode.labels(),
        categories,
    )?;
    tensor.prune_h = Some(prune_h);
    Ok(TensorBuild { tensor, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    City,
    CityGender,
}

impl FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "city" => Ok(Grouping::City),
            "city_gender" | "city-gender" => Ok(Grouping::CityGender),
            other => Err(Error::invalid(format!("unknown grouping {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub city: String,
    /// `None` when grouping by city only.
    pub gender: Option<Gender>,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.gender {
            Some(g) => write!(f, "{}/{}", self.city, g),
            None => f.write_str(&self.city),
        }
    }
}

fn group_key(profile: &UserProfile, grouping: Grouping) -> GroupKey {
    GroupKey {
        city: profile.city.clone(),
        gender: match grouping {
            Grouping::City => None,
            Grouping::CityGender => Some(profile.gender),
        },
    }
}

fn profile_of<'a>(
    users: &'a BTreeMap<String, UserProfile>,
    key: &str,
    fallback: &'a mut Option<UserProfile>,
) -> &'a UserProfile {
    match users.get(key) {
        Some(p) => p,
        None => fallback.insert(UserProfile::unknown(key)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub key: GroupKey,
    pub size: usize,
    pub mean: Vec<f64>,
}

/// Mean weight vector per group. Rows whose key is not registered count as
/// city `"unknown"`. Groups are ordered by key.
pub fn group_preferences<F: Factors + ?Sized>(
    model: &F,
    users: &BTreeMap<String, UserProfile>,
    grouping: Grouping,
) -> Vec<GroupMean> {
    let w = model.weights();
    let k = w.ncols();
    let mut acc: BTreeMap<GroupKey, (usize, Vec<f64>)> = BTreeMap::new();
    for (row, key) in w.rows().into_iter().zip(model.row_keys()) {
        let mut fallback = None;
        let g = group_key(profile_of(users, key, &mut fallback), grouping);
        let e = acc.entry(g).or_insert_with(|| (0, vec![0.0; k]));
        e.0 += 1;
        for (s, v) in e.1.iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    acc.into_iter()
        .map(|(key, (size, sum))| GroupMean {
            key,
            size,
            mean: sum.into_iter().map(|s| s / size as f64).collect(),
        })
        .collect()
}

/// Inclusive hour interval on the 24-hour clock; `start > end` wraps past
/// midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: u8,
    pub end: u8,
}

impl HourRange {
    pub fn hours(&self) -> Vec<u8> {
        let mut out = vec![self.start];
        let mut h = self.start;
        while h != self.end {
            h = (h + 1) % 24;
            out.push(h);
        }
        out
    }

    pub fn contains(&self, hour: u8) -> bool {
        self.hours().contains(&hour)
    }
}

impl fmt::Display for HourRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRanges {
    pub get_up: HourRange,
    pub most_active: HourRange,
    pub go_to_bed: HourRange,
    pub fractions: [f64; 3],
    pub anchor_hour: u8,
}

pub const RANGE_FRACTIONS: [f64; 3] = [0.15, 0.70, 0.15];
pub const ANCHOR_HOUR: u8 = 5;

/// Splits a 24-hour activity profile into get-up, most-active and
/// go-to-bed ranges. Hours are walked cyclically from 05:00; get-up ends at
/// the first hour where the cumulative mass fraction reaches 0.15,
/// most-active at the first hour where it reaches 0.85, and go-to-bed runs
/// to the last hour with activity. Each range starts at its first hour with
/// activity; a range left without activity collapses onto the previous
/// range's end.
pub fn extract_time_ranges(profile: &[f64]) -> Result<TimeRanges> {
    if profile.len() != 24 {
        return Err(Error::invalid(format!(
            "profile must have 24 entries, got {}",
            profile.len()
        )));
    }
    if profile.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("profile entries must be finite and >= 0"));
    }
    let total: f64 = profile.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("profile has no activity"));
    }
    let walk: Vec<usize> = (0..24).map(|i| (ANCHOR_HOUR as usize + i) % 24).collect();
    let mass: Vec<f64> = walk.iter().map(|&h| profile[h]).collect();

    let mut cum = 0.0;
    let mut cut = [None, None];
    let thresholds = [RANGE_FRACTIONS[0], RANGE_FRACTIONS[0] + RANGE_FRACTIONS[1]];
    for (pos, m) in mass.iter().enumerate() {
        cum += m;
        for (slot, &th) in cut.iter_mut().zip(&thresholds) {
            if slot.is_none() && cum / total >= th {
                *slot = Some(pos);
            }
        }
    }
    let support = |from: usize, to: usize| (from..=to).find(|&p| mass[p] > 0.0);
    let last_support = (0..24)
        .rev()
        .find(|&p| mass[p] > 0.0)
        .expect("non-zero total");
    let first_support = support(0, 23).expect("non-zero total");
    // cumulative fractions can fall a hair short of 0.85 in floating point
    let e0 = cut[0].unwrap_or(last_support);
    let e1 = cut[1].unwrap_or(last_support).max(e0);

    let s1 = if e1 > e0 {
        support(e0 + 1, e1).unwrap_or(e1)
    } else {
        e1
    };
    let (s2, e2) = if last_support > e1 {
        (
            support(e1 + 1, last_support).unwrap_or(last_support),
            last_support,
        )
    } else {
        (e1, e1)
    };
    let hour = |pos: usize| walk[pos] as u8;
    Ok(TimeRanges {
        get_up: HourRange {
            start: hour(first_support),
            end: hour(e0),
        },
        most_active: HourRange {
            start: hour(s1),
            end: hour(e1),
        },
        go_to_bed: HourRange {
            start: hour(s2),
            end: hour(e2),
        },
        fractions: RANGE_FRACTIONS,
        anchor_hour: ANCHOR_HOUR,
    })
}

/// Names three temporal lifestyles by how late they get up: earliest is
/// `early_bird`, latest `night_owl`. Other component counts get
/// `component_<j>`.
pub fn circadian_labels(ranges: &[TimeRanges]) -> Vec<String> {
    if ranges.len() != 3 {
        return (0..ranges.len())
            .map(|j| format!("component_{j}"))
            .collect();
    }
    let offset = |r: &TimeRanges| (r.get_up.start as usize + 24 - ANCHOR_HOUR as usize) % 24;
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by_key(|&j| (offset(&ranges[j]), j));
    let mut labels = vec![String::new(); 3];
    for (rank, &j) in order.iter().enumerate() {
        labels[j] = ["early_bird", "intermediate", "night_owl"][rank].to_string();
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub n_clusters: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Scale rows to unit L1 norm before clustering.
    pub normalize_rows: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            n_clusters: 5,
            restarts: 10,
            max_iter: 300,
            seed: 42,
            normalize_rows: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares.
    pub inertia: f64,
    /// Inertia after each assignment and update step of the winning run.
    pub objective_trace: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seed(points: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centers
}

fn lloyd(
    points: &Array2<f64>,
    mut centers: Array2<f64>,
    max_iter: usize,
) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
    let n = points.nrows();
    let k = centers.nrows();
    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.rows().into_iter().enumerate() {
            let current = assign[i];
            let mut best = current;
            let mut best_d = if current < k {
                sq_dist(p, centers.row(current))
            } else {
                f64::INFINITY
            };
            for c in 0..k {
                let d = sq_dist(p, centers.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if best != current {
                assign[i] = best;
                changed = true;
            }
        }
        trace.push(inertia(points, &centers, &assign));

        // Update centres; an empty cluster takes the point farthest from its
        // centre among clusters that can spare one.
        let mut sizes = vec![0usize; k];
        for &a in &assign {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[assign[i]] > 1)
                .map(|i| (i, sq_dist(points.row(i), centers.row(assign[i]))))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                sizes[assign[i]] -= 1;
                assign[i] = c;
                sizes[c] = 1;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        for (i, p) in points.rows().into_iter().enumerate() {
            let mut row = sums.row_mut(assign[i]);
            row += &p;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                let mean = &sums.row(c) / sizes[c] as f64;
                centers.row_mut(c).assign(&mean);
            }
        }
        trace.push(inertia(points, &centers, &assign));
        if !changed {
            break;
        }
    }
    (centers, assign, trace)
}

fn inertia(points: &Array2<f64>, centers: &Array2<f64>, assign: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(assign)
        .map(|(p, &a)| sq_dist(p, centers.row(a)))
        .sum()
}

fn l1_normalize(rows: &Array2<f64>) -> Array2<f64> {
    let mut out = rows.clone();
    for mut r in out.axis_iter_mut(Axis(0)) {
        let s: f64 = r.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            r.mapv_inplace(|v| v / s);
        }
    }
    out
}

/// Lloyd's k-means from k-means++ seeds, best of `restarts` runs by
/// within-cluster sum of squares (ties go to the lowest restart index).
pub fn kmeans(rows: &Array2<f64>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = rows.nrows();
    if n == 0 {
        return Err(Error::invalid("no rows to cluster"));
    }
    if cfg.n_clusters == 0 || cfg.n_clusters > n {
        return Err(Error::invalid(format!(
            "n_clusters must be in 1..={n}, got {}",
            cfg.n_clusters
        )));
    }
    let points = if cfg.normalize_rows {
        l1_normalize(rows)
    } else {
        rows.clone()
    };
    let runs: Vec<KMeansResult> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = crate::rng::stream(cfg.seed, &format!("kmeans-{r}"));
            let seeds = plus_plus_seed(&points, cfg.n_clusters, &mut rng);
            let (centers, assignments, trace) = lloyd(&points, seeds, cfg.max_iter.max(1));
            KMeansResult {
                inertia: inertia(&points, &centers, &assignments),
                centers,
                assignments,
                objective_trace: trace,
                restart: r,
            }
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub center: Vec<f64>,
    pub size: usize,
    /// Share of each (city, gender) group, with every user weighted by
    /// `1 / |city|`; sums to one.
    pub composition: BTreeMap<String, f64>,
    /// `composition` summed over genders.
    pub city_shares: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifestyleClusters {
    pub clusters: Vec<ClusterSummary>,
    /// `(user_id, cluster)` in row order.
    pub assignments: Vec<(String, usize)>,
    pub inertia: f64,
    pub normalized_rows: bool,
}

impl LifestyleClusters {
    pub fn centers(&self) -> Array2<f64> {
        let k = self.clusters.first().map_or(0, |c| c.center.len());
        Array2::from_shape_fn((self.clusters.len(), k), |(i, j)| {
            self.clusters[i].center[j]
        })
    }
}

/// Clusters the weight rows of `model` and reports per-cluster demographic
/// composition normalised by city size.
pub fn cluster_preferences<F: Factors + ?Sized>(
    model: &F,
    users: &BTreeMap<String, UserProfile>,
    cfg: &KMeansConfig,
) -> Result<LifestyleClusters> {
    let result = kmeans(model.weights(), cfg)?;
    let keys = model.row_keys();
    let profiles: Vec<UserProfile> = keys
        .iter()
        .map(|k| {
            users
                .get(k)
                .cloned()
                .unwrap_or_else(|| UserProfile::unknown(k.clone()))
        })
        .collect();
    let mut city_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &profiles {
        *city_sizes.entry(p.city.as_str()).or_insert(0) += 1;
    }
    let k = cfg.n_clusters;
    let mut weight: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); k];
    let mut sizes = vec![0usize; k];
    for (p, &c) in profiles.iter().zip(&result.assignments) {
        let w = 1.0 / city_sizes[p.city.as_str()] as f64;
        let key = group_key(p, Grouping::CityGender).to_string();
        *weight[c].entry(key).or_insert(0.0) += w;
        sizes[c] += 1;
    }
    let clusters = (0..k)
        .map(|c| {
            let total: f64 = weight[c].values().sum();
            let composition: BTreeMap<String, f64> = weight[c]
                .iter()
                .map(|(g, w)| (g.clone(), if total > 0.0 { w / total } else { 0.0 }))
                .collect();
            let mut city_shares: BTreeMap<String, f64> = BTreeMap::new();
            for (g, s) in &composition {
                let city = g.rsplit_once('/').map_or(g.as_str(), |(c, _)| c);
                *city_shares.entry(city.to_string()).or_insert(0.0) += s;
            }
            ClusterSummary {
                center: result.centers.row(c).to_vec(),
                size: sizes[c],
                composition,
                city_shares,
            }
        })
        .collect();
    Ok(LifestyleClusters {
        clusters,
        assignments: keys
            .iter()
            .cloned()
            .zip(result.assignments.iter().copied())
            .collect(),
        inertia: result.inertia,
        normalized_rows: cfg.normalize_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_timestamp, CheckIn};
    use ndarray::array;

    fn ci(user: &str, ts: &str, cats: &[&str]) -> CheckIn {
        CheckIn {
            user_id: user.into(),
            timestamp: parse_timestamp(ts).unwrap(),
            lat: 0.0,
            lon: 0.0,
            venue_id: None,
            categories: cats.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn profile(user: &str, city: &str, gender: Gender) -> UserProfile {
        UserProfile {
            user_id: user.into(),
            city: city.into(),
            gender,
        }
    }

    #[test]
    fn temporal_matrix_monday_mornings() {
        // 2012-06-04 is a Monday
        let ds = Dataset::new(
            vec![
                ci("a", "2012-06-04T09:05", &[]),
                ci("a", "2012-06-11T09:30", &[]),
                ci("a", "2012-06-18T09:59", &[]),
            ],
            vec![],
            vec![],
        );
        let m = build_temporal_matrix(&ds, DayFilter::Weekday);
        let mut expect = vec![0.0; 24];
        expect[9] = 3.0;
        assert_eq!(m.values.row(0).to_vec(), expect);
        assert_eq!(
            build_temporal_matrix(&ds, DayFilter::Weekend).values.sum(),
            0.0
        );
    }

    #[test]
    fn saturday_after_midnight_is_weekend() {
        let ds = Dataset::new(vec![ci("a", "2012-06-09T00:30", &[])], vec![], vec![]);
        let m = build_temporal_matrix(&ds, DayFilter::Weekend);
        assert_eq!(m.values[[0, 0]], 1.0);
    }

    #[test]
    fn temporal_rows_ordered_by_city_then_id() {
        let ds = Dataset::new(
            vec![
                ci("z", "2012-06-04T01:00", &[]),
                ci("b", "2012-06-04T02:00", &[]),
                ci("b", "2012-06-05T02:00", &[]),
                ci("a", "2012-06-04T23:00", &[]),
                ci("x", "2012-06-04T12:00", &[]),
            ],
            vec![],
            vec![
                profile("z", "nyc", Gender::Male),
                profile("a", "roc", Gender::Female),
                profile("b", "nyc", Gender::Female),
                profile("x", "roc", Gender::Unknown),
                profile("idle", "roc", Gender::Male),
            ],
        );
        let m = build_temporal_matrix(&ds, DayFilter::All);
        assert_eq!(m.row_keys, vec!["b", "z", "a", "idle", "x"]);
        let mut expected = Array2::<f64>::zeros((5, 24));
        expected[[0, 2]] = 2.0;
        expected[[1, 1]] = 1.0;
        expected[[2, 23]] = 1.0;
        expected[[4, 12]] = 1.0;
        assert_eq!(m.values, expected);
    }

    #[test]
    fn spatial_matrix_counts_each_category() {
        let ds = Dataset::new(
            vec![
                ci("a", "2012-06-04T21:00", &["Bar", "Music Venue"]),
                ci("a", "2012-06-05T22:00", &["Bar", "Music Venue"]),
                ci("a", "2012-06-05T22:00", &["Gym"]),
            ],
            vec![],
            vec![],
        );
        let cats = vec!["Bar".to_string(), "Music Venue".to_string()];
        let m = build_spatial_matrix(&ds, &cats).unwrap();
        assert_eq!(m.values, array![[2.0, 2.0]]);
    }

    #[test]
    fn tensor_prunes_below_h() {
        let mut cs = Vec::new();
        for i in 0..4 {
            cs.push(ci("four", &format!("2012-06-0{}T10:00", i + 1), &["Bar"]));
        }
        for i in 0..5 {
            cs.push(ci("five", &format!("2012-06-0{}T10:00", i + 1), &["Bar"]));
        }
        let ds = Dataset::new(cs, vec![], vec![]);
        let b = build_tensor(&ds, TimeMode::Hour24, 100, 5).unwrap();
        assert_eq!(b.tensor.users, vec!["five"]);
        assert_eq!(b.tensor.values[[0, 10, 0]], 5.0);
        assert_eq!(b.warnings.len(), 1);
        assert_eq!(b.tensor.prune_h, Some(5));
    }

    #[test]
    fn tensor_keeps_top_categories() {
        let mut cs = Vec::new();
        for c in 0..120usize {
            // category c gets c + 1 check-ins
            for i in 0..=c {
                cs.push(ci(
                    "u",
                    &format!("2012-06-{:02}T{:02}:00", 1 + i % 28, i % 24),
                    &[&format!("cat{c:03}")],
                ));
            }
        }
        let ds = Dataset::new(cs, vec![], vec![]);
        let b = build_tensor(&ds, TimeMode::Dow7, 100, 5).unwrap();
        assert_eq!(b.tensor.dim(), (1, 7, 100));
        for c in 0..20 {
            assert!(!b.tensor.categories.contains(&format!("cat{c:03}")));
        }
        assert!(b.warnings.is_empty());
    }

    struct Rows(Array2<f64>, Vec<String>);
    impl Factors for Rows {
        fn weights(&self) -> &Array2<f64> {
            &self.0
        }
        fn row_keys(&self) -> &[String] {
            &self.1
        }
    }

    #[test]
    fn group_means() {
        let users: BTreeMap<String, UserProfile> = [
            profile("a", "nyc", Gender::Male),
            profile("b", "nyc", Gender::Female),
            profile("c", "roc", Gender::Male),
        ]
        .into_iter()
        .map(|p| (p.user_id.clone(), p))
        .collect();
        let rows = Rows(
            array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.2, 0.3, 0.5]],
            vec!["a".into(), "b".into(), "c".into()],
        );
        let by_city = group_preferences(&rows, &users, Grouping::City);
        assert_eq!(by_city.len(), 2);
        assert_eq!(by_city[0].mean, vec![0.5, 0.5, 0.0]);
        assert_eq!(by_city[0].size, 2);
        assert_eq!(by_city[1].mean, vec![0.2, 0.3, 0.5]);
        let fine = group_preferences(&rows, &users, Grouping::CityGender);
        assert_eq!(fine.len(), 3);
        assert_eq!(fine[0].key.to_string(), "nyc/male");
    }

    #[test]
    fn uniform_profile_ranges() {
        let mut p = vec![0.0; 24];
        for h in 7..=21 {
            p[h] = 1.0;
        }
        let r = extract_time_ranges(&p).unwrap();
        assert_eq!(r.get_up, HourRange { start: 7, end: 9 });
        assert_eq!(r.most_active, HourRange { start: 10, end: 19 });
        assert_eq!(r.go_to_bed, HourRange { start: 20, end: 21 });
    }

    #[test]
    fn single_hour_profile_degenerates() {
        let mut p = vec![0.0; 24];
        p[12] = 4.0;
        let r = extract_time_ranges(&p).unwrap();
        let noon = HourRange { start: 12, end: 12 };
        assert_eq!((r.get_up, r.most_active, r.go_to_bed), (noon, noon, noon));
    }

    #[test]
    fn wrapping_profile() {
        // activity 22:00 - 03:00 wraps past midnight
        let mut p = vec![0.0; 24];
        for h in [22, 23, 0, 1, 2, 3] {
            p[h] = 1.0;
        }
        let r = extract_time_ranges(&p).unwrap();
        // 5/6 < 0.85, so most-active runs to the last hour and go-to-bed
        // collapses onto it
        assert_eq!(r.get_up, HourRange { start: 22, end: 22 });
        assert_eq!(r.most_active, HourRange { start: 23, end: 3 });
        assert_eq!(r.most_active.hours(), vec![23, 0, 1, 2, 3]);
        assert_eq!(r.go_to_bed, HourRange { start: 3, end: 3 });
    }

    #[test]
    fn zero_profile_is_an_error() {
        assert!(extract_time_ranges(&[0.0; 24]).is_err());
        assert!(extract_time_ranges(&[1.0; 12]).is_err());
    }

    #[test]
    fn identical_rows_fill_every_cluster() {
        let rows = Array2::from_elem((5, 3), 0.4);
        let res = kmeans(
            &rows,
            &KMeansConfig {
                n_clusters: 5,
                restarts: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let mut seen = res.assignments.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn too_many_clusters() {
        let rows = Array2::from_elem((3, 2), 1.0);
        assert!(kmeans(
            &rows,
            &KMeansConfig {
                n_clusters: 4,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn composition_normalises_by_city_size() {
        // nyc has 4 users, roc 2; one cluster holds 2 nyc + 1 roc, so each
        // city contributes 2/4 and 1/2: equal shares.
        let users: BTreeMap<String, UserProfile> = [
            profile("n1", "nyc", Gender::Male),
            profile("n2", "nyc", Gender::Female),
            profile("n3", "nyc", Gender::Male),
            profile("n4", "nyc", Gender::Male),
            profile("r1", "roc", Gender::Female),
            profile("r2", "roc", Gender::Male),
        ]
        .into_iter()
        .map(|p| (p.user_id.clone(), p))
        .collect();
        let rows = Rows(
            array![
                [0.0, 0.0],
                [0.1, 0.0],
                [10.0, 10.0],
                [10.1, 10.0],
                [0.0, 0.1],
                [10.0, 10.1]
            ],
            vec!["n1", "n2", "n3", "n4", "r1", "r2"]
                .into_iter()
                .map(String::from)
                .collect(),
        );
        let out = cluster_preferences(
            &rows,
            &users,
            &KMeansConfig {
                n_clusters: 2,
                ..Default::default()
            },
        )
        .unwrap();
        for c in &out.clusters {
            assert!((c.city_shares["nyc"] - 0.5).abs() < 1e-12);
            assert!((c.composition.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
