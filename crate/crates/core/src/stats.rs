//! City-level descriptive statistics over check-ins.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CheckIn, Dataset, VenueRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitStats {
    pub venue_id: String,
    pub visits: u64,
    pub unique_visitors: u64,
    pub visiting_frequency: f64,
}

/// Visits divided by unique visitors, one record per venue with at least one
/// check-in, ordered by venue id. Venue-less check-ins are ignored.
pub fn visiting_frequency(ds: &Dataset) -> Vec<VisitStats> {
    let mut per_venue: BTreeMap<&str, (u64, BTreeSet<&str>)> = BTreeMap::new();
    for c in &ds.checkins {
        if let Some(v) = &c.venue_id {
            let e = per_venue.entry(v.as_str()).or_default();
            e.0 += 1;
            e.1.insert(c.user_id.as_str());
        }
    }
    per_venue
        .into_iter()
        .map(|(venue_id, (visits, users))| {
            let unique_visitors = users.len() as u64;
            VisitStats {
                venue_id: venue_id.to_string(),
                visits,
                unique_visitors,
                visiting_frequency: visits as f64 / unique_visitors as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be non-empty and ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(BoxStats {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            n: v.len(),
        })
    }
}

/// Five-number summary of visiting frequency per category. A venue
/// contributes to each of its categories; venues missing from the registry
/// contribute nowhere.
pub fn category_box_stats(
    stats: &[VisitStats],
    venues: &VenueRegistry,
) -> Result<BTreeMap<String, BoxStats>> {
    if stats.is_empty() {
        return Err(Error::invalid("no visit statistics to summarise"));
    }
    let mut freq: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in stats {
        if let Some(v) = venues.get(&s.venue_id) {
            for c in &v.categories {
                freq.entry(c.as_str())
                    .or_default()
                    .push(s.visiting_frequency);
            }
        }
    }
    Ok(freq
        .into_iter()
        .filter_map(|(c, v)| BoxStats::from_values(&v).map(|b| (c.to_string(), b)))
        .collect())
}

/// Check-ins per venue, over venues that have at least one.
pub fn venue_checkin_counts(ds: &Dataset) -> Vec<u64> {
    visiting_frequency(ds)
        .into_iter()
        .map(|s| s.visits)
        .collect()
}

/// Complementary CDF: for each distinct value `v`, the fraction of entries
/// with count `>= v`, ascending in `v`.
pub fn ccdf(counts: &[u64]) -> Vec<(u64, f64)> {
    if counts.is_empty() {
        return Vec::new();
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        out.push((v, (sorted.len() - i) as f64 / n));
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucketing {
    Hour24,
    Dow7,
    Month12,
}

impl Bucketing {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucketing::Hour24 => "hour24",
            Bucketing::Dow7 => "dow7",
            Bucketing::Month12 => "month12",
        }
    }

    pub fn len(self) -> usize {
        match self {
            Bucketing::Hour24 => 24,
            Bucketing::Dow7 => 7,
            Bucketing::Month12 => 12,
        }
    }

    pub fn labels(self) -> Vec<String> {
        match self {
            Bucketing::Hour24 => (0..24).map(|h| h.to_string()).collect(),
            Bucketing::Dow7 => ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            Bucketing::Month12 => (1..=12).map(|m| m.to_string()).collect(),
        }
    }

    pub fn bucket(self, t: &NaiveDateTime) -> usize {
        match self {
            Bucketing::Hour24 => t.hour() as usize,
            Bucketing::Dow7 => t.weekday().num_days_from_monday() as usize,
            Bucketing::Month12 => t.month0() as usize,
        }
    }
}

impl FromStr for Bucketing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hour24" => Ok(Bucketing::Hour24),
            "dow7" => Ok(Bucketing::Dow7),
            "month12" => Ok(Bucketing::Month12),
            other => Err(Error::invalid(format!("unknown bucketing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayFilter {
    #[default]
    All,
    Weekday,
    Weekend,
}

impl DayFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            DayFilter::All => "all",
            DayFilter::Weekday => "weekday",
            DayFilter::Weekend => "weekend",
        }
    }

    /// Strict calendar-day rule: Saturday and Sunday are the weekend.
    pub fn admits(self, t: &NaiveDateTime) -> bool {
        let weekend = matches!(t.weekday(), Weekday::Sat | Weekday::Sun);
        match self {
            DayFilter::All => true,
            DayFilter::Weekday => !weekend,
            DayFilter::Weekend => weekend,
        }
    }
}

impl FromStr for DayFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(DayFilter::All),
            "weekday" => Ok(DayFilter::Weekday),
            "weekend" => Ok(DayFilter::Weekend),
            other => Err(Error::invalid(format!("unknown day filter {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareSeries {
    pub bucketing: Bucketing,
    pub labels: Vec<String>,
    /// Selected categories, most frequent first.
    pub categories: Vec<String>,
    /// Category contributions per bucket, over all categories.
    pub bucket_totals: Vec<u64>,
    /// `shares[bucket][category]`; zero for empty buckets.
    pub shares: Vec<Vec<f64>>,
}

/// True if one name's whitespace tokens end with the other's, e.g.
/// "Restaurant" and "American Restaurant".
pub fn suffix_related(a: &str, b: &str) -> bool {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() || tb.is_empty() {
        return false;
    }
    ta.ends_with(&tb) || tb.ends_with(&ta)
}

/// Picks the `top_n` categories by count (ties by name). With `dedup`, a
/// category suffix-related to an already selected one is skipped.
pub fn top_categories(counts: &BTreeMap<String, u64>, top_n: usize, dedup: bool) -> Vec<String> {
    let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(c, &n)| (c, n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut out: Vec<String> = Vec::with_capacity(top_n);
    for (c, _) in ranked {
        if out.len() == top_n {
            break;
        }
        if dedup && out.iter().any(|s| suffix_related(s, c)) {
            continue;
        }
        out.push(c.clone());
    }
    out
}

fn admitted(ds: &Dataset, day_filter: DayFilter) -> impl Iterator<Item = &CheckIn> {
    ds.checkins
        .iter()
        .filter(move |c| day_filter.admits(&c.timestamp))
}

/// Per-bucket share of each of the `top_n` most frequent categories. A
/// multi-category check-in counts once for each of its categories, and the
/// bucket total is the number of such contributions, so the shares in any
/// bucket sum to at most one.
pub fn share_series(
    ds: &Dataset,
    bucketing: Bucketing,
    top_n: usize,
    day_filter: DayFilter,
    dedup: bool,
) -> ShareSeries {
    let nb = bucketing.len();
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    let mut per_bucket: Vec<BTreeMap<&str, u64>> = vec![BTreeMap::new(); nb];
    let mut bucket_totals = vec![0u64; nb];
    for c in admitted(ds, day_filter) {
        let b = bucketing.bucket(&c.timestamp);
        for cat in &c.categories {
            *totals.entry(cat.clone()).or_default() += 1;
            *per_bucket[b].entry(cat.as_str()).or_default() += 1;
            bucket_totals[b] += 1;
        }
    }
    let categories = top_categories(&totals, top_n, dedup);
    let shares = (0..nb)
        .map(|b| {
            categories
                .iter()
                .map(|c| {
                    if bucket_totals[b] == 0 {
                        0.0
                    } else {
                        *per_bucket[b].get(c.as_str()).unwrap_or(&0) as f64
                            / bucket_totals[b] as f64
                    }
                })
                .collect()
        })
        .collect();
    ShareSeries {
        bucketing,
        labels: bucketing.labels(),
        categories,
        bucket_totals,
        shares,
    }
}

pub fn write_visit_stats_csv<W: Write>(sink: W, stats: &[VisitStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "venue_id",
        "visits",
        "unique_visitors",
        "visiting_frequency",
    ])?;
    for s in stats {
        w.write_record([
            s.venue_id.clone(),
            s.visits.to_string(),
            s.unique_visitors.to_string(),
            s.visiting_frequency.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_box_stats_csv<W: Write>(sink: W, stats: &BTreeMap<String, BoxStats>) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["category", "n", "min", "q1", "median", "q3", "max"])?;
    for (c, b) in stats {
        w.write_record([
            c.clone(),
            b.n.to_string(),
            b.min.to_string(),
            b.q1.to_string(),
            b.median.to_string(),
            b.q3.to_string(),
            b.max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ccdf_csv<W: Write>(sink: W, curve: &[(u64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["threshold", "probability"])?;
    for (v, p) in curve {
        w.write_record([v.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per bucket: label, bucket total, then one share per category.
pub fn write_share_series_csv<W: Write>(sink: W, series: &ShareSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["bucket".to_string(), "total".to_string()];
    header.extend(series.categories.iter().cloned());
    w.write_record(&header)?;
    for (b, label) in series.labels.iter().enumerate() {
        let mut row = vec![label.clone(), series.bucket_totals[b].to_string()];
        row.extend(series.shares[b].iter().map(|s| s.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
