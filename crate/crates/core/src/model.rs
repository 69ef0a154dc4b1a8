//! Check-in events, venue and user registries, and their file formats.
//!
//! Check-in CSV: `user_id,timestamp,lat,lon,venue_id,categories` where the
//! timestamp is local civil time `YYYY-MM-DDTHH:MM` and categories are
//! `|`-separated. Venue CSV: `venue_id,lat,lon,categories`. User CSV:
//! `user_id,city,gender`. JSONL files carry one object per line with the same
//! field names; `categories` may be a JSON array or a `|`-joined string.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// City label given to users that only appear in check-in streams.
pub const UNKNOWN_CITY: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user_id: String,
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub venue_id: Option<String>,
    /// Empty when the event carries no category annotation.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Venue {
    pub venue_id: String,
    pub lat: f64,
    pub lon: f64,
    pub categories: Vec<String>,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            "unknown" | "" => Ok(Gender::Unknown),
            other => Err(Error::Malformed(format!("unknown gender {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub city: String,
    #[serde(default)]
    pub gender: Gender,
}

impl UserProfile {
    pub fn unknown(user_id: impl Into<String>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            city: UNKNOWN_CITY.to_string(),
            gender: Gender::Unknown,
        }
    }
}

/// Venues in file order. Duplicate ids are retained so that validation can
/// report them; lookups resolve to the first occurrence.
#[derive(Debug, Clone, Default)]
pub struct VenueRegistry {
    venues: Vec<Venue>,
    index: HashMap<String, usize>,
}

impl VenueRegistry {
    pub fn new(venues: Vec<Venue>) -> Self {
        let mut index = HashMap::with_capacity(venues.len());
        for (i, v) in venues.iter().enumerate() {
            index.entry(v.venue_id.clone()).or_insert(i);
        }
        VenueRegistry { venues, index }
    }

    pub fn get(&self, venue_id: &str) -> Option<&Venue> {
        self.index.get(venue_id).map(|&i| &self.venues[i])
    }

    pub fn as_slice(&self) -> &[Venue] {
        &self.venues
    }

    pub fn len(&self) -> usize {
        self.venues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.venues.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Venue> {
        self.venues.iter()
    }
}

impl PartialEq for VenueRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.venues == other.venues
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub checkins: Vec<CheckIn>,
    pub venues: VenueRegistry,
    pub users: BTreeMap<String, UserProfile>,
    pub provenance: String,
}

impl Dataset {
    /// Builds a dataset, registering any user seen only in `checkins` with
    /// city `"unknown"`. The first profile for a repeated user id wins.
    pub fn new(checkins: Vec<CheckIn>, venues: Vec<Venue>, users: Vec<UserProfile>) -> Self {
        let mut registry = BTreeMap::new();
        for u in users {
            registry.entry(u.user_id.clone()).or_insert(u);
        }
        for c in &checkins {
            if !registry.contains_key(&c.user_id) {
                registry.insert(c.user_id.clone(), UserProfile::unknown(c.user_id.clone()));
            }
        }
        Dataset {
            checkins,
            venues: VenueRegistry::new(venues),
            users: registry,
            provenance: String::new(),
        }
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Check-in indices grouped per user, in input order.
    pub fn checkins_by_user(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.checkins.iter().enumerate() {
            out.entry(c.user_id.as_str()).or_default().push(i);
        }
        out
    }

    /// Keeps only the users in `keep` together with their check-ins.
    pub fn retain_users(&self, keep: &BTreeSet<String>) -> Dataset {
        Dataset {
            checkins: self
                .checkins
                .iter()
                .filter(|c| keep.contains(&c.user_id))
                .cloned()
                .collect(),
            venues: self.venues.clone(),
            users: self
                .users
                .iter()
                .filter(|(id, _)| keep.contains(*id))
                .map(|(id, u)| (id.clone(), u.clone()))
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Loads `checkins.csv` (or `checkins.jsonl`), `venues.csv` and
    /// `users.csv` from a directory. Venue and user files are optional.
    pub fn load_dir(dir: &Path) -> Result<(Dataset, DirReport)> {
        let (checkin_path, format) = if dir.join("checkins.csv").exists() {
            (dir.join("checkins.csv"), Format::Csv)
        } else {
            (dir.join("checkins.jsonl"), Format::Jsonl)
        };
        let file = File::open(&checkin_path).map_err(|e| Error::io(&checkin_path, e))?;
        let (checkins, checkin_report) = read_checkins(file, format)?;

        let venue_path = dir.join("venues.csv");
        let (venues, venue_report) = if venue_path.exists() {
            let f = File::open(&venue_path).map_err(|e| Error::io(&venue_path, e))?;
            read_venues(f, Format::Csv)?
        } else {
            (Vec::new(), IngestReport::default())
        };

        let user_path = dir.join("users.csv");
        let (users, user_report) = if user_path.exists() {
            let f = File::open(&user_path).map_err(|e| Error::io(&user_path, e))?;
            read_users(f, Format::Csv)?
        } else {
            (Vec::new(), IngestReport::default())
        };

        let prov_path = dir.join("provenance.txt");
        let provenance = if prov_path.exists() {
            std::fs::read_to_string(&prov_path).map_err(|e| Error::io(&prov_path, e))?
        } else {
            String::new()
        };

        let ds = Dataset::new(checkins, venues, users).with_provenance(provenance);
        Ok((
            ds,
            DirReport {
                checkins: checkin_report,
                venues: venue_report,
                users: user_report,
            },
        ))
    }

    /// Writes the dataset as CSV files that [`Dataset::load_dir`] reads back.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map_err(|e| Error::io(&p, e))
        };
        write_checkins_csv(create("checkins.csv")?, &self.checkins)?;
        write_venues_csv(create("venues.csv")?, self.venues.as_slice())?;
        write_users_csv(create("users.csv")?, self.users.values())?;
        let mut prov = create("provenance.txt")?;
        prov.write_all(self.provenance.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::invalid(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReject {
    /// 1-based line number in the source (the CSV header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_rows: usize,
    pub accepted: usize,
    pub rejects: Vec<RowReject>,
}

impl IngestReport {
    fn accept(&mut self) {
        self.total_rows += 1;
        self.accepted += 1;
    }

    fn reject(&mut self, line: u64, reason: impl Into<String>) {
        self.total_rows += 1;
        self.rejects.push(RowReject {
            line,
            reason: reason.into(),
        });
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirReport {
    pub checkins: IngestReport,
    pub venues: IngestReport,
    pub users: IngestReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub report: IngestReport,
}

/// Reads a check-in stream into a dataset with an empty venue registry.
/// Users are registered with unknown demographics.
pub fn ingest_checkins<R: Read>(source: R, format: Format) -> Result<Ingested> {
    let (checkins, report) = read_checkins(source, format)?;
    Ok(Ingested {
        dataset: Dataset::new(checkins, Vec::new(), Vec::new()),
        report,
    })
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT)
        .map_err(|e| Error::Malformed(format!("timestamp {s:?}: {e}")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn split_categories(s: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for part in s.split('|') {
        if !part.is_empty() && !out.iter().any(|c| c == part) {
            out.push(part.to_string());
        }
    }
    out
}

fn dedup_categories(v: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(v.len());
    for c in v {
        if !c.is_empty() && !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

fn check_coords(lat: f64, lon: f64) -> std::result::Result<(), String> {
    if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return Err(format!("lat {lat} out of range [-90, 90]"));
    }
    if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
        return Err(format!("lon {lon} out of range [-180, 180]"));
    }
    Ok(())
}

fn parse_f64(field: &str, name: &str) -> std::result::Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("{name} {field:?} is not a number"))
}

fn opt_string(s: &str) -> Option<String> {
    if s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonCategories {
    List(Vec<String>),
    Joined(String),
}

impl JsonCategories {
    fn into_vec(self) -> Vec<String> {
        match self {
            JsonCategories::List(v) => dedup_categories(v),
            JsonCategories::Joined(s) => split_categories(&s),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonCheckIn {
    user_id: String,
    timestamp: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    venue_id: Option<String>,
    #[serde(default)]
    categories: Option<JsonCategories>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonVenue {
    venue_id: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    categories: Option<JsonCategories>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonUser {
    user_id: String,
    #[serde(default)]
    city: Option<String>,
    #[serde(default)]
    gender: Option<String>,
}

fn build_checkin(
    user_id: &str,
    timestamp: &str,
    lat: f64,
    lon: f64,
    venue_id: Option<String>,
    categories: Vec<String>,
) -> std::result::Result<CheckIn, String> {
    if user_id.is_empty() {
        return Err("empty user_id".into());
    }
    let timestamp = parse_timestamp(timestamp).map_err(|e| e.to_string())?;
    check_coords(lat, lon)?;
    Ok(CheckIn {
        user_id: user_id.to_string(),
        timestamp,
        lat,
        lon,
        venue_id: venue_id.filter(|v| !v.is_empty()),
        categories,
    })
}

/// Column positions of a CSV header, looked up by name.
struct Columns(Vec<usize>);

impl Columns {
    fn resolve(headers: &csv::StringRecord, names: &[&str], required: usize) -> Result<Self> {
        let mut idx = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            match headers.iter().position(|h| h.trim() == *name) {
                Some(p) => idx.push(p),
                None if i < required => {
                    return Err(Error::Malformed(format!("missing column {name:?}")))
                }
                None => idx.push(usize::MAX),
            }
        }
        Ok(Columns(idx))
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: usize) -> &'r str {
        rec.get(self.0[col]).unwrap_or("")
    }
}

/// Drives a CSV reader, handing each record to `parse` and recording rejects.
fn read_csv_rows<R: Read, T>(
    source: R,
    names: &[&str],
    required: usize,
    mut parse: impl FnMut(&Columns, &csv::StringRecord) -> std::result::Result<T, String>,
) -> Result<(Vec<T>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, names, required)?;
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                if rec.len() != headers.len() {
                    report.reject(
                        line,
                        format!("expected {} fields, found {}", headers.len(), rec.len()),
                    );
                    continue;
                }
                match parse(&cols, &rec) {
                    Ok(v) => {
                        out.push(v);
                        report.accept();
                    }
                    Err(reason) => report.reject(line, reason),
                }
            }
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.reject(line, e.to_string());
            }
        }
    }
    Ok((out, report))
}

fn read_jsonl_rows<R: Read, J: for<'de> Deserialize<'de>, T>(
    source: R,
    mut convert: impl FnMut(J) -> std::result::Result<T, String>,
) -> Result<(Vec<T>, IngestReport)> {
    let reader = BufReader::new(source);
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i as u64 + 1;
        match serde_json::from_str::<J>(&line) {
            Ok(raw) => match convert(raw) {
                Ok(v) => {
                    out.push(v);
                    report.accept();
                }
                Err(reason) => report.reject(lineno, reason),
            },
            Err(e) => report.reject(lineno, e.to_string()),
        }
    }
    Ok((out, report))
}

pub fn read_checkins<R: Read>(source: R, format: Format) -> Result<(Vec<CheckIn>, IngestReport)> {
    match format {
        Format::Csv => read_csv_rows(
            source,
            &[
                "user_id",
                "timestamp",
                "lat",
                "lon",
                "venue_id",
                "categories",
            ],
            4,
            |cols, rec| {
                let lat = parse_f64(cols.get(rec, 2), "lat")?;
                let lon = parse_f64(cols.get(rec, 3), "lon")?;
                build_checkin(
                    cols.get(rec, 0),
                    cols.get(rec, 1),
                    lat,
                    lon,
                    opt_string(cols.get(rec, 4)),
                    split_categories(cols.get(rec, 5)),
                )
            },
        ),
        Format::Jsonl => read_jsonl_rows(source, |raw: JsonCheckIn| {
            build_checkin(
                &raw.user_id,
                &raw.timestamp,
                raw.lat,
                raw.lon,
                raw.venue_id,
                raw.categories
                    .map(JsonCategories::into_vec)
                    .unwrap_or_default(),
            )
        }),
    }
}

fn build_venue(
    venue_id: &str,
    lat: f64,
    lon: f64,
    categories: Vec<String>,
) -> std::result::Result<Venue, String> {
    if venue_id.is_empty() {
        return Err("empty venue_id".into());
    }
    check_coords(lat, lon)?;
    Ok(Venue {
        venue_id: venue_id.to_string(),
        lat,
        lon,
        categories,
    })
}

/// Venues with empty category sets are accepted here and flagged by
/// [`validate_dataset`].
pub fn read_venues<R: Read>(source: R, format: Format) -> Result<(Vec<Venue>, IngestReport)> {
    match format {
        Format::Csv => read_csv_rows(
            source,
            &["venue_id", "lat", "lon", "categories"],
            3,
            |cols, rec| {
                let lat = parse_f64(cols.get(rec, 1), "lat")?;
                let lon = parse_f64(cols.get(rec, 2), "lon")?;
                build_venue(
                    cols.get(rec, 0),
                    lat,
                    lon,
                    split_categories(cols.get(rec, 3)),
                )
            },
        ),
        Format::Jsonl => read_jsonl_rows(source, |raw: JsonVenue| {
            build_venue(
                &raw.venue_id,
                raw.lat,
                raw.lon,
                raw.categories
                    .map(JsonCategories::into_vec)
                    .unwrap_or_default(),
            )
        }),
    }
}

fn build_user(user_id: &str, city: &str, gender: &str) -> std::result::Result<UserProfile, String> {
    if user_id.is_empty() {
        return Err("empty user_id".into());
    }
    let gender = gender.parse::<Gender>().map_err(|e| e.to_string())?;
    Ok(UserProfile {
        user_id: user_id.to_string(),
        city: if city.is_empty() {
            UNKNOWN_CITY.to_string()
        } else {
            city.to_string()
        },
        gender,
    })
}

pub fn read_users<R: Read>(source: R, format: Format) -> Result<(Vec<UserProfile>, IngestReport)> {
    // user_id must be unique; later duplicates become rejects.
    let mut seen = BTreeSet::new();
    let mut unique = move |u: UserProfile| {
        if seen.insert(u.user_id.clone()) {
            Ok(u)
        } else {
            Err(format!("duplicate user_id {:?}", u.user_id))
        }
    };
    match format {
        Format::Csv => read_csv_rows(source, &["user_id", "city", "gender"], 1, |cols, rec| {
            unique(build_user(
                cols.get(rec, 0),
                cols.get(rec, 1),
                cols.get(rec, 2),
            )?)
        }),
        Format::Jsonl => read_jsonl_rows(source, |raw: JsonUser| {
            unique(build_user(
                &raw.user_id,
                raw.city.as_deref().unwrap_or(""),
                raw.gender.as_deref().unwrap_or(""),
            )?)
        }),
    }
}

pub fn write_checkins_csv<'a, W: Write>(
    sink: W,
    checkins: impl IntoIterator<Item = &'a CheckIn>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "user_id",
        "timestamp",
        "lat",
        "lon",
        "venue_id",
        "categories",
    ])?;
    for c in checkins {
        w.write_record([
            c.user_id.as_str(),
            &format_timestamp(&c.timestamp),
            &c.lat.to_string(),
            &c.lon.to_string(),
            c.venue_id.as_deref().unwrap_or(""),
            &c.categories.join("|"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_venues_csv<'a, W: Write>(
    sink: W,
    venues: impl IntoIterator<Item = &'a Venue>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["venue_id", "lat", "lon", "categories"])?;
    for v in venues {
        w.write_record([
            v.venue_id.as_str(),
            &v.lat.to_string(),
            &v.lon.to_string(),
            &v.categories.join("|"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_users_csv<'a, W: Write>(
    sink: W,
    users: impl IntoIterator<Item = &'a UserProfile>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["user_id", "city", "gender"])?;
    for u in users {
        w.write_record([u.user_id.as_str(), u.city.as_str(), u.gender.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    DanglingVenue,
    DuplicateVenue,
    EmptyCategories,
}

impl IssueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueKind::DanglingVenue => "dangling_venue",
            IssueKind::DuplicateVenue => "duplicate_venue",
            IssueKind::EmptyCategories => "empty_categories",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn contains(&self, kind: IssueKind, id: &str) -> bool {
        self.issues.iter().any(|i| i.kind == kind && i.id == id)
    }
}

/// Lists dangling venue references, duplicate venue ids and venues without
/// categories, each id once, sorted by kind then id.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let mut issues = BTreeSet::new();
    for c in &ds.checkins {
        if let Some(v) = &c.venue_id {
            if ds.venues.get(v).is_none() {
                issues.insert(Issue {
                    kind: IssueKind::DanglingVenue,
                    id: v.clone(),
                });
            }
        }
    }
    let mut seen = BTreeSet::new();
    for v in ds.venues.iter() {
        if !seen.insert(v.venue_id.as_str()) {
            issues.insert(Issue {
                kind: IssueKind::DuplicateVenue,
                id: v.venue_id.clone(),
            });
        }
        if v.categories.is_empty() {
            issues.insert(Issue {
                kind: IssueKind::EmptyCategories,
                id: v.venue_id.clone(),
            });
        }
    }
    ValidationReport {
        issues: issues.into_iter().collect(),
    }
}
