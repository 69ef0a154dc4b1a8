//! Seeded synthetic check-in data with planted ground truth.
//!
//! A [`SynthSpec`] describes cities of users. Every user carries a temporal
//! weight vector over 24-hour lifestyle profiles and a spatial weight vector
//! over category mixtures; expected counts are `W* L*` and observed counts are
//! Poisson draws from them. [`generate_dataset`] turns the same temporal
//! sample into timestamped check-ins at venues on a 100 m grid.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use ndarray::{Array2, Array3, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{reconstruct, ActivityMatrix, ActivityTensor};
use crate::model::{CheckIn, Dataset, Gender, UserProfile, Venue};
use crate::preprocess::EARTH_RADIUS_M;
use crate::rng::stream;

/// Hour-of-day masses (percent) for the early bird, intermediate and night
/// owl lifestyles: 16% while getting up, 70% in the active band, 14% while
/// going to bed.
const CIRCADIAN_BANDS: [[(&[usize], f64); 3]; 3] = [
    [
        (&[6, 7], 16.0),
        (&[8, 9, 10, 11, 12, 13], 70.0),
        (&[20, 21], 14.0),
    ],
    [
        (&[8, 9], 16.0),
        (&[14, 15, 16, 17, 18, 19], 70.0),
        (&[22, 23], 14.0),
    ],
    [
        (&[10, 11], 16.0),
        (&[21, 22, 23, 0], 70.0),
        (&[2, 3, 4], 14.0),
    ],
];

pub const CIRCADIAN_NAMES: [&str; 3] = ["early_bird", "intermediate", "night_owl"];

/// The three planted circadian profiles (3 x 24, unit mass rows).
pub fn circadian_profiles() -> Array2<f64> {
    let mut l = Array2::zeros((3, 24));
    for (j, bands) in CIRCADIAN_BANDS.iter().enumerate() {
        for (hours, mass) in bands {
            for &h in *hours {
                l[[j, h]] = mass / 100.0 / hours.len() as f64;
            }
        }
    }
    l
}

fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_concentration() -> f64 {
    10.0
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2012, 4, 2).expect("valid date")
}
fn default_days() -> u32 {
    56
}
fn default_venues_per_category() -> usize {
    3
}
fn default_spacing() -> f64 {
    100.0
}
fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Poisson observation noise; without it counts are the exact expectations.
    #[serde(default = "default_true")]
    pub poisson_noise: bool,
    /// Multiplies every expected count.
    #[serde(default = "default_one")]
    pub scale: f64,
    /// Gamma shape of the per-user weight jitter around the group mean.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_days")]
    pub days: u32,
    /// Rows over 24 hours; defaults to [`circadian_profiles`].
    #[serde(default)]
    pub temporal_profiles: Option<Vec<Vec<f64>>>,
    pub categories: Vec<String>,
    /// Rows over `categories`.
    pub spatial_profiles: Vec<Vec<f64>>,
    /// Per-category multiplicative preference by hour of day.
    #[serde(default)]
    pub category_hour_affinity: BTreeMap<String, Vec<f64>>,
    #[serde(default = "default_venues_per_category")]
    pub venues_per_category: usize,
    #[serde(default = "default_spacing")]
    pub grid_spacing_m: f64,
    #[serde(default)]
    pub venueless: VenuelessSpec,
    pub cities: Vec<CitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VenuelessSpec {
    /// Fraction of check-ins posted without a venue.
    pub fraction: f64,
    /// Share of venue-less posts placed `near_m` from their venue; the rest
    /// go to `far_m`.
    pub near_share: f64,
    pub near_m: f64,
    pub far_m: f64,
}

impl Default for VenuelessSpec {
    fn default() -> Self {
        VenuelessSpec {
            fraction: 0.0,
            near_share: 0.5,
            near_m: 20.0,
            far_m: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitySpec {
    pub name: String,
    pub n_users: usize,
    #[serde(default = "default_half")]
    pub male_fraction: f64,
    /// Mean check-ins per user before `scale`.
    pub activity: f64,
    /// `[lat, lon]` of the venue grid's corner.
    pub origin: [f64; 2],
    /// Mean mixture over the temporal profiles.
    pub temporal_weights: Vec<f64>,
    pub blobs: Vec<BlobSpec>,
}

/// A group of users sharing a spatial preference mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub name: String,
    pub share: f64,
    /// Mean mixture over the spatial profiles.
    pub weights: Vec<f64>,
}

fn check_distribution(what: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::invalid(format!(
            "{what}: expected {len} entries, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || v.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(format!(
            "{what}: entries must be >= 0 with a positive sum"
        )));
    }
    Ok(())
}

fn unit_rows(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    let mut l = Array2::zeros((rows.len(), width));
    for (j, r) in rows.iter().enumerate() {
        let s: f64 = r.iter().sum();
        for (c, v) in r.iter().enumerate() {
            l[[j, c]] = v / s;
        }
    }
    l
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let kt = self.temporal_profiles.as_ref().map_or(3, |p| p.len());
        if let Some(p) = &self.temporal_profiles {
            if p.is_empty() {
                return Err(Error::invalid("temporal_profiles must not be empty"));
            }
            for (j, row) in p.iter().enumerate() {
                check_distribution(&format!("temporal_profiles[{j}]"), row, 24)?;
            }
        }
        let m = self.categories.len();
        let distinct: BTreeSet<&String> = self.categories.iter().collect();
        if m == 0 || distinct.len() != m {
            return Err(Error::invalid("categories must be non-empty and distinct"));
        }
        if self
            .categories
            .iter()
            .any(|c| c.contains('|') || c.trim() != c || c.is_empty())
        {
            return Err(Error::invalid(
                "category names must be trimmed, non-empty and free of '|'",
            ));
        }
        if self.spatial_profiles.is_empty() {
            return Err(Error::invalid("spatial_profiles must not be empty"));
        }
        for (j, row) in self.spatial_profiles.iter().enumerate() {
            check_distribution(&format!("spatial_profiles[{j}]"), row, m)?;
        }
        for (cat, aff) in &self.category_hour_affinity {
            if !distinct.contains(cat) {
                return Err(Error::invalid(format!(
                    "affinity for unknown category {cat:?}"
                )));
            }
            check_distribution(&format!("category_hour_affinity[{cat:?}]"), aff, 24)?;
        }
        let positive = |what: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be > 0, got {x}")))
            }
        };
        positive("scale", self.scale)?;
        positive("concentration", self.concentration)?;
        positive("grid_spacing_m", self.grid_spacing_m)?;
        if self.days == 0 || self.venues_per_category == 0 {
            return Err(Error::invalid("days and venues_per_category must be >= 1"));
        }
        let vl = &self.venueless;
        if !(0.0..=1.0).contains(&vl.fraction) || !(0.0..=1.0).contains(&vl.near_share) {
            return Err(Error::invalid("venueless fractions must lie in [0, 1]"));
        }
        if !(vl.near_m >= 0.0 && vl.far_m >= 0.0) || vl.far_m >= self.grid_spacing_m / 2.0 {
            return Err(Error::invalid(
                "venueless offsets must be >= 0 and below half the grid spacing",
            ));
        }
        if self.cities.is_empty() {
            return Err(Error::invalid("at least one city is required"));
        }
        let names: BTreeSet<&str> = self.cities.iter().map(|c| c.name.as_str()).collect();
        if names.len() != self.cities.len() {
            return Err(Error::invalid("city names must be distinct"));
        }
        for c in &self.cities {
            if c.name.is_empty() || c.name.contains([',', '|', '/']) {
                return Err(Error::invalid(format!("invalid city name {:?}", c.name)));
            }
            positive(&format!("{}.activity", c.name), c.activity)?;
            if !(0.0..=1.0).contains(&c.male_fraction) {
                return Err(Error::invalid(format!(
                    "{}.male_fraction must lie in [0, 1]",
                    c.name
                )));
            }
            if c.origin[0].abs() > 80.0 || c.origin[1].abs() > 179.0 {
                return Err(Error::invalid(format!("{}.origin out of range", c.name)));
            }
            check_distribution(
                &format!("{}.temporal_weights", c.name),
                &c.temporal_weights,
                kt,
            )?;
            if c.blobs.is_empty() {
                return Err(Error::invalid(format!(
                    "{} needs at least one blob",
                    c.name
                )));
            }
            let share: f64 = c.blobs.iter().map(|b| b.share).sum();
            if c.blobs.iter().any(|b| !(b.share >= 0.0)) || (share - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "{} blob shares must be >= 0 and sum to 1",
                    c.name
                )));
            }
            for b in &c.blobs {
                check_distribution(
                    &format!("{}.{}.weights", c.name, b.name),
                    &b.weights,
                    self.spatial_profiles.len(),
                )?;
            }
        }
        Ok(())
    }

    pub fn temporal_l(&self) -> Array2<f64> {
        match &self.temporal_profiles {
            Some(p) => unit_rows(p, 24),
            None => circadian_profiles(),
        }
    }

    pub fn spatial_l(&self) -> Array2<f64> {
        unit_rows(&self.spatial_profiles, self.categories.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Temporal,
    Spatial,
}

/// A planted user, in `(city, user_id)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthUser {
    pub profile: UserProfile,
    pub blob: String,
    city: usize,
    blob_index: usize,
}

/// Blob sizes by largest remainder so they sum to `n`.
fn apportion(n: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// The planted users, in the row order used by the lifestyle matrix
/// builders.
pub fn users(spec: &SynthSpec) -> Vec<SynthUser> {
    let mut rng = stream(spec.seed, "gender");
    let mut out = Vec::new();
    for (ci, city) in spec.cities.iter().enumerate() {
        let shares: Vec<f64> = city.blobs.iter().map(|b| b.share).collect();
        let sizes = apportion(city.n_users, &shares);
        let mut i = 0;
        for (bi, (blob, &size)) in city.blobs.iter().zip(&sizes).enumerate() {
            for _ in 0..size {
                let gender = if rng.random::<f64>() < city.male_fraction {
                    Gender::Male
                } else {
                    Gender::Female
                };
                out.push(SynthUser {
                    profile: UserProfile {
                        user_id: format!("{}-u{i:05}", city.name),
                        city: city.name.clone(),
                        gender,
                    },
                    blob: blob.name.clone(),
                    city: ci,
                    blob_index: bi,
                });
                i += 1;
            }
        }
    }
    out.sort_by(|a, b| {
        a.profile
            .city
            .cmp(&b.profile.city)
            .then_with(|| a.profile.user_id.cmp(&b.profile.user_id))
    });
    out
}

fn planted_weights(spec: &SynthSpec, users: &[SynthUser], kind: MatrixKind) -> Array2<f64> {
    let name = match kind {
        MatrixKind::Temporal => "temporal-weights",
        MatrixKind::Spatial => "spatial-weights",
    };
    let mut rng = stream(spec.seed, name);
    let jitter =
        Gamma::new(spec.concentration, 1.0 / spec.concentration).expect("validated concentration");
    let k = match kind {
        MatrixKind::Temporal => spec.temporal_profiles.as_ref().map_or(3, |p| p.len()),
        MatrixKind::Spatial => spec.spatial_profiles.len(),
    };
    let mut w = Array2::zeros((users.len(), k));
    for (r, u) in users.iter().enumerate() {
        let city = &spec.cities[u.city];
        let mean = match kind {
            MatrixKind::Temporal => &city.temporal_weights,
            MatrixKind::Spatial => &city.blobs[u.blob_index].weights,
        };
        let total: f64 = mean.iter().sum();
        for j in 0..k {
            let g = jitter.sample(&mut rng);
            w[[r, j]] = city.activity * spec.scale * mean[j] / total * g;
        }
    }
    w
}

fn sample_counts(expected: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    expected.mapv(|lambda| {
        if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(rng)
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedMatrix {
    pub matrix: ActivityMatrix,
    pub w: Array2<f64>,
    pub l: Array2<f64>,
    pub users: Vec<SynthUser>,
}

/// `A ~ Poisson(W* L*)` entrywise, or `A = W* L*` without noise.
pub fn generate_matrix(spec: &SynthSpec, kind: MatrixKind) -> Result<PlantedMatrix> {
    spec.validate()?;
    let users = users(spec);
    let w = planted_weights(spec, &users, kind);
    let (l, labels, noise) = match kind {
        MatrixKind::Temporal => (
            spec.temporal_l(),
            (0..24).map(|h| h.to_string()).collect(),
            "temporal-noise",
        ),
        MatrixKind::Spatial => (spec.spatial_l(), spec.categories.clone(), "spatial-noise"),
    };
    let expected = w.dot(&l);
    let values = if spec.poisson_noise {
        sample_counts(&expected, &mut stream(spec.seed, noise))
    } else {
        expected
    };
    let matrix = ActivityMatrix::new(
        values,
        users.iter().map(|u| u.profile.user_id.clone()).collect(),
        labels,
    )?;
    Ok(PlantedMatrix {
        matrix,
        w,
        l,
        users,
    })
}

fn grid_point(origin: [f64; 2], spacing_m: f64, index: usize, per_row: usize) -> (f64, f64) {
    let (row, col) = (index / per_row, index % per_row);
    let dlat = (row as f64 * spacing_m / EARTH_RADIUS_M).to_degrees();
    let lat = origin[0] + dlat;
    let dlon = (col as f64 * spacing_m / (EARTH_RADIUS_M * lat.to_radians().cos())).to_degrees();
    (lat, origin[1] + dlon)
}

/// Destination `distance_m` from `(lat, lon)` along `bearing` (radians).
fn offset_point(lat: f64, lon: f64, distance_m: f64, bearing: f64) -> (f64, f64) {
    let d = distance_m / EARTH_RADIUS_M;
    let (p1, l1) = (lat.to_radians(), lon.to_radians());
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * bearing.cos()).asin();
    let l2 = l1 + (bearing.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    (p2.to_degrees(), l2.to_degrees())
}

/// Venues for every city: `venues_per_category` per category, on a square
/// grid with `grid_spacing_m` between neighbours.
pub fn venues(spec: &SynthSpec) -> Vec<Venue> {
    let per_city = spec.categories.len() * spec.venues_per_category;
    let per_row = (per_city as f64).sqrt().ceil() as usize;
    let mut out = Vec::with_capacity(per_city * spec.cities.len());
    for city in &spec.cities {
        for i in 0..per_city {
            let (lat, lon) = grid_point(city.origin, spec.grid_spacing_m, i, per_row);
            out.push(Venue {
                venue_id: format!("{}-v{i:05}", city.name),
                lat,
                lon,
                categories: vec![spec.categories[i % spec.categories.len()].clone()],
            });
        }
    }
    out
}

/// Check-ins whose per-user hour tally is the temporal sample of
/// [`generate_matrix`] (rounded when noise is off). Each check-in's category
/// is drawn from the user's spatial mixture, reweighted by the category's hour
/// affinity; its day and minute are uniform over the collection window.
/// A `venueless.fraction` of posts drop venue and categories and sit
/// `near_m` or `far_m` from the venue they came from.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let temporal = generate_matrix(spec, MatrixKind::Temporal)?;
    let users = &temporal.users;
    let ws = planted_weights(spec, users, MatrixKind::Spatial);
    let ls = spec.spatial_l();
    let venues = venues(spec);
    let per_city = spec.categories.len() * spec.venues_per_category;
    let m = spec.categories.len();
    let affinity: Vec<Vec<f64>> = spec
        .categories
        .iter()
        .map(|c| match spec.category_hour_affinity.get(c) {
            Some(a) => a.clone(),
            None => vec![1.0; 24],
        })
        .collect();

    let mut cat_rng = stream(spec.seed, "categories");
    let mut time_rng = stream(spec.seed, "timestamps");
    let mut venue_rng = stream(spec.seed, "venues");
    let mut post_rng = stream(spec.seed, "venueless");
    let start = NaiveDateTime::new(spec.start_date, NaiveTime::MIN);

    let mut checkins = Vec::new();
    for (r, u) in users.iter().enumerate() {
        let mix = ws.row(r).dot(&ls);
        let city_base = u.city * per_city;
        for h in 0..24 {
            let count = temporal.matrix.values[[r, h]].round() as usize;
            if count == 0 {
                continue;
            }
            let weights: Vec<f64> = (0..m).map(|c| mix[c] * affinity[c][h]).collect();
            let pick = WeightedIndex::new(&weights).ok();
            for _ in 0..count {
                let c = match &pick {
                    Some(d) => d.sample(&mut cat_rng),
                    None => cat_rng.random_range(0..m),
                };
                let slot = venue_rng.random_range(0..spec.venues_per_category);
                let venue = &venues[city_base + c + slot * m];
                let day = time_rng.random_range(0..spec.days) as i64;
                let minute = time_rng.random_range(0..60) as i64;
                let timestamp = start
                    + Duration::days(day)
                    + Duration::hours(h as i64)
                    + Duration::minutes(minute);
                let mut ci = CheckIn {
                    user_id: u.profile.user_id.clone(),
                    timestamp,
                    lat: venue.lat,
                    lon: venue.lon,
                    venue_id: Some(venue.venue_id.clone()),
                    categories: venue.categories.clone(),
                };
                if post_rng.random::<f64>() < spec.venueless.fraction {
                    let near = post_rng.random::<f64>() < spec.venueless.near_share;
                    let dist = if near {
                        spec.venueless.near_m
                    } else {
                        spec.venueless.far_m
                    };
                    let bearing = post_rng.random::<f64>() * std::f64::consts::TAU;
                    (ci.lat, ci.lon) = offset_point(venue.lat, venue.lon, dist, bearing);
                    ci.venue_id = None;
                    ci.categories.clear();
                }
                checkins.push(ci);
            }
        }
    }
    checkins.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.user_id.cmp(&b.user_id))
    });
    let profiles = users.iter().map(|u| u.profile.clone()).collect();
    Ok(Dataset::new(checkins, venues, profiles)
        .with_provenance(format!("synthetic seed={}", spec.seed)))
}

/// Random non-negative rank-`k` matrix `W* L*` (N x M) and its factors.
pub fn planted_low_rank(
    n: usize,
    m: usize,
    k: usize,
    seed: u64,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut rng = stream(seed, "planted-matrix");
    let w = Array2::from_shape_simple_fn((n, k), || rng.random::<f64>());
    let l = Array2::from_shape_simple_fn((k, m), || rng.random::<f64>());
    (w.dot(&l), w, l)
}

/// Random non-negative rank-`k` tensor with factors (N x k, k x M, k x P).
/// With `noise_scale`, entries become `Poisson(scale * T) / scale`.
pub fn planted_tensor(
    dims: (usize, usize, usize),
    k: usize,
    noise_scale: Option<f64>,
    seed: u64,
) -> Result<(ActivityTensor, [Array2<f64>; 3])> {
    let mut rng = stream(seed, "planted-tensor");
    let mut factor =
        |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || rng.random::<f64>());
    let (w, lm, lp) = (
        factor((dims.0, k)),
        factor((k, dims.1)),
        factor((k, dims.2)),
    );
    let mut t: Array3<f64> = reconstruct(&w, &lm, &lp)?;
    if let Some(scale) = noise_scale {
        let mut noise = stream(seed, "planted-tensor-noise");
        t.mapv_inplace(|x| {
            let lambda = x * scale;
            if lambda > 0.0 {
                Poisson::new(lambda)
                    .expect("positive rate")
                    .sample(&mut noise)
                    / scale
            } else {
                0.0
            }
        });
    }
    Ok((ActivityTensor::from_values(t)?, [w, lm, lp]))
}

/// Row sums of a planted weight matrix, for sanity checks on spec output.
pub fn row_sums(a: &Array2<f64>) -> Vec<f64> {
    a.sum_axis(Axis(1)).to_vec()
}
