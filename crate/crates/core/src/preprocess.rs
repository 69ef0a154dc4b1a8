//! User filters and radius-based check-in extension.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Venue};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Smallest distance, then lexicographically smallest venue id.
    #[default]
    NearestThenId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtensionConfig {
    pub radius_m: f64,
    pub tie_break: TieBreak,
    pub min_span_days: i64,
    pub min_checkins: usize,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        ExtensionConfig {
            radius_m: 30.0,
            tie_break: TieBreak::NearestThenId,
            min_span_days: 7,
            min_checkins: 10,
        }
    }
}

impl ExtensionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m.is_finite() && self.radius_m > 0.0) {
            return Err(Error::invalid(format!(
                "radius_m must be > 0, got {}",
                self.radius_m
            )));
        }
        if self.min_span_days < 0 {
            return Err(Error::invalid(format!(
                "min_span_days must be >= 0, got {}",
                self.min_span_days
            )));
        }
        Ok(())
    }
}

/// Removes users whose activity spans fewer than `min_span_days` whole days
/// between their first and last check-in. Users without check-ins go too.
pub fn filter_tourists(ds: &Dataset, min_span_days: i64) -> Dataset {
    let keep: BTreeSet<String> = ds
        .checkins_by_user()
        .into_iter()
        .filter(|(_, idx)| {
            let first = idx.iter().map(|&i| ds.checkins[i].timestamp).min();
            let last = idx.iter().map(|&i| ds.checkins[i].timestamp).max();
            match (first, last) {
                (Some(f), Some(l)) => (l - f).num_days() >= min_span_days,
                _ => false,
            }
        })
        .map(|(u, _)| u.to_string())
        .collect();
    ds.retain_users(&keep)
}

/// Removes users with fewer than `min_checkins` check-ins.
pub fn filter_low_activity(ds: &Dataset, min_checkins: usize) -> Dataset {
    let keep: BTreeSet<String> = ds
        .checkins_by_user()
        .into_iter()
        .filter(|(_, idx)| idx.len() >= min_checkins)
        .map(|(u, _)| u.to_string())
        .collect();
    ds.retain_users(&keep)
}

/// Great-circle distance in metres on a sphere of radius 6,371 km.
pub fn haversine_m(p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let (lat1, lon1) = (p1.0.to_radians(), p1.1.to_radians());
    let (lat2, lon2) = (p2.0.to_radians(), p2.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Venue lookup on a fixed latitude/longitude grid whose cell edge equals the
/// search radius in degrees of latitude. Queries return exactly the venue
/// that a linear scan would.
pub struct VenueGrid<'a> {
    venues: Vec<&'a Venue>,
    cells: HashMap<(i64, i64), Vec<usize>>,
    cell_deg: f64,
    radius_m: f64,
}

impl<'a> VenueGrid<'a> {
    pub fn new(venues: &'a [Venue], radius_m: f64) -> Self {
        let cell_deg = (radius_m / EARTH_RADIUS_M).to_degrees();
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let refs: Vec<&Venue> = venues.iter().collect();
        for (i, v) in refs.iter().enumerate() {
            cells
                .entry((cell_of(v.lat, cell_deg), cell_of(v.lon, cell_deg)))
                .or_default()
                .push(i);
        }
        VenueGrid {
            venues: refs,
            cells,
            cell_deg,
            radius_m,
        }
    }

    /// Nearest venue within the radius, ties broken by smallest id.
    pub fn nearest_within(&self, lat: f64, lon: f64) -> Option<(&'a Venue, f64)> {
        // A point within distance d differs in latitude by at most d / R.
        let dlat = (self.radius_m / EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9);
        let lat_lo = cell_of(lat - dlat, self.cell_deg);
        let lat_hi = cell_of(lat + dlat, self.cell_deg);

        // sin(d/2R) >= cos(phi_max) * sin(dlon/2) bounds the longitude spread.
        let phi_max = (lat.abs() + dlat).min(90.0).to_radians();
        let bound = (self.radius_m / (2.0 * EARTH_RADIUS_M)).sin() / phi_max.cos();
        let lon_ranges: Vec<(i64, i64)> = if !(bound < 1.0) {
            vec![(i64::MIN, i64::MAX)]
        } else {
            let dlon = (2.0 * bound.asin()).to_degrees() * (1.0 + 1e-9) + 1e-12;
            if dlon >= 180.0 {
                vec![(i64::MIN, i64::MAX)]
            } else {
                wrap_lon_range(lon - dlon, lon + dlon)
                    .into_iter()
                    .map(|(a, b)| (cell_of(a, self.cell_deg), cell_of(b, self.cell_deg)))
                    .collect()
            }
        };

        let mut best: Option<(&'a Venue, f64)> = None;
        let mut consider = |i: usize| {
            let v = self.venues[i];
            let d = haversine_m((lat, lon), (v.lat, v.lon));
            if d <= self.radius_m && better(d, &v.venue_id, best) {
                best = Some((v, d));
            }
        };

        let full_scan = lon_ranges.iter().any(|&(a, _)| a == i64::MIN)
            || (lat_hi - lat_lo + 1)
                .saturating_mul(lon_ranges.iter().map(|(a, b)| b - a + 1).sum::<i64>())
                > self.cells.len() as i64;
        if full_scan {
            for i in 0..self.venues.len() {
                consider(i);
            }
        } else {
            for la in lat_lo..=lat_hi {
                for &(lo_a, lo_b) in &lon_ranges {
                    for lo in lo_a..=lo_b {
                        if let Some(ids) = self.cells.get(&(la, lo)) {
                            for &i in ids {
                                consider(i);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn cell_of(deg: f64, cell_deg: f64) -> i64 {
    (deg / cell_deg).floor() as i64
}

/// Splits a longitude interval crossing the antimeridian into in-range parts.
fn wrap_lon_range(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    if lo < -180.0 {
        vec![(-180.0, hi), (lo + 360.0, 180.0)]
    } else if hi > 180.0 {
        vec![(lo, 180.0), (-180.0, hi - 360.0)]
    } else {
        vec![(lo, hi)]
    }
}

fn better(d: f64, id: &str, best: Option<(&Venue, f64)>) -> bool {
    match best {
        None => true,
        Some((b, bd)) => d < bd || (d == bd && id < b.venue_id.as_str()),
    }
}

/// Assigns every venue-less check-in to the nearest venue within
/// `cfg.radius_m` (inclusive), copying that venue's categories. Check-ins that
/// already carry a venue, or have none in range, are left untouched.
pub fn extend_checkins(ds: &Dataset, cfg: &ExtensionConfig) -> Result<Dataset> {
    cfg.validate()?;
    if ds.venues.is_empty() {
        return Err(Error::invalid("venue registry is empty"));
    }
    let grid = VenueGrid::new(ds.venues.as_slice(), cfg.radius_m);
    let checkins = ds
        .checkins
        .par_iter()
        .map(|c| {
            if c.venue_id.is_some() {
                return c.clone();
            }
            match grid.nearest_within(c.lat, c.lon) {
                Some((v, _)) => {
                    let mut out = c.clone();
                    out.venue_id = Some(v.venue_id.clone());
                    out.categories = v.categories.clone();
                    out
                }
                None => c.clone(),
            }
        })
        .collect();
    Ok(Dataset {
        checkins,
        venues: ds.venues.clone(),
        users: ds.users.clone(),
        provenance: ds.provenance.clone(),
    })
}

/// Standard preparation order: tourists, then low activity, then extension.
/// With `extend_first` the extension runs before both filters, so
/// extension-derived check-ins never change who survives (extension does not
/// add events) but the output carries the assigned venues either way.
pub fn preprocess(ds: &Dataset, cfg: &ExtensionConfig, extend_first: bool) -> Result<Dataset> {
    cfg.validate()?;
    let run_filters = |d: &Dataset| {
        let d = filter_tourists(d, cfg.min_span_days);
        filter_low_activity(&d, cfg.min_checkins)
    };
    let extend = |d: &Dataset| {
        if d.venues.is_empty() {
            log::warn!("no venues registered; skipping check-in extension");
            Ok(d.clone())
        } else {
            extend_checkins(d, cfg)
        }
    };
    if extend_first {
        Ok(run_filters(&extend(ds)?))
    } else {
        extend(&run_filters(ds))
    }
}
