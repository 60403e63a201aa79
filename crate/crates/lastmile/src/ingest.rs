//! Building instances from raw trip records: region filtering around a
//! station, destination clustering into last-mile stops, batch-demand
//! binning per train arrival, and route enumeration over the stops.
//!
//! Coordinates are projected with an equirectangular approximation centered
//! on each station, which is accurate to well under a foot at the one-mile
//! scale these regions cover.

use crate::domain::{
    validate_instance, CostParams, DemandScenario, DomainError, Instance, RegionSpec, RouteSpec,
};
use crate::scenario::derive_seed;
use crate::synth::{route_from_subset, subset_count, subsets_up_to};
use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const EARTH_RADIUS_MILES: f64 = 3958.8;

/// Orders a subset can be searched exhaustively for; larger requests are
/// almost certainly configuration mistakes.
pub const MAX_ROUTE_STOPS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("trip file is missing columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("need at least {needed} distinct destinations to place stops, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("window spans {window_minutes} minutes but {trains} trains {headway} minutes apart need {expected}")]
    WindowMismatch {
        window_minutes: f64,
        trains: usize,
        headway: f64,
        expected: f64,
    },
    #[error("routes may visit at most {MAX_ROUTE_STOPS} stops, got {got}")]
    TooManyStopsPerRoute { got: usize },
    #[error("invalid ingest config: {0}")]
    BadConfig(String),
}

/// One dropped-off trip from the raw record stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub dropoff_time: NaiveDateTime,
    pub dropoff_lat: f64,
    pub dropoff_lon: f64,
    pub passenger_count: u32,
}

impl TripRecord {
    fn plausible(&self) -> bool {
        (-90.0..=90.0).contains(&self.dropoff_lat)
            && (-180.0..=180.0).contains(&self.dropoff_lon)
            && self.passenger_count >= 1
    }
}

/// A transit station with a square catchment region around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub lat: f64,
    pub lon: f64,
    /// Half the side of the square region, in miles (0.5 gives a 1-mile by
    /// 1-mile square).
    pub half_width_miles: f64,
}

impl StationSpec {
    pub fn check(&self) -> Result<(), IngestError> {
        if !(self.half_width_miles > 0.0) {
            return Err(IngestError::BadConfig(format!(
                "station half-width {} must be positive",
                self.half_width_miles
            )));
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(IngestError::BadConfig(format!(
                "station coordinates ({}, {}) out of range",
                self.lat, self.lon
            )));
        }
        Ok(())
    }

    /// Projects a coordinate to miles east/north of the station.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = EARTH_RADIUS_MILES
            * (lon - self.lon).to_radians()
            * self.lat.to_radians().cos();
        let y = EARTH_RADIUS_MILES * (lat - self.lat).to_radians();
        (x, y)
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let (x, y) = self.project(lat, lon);
        x.abs() <= self.half_width_miles && y.abs() <= self.half_width_miles
    }
}

/// Column names and timestamp format of the raw trip CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripSchema {
    pub dropoff_time: String,
    pub dropoff_lat: String,
    pub dropoff_lon: String,
    pub passenger_count: String,
    pub time_format: String,
}

impl Default for TripSchema {
    fn default() -> Self {
        TripSchema {
            dropoff_time: "dropoff_datetime".into(),
            dropoff_lat: "dropoff_latitude".into(),
            dropoff_lon: "dropoff_longitude".into(),
            passenger_count: "passenger_count".into(),
            time_format: "%Y-%m-%d %H:%M:%S".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrips {
    pub trips: Vec<TripRecord>,
    /// Rows that failed to parse (bad timestamp, non-numeric coordinate,
    /// implausible value, short row). Counted, never silently dropped.
    pub skipped_rows: usize,
}

/// Reads trip records from CSV, skipping and tallying malformed rows.
pub fn load_trips(path: &Path, schema: &TripSchema) -> Result<LoadedTrips, IngestError> {
    if std::fs::metadata(path)?.len() == 0 {
        return Ok(LoadedTrips {
            trips: Vec::new(),
            skipped_rows: 0,
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(io_of_csv)?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::BadConfig(format!("unreadable header: {e}")))?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let wanted = [
        &schema.dropoff_time,
        &schema.dropoff_lat,
        &schema.dropoff_lon,
        &schema.passenger_count,
    ];
    let missing: Vec<String> = wanted
        .iter()
        .filter(|name| position(name).is_none())
        .map(|name| (*name).clone())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns(missing));
    }
    let cols: Vec<usize> = wanted.iter().map(|name| position(name).unwrap()).collect();
    let mut trips = Vec::new();
    let mut skipped_rows = 0;
    for row in reader.records() {
        let parsed = row.ok().and_then(|record| {
            let field = |c: usize| record.get(cols[c]);
            Some(TripRecord {
                dropoff_time: NaiveDateTime::parse_from_str(field(0)?, &schema.time_format)
                    .ok()?,
                dropoff_lat: field(1)?.trim().parse().ok()?,
                dropoff_lon: field(2)?.trim().parse().ok()?,
                passenger_count: field(3)?.trim().parse().ok()?,
            })
        });
        match parsed {
            Some(trip) if trip.plausible() => trips.push(trip),
            _ => skipped_rows += 1,
        }
    }
    Ok(LoadedTrips {
        trips,
        skipped_rows,
    })
}

/// Places `num_stops` stop centers over the in-region trip destinations by
/// k-means (k-means++ seeding, Lloyd iterations capped at 100, convergence
/// when no center moves more than 1e-6 miles). Returns centers in miles
/// relative to the station, sorted by coordinates for stable stop labels.
pub fn cluster_stops(
    trips: &[TripRecord],
    station: &StationSpec,
    num_stops: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, IngestError> {
    station.check()?;
    if num_stops == 0 {
        return Err(IngestError::BadConfig("need at least one stop".into()));
    }
    let points: Vec<(f64, f64)> = trips
        .iter()
        .map(|t| station.project(t.dropoff_lat, t.dropoff_lon))
        .collect();
    let mut distinct: Vec<(u64, u64)> = points
        .iter()
        .map(|p| (p.0.to_bits(), p.1.to_bits()))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < num_stops {
        return Err(IngestError::NotEnoughPoints {
            needed: num_stops,
            got: distinct.len(),
        });
    }
    let dist2 = |a: (f64, f64), b: (f64, f64)| {
        let (dx, dy) = (a.0 - b.0, a.1 - b.1);
        dx * dx + dy * dy
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut best_d2: Vec<f64> = points.iter().map(|&p| dist2(p, centers[0])).collect();
    while centers.len() < num_stops {
        // k-means++: next center drawn with probability proportional to the
        // squared distance from the nearest chosen center. At least
        // `num_stops` distinct points exist, so some weight is positive.
        let total: f64 = best_d2.iter().sum();
        let mut threshold = rng.random::<f64>() * total;
        let mut chosen = None;
        for (idx, &w) in best_d2.iter().enumerate() {
            if w > 0.0 {
                chosen = Some(idx);
                threshold -= w;
                if threshold <= 0.0 {
                    break;
                }
            }
        }
        let next = points[chosen.expect("positive weight exists")];
        for (slot, &p) in best_d2.iter_mut().zip(&points) {
            *slot = slot.min(dist2(p, next));
        }
        centers.push(next);
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..100 {
        for (slot, &p) in assignment.iter_mut().zip(&points) {
            *slot = (0..centers.len())
                .min_by(|&a, &b| dist2(p, centers[a]).total_cmp(&dist2(p, centers[b])))
                .unwrap();
        }
        let mut sums = vec![(0.0, 0.0, 0usize); centers.len()];
        for (&c, &p) in assignment.iter().zip(&points) {
            sums[c].0 += p.0;
            sums[c].1 += p.1;
            sums[c].2 += 1;
        }
        let mut movement: f64 = 0.0;
        for c in 0..centers.len() {
            let (sx, sy, n) = sums[c];
            let updated = if n > 0 {
                (sx / n as f64, sy / n as f64)
            } else {
                // Empty cluster: restart it at the point farthest from the
                // center it is currently assigned to.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let d = |idx: usize| dist2(points[idx], centers[assignment[idx]]);
                        d(a).total_cmp(&d(b))
                    })
                    .expect("points is nonempty");
                points[far]
            };
            movement = movement.max(dist2(centers[c], updated).sqrt());
            centers[c] = updated;
        }
        if movement < 1e-6 {
            break;
        }
    }
    centers.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(centers)
}

/// Maps each trip to the index of its nearest stop center.
pub fn assign_to_stops(
    trips: &[TripRecord],
    station: &StationSpec,
    stops: &[(f64, f64)],
) -> Vec<usize> {
    trips
        .iter()
        .map(|t| {
            let p = station.project(t.dropoff_lat, t.dropoff_lon);
            (0..stops.len())
                .min_by(|&a, &b| {
                    let d = |c: (f64, f64)| {
                        let (dx, dy) = (p.0 - c.0, p.1 - c.1);
                        dx * dx + dy * dy
                    };
                    d(stops[a]).total_cmp(&d(stops[b]))
                })
                .expect("at least one stop")
        })
        .collect()
}

/// Batch demand for one region: per-date `[train][stop]` passenger counts
/// plus per-stop sample statistics across every (date, train) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedRegion {
    /// Aligned with the `dates` argument of [`bin_batch_demand`].
    pub demand_by_date: Vec<Vec<Vec<f64>>>,
    /// Per-stop (mean, sample standard deviation) of the batch counts.
    pub stats: Vec<(f64, f64)>,
}

/// Distinct dropoff dates in a trip set, ascending.
pub fn observed_dates(trips: &[TripRecord]) -> Vec<NaiveDate> {
    let mut dates: Vec<NaiveDate> = trips.iter().map(|t| t.dropoff_time.date()).collect();
    dates.sort_unstable();
    dates.dedup();
    dates
}

/// Buckets in-region trips into per-train batch counts: a trip dropped off
/// in `[start + i*h, start + (i+1)*h)` on date `d` adds its passengers to
/// train `i` of date `d` at its nearest stop. Trips outside the window are
/// ignored (they are not demand for any train).
pub fn bin_batch_demand(
    trips: &[TripRecord],
    station: &StationSpec,
    stops: &[(f64, f64)],
    headway_minutes: f64,
    window: (NaiveTime, NaiveTime),
    num_trains: usize,
    dates: &[NaiveDate],
) -> Result<BinnedRegion, IngestError> {
    let (start, end) = window;
    let window_minutes = (end - start).num_seconds() as f64 / 60.0;
    let expected = num_trains as f64 * headway_minutes;
    if num_trains == 0 || (window_minutes - expected).abs() > 1e-9 {
        return Err(IngestError::WindowMismatch {
            window_minutes,
            trains: num_trains,
            headway: headway_minutes,
            expected,
        });
    }
    let date_index: BTreeMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(idx, &d)| (d, idx)).collect();
    let nearest = assign_to_stops(trips, station, stops);
    let mut demand_by_date =
        vec![vec![vec![0.0; stops.len()]; num_trains]; dates.len()];
    for (trip, &stop) in trips.iter().zip(&nearest) {
        let Some(&d) = date_index.get(&trip.dropoff_time.date()) else {
            continue;
        };
        let tod = trip.dropoff_time.time();
        if tod < start || tod >= end {
            continue;
        }
        let minutes = (tod - start).num_seconds() as f64 / 60.0;
        let train = ((minutes / headway_minutes).floor() as usize).min(num_trains - 1);
        demand_by_date[d][train][stop] += f64::from(trip.passenger_count);
    }
    let mut stats = Vec::with_capacity(stops.len());
    for j in 0..stops.len() {
        let samples: Vec<f64> = demand_by_date
            .iter()
            .flat_map(|day| day.iter().map(move |row| row[j]))
            .collect();
        let n = samples.len();
        let mean = if n == 0 {
            0.0
        } else {
            samples.iter().sum::<f64>() / n as f64
        };
        let std = if n >= 2 {
            (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        stats.push((mean, std));
    }
    Ok(BinnedRegion {
        demand_by_date,
        stats,
    })
}

/// Enumerates one route per nonempty stop subset of size at most
/// `max_stops_per_route`, each visiting its subset in the minimum-duration
/// order. Stop coordinates are miles relative to the station.
pub fn enumerate_routes(
    stops: &[(f64, f64)],
    region_id: usize,
    max_stops_per_route: usize,
    speed_mph: f64,
    headway_minutes: f64,
) -> Result<Vec<RouteSpec>, IngestError> {
    if max_stops_per_route == 0 {
        return Err(IngestError::BadConfig(
            "routes must visit at least one stop".into(),
        ));
    }
    if max_stops_per_route > MAX_ROUTE_STOPS {
        return Err(IngestError::TooManyStopsPerRoute {
            got: max_stops_per_route,
        });
    }
    if !(speed_mph > 0.0) || !(headway_minutes > 0.0) {
        return Err(IngestError::BadConfig(format!(
            "speed {speed_mph} mph and headway {headway_minutes} min must be positive"
        )));
    }
    Ok(subsets_up_to(stops.len(), max_stops_per_route)
        .iter()
        .enumerate()
        .map(|(k, subset)| {
            route_from_subset(
                k,
                region_id,
                stops.len(),
                stops,
                subset,
                speed_mph,
                headway_minutes,
            )
        })
        .collect())
}

/// Everything needed to turn a trip file into an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub stations: Vec<StationConfig>,
    pub schema: TripSchema,
    pub headway_minutes: f64,
    pub num_trains: usize,
    /// Start of the daily service window, "HH:MM".
    pub window_start: String,
    pub max_stops_per_route: usize,
    pub speed_mph: f64,
    pub vehicle_capacity: u32,
    pub fleet_bound: u32,
    pub fixed_cost_per_vehicle: f64,
    pub wait_weight: f64,
    pub ride_weight: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub lat: f64,
    pub lon: f64,
    pub half_width_miles: f64,
    pub num_stops: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            stations: Vec::new(),
            schema: TripSchema::default(),
            headway_minutes: 10.0,
            num_trains: 12,
            window_start: "07:00".into(),
            max_stops_per_route: 3,
            speed_mph: 12.0,
            vehicle_capacity: 5,
            fleet_bound: 60,
            fixed_cost_per_vehicle: 4000.0,
            wait_weight: 2.0,
            ride_weight: 1.0,
            seed: 0,
        }
    }
}

pub fn load_ingest_config(path: &Path) -> Result<IngestConfig, IngestError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| IngestError::BadConfig(e.to_string()))
}

/// The assembled products of ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub instance: Instance,
    /// One empirical scenario per observed service date, ascending.
    pub scenarios: Vec<DemandScenario>,
    pub dates: Vec<NaiveDate>,
    /// Projected stop centers per region (miles relative to each station).
    pub stop_coordinates: Vec<Vec<(f64, f64)>>,
    pub stats: Vec<StopStats>,
    /// In-region, in-window trips per region.
    pub region_trip_counts: Vec<usize>,
}

/// One row of the per-stop demand statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopStats {
    pub region: usize,
    pub stop: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn write_stop_stats(path: &Path, stats: &[StopStats]) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(io_of_csv)?;
    for row in stats {
        writer.serialize(row).map_err(io_of_csv)?;
    }
    writer.flush()?;
    Ok(())
}

fn io_of_csv(e: csv::Error) -> IngestError {
    IngestError::Io(std::io::Error::other(e))
}

/// Runs the whole pipeline over already-loaded trips: filter each station's
/// square region and daily window, cluster destinations into stops, bin
/// batch demand per observed date, enumerate routes, and assemble a
/// validated instance.
pub fn ingest_instance(
    trips: &[TripRecord],
    config: &IngestConfig,
) -> Result<IngestOutput, IngestError> {
    if config.stations.is_empty() {
        return Err(IngestError::BadConfig("no stations configured".into()));
    }
    let start = NaiveTime::parse_from_str(&config.window_start, "%H:%M")
        .map_err(|e| IngestError::BadConfig(format!("window_start: {e}")))?;
    let span_minutes = config.num_trains as f64 * config.headway_minutes;
    let span = chrono::Duration::seconds((span_minutes * 60.0).round() as i64);
    let end = start + span;
    if end <= start || f64::from(start.hour()) * 60.0 + f64::from(start.minute()) + span_minutes
        > 24.0 * 60.0
    {
        return Err(IngestError::BadConfig(format!(
            "service window of {span_minutes} minutes starting {start} crosses midnight"
        )));
    }

    let mut per_region: Vec<Vec<TripRecord>> = Vec::with_capacity(config.stations.len());
    for station_config in &config.stations {
        let station = StationSpec {
            lat: station_config.lat,
            lon: station_config.lon,
            half_width_miles: station_config.half_width_miles,
        };
        station.check()?;
        per_region.push(
            trips
                .iter()
                .filter(|t| {
                    station.contains(t.dropoff_lat, t.dropoff_lon) && {
                        let tod = t.dropoff_time.time();
                        tod >= start && tod < end
                    }
                })
                .cloned()
                .collect(),
        );
    }
    let dates = observed_dates(&per_region.iter().flatten().cloned().collect::<Vec<_>>());

    let mut regions = Vec::with_capacity(config.stations.len());
    let mut stop_coordinates = Vec::with_capacity(config.stations.len());
    let mut stats = Vec::new();
    let mut per_region_binned = Vec::with_capacity(config.stations.len());
    for (s, station_config) in config.stations.iter().enumerate() {
        let station = StationSpec {
            lat: station_config.lat,
            lon: station_config.lon,
            half_width_miles: station_config.half_width_miles,
        };
        let stops = cluster_stops(
            &per_region[s],
            &station,
            station_config.num_stops,
            derive_seed(config.seed, "cluster", s as u64),
        )?;
        let binned = bin_batch_demand(
            &per_region[s],
            &station,
            &stops,
            config.headway_minutes,
            (start, end),
            config.num_trains,
            &dates,
        )?;
        for (j, &(mean, std)) in binned.stats.iter().enumerate() {
            stats.push(StopStats {
                region: s,
                stop: j,
                mean,
                std,
            });
        }
        let routes = enumerate_routes(
            &stops,
            s,
            config.max_stops_per_route,
            config.speed_mph,
            config.headway_minutes,
        )?;
        regions.push(RegionSpec {
            region_id: s,
            num_trains: config.num_trains,
            num_stops: stops.len(),
            routes,
        });
        stop_coordinates.push(stops);
        per_region_binned.push(binned);
    }
    // Route ids are region-local coming out of enumeration; make them
    // globally sequential.
    let mut next_route_id = 0;
    for region in &mut regions {
        for route in &mut region.routes {
            route.route_id = next_route_id;
            next_route_id += 1;
        }
    }
    debug_assert_eq!(
        next_route_id,
        config
            .stations
            .iter()
            .map(|st| subset_count(st.num_stops, config.max_stops_per_route))
            .sum::<usize>()
    );

    let instance = Instance {
        regions,
        fleet_bound: config.fleet_bound,
        headway_minutes: config.headway_minutes,
        vehicle_capacity: config.vehicle_capacity,
        costs: CostParams::uniform(
            config.fixed_cost_per_vehicle,
            config.wait_weight,
            config.ride_weight,
        ),
    };
    let report = validate_instance(&instance);
    if !report.is_valid() {
        return Err(IngestError::BadConfig(format!(
            "ingested instance is invalid: {}",
            report.violations.join("; ")
        )));
    }

    let scenarios = (0..dates.len())
        .map(|d| DemandScenario {
            demand: per_region_binned
                .iter()
                .map(|binned| binned.demand_by_date[d].clone())
                .collect(),
        })
        .collect();
    let region_trip_counts = per_region.iter().map(Vec::len).collect();
    Ok(IngestOutput {
        instance,
        scenarios,
        dates,
        stop_coordinates,
        stats,
        region_trip_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn station() -> StationSpec {
        StationSpec {
            lat: 40.75,
            lon: -73.99,
            half_width_miles: 0.5,
        }
    }

    /// Inverse of [`StationSpec::project`], for building trips at chosen
    /// planar offsets.
    fn latlon_at(st: &StationSpec, x_miles: f64, y_miles: f64) -> (f64, f64) {
        let lat = st.lat + (y_miles / EARTH_RADIUS_MILES).to_degrees();
        let lon = st.lon
            + (x_miles / (EARTH_RADIUS_MILES * st.lat.to_radians().cos())).to_degrees();
        (lat, lon)
    }

    fn trip_at(time: &str, lat: f64, lon: f64, passengers: u32) -> TripRecord {
        TripRecord {
            dropoff_time: NaiveDateTime::parse_from_str(time, "%Y-%m-%d %H:%M:%S").unwrap(),
            dropoff_lat: lat,
            dropoff_lon: lon,
            passenger_count: passengers,
        }
    }

    fn shipped_trace() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/trips_small.csv")
    }

    #[test]
    fn empty_file_loads_to_nothing_with_zero_skips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        let loaded = load_trips(&path, &TripSchema::default()).unwrap();
        assert!(loaded.trips.is_empty());
        assert_eq!(loaded.skipped_rows, 0);
    }

    #[test]
    fn malformed_rows_are_skipped_and_tallied() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.csv");
        std::fs::write(
            &path,
            "dropoff_datetime,dropoff_latitude,dropoff_longitude,passenger_count\n\
             2026-03-02 07:03:00,40.7520,-73.9930,2\n\
             2026-03-02 07:04:00,not-a-number,-73.9930,1\n\
             yesterday,40.7520,-73.9930,1\n\
             2026-03-02 07:05:00,95.0,-73.9930,1\n\
             2026-03-02 07:06:00,40.7520,-73.9930,0\n\
             2026-03-02 07:07:00,40.7520\n\
             2026-03-02 07:08:00,40.7510,-73.9920,3\n",
        )
        .unwrap();
        let loaded = load_trips(&path, &TripSchema::default()).unwrap();
        assert_eq!(loaded.skipped_rows, 5);
        assert_eq!(
            loaded.trips,
            vec![
                trip_at("2026-03-02 07:03:00", 40.7520, -73.9930, 2),
                trip_at("2026-03-02 07:08:00", 40.7510, -73.9920, 3),
            ]
        );
    }

    #[test]
    fn missing_columns_are_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.csv");
        std::fs::write(&path, "dropoff_datetime,lat,lon,riders\n").unwrap();
        let Err(IngestError::MissingColumns(cols)) = load_trips(&path, &TripSchema::default())
        else {
            panic!("expected missing-column error");
        };
        assert_eq!(
            cols,
            vec!["dropoff_latitude", "dropoff_longitude", "passenger_count"]
        );
    }

    #[test]
    fn region_filter_matches_a_direct_recount_on_a_synthetic_thousand() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.csv");
        let base = NaiveDateTime::parse_from_str("2026-03-02 00:00:00", "%Y-%m-%d %H:%M:%S")
            .unwrap();
        let mut body =
            String::from("dropoff_datetime,dropoff_latitude,dropoff_longitude,passenger_count\n");
        for _ in 0..1000 {
            let time = base + Duration::minutes(rng.random_range(0..1440));
            body.push_str(&format!(
                "{},{},{},{}\n",
                time.format("%Y-%m-%d %H:%M:%S"),
                40.75 + rng.random_range(-0.02..0.02),
                -73.99 + rng.random_range(-0.03..0.03),
                rng.random_range(1..=4u32)
            ));
        }
        std::fs::write(&path, body).unwrap();
        let loaded = load_trips(&path, &TripSchema::default()).unwrap();
        assert_eq!(loaded.trips.len(), 1000);
        assert_eq!(loaded.skipped_rows, 0);
        let st = station();
        let in_region = loaded
            .trips
            .iter()
            .filter(|t| st.contains(t.dropoff_lat, t.dropoff_lon))
            .count();
        let recount = loaded
            .trips
            .iter()
            .filter(|t| {
                let (x, y) = st.project(t.dropoff_lat, t.dropoff_lon);
                x.abs() <= 0.5 && y.abs() <= 0.5
            })
            .count();
        assert_eq!(in_region, recount);
        assert!(in_region > 100 && in_region < 1000, "{in_region}");
    }

    #[test]
    fn clustering_j_points_into_j_stops_returns_the_points() {
        let st = station();
        let offsets = [(0.1, 0.2), (-0.3, 0.1), (0.25, -0.2), (-0.1, -0.4)];
        let trips: Vec<TripRecord> = offsets
            .iter()
            .map(|&(x, y)| {
                let (lat, lon) = latlon_at(&st, x, y);
                trip_at("2026-03-02 07:03:00", lat, lon, 1)
            })
            .collect();
        let centers = cluster_stops(&trips, &st, 4, 9).unwrap();
        let mut expected: Vec<(f64, f64)> = trips
            .iter()
            .map(|t| st.project(t.dropoff_lat, t.dropoff_lon))
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (got, want) in centers.iter().zip(&expected) {
            assert!((got.0 - want.0).abs() < 1e-9 && (got.1 - want.1).abs() < 1e-9);
        }
    }

    #[test]
    fn two_separated_blobs_get_one_center_each() {
        use rand::{Rng, SeedableRng};
        let st = station();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut trips = Vec::new();
        for blob in [(-0.25, -0.25), (0.25, 0.25)] {
            for _ in 0..40 {
                let (lat, lon) = latlon_at(
                    &st,
                    blob.0 + rng.random_range(-0.05..0.05),
                    blob.1 + rng.random_range(-0.05..0.05),
                );
                trips.push(trip_at("2026-03-02 07:03:00", lat, lon, 1));
            }
        }
        let centers = cluster_stops(&trips, &st, 2, 3).unwrap();
        assert_eq!(centers.len(), 2);
        assert!((centers[0].0 + 0.25).abs() <= 0.05 && (centers[0].1 + 0.25).abs() <= 0.05);
        assert!((centers[1].0 - 0.25).abs() <= 0.05 && (centers[1].1 - 0.25).abs() <= 0.05);
        assert_eq!(centers, cluster_stops(&trips, &st, 2, 3).unwrap());
    }

    #[test]
    fn clustering_needs_enough_distinct_destinations() {
        let st = station();
        let (lat, lon) = latlon_at(&st, 0.1, 0.1);
        let trips = vec![trip_at("2026-03-02 07:03:00", lat, lon, 1); 10];
        assert!(matches!(
            cluster_stops(&trips, &st, 2, 0),
            Err(IngestError::NotEnoughPoints { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn binning_counts_passengers_per_train_and_stop() {
        let st = station();
        let stops = vec![(0.0, 0.0), (0.3, 0.3)];
        let window = (
            NaiveTime::parse_from_str("08:00", "%H:%M").unwrap(),
            NaiveTime::parse_from_str("08:30", "%H:%M").unwrap(),
        );
        let dates = vec![NaiveDate::from_ymd_opt(2026, 3, 2).unwrap()];
        let empty = bin_batch_demand(&[], &st, &stops, 10.0, window, 3, &dates).unwrap();
        assert_eq!(empty.demand_by_date, vec![vec![vec![0.0, 0.0]; 3]]);

        let (lat1, lon1) = latlon_at(&st, 0.01, -0.01);
        let (lat2, lon2) = latlon_at(&st, 0.29, 0.31);
        let trips = vec![
            trip_at("2026-03-02 08:21:00", lat1, lon1, 1),
            trip_at("2026-03-02 08:24:00", lat1, lon1, 1),
            trip_at("2026-03-02 08:29:59", lat1, lon1, 1),
            trip_at("2026-03-02 08:05:00", lat2, lon2, 4),
            trip_at("2026-03-02 08:30:00", lat1, lon1, 9),
            trip_at("2026-03-02 07:59:59", lat1, lon1, 9),
        ];
        let binned = bin_batch_demand(&trips, &st, &stops, 10.0, window, 3, &dates).unwrap();
        assert_eq!(
            binned.demand_by_date,
            vec![vec![vec![0.0, 4.0], vec![0.0, 0.0], vec![3.0, 0.0]]]
        );
        assert!(matches!(
            bin_batch_demand(&trips, &st, &stops, 10.0, window, 4, &dates),
            Err(IngestError::WindowMismatch { .. })
        ));
    }

    #[test]
    fn binned_demand_conserves_in_window_passengers() {
        use rand::{Rng, SeedableRng};
        let st = station();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let base =
            NaiveDateTime::parse_from_str("2026-03-02 00:00:00", "%Y-%m-%d %H:%M:%S").unwrap();
        let trips: Vec<TripRecord> = (0..300)
            .map(|_| {
                let (lat, lon) = latlon_at(
                    &st,
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                );
                TripRecord {
                    dropoff_time: base
                        + Duration::days(rng.random_range(0..3))
                        + Duration::minutes(rng.random_range(360..720)),
                    dropoff_lat: lat,
                    dropoff_lon: lon,
                    passenger_count: rng.random_range(1..=4),
                }
            })
            .filter(|t| st.contains(t.dropoff_lat, t.dropoff_lon))
            .collect();
        let window = (
            NaiveTime::parse_from_str("07:00", "%H:%M").unwrap(),
            NaiveTime::parse_from_str("09:00", "%H:%M").unwrap(),
        );
        let dates = observed_dates(&trips);
        let stops = cluster_stops(&trips, &st, 4, 1).unwrap();
        let binned = bin_batch_demand(&trips, &st, &stops, 10.0, window, 12, &dates).unwrap();
        let binned_total: f64 = binned.demand_by_date.iter().flatten().flatten().sum();
        let direct: u32 = trips
            .iter()
            .filter(|t| t.dropoff_time.time() >= window.0 && t.dropoff_time.time() < window.1)
            .map(|t| t.passenger_count)
            .sum();
        assert!(direct > 0);
        assert_eq!(binned_total, f64::from(direct));
    }

    #[test]
    fn enumerated_routes_price_distance_and_count_subsets() {
        let single = enumerate_routes(&[(0.3, 0.4)], 0, 1, 12.0, 10.0).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].stop_arrival_minutes[&0], 2.5);
        assert_eq!(single[0].total_duration_intervals, 1);

        let stops = [(0.3, 0.4), (-0.2, 0.1), (0.1, -0.3)];
        let six = enumerate_routes(&stops, 0, 2, 12.0, 10.0).unwrap();
        assert_eq!(six.len(), 6);
        assert_eq!(six.len(), subset_count(3, 2));

        assert!(matches!(
            enumerate_routes(&stops, 0, 0, 12.0, 10.0),
            Err(IngestError::BadConfig(_))
        ));
        assert!(matches!(
            enumerate_routes(&stops, 0, 9, 12.0, 10.0),
            Err(IngestError::TooManyStopsPerRoute { got: 9 })
        ));
    }

    #[test]
    fn every_route_replays_within_its_duration_budget() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let stops: Vec<(f64, f64)> = (0..5)
                .map(|_| (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect();
            let routes = enumerate_routes(&stops, 0, 3, 12.0, 10.0).unwrap();
            assert_eq!(routes.len(), subset_count(5, 3));
            for route in &routes {
                let budget = route.total_duration_intervals as f64 * 10.0;
                let mut arrivals: Vec<f64> =
                    route.stop_arrival_minutes.values().copied().collect();
                arrivals.sort_by(f64::total_cmp);
                for a in &arrivals {
                    assert!(*a <= budget + 1e-9, "arrival {a} exceeds budget {budget}");
                }
            }
        }
    }

    #[test]
    fn the_shipped_trace_builds_a_valid_two_day_instance() {
        let loaded = load_trips(&shipped_trace(), &TripSchema::default()).unwrap();
        assert_eq!(loaded.trips.len(), 10);
        assert_eq!(loaded.skipped_rows, 3);
        let config = IngestConfig {
            stations: vec![StationConfig {
                lat: 40.75,
                lon: -73.99,
                half_width_miles: 0.5,
                num_stops: 3,
            }],
            seed: 4,
            ..IngestConfig::default()
        };
        let out = ingest_instance(&loaded.trips, &config).unwrap();
        assert_eq!(out.region_trip_counts, vec![7]);
        assert_eq!(
            out.dates,
            vec![
                NaiveDate::from_ymd_opt(2026, 3, 2).unwrap(),
                NaiveDate::from_ymd_opt(2026, 3, 3).unwrap(),
            ]
        );
        assert_eq!(out.scenarios.len(), 2);
        assert_eq!(out.instance.regions[0].routes.len(), subset_count(3, 3));
        let total: f64 = out
            .scenarios
            .iter()
            .flat_map(|sc| sc.demand.iter().flatten().flatten())
            .sum();
        assert_eq!(total, 12.0);
        assert_eq!(out.stats.len(), 3);
        let stat_total: f64 = out.stats.iter().map(|row| row.mean * 24.0).sum();
        assert!((stat_total - 12.0).abs() < 1e-9);
        assert!(validate_instance(&out.instance).is_valid());
        let again = ingest_instance(&loaded.trips, &config).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn stop_stats_write_as_a_small_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        write_stop_stats(
            &path,
            &[
                StopStats {
                    region: 0,
                    stop: 0,
                    mean: 1.25,
                    std: 0.5,
                },
                StopStats {
                    region: 0,
                    stop: 1,
                    mean: 2.0,
                    std: 0.25,
                },
            ],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("region,stop,mean,std"));
        assert_eq!(lines.next(), Some("0,0,1.25,0.5"));
        assert_eq!(lines.next(), Some("0,1,2.0,0.25"));
    }

    #[test]
    fn ingest_configs_load_from_toml_and_reject_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ingest.toml");
        std::fs::write(
            &path,
            "num_trains = 6\nwindow_start = \"08:00\"\nseed = 3\n\
             [[stations]]\nlat = 40.75\nlon = -73.99\nhalf_width_miles = 0.5\nnum_stops = 4\n",
        )
        .unwrap();
        let config = load_ingest_config(&path).unwrap();
        assert_eq!(config.num_trains, 6);
        assert_eq!(config.stations.len(), 1);
        assert_eq!(config.max_stops_per_route, 3);
        std::fs::write(&path, "num_trains = 6\nbogus = true\n").unwrap();
        assert!(matches!(
            load_ingest_config(&path),
            Err(IngestError::BadConfig(_))
        ));
    }

    #[test]
    fn midnight_spanning_windows_are_rejected() {
        let loaded = load_trips(&shipped_trace(), &TripSchema::default()).unwrap();
        let config = IngestConfig {
            stations: vec![StationConfig {
                lat: 40.75,
                lon: -73.99,
                half_width_miles: 0.5,
                num_stops: 3,
            }],
            window_start: "23:30".into(),
            ..IngestConfig::default()
        };
        assert!(matches!(
            ingest_instance(&loaded.trips, &config),
            Err(IngestError::BadConfig(_))
        ));
    }
}
