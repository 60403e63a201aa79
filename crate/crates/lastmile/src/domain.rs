//! Problem data model: instances, demand scenarios, plans, validation, and the
//! vehicle-availability dynamics shared by every optimization model.
//!
//! Index conventions, used across the whole crate and in every file format:
//! regions `s`, trains `i`, stops `j`, routes `k`, and scenarios `r` are all
//! 0-based. `k` is a route's position within its region's route list, while
//! [`RouteSpec::route_id`] is globally sequential across regions. Demand is
//! laid out as `demand[s][i][j]`, trip schedules as `trips[s][i][k]`.
//!
//! All types are immutable plain data and safe to share across threads; the
//! operations here are pure functions.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Version stamped into every JSON document and CSV comment header this crate
/// writes; readers reject other versions rather than guessing.
pub const SCHEMA_VERSION: u32 = 1;

/// Errors from domain operations and data-file handling.
#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("total fleet {total} exceeds the fleet bound {bound}")]
    FleetBoundExceeded { total: u64, bound: u32 },
    #[error(
        "trip schedule infeasible: region {region}, train {train} is short {deficit} vehicle(s)"
    )]
    InfeasibleSchedule {
        region: usize,
        train: usize,
        deficit: i64,
    },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("unsupported schema_version {found}, this build reads version {expected}")]
    SchemaVersion { found: String, expected: u32 },
    #[error("malformed {kind} file: {detail}")]
    MalformedFile { kind: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DomainError {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, got: usize) -> Self {
        DomainError::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }
}

/// Cost parameters: vehicle fixed cost per region, and the per-passenger
/// per-minute weights on waiting and riding time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    /// Fixed cost of allocating one vehicle, per region. A single entry is
    /// broadcast to every region.
    pub fixed_cost_per_vehicle: Vec<f64>,
    /// Cost per passenger-minute of waiting at the station.
    pub wait_weight: f64,
    /// Cost per passenger-minute of riding in a vehicle.
    pub ride_weight: f64,
}

impl CostParams {
    /// Uniform fixed cost across regions.
    pub fn uniform(fixed_cost: f64, wait_weight: f64, ride_weight: f64) -> Self {
        CostParams {
            fixed_cost_per_vehicle: vec![fixed_cost],
            wait_weight,
            ride_weight,
        }
    }

    /// Fixed cost for region `s`, broadcasting a single entry.
    pub fn fixed_cost(&self, s: usize) -> f64 {
        if self.fixed_cost_per_vehicle.len() == 1 {
            self.fixed_cost_per_vehicle[0]
        } else {
            self.fixed_cost_per_vehicle[s]
        }
    }
}

/// One route: the set of stops it serves, its total round-trip duration in
/// headway intervals, and the ride time from the station to each served stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    /// Globally sequential id across all regions.
    pub route_id: usize,
    pub region_id: usize,
    /// Stop-indexed 0/1 incidence vector; `serves[j] == 1` iff this route
    /// visits stop `j`.
    pub serves: Vec<u8>,
    /// Round-trip duration in whole headway intervals (at least 1); a vehicle
    /// dispatched with train `i` is available again at train `i + t_k`.
    pub total_duration_intervals: usize,
    /// Minutes from the station to each served stop along the route, keyed by
    /// stop index. Defined exactly for the served stops.
    pub stop_arrival_minutes: BTreeMap<usize, f64>,
}

impl RouteSpec {
    /// Served stop indices in ascending order. This is the canonical layout of
    /// the per-route assignment axis in [`SecondStagePlan::assignments`].
    pub fn served_stops(&self) -> impl Iterator<Item = usize> + '_ {
        self.serves
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != 0)
            .map(|(j, _)| j)
    }

    pub fn num_served(&self) -> usize {
        self.serves.iter().filter(|&&f| f != 0).count()
    }

    /// Routes serving two or more stops admit the 0/1 trip-count tightening.
    pub fn is_multi_stop(&self) -> bool {
        self.num_served() >= 2
    }
}

/// One service region: its train count, stop count, and route list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub region_id: usize,
    /// Number of train arrivals in the planning horizon (I_s).
    pub num_trains: usize,
    /// Number of last-mile stops (J_s).
    pub num_stops: usize,
    pub routes: Vec<RouteSpec>,
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub regions: Vec<RegionSpec>,
    /// Maximum total number of vehicles across all regions (M).
    pub fleet_bound: u32,
    /// Minutes between consecutive train arrivals (h); the discrete time step.
    pub headway_minutes: f64,
    /// Passenger capacity of one vehicle trip (c).
    pub vehicle_capacity: u32,
    pub costs: CostParams,
}

impl Instance {
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Fixed cost of region `s`'s vehicles.
    pub fn fixed_cost(&self, s: usize) -> f64 {
        self.costs.fixed_cost(s)
    }

    /// First-stage cost of a fleet allocation.
    pub fn total_fixed_cost(&self, fleet: &[u32]) -> f64 {
        fleet
            .iter()
            .enumerate()
            .map(|(s, &m)| self.fixed_cost(s) * f64::from(m))
            .sum()
    }

    /// Total number of (train, stop) demand cells across regions.
    pub fn num_demand_cells(&self) -> usize {
        self.regions
            .iter()
            .map(|r| r.num_trains * r.num_stops)
            .sum()
    }
}

/// One realization of the batch demand: `demand[s][i][j]` passengers arrive on
/// train `i` in region `s` bound for stop `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandScenario {
    pub demand: Vec<Vec<Vec<f64>>>,
}

impl DemandScenario {
    pub fn zero(instance: &Instance) -> Self {
        DemandScenario {
            demand: instance
                .regions
                .iter()
                .map(|r| vec![vec![0.0; r.num_stops]; r.num_trains])
                .collect(),
        }
    }

    /// Checks that the demand grid matches the instance and is nonnegative.
    pub fn check_dims(&self, instance: &Instance) -> Result<(), DomainError> {
        if self.demand.len() != instance.num_regions() {
            return Err(DomainError::dims(
                "scenario regions",
                instance.num_regions(),
                self.demand.len(),
            ));
        }
        for (s, region) in instance.regions.iter().enumerate() {
            if self.demand[s].len() != region.num_trains {
                return Err(DomainError::dims(
                    format!("scenario region {s} trains"),
                    region.num_trains,
                    self.demand[s].len(),
                ));
            }
            for (i, row) in self.demand[s].iter().enumerate() {
                if row.len() != region.num_stops {
                    return Err(DomainError::dims(
                        format!("scenario region {s} train {i} stops"),
                        region.num_stops,
                        row.len(),
                    ));
                }
                if let Some(j) = row.iter().position(|n| !n.is_finite() || *n < 0.0) {
                    return Err(DomainError::MalformedFile {
                        kind: "scenario",
                        detail: format!(
                            "demand at region {s}, train {i}, stop {j} is {}",
                            row[j]
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// First-stage decisions: per-region fleet sizes, the trip schedule, and the
/// station vehicle availability the schedule induces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstStageSolution {
    /// Vehicles allocated to each region (m_s).
    pub fleet: Vec<u32>,
    /// `trips[s][i][k]` vehicles dispatched on route `k` with train `i` (w).
    pub trips: Vec<Vec<Vec<u32>>>,
    /// `availability[s][i]` idle vehicles right after train `i`'s dispatches (v).
    pub availability: Vec<Vec<u32>>,
}

impl FirstStageSolution {
    /// Builds a solution from fleet and trips, deriving availability and
    /// rejecting schedules that violate the fleet bound or run out of vehicles.
    pub fn new(
        instance: &Instance,
        fleet: Vec<u32>,
        trips: Vec<Vec<Vec<u32>>>,
    ) -> Result<Self, DomainError> {
        let total: u64 = fleet.iter().map(|&m| u64::from(m)).sum();
        if total > u64::from(instance.fleet_bound) {
            return Err(DomainError::FleetBoundExceeded {
                total,
                bound: instance.fleet_bound,
            });
        }
        match vehicle_availability(instance, &fleet, &trips)? {
            Availability::Feasible(availability) => Ok(FirstStageSolution {
                fleet,
                trips,
                availability,
            }),
            Availability::Infeasible {
                region,
                train,
                deficit,
            } => Err(DomainError::InfeasibleSchedule {
                region,
                train,
                deficit,
            }),
        }
    }

    /// The idle-fleet solution: all vehicles allocated per `fleet`, no trips.
    pub fn idle(instance: &Instance, fleet: Vec<u32>) -> Result<Self, DomainError> {
        let trips = instance
            .regions
            .iter()
            .map(|r| vec![vec![0; r.routes.len()]; r.num_trains])
            .collect();
        FirstStageSolution::new(instance, fleet, trips)
    }
}

/// Second-stage decisions for one scenario: passenger-to-trip assignments,
/// backlog, and their cost.
///
/// `assignments[s][i][k][p]` is the number of passengers boarding route `k`
/// at train `i` bound for the `p`-th served stop of that route (ascending stop
/// index, see [`RouteSpec::served_stops`]); `backlog[s][i][j]` is the number
/// still waiting after train `i`'s departures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondStagePlan {
    pub assignments: Vec<Vec<Vec<Vec<f64>>>>,
    pub backlog: Vec<Vec<Vec<f64>>>,
    pub objective_value: f64,
}

impl SecondStagePlan {
    pub fn zero(instance: &Instance) -> Self {
        SecondStagePlan {
            assignments: instance
                .regions
                .iter()
                .map(|r| {
                    vec![
                        r.routes
                            .iter()
                            .map(|route| vec![0.0; route.num_served()])
                            .collect();
                        r.num_trains
                    ]
                })
                .collect(),
            backlog: instance
                .regions
                .iter()
                .map(|r| vec![vec![0.0; r.num_stops]; r.num_trains])
                .collect(),
            objective_value: 0.0,
        }
    }

    pub fn check_dims(&self, instance: &Instance) -> Result<(), DomainError> {
        if self.assignments.len() != instance.num_regions() {
            return Err(DomainError::dims(
                "plan assignment regions",
                instance.num_regions(),
                self.assignments.len(),
            ));
        }
        if self.backlog.len() != instance.num_regions() {
            return Err(DomainError::dims(
                "plan backlog regions",
                instance.num_regions(),
                self.backlog.len(),
            ));
        }
        for (s, region) in instance.regions.iter().enumerate() {
            if self.assignments[s].len() != region.num_trains
                || self.backlog[s].len() != region.num_trains
            {
                return Err(DomainError::dims(
                    format!("plan region {s} trains"),
                    region.num_trains,
                    self.assignments[s].len().min(self.backlog[s].len()),
                ));
            }
            for i in 0..region.num_trains {
                if self.assignments[s][i].len() != region.routes.len() {
                    return Err(DomainError::dims(
                        format!("plan region {s} train {i} routes"),
                        region.routes.len(),
                        self.assignments[s][i].len(),
                    ));
                }
                for (k, route) in region.routes.iter().enumerate() {
                    if self.assignments[s][i][k].len() != route.num_served() {
                        return Err(DomainError::dims(
                            format!("plan region {s} train {i} route {k} served stops"),
                            route.num_served(),
                            self.assignments[s][i][k].len(),
                        ));
                    }
                }
                if self.backlog[s][i].len() != region.num_stops {
                    return Err(DomainError::dims(
                        format!("plan region {s} train {i} stops"),
                        region.num_stops,
                        self.backlog[s][i].len(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Result of replaying a trip schedule through the station-vehicle dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum Availability {
    /// `v[s][i]`: idle vehicles in region `s` right after train `i`'s
    /// dispatches.
    Feasible(Vec<Vec<u32>>),
    /// The first (in region-then-train scan order) point where the schedule
    /// dispatches more vehicles than are present.
    Infeasible {
        region: usize,
        train: usize,
        deficit: i64,
    },
}

fn check_first_stage_dims(
    instance: &Instance,
    fleet: &[u32],
    trips: &[Vec<Vec<u32>>],
) -> Result<(), DomainError> {
    if fleet.len() != instance.num_regions() {
        return Err(DomainError::dims(
            "fleet regions",
            instance.num_regions(),
            fleet.len(),
        ));
    }
    if trips.len() != instance.num_regions() {
        return Err(DomainError::dims(
            "trips regions",
            instance.num_regions(),
            trips.len(),
        ));
    }
    for (s, region) in instance.regions.iter().enumerate() {
        if trips[s].len() != region.num_trains {
            return Err(DomainError::dims(
                format!("trips region {s} trains"),
                region.num_trains,
                trips[s].len(),
            ));
        }
        for (i, row) in trips[s].iter().enumerate() {
            if row.len() != region.routes.len() {
                return Err(DomainError::dims(
                    format!("trips region {s} train {i} routes"),
                    region.routes.len(),
                    row.len(),
                ));
            }
        }
    }
    Ok(())
}

/// Replays a trip schedule through the vehicle-count recursion.
///
/// At each train, vehicles dispatched `t_k` intervals ago return before the
/// current dispatches leave:
/// `v[s][0] = m_s - sum_k w[s][0][k]` and
/// `v[s][i] = v[s][i-1] + sum_k w[s][i-t_k][k] - sum_k w[s][i][k]`,
/// with the return term absent while `i < t_k`. The first negative value (in
/// region-then-train order) is reported as an infeasibility witness.
pub fn vehicle_availability(
    instance: &Instance,
    fleet: &[u32],
    trips: &[Vec<Vec<u32>>],
) -> Result<Availability, DomainError> {
    check_first_stage_dims(instance, fleet, trips)?;
    let mut all = Vec::with_capacity(instance.num_regions());
    for (s, region) in instance.regions.iter().enumerate() {
        let mut per_train = Vec::with_capacity(region.num_trains);
        let mut prev = i64::from(fleet[s]);
        for i in 0..region.num_trains {
            let mut v = prev;
            for (k, route) in region.routes.iter().enumerate() {
                if i >= route.total_duration_intervals {
                    v += i64::from(trips[s][i - route.total_duration_intervals][k]);
                }
                v -= i64::from(trips[s][i][k]);
            }
            if v < 0 {
                return Ok(Availability::Infeasible {
                    region: s,
                    train: i,
                    deficit: -v,
                });
            }
            per_train.push(v as u32);
            prev = v;
        }
        all.push(per_train);
    }
    Ok(Availability::Feasible(all))
}

/// Second-stage cost of a plan, with the per-region time totals that reports
/// tabulate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    /// wait_weight * h * total backlog + ride_weight * assigned ride minutes.
    pub total: f64,
    /// Total passenger waiting minutes per region (h per interval backlogged).
    pub twt: Vec<f64>,
    /// Total passenger riding minutes per region.
    pub trt: Vec<f64>,
}

/// Prices a second-stage plan: each backlogged passenger waits one headway per
/// interval, each assigned passenger rides for the route's arrival time at
/// their stop.
pub fn second_stage_cost(
    instance: &Instance,
    plan: &SecondStagePlan,
) -> Result<CostBreakdown, DomainError> {
    plan.check_dims(instance)?;
    let h = instance.headway_minutes;
    let mut twt = Vec::with_capacity(instance.num_regions());
    let mut trt = Vec::with_capacity(instance.num_regions());
    for (s, region) in instance.regions.iter().enumerate() {
        let mut wait_minutes = 0.0;
        let mut ride_minutes = 0.0;
        for i in 0..region.num_trains {
            for &u in &plan.backlog[s][i] {
                wait_minutes += h * u;
            }
            for (k, route) in region.routes.iter().enumerate() {
                for (p, j) in route.served_stops().enumerate() {
                    ride_minutes += route.stop_arrival_minutes[&j] * plan.assignments[s][i][k][p];
                }
            }
        }
        twt.push(wait_minutes);
        trt.push(ride_minutes);
    }
    let total = instance.costs.wait_weight * twt.iter().sum::<f64>()
        + instance.costs.ride_weight * trt.iter().sum::<f64>();
    Ok(CostBreakdown { total, twt, trt })
}

/// Outcome of [`validate_instance`]: an instance is usable iff `violations`
/// is empty; warnings flag suspicious but legal data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of an instance and reports all
/// violations with their location.
pub fn validate_instance(instance: &Instance) -> ValidationReport {
    let mut report = ValidationReport::default();
    let bad = &mut report.violations;

    if instance.regions.is_empty() {
        bad.push("instance has no regions".into());
    }
    if instance.fleet_bound < 1 {
        bad.push("fleet_bound must be at least 1".into());
    }
    if !(instance.headway_minutes > 0.0) || !instance.headway_minutes.is_finite() {
        bad.push(format!(
            "headway_minutes must be positive and finite, got {}",
            instance.headway_minutes
        ));
    }
    if instance.vehicle_capacity < 1 {
        bad.push("vehicle_capacity must be at least 1".into());
    }

    let costs = &instance.costs;
    let n_fixed = costs.fixed_cost_per_vehicle.len();
    if n_fixed != 1 && n_fixed != instance.num_regions() {
        bad.push(format!(
            "fixed_cost_per_vehicle must have 1 or {} entries, got {n_fixed}",
            instance.num_regions()
        ));
    }
    for (s, &f) in costs.fixed_cost_per_vehicle.iter().enumerate() {
        if !f.is_finite() || f < 0.0 {
            bad.push(format!("fixed_cost_per_vehicle[{s}] must be >= 0, got {f}"));
        }
    }
    for (name, value) in [
        ("wait_weight", costs.wait_weight),
        ("ride_weight", costs.ride_weight),
    ] {
        if !value.is_finite() || value < 0.0 {
            bad.push(format!("{name} must be >= 0, got {value}"));
        }
    }
    if costs.wait_weight < costs.ride_weight {
        report.warnings.push(format!(
            "wait_weight {} is below ride_weight {}; waiting should normally cost more than riding",
            costs.wait_weight, costs.ride_weight
        ));
    }

    let mut next_route_id = 0usize;
    for (s, region) in instance.regions.iter().enumerate() {
        if region.region_id != s {
            bad.push(format!(
                "region at position {s} has region_id {}; ids must be 0-based and in order",
                region.region_id
            ));
        }
        if region.num_trains < 1 {
            bad.push(format!("region {s}: num_trains must be at least 1"));
        }
        if region.num_stops < 1 {
            bad.push(format!("region {s}: num_stops must be at least 1"));
        }
        let mut served_by_any = vec![false; region.num_stops];
        for (k, route) in region.routes.iter().enumerate() {
            let loc = format!("region {s}, route {k} (id {})", route.route_id);
            if route.route_id != next_route_id {
                bad.push(format!(
                    "{loc}: route ids must be globally sequential, expected {next_route_id}"
                ));
            }
            next_route_id += 1;
            if route.region_id != s {
                bad.push(format!("{loc}: region_id {} does not match", route.region_id));
            }
            if route.serves.len() != region.num_stops {
                bad.push(format!(
                    "{loc}: serves has {} entries, expected {}",
                    route.serves.len(),
                    region.num_stops
                ));
                continue;
            }
            if route.serves.iter().any(|&f| f > 1) {
                bad.push(format!("{loc}: serves entries must be 0 or 1"));
            }
            if route.num_served() == 0 {
                bad.push(format!("{loc}: serves no stop"));
            }
            if route.total_duration_intervals < 1 {
                bad.push(format!("{loc}: total_duration_intervals must be at least 1"));
            }
            let duration_minutes =
                route.total_duration_intervals as f64 * instance.headway_minutes;
            for j in route.served_stops() {
                served_by_any[j] = true;
                match route.stop_arrival_minutes.get(&j) {
                    None => bad.push(format!("{loc}: missing arrival time for served stop {j}")),
                    Some(&t) if !(t > 0.0) || !t.is_finite() => {
                        bad.push(format!("{loc}: arrival time at stop {j} must be positive"))
                    }
                    Some(&t) if t > duration_minutes => bad.push(format!(
                        "{loc}: stop time exceeds route duration ({t} min > {} intervals * {} min)",
                        route.total_duration_intervals, instance.headway_minutes
                    )),
                    Some(_) => {}
                }
            }
            for (&j, _) in &route.stop_arrival_minutes {
                if j >= region.num_stops || route.serves[j] == 0 {
                    bad.push(format!(
                        "{loc}: arrival time given for stop {j} which the route does not serve"
                    ));
                }
            }
        }
        for (j, covered) in served_by_any.iter().enumerate() {
            if !covered && region.num_stops > 0 {
                bad.push(format!("region {s}: unreachable stop {j} (served by no route)"));
            }
        }
    }

    report
}

// ---------------------------------------------------------------------------
// File formats.
//
// JSON documents are the serde serialization of the types above plus a
// top-level "schema_version" field. Scenario batches use a CSV with one row
// per (scenario, region, train, stop) cell, preceded by a `# schema_version`
// comment line; omitted cells read as zero demand.
// ---------------------------------------------------------------------------

pub(crate) fn to_versioned_json<T: Serialize>(value: &T) -> Result<String, DomainError> {
    let mut doc = serde_json::to_value(value)?;
    let obj = doc
        .as_object_mut()
        .expect("versioned documents are JSON objects");
    obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub(crate) fn from_versioned_json<T: DeserializeOwned>(
    text: &str,
    kind: &'static str,
) -> Result<T, DomainError> {
    let mut doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DomainError::MalformedFile {
            kind,
            detail: e.to_string(),
        })?;
    let obj = doc.as_object_mut().ok_or(DomainError::MalformedFile {
        kind,
        detail: "top level is not a JSON object".into(),
    })?;
    match obj.remove("schema_version") {
        Some(v) if v == serde_json::json!(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(DomainError::SchemaVersion {
                found: v.to_string(),
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(DomainError::SchemaVersion {
                found: "missing".into(),
                expected: SCHEMA_VERSION,
            })
        }
    }
    serde_json::from_value(doc).map_err(|e| DomainError::MalformedFile {
        kind,
        detail: e.to_string(),
    })
}

pub fn save_instance(path: impl AsRef<Path>, instance: &Instance) -> Result<(), DomainError> {
    std::fs::write(path, to_versioned_json(instance)?)?;
    Ok(())
}

/// Loads an instance JSON document and validates it; structural violations are
/// load errors.
pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, DomainError> {
    let text = std::fs::read_to_string(path)?;
    let instance: Instance = from_versioned_json(&text, "instance")?;
    let report = validate_instance(&instance);
    if !report.is_valid() {
        return Err(DomainError::InvalidInstance(report.violations.join("; ")));
    }
    Ok(instance)
}

const SCENARIO_HEADER: [&str; 5] = ["scenario_id", "region", "train", "stop", "demand"];

/// Writes a scenario batch as dense CSV in (scenario, region, train, stop)
/// order.
pub fn save_scenarios(
    path: impl AsRef<Path>,
    instance: &Instance,
    scenarios: &[DemandScenario],
) -> Result<(), DomainError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# schema_version={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(SCENARIO_HEADER)?;
    for (r, scenario) in scenarios.iter().enumerate() {
        scenario.check_dims(instance)?;
        for (s, region) in instance.regions.iter().enumerate() {
            for i in 0..region.num_trains {
                for j in 0..region.num_stops {
                    w.write_record([
                        r.to_string(),
                        s.to_string(),
                        i.to_string(),
                        j.to_string(),
                        scenario.demand[s][i][j].to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a scenario batch written by [`save_scenarios`]. Scenario ids must be
/// contiguous from 0; cells may be omitted (zero demand) but no cell may
/// repeat.
pub fn load_scenarios(
    path: impl AsRef<Path>,
    instance: &Instance,
) -> Result<Vec<DemandScenario>, DomainError> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    let malformed = |detail: String| DomainError::MalformedFile {
        kind: "scenario",
        detail,
    };
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != SCENARIO_HEADER {
        return Err(malformed(format!(
            "header must be {SCENARIO_HEADER:?}, got {headers:?}"
        )));
    }
    let mut rows: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or_default();
        let parse_idx = |idx: usize| {
            field(idx)
                .parse::<usize>()
                .map_err(|_| malformed(format!("bad integer {:?} in row {:?}", field(idx), record)))
        };
        let demand: f64 = field(4)
            .parse()
            .map_err(|_| malformed(format!("bad demand {:?} in row {:?}", field(4), record)))?;
        rows.push((parse_idx(0)?, parse_idx(1)?, parse_idx(2)?, parse_idx(3)?, demand));
    }
    let count = match rows.iter().map(|r| r.0).max() {
        None => return Ok(Vec::new()),
        Some(max_id) => max_id + 1,
    };
    let mut seen_id = vec![false; count];
    let mut scenarios = vec![DemandScenario::zero(instance); count];
    let mut filled: Vec<Vec<Vec<Vec<bool>>>> = vec![
        instance
            .regions
            .iter()
            .map(|reg| vec![vec![false; reg.num_stops]; reg.num_trains])
            .collect();
        count
    ];
    for (r, s, i, j, n) in rows {
        seen_id[r] = true;
        if s >= instance.num_regions() {
            return Err(malformed(format!("region {s} out of range")));
        }
        let region = &instance.regions[s];
        if i >= region.num_trains || j >= region.num_stops {
            return Err(malformed(format!(
                "cell (region {s}, train {i}, stop {j}) out of range"
            )));
        }
        if !n.is_finite() || n < 0.0 {
            return Err(malformed(format!("demand {n} at (scenario {r}, region {s})")));
        }
        if std::mem::replace(&mut filled[r][s][i][j], true) {
            return Err(malformed(format!(
                "duplicate cell (scenario {r}, region {s}, train {i}, stop {j})"
            )));
        }
        scenarios[r].demand[s][i][j] = n;
    }
    if let Some(missing) = seen_id.iter().position(|&seen| !seen) {
        return Err(malformed(format!(
            "scenario ids must be contiguous from 0; id {missing} is missing"
        )));
    }
    Ok(scenarios)
}
