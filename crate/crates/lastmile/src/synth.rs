//! Synthetic benchmark instances: square service regions with the station at
//! the center, stops scattered uniformly, and routes enumerated over small
//! stop subsets in min-duration visit order.
//!
//! The geometry convention matches the ingestion pipeline: coordinates are
//! planar miles relative to the station, travel time is Euclidean distance at
//! a fixed speed, and a route's interval count is its round trip rounded up
//! to whole headways (never zero).

use crate::domain::{
    validate_instance, CostParams, DomainError, Instance, RegionSpec, RouteSpec,
};
use crate::scenario::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Stop and route counts for one generated region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionShape {
    pub num_stops: usize,
    pub num_routes: usize,
}

/// Everything the generator needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub regions: Vec<RegionShape>,
    pub trains_per_region: usize,
    pub fleet_bound: u32,
    pub headway_minutes: f64,
    pub vehicle_capacity: u32,
    pub fixed_cost_per_vehicle: f64,
    pub wait_weight: f64,
    pub ride_weight: f64,
    /// Routes serve subsets of at most this many stops.
    pub max_stops_per_route: usize,
    /// Stops land uniformly in a square of this half-width around the station.
    pub region_half_width_miles: f64,
    pub speed_mph: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            regions: vec![RegionShape {
                num_stops: 4,
                num_routes: 10,
            }],
            trains_per_region: 12,
            fleet_bound: 60,
            headway_minutes: 10.0,
            vehicle_capacity: 5,
            fixed_cost_per_vehicle: 4000.0,
            wait_weight: 2.0,
            ride_weight: 1.0,
            max_stops_per_route: 3,
            region_half_width_miles: 0.5,
            speed_mph: 12.0,
        }
    }
}

impl SynthSpec {
    /// The four-region benchmark layout: 12 trains per region, 4/6/6/8 stops,
    /// 10/23/30/39 routes.
    pub fn four_region_benchmark() -> Self {
        SynthSpec {
            regions: [(4, 10), (6, 23), (6, 30), (8, 39)]
                .into_iter()
                .map(|(num_stops, num_routes)| RegionShape {
                    num_stops,
                    num_routes,
                })
                .collect(),
            ..SynthSpec::default()
        }
    }
}

/// Generates an instance from a spec and a seed. Identical inputs give an
/// identical instance, and each region's geometry depends only on the seed
/// and its own position.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Instance, DomainError> {
    if spec.regions.is_empty() {
        return Err(DomainError::InvalidInstance(
            "generator needs at least one region".into(),
        ));
    }
    if !(spec.headway_minutes > 0.0) || !(spec.speed_mph > 0.0) {
        return Err(DomainError::InvalidInstance(
            "headway and speed must be positive".into(),
        ));
    }
    let mut regions = Vec::with_capacity(spec.regions.len());
    let mut next_route_id = 0;
    for (s, shape) in spec.regions.iter().enumerate() {
        let enumerable = subset_count(shape.num_stops, spec.max_stops_per_route);
        if shape.num_routes > enumerable {
            return Err(DomainError::InvalidInstance(format!(
                "region {s} asks for {} routes but only {enumerable} subsets of at most {} of its {} stops exist",
                shape.num_routes, spec.max_stops_per_route, shape.num_stops
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "stops", s as u64));
        let half = spec.region_half_width_miles;
        let points: Vec<(f64, f64)> = (0..shape.num_stops)
            .map(|_| (rng.random_range(-half..=half), rng.random_range(-half..=half)))
            .collect();
        let mut routes = Vec::with_capacity(shape.num_routes);
        for subset in subsets_up_to(shape.num_stops, spec.max_stops_per_route) {
            if routes.len() == shape.num_routes {
                break;
            }
            routes.push(route_from_subset(
                next_route_id + routes.len(),
                s,
                shape.num_stops,
                &points,
                &subset,
                spec.speed_mph,
                spec.headway_minutes,
            ));
        }
        next_route_id += routes.len();
        regions.push(RegionSpec {
            region_id: s,
            num_trains: spec.trains_per_region,
            num_stops: shape.num_stops,
            routes,
        });
    }
    let instance = Instance {
        regions,
        fleet_bound: spec.fleet_bound,
        headway_minutes: spec.headway_minutes,
        vehicle_capacity: spec.vehicle_capacity,
        costs: CostParams::uniform(
            spec.fixed_cost_per_vehicle,
            spec.wait_weight,
            spec.ride_weight,
        ),
    };
    let report = validate_instance(&instance);
    if !report.is_valid() {
        return Err(DomainError::InvalidInstance(report.violations.join("; ")));
    }
    Ok(instance)
}

/// A small random but always-valid instance for property tests: 1-2 regions,
/// 2-4 stops, all singleton routes plus a few multi-stop ones.
pub fn random_small_instance(rng: &mut impl Rng) -> Instance {
    let num_regions = rng.random_range(1..=2);
    let regions = (0..num_regions)
        .map(|_| {
            let num_stops = rng.random_range(2..=4);
            let enumerable = subset_count(num_stops, 3);
            let num_routes = rng.random_range(num_stops..=enumerable.min(num_stops + 4));
            RegionShape {
                num_stops,
                num_routes,
            }
        })
        .collect();
    let spec = SynthSpec {
        regions,
        trains_per_region: rng.random_range(2..=4),
        fleet_bound: rng.random_range(2..=6),
        headway_minutes: *[5.0, 10.0].get(rng.random_range(0..2)).unwrap(),
        vehicle_capacity: rng.random_range(2..=4),
        fixed_cost_per_vehicle: *[0.0, 10.0, 50.0].get(rng.random_range(0..3)).unwrap(),
        wait_weight: rng.random_range(2..=3) as f64,
        ride_weight: 1.0,
        ..SynthSpec::default()
    };
    generate(&spec, rng.random()).expect("shapes are within enumerable bounds")
}

/// Number of nonempty subsets of size at most `max` from `n` stops.
pub fn subset_count(n: usize, max: usize) -> usize {
    (1..=max.min(n)).map(|r| binomial(n, r)).sum()
}

fn binomial(n: usize, r: usize) -> usize {
    (0..r).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// All index subsets of {0..n} with 1..=max elements, ordered by size then
/// lexicographically — so singletons always come first.
pub(crate) fn subsets_up_to(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=max.min(n) {
        let mut current = Vec::with_capacity(size);
        push_combinations(n, size, 0, &mut current, &mut out);
    }
    out
}

fn push_combinations(
    n: usize,
    size: usize,
    from: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == size {
        out.push(current.clone());
        return;
    }
    for next in from..n {
        current.push(next);
        push_combinations(n, size, next + 1, current, out);
        current.pop();
    }
}

/// Travel-order geometry of a route over planar stop coordinates (miles, with
/// the station at the origin).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RouteGeometry {
    /// Subset entries in visiting order.
    pub visit_order: Vec<usize>,
    /// Minutes from departure to each visited stop, aligned with
    /// `visit_order`.
    pub arrival_minutes: Vec<f64>,
    pub round_trip_minutes: f64,
}

/// Picks the visiting order with the smallest station-to-station round trip
/// by trying every permutation of the subset; ties keep the earlier
/// permutation in lexicographic order.
pub(crate) fn best_route_geometry(
    points: &[(f64, f64)],
    subset: &[usize],
    speed_mph: f64,
) -> RouteGeometry {
    let minutes = |a: (f64, f64), b: (f64, f64)| {
        let (dx, dy) = (a.0 - b.0, a.1 - b.1);
        (dx * dx + dy * dy).sqrt() / speed_mph * 60.0
    };
    let mut best: Option<RouteGeometry> = None;
    let mut order: Vec<usize> = subset.to_vec();
    permute(&mut order, 0, &mut |order| {
        let mut at = (0.0, 0.0);
        let mut clock = 0.0;
        let mut arrivals = Vec::with_capacity(order.len());
        for &stop in order.iter() {
            clock += minutes(at, points[stop]);
            arrivals.push(clock);
            at = points[stop];
        }
        clock += minutes(at, (0.0, 0.0));
        if best.as_ref().is_none_or(|b| clock < b.round_trip_minutes) {
            best = Some(RouteGeometry {
                visit_order: order.to_vec(),
                arrival_minutes: arrivals,
                round_trip_minutes: clock,
            });
        }
    });
    best.expect("subset is nonempty")
}

fn permute(items: &mut [usize], from: usize, visit: &mut impl FnMut(&[usize])) {
    if from == items.len() {
        visit(items);
        return;
    }
    for i in from..items.len() {
        items.swap(from, i);
        permute(items, from + 1, visit);
        items.swap(from, i);
    }
}

pub(crate) fn route_from_subset(
    route_id: usize,
    region_id: usize,
    num_stops: usize,
    points: &[(f64, f64)],
    subset: &[usize],
    speed_mph: f64,
    headway_minutes: f64,
) -> RouteSpec {
    let geometry = best_route_geometry(points, subset, speed_mph);
    let mut serves = vec![0u8; num_stops];
    let mut stop_arrival_minutes = BTreeMap::new();
    for (&stop, &minute) in geometry.visit_order.iter().zip(&geometry.arrival_minutes) {
        serves[stop] = 1;
        stop_arrival_minutes.insert(stop, minute);
    }
    let intervals = (geometry.round_trip_minutes / headway_minutes).ceil() as usize;
    RouteSpec {
        route_id,
        region_id,
        serves,
        total_duration_intervals: intervals.max(1),
        stop_arrival_minutes,
    }
}
