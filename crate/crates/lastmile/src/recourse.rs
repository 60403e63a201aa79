//! Second-stage evaluation for fixed first-stage decisions and one realized
//! demand scenario.
//!
//! Three entry points:
//! - [`solve_recourse_fixed`]: the linear program that assigns batches to the
//!   already-scheduled trips and backlogs the rest;
//! - [`dual_certificate`]: the same value obtained through the dual linear
//!   program, built independently so the two can cross-check each other;
//! - [`solve_recourse_dynamic`]: the mixed-integer variant that inherits only
//!   the per-region fleet and re-optimizes the schedule per scenario.
//!
//! Regions share no constraints once the first stage is fixed, so every entry
//! point solves one model per region and concatenates the results.

use crate::domain::{
    DemandScenario, DomainError, FirstStageSolution, Instance, RegionSpec, RouteSpec,
    SecondStagePlan,
};
use crate::milp::{
    default_backend, Backend, Cmp, LinearModel, MilpError, Sense, SolveOutcome, SolveStatus,
    SolverParams, VarId, VarKind,
};

#[derive(Debug, thiserror::Error)]
pub enum RecourseError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("{context}: solver returned {status}")]
    Solver { context: String, status: SolveStatus },
}

fn require_optimal(context: String, outcome: &SolveOutcome) -> Result<(), RecourseError> {
    if outcome.status == SolveStatus::Optimal {
        Ok(())
    } else {
        Err(RecourseError::Solver {
            context,
            status: outcome.status,
        })
    }
}

/// Like [`require_optimal`] but also accepts a time-limit incumbent: any
/// feasible schedule prices the scenario, so evaluation under a deadline
/// keeps the best one found rather than failing.
fn require_incumbent(context: String, outcome: &SolveOutcome) -> Result<(), RecourseError> {
    match outcome.status {
        SolveStatus::Optimal | SolveStatus::FeasibleTimeLimit => Ok(()),
        status => Err(RecourseError::Solver { context, status }),
    }
}

/// Feasible point of the dual of the fixed-schedule recourse LP, per region:
/// `gamma[s][i][j]` prices the stop-j balance after train i and
/// `psi[s][i][k] <= 0` prices trip capacity on route k at train i.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    pub gamma: Vec<Vec<Vec<f64>>>,
    pub psi: Vec<Vec<Vec<f64>>>,
    pub value: f64,
}

impl DualCertificate {
    /// Verifies dual feasibility against the instance within `tol`:
    /// backlog links `gamma[i] - gamma[i+1] <= wait_weight * h` (with the
    /// after-horizon price pinned to zero), served pairs
    /// `gamma + psi <= ride_weight * t_jk`, and `psi <= 0`.
    pub fn check_feasible(&self, instance: &Instance, tol: f64) -> Result<(), String> {
        let wait_step = instance.costs.wait_weight * instance.headway_minutes;
        for (s, region) in instance.regions.iter().enumerate() {
            let gamma = &self.gamma[s];
            let psi = &self.psi[s];
            for i in 0..region.num_trains {
                for j in 0..region.num_stops {
                    let next = if i + 1 < region.num_trains {
                        gamma[i + 1][j]
                    } else {
                        0.0
                    };
                    if gamma[i][j] - next > wait_step + tol {
                        return Err(format!(
                            "backlog link violated at region {s}, train {i}, stop {j}"
                        ));
                    }
                }
                for (k, route) in region.routes.iter().enumerate() {
                    if psi[i][k] > tol {
                        return Err(format!(
                            "positive capacity price at region {s}, train {i}, route {k}"
                        ));
                    }
                    for j in route.served_stops() {
                        let ride = instance.costs.ride_weight * route.stop_arrival_minutes[&j];
                        if gamma[i][j] + psi[i][k] > ride + tol {
                            return Err(format!(
                                "served-pair price violated at region {s}, train {i}, stop {j}, route {k}"
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Recomputes the dual objective `sum(n * gamma) + sum(c * w * psi)` from
    /// first principles.
    pub fn objective(
        &self,
        instance: &Instance,
        first_stage: &FirstStageSolution,
        scenario: &DemandScenario,
    ) -> f64 {
        let mut value = 0.0;
        for (s, region) in instance.regions.iter().enumerate() {
            for i in 0..region.num_trains {
                for j in 0..region.num_stops {
                    value += scenario.demand[s][i][j] * self.gamma[s][i][j];
                }
                for k in 0..region.routes.len() {
                    value += f64::from(instance.vehicle_capacity)
                        * f64::from(first_stage.trips[s][i][k])
                        * self.psi[s][i][k];
                }
            }
        }
        value
    }
}

/// Schedule and assignment produced by the dynamic (re-optimized) recourse.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicOutcome {
    pub trips: Vec<Vec<Vec<u32>>>,
    pub plan: SecondStagePlan,
}

/// Ids of the assignment variables of one region's model, in the canonical
/// layout: `u[i][j]` backlog, `z[i][k][p]` with p running over route k's
/// served stops in ascending stop order.
pub(crate) struct AssignmentVars {
    pub(crate) u: Vec<Vec<VarId>>,
    pub(crate) z: Vec<Vec<Vec<VarId>>>,
}

/// Declares u/z variables and the balance rows shared by the fixed LP, the
/// dynamic MILP, and the deterministic-equivalent builders. Objective
/// coefficients are scaled by `weight` (the scenario probability in
/// sample-average models; 1 here). Capacity rows differ per caller and are
/// added separately.
pub(crate) fn add_assignment_block(
    model: &mut LinearModel,
    instance: &Instance,
    s: usize,
    replicate: usize,
    demand: &[Vec<f64>],
    weight: f64,
) -> AssignmentVars {
    let region = &instance.regions[s];
    let wait_cost = weight * instance.costs.wait_weight * instance.headway_minutes;
    let u: Vec<Vec<VarId>> = (0..region.num_trains)
        .map(|i| {
            (0..region.num_stops)
                .map(|j| {
                    model.add_var(
                        format!("u[{replicate},{i},{j},{s}]"),
                        VarKind::Continuous,
                        0.0,
                        f64::INFINITY,
                        wait_cost,
                    )
                })
                .collect()
        })
        .collect();
    let z: Vec<Vec<Vec<VarId>>> = (0..region.num_trains)
        .map(|i| {
            region
                .routes
                .iter()
                .enumerate()
                .map(|(k, route)| {
                    route
                        .served_stops()
                        .map(|j| {
                            let ride_cost =
                                weight * instance.costs.ride_weight * route.stop_arrival_minutes[&j];
                            model.add_var(
                                format!("z[{replicate},{i},{j},{k},{s}]"),
                                VarKind::Continuous,
                                0.0,
                                f64::INFINITY,
                                ride_cost,
                            )
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    for i in 0..region.num_trains {
        for j in 0..region.num_stops {
            // u[i,j] - u[i-1,j] + sum_k z[i,j,k] = n[i,j]
            let mut terms = vec![(u[i][j], 1.0)];
            if i > 0 {
                terms.push((u[i - 1][j], -1.0));
            }
            for (k, route) in region.routes.iter().enumerate() {
                if let Some(p) = route.served_stops().position(|stop| stop == j) {
                    terms.push((z[i][k][p], 1.0));
                }
            }
            model.add_constraint(terms, Cmp::Eq, demand[i][j]);
        }
    }
    AssignmentVars { u, z }
}

/// Reads one region's assignment variables back into plan slices.
fn extract_assignments(
    outcome: &SolveOutcome,
    vars: &AssignmentVars,
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>), MilpError> {
    let backlog = vars
        .u
        .iter()
        .map(|row| row.iter().map(|&id| outcome.value(id)).collect())
        .collect::<Result<_, _>>()?;
    let assignments = vars
        .z
        .iter()
        .map(|by_route| {
            by_route
                .iter()
                .map(|ids| ids.iter().map(|&id| outcome.value(id)).collect())
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok((assignments, backlog))
}

/// Optimal cost of serving `scenario` with the schedule fixed by
/// `first_stage`: backlog carries over between trains at the waiting cost,
/// assignments ride at each stop's travel cost, capacity is seats times
/// scheduled trips. Always feasible — backlogging everything is a plan.
pub fn solve_recourse_fixed(
    instance: &Instance,
    first_stage: &FirstStageSolution,
    scenario: &DemandScenario,
) -> Result<SecondStagePlan, RecourseError> {
    solve_recourse_fixed_with(
        default_backend()?.as_ref(),
        &SolverParams::default(),
        instance,
        first_stage,
        scenario,
    )
}

pub fn solve_recourse_fixed_with(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    first_stage: &FirstStageSolution,
    scenario: &DemandScenario,
) -> Result<SecondStagePlan, RecourseError> {
    scenario.check_dims(instance)?;
    let mut plan = SecondStagePlan::zero(instance);
    plan.objective_value = 0.0;
    for s in 0..instance.num_regions() {
        let mut model = LinearModel::new(format!("recourse_fixed[{s}]"), Sense::Minimize);
        let vars = add_assignment_block(&mut model, instance, s, 0, &scenario.demand[s], 1.0);
        add_trip_capacity_rows(&mut model, instance, s, &vars, |i, k| {
            f64::from(instance.vehicle_capacity) * f64::from(first_stage.trips[s][i][k])
        });
        let outcome = backend.solve(&model, params)?;
        require_optimal(format!("fixed recourse, region {s}"), &outcome)?;
        let (assignments, backlog) = extract_assignments(&outcome, &vars)?;
        plan.assignments[s] = assignments;
        plan.backlog[s] = backlog;
        plan.objective_value += outcome.objective_value.expect("optimal has an objective");
    }
    Ok(plan)
}

/// Adds one `sum_j z[i,j,k] <= rhs(i,k)` row per train and route.
fn add_trip_capacity_rows(
    model: &mut LinearModel,
    instance: &Instance,
    s: usize,
    vars: &AssignmentVars,
    rhs: impl Fn(usize, usize) -> f64,
) {
    let region = &instance.regions[s];
    for i in 0..region.num_trains {
        for k in 0..region.routes.len() {
            let terms = vars.z[i][k].iter().map(|&id| (id, 1.0)).collect();
            model.add_constraint(terms, Cmp::Le, rhs(i, k));
        }
    }
}

/// Solves the dual of the fixed-schedule recourse LP, built from scratch
/// (not read off the primal solver), so primal and dual values can serve as
/// independent checks of each other.
pub fn dual_certificate(
    instance: &Instance,
    first_stage: &FirstStageSolution,
    scenario: &DemandScenario,
) -> Result<DualCertificate, RecourseError> {
    dual_certificate_with(
        default_backend()?.as_ref(),
        &SolverParams::default(),
        instance,
        first_stage,
        scenario,
    )
}

pub fn dual_certificate_with(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    first_stage: &FirstStageSolution,
    scenario: &DemandScenario,
) -> Result<DualCertificate, RecourseError> {
    scenario.check_dims(instance)?;
    let wait_step = instance.costs.wait_weight * instance.headway_minutes;
    let mut certificate = DualCertificate {
        gamma: Vec::with_capacity(instance.num_regions()),
        psi: Vec::with_capacity(instance.num_regions()),
        value: 0.0,
    };
    for (s, region) in instance.regions.iter().enumerate() {
        let mut model = LinearModel::new(format!("recourse_dual[{s}]"), Sense::Maximize);
        let gamma: Vec<Vec<VarId>> = (0..region.num_trains)
            .map(|i| {
                (0..region.num_stops)
                    .map(|j| {
                        model.add_var(
                            format!("gamma[{i},{j},{s}]"),
                            VarKind::Continuous,
                            f64::NEG_INFINITY,
                            f64::INFINITY,
                            scenario.demand[s][i][j],
                        )
                    })
                    .collect()
            })
            .collect();
        let psi: Vec<Vec<VarId>> = (0..region.num_trains)
            .map(|i| {
                (0..region.routes.len())
                    .map(|k| {
                        let capacity = f64::from(instance.vehicle_capacity)
                            * f64::from(first_stage.trips[s][i][k]);
                        model.add_var(
                            format!("psi[{i},{k},{s}]"),
                            VarKind::Continuous,
                            f64::NEG_INFINITY,
                            0.0,
                            capacity,
                        )
                    })
                    .collect()
            })
            .collect();
        for i in 0..region.num_trains {
            for j in 0..region.num_stops {
                // Price of holding a passenger one interval; the post-horizon
                // price is zero, so the last link bounds gamma directly.
                let mut terms = vec![(gamma[i][j], 1.0)];
                if i + 1 < region.num_trains {
                    terms.push((gamma[i + 1][j], -1.0));
                }
                model.add_constraint(terms, Cmp::Le, wait_step);
            }
            for (k, route) in region.routes.iter().enumerate() {
                for j in route.served_stops() {
                    let ride = instance.costs.ride_weight * route.stop_arrival_minutes[&j];
                    model.add_constraint(
                        vec![(gamma[i][j], 1.0), (psi[i][k], 1.0)],
                        Cmp::Le,
                        ride,
                    );
                }
            }
        }
        let outcome = backend.solve(&model, params)?;
        require_optimal(format!("dual recourse, region {s}"), &outcome)?;
        let read = |ids: &Vec<Vec<VarId>>| -> Result<Vec<Vec<f64>>, MilpError> {
            ids.iter()
                .map(|row| row.iter().map(|&id| outcome.value(id)).collect())
                .collect()
        };
        certificate.gamma.push(read(&gamma)?);
        certificate.psi.push(read(&psi)?);
        certificate.value += outcome.objective_value.expect("optimal has an objective");
    }
    Ok(certificate)
}

/// Arrived-so-far demand for each route's stops: `cum[i][k]` is the most any
/// schedule could assign to route `k` at train `i`, so
/// `ceil(cum[i][k] / capacity)` bounds `w[i][k]` without cutting off every
/// optimum (trips beyond it are idle in every assignment and can be dropped
/// at equal cost).
pub(crate) fn cumulative_route_demand(region: &RegionSpec, demand: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut cum = vec![vec![0.0; region.routes.len()]; region.num_trains];
    for (k, route) in region.routes.iter().enumerate() {
        let mut running = 0.0;
        for i in 0..region.num_trains {
            for j in route.served_stops() {
                running += demand[i][j];
            }
            cum[i][k] = running;
        }
    }
    cum
}

/// A feasible dispatch plan from simulation: preset trips run first, then
/// idle vehicles chase the most backlogged stop via its cheapest route, all
/// subject to the per-interval trip caps.
struct SimPlan {
    trips: Vec<Vec<u32>>,
    availability: Vec<u32>,
}

fn simulate_dispatch(
    instance: &Instance,
    s: usize,
    fleet: u32,
    demand: &[Vec<f64>],
    preset: &[Vec<u32>],
) -> SimPlan {
    const EPS: f64 = 1e-9;
    let region = &instance.regions[s];
    let capacity = f64::from(instance.vehicle_capacity);
    let cum = cumulative_route_demand(region, demand);
    // Preferred route per stop: singletons first, then shorter round trips,
    // then earlier arrival at the stop.
    let mut best_route: Vec<Option<usize>> = vec![None; region.num_stops];
    for (k, route) in region.routes.iter().enumerate() {
        for j in route.served_stops() {
            let better = match best_route[j] {
                None => true,
                Some(cur) => {
                    let cur = &region.routes[cur];
                    let key = |r: &RouteSpec| {
                        (
                            r.num_served(),
                            r.total_duration_intervals,
                            r.stop_arrival_minutes[&j],
                        )
                    };
                    key(route) < key(cur)
                }
            };
            if better {
                best_route[j] = Some(k);
            }
        }
    }
    // One trip on route k at interval i: book the return, then fill the
    // seats by descending backlog over the route's stops.
    fn dispatch(
        route: &RouteSpec,
        i: usize,
        capacity: f64,
        backlog: &mut [f64],
        returns: &mut [u32],
    ) {
        if let Some(slot) = returns.get_mut(i + route.total_duration_intervals) {
            *slot += 1;
        }
        let mut stops: Vec<usize> = route.served_stops().collect();
        stops.sort_by(|a, b| backlog[*b].total_cmp(&backlog[*a]));
        let mut seats = capacity;
        for j in stops {
            let take = seats.min(backlog[j]);
            backlog[j] -= take;
            seats -= take;
        }
    }
    let mut trips = vec![vec![0u32; region.routes.len()]; region.num_trains];
    let mut availability = Vec::with_capacity(region.num_trains);
    let mut backlog = vec![0.0; region.num_stops];
    let mut returns = vec![0u32; region.num_trains];
    let mut idle = fleet;
    for i in 0..region.num_trains {
        idle += returns[i];
        for j in 0..region.num_stops {
            backlog[j] += demand[i][j];
        }
        for k in 0..region.routes.len() {
            // Clamp to this scenario's trip cap: a preset borrowed from
            // another scenario may schedule more than the model here allows.
            let cap = (cum[i][k] / capacity).ceil() as u32;
            for _ in 0..preset[i][k].min(cap).min(idle) {
                trips[i][k] += 1;
                idle -= 1;
                dispatch(&region.routes[k], i, capacity, &mut backlog, &mut returns);
            }
        }
        while idle > 0 {
            let Some((target, _)) = backlog
                .iter()
                .enumerate()
                .filter(|&(_, &b)| b > EPS)
                .max_by(|a, b| a.1.total_cmp(b.1))
            else {
                break;
            };
            // Stay under the cap the model will impose on this cell.
            let candidate = best_route[target].filter(|&k| {
                f64::from(trips[i][k] + 1) <= (cum[i][k] / capacity).ceil()
            });
            let Some(k) = candidate else {
                break;
            };
            trips[i][k] += 1;
            idle -= 1;
            dispatch(&region.routes[k], i, capacity, &mut backlog, &mut returns);
        }
        availability.push(idle);
    }
    SimPlan {
        trips,
        availability,
    }
}

/// Cost, backlog `[i][j]`, and assignments `[i][k][p]` of a priced schedule.
pub type PricedAssignments = (f64, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>);

/// Exact waiting-plus-riding cost of a fixed one-region trip schedule, as an
/// LP over the assignment block. Returns the backlog and assignment values
/// shaped like the block's `u`/`z`.
pub fn price_schedule(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    s: usize,
    demand: &[Vec<f64>],
    trips: &[Vec<u32>],
) -> Result<PricedAssignments, RecourseError> {
    let region = &instance.regions[s];
    let mut model = LinearModel::new(format!("price_schedule[{s}]"), Sense::Minimize);
    let vars = add_assignment_block(&mut model, instance, s, 0, demand, 1.0);
    for i in 0..region.num_trains {
        for k in 0..region.routes.len() {
            let terms: Vec<(VarId, f64)> = vars.z[i][k].iter().map(|&id| (id, 1.0)).collect();
            let seats = f64::from(instance.vehicle_capacity) * f64::from(trips[i][k]);
            model.add_constraint(terms, Cmp::Le, seats);
        }
    }
    let outcome = backend.solve(&model, params)?;
    require_optimal(format!("schedule pricing, region {s}"), &outcome)?;
    let (assignments, backlog) = extract_assignments(&outcome, &vars)?;
    let value = outcome.objective_value.expect("optimal solves carry an objective");
    Ok((value, backlog, assignments))
}

/// Largest-remainder rounding of a fractional trip schedule: keep the floor,
/// then restore the dropped fractional trips in descending-remainder order
/// wherever a vehicle is idle for the whole round trip. The floor of an
/// availability-feasible schedule is itself feasible (removing a trip only
/// frees vehicles), so no backtracking is needed.
fn round_schedule_by_remainder(
    region: &RegionSpec,
    fleet: u32,
    fractional: &[Vec<f64>],
) -> Vec<Vec<u32>> {
    const EPS: f64 = 1e-6;
    let horizon = region.num_trains;
    let mut trips: Vec<Vec<u32>> = fractional
        .iter()
        .map(|row| row.iter().map(|&x| x.floor() as u32).collect())
        .collect();
    // idle[i] = vehicles not out on a trip during interval i; a trip on route
    // k departing at i occupies one vehicle over i..i+duration.
    let mut idle = vec![i64::from(fleet); horizon];
    for i in 0..horizon {
        for (k, route) in region.routes.iter().enumerate() {
            let busy = i64::from(trips[i][k]);
            for slot in idle
                .iter_mut()
                .skip(i)
                .take(route.total_duration_intervals)
            {
                *slot -= busy;
            }
        }
    }
    let mut order: Vec<(usize, usize)> = (0..horizon)
        .flat_map(|i| (0..region.routes.len()).map(move |k| (i, k)))
        .filter(|&(i, k)| fractional[i][k] - fractional[i][k].floor() > EPS)
        .collect();
    order.sort_by(|&(ia, ka), &(ib, kb)| {
        let fa = fractional[ia][ka] - fractional[ia][ka].floor();
        let fb = fractional[ib][kb] - fractional[ib][kb].floor();
        fb.total_cmp(&fa).then(ia.cmp(&ib)).then(ka.cmp(&kb))
    });
    for (i, k) in order {
        let duration = region.routes[k].total_duration_intervals;
        let window = i..horizon.min(i + duration);
        if idle[window.clone()].iter().all(|&v| v >= 1) {
            trips[i][k] += 1;
            for slot in &mut idle[window] {
                *slot -= 1;
            }
        }
    }
    trips
}

/// Builds an incumbent hint for one region's dynamic model from a preset
/// schedule: re-simulate it against this scenario (clamping to availability
/// and trip caps, spending leftover vehicles greedily), then price the result
/// exactly. Without a preset, rounds the LP relaxation by largest remainder.
/// Returns a full variable assignment, or `None` when any step fails — the
/// hint is advisory, never required.
#[allow(clippy::too_many_arguments)]
fn dynamic_warm_start(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    s: usize,
    fleet: u32,
    demand: &[Vec<f64>],
    model: &LinearModel,
    w: &[Vec<VarId>],
    v: &[VarId],
    vars: &AssignmentVars,
    hint: Option<&[Vec<u32>]>,
) -> Option<Vec<f64>> {
    if std::env::var_os("PROBE_NO_WS").is_some() {
        return None;
    }
    let region = &instance.regions[s];
    let lp_params = SolverParams {
        time_limit_seconds: params.time_limit_seconds.min(5.0),
        ..params.clone()
    };
    let preset: Vec<Vec<u32>> = match hint {
        Some(trips) => trips.to_vec(),
        None => {
            let lp = backend.solve(&model.relaxed(), &lp_params).ok()?;
            if lp.status != SolveStatus::Optimal {
                return None;
            }
            let fractional: Vec<Vec<f64>> = w
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&id| lp.value(id).map(|x| x.max(0.0)))
                        .collect::<Result<_, _>>()
                })
                .collect::<Result<_, _>>()
                .ok()?;
            round_schedule_by_remainder(region, fleet, &fractional)
        }
    };
    let sim = simulate_dispatch(instance, s, fleet, demand, &preset);
    let (_, backlog, assignments) =
        price_schedule(backend, &lp_params, instance, s, demand, &sim.trips).ok()?;
    let mut values = vec![0.0; model.num_vars()];
    for i in 0..region.num_trains {
        values[v[i].index()] = f64::from(sim.availability[i]);
        for k in 0..region.routes.len() {
            values[w[i][k].index()] = f64::from(sim.trips[i][k]);
            for (p, &id) in vars.z[i][k].iter().enumerate() {
                values[id.index()] = assignments[i][k][p];
            }
        }
        for j in 0..region.num_stops {
            values[vars.u[i][j].index()] = backlog[i][j];
        }
    }
    Some(values)
}

/// Re-optimizes the schedule per scenario: inherits only the per-region fleet
/// `m`, chooses integer trips subject to vehicle availability, and assigns
/// batches as in the fixed variant. One MILP per region.
pub fn solve_recourse_dynamic(
    instance: &Instance,
    fleet: &[u32],
    scenario: &DemandScenario,
) -> Result<DynamicOutcome, RecourseError> {
    solve_recourse_dynamic_with(
        default_backend()?.as_ref(),
        &SolverParams::default(),
        instance,
        fleet,
        scenario,
    )
}

pub fn solve_recourse_dynamic_with(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    fleet: &[u32],
    scenario: &DemandScenario,
) -> Result<DynamicOutcome, RecourseError> {
    scenario.check_dims(instance)?;
    if fleet.len() != instance.num_regions() {
        return Err(DomainError::dims("fleet", instance.num_regions(), fleet.len()).into());
    }
    let total: u64 = fleet.iter().map(|&m| u64::from(m)).sum();
    if total > u64::from(instance.fleet_bound) {
        return Err(DomainError::FleetBoundExceeded {
            total,
            bound: instance.fleet_bound,
        }
        .into());
    }
    let mut plan = SecondStagePlan::zero(instance);
    plan.objective_value = 0.0;
    let mut trips = Vec::with_capacity(instance.num_regions());
    for s in 0..instance.num_regions() {
        let region = solve_region_dynamic(
            backend,
            params,
            instance,
            s,
            fleet[s],
            &scenario.demand[s],
            None,
        )?;
        plan.assignments[s] = region.assignments;
        plan.backlog[s] = region.backlog;
        plan.objective_value += region.value;
        trips.push(region.trips);
    }
    Ok(DynamicOutcome { trips, plan })
}

/// One region's dynamic-recourse result: the objective contribution, the
/// re-optimized schedule, and the assignments behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDynamic {
    pub value: f64,
    pub status: SolveStatus,
    pub trips: Vec<Vec<u32>>,
    pub assignments: Vec<Vec<Vec<f64>>>,
    pub backlog: Vec<Vec<f64>>,
}

/// Solves the dynamic recourse for a single region. `hint` is an optional
/// trip schedule (for example one that was optimal under a similar scenario)
/// used purely as an incumbent seed; it is clamped to whatever this
/// scenario's model allows before pricing.
pub fn solve_region_dynamic(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    s: usize,
    fleet: u32,
    demand: &[Vec<f64>],
    hint: Option<&[Vec<u32>]>,
) -> Result<RegionDynamic, RecourseError> {
    let region = &instance.regions[s];
    let m = f64::from(fleet);
    let mut model = LinearModel::new(format!("recourse_dynamic[{s}]"), Sense::Minimize);
    let cum = cumulative_route_demand(region, demand);
    let capacity = f64::from(instance.vehicle_capacity);
    let w: Vec<Vec<VarId>> = (0..region.num_trains)
        .map(|i| {
            (0..region.routes.len())
                .map(|k| {
                    let cap = (cum[i][k] / capacity).ceil();
                    model.add_var(
                        format!("w[{i},{k},{s}]"),
                        VarKind::Integer,
                        0.0,
                        m.min(cap),
                        0.0,
                    )
                })
                .collect()
        })
        .collect();
    let v: Vec<VarId> = (0..region.num_trains)
        .map(|i| model.add_var(format!("v[{i},{s}]"), VarKind::Continuous, 0.0, m, 0.0))
        .collect();
    let vars = add_assignment_block(&mut model, instance, s, 0, demand, 1.0);
    // Availability recursion: departures leave, finished round trips return.
    for i in 0..region.num_trains {
        let mut terms = vec![(v[i], 1.0)];
        for (k, route) in region.routes.iter().enumerate() {
            terms.push((w[i][k], 1.0));
            if i >= route.total_duration_intervals {
                terms.push((w[i - route.total_duration_intervals][k], -1.0));
            }
        }
        if i > 0 {
            terms.push((v[i - 1], -1.0));
            model.add_constraint(terms, Cmp::Eq, 0.0);
        } else {
            model.add_constraint(terms, Cmp::Eq, m);
        }
    }
    for i in 0..region.num_trains {
        for k in 0..region.routes.len() {
            let mut terms: Vec<(VarId, f64)> =
                vars.z[i][k].iter().map(|&id| (id, 1.0)).collect();
            terms.push((w[i][k], -f64::from(instance.vehicle_capacity)));
            model.add_constraint(terms, Cmp::Le, 0.0);
        }
    }
    // Advisory incumbent, so a time-limited solve starts from a sensible
    // schedule instead of an all-backlog one.
    if let Some(start) =
        dynamic_warm_start(backend, params, instance, s, fleet, demand, &model, &w, &v, &vars, hint)
    {
        model.set_warm_start(start);
    }
    let outcome = backend.solve(&model, params)?;
    require_incumbent(format!("dynamic recourse, region {s}"), &outcome)?;
    let (assignments, backlog) = extract_assignments(&outcome, &vars)?;
    let trips = w
        .iter()
        .map(|row| {
            row.iter()
                .map(|&id| outcome.int_value(&model, id).map(|t| t as u32))
                .collect::<Result<Vec<u32>, _>>()
        })
        .collect::<Result<Vec<Vec<u32>>, _>>()?;
    Ok(RegionDynamic {
        value: outcome
            .objective_value
            .expect("accepted statuses carry an objective"),
        status: outcome.status,
        trips,
        assignments,
        backlog,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::{
        second_stage_cost, tests::tiny_instance, vehicle_availability, Availability, CostParams,
        RegionSpec, RouteSpec,
    };
    use crate::synth::random_small_instance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    /// One region, one stop, one direct route reached after 5 minutes with a
    /// one-interval round trip; seats 4, h = 10, waiting weight 2, riding 1.
    fn single_stop_instance(num_trains: usize) -> Instance {
        Instance {
            regions: vec![RegionSpec {
                region_id: 0,
                num_trains,
                num_stops: 1,
                routes: vec![RouteSpec {
                    route_id: 0,
                    region_id: 0,
                    serves: vec![1],
                    total_duration_intervals: 1,
                    stop_arrival_minutes: BTreeMap::from([(0, 5.0)]),
                }],
            }],
            fleet_bound: 4,
            headway_minutes: 10.0,
            vehicle_capacity: 4,
            costs: CostParams::uniform(0.0, 2.0, 1.0),
        }
    }

    fn demand(instance: &Instance, cells: &[(usize, usize, usize, f64)]) -> DemandScenario {
        let mut scenario = DemandScenario::zero(instance);
        for &(s, i, j, n) in cells {
            scenario.demand[s][i][j] = n;
        }
        scenario
    }

    pub(crate) fn random_feasible_first_stage(
        instance: &Instance,
        rng: &mut impl Rng,
    ) -> FirstStageSolution {
        let per_region_cap = instance.fleet_bound / instance.num_regions() as u32;
        let fleet: Vec<u32> = instance
            .regions
            .iter()
            .map(|_| rng.random_range(0..=per_region_cap))
            .collect();
        let trips: Vec<Vec<Vec<u32>>> = instance
            .regions
            .iter()
            .enumerate()
            .map(|(s, region)| {
                let mut rows: Vec<Vec<u32>> = Vec::with_capacity(region.num_trains);
                let mut available = fleet[s];
                for i in 0..region.num_trains {
                    for (k, route) in region.routes.iter().enumerate() {
                        if i >= route.total_duration_intervals {
                            available += rows[i - route.total_duration_intervals][k];
                        }
                    }
                    let mut row = Vec::with_capacity(region.routes.len());
                    for _ in 0..region.routes.len() {
                        let launch = rng.random_range(0..=available);
                        available -= launch;
                        row.push(launch);
                    }
                    rows.push(row);
                }
                rows
            })
            .collect();
        FirstStageSolution::new(instance, fleet, trips).expect("constructed to be feasible")
    }

    pub(crate) fn random_demand(instance: &Instance, rng: &mut impl Rng) -> DemandScenario {
        let mut scenario = DemandScenario::zero(instance);
        for region_demand in &mut scenario.demand {
            for row in region_demand.iter_mut() {
                for cell in row.iter_mut() {
                    *cell = rng.random_range(0.0..=5.0);
                }
            }
        }
        scenario
    }

    #[test]
    fn zero_demand_costs_nothing_and_serves_nobody() {
        let instance = tiny_instance();
        let first_stage =
            FirstStageSolution::new(&instance, vec![2], vec![vec![vec![1, 0, 0], vec![0, 1, 0]]])
                .unwrap();
        let plan =
            solve_recourse_fixed(&instance, &first_stage, &DemandScenario::zero(&instance))
                .unwrap();
        assert_eq!(plan.objective_value, 0.0);
        assert!(plan.backlog.iter().flatten().flatten().all(|&u| u == 0.0));
        assert!(plan
            .assignments
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .all(|&z| z == 0.0));
    }

    #[test]
    fn one_trip_with_spare_seats_serves_the_whole_batch() {
        let instance = single_stop_instance(1);
        let first_stage =
            FirstStageSolution::new(&instance, vec![1], vec![vec![vec![1]]]).unwrap();
        let scenario = demand(&instance, &[(0, 0, 0, 3.0)]);
        let plan = solve_recourse_fixed(&instance, &first_stage, &scenario).unwrap();
        assert!((plan.assignments[0][0][0][0] - 3.0).abs() < 1e-9);
        assert!(plan.backlog[0][0][0].abs() < 1e-9);
        assert!((plan.objective_value - 15.0).abs() < 1e-9);
    }

    #[test]
    fn binding_capacity_splits_the_batch_across_trains() {
        let instance = single_stop_instance(2);
        let first_stage =
            FirstStageSolution::new(&instance, vec![1], vec![vec![vec![1], vec![1]]]).unwrap();
        let scenario = demand(&instance, &[(0, 0, 0, 6.0)]);
        let plan = solve_recourse_fixed(&instance, &first_stage, &scenario).unwrap();
        // Four ride now, two wait one interval and ride after the next train:
        // waiting 2 * 10 * 2 plus riding 1 * 5 * 6.
        assert!((plan.assignments[0][0][0][0] - 4.0).abs() < 1e-9);
        assert!((plan.backlog[0][0][0] - 2.0).abs() < 1e-9);
        assert!((plan.assignments[0][1][0][0] - 2.0).abs() < 1e-9);
        assert!((plan.objective_value - 70.0).abs() < 1e-9);
    }

    #[test]
    fn plan_objective_agrees_with_the_domain_pricing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let instance = random_small_instance(&mut rng);
            let first_stage = random_feasible_first_stage(&instance, &mut rng);
            let scenario = random_demand(&instance, &mut rng);
            let plan = solve_recourse_fixed(&instance, &first_stage, &scenario).unwrap();
            let priced = second_stage_cost(&instance, &plan).unwrap();
            assert!(
                (priced.total - plan.objective_value).abs()
                    <= 1e-9 * plan.objective_value.abs().max(1.0)
            );
        }
    }

    #[test]
    fn primal_and_dual_values_agree_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for case in 0..30 {
            let instance = random_small_instance(&mut rng);
            let first_stage = random_feasible_first_stage(&instance, &mut rng);
            let scenario = random_demand(&instance, &mut rng);
            let plan = solve_recourse_fixed(&instance, &first_stage, &scenario).unwrap();
            let certificate = dual_certificate(&instance, &first_stage, &scenario).unwrap();
            let scale = plan.objective_value.abs().max(1.0);
            assert!(
                (plan.objective_value - certificate.value).abs() <= 1e-6 * scale,
                "case {case}: primal {} vs dual {}",
                plan.objective_value,
                certificate.value
            );
            certificate.check_feasible(&instance, 1e-6).unwrap();
            let recomputed = certificate.objective(&instance, &first_stage, &scenario);
            assert!((recomputed - certificate.value).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn dynamic_reoptimization_never_costs_more_than_the_fixed_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..12 {
            let instance = random_small_instance(&mut rng);
            let first_stage = random_feasible_first_stage(&instance, &mut rng);
            let scenario = random_demand(&instance, &mut rng);
            let fixed = solve_recourse_fixed(&instance, &first_stage, &scenario).unwrap();
            let dynamic =
                solve_recourse_dynamic(&instance, &first_stage.fleet, &scenario).unwrap();
            assert!(
                dynamic.plan.objective_value <= fixed.objective_value + 1e-6,
                "dynamic {} vs fixed {}",
                dynamic.plan.objective_value,
                fixed.objective_value
            );
            // The returned schedule must itself be runnable with the fleet.
            let availability =
                vehicle_availability(&instance, &first_stage.fleet, &dynamic.trips).unwrap();
            assert!(matches!(availability, Availability::Feasible(_)));
        }
    }

    #[test]
    fn dynamic_zero_demand_is_free() {
        let instance = tiny_instance();
        let outcome =
            solve_recourse_dynamic(&instance, &[2], &DemandScenario::zero(&instance)).unwrap();
        assert_eq!(outcome.plan.objective_value, 0.0);
        assert!(outcome
            .plan
            .backlog
            .iter()
            .flatten()
            .flatten()
            .all(|&u| u == 0.0));
    }

    #[test]
    fn dynamic_matches_schedule_enumeration_on_the_tiny_instance() {
        let instance = tiny_instance();
        let scenario = demand(&instance, &[(0, 0, 0, 3.0), (0, 0, 1, 1.0), (0, 1, 1, 2.0)]);
        // Independent oracle: enumerate every trip matrix in {0,1,2}^(2x3),
        // keep the availability-feasible ones, and price each with the fixed
        // LP.
        let mut best = f64::INFINITY;
        for code in 0..3u32.pow(6) {
            let mut digits = code;
            let mut trips = vec![vec![0u32; 3]; 2];
            for row in trips.iter_mut() {
                for cell in row.iter_mut() {
                    *cell = digits % 3;
                    digits /= 3;
                }
            }
            let Ok(first_stage) = FirstStageSolution::new(&instance, vec![2], vec![trips]) else {
                continue;
            };
            let plan = solve_recourse_fixed(&instance, &first_stage, &scenario).unwrap();
            best = best.min(plan.objective_value);
        }
        let dynamic = solve_recourse_dynamic(&instance, &[2], &scenario).unwrap();
        assert!(
            (dynamic.plan.objective_value - best).abs() <= 1e-6 * best.max(1.0),
            "dynamic {} vs enumerated {best}",
            dynamic.plan.objective_value
        );
    }

    #[test]
    fn cost_never_drops_when_demand_rises() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let instance = random_small_instance(&mut rng);
            let first_stage = random_feasible_first_stage(&instance, &mut rng);
            let scenario = random_demand(&instance, &mut rng);
            let base = solve_recourse_fixed(&instance, &first_stage, &scenario)
                .unwrap()
                .objective_value;
            let mut bumped = scenario.clone();
            let s = rng.random_range(0..instance.num_regions());
            let i = rng.random_range(0..instance.regions[s].num_trains);
            let j = rng.random_range(0..instance.regions[s].num_stops);
            bumped.demand[s][i][j] += rng.random_range(0.5..=2.0);
            let higher = solve_recourse_fixed(&instance, &first_stage, &bumped)
                .unwrap()
                .objective_value;
            assert!(higher >= base - 1e-9, "{higher} vs {base}");
        }
    }

    #[test]
    fn extra_vehicles_never_hurt_the_dynamic_recourse() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..8 {
            let instance = random_small_instance(&mut rng);
            let scenario = random_demand(&instance, &mut rng);
            let mut small: Vec<u32> = instance.regions.iter().map(|_| 0).collect();
            let budget = instance.fleet_bound.saturating_sub(1).max(1);
            for _ in 0..rng.random_range(0..budget) {
                let s = rng.random_range(0..small.len());
                small[s] += 1;
            }
            let mut large = small.clone();
            let grow = rng.random_range(0..large.len());
            large[grow] += 1;
            let small_value = solve_recourse_dynamic(&instance, &small, &scenario)
                .unwrap()
                .plan
                .objective_value;
            let large_value = solve_recourse_dynamic(&instance, &large, &scenario)
                .unwrap()
                .plan
                .objective_value;
            assert!(large_value <= small_value + 1e-9);
        }
    }

    #[test]
    fn dynamic_rejects_fleets_over_the_bound() {
        let instance = tiny_instance();
        let err = solve_recourse_dynamic(&instance, &[3], &DemandScenario::zero(&instance))
            .unwrap_err();
        assert!(matches!(
            err,
            RecourseError::Domain(DomainError::FleetBoundExceeded { total: 3, bound: 2 })
        ));
    }
}
