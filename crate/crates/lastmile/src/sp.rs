//! Sample-average model of the two-stage fleet sizing and allocation
//! problem: one copy of the assignment block per demand scenario, shared
//! integer sizing and scheduling variables, and a probability-weighted
//! second-stage objective on top of the fixed vehicle cost.

use crate::domain::{
    from_versioned_json, to_versioned_json, DemandScenario, DomainError, FirstStageSolution,
    Instance,
};
use crate::milp::{
    default_backend, Backend, Cmp, LinearModel, MilpError, Sense, SolveOutcome, SolveStatus,
    SolverParams, VarId, VarKind,
};
use crate::recourse::{
    add_assignment_block, cumulative_route_demand, solve_recourse_fixed_with, RecourseError,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Relative tolerance for the built-in re-verification of a solve's
/// objective against per-scenario recourse values.
pub const VERIFY_REL_TOL: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum SpError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Recourse(#[from] RecourseError),
    #[error("{context}: solver returned {status}")]
    Solver { context: String, status: SolveStatus },
    #[error("scenario weights invalid: {0}")]
    BadWeights(String),
    #[error("at least one scenario is required")]
    NoScenarios,
    #[error(
        "objective {model_objective} does not decompose into fixed cost plus weighted recourse \
         values ({recomputed}); the model and the recourse solver disagree"
    )]
    VerificationMismatch { model_objective: f64, recomputed: f64 },
}

/// Options for the sample-average model build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaaOptions {
    /// Restrict multi-stop routes to at most one trip per train. Any optimum
    /// of the unrestricted model can be rearranged onto singleton routes
    /// (which arrive no later, stop for stop) until multi-stop trip counts
    /// are binary, so the optimal value is unchanged.
    pub apply_prop1_tightening: bool,
    /// Per-scenario probabilities; uniform when absent.
    pub scenario_weights: Option<Vec<f64>>,
}

impl Default for SaaOptions {
    fn default() -> Self {
        SaaOptions {
            apply_prop1_tightening: true,
            scenario_weights: None,
        }
    }
}

impl SaaOptions {
    /// Validated weight vector for `len` scenarios.
    pub(crate) fn weights(&self, len: usize) -> Result<Vec<f64>, SpError> {
        match &self.scenario_weights {
            None => Ok(vec![1.0 / len as f64; len]),
            Some(weights) => {
                if weights.len() != len {
                    return Err(SpError::BadWeights(format!(
                        "{} weights for {len} scenarios",
                        weights.len()
                    )));
                }
                if weights.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(SpError::BadWeights("negative or non-finite weight".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(SpError::BadWeights(format!("weights sum to {total}")));
                }
                Ok(weights.clone())
            }
        }
    }
}

/// Variable ids of a built sample-average model, in the canonical layout:
/// `m[s]`, `w[s][i][k]`, `v[s][i]`, and per scenario `u[r][s][i][j]`,
/// `z[r][s][i][k][p]` (p over route k's served stops, ascending).
pub struct SaaIndex {
    pub m: Vec<VarId>,
    pub w: Vec<Vec<Vec<VarId>>>,
    pub v: Vec<Vec<VarId>>,
    pub u: Vec<Vec<Vec<Vec<VarId>>>>,
    pub z: Vec<Vec<Vec<Vec<Vec<VarId>>>>>,
}

pub struct SaaModel {
    pub model: LinearModel,
    pub index: SaaIndex,
}

/// Declares the sizing variables `m` and the scheduling block (`w`, `v`,
/// fleet bound, availability recursion) shared by the sample-average and
/// distributionally robust models. Multi-stop trip counts become binary when
/// `tighten` is set. `w_caps`, when given, supplies per-`[s][i][k]` upper
/// bounds on trip counts; callers must only pass bounds that leave at least
/// one optimum intact (see [`build_saa`]).
pub(crate) fn add_first_stage_block(
    model: &mut LinearModel,
    instance: &Instance,
    tighten: bool,
    w_caps: Option<&[Vec<Vec<f64>>]>,
) -> (Vec<VarId>, Vec<Vec<Vec<VarId>>>, Vec<Vec<VarId>>) {
    let bound = f64::from(instance.fleet_bound);
    let m: Vec<VarId> = (0..instance.num_regions())
        .map(|s| {
            model.add_var(
                format!("m[{s}]"),
                VarKind::Integer,
                0.0,
                bound,
                instance.fixed_cost(s),
            )
        })
        .collect();
    model.add_constraint(m.iter().map(|&id| (id, 1.0)).collect(), Cmp::Le, bound);
    let mut w = Vec::with_capacity(instance.num_regions());
    let mut v = Vec::with_capacity(instance.num_regions());
    for (s, region) in instance.regions.iter().enumerate() {
        let w_region: Vec<Vec<VarId>> = (0..region.num_trains)
            .map(|i| {
                region
                    .routes
                    .iter()
                    .enumerate()
                    .map(|(k, route)| {
                        let (kind, upper) = if tighten && route.is_multi_stop() {
                            (VarKind::Binary, 1.0)
                        } else {
                            (VarKind::Integer, bound)
                        };
                        let upper = match w_caps {
                            Some(caps) => upper.min(caps[s][i][k]),
                            None => upper,
                        };
                        model.add_var(format!("w[{i},{k},{s}]"), kind, 0.0, upper, 0.0)
                    })
                    .collect()
            })
            .collect();
        let v_region: Vec<VarId> = (0..region.num_trains)
            .map(|i| {
                model.add_var(format!("v[{i},{s}]"), VarKind::Continuous, 0.0, bound, 0.0)
            })
            .collect();
        for i in 0..region.num_trains {
            // v[i] = (previous availability) - departures + finished returns
            let mut terms = vec![(v_region[i], 1.0)];
            for (k, route) in region.routes.iter().enumerate() {
                terms.push((w_region[i][k], 1.0));
                if i >= route.total_duration_intervals {
                    terms.push((w_region[i - route.total_duration_intervals][k], -1.0));
                }
            }
            if i > 0 {
                terms.push((v_region[i - 1], -1.0));
            } else {
                terms.push((m[s], -1.0));
            }
            model.add_constraint(terms, Cmp::Eq, 0.0);
        }
        w.push(w_region);
        v.push(v_region);
    }
    (m, w, v)
}

/// Builds the deterministic equivalent over the given scenarios.
pub fn build_saa(
    instance: &Instance,
    scenarios: &[DemandScenario],
    opts: &SaaOptions,
) -> Result<SaaModel, SpError> {
    if scenarios.is_empty() {
        return Err(SpError::NoScenarios);
    }
    let weights = opts.weights(scenarios.len())?;
    for scenario in scenarios {
        scenario.check_dims(instance)?;
    }
    let mut model = LinearModel::new("saa", Sense::Minimize);
    let capacity = f64::from(instance.vehicle_capacity);
    // A trip beyond ceil(arrived-so-far / seats) rides empty in every sampled
    // scenario; dropping it only frees vehicles, so some optimum survives the
    // cap. Taking the max over scenarios keeps that argument scenario-free.
    let w_caps: Vec<Vec<Vec<f64>>> = instance
        .regions
        .iter()
        .enumerate()
        .map(|(s, region)| {
            let mut caps = vec![vec![0.0_f64; region.routes.len()]; region.num_trains];
            for scenario in scenarios {
                let cum = cumulative_route_demand(region, &scenario.demand[s]);
                for i in 0..region.num_trains {
                    for k in 0..region.routes.len() {
                        caps[i][k] = caps[i][k].max((cum[i][k] / capacity).ceil());
                    }
                }
            }
            caps
        })
        .collect();
    let (m, w, v) =
        add_first_stage_block(&mut model, instance, opts.apply_prop1_tightening, Some(&w_caps));
    let mut u = Vec::with_capacity(scenarios.len());
    let mut z = Vec::with_capacity(scenarios.len());
    for (r, (scenario, &weight)) in scenarios.iter().zip(&weights).enumerate() {
        let mut u_rep = Vec::with_capacity(instance.num_regions());
        let mut z_rep = Vec::with_capacity(instance.num_regions());
        for (s, region) in instance.regions.iter().enumerate() {
            let vars =
                add_assignment_block(&mut model, instance, s, r, &scenario.demand[s], weight);
            for i in 0..region.num_trains {
                for k in 0..region.routes.len() {
                    let mut terms: Vec<(VarId, f64)> =
                        vars.z[i][k].iter().map(|&id| (id, 1.0)).collect();
                    terms.push((w[s][i][k], -capacity));
                    model.add_constraint(terms, Cmp::Le, 0.0);
                }
            }
            u_rep.push(vars.u);
            z_rep.push(vars.z);
        }
        u.push(u_rep);
        z.push(z_rep);
    }
    Ok(SaaModel {
        model,
        index: SaaIndex { m, w, v, u, z },
    })
}

/// First-stage decisions plus the raw solve outcome.
pub struct SpSolution {
    pub first_stage: FirstStageSolution,
    pub outcome: SolveOutcome,
}

/// Solves the sample-average model and re-verifies the reported objective by
/// re-pricing every scenario's recourse at the returned first stage.
pub fn solve_sp(
    instance: &Instance,
    scenarios: &[DemandScenario],
    opts: &SaaOptions,
    params: &SolverParams,
) -> Result<SpSolution, SpError> {
    solve_sp_with(default_backend()?.as_ref(), instance, scenarios, opts, params)
}

pub fn solve_sp_with(
    backend: &dyn Backend,
    instance: &Instance,
    scenarios: &[DemandScenario],
    opts: &SaaOptions,
    params: &SolverParams,
) -> Result<SpSolution, SpError> {
    let built = build_saa(instance, scenarios, opts)?;
    let outcome = backend.solve(&built.model, params)?;
    if !matches!(
        outcome.status,
        SolveStatus::Optimal | SolveStatus::FeasibleTimeLimit
    ) {
        // m = 0, w = 0, everything backlogged is always feasible, so
        // infeasibility would mean a build bug, and the rest are solver
        // failures either way.
        return Err(SpError::Solver {
            context: "sample-average model".into(),
            status: outcome.status,
        });
    }
    let first_stage = extract_first_stage(instance, &built, &outcome)?;
    let weights = opts.weights(scenarios.len())?;
    verify_decomposition(
        backend,
        params,
        instance,
        &first_stage,
        scenarios,
        &weights,
        outcome.objective_value.expect("status carries values"),
    )?;
    Ok(SpSolution {
        first_stage,
        outcome,
    })
}

pub(crate) fn extract_first_stage(
    instance: &Instance,
    built: &SaaModel,
    outcome: &SolveOutcome,
) -> Result<FirstStageSolution, SpError> {
    let fleet = built
        .index
        .m
        .iter()
        .map(|&id| outcome.int_value(&built.model, id).map(|m| m as u32))
        .collect::<Result<Vec<u32>, _>>()?;
    let trips = built
        .index
        .w
        .iter()
        .map(|region| {
            region
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&id| outcome.int_value(&built.model, id).map(|w| w as u32))
                        .collect::<Result<Vec<u32>, _>>()
                })
                .collect::<Result<Vec<Vec<u32>>, _>>()
        })
        .collect::<Result<Vec<Vec<Vec<u32>>>, _>>()?;
    Ok(FirstStageSolution::new(instance, fleet, trips)?)
}

/// Checks that `model_objective` equals fixed cost plus the weighted
/// per-scenario recourse optima within [`VERIFY_REL_TOL`].
pub(crate) fn verify_decomposition(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    first_stage: &FirstStageSolution,
    scenarios: &[DemandScenario],
    weights: &[f64],
    model_objective: f64,
) -> Result<(), SpError> {
    let mut recomputed = instance.total_fixed_cost(&first_stage.fleet);
    for (scenario, &weight) in scenarios.iter().zip(weights) {
        let plan = solve_recourse_fixed_with(backend, params, instance, first_stage, scenario)?;
        recomputed += weight * plan.objective_value;
    }
    if (model_objective - recomputed).abs() > VERIFY_REL_TOL * model_objective.abs().max(1.0) {
        return Err(SpError::VerificationMismatch {
            model_objective,
            recomputed,
        });
    }
    Ok(())
}

/// On-disk record of a planning solve: the first-stage decisions with enough
/// solve metadata to reproduce and audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    /// Which planner produced it: "sp" or "dr".
    pub model: String,
    pub status: String,
    pub objective_value: f64,
    pub best_bound: Option<f64>,
    pub rel_gap: Option<f64>,
    pub wall_time_seconds: f64,
    pub fleet: Vec<u32>,
    pub trips: Vec<Vec<Vec<u32>>>,
}

impl SolutionFile {
    pub fn new(model: &str, solution: &FirstStageSolution, outcome: &SolveOutcome) -> Self {
        SolutionFile {
            model: model.to_string(),
            status: outcome.status.to_string(),
            objective_value: outcome.objective_value.unwrap_or(f64::NAN),
            best_bound: outcome.best_bound,
            rel_gap: outcome.rel_gap(),
            wall_time_seconds: outcome.wall_time_seconds,
            fleet: solution.fleet.clone(),
            trips: solution.trips.clone(),
        }
    }

    /// Rebuilds the first stage against an instance, re-deriving and
    /// re-checking vehicle availability.
    pub fn first_stage(&self, instance: &Instance) -> Result<FirstStageSolution, DomainError> {
        FirstStageSolution::new(instance, self.fleet.clone(), self.trips.clone())
    }
}

pub fn save_solution(path: &Path, solution: &SolutionFile) -> Result<(), DomainError> {
    std::fs::write(path, to_versioned_json(solution)?)?;
    Ok(())
}

pub fn load_solution(path: &Path) -> Result<SolutionFile, DomainError> {
    let text = std::fs::read_to_string(path)?;
    from_versioned_json(&text, "solution")
}

/// One row of the append-only solve log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveLogRow {
    pub model: String,
    pub status: String,
    pub objective: f64,
    pub best_bound: Option<f64>,
    pub rel_gap: Option<f64>,
    pub wall_time_seconds: f64,
}

impl SolveLogRow {
    pub fn new(model: &str, outcome: &SolveOutcome) -> Self {
        SolveLogRow {
            model: model.to_string(),
            status: outcome.status.to_string(),
            objective: outcome.objective_value.unwrap_or(f64::NAN),
            best_bound: outcome.best_bound,
            rel_gap: outcome.rel_gap(),
            wall_time_seconds: outcome.wall_time_seconds,
        }
    }
}

/// Appends a row to the solve log, writing the header on first use.
pub fn append_solve_log(path: &Path, row: &SolveLogRow) -> Result<(), DomainError> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    writer.serialize(row)?;
    writer.flush().map_err(std::io::Error::from)?;
    Ok(())
}
