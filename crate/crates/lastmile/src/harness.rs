//! Experiment apparatus: out-of-sample evaluation with quantile summaries,
//! replication-based optimality-gap estimation, and sensitivity sweeps over
//! cost and demand grids.

use crate::domain::{
    second_stage_cost, DemandScenario, DomainError, FirstStageSolution, Instance,
};
use crate::dr::{solve_dr_with, DrError, DrOptions};
use crate::milp::{default_backend, Backend, MilpError, SolveStatus, SolverParams};
use crate::recourse::{
    solve_recourse_dynamic_with, solve_recourse_fixed_with, RecourseError,
};
use crate::scenario::{
    derive_seed, estimate_ambiguity, gen_scenarios, quantile_sorted, DemandSpec, ScenarioError,
};
use crate::sp::{solve_sp_with, SaaOptions, SpError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sp(#[from] SpError),
    #[error(transparent)]
    Dr(#[from] DrError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid harness input: {0}")]
    BadInput(String),
    #[error(
        "evaluation aborted at scenario {scenario}: {source} \
         ({} of {total} scenarios completed)", .completed.len()
    )]
    Eval {
        scenario: usize,
        total: usize,
        /// Rows that did finish, so callers can persist a partial file
        /// flagged incomplete.
        completed: Vec<EvaluationRow>,
        source: RecourseError,
    },
}

/// How second-stage costs are priced during evaluation: replaying the
/// planned trip schedule, or re-optimizing trips per scenario with the
/// planned fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    FixedW,
    DynamicW,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::FixedW => "fixed_w",
            EvalMode::DynamicW => "dynamic_w",
        })
    }
}

/// One evaluated scenario: total cost, its second-stage part, and the raw
/// per-region waiting/riding minutes behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub scenario: usize,
    pub total_cost: f64,
    pub second_stage_cost: f64,
    pub twt: Vec<f64>,
    pub trt: Vec<f64>,
}

/// Mean and interpolated quantiles of one report column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub column: String,
    pub mean: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    /// Which planning model produced the evaluated solution.
    pub model: String,
    pub mode: EvalMode,
    /// Seed of the evaluation scenario set, when one applies.
    pub seed: Option<u64>,
    pub num_scenarios: usize,
    pub fixed_cost: f64,
    pub rows: Vec<EvaluationRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn aggregate(column: &str, values: &[f64]) -> AggregateRow {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    AggregateRow {
        column: column.to_string(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        q95: quantile_sorted(&sorted, 0.95),
    }
}

fn aggregate_rows(rows: &[EvaluationRow], regions: usize) -> Vec<AggregateRow> {
    if rows.is_empty() {
        return Vec::new();
    }
    let column = |pick: &dyn Fn(&EvaluationRow) -> f64| -> Vec<f64> {
        rows.iter().map(pick).collect()
    };
    let mut out = vec![
        aggregate("total_cost", &column(&|r| r.total_cost)),
        aggregate(
            "second_stage_cost",
            &column(&|r| r.second_stage_cost),
        ),
    ];
    for s in 0..regions {
        out.push(aggregate(&format!("twt_{s}"), &column(&|r| r.twt[s])));
    }
    for s in 0..regions {
        out.push(aggregate(&format!("trt_{s}"), &column(&|r| r.trt[s])));
    }
    out
}

/// Prices a first-stage solution on every scenario (one recourse solve
/// each, in parallel, order preserved) and aggregates the columns.
pub fn evaluate(
    instance: &Instance,
    first_stage: &FirstStageSolution,
    scenarios: &[DemandScenario],
    mode: EvalMode,
    model: &str,
    seed: Option<u64>,
) -> Result<EvaluationReport, HarnessError> {
    evaluate_with(
        default_backend()?.as_ref(),
        &SolverParams::default(),
        instance,
        first_stage,
        scenarios,
        mode,
        model,
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_with(
    backend: &dyn Backend,
    params: &SolverParams,
    instance: &Instance,
    first_stage: &FirstStageSolution,
    scenarios: &[DemandScenario],
    mode: EvalMode,
    model: &str,
    seed: Option<u64>,
) -> Result<EvaluationReport, HarnessError> {
    if scenarios.is_empty() {
        return Err(HarnessError::BadInput(
            "evaluation needs at least one scenario".into(),
        ));
    }
    let fixed_cost = instance.total_fixed_cost(&first_stage.fleet);
    let results: Vec<Result<EvaluationRow, RecourseError>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(r, scenario)| {
            let plan = match mode {
                EvalMode::FixedW => {
                    solve_recourse_fixed_with(backend, params, instance, first_stage, scenario)?
                }
                EvalMode::DynamicW => {
                    solve_recourse_dynamic_with(
                        backend,
                        params,
                        instance,
                        &first_stage.fleet,
                        scenario,
                    )?
                    .plan
                }
            };
            let breakdown = second_stage_cost(instance, &plan)?;
            Ok(EvaluationRow {
                scenario: r,
                total_cost: fixed_cost + breakdown.total,
                second_stage_cost: breakdown.total,
                twt: breakdown.twt,
                trt: breakdown.trt,
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for (r, result) in results.into_iter().enumerate() {
        match result {
            Ok(row) => rows.push(row),
            Err(source) => {
                return Err(HarnessError::Eval {
                    scenario: r,
                    total: scenarios.len(),
                    completed: rows,
                    source,
                });
            }
        }
    }
    let aggregates = aggregate_rows(&rows, instance.num_regions());
    Ok(EvaluationReport {
        model: model.to_string(),
        mode,
        seed,
        num_scenarios: scenarios.len(),
        fixed_cost,
        rows,
        aggregates,
    })
}

/// Writes per-scenario rows as CSV:
/// `scenario,total_cost,second_stage_cost,twt_0..,trt_0..`.
pub fn write_evaluation_rows(path: &Path, report: &EvaluationReport) -> Result<(), HarnessError> {
    let regions = report.rows.first().map_or(0, |r| r.twt.len());
    let mut writer = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec![
        "scenario".to_string(),
        "total_cost".to_string(),
        "second_stage_cost".to_string(),
    ];
    header.extend((0..regions).map(|s| format!("twt_{s}")));
    header.extend((0..regions).map(|s| format!("trt_{s}")));
    writer.write_record(&header).map_err(csv_io)?;
    for row in &report.rows {
        let mut record = vec![
            row.scenario.to_string(),
            row.total_cost.to_string(),
            row.second_stage_cost.to_string(),
        ];
        record.extend(row.twt.iter().map(f64::to_string));
        record.extend(row.trt.iter().map(f64::to_string));
        writer.write_record(&record).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the aggregate table as CSV: `column,mean,median,q75,q95`.
pub fn write_evaluation_aggregates(
    path: &Path,
    report: &EvaluationReport,
) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_io)?;
    for row in &report.aggregates {
        writer.serialize(row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> HarnessError {
    HarnessError::Io(std::io::Error::other(e))
}

impl EvaluationReport {
    /// Human-readable summary with the aggregate table.
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# Evaluation: {} ({} routing)\n\nScenarios: {}  \nFixed cost: {}  \nSeed: {}\n\n\
             | column | mean | median | 75% | 95% |\n|---|---|---|---|---|\n",
            self.model,
            self.mode,
            self.num_scenarios,
            self.fixed_cost,
            self.seed.map_or("-".into(), |s| s.to_string()),
        );
        for a in &self.aggregates {
            out.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                a.column, a.mean, a.median, a.q75, a.q95
            ));
        }
        out
    }
}

/// Settings for the replication-based optimality-gap estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McoOptions {
    /// Independent training replications (G).
    pub replications: usize,
    /// In-sample scenarios per replication (R).
    pub scenarios_per_replication: usize,
    /// Fresh scenarios for the upper-bound evaluation (N').
    pub eval_scenarios: usize,
    pub confidence: f64,
}

impl Default for McoOptions {
    fn default() -> Self {
        McoOptions {
            replications: 10,
            scenarios_per_replication: 100,
            eval_scenarios: 1000,
            confidence: 0.95,
        }
    }
}

/// Optimality-gap estimate: replication mean of in-sample optima below,
/// out-of-sample cost of the best replication's solution above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McoReport {
    pub lower_bound: f64,
    pub lower_ci: [f64; 2],
    pub upper_bound: f64,
    pub upper_ci: [f64; 2],
    /// (upper - lower) / lower; zero when the bounds coincide.
    pub gap: f64,
    pub confidence: f64,
    pub replication_objectives: Vec<f64>,
    /// Index of the replication whose solution was carried to evaluation
    /// (the one with the lowest in-sample optimum).
    pub chosen_replication: usize,
    /// Set when any replication stopped at the time limit, so its optimum
    /// is only an incumbent value.
    pub degraded: bool,
}

pub fn save_mco(path: &Path, report: &McoReport) -> Result<(), DomainError> {
    std::fs::write(path, crate::domain::to_versioned_json(report)?)?;
    Ok(())
}

pub fn load_mco(path: &Path) -> Result<McoReport, DomainError> {
    let text = std::fs::read_to_string(path)?;
    crate::domain::from_versioned_json(&text, "mco report")
}

/// Two-sided standard-normal critical value for the given confidence level
/// (Acklam's rational approximation of the normal quantile).
fn normal_critical(confidence: f64) -> f64 {
    let p = 0.5 + confidence / 2.0;
    // Coefficients of Acklam's inverse-CDF approximation, |rel err| < 1.15e-9.
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let plow = 0.02425;
    if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

fn mean_and_ci(values: &[f64], confidence: f64) -> (f64, [f64; 2]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half = if values.len() >= 2 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        normal_critical(confidence) * (var / n).sqrt()
    } else {
        0.0
    };
    (mean, [mean - half, mean + half])
}

/// Estimates the optimality gap of sample-average planning on this demand
/// model: solves `replications` independent in-sample problems for the
/// statistical lower bound, then prices the best replication's solution on
/// fresh scenarios (planned trips replayed as committed) for the upper
/// bound.
pub fn mco_gap(
    instance: &Instance,
    means: &[Vec<Vec<f64>>],
    demand: &DemandSpec,
    opts: &McoOptions,
    params: &SolverParams,
) -> Result<McoReport, HarnessError> {
    mco_gap_with(
        default_backend()?.as_ref(),
        instance,
        means,
        demand,
        opts,
        params,
    )
}

pub fn mco_gap_with(
    backend: &dyn Backend,
    instance: &Instance,
    means: &[Vec<Vec<f64>>],
    demand: &DemandSpec,
    opts: &McoOptions,
    params: &SolverParams,
) -> Result<McoReport, HarnessError> {
    if opts.replications < 2 {
        return Err(HarnessError::BadInput(format!(
            "gap estimation needs at least 2 replications, got {}",
            opts.replications
        )));
    }
    if opts.scenarios_per_replication == 0 || opts.eval_scenarios == 0 {
        return Err(HarnessError::BadInput(
            "replication and evaluation sample sizes must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&opts.confidence) {
        return Err(HarnessError::BadInput(format!(
            "confidence {} must lie in (0, 1)",
            opts.confidence
        )));
    }
    let mut objectives = Vec::with_capacity(opts.replications);
    let mut solutions = Vec::with_capacity(opts.replications);
    let mut degraded = false;
    for g in 0..opts.replications {
        let rep_spec = DemandSpec {
            seed: derive_seed(demand.seed, "mco-train", g as u64),
            ..demand.clone()
        };
        let scenarios = gen_scenarios(
            instance,
            means,
            &rep_spec,
            opts.scenarios_per_replication,
        )?;
        let solved = solve_sp_with(
            backend,
            instance,
            &scenarios,
            &SaaOptions::default(),
            params,
        )?;
        degraded |= solved.outcome.status == SolveStatus::FeasibleTimeLimit;
        objectives.push(
            solved
                .outcome
                .objective_value
                .expect("accepted statuses carry an objective"),
        );
        solutions.push(solved.first_stage);
    }
    let chosen = objectives
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(g, _)| g)
        .expect("at least two replications");
    let (lower_bound, lower_ci) = mean_and_ci(&objectives, opts.confidence);

    let eval_spec = DemandSpec {
        seed: derive_seed(demand.seed, "mco-eval", 0),
        ..demand.clone()
    };
    let eval_scenarios = gen_scenarios(instance, means, &eval_spec, opts.eval_scenarios)?;
    let report = evaluate_with(
        backend,
        params,
        instance,
        &solutions[chosen],
        &eval_scenarios,
        EvalMode::FixedW,
        "sp",
        Some(eval_spec.seed),
    )?;
    let totals: Vec<f64> = report.rows.iter().map(|r| r.total_cost).collect();
    let (upper_bound, upper_ci) = mean_and_ci(&totals, opts.confidence);
    let gap = if upper_bound == lower_bound {
        0.0
    } else {
        (upper_bound - lower_bound) / lower_bound
    };
    Ok(McoReport {
        lower_bound,
        lower_ci,
        upper_bound,
        upper_ci,
        gap,
        confidence: opts.confidence,
        replication_objectives: objectives,
        chosen_replication: chosen,
        degraded,
    })
}

impl McoReport {
    pub fn to_markdown(&self) -> String {
        format!(
            "# Optimality gap estimate\n\n\
             | bound | estimate | {:.0}% CI |\n|---|---|---|\n\
             | lower (replication mean) | {:.4} | [{:.4}, {:.4}] |\n\
             | upper (out-of-sample) | {:.4} | [{:.4}, {:.4}] |\n\n\
             Relative gap: {:.4}% over {} replications{}\n",
            self.confidence * 100.0,
            self.lower_bound,
            self.lower_ci[0],
            self.lower_ci[1],
            self.upper_bound,
            self.upper_ci[0],
            self.upper_ci[1],
            self.gap * 100.0,
            self.replication_objectives.len(),
            if self.degraded {
                " (degraded: a replication hit the time limit)"
            } else {
                ""
            },
        )
    }
}

/// Base setting a sweep perturbs: the instance's costs and fleet bound plus
/// the demand spec's mean range are overridden per grid point.
#[derive(Debug, Clone)]
pub struct SweepTemplate {
    pub instance: Instance,
    pub demand: DemandSpec,
    /// In-sample scenarios per point.
    pub in_sample: usize,
    /// Evaluation scenarios per point.
    pub eval: usize,
    pub q_lo: f64,
    pub q_hi: f64,
    pub eval_mode: EvalMode,
}

/// Grid axes; an empty axis keeps the template's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrids {
    pub mean_ranges: Vec<[f64; 2]>,
    pub fixed_costs: Vec<f64>,
    /// (waiting, riding) weight pairs.
    pub time_weights: Vec<[f64; 2]>,
    pub fleet_bounds: Vec<u32>,
}

/// One long-format record: a single metric of a single model at one grid
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub fixed_cost: f64,
    pub wait_weight: f64,
    pub ride_weight: f64,
    pub fleet_bound: u32,
    pub model: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Grid points that failed, with their error; the sweep continues past
    /// them.
    pub failures: Vec<String>,
    /// Soft-check log: points where the better-protected model did not show
    /// the lower evaluated second-stage mean.
    pub dominance_log: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
struct GridPoint {
    mean_range: [f64; 2],
    fixed_cost: f64,
    wait_weight: f64,
    ride_weight: f64,
    fleet_bound: u32,
}

fn grid_points(template: &SweepTemplate, grids: &SweepGrids) -> Vec<GridPoint> {
    let mean_ranges = if grids.mean_ranges.is_empty() {
        vec![template.demand.mean_range]
    } else {
        grids.mean_ranges.clone()
    };
    let fixed_costs = if grids.fixed_costs.is_empty() {
        vec![template.instance.costs.fixed_cost(0)]
    } else {
        grids.fixed_costs.clone()
    };
    let time_weights = if grids.time_weights.is_empty() {
        vec![[
            template.instance.costs.wait_weight,
            template.instance.costs.ride_weight,
        ]]
    } else {
        grids.time_weights.clone()
    };
    let fleet_bounds = if grids.fleet_bounds.is_empty() {
        vec![template.instance.fleet_bound]
    } else {
        grids.fleet_bounds.clone()
    };
    let mut points = Vec::new();
    for &mean_range in &mean_ranges {
        for &fixed_cost in &fixed_costs {
            for &[wait_weight, ride_weight] in &time_weights {
                for &fleet_bound in &fleet_bounds {
                    points.push(GridPoint {
                        mean_range,
                        fixed_cost,
                        wait_weight,
                        ride_weight,
                        fleet_bound,
                    });
                }
            }
        }
    }
    points
}

struct PointResult {
    rows: Vec<SweepRow>,
    dominance: Option<String>,
}

fn run_point(
    backend: &dyn Backend,
    params: &SolverParams,
    template: &SweepTemplate,
    experiment: &str,
    index: usize,
    point: &GridPoint,
) -> Result<PointResult, HarnessError> {
    let mut instance = template.instance.clone();
    instance.costs = crate::domain::CostParams::uniform(
        point.fixed_cost,
        point.wait_weight,
        point.ride_weight,
    );
    instance.fleet_bound = point.fleet_bound;
    let demand = DemandSpec {
        mean_range: point.mean_range,
        seed: derive_seed(template.demand.seed, "sweep-train", index as u64),
        ..template.demand.clone()
    };
    let means = crate::scenario::draw_means(&instance, &demand)?;
    let in_sample = gen_scenarios(&instance, &means, &demand, template.in_sample)?;
    let amb = estimate_ambiguity(&in_sample, template.q_lo, template.q_hi)?;

    let sp = solve_sp_with(backend, &instance, &in_sample, &SaaOptions::default(), params)?;
    let dr = solve_dr_with(backend, &instance, &amb, &DrOptions::default(), params)?;

    let eval_spec = DemandSpec {
        seed: derive_seed(template.demand.seed, "sweep-eval", index as u64),
        ..demand.clone()
    };
    let eval_set = gen_scenarios(&instance, &means, &eval_spec, template.eval)?;

    let mut rows = Vec::new();
    let mut second_stage_means = [0.0f64; 2];
    for (slot, (model, first_stage)) in [("sp", &sp.first_stage), ("dr", &dr.first_stage)]
        .into_iter()
        .enumerate()
    {
        let report = evaluate_with(
            backend,
            params,
            &instance,
            first_stage,
            &eval_set,
            template.eval_mode,
            model,
            Some(eval_spec.seed),
        )?;
        let avg_second = report
            .aggregates
            .iter()
            .find(|a| a.column == "second_stage_cost")
            .map_or(0.0, |a| a.mean);
        second_stage_means[slot] = avg_second;
        let fleet_size: u32 = first_stage.fleet.iter().sum();
        let point_rows = [
            ("fleet_size", f64::from(fleet_size)),
            ("avg_second_stage", avg_second),
            ("avg_total_cost", report.fixed_cost + avg_second),
        ];
        for (metric, value) in point_rows {
            rows.push(SweepRow {
                experiment: experiment.to_string(),
                mean_lo: point.mean_range[0],
                mean_hi: point.mean_range[1],
                fixed_cost: point.fixed_cost,
                wait_weight: point.wait_weight,
                ride_weight: point.ride_weight,
                fleet_bound: point.fleet_bound,
                model: model.to_string(),
                metric: metric.to_string(),
                value,
            });
        }
    }
    let sp_fleet: u32 = sp.first_stage.fleet.iter().sum();
    let dr_fleet: u32 = dr.first_stage.fleet.iter().sum();
    let dominance = (template.eval_mode == EvalMode::DynamicW
        && dr_fleet >= sp_fleet
        && second_stage_means[1] > second_stage_means[0])
        .then(|| {
            format!(
                "point {index}: dr fleet {dr_fleet} >= sp fleet {sp_fleet} but dr \
                 second-stage mean {:.4} > sp {:.4}",
                second_stage_means[1], second_stage_means[0]
            )
        });
    Ok(PointResult { rows, dominance })
}

/// Runs the full plan-then-evaluate pipeline for both models at every grid
/// point (cartesian product of the axes), sharing evaluation scenarios
/// between models at each point. Per-point failures are recorded and the
/// sweep continues.
pub fn sensitivity_sweep(
    template: &SweepTemplate,
    grids: &SweepGrids,
    experiment: &str,
    params: &SolverParams,
) -> Result<SweepOutcome, HarnessError> {
    sensitivity_sweep_with(default_backend()?.as_ref(), template, grids, experiment, params)
}

pub fn sensitivity_sweep_with(
    backend: &dyn Backend,
    template: &SweepTemplate,
    grids: &SweepGrids,
    experiment: &str,
    params: &SolverParams,
) -> Result<SweepOutcome, HarnessError> {
    let points = grid_points(template, grids);
    let results: Vec<Result<PointResult, HarnessError>> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| run_point(backend, params, template, experiment, index, point))
        .collect();
    let mut outcome = SweepOutcome::default();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok(point_result) => {
                outcome.rows.extend(point_result.rows);
                outcome.dominance_log.extend(point_result.dominance);
            }
            Err(err) => outcome.failures.push(format!("point {index}: {err}")),
        }
    }
    Ok(outcome)
}

/// Writes sweep rows as long-format CSV:
/// `experiment,mean_lo,mean_hi,fixed_cost,wait_weight,ride_weight,fleet_bound,model,metric,value`.
pub fn write_sweep_rows(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_io)?;
    for row in rows {
        writer.serialize(row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}
