//! Command-line entry point: thin adapters from flags and config files to
//! the library calls, with stable exit codes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
//! files, invalid inputs), 3 solver failure (infeasible, unbounded, backend
//! missing, or a time limit with no incumbent). Every failure prints one
//! `error[class]: message` line to stderr; every success prints one JSON
//! status line to stdout.

use crate::domain::{
    load_instance, load_scenarios, save_instance, save_scenarios, DomainError, Instance,
};
use crate::dr::{DrError, DrOptions, RhoMode};
use crate::harness::{
    evaluate_with, mco_gap_with, sensitivity_sweep_with, write_evaluation_aggregates,
    write_evaluation_rows, write_sweep_rows, EvalMode, EvaluationReport, HarnessError,
    McoOptions, SweepGrids, SweepTemplate,
};
use crate::ingest::{ingest_instance, load_ingest_config, load_trips, write_stop_stats, IngestError};
use crate::milp::{backend_from_name, default_backend, Backend, MilpError, SolverParams};
use crate::recourse::RecourseError;
use crate::scenario::{
    draw_means, estimate_ambiguity, gen_scenarios, load_ambiguity, load_demand_spec,
    save_ambiguity, DemandFamily, DemandSpec, Rounding, ScenarioError,
};
use crate::sp::{
    append_solve_log, save_solution, SaaOptions, SolutionFile, SolveLogRow, SpError,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_SOLVER: i32 = 3;

/// A classified failure: the class picks the exit code and prefixes the
/// one-line diagnostic.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Solver(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }

    fn render(&self) -> String {
        let (class, message) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Solver(m) => ("solver", m),
        };
        format!("error[{class}]: {}", message.replace('\n', "; "))
    }
}

fn one_line(err: impl std::fmt::Display) -> String {
    err.to_string().replace('\n', "; ")
}

impl From<DomainError> for CliError {
    fn from(err: DomainError) -> Self {
        CliError::Data(one_line(err))
    }
}

impl From<ScenarioError> for CliError {
    fn from(err: ScenarioError) -> Self {
        CliError::Data(one_line(err))
    }
}

impl From<IngestError> for CliError {
    fn from(err: IngestError) -> Self {
        CliError::Data(one_line(err))
    }
}

impl From<MilpError> for CliError {
    fn from(err: MilpError) -> Self {
        match err {
            MilpError::MalformedModel(_) => CliError::Data(one_line(err)),
            _ => CliError::Solver(one_line(err)),
        }
    }
}

impl From<RecourseError> for CliError {
    fn from(err: RecourseError) -> Self {
        match err {
            RecourseError::Domain(e) => e.into(),
            RecourseError::Milp(e) => e.into(),
            RecourseError::Solver { .. } => CliError::Solver(one_line(err)),
        }
    }
}

impl From<SpError> for CliError {
    fn from(err: SpError) -> Self {
        match err {
            SpError::Domain(e) => e.into(),
            SpError::Milp(e) => e.into(),
            SpError::Recourse(e) => e.into(),
            SpError::BadWeights(_) | SpError::NoScenarios => CliError::Data(one_line(err)),
            SpError::Solver { .. } | SpError::VerificationMismatch { .. } => {
                CliError::Solver(one_line(err))
            }
        }
    }
}

impl From<DrError> for CliError {
    fn from(err: DrError) -> Self {
        match err {
            DrError::Domain(e) => e.into(),
            DrError::Milp(e) => e.into(),
            DrError::InvalidAmbiguity(_) => CliError::Data(one_line(err)),
            DrError::Solver { .. } | DrError::Unbounded { .. } => CliError::Solver(one_line(err)),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(err: HarnessError) -> Self {
        match err {
            HarnessError::Domain(e) => e.into(),
            HarnessError::Milp(e) => e.into(),
            HarnessError::Scenario(e) => e.into(),
            HarnessError::Sp(e) => e.into(),
            HarnessError::Dr(e) => e.into(),
            HarnessError::Io(e) => CliError::Data(one_line(e)),
            HarnessError::BadInput(m) => CliError::Usage(m),
            HarnessError::Eval { .. } => CliError::Solver(one_line(err)),
        }
    }
}

/// Shared defaults loadable from a TOML file; flags override these, these
/// override built-in defaults. Referenced paths must exist at load time and
/// unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub instance: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub ambiguity: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub solver: Option<SolverConfig>,
    pub demand: Option<DemandSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub time_limit_seconds: Option<f64>,
    pub rel_gap_target: Option<f64>,
    pub seed: Option<i32>,
    pub backend: Option<String>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliErrorPublic> {
    load_run_config_inner(path).map_err(CliErrorPublic)
}

/// Opaque wrapper so the error enum can stay private.
#[derive(Debug)]
pub struct CliErrorPublic(CliError);

impl std::fmt::Display for CliErrorPublic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.render())
    }
}

fn load_run_config_inner(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), one_line(e))))?;
    for (name, p) in [
        ("instance", &config.instance),
        ("scenarios", &config.scenarios),
        ("ambiguity", &config.ambiguity),
    ] {
        if let Some(p) = p {
            if !p.exists() {
                return Err(CliError::Data(format!(
                    "config {name} path {} does not exist",
                    p.display()
                )));
            }
        }
    }
    Ok(config)
}

#[derive(Parser, Debug)]
#[command(
    name = "lastmile",
    version,
    about = "Fleet sizing and allocation for last-mile transit under uncertain batch demand"
)]
struct Cli {
    /// TOML file of shared defaults (paths, solver params, demand spec).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Concurrency budget for scenario evaluation and sweeps (the MILP
    /// solver itself always runs single-threaded so results do not depend
    /// on this).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark instance.
    GenInstance(GenInstanceArgs),
    /// Build an instance and empirical scenarios from raw trip records.
    Ingest(IngestArgs),
    /// Draw demand scenarios around sampled per-cell means.
    GenScenarios(GenScenariosArgs),
    /// Estimate per-cell mean and quantile bounds from scenarios.
    EstimateAmbiguity(EstimateAmbiguityArgs),
    /// Solve the sample-average two-stage model.
    SolveSp(SolveSpArgs),
    /// Solve the distributionally robust model.
    SolveDr(SolveDrArgs),
    /// Price a saved solution on evaluation scenarios.
    Evaluate(EvaluateArgs),
    /// Estimate the sampling optimality gap by replication.
    McoGap(McoGapArgs),
    /// Sweep cost and demand grids, emitting long-format results.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Wall-clock limit per solve, in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Relative MIP gap target.
    #[arg(long)]
    gap: Option<f64>,
    /// Solver random seed.
    #[arg(long)]
    solver_seed: Option<i32>,
    /// Solver backend (also honors the LASTMILE_SOLVER environment
    /// variable).
    #[arg(long)]
    backend: Option<String>,
}

impl SolverArgs {
    fn params(&self, config: &RunConfig) -> SolverParams {
        let mut params = SolverParams::default();
        if let Some(solver) = &config.solver {
            if let Some(t) = solver.time_limit_seconds {
                params.time_limit_seconds = t;
            }
            if let Some(g) = solver.rel_gap_target {
                params.rel_gap_target = g;
            }
            if let Some(s) = solver.seed {
                params.seed = s;
            }
        }
        if let Some(t) = self.time_limit {
            params.time_limit_seconds = t;
        }
        if let Some(g) = self.gap {
            params.rel_gap_target = g;
        }
        if let Some(s) = self.solver_seed {
            params.seed = s;
        }
        params
    }

    fn backend(&self, config: &RunConfig) -> Result<Box<dyn Backend>, CliError> {
        let name = self
            .backend
            .clone()
            .or_else(|| config.solver.as_ref().and_then(|s| s.backend.clone()));
        Ok(match name {
            Some(name) => backend_from_name(&name)?,
            None => default_backend()?,
        })
    }
}

/// Demand-spec fields as flags; anything unset falls back to `--config`'s
/// `[demand]` table, then to the documented defaults.
#[derive(Args, Debug, Clone)]
struct DemandArgs {
    /// Demand spec TOML/JSON file (overrides the run config's [demand]).
    #[arg(long)]
    demand_config: Option<PathBuf>,
    /// Lower end of the per-cell mean range.
    #[arg(long)]
    mean_lo: Option<f64>,
    /// Upper end of the per-cell mean range.
    #[arg(long)]
    mean_hi: Option<f64>,
    /// Per-cell standard deviation as a fraction of the mean.
    #[arg(long)]
    sigma_ratio: Option<f64>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long, value_enum)]
    rounding: Option<RoundingArg>,
    /// Root seed for demand draws.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FamilyArg {
    Lognormal,
    Uniform,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum RoundingArg {
    #[value(name = "nearest_int", alias = "nearest-int")]
    NearestInt,
    None,
}

/// The resolved spec plus whether the seed was chosen by entropy (callers
/// must then surface it).
struct ResolvedDemand {
    spec: DemandSpec,
    seed_was_generated: bool,
}

impl DemandArgs {
    fn resolve(&self, config: &RunConfig) -> Result<ResolvedDemand, CliError> {
        let mut spec = if let Some(path) = &self.demand_config {
            load_demand_spec(path)?
        } else if let Some(spec) = &config.demand {
            spec.clone()
        } else {
            DemandSpec::default()
        };
        if let Some(lo) = self.mean_lo {
            spec.mean_range[0] = lo;
        }
        if let Some(hi) = self.mean_hi {
            spec.mean_range[1] = hi;
        }
        if let Some(r) = self.sigma_ratio {
            spec.sigma_ratio = r;
        }
        if let Some(f) = self.family {
            spec.family = match f {
                FamilyArg::Lognormal => DemandFamily::Lognormal,
                FamilyArg::Uniform => DemandFamily::Uniform,
            };
        }
        if let Some(r) = self.rounding {
            spec.rounding = match r {
                RoundingArg::NearestInt => Rounding::NearestInt,
                RoundingArg::None => Rounding::None,
            };
        }
        let mut seed_was_generated = false;
        if let Some(seed) = self.seed.or(config.seed) {
            spec.seed = seed;
        } else if self.demand_config.is_none() && config.demand.is_none() {
            // No explicit seed from any source: draw one and surface it in
            // the status metadata rather than defaulting silently.
            spec.seed = rand::random();
            seed_was_generated = true;
        }
        Ok(ResolvedDemand {
            spec,
            seed_was_generated,
        })
    }
}

fn require_path(
    flag: Option<PathBuf>,
    fallback: Option<PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    flag.or(fallback)
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or config file)")))
}

fn read_instance(path: &Path) -> Result<Instance, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "instance file {} does not exist",
            path.display()
        )));
    }
    Ok(load_instance(path)?)
}

#[derive(Args, Debug)]
struct GenInstanceArgs {
    /// Where to write the instance JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Region shape "stops,routes"; repeat per region. Default: the
    /// four-region benchmark (4,10 6,23 6,30 8,39).
    #[arg(long = "region")]
    regions: Vec<String>,
    /// Train arrivals per region.
    #[arg(long)]
    trains: Option<usize>,
    #[arg(long)]
    fleet_bound: Option<u32>,
    /// Minutes between train arrivals.
    #[arg(long)]
    headway: Option<f64>,
    /// Vehicle capacity (passengers).
    #[arg(long)]
    capacity: Option<u32>,
    /// Fixed cost per vehicle, applied to every region.
    #[arg(long)]
    fixed_cost: Option<f64>,
    #[arg(long)]
    wait_weight: Option<f64>,
    #[arg(long)]
    ride_weight: Option<f64>,
    /// Largest stop subset a route may visit.
    #[arg(long)]
    max_stops: Option<usize>,
    /// Geometry seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn gen_instance(args: GenInstanceArgs, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    let mut spec = crate::synth::SynthSpec::four_region_benchmark();
    if !args.regions.is_empty() {
        spec.regions = args
            .regions
            .iter()
            .map(|text| {
                let (stops, routes) = text.split_once(',').ok_or_else(|| {
                    CliError::Usage(format!("--region {text} must look like \"stops,routes\""))
                })?;
                Ok(crate::synth::RegionShape {
                    num_stops: stops.trim().parse().map_err(|_| {
                        CliError::Usage(format!("--region {text}: bad stop count"))
                    })?,
                    num_routes: routes.trim().parse().map_err(|_| {
                        CliError::Usage(format!("--region {text}: bad route count"))
                    })?,
                })
            })
            .collect::<Result<_, CliError>>()?;
    }
    if let Some(t) = args.trains {
        spec.trains_per_region = t;
    }
    if let Some(m) = args.fleet_bound {
        spec.fleet_bound = m;
    }
    if let Some(h) = args.headway {
        spec.headway_minutes = h;
    }
    if let Some(c) = args.capacity {
        spec.vehicle_capacity = c;
    }
    if let Some(f) = args.fixed_cost {
        spec.fixed_cost_per_vehicle = f;
    }
    if let Some(w) = args.wait_weight {
        spec.wait_weight = w;
    }
    if let Some(r) = args.ride_weight {
        spec.ride_weight = r;
    }
    if let Some(k) = args.max_stops {
        spec.max_stops_per_route = k;
    }
    let (seed, seed_was_generated) = match args.seed.or(config.seed) {
        Some(seed) => (seed, false),
        None => (rand::random(), true),
    };
    let out = require_path(args.out, config.out_dir.as_ref().map(|d| d.join("instance.json")), "out")?;
    let instance = crate::synth::generate(&spec, seed)?;
    save_instance(&out, &instance)?;
    Ok(json!({
        "status": "ok",
        "command": "gen-instance",
        "out": out,
        "seed": seed,
        "seed_was_generated": seed_was_generated,
        "regions": instance.num_regions(),
        "routes": instance.regions.iter().map(|r| r.routes.len()).sum::<usize>(),
    }))
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Raw trip CSV.
    #[arg(long)]
    trips: PathBuf,
    /// Ingest pipeline config (stations, window, schema) as TOML.
    #[arg(long)]
    ingest_config: PathBuf,
    /// Directory for instance.json, scenarios.csv, and stop_stats.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn ingest(args: IngestArgs, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    if !args.trips.exists() {
        return Err(CliError::Data(format!(
            "trip file {} does not exist",
            args.trips.display()
        )));
    }
    let pipeline = load_ingest_config(&args.ingest_config)?;
    let out_dir = args
        .out_dir
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Data(one_line(e)))?;
    let loaded = load_trips(&args.trips, &pipeline.schema)?;
    let output = ingest_instance(&loaded.trips, &pipeline)?;
    let instance_path = out_dir.join("instance.json");
    let scenarios_path = out_dir.join("scenarios.csv");
    let stats_path = out_dir.join("stop_stats.csv");
    save_instance(&instance_path, &output.instance)?;
    save_scenarios(&scenarios_path, &output.instance, &output.scenarios)?;
    write_stop_stats(&stats_path, &output.stats)?;
    Ok(json!({
        "status": "ok",
        "command": "ingest",
        "instance": instance_path,
        "scenarios": scenarios_path,
        "stop_stats": stats_path,
        "rows_skipped": loaded.skipped_rows,
        "trips_per_region": output.region_trip_counts,
        "dates": output.dates.len(),
    }))
}

#[derive(Args, Debug)]
struct GenScenariosArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    /// How many scenarios to draw.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Where to write the scenario CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optionally also write the drawn cell means as JSON.
    #[arg(long)]
    means_out: Option<PathBuf>,
    #[command(flatten)]
    demand: DemandArgs,
}

fn gen_scenarios_cmd(
    args: GenScenariosArgs,
    config: &RunConfig,
) -> Result<serde_json::Value, CliError> {
    let instance_path = require_path(args.instance, config.instance.clone(), "instance")?;
    let instance = read_instance(&instance_path)?;
    let resolved = args.demand.resolve(config)?;
    let out = require_path(
        args.out,
        config.out_dir.as_ref().map(|d| d.join("scenarios.csv")),
        "out",
    )?;
    let means = draw_means(&instance, &resolved.spec)?;
    let scenarios = gen_scenarios(&instance, &means, &resolved.spec, args.count)?;
    save_scenarios(&out, &instance, &scenarios)?;
    if let Some(means_path) = &args.means_out {
        std::fs::write(means_path, crate::domain::to_versioned_json(&means)?)
            .map_err(|e| CliError::Data(one_line(e)))?;
    }
    Ok(json!({
        "status": "ok",
        "command": "gen-scenarios",
        "out": out,
        "count": scenarios.len(),
        "seed": resolved.spec.seed,
        "seed_was_generated": resolved.seed_was_generated,
    }))
}

#[derive(Args, Debug)]
struct EstimateAmbiguityArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Lower quantile level of the support band.
    #[arg(long, default_value_t = 0.20)]
    q_lo: f64,
    /// Upper quantile level of the support band.
    #[arg(long, default_value_t = 0.80)]
    q_hi: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn estimate_ambiguity_cmd(
    args: EstimateAmbiguityArgs,
    config: &RunConfig,
) -> Result<serde_json::Value, CliError> {
    let instance_path = require_path(args.instance, config.instance.clone(), "instance")?;
    let scenarios_path = require_path(args.scenarios, config.scenarios.clone(), "scenarios")?;
    let out = require_path(
        args.out,
        config.out_dir.as_ref().map(|d| d.join("ambiguity.json")),
        "out",
    )?;
    let instance = read_instance(&instance_path)?;
    let scenarios = load_scenarios(&scenarios_path, &instance)?;
    let amb = estimate_ambiguity(&scenarios, args.q_lo, args.q_hi)?;
    let warnings = amb
        .check(&instance)
        .map_err(|e| CliError::Data(one_line(e)))?;
    for warning in &warnings {
        eprintln!("warn: {warning}");
    }
    save_ambiguity(&out, &amb)?;
    Ok(json!({
        "status": "ok",
        "command": "estimate-ambiguity",
        "out": out,
        "scenarios": scenarios.len(),
        "q_lo": args.q_lo,
        "q_hi": args.q_hi,
        "warnings": warnings.len(),
    }))
}

#[derive(Args, Debug)]
struct SolveSpArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Where to write the solution JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep multi-stop trip counts as general integers instead of binary.
    #[arg(long)]
    no_tighten: bool,
    /// Append a one-line record to this solve-log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn solve_sp_cmd(args: SolveSpArgs, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    let instance_path = require_path(args.instance, config.instance.clone(), "instance")?;
    let scenarios_path = require_path(args.scenarios, config.scenarios.clone(), "scenarios")?;
    let out = require_path(
        args.out,
        config.out_dir.as_ref().map(|d| d.join("solution_sp.json")),
        "out",
    )?;
    let instance = read_instance(&instance_path)?;
    let scenarios = load_scenarios(&scenarios_path, &instance)?;
    let params = args.solver.params(config);
    let backend = args.solver.backend(config)?;
    let opts = SaaOptions {
        apply_prop1_tightening: !args.no_tighten,
        ..SaaOptions::default()
    };
    let solution = crate::sp::solve_sp_with(backend.as_ref(), &instance, &scenarios, &opts, &params)?;
    let file = SolutionFile::new("sp", &solution.first_stage, &solution.outcome);
    save_solution(&out, &file)?;
    if let Some(log) = &args.log {
        append_solve_log(log, &SolveLogRow::new("sp", &solution.outcome))?;
    }
    Ok(json!({
        "status": "ok",
        "command": "solve-sp",
        "out": out,
        "solve_status": file.status,
        "objective": file.objective_value,
        "rel_gap": file.rel_gap,
        "fleet": file.fleet,
        "wall_time_seconds": file.wall_time_seconds,
    }))
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum RhoModeArg {
    #[value(name = "fixed_zero", alias = "fixed-zero", alias = "fixed")]
    FixedZero,
    #[value(name = "free_nonnegative", alias = "free-nonnegative", alias = "free")]
    FreeNonnegative,
}

#[derive(Args, Debug)]
struct SolveDrArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Ambiguity JSON from estimate-ambiguity.
    #[arg(long)]
    ambiguity: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// How the mean-deviation multipliers are treated.
    #[arg(long, value_enum, default_value = "fixed_zero")]
    rho_mode: RhoModeArg,
    /// Append a one-line record to this solve-log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn solve_dr_cmd(args: SolveDrArgs, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    let instance_path = require_path(args.instance, config.instance.clone(), "instance")?;
    let ambiguity_path = require_path(args.ambiguity, config.ambiguity.clone(), "ambiguity")?;
    let out = require_path(
        args.out,
        config.out_dir.as_ref().map(|d| d.join("solution_dr.json")),
        "out",
    )?;
    let instance = read_instance(&instance_path)?;
    if !ambiguity_path.exists() {
        return Err(CliError::Data(format!(
            "ambiguity file {} does not exist",
            ambiguity_path.display()
        )));
    }
    let amb = load_ambiguity(&ambiguity_path)?;
    let params = args.solver.params(config);
    let backend = args.solver.backend(config)?;
    let opts = DrOptions {
        rho_mode: match args.rho_mode {
            RhoModeArg::FixedZero => RhoMode::FixedZero,
            RhoModeArg::FreeNonnegative => RhoMode::FreeNonnegative,
        },
    };
    let solution = crate::dr::solve_dr_with(backend.as_ref(), &instance, &amb, &opts, &params)?;
    let file = SolutionFile::new("dr", &solution.first_stage, &solution.outcome);
    save_solution(&out, &file)?;
    if let Some(log) = &args.log {
        append_solve_log(log, &SolveLogRow::new("dr", &solution.outcome))?;
    }
    Ok(json!({
        "status": "ok",
        "command": "solve-dr",
        "out": out,
        "solve_status": file.status,
        "objective": file.objective_value,
        "rel_gap": file.rel_gap,
        "fleet": file.fleet,
        "wall_time_seconds": file.wall_time_seconds,
    }))
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    #[value(name = "fixed_w", alias = "fixed-w", alias = "fixed")]
    FixedW,
    #[value(name = "dynamic_w", alias = "dynamic-w", alias = "dynamic")]
    DynamicW,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Solution JSON from solve-sp or solve-dr.
    #[arg(long)]
    solution: PathBuf,
    /// Evaluation scenario CSV.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Replay planned trips (fixed_w) or re-optimize them per scenario
    /// (dynamic_w).
    #[arg(long, value_enum, default_value = "fixed_w")]
    mode: ModeArg,
    /// Per-scenario rows CSV.
    #[arg(long)]
    out_rows: PathBuf,
    /// Aggregate table CSV.
    #[arg(long)]
    out_summary: Option<PathBuf>,
    /// Optional Markdown summary.
    #[arg(long)]
    markdown: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn evaluate_cmd(args: EvaluateArgs, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    let instance_path = require_path(args.instance, config.instance.clone(), "instance")?;
    let scenarios_path = require_path(args.scenarios, config.scenarios.clone(), "scenarios")?;
    let instance = read_instance(&instance_path)?;
    if !args.solution.exists() {
        return Err(CliError::Data(format!(
            "solution file {} does not exist",
            args.solution.display()
        )));
    }
    let file = crate::sp::load_solution(&args.solution)?;
    let first_stage = file.first_stage(&instance)?;
    let scenarios = load_scenarios(&scenarios_path, &instance)?;
    let mode = match args.mode {
        ModeArg::FixedW => EvalMode::FixedW,
        ModeArg::DynamicW => EvalMode::DynamicW,
    };
    let params = args.solver.params(config);
    let backend = args.solver.backend(config)?;
    let report = match evaluate_with(
        backend.as_ref(),
        &params,
        &instance,
        &first_stage,
        &scenarios,
        mode,
        &file.model,
        None,
    ) {
        Ok(report) => report,
        Err(HarnessError::Eval {
            scenario,
            total,
            completed,
            source,
        }) => {
            // Persist what finished, visibly marked incomplete, then fail.
            let partial = EvaluationReport {
                model: file.model.clone(),
                mode,
                seed: None,
                num_scenarios: completed.len(),
                fixed_cost: instance.total_fixed_cost(&first_stage.fleet),
                rows: completed,
                aggregates: Vec::new(),
            };
            write_evaluation_rows(&args.out_rows, &partial)?;
            use std::io::Write;
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(&args.out_rows)
                .map_err(|e| CliError::Data(one_line(e)))?;
            writeln!(
                f,
                "# incomplete: aborted at scenario {scenario} of {total}: {}",
                one_line(&source)
            )
            .map_err(|e| CliError::Data(one_line(e)))?;
            return Err(CliError::Solver(format!(
                "evaluation aborted at scenario {scenario} of {total} ({}); partial rows in {}",
                one_line(source),
                args.out_rows.display()
            )));
        }
        Err(other) => return Err(other.into()),
    };
    write_evaluation_rows(&args.out_rows, &report)?;
    if let Some(summary) = &args.out_summary {
        write_evaluation_aggregates(summary, &report)?;
    }
    if let Some(markdown) = &args.markdown {
        std::fs::write(markdown, report.to_markdown())
            .map_err(|e| CliError::Data(one_line(e)))?;
    }
    let mean_total = report
        .aggregates
        .iter()
        .find(|a| a.column == "total_cost")
        .map(|a| a.mean);
    Ok(json!({
        "status": "ok",
        "command": "evaluate",
        "model": report.model,
        "mode": report.mode.to_string(),
        "scenarios": report.num_scenarios,
        "out_rows": args.out_rows,
        "mean_total_cost": mean_total,
    }))
}

#[derive(Args, Debug)]
struct McoGapArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Independent training replications (G).
    #[arg(long, default_value_t = 10)]
    replications: usize,
    /// In-sample scenarios per replication (R).
    #[arg(long, default_value_t = 100)]
    train_scenarios: usize,
    /// Fresh scenarios for the upper bound (N').
    #[arg(long, default_value_t = 1000)]
    eval_scenarios: usize,
    /// Confidence level for both intervals.
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

fn mco_gap_cmd(args: McoGapArgs, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    let instance_path = require_path(args.instance, config.instance.clone(), "instance")?;
    let out = require_path(
        args.out,
        config.out_dir.as_ref().map(|d| d.join("mco.json")),
        "out",
    )?;
    let instance = read_instance(&instance_path)?;
    let resolved = args.demand.resolve(config)?;
    let means = draw_means(&instance, &resolved.spec)?;
    let opts = McoOptions {
        replications: args.replications,
        scenarios_per_replication: args.train_scenarios,
        eval_scenarios: args.eval_scenarios,
        confidence: args.confidence,
    };
    let params = args.solver.params(config);
    let backend = args.solver.backend(config)?;
    let report = mco_gap_with(
        backend.as_ref(),
        &instance,
        &means,
        &resolved.spec,
        &opts,
        &params,
    )?;
    crate::harness::save_mco(&out, &report)?;
    if let Some(markdown) = &args.markdown {
        std::fs::write(markdown, report.to_markdown())
            .map_err(|e| CliError::Data(one_line(e)))?;
    }
    Ok(json!({
        "status": "ok",
        "command": "mco-gap",
        "out": out,
        "lower_bound": report.lower_bound,
        "upper_bound": report.upper_bound,
        "gap": report.gap,
        "degraded": report.degraded,
        "seed": resolved.spec.seed,
        "seed_was_generated": resolved.seed_was_generated,
    }))
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    /// In-sample scenarios per grid point.
    #[arg(long, default_value_t = 20)]
    in_sample: usize,
    /// Evaluation scenarios per grid point.
    #[arg(long, default_value_t = 200)]
    eval: usize,
    #[arg(long, default_value_t = 0.20)]
    q_lo: f64,
    #[arg(long, default_value_t = 0.80)]
    q_hi: f64,
    /// Evaluation routing mode.
    #[arg(long, value_enum, default_value = "dynamic_w")]
    mode: ModeArg,
    /// Label written into every row.
    #[arg(long, default_value = "sweep")]
    experiment: String,
    /// Mean range "lo,hi" per grid point; repeatable.
    #[arg(long = "mean-range")]
    mean_ranges: Vec<String>,
    /// Fixed cost per grid point; repeatable.
    #[arg(long = "fixed-cost")]
    fixed_costs: Vec<f64>,
    /// Time-weight pair "wait,ride" per grid point; repeatable.
    #[arg(long = "time-weights")]
    time_weights: Vec<String>,
    /// Fleet bound per grid point; repeatable.
    #[arg(long = "fleet-bound")]
    fleet_bounds: Vec<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_pair(text: &str, flag: &str) -> Result<[f64; 2], CliError> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("--{flag} {text} must look like \"a,b\"")))?;
    let parse = |part: &str| {
        part.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("--{flag} {text}: bad number {part}")))
    };
    Ok([parse(a)?, parse(b)?])
}

fn sweep_cmd(args: SweepArgs, config: &RunConfig) -> Result<serde_json::Value, CliError> {
    let instance_path = require_path(args.instance, config.instance.clone(), "instance")?;
    let out = require_path(
        args.out,
        config.out_dir.as_ref().map(|d| d.join("sweep.csv")),
        "out",
    )?;
    let instance = read_instance(&instance_path)?;
    let resolved = args.demand.resolve(config)?;
    let template = SweepTemplate {
        instance,
        demand: resolved.spec.clone(),
        in_sample: args.in_sample,
        eval: args.eval,
        q_lo: args.q_lo,
        q_hi: args.q_hi,
        eval_mode: match args.mode {
            ModeArg::FixedW => EvalMode::FixedW,
            ModeArg::DynamicW => EvalMode::DynamicW,
        },
    };
    let grids = SweepGrids {
        mean_ranges: args
            .mean_ranges
            .iter()
            .map(|t| parse_pair(t, "mean-range"))
            .collect::<Result<_, _>>()?,
        fixed_costs: args.fixed_costs.clone(),
        time_weights: args
            .time_weights
            .iter()
            .map(|t| parse_pair(t, "time-weights"))
            .collect::<Result<_, _>>()?,
        fleet_bounds: args.fleet_bounds.clone(),
    };
    let params = args.solver.params(config);
    let backend = args.solver.backend(config)?;
    let outcome =
        sensitivity_sweep_with(backend.as_ref(), &template, &grids, &args.experiment, &params)?;
    for line in &outcome.dominance_log {
        eprintln!("warn[dominance]: {line}");
    }
    for line in &outcome.failures {
        eprintln!("warn[point-failed]: {line}");
    }
    if outcome.rows.is_empty() && !outcome.failures.is_empty() {
        return Err(CliError::Solver(format!(
            "every grid point failed ({} failures)",
            outcome.failures.len()
        )));
    }
    write_sweep_rows(&out, &outcome.rows)?;
    Ok(json!({
        "status": "ok",
        "command": "sweep",
        "out": out,
        "rows": outcome.rows.len(),
        "failed_points": outcome.failures.len(),
        "seed": resolved.spec.seed,
        "seed_was_generated": resolved.seed_was_generated,
    }))
}

fn dispatch(cli: Cli) -> Result<serde_json::Value, CliError> {
    let config = match &cli.config {
        Some(path) => load_run_config_inner(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenInstance(args) => gen_instance(args, &config),
        Command::Ingest(args) => ingest(args, &config),
        Command::GenScenarios(args) => gen_scenarios_cmd(args, &config),
        Command::EstimateAmbiguity(args) => estimate_ambiguity_cmd(args, &config),
        Command::SolveSp(args) => solve_sp_cmd(args, &config),
        Command::SolveDr(args) => solve_dr_cmd(args, &config),
        Command::Evaluate(args) => evaluate_cmd(args, &config),
        Command::McoGap(args) => mco_gap_cmd(args, &config),
        Command::Sweep(args) => sweep_cmd(args, &config),
    }
}

/// Parses `args` (argv[0] included) and runs the chosen subcommand inside a
/// thread pool of the requested width. Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return EXIT_OK;
            }
            let first = err
                .to_string()
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("error[usage]: {first}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
    {
        Ok(pool) => pool,
        Err(err) => {
            eprintln!("error[usage]: {}", one_line(err));
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(status) => {
            println!("{status}");
            EXIT_OK
        }
        Err(err) => {
            eprintln!("{}", err.render());
            err.code()
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}
