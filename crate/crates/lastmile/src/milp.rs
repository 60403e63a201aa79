//! Solver-agnostic mixed-integer linear model representation and the backend
//! contract behind it.
//!
//! Model builders declare variables and constraints against [`LinearModel`];
//! a [`Backend`] turns the model into a [`SolveOutcome`]. Builds are
//! deterministic (identical inputs give identical variable order, names, and
//! constraint order) and solves with a fixed seed and one solver thread are
//! reproducible, which is what makes whole-pipeline reruns byte-identical.
//!
//! Variable names follow one fixed scheme so model dumps are diffable:
//! `m[s]`, `w[i,k,s]`, `v[i,s]`, `u[r,i,j,s]`, `z[r,i,j,k,s]`, `rho[i,j,s]`,
//! `y[i,j,s]`, `x[i,j,k,s]`.
//!
//! The bundled backend is the HiGHS solver; select a backend explicitly with
//! [`backend_from_name`] or via the `LASTMILE_SOLVER` environment variable.

use std::ffi::CStr;
use std::io::Write;
use std::time::Instant;

/// Tolerance for accepting a relaxed integer variable value as integral.
pub const INTEGRALITY_TOLERANCE: f64 = 1e-6;

/// Environment variable naming the solver backend (same values as
/// [`backend_from_name`]).
pub const BACKEND_ENV_VAR: &str = "LASTMILE_SOLVER";

/// Errors from model construction and solving.
#[derive(Debug, thiserror::Error)]
pub enum MilpError {
    #[error("unknown solver backend {name:?}; available: {available:?}")]
    BackendUnavailable {
        name: String,
        available: &'static [&'static str],
    },
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("solver failure: {0}")]
    SolverInternal(String),
    #[error("variable {name} = {value} is not integral within {INTEGRALITY_TOLERANCE}")]
    IntegralityViolation { name: String, value: f64 },
    #[error("solve outcome has status {status} and carries no variable values")]
    NoValues { status: SolveStatus },
}

/// Handle to a declared variable; only valid for the model that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

/// A declared variable: kind, bounds, and its deterministic name.
#[derive(Debug, Clone, PartialEq)]
pub struct VarRef {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

/// One linear constraint: `sum(coeff * var) cmp rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(VarId, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// An immutable-once-built mixed-integer linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub name: String,
    pub sense: Sense,
    variables: Vec<VarRef>,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    warm_start: Option<Vec<f64>>,
}

impl LinearModel {
    pub fn new(name: impl Into<String>, sense: Sense) -> Self {
        LinearModel {
            name: name.into(),
            sense,
            variables: Vec::new(),
            objective: Vec::new(),
            constraints: Vec::new(),
            warm_start: None,
        }
    }

    /// Declares a variable with its objective coefficient. Binary variables
    /// must be declared with bounds inside [0, 1].
    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
        objective: f64,
    ) -> VarId {
        let name = name.into();
        assert!(!lower.is_nan() && !upper.is_nan(), "NaN bound on {name}");
        assert!(lower <= upper, "empty bounds [{lower}, {upper}] on {name}");
        assert!(objective.is_finite(), "objective on {name} must be finite");
        if kind == VarKind::Binary {
            assert!(
                (0.0..=1.0).contains(&lower) && (0.0..=1.0).contains(&upper),
                "binary {name} must have bounds inside [0, 1]"
            );
        }
        let id = VarId(u32::try_from(self.variables.len()).expect("variable count fits in u32"));
        self.variables.push(VarRef {
            name,
            kind,
            lower,
            upper,
        });
        self.objective.push(objective);
        id
    }

    pub fn add_constraint(&mut self, terms: Vec<(VarId, f64)>, cmp: Cmp, rhs: f64) -> usize {
        debug_assert!(terms.iter().all(|(v, c)| {
            (v.0 as usize) < self.variables.len() && c.is_finite()
        }));
        debug_assert!(rhs.is_finite());
        self.constraints.push(Constraint { terms, cmp, rhs });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn var(&self, id: VarId) -> &VarRef {
        &self.variables[id.index()]
    }

    pub fn variables(&self) -> &[VarRef] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Objective coefficients indexed like [`Self::variables`]; what an
    /// external [`Backend`] walks when loading the model.
    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn objective_coeff(&self, id: VarId) -> f64 {
        self.objective[id.index()]
    }

    /// Installs a feasible point (indexed like the variable order) that
    /// backends may use as an incumbent hint. Advisory: solvers are free to
    /// ignore it, and it never changes the feasible set.
    pub fn set_warm_start(&mut self, values: Vec<f64>) {
        self.warm_start = Some(values);
    }

    pub fn warm_start(&self) -> Option<&[f64]> {
        self.warm_start.as_deref()
    }

    pub fn is_mip(&self) -> bool {
        self.variables
            .iter()
            .any(|v| v.kind != VarKind::Continuous)
    }

    /// The continuous relaxation: same bounds, objective, and constraints,
    /// integrality dropped. Variable ids carry over unchanged.
    pub fn relaxed(&self) -> LinearModel {
        let mut relaxed = self.clone();
        for var in &mut relaxed.variables {
            var.kind = VarKind::Continuous;
        }
        relaxed.warm_start = None;
        relaxed
    }

    /// Objective value of an assignment (indexed like the variable order).
    pub fn eval_objective(&self, values: &[f64]) -> f64 {
        self.objective
            .iter()
            .zip(values)
            .map(|(c, x)| c * x)
            .sum()
    }

    fn check_well_formed(&self) -> Result<(), MilpError> {
        for (idx, var) in self.variables.iter().enumerate() {
            if var.lower > var.upper {
                return Err(MilpError::MalformedModel(format!(
                    "variable {} has empty bounds",
                    var.name
                )));
            }
            if !self.objective[idx].is_finite() {
                return Err(MilpError::MalformedModel(format!(
                    "objective coefficient of {} is not finite",
                    var.name
                )));
            }
        }
        if let Some(ws) = &self.warm_start {
            if ws.len() != self.variables.len() {
                return Err(MilpError::MalformedModel(format!(
                    "warm start has {} values for {} variables",
                    ws.len(),
                    self.variables.len()
                )));
            }
            if let Some(bad) = ws.iter().find(|v| !v.is_finite()) {
                return Err(MilpError::MalformedModel(format!(
                    "warm start contains {bad}"
                )));
            }
        }
        for (row, constraint) in self.constraints.iter().enumerate() {
            if !constraint.rhs.is_finite() {
                return Err(MilpError::MalformedModel(format!(
                    "constraint {row} has non-finite rhs"
                )));
            }
            for &(var, coeff) in &constraint.terms {
                if var.index() >= self.variables.len() {
                    return Err(MilpError::MalformedModel(format!(
                        "constraint {row} references undeclared variable {}",
                        var.0
                    )));
                }
                if !coeff.is_finite() {
                    return Err(MilpError::MalformedModel(format!(
                        "constraint {row} has non-finite coefficient on {}",
                        self.variables[var.index()].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the model in LP file format for debugging with external tools.
    pub fn write_lp(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "\\ {}", self.name)?;
        match self.sense {
            Sense::Minimize => writeln!(out, "Minimize")?,
            Sense::Maximize => writeln!(out, "Maximize")?,
        }
        let write_terms =
            |out: &mut dyn Write, terms: &mut dyn Iterator<Item = (usize, f64)>| -> std::io::Result<()> {
                let mut first = true;
                let mut any = false;
                for (var_idx, coeff) in terms {
                    any = true;
                    if first {
                        if coeff < 0.0 {
                            write!(out, "- ")?;
                        }
                        first = false;
                    } else if coeff < 0.0 {
                        write!(out, " - ")?;
                    } else {
                        write!(out, " + ")?;
                    }
                    write!(out, "{} {}", coeff.abs(), self.variables[var_idx].name)?;
                }
                if !any {
                    write!(out, "0")?;
                }
                Ok(())
            };
        write!(out, " obj: ")?;
        write_terms(
            out,
            &mut self
                .objective
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0.0)
                .map(|(i, &c)| (i, c)),
        )?;
        writeln!(out)?;
        writeln!(out, "Subject To")?;
        for (row, constraint) in self.constraints.iter().enumerate() {
            write!(out, " c{row}: ")?;
            write_terms(
                out,
                &mut constraint.terms.iter().map(|&(v, c)| (v.index(), c)),
            )?;
            let op = match constraint.cmp {
                Cmp::Le => "<=",
                Cmp::Eq => "=",
                Cmp::Ge => ">=",
            };
            writeln!(out, " {op} {}", constraint.rhs)?;
        }
        writeln!(out, "Bounds")?;
        for var in &self.variables {
            // LP-format default is [0, +inf); only emit the exceptions.
            match (var.lower, var.upper) {
                (l, u) if l == 0.0 && u == f64::INFINITY => {}
                (l, u) if l == f64::NEG_INFINITY && u == f64::INFINITY => {
                    writeln!(out, " {} free", var.name)?
                }
                (l, u) if u == f64::INFINITY => writeln!(out, " {} >= {l}", var.name)?,
                (l, u) if l == f64::NEG_INFINITY => writeln!(out, " {} <= {u}", var.name)?,
                (l, u) => writeln!(out, " {l} <= {} <= {u}", var.name)?,
            }
        }
        for (header, kind) in [("Generals", VarKind::Integer), ("Binaries", VarKind::Binary)] {
            let mut names = self
                .variables
                .iter()
                .filter(|v| v.kind == kind)
                .map(|v| v.name.as_str())
                .peekable();
            if names.peek().is_some() {
                writeln!(out, "{header}")?;
                for name in names {
                    writeln!(out, " {name}")?;
                }
            }
        }
        writeln!(out, "End")?;
        Ok(())
    }

    pub fn to_lp_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_lp(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("LP text is UTF-8")
    }
}

/// Solve termination status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Hit the time limit with a feasible incumbent; values are the incumbent.
    FeasibleTimeLimit,
    Infeasible,
    Unbounded,
    /// Solver gave up (including a time limit with no incumbent).
    Error,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleTimeLimit => "feasible_time_limit",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::Error => "error",
        };
        f.write_str(text)
    }
}

/// Result of one solve. `values` (indexed like the model's variable order) are
/// present exactly for statuses `optimal` and `feasible_time_limit`.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub objective_value: Option<f64>,
    pub best_bound: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub wall_time_seconds: f64,
}

impl SolveOutcome {
    /// Relative MIP gap (objective - bound) / max(|bound|, 1e-10), when both
    /// are known.
    pub fn rel_gap(&self) -> Option<f64> {
        match (self.objective_value, self.best_bound) {
            (Some(obj), Some(bound)) => Some((obj - bound).abs() / bound.abs().max(1e-10)),
            _ => None,
        }
    }

    pub fn values(&self) -> Result<&[f64], MilpError> {
        self.values.as_deref().ok_or(MilpError::NoValues {
            status: self.status,
        })
    }

    /// Value of one variable; requires values to be present.
    pub fn value(&self, id: VarId) -> Result<f64, MilpError> {
        Ok(self.values()?[id.index()])
    }

    /// Value of an integer-kind variable rounded to an integer, failing when
    /// it is farther than [`INTEGRALITY_TOLERANCE`] from one.
    pub fn int_value(&self, model: &LinearModel, id: VarId) -> Result<i64, MilpError> {
        let raw = self.value(id)?;
        let rounded = raw.round();
        if (raw - rounded).abs() > INTEGRALITY_TOLERANCE {
            return Err(MilpError::IntegralityViolation {
                name: model.var(id).name.clone(),
                value: raw,
            });
        }
        Ok(rounded as i64)
    }
}

/// Solver parameters shared by every backend.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub time_limit_seconds: f64,
    /// Relative MIP gap at which the solver may stop.
    pub rel_gap_target: f64,
    pub seed: i32,
    /// Solver-internal threads. The default of 1 keeps solves deterministic;
    /// scenario-level parallelism lives above this layer.
    pub threads: u32,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            time_limit_seconds: 3600.0,
            rel_gap_target: 1e-4,
            seed: 0,
            threads: 1,
        }
    }
}

impl SolverParams {
    pub fn with_gap(rel_gap_target: f64) -> Self {
        SolverParams {
            rel_gap_target,
            ..SolverParams::default()
        }
    }
}

/// A MILP solver capable of handling [`LinearModel`]s.
pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, model: &LinearModel, params: &SolverParams) -> Result<SolveOutcome, MilpError>;
}

/// Backend names accepted by [`backend_from_name`] and `LASTMILE_SOLVER`.
pub const AVAILABLE_BACKENDS: &[&str] = &["highs"];

pub fn backend_from_name(name: &str) -> Result<Box<dyn Backend>, MilpError> {
    match name {
        "highs" => Ok(Box::new(HighsBackend)),
        other => Err(MilpError::BackendUnavailable {
            name: other.to_string(),
            available: AVAILABLE_BACKENDS,
        }),
    }
}

/// The backend chosen by `LASTMILE_SOLVER`, defaulting to HiGHS.
pub fn default_backend() -> Result<Box<dyn Backend>, MilpError> {
    match std::env::var(BACKEND_ENV_VAR) {
        Ok(name) => backend_from_name(&name),
        Err(_) => backend_from_name(AVAILABLE_BACKENDS[0]),
    }
}

/// Solves with the default backend.
pub fn solve(model: &LinearModel, params: &SolverParams) -> Result<SolveOutcome, MilpError> {
    default_backend()?.solve(model, params)
}

/// Backend on the bundled HiGHS solver.
pub struct HighsBackend;

impl HighsBackend {
    fn run_once(
        &self,
        model: &LinearModel,
        params: &SolverParams,
        presolve: bool,
    ) -> Result<highs::SolvedModel, MilpError> {
        let mut problem = highs::RowProblem::default();
        let mut cols = Vec::with_capacity(model.num_vars());
        for (var, &obj) in model.variables().iter().zip(&model.objective) {
            let bounds = (
                std::ops::Bound::Included(var.lower),
                std::ops::Bound::Included(var.upper),
            );
            let col = match var.kind {
                VarKind::Continuous => problem.add_column(obj, bounds),
                VarKind::Integer | VarKind::Binary => problem.add_integer_column(obj, bounds),
            };
            cols.push(col);
        }
        for constraint in model.constraints() {
            let terms = constraint
                .terms
                .iter()
                .map(|&(v, c)| (cols[v.index()], c));
            match constraint.cmp {
                Cmp::Le => problem.add_row(..=constraint.rhs, terms),
                Cmp::Eq => problem.add_row(constraint.rhs..=constraint.rhs, terms),
                Cmp::Ge => problem.add_row(constraint.rhs.., terms),
            };
        }
        let sense = match model.sense {
            Sense::Minimize => highs::Sense::Minimise,
            Sense::Maximize => highs::Sense::Maximise,
        };
        let mut solver = problem.optimise(sense);
        solver.make_quiet();
        if let Some(ws) = model.warm_start() {
            // Best-effort hint; a rejected start must not fail the solve.
            let _ = solver.try_set_solution(Some(ws), None, None, None);
            // With an incumbent to improve on, the neighborhood-search
            // heuristics earn their keep.
            solver.set_option("mip_heuristic_run_rins", true);
            solver.set_option("mip_heuristic_run_rens", true);
        }
        if let Ok(effort) = std::env::var("PROBE_HEUR_EFFORT") {
            if let Ok(value) = effort.parse::<f64>() {
                solver.set_option("mip_heuristic_effort", value);
            }
        }
        solver.set_option("time_limit", params.time_limit_seconds);
        solver.set_option("mip_rel_gap", params.rel_gap_target);
        solver.set_option("random_seed", params.seed);
        solver.set_option("threads", params.threads.max(1) as i32);
        solver.set_option("parallel", if params.threads > 1 { "on" } else { "off" });
        if !presolve {
            solver.set_option("presolve", "off");
        }
        solver
            .try_solve()
            .map_err(|status| MilpError::SolverInternal(format!("HiGHS status {status:?}")))
    }
}

impl Backend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve(&self, model: &LinearModel, params: &SolverParams) -> Result<SolveOutcome, MilpError> {
        use highs::HighsModelStatus as H;

        model.check_well_formed()?;
        let started = Instant::now();
        if model.num_vars() == 0 {
            return Ok(SolveOutcome {
                status: SolveStatus::Optimal,
                objective_value: Some(0.0),
                best_bound: Some(0.0),
                values: Some(Vec::new()),
                wall_time_seconds: started.elapsed().as_secs_f64(),
            });
        }
        let mut solved = self.run_once(model, params, true)?;
        if solved.status() == H::UnboundedOrInfeasible {
            // Presolve cannot always separate the two; a plain solve can.
            solved = self.run_once(model, params, false)?;
        }

        let has_incumbent = |solved: &highs::SolvedModel| {
            const SOLUTION_STATUS_FEASIBLE: i64 = 2;
            solved
                .int_info_value(c"primal_solution_status")
                .map(|status| status == SOLUTION_STATUS_FEASIBLE)
                .unwrap_or(false)
        };
        let status = match solved.status() {
            H::Optimal => SolveStatus::Optimal,
            H::Infeasible => SolveStatus::Infeasible,
            H::Unbounded | H::UnboundedOrInfeasible => SolveStatus::Unbounded,
            H::ReachedTimeLimit if has_incumbent(&solved) => SolveStatus::FeasibleTimeLimit,
            _ => SolveStatus::Error,
        };
        let wall_time_seconds = started.elapsed().as_secs_f64();

        let mut outcome = SolveOutcome {
            status,
            objective_value: None,
            best_bound: None,
            values: None,
            wall_time_seconds,
        };
        if matches!(
            status,
            SolveStatus::Optimal | SolveStatus::FeasibleTimeLimit
        ) {
            outcome.objective_value = Some(solved.objective_value());
            outcome.best_bound = if model.is_mip() {
                mip_dual_bound(&solved)
            } else {
                Some(solved.objective_value())
            };
            outcome.values = Some(solved.get_solution().columns().to_vec());
        }
        Ok(outcome)
    }
}

fn mip_dual_bound(solved: &highs::SolvedModel) -> Option<f64> {
    let bound = solved.double_info_value(mip_dual_bound_name()).ok()?;
    bound.is_finite().then_some(bound)
}

fn mip_dual_bound_name() -> &'static CStr {
    c"mip_dual_bound"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_default(model: &LinearModel) -> SolveOutcome {
        solve(model, &SolverParams::default()).unwrap()
    }

    #[test]
    fn minimizes_a_single_integer_variable() {
        let mut model = LinearModel::new("single", Sense::Minimize);
        let x = model.add_var("x", VarKind::Integer, 0.0, f64::INFINITY, 1.0);
        model.add_constraint(vec![(x, 1.0)], Cmp::Ge, 3.0);
        let outcome = solve_default(&model);
        assert_eq!(outcome.status, SolveStatus::Optimal);
        assert_eq!(outcome.value(x).unwrap(), 3.0);
        assert_eq!(outcome.objective_value, Some(3.0));
        assert_eq!(outcome.best_bound, Some(3.0));
        assert!(outcome.rel_gap().unwrap() < 1e-9);
    }

    #[test]
    fn detects_an_unbounded_ray() {
        let mut model = LinearModel::new("ray", Sense::Maximize);
        model.add_var("x", VarKind::Continuous, 0.0, f64::INFINITY, 1.0);
        let outcome = solve_default(&model);
        assert_eq!(outcome.status, SolveStatus::Unbounded);
        assert!(outcome.values.is_none());
        assert!(matches!(
            outcome.value(VarId(0)),
            Err(MilpError::NoValues { .. })
        ));
    }

    #[test]
    fn detects_an_empty_feasible_set() {
        let mut model = LinearModel::new("empty", Sense::Minimize);
        let x = model.add_var("x", VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY, 1.0);
        model.add_constraint(vec![(x, 1.0)], Cmp::Le, 0.0);
        model.add_constraint(vec![(x, 1.0)], Cmp::Ge, 1.0);
        let outcome = solve_default(&model);
        assert_eq!(outcome.status, SolveStatus::Infeasible);
    }

    fn knapsack_model() -> LinearModel {
        let mut model = LinearModel::new("knapsack", Sense::Maximize);
        let values = [6.0, 5.0, 4.0, 3.0, 2.0];
        let weights = [5.0, 4.0, 3.0, 2.0, 1.0];
        let items: Vec<VarId> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| model.add_var(format!("pick[{i}]"), VarKind::Binary, 0.0, 1.0, v))
            .collect();
        model.add_constraint(
            items.iter().zip(weights).map(|(&x, w)| (x, w)).collect(),
            Cmp::Le,
            8.0,
        );
        model
    }

    #[test]
    fn repeated_solves_return_identical_values() {
        let model = knapsack_model();
        let params = SolverParams::default();
        let first = solve(&model, &params).unwrap();
        let second = solve(&model, &params).unwrap();
        assert_eq!(first.status, SolveStatus::Optimal);
        assert_eq!(first.values.unwrap(), second.values.unwrap());
    }

    #[test]
    fn identical_builds_produce_identical_models() {
        let a = knapsack_model();
        let b = knapsack_model();
        assert_eq!(a, b);
    }

    #[test]
    fn lp_objective_matches_reported_value_at_returned_point() {
        let mut rng_state = 17u64;
        let mut next = move || {
            // Small xorshift, enough to vary coefficients deterministically.
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state % 19) as f64 / 2.0 + 0.5
        };
        for case in 0..25 {
            let mut model = LinearModel::new(format!("lp{case}"), Sense::Minimize);
            let vars: Vec<VarId> = (0..6)
                .map(|i| model.add_var(format!("x[{i}]"), VarKind::Continuous, 0.0, 50.0, next()))
                .collect();
            for row in 0..4 {
                let terms = vars.iter().map(|&v| (v, next())).collect();
                model.add_constraint(terms, Cmp::Ge, 10.0 + row as f64);
            }
            let outcome = solve_default(&model);
            assert_eq!(outcome.status, SolveStatus::Optimal);
            let reported = outcome.objective_value.unwrap();
            let evaluated = model.eval_objective(outcome.values().unwrap());
            assert!(
                (reported - evaluated).abs() <= 1e-6 * reported.abs().max(1.0),
                "case {case}: {reported} vs {evaluated}"
            );
        }
    }

    #[test]
    fn integral_extraction_rounds_within_tolerance_only() {
        let mut model = LinearModel::new("ints", Sense::Minimize);
        let a = model.add_var("a", VarKind::Integer, 0.0, 10.0, 0.0);
        let b = model.add_var("b", VarKind::Integer, 0.0, 10.0, 0.0);
        let outcome = SolveOutcome {
            status: SolveStatus::Optimal,
            objective_value: Some(0.0),
            best_bound: Some(0.0),
            values: Some(vec![0.9999999, 0.5]),
            wall_time_seconds: 0.0,
        };
        assert_eq!(outcome.int_value(&model, a).unwrap(), 1);
        assert!(matches!(
            outcome.int_value(&model, b),
            Err(MilpError::IntegralityViolation { value, .. }) if value == 0.5
        ));
    }

    #[test]
    fn unknown_backend_is_rejected_with_the_available_list() {
        let Err(err) = backend_from_name("cplex") else {
            panic!("expected an unknown-backend error")
        };
        assert!(err.to_string().contains("highs"), "{err}");
    }

    #[test]
    fn malformed_models_are_rejected() {
        let mut model = LinearModel::new("bad", Sense::Minimize);
        let x = model.add_var("x", VarKind::Continuous, 0.0, 1.0, 1.0);
        model.add_constraint(vec![(x, 1.0)], Cmp::Le, 1.0);
        model.constraints[0].rhs = f64::NAN;
        assert!(matches!(
            solve(&model, &SolverParams::default()),
            Err(MilpError::MalformedModel(_))
        ));
    }

    #[test]
    fn lp_dump_has_the_documented_layout() {
        let mut model = LinearModel::new("dump", Sense::Minimize);
        let m = model.add_var("m[0]", VarKind::Integer, 0.0, 4.0, 5.0);
        let w = model.add_var("w[0,0,0]", VarKind::Binary, 0.0, 1.0, 0.0);
        let u = model.add_var("u[0,0,0,0]", VarKind::Continuous, 0.0, f64::INFINITY, 2.0);
        let g = model.add_var("g", VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY, 0.0);
        model.add_constraint(vec![(m, 1.0), (w, -2.0)], Cmp::Ge, 0.0);
        model.add_constraint(vec![(u, 1.0), (g, 1.0)], Cmp::Eq, 3.0);
        let expected = "\\ dump\n\
                        Minimize\n obj: 5 m[0] + 2 u[0,0,0,0]\n\
                        Subject To\n c0: 1 m[0] - 2 w[0,0,0] >= 0\n c1: 1 u[0,0,0,0] + 1 g = 3\n\
                        Bounds\n 0 <= m[0] <= 4\n 0 <= w[0,0,0] <= 1\n g free\n\
                        Generals\n m[0]\nBinaries\n w[0,0,0]\nEnd\n";
        assert_eq!(model.to_lp_string(), expected);
    }
}
