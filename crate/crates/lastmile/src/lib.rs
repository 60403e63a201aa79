//! Fleet sizing and trip scheduling for last-mile transit under uncertain
//! batch demand.
//!
//! A last-mile system shuttles passengers arriving by train from a station to
//! nearby stops using a shared vehicle fleet. Before demand is known, a
//! planner fixes per-region fleet sizes and a trip schedule over pre-specified
//! routes; after each train arrives, realized passengers are assigned to
//! scheduled trips and unserved passengers wait for later trips. This crate
//! implements two planning models over that structure and the experimental
//! apparatus around them:
//!
//! - [`sp`]: the two-stage stochastic program solved by sample average
//!   approximation over demand scenarios.
//! - [`dr`]: the distributionally robust counterpart over a mean-support
//!   ambiguity set, reduced to a single MILP.
//! - [`recourse`]: second-stage evaluation for a fixed plan — the assignment
//!   LP, its dual (used as a verification certificate), and the dynamic
//!   re-routing MILP used for out-of-sample evaluation.
//! - [`scenario`]: seeded demand scenario generation (lognormal/uniform),
//!   ambiguity estimation from samples, and cost calibration.
//! - [`ingest`]: building instances from raw trip records — destination
//!   clustering, batch-demand binning, route enumeration.
//! - [`harness`]: out-of-sample evaluation reports, statistical optimality-gap
//!   estimation, and sensitivity sweeps.
//! - [`domain`], [`milp`], [`synth`], [`cli`]: problem data types and
//!   validation, the solver-agnostic MILP layer, synthetic instance
//!   generation, and the command-line front end.
//!
//! Every randomized operation takes an explicit seed and is bit-for-bit
//! reproducible regardless of thread count. See the crate `examples/`
//! directory for one runnable walkthrough per capability.

pub mod cli;
pub mod domain;
pub mod dr;
pub mod harness;
pub mod ingest;
pub mod milp;
pub mod recourse;
pub mod scenario;
pub mod sp;
pub mod synth;

pub use domain::{
    CostParams, DemandScenario, DomainError, FirstStageSolution, Instance, RegionSpec, RouteSpec,
    SecondStagePlan,
};
pub use milp::{LinearModel, SolveOutcome, SolveStatus, SolverParams};
