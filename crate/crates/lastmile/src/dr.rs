//! Distributionally robust counterpart of the planning problem over a
//! mean-support ambiguity set: fleet sizing and scheduling as in the
//! sample-average model, with the scenario block replaced by a single
//! worst-case service block priced at the support's upper bound.
//!
//! The reformulation carries a multiplier `rho` for the mean constraint with
//! objective coefficient `mean - upper` and no constraint rows. Taken
//! literally that is unbounded whenever the mean sits strictly below the
//! upper bound, so the default mode pins `rho = 0`, which reduces the model
//! to the deterministic problem at the upper bound; the free mode exists to
//! reproduce and document the unboundedness.

use crate::domain::{
    second_stage_cost, DemandScenario, DomainError, FirstStageSolution, Instance,
    SecondStagePlan,
};
use crate::milp::{
    default_backend, Backend, Cmp, LinearModel, MilpError, Sense, SolveOutcome, SolveStatus,
    SolverParams, VarId, VarKind,
};
use crate::sp::add_first_stage_block;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DrError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("{context}: solver returned {status}")]
    Solver { context: String, status: SolveStatus },
    #[error("ambiguity set invalid: {0}")]
    InvalidAmbiguity(String),
    #[error(
        "model is unbounded: {variable} has the most negative objective coefficient \
         (mean - upper = {coefficient}); with rho free and the mean below the support's \
         upper bound there is no finite optimum — use the fixed-zero rho mode"
    )]
    Unbounded { variable: String, coefficient: f64 },
}

/// Mean and support bounds of the batch demand per cell, `[s][i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityInfo {
    pub mean: Vec<Vec<Vec<f64>>>,
    pub lower: Vec<Vec<Vec<f64>>>,
    pub upper: Vec<Vec<Vec<f64>>>,
}

impl AmbiguityInfo {
    /// Validates dimensions and `0 <= lower <= upper`; returns warnings for
    /// cells whose mean exits the `[lower, upper]` band (a legitimate
    /// outcome of quantile estimation on skewed samples, so not an error).
    pub fn check(&self, instance: &Instance) -> Result<Vec<String>, DrError> {
        for (name, field) in [
            ("mean", &self.mean),
            ("lower", &self.lower),
            ("upper", &self.upper),
        ] {
            if field.len() != instance.num_regions() {
                return Err(DomainError::dims(name, instance.num_regions(), field.len()).into());
            }
            for (s, region) in instance.regions.iter().enumerate() {
                if field[s].len() != region.num_trains {
                    return Err(
                        DomainError::dims(name, region.num_trains, field[s].len()).into()
                    );
                }
                for (i, row) in field[s].iter().enumerate() {
                    if row.len() != region.num_stops {
                        return Err(DomainError::dims(name, region.num_stops, row.len()).into());
                    }
                    if let Some(bad) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                        return Err(DrError::InvalidAmbiguity(format!(
                            "{name}[{i}][..] in region {s} contains {bad}"
                        )));
                    }
                }
            }
        }
        let mut warnings = Vec::new();
        for s in 0..instance.num_regions() {
            for i in 0..instance.regions[s].num_trains {
                for j in 0..instance.regions[s].num_stops {
                    let (mu, lo, hi) =
                        (self.mean[s][i][j], self.lower[s][i][j], self.upper[s][i][j]);
                    if lo > hi {
                        return Err(DrError::InvalidAmbiguity(format!(
                            "lower {lo} exceeds upper {hi} at region {s}, train {i}, stop {j}"
                        )));
                    }
                    if mu < lo || mu > hi {
                        warnings.push(format!(
                            "mean {mu} outside support [{lo}, {hi}] at region {s}, train {i}, stop {j}"
                        ));
                    }
                }
            }
        }
        Ok(warnings)
    }

    /// The support's upper bound as a demand scenario.
    pub fn upper_scenario(&self) -> DemandScenario {
        DemandScenario {
            demand: self.upper.clone(),
        }
    }

    /// Cell of the most negative `mean - upper` objective coefficient, if
    /// any coefficient is negative: the witness for unboundedness.
    pub(crate) fn most_negative_rho_cell(&self) -> Option<(usize, usize, usize, f64)> {
        let mut worst: Option<(usize, usize, usize, f64)> = None;
        for (s, region) in self.mean.iter().enumerate() {
            for (i, row) in region.iter().enumerate() {
                for (j, &mu) in row.iter().enumerate() {
                    let coefficient = mu - self.upper[s][i][j];
                    if coefficient < 0.0
                        && worst.as_ref().is_none_or(|&(_, _, _, c)| coefficient < c)
                    {
                        worst = Some((s, i, j, coefficient));
                    }
                }
            }
        }
        worst
    }
}

/// How the mean-constraint multiplier is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Pin `rho = 0` (bounded; equals the deterministic model at the upper
    /// bound).
    #[default]
    FixedZero,
    /// Declare `rho >= 0` as written; unbounded whenever mean < upper
    /// somewhere.
    FreeNonnegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrOptions {
    pub rho_mode: RhoMode,
}

/// Variable ids of a built model: first stage as in the sample-average
/// model, `rho[s][i][j]` only in the free mode, worst-case backlog
/// `y[s][i][j]` and assignments `x[s][i][k][p]` (p over served stops,
/// ascending).
pub struct DrIndex {
    pub m: Vec<VarId>,
    pub w: Vec<Vec<Vec<VarId>>>,
    pub v: Vec<Vec<VarId>>,
    pub rho: Option<Vec<Vec<Vec<VarId>>>>,
    pub y: Vec<Vec<Vec<VarId>>>,
    pub x: Vec<Vec<Vec<Vec<VarId>>>>,
}

pub struct DrModel {
    pub model: LinearModel,
    pub index: DrIndex,
}

/// Builds the robust counterpart: first-stage block plus one worst-case
/// service block with balance relaxed to `>=` at the upper bound.
pub fn build_dr(
    instance: &Instance,
    amb: &AmbiguityInfo,
    opts: &DrOptions,
) -> Result<DrModel, DrError> {
    amb.check(instance)?;
    let mut model = LinearModel::new("dr", Sense::Minimize);
    // No trip-count caps here: the robust objective prices trips against the
    // whole ambiguity set, not a finite sample, so the empty-trip argument
    // that justifies them in the sample-average model does not carry over.
    let (m, w, v) = add_first_stage_block(&mut model, instance, true, None);
    let rho = match opts.rho_mode {
        RhoMode::FixedZero => None,
        RhoMode::FreeNonnegative => Some(
            instance
                .regions
                .iter()
                .enumerate()
                .map(|(s, region)| {
                    (0..region.num_trains)
                        .map(|i| {
                            (0..region.num_stops)
                                .map(|j| {
                                    model.add_var(
                                        format!("rho[{i},{j},{s}]"),
                                        VarKind::Continuous,
                                        0.0,
                                        f64::INFINITY,
                                        amb.mean[s][i][j] - amb.upper[s][i][j],
                                    )
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect::<Vec<Vec<Vec<VarId>>>>(),
        ),
    };
    let wait_cost = instance.costs.wait_weight * instance.headway_minutes;
    let capacity = f64::from(instance.vehicle_capacity);
    let mut y_all = Vec::with_capacity(instance.num_regions());
    let mut x_all = Vec::with_capacity(instance.num_regions());
    for (s, region) in instance.regions.iter().enumerate() {
        let y: Vec<Vec<VarId>> = (0..region.num_trains)
            .map(|i| {
                (0..region.num_stops)
                    .map(|j| {
                        model.add_var(
                            format!("y[{i},{j},{s}]"),
                            VarKind::Continuous,
                            0.0,
                            f64::INFINITY,
                            wait_cost,
                        )
                    })
                    .collect()
            })
            .collect();
        let x: Vec<Vec<Vec<VarId>>> = (0..region.num_trains)
            .map(|i| {
                region
                    .routes
                    .iter()
                    .enumerate()
                    .map(|(k, route)| {
                        route
                            .served_stops()
                            .map(|j| {
                                model.add_var(
                                    format!("x[{i},{j},{k},{s}]"),
                                    VarKind::Continuous,
                                    0.0,
                                    f64::INFINITY,
                                    instance.costs.ride_weight * route.stop_arrival_minutes[&j],
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        for i in 0..region.num_trains {
            for j in 0..region.num_stops {
                // y[i,j] - y[i-1,j] + sum_k x[i,j,k] >= upper[i,j]
                let mut terms = vec![(y[i][j], 1.0)];
                if i > 0 {
                    terms.push((y[i - 1][j], -1.0));
                }
                for (k, route) in region.routes.iter().enumerate() {
                    if let Some(p) = route.served_stops().position(|stop| stop == j) {
                        terms.push((x[i][k][p], 1.0));
                    }
                }
                model.add_constraint(terms, Cmp::Ge, amb.upper[s][i][j]);
            }
            for k in 0..region.routes.len() {
                let mut terms: Vec<(VarId, f64)> =
                    x[i][k].iter().map(|&id| (id, 1.0)).collect();
                terms.push((w[s][i][k], -capacity));
                model.add_constraint(terms, Cmp::Le, 0.0);
            }
        }
        y_all.push(y);
        x_all.push(x);
    }
    Ok(DrModel {
        model,
        index: DrIndex {
            m,
            w,
            v,
            rho,
            y: y_all,
            x: x_all,
        },
    })
}

/// First-stage decisions, the worst-case service plan behind them, and the
/// raw solve outcome.
#[derive(Debug)]
pub struct DrSolution {
    pub first_stage: FirstStageSolution,
    pub worst_case_plan: SecondStagePlan,
    pub outcome: SolveOutcome,
}

pub fn solve_dr(
    instance: &Instance,
    amb: &AmbiguityInfo,
    opts: &DrOptions,
    params: &SolverParams,
) -> Result<DrSolution, DrError> {
    solve_dr_with(default_backend()?.as_ref(), instance, amb, opts, params)
}

pub fn solve_dr_with(
    backend: &dyn Backend,
    instance: &Instance,
    amb: &AmbiguityInfo,
    opts: &DrOptions,
    params: &SolverParams,
) -> Result<DrSolution, DrError> {
    let built = build_dr(instance, amb, opts)?;
    let outcome = backend.solve(&built.model, params)?;
    if outcome.status == SolveStatus::Unbounded {
        // Only the free multiplier can produce a ray; name its witness.
        if let Some((s, i, j, coefficient)) = amb.most_negative_rho_cell() {
            return Err(DrError::Unbounded {
                variable: format!("rho[{i},{j},{s}]"),
                coefficient,
            });
        }
        return Err(DrError::Solver {
            context: "robust model without a negative rho coefficient".into(),
            status: outcome.status,
        });
    }
    if !matches!(
        outcome.status,
        SolveStatus::Optimal | SolveStatus::FeasibleTimeLimit
    ) {
        return Err(DrError::Solver {
            context: "robust model".into(),
            status: outcome.status,
        });
    }
    let first_stage = extract_first_stage(instance, &built, &outcome)?;
    let mut worst_case_plan = SecondStagePlan::zero(instance);
    for s in 0..instance.num_regions() {
        for i in 0..instance.regions[s].num_trains {
            for j in 0..instance.regions[s].num_stops {
                worst_case_plan.backlog[s][i][j] = outcome.value(built.index.y[s][i][j])?;
            }
            for (k, ids) in built.index.x[s][i].iter().enumerate() {
                for (p, &id) in ids.iter().enumerate() {
                    worst_case_plan.assignments[s][i][k][p] = outcome.value(id)?;
                }
            }
        }
    }
    worst_case_plan.objective_value = second_stage_cost(instance, &worst_case_plan)
        .expect("plan built against the same instance")
        .total;
    Ok(DrSolution {
        first_stage,
        worst_case_plan,
        outcome,
    })
}

fn extract_first_stage(
    instance: &Instance,
    built: &DrModel,
    outcome: &SolveOutcome,
) -> Result<FirstStageSolution, DrError> {
    let fleet = built
        .index
        .m
        .iter()
        .map(|&id| outcome.int_value(&built.model, id).map(|m| m as u32))
        .collect::<Result<Vec<u32>, MilpError>>()?;
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
        .collect::<Result<Vec<Vec<Vec<u32>>>, MilpError>>()?;
    Ok(FirstStageSolution::new(instance, fleet, trips)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::tiny_instance;
    use crate::recourse::solve_recourse_fixed;
    use crate::sp::{solve_sp, SaaOptions};
    use crate::synth::random_small_instance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ambiguity(instance: &Instance, rng: &mut impl Rng, hi: f64) -> AmbiguityInfo {
        let mut amb = AmbiguityInfo {
            mean: DemandScenario::zero(instance).demand,
            lower: DemandScenario::zero(instance).demand,
            upper: DemandScenario::zero(instance).demand,
        };
        for s in 0..instance.num_regions() {
            for i in 0..instance.regions[s].num_trains {
                for j in 0..instance.regions[s].num_stops {
                    let a = rng.random_range(0.0..=hi);
                    let b = rng.random_range(0.0..=hi);
                    let (lo, hi_cell) = if a <= b { (a, b) } else { (b, a) };
                    amb.lower[s][i][j] = lo;
                    amb.upper[s][i][j] = hi_cell;
                    amb.mean[s][i][j] = rng.random_range(lo..=hi_cell);
                }
            }
        }
        amb
    }

    #[test]
    fn pinned_rho_matches_the_deterministic_model_at_the_upper_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for case in 0..6 {
            let instance = random_small_instance(&mut rng);
            let amb = random_ambiguity(&instance, &mut rng, 4.0);
            let params = SolverParams::with_gap(1e-9);
            let robust =
                solve_dr(&instance, &amb, &DrOptions::default(), &params).unwrap();
            let deterministic = solve_sp(
                &instance,
                &[amb.upper_scenario()],
                &SaaOptions::default(),
                &params,
            )
            .unwrap();
            let dr_value = robust.outcome.objective_value.unwrap();
            let sp_value = deterministic.outcome.objective_value.unwrap();
            assert!(
                (dr_value - sp_value).abs() <= 1e-6 * sp_value.abs().max(1.0),
                "case {case}: dr {dr_value} vs deterministic {sp_value}"
            );
        }
    }

    #[test]
    fn equal_mean_and_upper_makes_both_rho_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let instance = random_small_instance(&mut rng);
        let mut amb = random_ambiguity(&instance, &mut rng, 4.0);
        amb.mean = amb.upper.clone();
        let params = SolverParams::with_gap(1e-9);
        let pinned = solve_dr(&instance, &amb, &DrOptions::default(), &params)
            .unwrap()
            .outcome
            .objective_value
            .unwrap();
        let free = solve_dr(
            &instance,
            &amb,
            &DrOptions {
                rho_mode: RhoMode::FreeNonnegative,
            },
            &params,
        )
        .unwrap()
        .outcome
        .objective_value
        .unwrap();
        assert!((pinned - free).abs() <= 1e-9 * pinned.abs().max(1.0));
    }

    #[test]
    fn free_rho_below_the_upper_bound_is_reported_unbounded_with_its_witness() {
        let instance = tiny_instance();
        let mut amb = AmbiguityInfo {
            mean: DemandScenario::zero(&instance).demand,
            lower: DemandScenario::zero(&instance).demand,
            upper: DemandScenario::zero(&instance).demand,
        };
        amb.upper[0][1][0] = 3.0;
        amb.mean[0][1][0] = 1.0;
        amb.upper[0][0][1] = 2.0;
        amb.mean[0][0][1] = 1.5;
        let err = solve_dr(
            &instance,
            &amb,
            &DrOptions {
                rho_mode: RhoMode::FreeNonnegative,
            },
            &SolverParams::default(),
        )
        .unwrap_err();
        match err {
            DrError::Unbounded {
                variable,
                coefficient,
            } => {
                assert_eq!(variable, "rho[1,0,0]");
                assert_eq!(coefficient, -2.0);
            }
            other => panic!("expected the unbounded diagnostic, got {other}"),
        }
    }

    #[test]
    fn zero_upper_bound_buys_nothing() {
        let instance = tiny_instance();
        let zero = DemandScenario::zero(&instance).demand;
        let amb = AmbiguityInfo {
            mean: zero.clone(),
            lower: zero.clone(),
            upper: zero,
        };
        let solved = solve_dr(
            &instance,
            &amb,
            &DrOptions::default(),
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(solved.outcome.objective_value.unwrap(), 0.0);
        assert!(solved.first_stage.fleet.iter().all(|&m| m == 0));
    }

    #[test]
    fn tiny_instance_optimum_matches_enumeration_at_the_upper_bound() {
        let instance = tiny_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let amb = random_ambiguity(&instance, &mut rng, 4.0);
        let upper = amb.upper_scenario();
        let mut best = f64::INFINITY;
        for m in 0..=2u32 {
            for code in 0..3u32.pow(6) {
                let mut digits = code;
                let mut trips = vec![vec![0u32; 3]; 2];
                for row in trips.iter_mut() {
                    for cell in row.iter_mut() {
                        *cell = digits % 3;
                        digits /= 3;
                    }
                }
                let Ok(first_stage) =
                    FirstStageSolution::new(&instance, vec![m], vec![trips])
                else {
                    continue;
                };
                let value = instance.total_fixed_cost(&first_stage.fleet)
                    + solve_recourse_fixed(&instance, &first_stage, &upper)
                        .unwrap()
                        .objective_value;
                best = best.min(value);
            }
        }
        let solved = solve_dr(
            &instance,
            &amb,
            &DrOptions::default(),
            &SolverParams::with_gap(1e-9),
        )
        .unwrap();
        let got = solved.outcome.objective_value.unwrap();
        assert!(
            (got - best).abs() <= 1e-6 * best.abs().max(1.0),
            "model {got} vs enumeration {best}"
        );
        // The reported objective decomposes into fixed cost plus the
        // worst-case plan's cost.
        let fixed = instance.total_fixed_cost(&solved.first_stage.fleet);
        let decomposed = fixed + solved.worst_case_plan.objective_value;
        assert!((got - decomposed).abs() <= 1e-6 * got.abs().max(1.0));
    }

    #[test]
    fn value_never_drops_when_the_upper_bound_rises() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        for _ in 0..5 {
            let instance = random_small_instance(&mut rng);
            let amb = random_ambiguity(&instance, &mut rng, 3.0);
            let mut bumped = amb.clone();
            let s = rng.random_range(0..instance.num_regions());
            let i = rng.random_range(0..instance.regions[s].num_trains);
            let j = rng.random_range(0..instance.regions[s].num_stops);
            bumped.upper[s][i][j] += rng.random_range(0.5..=2.0);
            bumped.mean[s][i][j] = bumped.upper[s][i][j].min(bumped.mean[s][i][j]);
            let params = SolverParams::with_gap(1e-9);
            let base = solve_dr(&instance, &amb, &DrOptions::default(), &params)
                .unwrap()
                .outcome
                .objective_value
                .unwrap();
            let higher = solve_dr(&instance, &bumped, &DrOptions::default(), &params)
                .unwrap()
                .outcome
                .objective_value
                .unwrap();
            assert!(higher >= base - 1e-9, "{higher} vs {base}");
        }
    }

    #[test]
    fn recourse_over_the_box_peaks_at_the_upper_corner() {
        // Q(m,w,·) is a max of linear functions of the demand (by duality),
        // so its maximum over a box sits at a corner; with monotonicity the
        // all-upper corner must win. Spot-check by enumerating corners.
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for _ in 0..2 {
            let instance = random_small_instance(&mut rng);
            let amb = random_ambiguity(&instance, &mut rng, 3.0);
            // Collapse all but up to 6 cells to a point so corner
            // enumeration stays small.
            let mut cells = Vec::new();
            for s in 0..instance.num_regions() {
                for i in 0..instance.regions[s].num_trains {
                    for j in 0..instance.regions[s].num_stops {
                        cells.push((s, i, j));
                    }
                }
            }
            let mut amb = amb;
            while cells.len() > 6 {
                let drop = rng.random_range(0..cells.len());
                let (s, i, j) = cells.swap_remove(drop);
                amb.lower[s][i][j] = amb.upper[s][i][j];
            }
            let first_stage = {
                // Any feasible first stage works; take the deterministic
                // optimum at the upper bound for a non-trivial schedule.
                let params = SolverParams::default();
                solve_sp(
                    &instance,
                    &[amb.upper_scenario()],
                    &SaaOptions::default(),
                    &params,
                )
                .unwrap()
                .first_stage
            };
            let upper_value = solve_recourse_fixed(&instance, &first_stage, &amb.upper_scenario())
                .unwrap()
                .objective_value;
            let mut worst = f64::NEG_INFINITY;
            for mask in 0..(1u32 << cells.len()) {
                let mut scenario = DemandScenario {
                    demand: amb.lower.clone(),
                };
                for (bit, &(s, i, j)) in cells.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        scenario.demand[s][i][j] = amb.upper[s][i][j];
                    }
                }
                let value = solve_recourse_fixed(&instance, &first_stage, &scenario)
                    .unwrap()
                    .objective_value;
                worst = worst.max(value);
            }
            assert!(
                (worst - upper_value).abs() <= 1e-6 * worst.abs().max(1.0),
                "corner max {worst} vs upper corner {upper_value}"
            );
        }
    }

    #[test]
    fn ambiguity_validation_rejects_crossed_bounds_and_warns_on_stray_means() {
        let instance = tiny_instance();
        let zero = DemandScenario::zero(&instance).demand;
        let mut amb = AmbiguityInfo {
            mean: zero.clone(),
            lower: zero.clone(),
            upper: zero,
        };
        amb.upper[0][0][0] = 2.0;
        amb.mean[0][0][0] = 3.0;
        let warnings = amb.check(&instance).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("outside support"));
        amb.lower[0][1][1] = 1.0;
        assert!(matches!(
            amb.check(&instance),
            Err(DrError::InvalidAmbiguity(_))
        ));
    }

    #[test]
    fn builds_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let instance = random_small_instance(&mut rng);
        let amb = random_ambiguity(&instance, &mut rng, 4.0);
        let a = build_dr(&instance, &amb, &DrOptions::default()).unwrap();
        let b = build_dr(&instance, &amb, &DrOptions::default()).unwrap();
        assert_eq!(a.model, b.model);
    }
}
