//! Demand scenario generation, ambiguity estimation from samples, and cost
//! calibration.
//!
//! Everything here is pure given its seed: child generators are derived per
//! region or per scenario through [`derive_seed`], so partitioning work
//! across threads or runs never changes what any one partition draws.

use crate::domain::{DemandScenario, DomainError, Instance};
use crate::dr::AmbiguityInfo;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("need at least {needed} scenarios, got {got}")]
    NotEnough { needed: usize, got: usize },
    #[error("invalid demand spec: {0}")]
    InvalidSpec(String),
}

/// Derives a child seed from a root seed, a purpose tag, and an index.
///
/// Every randomized stage seeds its own generator through this function, so
/// partitioning work (by region, replication, or thread) never changes the
/// stream any single partition sees.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut state = root;
    for byte in tag.bytes() {
        state = splitmix64(state ^ u64::from(byte));
    }
    splitmix64(state ^ index)
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandFamily {
    #[default]
    Lognormal,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Round to the nearest nonnegative integer (passenger counts are
    /// people).
    #[default]
    NearestInt,
    None,
}

/// How batch demand is synthesized: cell means uniform on `mean_range`,
/// per-cell standard deviation `sigma_ratio * mean`, draws from `family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandSpec {
    pub mean_range: [f64; 2],
    pub sigma_ratio: f64,
    pub family: DemandFamily,
    pub rounding: Rounding,
    pub seed: u64,
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec {
            mean_range: [1.0, 4.0],
            sigma_ratio: 0.5,
            family: DemandFamily::Lognormal,
            rounding: Rounding::NearestInt,
            seed: 0,
        }
    }
}

impl DemandSpec {
    fn check(&self) -> Result<(), ScenarioError> {
        let [a, b] = self.mean_range;
        if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b) {
            return Err(ScenarioError::InvalidSpec(format!(
                "mean_range [{a}, {b}] must satisfy 0 <= a <= b"
            )));
        }
        if !(self.sigma_ratio >= 0.0) || !self.sigma_ratio.is_finite() {
            return Err(ScenarioError::InvalidSpec(format!(
                "sigma_ratio {} must be finite and nonnegative",
                self.sigma_ratio
            )));
        }
        Ok(())
    }
}

/// Reads a demand spec from TOML (default) or JSON (by `.json` extension).
pub fn load_demand_spec(path: &Path) -> Result<DemandSpec, DomainError> {
    let text = std::fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let spec: DemandSpec = if is_json {
        serde_json::from_str(&text).map_err(|e| DomainError::MalformedFile {
            kind: "demand spec",
            detail: e.to_string(),
        })?
    } else {
        toml::from_str(&text).map_err(|e| DomainError::MalformedFile {
            kind: "demand spec",
            detail: e.to_string(),
        })?
    };
    Ok(spec)
}

/// Draws one mean per demand cell, uniform on `spec.mean_range`, shaped
/// `[s][i][j]`. Each region consumes its own derived stream.
pub fn draw_means(instance: &Instance, spec: &DemandSpec) -> Result<Vec<Vec<Vec<f64>>>, ScenarioError> {
    spec.check()?;
    let [a, b] = spec.mean_range;
    Ok(instance
        .regions
        .iter()
        .enumerate()
        .map(|(s, region)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "means", s as u64));
            (0..region.num_trains)
                .map(|_| {
                    (0..region.num_stops)
                        .map(|_| rng.random_range(a..=b))
                        .collect()
                })
                .collect()
        })
        .collect())
}

fn check_means(instance: &Instance, means: &[Vec<Vec<f64>>]) -> Result<(), ScenarioError> {
    let expected: Vec<(usize, usize)> = instance
        .regions
        .iter()
        .map(|r| (r.num_trains, r.num_stops))
        .collect();
    let got: Vec<(usize, usize)> = means
        .iter()
        .map(|region| {
            let stops = region.first().map_or(0, Vec::len);
            (region.len(), stops)
        })
        .collect();
    let ragged = means
        .iter()
        .zip(&got)
        .any(|(region, &(_, stops))| region.iter().any(|row| row.len() != stops));
    if got != expected || ragged {
        return Err(ScenarioError::InvalidSpec(format!(
            "mean grid shaped {got:?} does not match instance cells {expected:?}"
        )));
    }
    for region in means {
        for row in region {
            if let Some(bad) = row.iter().find(|m| !m.is_finite() || **m < 0.0) {
                return Err(ScenarioError::InvalidSpec(format!(
                    "cell mean {bad} must be finite and nonnegative"
                )));
            }
        }
    }
    Ok(())
}

fn apply_rounding(value: f64, rounding: Rounding) -> f64 {
    match rounding {
        Rounding::NearestInt => value.round().max(0.0),
        Rounding::None => value,
    }
}

/// One draw from the per-cell demand distribution.
fn draw_cell(rng: &mut impl Rng, mean: f64, spec: &DemandSpec) -> f64 {
    if mean == 0.0 || spec.sigma_ratio == 0.0 {
        return mean;
    }
    match spec.family {
        DemandFamily::Lognormal => {
            // Underlying-normal parameters chosen so the draw itself has
            // mean `mean` and standard deviation `sigma_ratio * mean`.
            let sigma_ln_sq = (1.0 + spec.sigma_ratio * spec.sigma_ratio).ln();
            let mu_ln = mean.ln() - sigma_ln_sq / 2.0;
            LogNormal::new(mu_ln, sigma_ln_sq.sqrt())
                .expect("parameters are finite")
                .sample(rng)
        }
        DemandFamily::Uniform => {
            let half_width = 3f64.sqrt() * spec.sigma_ratio * mean;
            let lo = (mean - half_width).max(0.0);
            rng.random_range(lo..=mean + half_width)
        }
    }
}

/// Draws `count` demand scenarios around the given cell means. Scenario `r`
/// depends only on `(spec.seed, r)`.
pub fn gen_scenarios(
    instance: &Instance,
    means: &[Vec<Vec<f64>>],
    spec: &DemandSpec,
    count: usize,
) -> Result<Vec<DemandScenario>, ScenarioError> {
    spec.check()?;
    check_means(instance, means)?;
    Ok((0..count)
        .map(|r| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "scenario", r as u64));
            DemandScenario {
                demand: means
                    .iter()
                    .map(|region| {
                        region
                            .iter()
                            .map(|row| {
                                row.iter()
                                    .map(|&mean| {
                                        apply_rounding(
                                            draw_cell(&mut rng, mean, spec),
                                            spec.rounding,
                                        )
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Interpolated order-statistic quantile on a sorted ascending slice (the
/// common "type 7" convention): rank `(n-1) * q`, linear between neighbors.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = (sorted.len() - 1) as f64 * q;
    let below = rank.floor() as usize;
    let frac = rank - below as f64;
    if below + 1 < sorted.len() {
        sorted[below] + frac * (sorted[below + 1] - sorted[below])
    } else {
        sorted[below]
    }
}

/// Estimates per-cell mean and `[q_lo, q_hi]` quantile bounds from a sample
/// of scenarios.
pub fn estimate_ambiguity(
    scenarios: &[DemandScenario],
    q_lo: f64,
    q_hi: f64,
) -> Result<AmbiguityInfo, ScenarioError> {
    if scenarios.len() < 2 {
        return Err(ScenarioError::NotEnough {
            needed: 2,
            got: scenarios.len(),
        });
    }
    if !(0.0..=1.0).contains(&q_lo) || !(0.0..=1.0).contains(&q_hi) || q_lo > q_hi {
        return Err(ScenarioError::InvalidSpec(format!(
            "quantile levels ({q_lo}, {q_hi}) must satisfy 0 <= lo <= hi <= 1"
        )));
    }
    let shape: Vec<Vec<usize>> = scenarios[0]
        .demand
        .iter()
        .map(|region| region.iter().map(|row| row.len()).collect())
        .collect();
    for scenario in scenarios {
        let this: Vec<Vec<usize>> = scenario
            .demand
            .iter()
            .map(|region| region.iter().map(|row| row.len()).collect())
            .collect();
        if this != shape {
            return Err(ScenarioError::InvalidSpec(
                "scenarios disagree on dimensions".into(),
            ));
        }
    }
    let mut out = AmbiguityInfo {
        mean: Vec::with_capacity(shape.len()),
        lower: Vec::with_capacity(shape.len()),
        upper: Vec::with_capacity(shape.len()),
    };
    for (s, region_shape) in shape.iter().enumerate() {
        let mut mean_region = Vec::with_capacity(region_shape.len());
        let mut lower_region = Vec::with_capacity(region_shape.len());
        let mut upper_region = Vec::with_capacity(region_shape.len());
        for (i, &stops) in region_shape.iter().enumerate() {
            let mut mean_row = Vec::with_capacity(stops);
            let mut lower_row = Vec::with_capacity(stops);
            let mut upper_row = Vec::with_capacity(stops);
            for j in 0..stops {
                let mut values: Vec<f64> = scenarios
                    .iter()
                    .map(|scenario| scenario.demand[s][i][j])
                    .collect();
                values.sort_by(f64::total_cmp);
                mean_row.push(values.iter().sum::<f64>() / values.len() as f64);
                lower_row.push(quantile_sorted(&values, q_lo));
                upper_row.push(quantile_sorted(&values, q_hi));
            }
            mean_region.push(mean_row);
            lower_region.push(lower_row);
            upper_region.push(upper_row);
        }
        out.mean.push(mean_region);
        out.lower.push(lower_region);
        out.upper.push(upper_region);
    }
    Ok(out)
}

/// Out-of-sample scenarios from a different distribution family than the
/// in-sample data: per cell, uniform with mean exactly `mean` and range
/// inside `[lower, upper]` (half-width `min(mean - lower, upper - mean)`,
/// floored at zero). Values are left unrounded so cell means stay unbiased.
pub fn misspecified_set(amb: &AmbiguityInfo, count: usize, seed: u64) -> Vec<DemandScenario> {
    misspecified_set_correlated(amb, count, seed, 0.0).expect("zero correlation is valid")
}

/// [`misspecified_set`] with cells coupled through a Gaussian copula with a
/// single common factor of weight `correlation` in [0, 1); marginals (and
/// hence means and ranges) are unchanged. Zero gives independent cells.
pub fn misspecified_set_correlated(
    amb: &AmbiguityInfo,
    count: usize,
    seed: u64,
    correlation: f64,
) -> Result<Vec<DemandScenario>, ScenarioError> {
    if !(0.0..1.0).contains(&correlation) {
        return Err(ScenarioError::InvalidSpec(format!(
            "correlation {correlation} must lie in [0, 1)"
        )));
    }
    let scenarios = (0..count)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "oos", r as u64));
            let common: f64 = if correlation > 0.0 {
                rng.sample(StandardNormal)
            } else {
                0.0
            };
            let demand = amb
                .mean
                .iter()
                .enumerate()
                .map(|(s, region)| {
                    region
                        .iter()
                        .enumerate()
                        .map(|(i, row)| {
                            row.iter()
                                .enumerate()
                                .map(|(j, &mean)| {
                                    let half = (mean - amb.lower[s][i][j])
                                        .min(amb.upper[s][i][j] - mean)
                                        .max(0.0);
                                    if correlation > 0.0 {
                                        let own: f64 = rng.sample(StandardNormal);
                                        let z = correlation.sqrt() * common
                                            + (1.0 - correlation).sqrt() * own;
                                        mean + half * (2.0 * std_normal_cdf(z) - 1.0)
                                    } else {
                                        rng.random_range(mean - half..=mean + half)
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            DemandScenario { demand }
        })
        .collect();
    Ok(scenarios)
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 polynomial
/// (absolute error below 1.5e-7, plenty for copula coupling).
fn std_normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = ((((1.061_405_429 * t - 1.453_152_027) * t + 1.421_413_741) * t
        - 0.284_496_736)
        * t
        + 0.254_829_592)
        * t;
    let erf = 1.0 - poly * (-x * x).exp();
    let signed = if x < 0.0 { -erf } else { erf };
    0.5 * (1.0 + signed)
}

/// Derives cost parameters from an hourly after-tax wage `g` and an hourly
/// all-in vehicle cost `b`: the fixed cost covers the vehicle for the whole
/// service window of `trains * headway` minutes, and the per-minute time
/// values price riding at 0.76 and waiting at 1.95 of the wage.
pub fn calibrate_costs(
    wage_per_hour: f64,
    vehicle_cost_per_hour: f64,
    trains: usize,
    headway_minutes: f64,
) -> crate::domain::CostParams {
    crate::domain::CostParams::uniform(
        vehicle_cost_per_hour * trains as f64 * headway_minutes / 60.0,
        0.0325 * wage_per_hour,
        0.0127 * wage_per_hour,
    )
}

/// Saves ambiguity estimates as versioned JSON.
pub fn save_ambiguity(path: &Path, amb: &AmbiguityInfo) -> Result<(), DomainError> {
    std::fs::write(path, crate::domain::to_versioned_json(amb)?)?;
    Ok(())
}

pub fn load_ambiguity(path: &Path) -> Result<AmbiguityInfo, DomainError> {
    let text = std::fs::read_to_string(path)?;
    crate::domain::from_versioned_json(&text, "ambiguity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::tiny_instance;
    use crate::domain::{CostParams, RegionSpec};

    /// Bare instance with the requested cell grid; routes are irrelevant for
    /// demand generation.
    fn grid_instance(trains: usize, stops: usize) -> Instance {
        Instance {
            regions: vec![RegionSpec {
                region_id: 0,
                num_trains: trains,
                num_stops: stops,
                routes: Vec::new(),
            }],
            fleet_bound: 1,
            headway_minutes: 10.0,
            vehicle_capacity: 1,
            costs: CostParams::uniform(0.0, 2.0, 1.0),
        }
    }

    #[test]
    fn derived_seeds_differ_across_tags_and_indices() {
        let a = derive_seed(7, "stops", 0);
        let b = derive_seed(7, "stops", 1);
        let c = derive_seed(7, "demand", 0);
        let d = derive_seed(8, "stops", 0);
        assert_eq!(a, derive_seed(7, "stops", 0));
        assert!(a != b && a != c && a != d && b != c);
    }

    #[test]
    fn degenerate_mean_range_pins_every_cell() {
        let instance = grid_instance(3, 4);
        let spec = DemandSpec {
            mean_range: [2.0, 2.0],
            ..DemandSpec::default()
        };
        let means = draw_means(&instance, &spec).unwrap();
        assert!(means.iter().flatten().flatten().all(|&m| m == 2.0));
    }

    #[test]
    fn drawn_means_average_to_the_range_midpoint() {
        let instance = grid_instance(1000, 100);
        let spec = DemandSpec {
            seed: 11,
            ..DemandSpec::default()
        };
        let means = draw_means(&instance, &spec).unwrap();
        let cells: Vec<f64> = means.into_iter().flatten().flatten().collect();
        assert_eq!(cells.len(), 100_000);
        let average = cells.iter().sum::<f64>() / cells.len() as f64;
        assert!((average - 2.5).abs() <= 0.01 * 2.5, "average {average}");
    }

    #[test]
    fn mean_draws_are_reproducible_and_seed_sensitive() {
        let instance = grid_instance(4, 3);
        let spec = DemandSpec {
            seed: 9,
            ..DemandSpec::default()
        };
        assert_eq!(
            draw_means(&instance, &spec).unwrap(),
            draw_means(&instance, &spec).unwrap()
        );
        let other = DemandSpec {
            seed: 10,
            ..DemandSpec::default()
        };
        assert_ne!(
            draw_means(&instance, &spec).unwrap(),
            draw_means(&instance, &other).unwrap()
        );
    }

    #[test]
    fn zero_sigma_reproduces_the_means_rounded() {
        let instance = grid_instance(2, 2);
        let means = vec![vec![vec![1.4, 2.6], vec![0.0, 3.5]]];
        let spec = DemandSpec {
            sigma_ratio: 0.0,
            ..DemandSpec::default()
        };
        let scenarios = gen_scenarios(&instance, &means, &spec, 3).unwrap();
        for scenario in &scenarios {
            assert_eq!(scenario.demand, vec![vec![vec![1.0, 3.0], vec![0.0, 4.0]]]);
        }
    }

    #[test]
    fn lognormal_draws_match_the_requested_moments() {
        let instance = grid_instance(1, 1);
        let means = vec![vec![vec![2.5]]];
        let spec = DemandSpec {
            mean_range: [2.5, 2.5],
            sigma_ratio: 0.5,
            family: DemandFamily::Lognormal,
            rounding: Rounding::None,
            seed: 123,
        };
        let scenarios = gen_scenarios(&instance, &means, &spec, 100_000).unwrap();
        let values: Vec<f64> = scenarios.iter().map(|sc| sc.demand[0][0][0]).collect();
        assert!(values.iter().all(|&v| v > 0.0));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        let std = var.sqrt();
        assert!((mean - 2.5).abs() <= 0.01 * 2.5, "mean {mean}");
        assert!((std - 1.25).abs() <= 0.02 * 1.25, "std {std}");
    }

    #[test]
    fn uniform_draws_match_moments_and_stay_in_range() {
        let instance = grid_instance(1, 1);
        let means = vec![vec![vec![2.5]]];
        let spec = DemandSpec {
            mean_range: [2.5, 2.5],
            sigma_ratio: 0.5,
            family: DemandFamily::Uniform,
            rounding: Rounding::None,
            seed: 7,
        };
        let scenarios = gen_scenarios(&instance, &means, &spec, 40_000).unwrap();
        let values: Vec<f64> = scenarios.iter().map(|sc| sc.demand[0][0][0]).collect();
        let half_width = 3f64.sqrt() * 1.25;
        assert!(values
            .iter()
            .all(|&v| (2.5 - half_width..=2.5 + half_width).contains(&v)));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        assert!((mean - 2.5).abs() <= 0.01 * 2.5, "mean {mean}");
        assert!((var.sqrt() - 1.25).abs() <= 0.025 * 1.25, "std {}", var.sqrt());
    }

    #[test]
    fn rounding_never_produces_negatives_and_scenarios_reproduce() {
        let instance = tiny_instance();
        let spec = DemandSpec {
            seed: 31,
            ..DemandSpec::default()
        };
        let means = draw_means(&instance, &spec).unwrap();
        let a = gen_scenarios(&instance, &means, &spec, 50).unwrap();
        let b = gen_scenarios(&instance, &means, &spec, 50).unwrap();
        assert_eq!(a, b);
        for scenario in &a {
            for cell in scenario.demand.iter().flatten().flatten() {
                assert!(*cell >= 0.0 && cell.fract() == 0.0);
            }
        }
    }

    #[test]
    fn interpolated_quantiles_match_the_worked_example() {
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&sorted, 0.2), 1.8);
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 5.0);
        assert_eq!(quantile_sorted(&sorted, 0.5), 3.0);
    }

    #[test]
    fn constant_samples_collapse_the_ambiguity_set() {
        let instance = grid_instance(2, 2);
        let mut scenario = DemandScenario::zero(&instance);
        scenario.demand[0] = vec![vec![3.0, 1.0], vec![0.0, 2.0]];
        let amb = estimate_ambiguity(&[scenario.clone(), scenario.clone()], 0.2, 0.8).unwrap();
        assert_eq!(amb.mean, scenario.demand);
        assert_eq!(amb.lower, scenario.demand);
        assert_eq!(amb.upper, scenario.demand);
    }

    #[test]
    fn quantile_bounds_are_ordered_and_usually_bracket_the_mean() {
        let instance = grid_instance(6, 4);
        let spec = DemandSpec {
            rounding: Rounding::None,
            seed: 77,
            ..DemandSpec::default()
        };
        let means = draw_means(&instance, &spec).unwrap();
        let scenarios = gen_scenarios(&instance, &means, &spec, 100).unwrap();
        let amb = estimate_ambiguity(&scenarios, 0.2, 0.8).unwrap();
        let mut bracketed = 0;
        let mut cells = 0;
        for s in 0..1 {
            for i in 0..6 {
                for j in 0..4 {
                    cells += 1;
                    assert!(amb.lower[s][i][j] <= amb.upper[s][i][j]);
                    if amb.lower[s][i][j] <= amb.mean[s][i][j]
                        && amb.mean[s][i][j] <= amb.upper[s][i][j]
                    {
                        bracketed += 1;
                    }
                }
            }
        }
        assert!(bracketed * 100 >= cells * 99, "{bracketed}/{cells}");
        assert!(matches!(
            estimate_ambiguity(&scenarios[..1], 0.2, 0.8),
            Err(ScenarioError::NotEnough { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn misspecified_draws_keep_means_and_stay_inside_the_support() {
        let instance = grid_instance(2, 2);
        let spec = DemandSpec {
            rounding: Rounding::None,
            seed: 5,
            ..DemandSpec::default()
        };
        let means = draw_means(&instance, &spec).unwrap();
        let in_sample = gen_scenarios(&instance, &means, &spec, 100).unwrap();
        let amb = estimate_ambiguity(&in_sample, 0.2, 0.8).unwrap();
        let out = misspecified_set(&amb, 10_000, 99);
        assert_eq!(out.len(), 10_000);
        for i in 0..2 {
            for j in 0..2 {
                let values: Vec<f64> = out.iter().map(|sc| sc.demand[0][i][j]).collect();
                let mu = amb.mean[0][i][j];
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                assert!((mean - mu).abs() <= 0.01 * mu.max(1.0), "{mean} vs {mu}");
                assert!(values
                    .iter()
                    .all(|&v| amb.lower[0][i][j] - 1e-9 <= v && v <= amb.upper[0][i][j] + 1e-9));
            }
        }
        assert_eq!(out, misspecified_set(&amb, 10_000, 99));
    }

    #[test]
    fn degenerate_ambiguity_cells_emit_constants() {
        let amb = AmbiguityInfo {
            mean: vec![vec![vec![2.0]]],
            lower: vec![vec![vec![2.0]]],
            upper: vec![vec![vec![2.0]]],
        };
        for scenario in misspecified_set(&amb, 5, 3) {
            assert_eq!(scenario.demand[0][0][0], 2.0);
        }
    }

    #[test]
    fn copula_correlation_couples_cells_without_moving_marginals() {
        let amb = AmbiguityInfo {
            mean: vec![vec![vec![2.0, 3.0]]],
            lower: vec![vec![vec![1.0, 1.5]]],
            upper: vec![vec![vec![3.0, 4.5]]],
        };
        let coupled = misspecified_set_correlated(&amb, 20_000, 4, 0.8).unwrap();
        let a: Vec<f64> = coupled.iter().map(|sc| sc.demand[0][0][0]).collect();
        let b: Vec<f64> = coupled.iter().map(|sc| sc.demand[0][0][1]).collect();
        let mean_a = a.iter().sum::<f64>() / a.len() as f64;
        let mean_b = b.iter().sum::<f64>() / b.len() as f64;
        assert!((mean_a - 2.0).abs() <= 0.02, "{mean_a}");
        assert!((mean_b - 3.0).abs() <= 0.03, "{mean_b}");
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - mean_a) * (y - mean_b))
            .sum::<f64>()
            / a.len() as f64;
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        let corr = cov / (var(&a, mean_a) * var(&b, mean_b)).sqrt();
        assert!(corr > 0.5, "correlation {corr}");
        assert!(a.iter().all(|&v| (1.0..=3.0).contains(&v)));
        assert!(misspecified_set_correlated(&amb, 1, 0, 1.5).is_err());
    }

    #[test]
    fn cost_calibration_matches_the_worked_scenarios() {
        let zero = calibrate_costs(0.0, 0.0, 10, 10.0);
        assert_eq!(zero.fixed_cost(0), 0.0);
        assert_eq!(zero.wait_weight, 0.0);
        assert_eq!(zero.ride_weight, 0.0);
        let commuter = calibrate_costs(10.0, 30.0, 10, 10.0);
        assert!((commuter.fixed_cost(0) - 50.0).abs() < 1e-12);
        assert!((commuter.ride_weight - 0.127).abs() < 1e-12);
        assert!((commuter.wait_weight - 0.325).abs() < 1e-12);
        let premium = calibrate_costs(3.0, 90.0, 10, 10.0);
        assert!((premium.fixed_cost(0) - 150.0).abs() < 1e-12);
        assert!((premium.ride_weight - 0.0381).abs() < 1e-12);
        assert!((premium.wait_weight - 0.0975).abs() < 1e-12);
    }

    #[test]
    fn demand_specs_load_from_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("spec.toml");
        std::fs::write(
            &toml_path,
            "mean_range = [3.0, 7.0]\nsigma_ratio = 0.5\nfamily = \"lognormal\"\nrounding = \"none\"\nseed = 42\n",
        )
        .unwrap();
        let from_toml = load_demand_spec(&toml_path).unwrap();
        assert_eq!(from_toml.mean_range, [3.0, 7.0]);
        assert_eq!(from_toml.rounding, Rounding::None);
        assert_eq!(from_toml.seed, 42);
        let json_path = dir.path().join("spec.json");
        std::fs::write(&json_path, "{\"mean_range\": [1.0, 4.0]}").unwrap();
        let from_json = load_demand_spec(&json_path).unwrap();
        assert_eq!(from_json.mean_range, [1.0, 4.0]);
        assert_eq!(from_json.family, DemandFamily::Lognormal);
        assert!(load_demand_spec(&dir.path().join("missing.toml")).is_err());
        std::fs::write(&toml_path, "mean_range = [3.0, 7.0]\nbogus = 1\n").unwrap();
        assert!(matches!(
            load_demand_spec(&toml_path),
            Err(DomainError::MalformedFile { .. })
        ));
    }

    #[test]
    fn ambiguity_files_round_trip() {
        let amb = AmbiguityInfo {
            mean: vec![vec![vec![2.0, 3.0]]],
            lower: vec![vec![vec![1.0, 1.5]]],
            upper: vec![vec![vec![3.0, 4.5]]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ambiguity.json");
        save_ambiguity(&path, &amb).unwrap();
        assert_eq!(load_ambiguity(&path).unwrap(), amb);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"schema_version\""));
    }
}
