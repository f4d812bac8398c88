//! The augmented space `W = X x Z` in which inner surrogates are trained.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kriging::{ExperimentalDesign, InputSpace};
use crate::problem::{evaluate, EvalCounter, MixedPoint, ObjectiveModel, ProblemSpec, RandomVarSpec};
use crate::sampling::{derive_seed, domain, inverse_cdf, lhs_sample, LhsOptimization};

/// Bounds of the confidence design space and the truncated environmental
/// space, followed by the categorical level counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSpace {
    pub inputs: InputSpace,
    pub n_design: usize,
}

/// Widens noisy design variables by their noise quantiles at the design
/// bounds and truncates unbounded environmental variables at `[eps, 1 - eps]`.
pub fn build_augmented_space(
    spec: &ProblemSpec,
    alpha_lo: f64,
    alpha_hi: f64,
    env_truncation: f64,
) -> Result<AugmentedSpace> {
    for a in [alpha_lo, alpha_hi] {
        if !(a > 0.5 && a < 1.0) {
            return Err(Error::InvalidConfig(format!("confidence level {a} outside (0.5, 1)")));
        }
    }
    if !(env_truncation > 0.0 && env_truncation < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "environmental truncation {env_truncation} outside (0, 0.5)"
        )));
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for var in &spec.design.continuous {
        match &var.noise {
            None => {
                lower.push(var.lower);
                upper.push(var.upper);
            }
            Some(noise) => {
                lower.push(inverse_cdf(&noise.conditional(var.lower), 1.0 - alpha_lo)?);
                upper.push(inverse_cdf(&noise.conditional(var.upper), alpha_hi)?);
            }
        }
    }
    for z in &spec.environmental {
        match z.distribution {
            RandomVarSpec::Uniform { lower: l, upper: u } => {
                lower.push(l);
                upper.push(u);
            }
            dist => {
                lower.push(inverse_cdf(&dist, env_truncation)?);
                upper.push(inverse_cdf(&dist, 1.0 - env_truncation)?);
            }
        }
    }
    Ok(AugmentedSpace {
        inputs: InputSpace::new(lower, upper, spec.design.level_counts())?,
        n_design: spec.design.continuous.len(),
    })
}

/// Maps unit-cube rows to mixed points: continuous coordinates scaled to the
/// bounds, categorical ones binned into levels.
pub fn unit_to_points(space: &InputSpace, unit: &[Vec<f64>]) -> Vec<MixedPoint> {
    let n_con = space.n_con();
    unit.iter()
        .map(|u| {
            let con = (0..n_con)
                .map(|k| space.lower[k] + u[k] * (space.upper[k] - space.lower[k]))
                .collect();
            let cat = space
                .levels
                .iter()
                .enumerate()
                .map(|(k, &b)| ((u[n_con + k] * b as f64) as usize).min(b - 1))
                .collect();
            MixedPoint::new(con, cat)
        })
        .collect()
}

/// Space-filling design of `n` points over `space` (maximin LHS).
pub fn space_filling_points(space: &InputSpace, n: usize, seed: u64) -> Result<Vec<MixedPoint>> {
    let lhs = lhs_sample(n, space.dim(), seed, LhsOptimization::Maximin)?;
    Ok(unit_to_points(space, &lhs.points))
}

/// Evaluates the model at `points` in parallel, keeping input order.
pub fn evaluate_batch(
    model: &dyn ObjectiveModel,
    points: &[MixedPoint],
    counter: &EvalCounter,
) -> Result<Vec<Vec<f64>>> {
    points.par_iter().map(|w| evaluate(model, w, counter)).collect()
}

/// Initial experimental design of `n0` points in the augmented space.
pub fn initial_design(
    space: &AugmentedSpace,
    model: &dyn ObjectiveModel,
    n0: usize,
    seed: u64,
    counter: &EvalCounter,
) -> Result<ExperimentalDesign> {
    let points = space_filling_points(&space.inputs, n0, derive_seed(seed, domain::INITIAL_ED, 0))?;
    let mut ed = ExperimentalDesign::default();
    let responses = evaluate_batch(model, &points, counter)?;
    for (w, y) in points.into_iter().zip(responses) {
        ed.push(&space.inputs, w, y);
    }
    Ok(ed)
}
