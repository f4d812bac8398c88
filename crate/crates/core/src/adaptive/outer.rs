//! Outer surrogate: Kriging of the design-to-quantile map.

use rayon::prelude::*;

use super::OuterConfig;
use crate::error::Result;
use crate::kriging::{calibrate_values, CalibrationOptions, ExperimentalDesign, InputSpace, KrigingModel, SetPredictor};
use crate::problem::{MixedPoint, ProblemSpec};
use crate::sampling::{derive_seed, domain, quantile_in_place};

use super::space::space_filling_points;

/// Design bounds and levels, without noise widening.
pub(crate) fn design_input_space(spec: &ProblemSpec) -> Result<InputSpace> {
    InputSpace::new(
        spec.design.continuous.iter().map(|v| v.lower).collect(),
        spec.design.continuous.iter().map(|v| v.upper).collect(),
        spec.design.level_counts(),
    )
}

#[derive(Debug, Clone)]
pub struct OuterSurrogate {
    /// One model per objective.
    pub models: Vec<KrigingModel>,
    /// Designs and their inner-surrogate quantiles.
    pub ed: ExperimentalDesign,
}

impl OuterSurrogate {
    pub fn predict(&self, d: &MixedPoint) -> Vec<f64> {
        self.models.iter().map(|m| m.mean(d)).collect()
    }
}

/// Fits the outer models on a space-filling design of `size` points plus the
/// previous Pareto set, with responses taken from the inner surrogates.
#[allow(clippy::too_many_arguments)]
pub fn build_outer_surrogate(
    predictors: &[SetPredictor],
    space: &InputSpace,
    size: usize,
    previous: &[MixedPoint],
    alpha: &[f64],
    config: &OuterConfig,
    warm: &[Vec<f64>],
    seed: u64,
) -> Result<OuterSurrogate> {
    let mut points: Vec<MixedPoint> = Vec::with_capacity(size + previous.len());
    for w in space_filling_points(space, size, seed)?.into_iter().chain(previous.iter().cloned()) {
        if !points.iter().any(|p| space.coincident(p, &w)) {
            points.push(w);
        }
    }
    let columns: Vec<Vec<f64>> = predictors
        .iter()
        .zip(alpha)
        .map(|(p, &a)| {
            p.means_many(&points)
                .into_par_iter()
                .map(|mut means| quantile_in_place(&mut means, a))
                .collect()
        })
        .collect();
    let models = columns
        .iter()
        .enumerate()
        .map(|(k, values)| {
            let warm_start = warm.get(k).cloned();
            let options = CalibrationOptions {
                restarts: if warm_start.is_some() { config.warm_restarts } else { config.restarts },
                max_evaluations: config.max_likelihood_evaluations,
                seed: derive_seed(seed, domain::CALIBRATION, k as u64),
                warm_start,
                ..Default::default()
            };
            calibrate_values(space, &points, values, &options)
        })
        .collect::<Result<Vec<_>>>()?;
    let responses = (0..points.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    Ok(OuterSurrogate {
        models,
        ed: ExperimentalDesign::new(points, responses)?,
    })
}
