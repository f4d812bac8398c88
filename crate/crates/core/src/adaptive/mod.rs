//! The adaptive surrogate-assisted loop.
//!
//! Each cycle calibrates one inner Kriging model per objective in the
//! augmented space, optionally fits an outer model of the design-to-quantile
//! map, runs NSGA-II on the quantile objectives, measures the accuracy of the
//! quantiles on the resulting Pareto set and, unless converged, enriches the
//! experimental design with true-model evaluations where the inner models are
//! least certain.

mod accuracy;
mod outer;
mod space;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kriging::{calibrate, CalibrationOptions, ExperimentalDesign, KrigingModel, SetPredictor, Trend};
use crate::moga::{run_nsga2, GaConfig};
use crate::problem::{EvalCounter, MixedPoint, ObjectiveModel, ProblemSpec};
use crate::sampling::{derive_seed, domain, CrnContext};

pub use accuracy::{
    filter_outliers, pareto_accuracy, quantile_bounds, quantile_objectives, relative_error, select_enrichment,
    true_quantiles, AccuracyReport, EnrichmentRequest, QuantileBounds, CONFIDENCE_FACTOR,
};
pub use outer::{build_outer_surrogate, OuterSurrogate};
pub use space::{
    build_augmented_space, evaluate_batch, initial_design, space_filling_points, unit_to_points, AugmentedSpace,
};

/// Version tag of checkpoint files.
pub const CHECKPOINT_VERSION: u32 = 1;

/// What stands in for the expensive model inside the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    #[default]
    Kriging,
    /// The true model itself: quantiles are exact under the CRN and the loop
    /// reduces to a single NSGA-II run.
    TrueModel,
}

/// Settings of the outer design-to-quantile surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterConfig {
    pub enabled: bool,
    pub initial_size: usize,
    /// Added to the design size whenever the outer error exceeds `threshold`.
    pub increment: usize,
    pub max_size: usize,
    pub threshold: f64,
    pub restarts: usize,
    pub warm_restarts: usize,
    pub max_likelihood_evaluations: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            initial_size: 200,
            increment: 100,
            max_size: 600,
            threshold: 0.05,
            restarts: 5,
            warm_restarts: 1,
            max_likelihood_evaluations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    /// Convergence threshold on the relative quantile error.
    pub target: f64,
    /// Monte Carlo sample size `N` of every quantile.
    pub n_samples: usize,
    /// Initial design size as a multiple of the augmented dimension.
    pub initial_size_factor: usize,
    /// Enrichment points per cycle; `None` means twice the objective count.
    pub batch_size: Option<usize>,
    /// Operator settings; the generation cap and seed are set per cycle.
    pub ga: GaConfig,
    pub generations_start: usize,
    pub generations_step: usize,
    pub generations_cap: usize,
    /// Loosens the enrichment threshold in early cycles.
    pub threshold_schedule: bool,
    pub outer: OuterConfig,
    pub alpha_d: f64,
    pub env_truncation: f64,
    pub max_cycles: usize,
    pub trend: Trend,
    pub restarts: usize,
    /// Restarts once a previous optimum is available (it is one of them).
    pub warm_restarts: usize,
    pub max_likelihood_evaluations: usize,
    pub surrogate: SurrogateMode,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            target: 0.03,
            n_samples: 5000,
            initial_size_factor: 3,
            batch_size: None,
            ga: GaConfig::default(),
            generations_start: 10,
            generations_step: 10,
            generations_cap: 100,
            threshold_schedule: true,
            outer: OuterConfig::default(),
            alpha_d: 0.975,
            env_truncation: 1e-5,
            max_cycles: 100,
            trend: Trend::Constant,
            restarts: 10,
            warm_restarts: 3,
            max_likelihood_evaluations: 300,
            surrogate: SurrogateMode::Kriging,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.target > 0.0) {
            return bad("target must be positive");
        }
        if self.n_samples < 10 {
            return bad("n_samples must be at least 10");
        }
        if self.initial_size_factor < 1 || self.max_cycles < 1 || self.restarts < 1 || self.warm_restarts < 1 {
            return bad("initial_size_factor, max_cycles and restart counts must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if self.generations_start < 1 || self.generations_cap < self.generations_start {
            return bad("generation schedule must satisfy 1 <= start <= cap");
        }
        if self.outer.enabled && (self.outer.initial_size < 2 || self.outer.max_size < self.outer.initial_size) {
            return bad("outer design sizes must satisfy 2 <= initial_size <= max_size");
        }
        self.ga.validate()
    }

    /// Generation cap of cycle `j` (one-based).
    pub fn generations(&self, cycle: usize) -> usize {
        (self.generations_start + self.generations_step * (cycle - 1)).min(self.generations_cap)
    }

    /// Enrichment threshold of cycle `j`: `max(target, 10 target 2^-(j-1))`.
    pub fn threshold(&self, cycle: usize) -> f64 {
        if !self.threshold_schedule {
            return self.target;
        }
        let loose = 10.0 * self.target * 0.5f64.powi(cycle as i32 - 1);
        loose.max(self.target)
    }
}

/// Per-cycle diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub generations: usize,
    pub threshold: f64,
    /// Worst non-outlier relative error per objective.
    pub worst_eta: Vec<f64>,
    /// Worst error per objective including outliers.
    pub max_eta: Vec<f64>,
    pub front_size: usize,
    pub outliers: usize,
    pub ed_size: usize,
    pub evaluations: u64,
    pub outer_size: Option<usize>,
    pub outer_eta: Option<f64>,
    pub enrichment: Vec<MixedPoint>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// The cycle cap was reached first.
    CycleCap,
    /// No new enrichment point could be found.
    Stalled,
    /// Stopped on request after a checkpoint.
    Paused,
}

/// Resumable state between two cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub problem: String,
    pub seed: u64,
    pub config: AdaptiveConfig,
    /// Completed cycles.
    pub cycle: usize,
    pub ed: ExperimentalDesign,
    pub inner_theta: Vec<Vec<f64>>,
    pub outer_theta: Vec<Vec<f64>>,
    pub outer_size: usize,
    pub previous_pareto: Vec<MixedPoint>,
    pub evaluations: u64,
    pub initial_std: Vec<f64>,
    pub history: Vec<CycleRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Written after every cycle.
    pub checkpoint_path: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Pause once this many cycles are complete (counting resumed ones).
    pub stop_after_cycles: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub status: RunStatus,
    /// Non-outlier Pareto designs.
    pub pareto_set: Vec<MixedPoint>,
    /// Objective values seen by the optimizer for `pareto_set`.
    pub pareto_front: Vec<Vec<f64>>,
    /// Quantiles of the inner surrogate means for `pareto_set`.
    pub inner_quantiles: Vec<Vec<f64>>,
    /// Relative errors of `pareto_set`.
    pub eta: Vec<Vec<f64>>,
    pub cycles: usize,
    pub evaluations: u64,
    pub ed: ExperimentalDesign,
    pub history: Vec<CycleRecord>,
    pub seed: u64,
    pub n_samples: usize,
    pub checkpoint: Option<Checkpoint>,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Runs the adaptive loop on `model` for problem `spec`.
pub fn run(
    spec: &ProblemSpec,
    model: &dyn ObjectiveModel,
    config: &AdaptiveConfig,
    seed: u64,
    options: &RunOptions,
) -> Result<RunResult> {
    spec.validate()?;
    config.validate()?;
    if model.n_objectives() != spec.n_objectives {
        return Err(Error::InvalidProblem(format!(
            "model returns {} objectives, problem declares {}",
            model.n_objectives(),
            spec.n_objectives
        )));
    }
    let crn = CrnContext::new(spec, config.n_samples, seed)?;
    match config.surrogate {
        SurrogateMode::TrueModel => run_true_model(spec, model, config, seed, &crn),
        SurrogateMode::Kriging => run_kriging(spec, model, config, seed, &crn, options),
    }
}

fn cycle_ga(config: &AdaptiveConfig, seed: u64, cycle: usize) -> GaConfig {
    GaConfig {
        max_generations: config.generations(cycle),
        seed: derive_seed(seed, domain::NSGA, cycle as u64),
        ..config.ga.clone()
    }
}

fn run_true_model(
    spec: &ProblemSpec,
    model: &dyn ObjectiveModel,
    config: &AdaptiveConfig,
    seed: u64,
    crn: &CrnContext,
) -> Result<RunResult> {
    let counter = EvalCounter::new(0);
    let objective = |points: &[MixedPoint]| -> Result<Vec<Vec<f64>>> {
        points
            .par_iter()
            .map(|d| true_quantiles(model, spec, crn, d, &counter))
            .collect()
    };
    let ga = cycle_ga(config, seed, 1);
    let nsga = run_nsga2(&objective, spec, &ga)?;
    let (set, front): (Vec<MixedPoint>, Vec<Vec<f64>>) =
        nsga.front.into_iter().map(|i| (i.point, i.objectives)).unzip();
    let m = spec.n_objectives;
    let record = CycleRecord {
        cycle: 1,
        generations: nsga.generations,
        threshold: config.threshold(1),
        worst_eta: vec![0.0; m],
        max_eta: vec![0.0; m],
        front_size: set.len(),
        outliers: 0,
        ed_size: 0,
        evaluations: counter.get(),
        outer_size: None,
        outer_eta: None,
        enrichment: Vec::new(),
        converged: true,
    };
    Ok(RunResult {
        status: RunStatus::Converged,
        eta: vec![vec![0.0; m]; set.len()],
        inner_quantiles: front.clone(),
        pareto_set: set,
        pareto_front: front,
        cycles: 1,
        evaluations: counter.get(),
        ed: ExperimentalDesign::default(),
        history: vec![record],
        seed,
        n_samples: crn.n,
        checkpoint: None,
    })
}

fn run_kriging(
    spec: &ProblemSpec,
    model: &dyn ObjectiveModel,
    config: &AdaptiveConfig,
    seed: u64,
    crn: &CrnContext,
    options: &RunOptions,
) -> Result<RunResult> {
    let m = spec.n_objectives;
    let aug = build_augmented_space(spec, config.alpha_d, config.alpha_d, config.env_truncation)?;
    let design_space = outer::design_input_space(spec)?;
    let design_ranges = spec.design.ranges();
    let batch_size = config.batch_size.unwrap_or(2 * m);

    let mut state = match &options.resume {
        Some(c) => {
            if c.problem != spec.name || c.seed != seed || c.config != *config {
                return Err(Error::InvalidConfig(
                    "checkpoint was written for a different problem, seed or configuration".into(),
                ));
            }
            c.clone()
        }
        None => {
            let counter = EvalCounter::new(0);
            let n0 = config.initial_size_factor * spec.augmented_dim();
            let ed = initial_design(&aug, model, n0, seed, &counter)?;
            log::info!("initial design: {} points", ed.len());
            let initial_std = (0..m).map(|k| population_std(&ed.column(k))).collect();
            Checkpoint {
                version: CHECKPOINT_VERSION,
                problem: spec.name.clone(),
                seed,
                config: config.clone(),
                cycle: 0,
                ed,
                inner_theta: Vec::new(),
                outer_theta: Vec::new(),
                outer_size: config.outer.initial_size,
                previous_pareto: Vec::new(),
                evaluations: counter.get(),
                initial_std,
                history: Vec::new(),
            }
        }
    };

    loop {
        let cycle = state.cycle + 1;
        let counter = EvalCounter::new(state.evaluations);

        let inner: Vec<KrigingModel> = (0..m)
            .map(|k| {
                let warm = state.inner_theta.get(k).cloned();
                let options = CalibrationOptions {
                    trend: config.trend,
                    restarts: if warm.is_some() { config.warm_restarts } else { config.restarts },
                    max_evaluations: config.max_likelihood_evaluations,
                    seed: derive_seed(seed, domain::CALIBRATION, (cycle * m + k) as u64),
                    warm_start: warm,
                    ..Default::default()
                };
                calibrate(&state.ed, k, &aug.inputs, &options)
            })
            .collect::<Result<_>>()?;
        let predictors: Vec<SetPredictor> = inner
            .iter()
            .map(|model| SetPredictor::new(model, spec, crn))
            .collect::<Result<_>>()?;

        let outer_model = if config.outer.enabled {
            Some(build_outer_surrogate(
                &predictors,
                &design_space,
                state.outer_size,
                &state.previous_pareto,
                &spec.alpha,
                &config.outer,
                &state.outer_theta,
                derive_seed(seed, domain::OUTER_ED, cycle as u64),
            )?)
        } else {
            None
        };

        let objective = |points: &[MixedPoint]| -> Result<Vec<Vec<f64>>> {
            Ok(match &outer_model {
                Some(o) => points.par_iter().map(|d| o.predict(d)).collect(),
                None => points
                    .par_iter()
                    .map(|d| quantile_objectives(d, &predictors, &spec.alpha))
                    .collect(),
            })
        };
        let nsga = run_nsga2(&objective, spec, &cycle_ga(config, seed, cycle))?;
        let (designs, values): (Vec<MixedPoint>, Vec<Vec<f64>>) =
            nsga.front.into_iter().map(|i| (i.point, i.objectives)).unzip();

        let report = pareto_accuracy(&designs, &predictors, &spec.alpha, &state.initial_std);
        let outer_eta = outer_model.as_ref().map(|_| {
            let mut worst: f64 = 0.0;
            for (i, row) in values.iter().enumerate() {
                for k in 0..m {
                    let q = report.quantiles[i][k];
                    let scale = state.initial_std[k];
                    let denom = if q.abs() < 1e-6 * scale { scale } else { q.abs() };
                    worst = worst.max((row[k] - q).abs() / denom);
                }
            }
            worst
        });

        let threshold = config.threshold(cycle);
        let converged = report.converged(config.target);
        let max_eta = (0..m)
            .map(|k| report.eta.iter().map(|r| r[k]).fold(0.0, f64::max))
            .collect();
        log::info!(
            "cycle {cycle}: G={} front={} worst eta={:?} ED={} evals={}",
            nsga.generations,
            designs.len(),
            report.worst,
            state.ed.len(),
            counter.get()
        );

        let mut record = CycleRecord {
            cycle,
            generations: nsga.generations,
            threshold,
            worst_eta: report.worst.clone(),
            max_eta,
            front_size: designs.len(),
            outliers: (0..designs.len()).filter(|&i| report.is_outlier(i)).count(),
            ed_size: state.ed.len(),
            evaluations: counter.get(),
            outer_size: outer_model.as_ref().map(|o| o.ed.len()),
            outer_eta,
            enrichment: Vec::new(),
            converged,
        };

        let mut status = None;
        if converged {
            status = Some(RunStatus::Converged);
        } else if cycle >= config.max_cycles {
            status = Some(RunStatus::CycleCap);
        } else {
            let batch = select_enrichment(&EnrichmentRequest {
                designs: &designs,
                report: &report,
                predictors: &predictors,
                target: config.target,
                threshold,
                batch_size,
                ed: &state.ed,
                space: &aug.inputs,
                design_ranges: &design_ranges,
                seed: derive_seed(seed, domain::KMEANS, cycle as u64),
            });
            if batch.is_empty() {
                log::warn!("cycle {cycle}: no new enrichment point; stopping");
                status = Some(RunStatus::Stalled);
            } else {
                let responses = evaluate_batch(model, &batch, &counter)?;
                for (w, y) in batch.iter().cloned().zip(responses) {
                    state.ed.push(&aug.inputs, w, y);
                }
                record.enrichment = batch;
            }
        }

        state.cycle = cycle;
        state.evaluations = counter.get();
        state.inner_theta = inner.iter().map(|k| k.theta().to_vec()).collect();
        if let Some(o) = &outer_model {
            state.outer_theta = o.models.iter().map(|k| k.theta().to_vec()).collect();
            if outer_eta.is_some_and(|e| e > config.outer.threshold) {
                state.outer_size = (state.outer_size + config.outer.increment).min(config.outer.max_size);
            }
        }
        state.previous_pareto = designs.clone();
        state.history.push(record);

        if status.is_none() {
            if let Some(path) = &options.checkpoint_path {
                state.save(path)?;
            }
            if options.stop_after_cycles.is_some_and(|n| cycle >= n) {
                status = Some(RunStatus::Paused);
            }
        }

        if let Some(status) = status {
            let keep: Vec<usize> = (0..designs.len()).filter(|&i| !report.is_outlier(i)).collect();
            return Ok(RunResult {
                status,
                pareto_set: keep.iter().map(|&i| designs[i].clone()).collect(),
                pareto_front: keep.iter().map(|&i| values[i].clone()).collect(),
                inner_quantiles: keep.iter().map(|&i| report.quantiles[i].clone()).collect(),
                eta: keep.iter().map(|&i| report.eta[i].clone()).collect(),
                cycles: cycle,
                evaluations: state.evaluations,
                ed: state.ed.clone(),
                history: state.history.clone(),
                seed,
                n_samples: crn.n,
                checkpoint: Some(state),
            });
        }
    }
}
