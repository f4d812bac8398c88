//! Run configuration and problem resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use robust_moo::adaptive::AdaptiveConfig;
use robust_moo::bench::{self, ReferenceArtifact, BENCHMARK_NAMES};
use robust_moo::problem::{ConstraintSet, ExternalCommandModel, ObjectiveModel, ProblemSpec};

/// Contents of a `--config` file. Command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Built-in benchmark name or path to a problem file.
    pub problem: Option<String>,
    pub algorithm: AdaptiveConfig,
    pub seed: u64,
    /// Repetitions per target; repetition `r` uses seed `seed + r`.
    pub reps: usize,
    /// Convergence targets to sweep. Empty means `algorithm.target` alone.
    pub eta_bar: Vec<f64>,
    pub out: Option<PathBuf>,
    /// Reference artifact for the hypervolume metrics.
    pub reference: Option<PathBuf>,
    /// Constraint variant of the first benchmark.
    pub example1_constraints: ConstraintSet,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: None,
            algorithm: AdaptiveConfig::default(),
            seed: 0,
            reps: 1,
            eta_bar: Vec::new(),
            out: None,
            reference: None,
            example1_constraints: ConstraintSet::Bnh,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.reps == 0 {
            bail!("reps must be at least 1");
        }
        if let Some(e) = self.eta_bar.iter().find(|e| !(**e > 0.0)) {
            bail!("eta_bar values must be positive, got {e}");
        }
        self.algorithm.validate()?;
        Ok(())
    }

    pub fn targets(&self) -> Vec<f64> {
        if self.eta_bar.is_empty() {
            vec![self.algorithm.target]
        } else {
            self.eta_bar.clone()
        }
    }
}

/// A user problem: the specification plus the program that evaluates it.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub spec: ProblemSpec,
    pub command: CommandSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

pub struct Problem {
    pub spec: ProblemSpec,
    pub model: Box<dyn ObjectiveModel>,
    /// Set for built-in benchmarks.
    pub builtin: Option<String>,
}

pub fn resolve_problem(name: &str, constraints: ConstraintSet) -> anyhow::Result<Problem> {
    if BENCHMARK_NAMES.contains(&name) {
        let b = bench::benchmark_with(name, constraints)?;
        return Ok(Problem {
            spec: b.spec,
            model: b.model,
            builtin: Some(name.to_string()),
        });
    }
    let path = Path::new(name);
    if !path.exists() {
        bail!(
            "'{name}' is neither a built-in problem ({}) nor an existing file",
            BENCHMARK_NAMES.join(", ")
        );
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {name}"))?;
    let file: ProblemFile = serde_json::from_str(&text).with_context(|| format!("invalid problem file {name}"))?;
    file.spec.validate()?;
    Ok(Problem {
        model: Box::new(ExternalCommandModel {
            program: file.command.program,
            args: file.command.args,
            n_objectives: file.spec.n_objectives,
        }),
        spec: file.spec,
        builtin: None,
    })
}

/// The explicit reference file, else the shipped artifact of a built-in
/// problem when it matches the problem's constraints.
pub fn resolve_reference(config: &RunConfig, problem: &Problem) -> anyhow::Result<Option<ReferenceArtifact>> {
    if let Some(path) = &config.reference {
        let r = ReferenceArtifact::load(path).with_context(|| format!("cannot load reference {}", path.display()))?;
        return Ok(Some(r));
    }
    let Some(name) = &problem.builtin else {
        return Ok(None);
    };
    let r = bench::builtin_reference(name)?;
    Ok((r.constraints == problem.spec.constraints && r.alpha == problem.spec.alpha).then_some(r))
}
