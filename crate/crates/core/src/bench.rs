//! Built-in benchmark problems and the brute-force reference solver.
//!
//! Example 1 is the BNH problem extended with two three-level categorical
//! variables and three environmental variables. Example 2 has a concave,
//! discontinuous front and noisy design variables only.

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::true_quantiles;
use crate::error::{Error, Result};
use crate::moga::{run_nsga2, GaConfig};
use crate::problem::{
    CategoricalVar, ConstraintSet, ContinuousVar, DesignNoise, DesignSpace, EnvironmentalVar, EvalCounter,
    MixedPoint, NoiseFamily, ObjectiveModel, ProblemSpec, RandomVarSpec,
};
use crate::sampling::CrnContext;

/// Version tag of reference artifacts.
pub const REFERENCE_VERSION: u32 = 1;

/// Shifted costs before the `d4` multipliers. `d3` is a zero-based level.
pub fn example1_shifted(d1: f64, d2: f64, d3: usize) -> [f64; 2] {
    let c1 = 4.0 * (d1 * d1 + d2 * d2);
    let c2 = (d1 - 5.0).powi(2) + (d2 - 5.0).powi(2);
    let shift = match d3 {
        0 => 5.0,
        1 => -2.0,
        _ => 0.0,
    };
    [c1 + shift, c2 + shift]
}

/// Example 1 costs at design `(d1, d2, d3, d4)` and environment `(z5, z6, z7)`;
/// levels are zero-based.
pub fn example1_costs(d: [f64; 2], cat: [usize; 2], z: [f64; 3]) -> [f64; 2] {
    let [b1, b2] = example1_shifted(d[0], d[1], cat[0]);
    let (m1, m2) = match cat[1] {
        0 => (2.0, 2.0),
        1 => (0.8, 0.95),
        _ => (0.95, 0.8),
    };
    [(m1 * b1 + z[0] * z[0]) * z[2], (m2 * b2 + z[1] * z[1]) * z[2]]
}

/// Example 2 costs at the realized `x` and zero-based level `d3`.
pub fn example2_costs(x: [f64; 2], d3: usize) -> [f64; 2] {
    let a = (-((x[0] - FRAC_1_SQRT_2).powi(2) + (x[1] - FRAC_1_SQRT_2).powi(2))).exp();
    let b = (-((x[0] + FRAC_1_SQRT_2).powi(2) + (x[1] + FRAC_1_SQRT_2).powi(2))).exp();
    if d3 == 0 {
        [1.0 - a, 1.0 - b]
    } else {
        [1.25 - a, 0.75 - b]
    }
}

/// Example 1 on augmented points `con = (x1, x2, z5, z6, z7)`, `cat = (d3, d4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Example1;

impl ObjectiveModel for Example1 {
    fn n_objectives(&self) -> usize {
        2
    }

    fn evaluate_into(&self, w: &MixedPoint, out: &mut [f64]) -> Result<()> {
        let c = &w.con;
        let v = example1_costs([c[0], c[1]], [w.cat[0], w.cat[1]], [c[2], c[3], c[4]]);
        out.copy_from_slice(&v);
        Ok(())
    }
}

/// Example 2 on augmented points `con = (x1, x2)`, `cat = (d3)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Example2;

impl ObjectiveModel for Example2 {
    fn n_objectives(&self) -> usize {
        2
    }

    fn evaluate_into(&self, w: &MixedPoint, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&example2_costs([w.con[0], w.con[1]], w.cat[0]));
        Ok(())
    }
}

pub fn example1_spec(constraints: ConstraintSet) -> ProblemSpec {
    let levels = ["1", "2", "3"];
    ProblemSpec {
        name: "example1".into(),
        design: DesignSpace {
            continuous: vec![ContinuousVar::new("d1", 0.0, 5.0), ContinuousVar::new("d2", 0.0, 3.0)],
            categorical: vec![CategoricalVar::new("d3", levels), CategoricalVar::new("d4", levels)],
        },
        environmental: vec![
            EnvironmentalVar::new("z5", RandomVarSpec::Lognormal { mean: 5.0, variance: 0.25 }),
            EnvironmentalVar::new("z6", RandomVarSpec::Lognormal { mean: 4.0, variance: 0.16 }),
            EnvironmentalVar::new("z7", RandomVarSpec::Gumbel { mean: 1.0, variance: 0.04 }),
        ],
        n_objectives: 2,
        constraints,
        alpha: vec![0.9, 0.9],
    }
}

pub fn example2_spec() -> ProblemSpec {
    let noise = DesignNoise {
        family: NoiseFamily::Normal,
        variance: 0.01,
    };
    ProblemSpec {
        name: "example2".into(),
        design: DesignSpace {
            continuous: vec![
                ContinuousVar::new("d1", -1.5, 1.5).with_noise(noise.clone()),
                ContinuousVar::new("d2", -1.5, 1.5).with_noise(noise),
            ],
            categorical: vec![CategoricalVar::new("d3", ["1", "2"])],
        },
        environmental: vec![],
        n_objectives: 2,
        constraints: ConstraintSet::None,
        alpha: vec![0.9, 0.9],
    }
}

/// Scale of the brute-force reference solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub population: usize,
    pub generations: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            population: 200,
            generations: 200,
            n_samples: 5000,
            seed: 2024,
        }
    }
}

/// A problem with its model and reference configuration.
pub struct BenchmarkProblem {
    pub spec: ProblemSpec,
    pub model: Box<dyn ObjectiveModel>,
    pub reference: ReferenceConfig,
}

pub const BENCHMARK_NAMES: [&str; 2] = ["example1", "example2"];

/// Looks up a built-in benchmark by name.
pub fn benchmark(name: &str) -> Result<BenchmarkProblem> {
    benchmark_with(name, ConstraintSet::Bnh)
}

/// Same as [`benchmark`], choosing Example 1's constraint variant.
pub fn benchmark_with(name: &str, example1_constraints: ConstraintSet) -> Result<BenchmarkProblem> {
    let (spec, model): (ProblemSpec, Box<dyn ObjectiveModel>) = match name {
        "example1" => (example1_spec(example1_constraints), Box::new(Example1)),
        "example2" => (example2_spec(), Box::new(Example2)),
        other => {
            return Err(Error::InvalidProblem(format!(
                "unknown benchmark '{other}' (expected one of {})",
                BENCHMARK_NAMES.join(", ")
            )))
        }
    };
    Ok(BenchmarkProblem {
        spec,
        model,
        reference: ReferenceConfig::default(),
    })
}

/// Reference front and set with their generation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceArtifact {
    pub version: u32,
    pub problem: String,
    pub config: ReferenceConfig,
    pub alpha: Vec<f64>,
    pub constraints: ConstraintSet,
    /// Objective rows, ascending in the first objective.
    pub front: Vec<Vec<f64>>,
    pub set: Vec<MixedPoint>,
}

impl ReferenceArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let artifact: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if artifact.version != REFERENCE_VERSION {
            return Err(Error::Unsupported(format!(
                "reference artifact version {} (expected {REFERENCE_VERSION})",
                artifact.version
            )));
        }
        Ok(artifact)
    }
}

/// NSGA-II on true-model CRN quantiles, without surrogates.
pub fn reference_solve(problem: &BenchmarkProblem, config: &ReferenceConfig) -> Result<ReferenceArtifact> {
    let spec = &problem.spec;
    let crn = CrnContext::new(spec, config.n_samples, config.seed)?;
    let counter = EvalCounter::new(0);
    let objective = |points: &[MixedPoint]| -> Result<Vec<Vec<f64>>> {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|d| true_quantiles(problem.model.as_ref(), spec, &crn, d, &counter))
            .collect()
    };
    let ga = GaConfig {
        population: config.population,
        max_generations: config.generations,
        convergence_window: 0,
        seed: config.seed,
        ..Default::default()
    };
    let result = run_nsga2(&objective, spec, &ga)?;
    let mut rows: Vec<(Vec<f64>, MixedPoint)> = result
        .front
        .into_iter()
        .map(|i| (i.objectives, i.point))
        .collect();
    rows.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
    log::info!(
        "reference for {}: {} front points, {} model evaluations",
        spec.name,
        rows.len(),
        counter.get()
    );
    let (front, set) = rows.into_iter().unzip();
    Ok(ReferenceArtifact {
        version: REFERENCE_VERSION,
        problem: spec.name.clone(),
        config: *config,
        alpha: spec.alpha.clone(),
        constraints: spec.constraints,
        front,
        set,
    })
}

/// Location of the in-repo reference artifact for a built-in problem.
pub fn reference_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join("reference")
        .join(format!("{name}.json"))
}

/// The shipped reference artifact of a built-in problem.
pub fn builtin_reference(name: &str) -> Result<ReferenceArtifact> {
    let text = match name {
        "example1" => include_str!("../data/reference/example1.json"),
        "example2" => include_str!("../data/reference/example2.json"),
        other => return Err(Error::InvalidProblem(format!("no reference artifact for '{other}'"))),
    };
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn example1_hand_values() {
        let v = example1_costs([1.0, 1.0], [0, 1], [2.0, 1.0, 1.0]);
        assert_relative_eq!(v[0], 14.4, epsilon = 1e-12);
        assert_relative_eq!(v[1], 36.15, epsilon = 1e-12);
        assert_eq!(example1_costs([0.0, 0.0], [2, 0], [0.0, 0.0, 1.0]), [0.0, 100.0]);
    }

    #[test]
    fn level_two_lowers_shifted_costs_by_two() {
        for (d1, d2) in [(0.0, 0.0), (1.3, 2.2), (5.0, 3.0)] {
            let a = example1_shifted(d1, d2, 2);
            let b = example1_shifted(d1, d2, 1);
            assert_eq!([a[0] - b[0], a[1] - b[1]], [2.0, 2.0]);
        }
    }

    #[test]
    fn example2_hand_values() {
        let v = example2_costs([FRAC_1_SQRT_2, FRAC_1_SQRT_2], 0);
        assert_eq!(v[0], 0.0);
        assert_relative_eq!(v[1], 1.0 - (-4.0f64).exp(), epsilon = 1e-15);
        let w = example2_costs([-FRAC_1_SQRT_2, -FRAC_1_SQRT_2], 1);
        assert_relative_eq!(w[0], 1.25 - (-4.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(w[1], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn example2_branch_symmetry() {
        let a = example2_costs([0.3, -0.2], 0);
        let b = example2_costs([0.3, -0.2], 1);
        assert_relative_eq!(b[0] - a[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(b[1] - a[1], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn specs_validate() {
        example1_spec(ConstraintSet::Bnh).validate().unwrap();
        example2_spec().validate().unwrap();
        assert_eq!(example1_spec(ConstraintSet::Bnh).augmented_dim(), 7);
        assert!(benchmark("example3").is_err());
    }

    #[test]
    fn small_reference_is_reproducible() {
        let problem = benchmark("example2").unwrap();
        let config = ReferenceConfig {
            population: 12,
            generations: 3,
            n_samples: 200,
            seed: 5,
        };
        let a = reference_solve(&problem, &config).unwrap();
        let b = reference_solve(&problem, &config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(!a.front.is_empty());
    }
}
