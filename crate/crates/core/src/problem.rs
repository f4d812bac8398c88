//! Problem definition: mixed design space, random inputs, the objective model
//! contract and analytic design constraints.
//!
//! Points handed to an [`ObjectiveModel`] live in the *augmented* space. Their
//! continuous part is laid out as `[x_1 .. x_Mx, z_1 .. z_Mz]`, the realized
//! design variables followed by the environmental variables, and their
//! categorical part holds the design categorical levels.

use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point with continuous coordinates and categorical level indices.
///
/// Level indices are zero-based positions into the owning
/// [`CategoricalVar::levels`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPoint {
    pub con: Vec<f64>,
    pub cat: Vec<usize>,
}

impl MixedPoint {
    pub fn new(con: Vec<f64>, cat: Vec<usize>) -> Self {
        Self { con, cat }
    }

    /// Bitwise equality, used to detect exact duplicates.
    pub fn same_bits(&self, other: &MixedPoint) -> bool {
        self.cat == other.cat
            && self.con.len() == other.con.len()
            && self
                .con
                .iter()
                .zip(&other.con)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Display for MixedPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(con={:?}, cat={:?})", self.con, self.cat)
    }
}

/// Probability distribution of a scalar random input.
///
/// `Uniform` is parameterized by its bounds, every other family by its mean
/// and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum RandomVarSpec {
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, variance: f64 },
    Lognormal { mean: f64, variance: f64 },
    Gumbel { mean: f64, variance: f64 },
}

impl RandomVarSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RandomVarSpec::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(Error::InvalidProblem(format!(
                        "uniform bounds must be finite with lower < upper, got [{lower}, {upper}]"
                    )));
                }
            }
            RandomVarSpec::Normal { mean, variance }
            | RandomVarSpec::Gumbel { mean, variance } => {
                check_moments(mean, variance)?;
            }
            RandomVarSpec::Lognormal { mean, variance } => {
                check_moments(mean, variance)?;
                if mean <= 0.0 {
                    return Err(Error::InvalidProblem(format!(
                        "lognormal mean must be positive, got {mean}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the support is a bounded interval.
    pub fn is_bounded(&self) -> bool {
        matches!(self, RandomVarSpec::Uniform { .. })
    }
}

fn check_moments(mean: f64, variance: f64) -> Result<()> {
    if !mean.is_finite() || !variance.is_finite() || variance <= 0.0 {
        return Err(Error::InvalidProblem(format!(
            "expected finite mean and positive variance, got mean={mean}, variance={variance}"
        )));
    }
    Ok(())
}

/// Distribution family of the variability around a design value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Uniform,
    Normal,
    Lognormal,
    Gumbel,
}

/// Random variable `X | d` attached to a continuous design variable: its mean
/// is the design value and its variance is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignNoise {
    pub family: NoiseFamily,
    pub variance: f64,
}

impl DesignNoise {
    /// Distribution of the realized variable for design value `d`.
    pub fn conditional(&self, d: f64) -> RandomVarSpec {
        match self.family {
            NoiseFamily::Uniform => {
                let half = (3.0 * self.variance).sqrt();
                RandomVarSpec::Uniform {
                    lower: d - half,
                    upper: d + half,
                }
            }
            NoiseFamily::Normal => RandomVarSpec::Normal {
                mean: d,
                variance: self.variance,
            },
            NoiseFamily::Lognormal => RandomVarSpec::Lognormal {
                mean: d,
                variance: self.variance,
            },
            NoiseFamily::Gumbel => RandomVarSpec::Gumbel {
                mean: d,
                variance: self.variance,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    /// Variability of the realized value around the design value, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<DesignNoise>,
}

impl ContinuousVar {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: DesignNoise) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }
}

/// An unordered variable taking one of `levels.len()` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalVar {
    pub name: String,
    pub levels: Vec<String>,
}

impl CategoricalVar {
    pub fn new<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.levels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentalVar {
    pub name: String,
    pub distribution: RandomVarSpec,
}

impl EnvironmentalVar {
    pub fn new(name: impl Into<String>, distribution: RandomVarSpec) -> Self {
        Self {
            name: name.into(),
            distribution,
        }
    }
}

/// Built-in analytic constraint sets, evaluated on design points only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSet {
    #[default]
    None,
    /// `(d1-5)^2 + d2^2 - 25 <= 0` and `-(d1-8)^2 - (d2+3)^2 + 7.7 <= 0`.
    Bnh,
    /// Same as [`ConstraintSet::Bnh`] with `d1` in place of `d2` in the first
    /// expression.
    BnhLiteral,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        match self {
            ConstraintSet::None => 0,
            ConstraintSet::Bnh | ConstraintSet::BnhLiteral => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values `f_j(d)`; the design is feasible when all are `<= 0`.
    pub fn values(&self, d: &MixedPoint) -> Vec<f64> {
        match self {
            ConstraintSet::None => Vec::new(),
            ConstraintSet::Bnh | ConstraintSet::BnhLiteral => {
                let (d1, d2) = (d.con[0], d.con[1]);
                let second = if *self == ConstraintSet::Bnh { d2 } else { d1 };
                vec![
                    (d1 - 5.0).powi(2) + second * second - 25.0,
                    -(d1 - 8.0).powi(2) - (d2 + 3.0).powi(2) + 7.7,
                ]
            }
        }
    }

    fn min_continuous(&self) -> usize {
        match self {
            ConstraintSet::None => 0,
            _ => 2,
        }
    }
}

/// Outcome of [`check_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `max(f_j(d), 0)` per constraint.
    pub violations: Vec<f64>,
}

impl Feasibility {
    pub fn total_violation(&self) -> f64 {
        self.violations.iter().sum()
    }
}

/// The mixed design space `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpace {
    pub continuous: Vec<ContinuousVar>,
    pub categorical: Vec<CategoricalVar>,
}

impl DesignSpace {
    pub fn n_variables(&self) -> usize {
        self.continuous.len() + self.categorical.len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.categorical.iter().map(CategoricalVar::count).collect()
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.continuous.iter().map(ContinuousVar::range).collect()
    }

    pub fn contains(&self, d: &MixedPoint) -> bool {
        d.con.len() == self.continuous.len()
            && d.cat.len() == self.categorical.len()
            && d
                .con
                .iter()
                .zip(&self.continuous)
                .all(|(x, v)| *x >= v.lower && *x <= v.upper)
            && d
                .cat
                .iter()
                .zip(&self.categorical)
                .all(|(l, v)| *l < v.count())
    }
}

/// Full problem statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    pub design: DesignSpace,
    pub environmental: Vec<EnvironmentalVar>,
    pub n_objectives: usize,
    #[serde(default)]
    pub constraints: ConstraintSet,
    /// Quantile level per objective.
    pub alpha: Vec<f64>,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidProblem(msg));
        if self.n_objectives < 1 {
            return invalid("at least one objective is required".into());
        }
        if self.alpha.len() != self.n_objectives {
            return invalid(format!(
                "expected {} quantile levels, got {}",
                self.n_objectives,
                self.alpha.len()
            ));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return invalid(format!("quantile level {a} outside (0, 1)"));
        }
        if self.design.n_variables() == 0 {
            return invalid("the design space has no variables".into());
        }
        for v in &self.design.continuous {
            if !(v.lower.is_finite() && v.upper.is_finite() && v.lower < v.upper) {
                return invalid(format!(
                    "variable {} needs finite bounds with lower < upper",
                    v.name
                ));
            }
            if let Some(noise) = &v.noise {
                noise.conditional(v.lower).validate()?;
                noise.conditional(v.upper).validate()?;
            }
        }
        for v in &self.design.categorical {
            if v.count() < 2 {
                return invalid(format!("categorical variable {} needs at least 2 levels", v.name));
            }
            let mut labels: Vec<&String> = v.levels.iter().collect();
            labels.sort();
            labels.dedup();
            if labels.len() != v.count() {
                return invalid(format!("categorical variable {} has duplicate labels", v.name));
            }
        }
        for z in &self.environmental {
            z.distribution.validate()?;
        }
        if self.design.continuous.len() < self.constraints.min_continuous() {
            return invalid(format!(
                "constraint set {:?} needs at least {} continuous design variables",
                self.constraints,
                self.constraints.min_continuous()
            ));
        }
        Ok(())
    }

    /// Number of continuous design variables carrying noise.
    pub fn n_noisy(&self) -> usize {
        self.design
            .continuous
            .iter()
            .filter(|v| v.noise.is_some())
            .count()
    }

    /// Dimension of the augmented space (design, categorical and environmental).
    pub fn augmented_dim(&self) -> usize {
        self.design.n_variables() + self.environmental.len()
    }
}

/// Feasibility of design `d` under the problem's constraints.
pub fn check_feasible(spec: &ProblemSpec, d: &MixedPoint) -> Feasibility {
    let violations: Vec<f64> = spec
        .constraints
        .values(d)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Feasibility {
        feasible: violations.iter().all(|v| *v == 0.0),
        violations,
    }
}

/// A deterministic map from an augmented-space point to `m` costs.
pub trait ObjectiveModel: Send + Sync {
    fn n_objectives(&self) -> usize;

    /// Writes the `m` costs at `w` into `out`.
    fn evaluate_into(&self, w: &MixedPoint, out: &mut [f64]) -> Result<()>;
}

/// Counts model evaluations and rejects non-finite outputs.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn new(start: u64) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// Evaluates the model at `w`, counting the call.
pub fn evaluate(
    model: &dyn ObjectiveModel,
    w: &MixedPoint,
    counter: &EvalCounter,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.n_objectives()];
    evaluate_into(model, w, counter, &mut out)?;
    Ok(out)
}

pub(crate) fn evaluate_into(
    model: &dyn ObjectiveModel,
    w: &MixedPoint,
    counter: &EvalCounter,
    out: &mut [f64],
) -> Result<()> {
    counter.bump();
    model.evaluate_into(w, out)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteOutput {
            point: w.to_string(),
            values: out.to_vec(),
        });
    }
    Ok(())
}

/// Model backed by an external program.
///
/// For every point the program is spawned once; it receives
/// `{"con":[...],"cat":[...]}` followed by a newline on stdin and must print
/// the `m` costs as whitespace-separated numbers on stdout.
#[derive(Debug, Clone)]
pub struct ExternalCommandModel {
    pub program: String,
    pub args: Vec<String>,
    pub n_objectives: usize,
}

impl ObjectiveModel for ExternalCommandModel {
    fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    fn evaluate_into(&self, w: &MixedPoint, out: &mut [f64]) -> Result<()> {
        let failure = |reason: String| Error::ModelFailure {
            point: w.to_string(),
            reason,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| failure(format!("cannot spawn {}: {e}", self.program)))?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            let line = serde_json::to_string(w)?;
            writeln!(stdin, "{line}").map_err(|e| failure(e.to_string()))?;
        }
        let output = child
            .wait_with_output()
            .map_err(|e| failure(e.to_string()))?;
        if !output.status.success() {
            return Err(failure(format!("exited with {}", output.status)));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        let values: Vec<f64> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| failure(format!("unparsable output {text:?}: {e}")))?;
        if values.len() != self.n_objectives {
            return Err(failure(format!(
                "expected {} values, got {}",
                self.n_objectives,
                values.len()
            )));
        }
        out.copy_from_slice(&values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bnh_point(d1: f64, d2: f64) -> MixedPoint {
        MixedPoint::new(vec![d1, d2], vec![])
    }

    fn spec_with(constraints: ConstraintSet) -> ProblemSpec {
        ProblemSpec {
            name: "t".into(),
            design: DesignSpace {
                continuous: vec![ContinuousVar::new("d1", 0.0, 5.0), ContinuousVar::new("d2", 0.0, 3.0)],
                categorical: vec![],
            },
            environmental: vec![],
            n_objectives: 2,
            constraints,
            alpha: vec![0.9, 0.9],
        }
    }

    #[test]
    fn bnh_constraints_at_origin_are_active_but_feasible() {
        let spec = spec_with(ConstraintSet::Bnh);
        let d = bnh_point(0.0, 0.0);
        let values = spec.constraints.values(&d);
        assert_eq!(values[0], 0.0);
        assert!((values[1] + 65.3).abs() < 1e-12);
        let f = check_feasible(&spec, &d);
        assert!(f.feasible);
        assert_eq!(f.violations, vec![0.0, 0.0]);
    }

    #[test]
    fn bnh_interior_point() {
        let spec = spec_with(ConstraintSet::Bnh);
        let d = bnh_point(5.0, 3.0);
        assert_eq!(spec.constraints.values(&d)[0], -16.0);
        assert!(check_feasible(&spec, &d).feasible);
    }

    #[test]
    fn literal_variant_ignores_d2_in_first_constraint() {
        let d = bnh_point(1.0, 3.0);
        let bnh = ConstraintSet::Bnh.values(&d)[0];
        let literal = ConstraintSet::BnhLiteral.values(&d)[0];
        assert_eq!(bnh, 16.0 + 9.0 - 25.0);
        assert_eq!(literal, 16.0 + 1.0 - 25.0);
    }

    #[test]
    fn infeasible_point_reports_positive_violation() {
        let spec = spec_with(ConstraintSet::Bnh);
        // Close to (8, -3) the second constraint is violated.
        let d = bnh_point(7.0, -2.0);
        let f = check_feasible(&spec, &d);
        assert!(!f.feasible);
        assert_eq!(f.violations[0], 0.0);
        assert!(f.violations[1] > 0.0);
    }

    #[test]
    fn unconstrained_problem_is_always_feasible() {
        let spec = spec_with(ConstraintSet::None);
        let f = check_feasible(&spec, &bnh_point(-100.0, 1e9));
        assert!(f.feasible);
        assert!(f.violations.is_empty());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = spec_with(ConstraintSet::Bnh);
        assert!(spec.validate().is_ok());
        spec.alpha = vec![0.9, 1.0];
        assert!(spec.validate().is_err());

        let mut spec = spec_with(ConstraintSet::None);
        spec.design.categorical.push(CategoricalVar::new("c", ["a"]));
        assert!(spec.validate().is_err());
        spec.design.categorical[0] = CategoricalVar::new("c", ["a", "a"]);
        assert!(spec.validate().is_err());

        let mut spec = spec_with(ConstraintSet::None);
        spec.environmental.push(EnvironmentalVar::new(
            "z",
            RandomVarSpec::Lognormal { mean: -1.0, variance: 1.0 },
        ));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn random_var_validation() {
        assert!(RandomVarSpec::Uniform { lower: 1.0, upper: 1.0 }.validate().is_err());
        assert!(RandomVarSpec::Normal { mean: 0.0, variance: 0.0 }.validate().is_err());
        assert!(RandomVarSpec::Gumbel { mean: 1.0, variance: 0.04 }.validate().is_ok());
    }

    struct Nan;
    impl ObjectiveModel for Nan {
        fn n_objectives(&self) -> usize {
            1
        }
        fn evaluate_into(&self, _w: &MixedPoint, out: &mut [f64]) -> Result<()> {
            out[0] = f64::NAN;
            Ok(())
        }
    }

    #[test]
    fn non_finite_output_names_the_point() {
        let counter = EvalCounter::default();
        let w = MixedPoint::new(vec![1.5], vec![2]);
        let err = evaluate(&Nan, &w, &counter).unwrap_err();
        assert!(err.to_string().contains("1.5"));
        assert_eq!(counter.get(), 1);
    }

    #[test]
    fn external_command_model_round_trip() {
        let model = ExternalCommandModel {
            program: "sh".into(),
            args: vec!["-c".into(), "cat > /dev/null; echo 1.5 -2".into()],
            n_objectives: 2,
        };
        let counter = EvalCounter::default();
        let out = evaluate(&model, &MixedPoint::new(vec![0.0], vec![]), &counter).unwrap();
        assert_eq!(out, vec![1.5, -2.0]);
    }

    #[test]
    fn random_var_spec_json_shape() {
        let spec = RandomVarSpec::Lognormal { mean: 5.0, variance: 0.25 };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"family":"lognormal","mean":5.0,"variance":0.25}"#);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_spec() -> impl Strategy<Value = RandomVarSpec> {
            prop_oneof![
                (-1e6..1e6f64, 1e-6..1e3f64)
                    .prop_map(|(l, w)| RandomVarSpec::Uniform { lower: l, upper: l + w }),
                (-1e6..1e6f64, 1e-9..1e6f64)
                    .prop_map(|(mean, variance)| RandomVarSpec::Normal { mean, variance }),
                (1e-6..1e6f64, 1e-9..1e6f64)
                    .prop_map(|(mean, variance)| RandomVarSpec::Lognormal { mean, variance }),
                (-1e6..1e6f64, 1e-9..1e6f64)
                    .prop_map(|(mean, variance)| RandomVarSpec::Gumbel { mean, variance }),
            ]
        }

        proptest! {
            #[test]
            fn random_var_spec_serialization_is_lossless(spec in any_spec()) {
                let text = serde_json::to_string(&spec).unwrap();
                let back: RandomVarSpec = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(back, spec);
            }

            #[test]
            fn feasible_iff_violations_are_zero(d1 in -2.0..8.0f64, d2 in -4.0..6.0f64) {
                let spec = spec_with(ConstraintSet::Bnh);
                let f = check_feasible(&spec, &bnh_point(d1, d2));
                let values = spec.constraints.values(&bnh_point(d1, d2));
                prop_assert_eq!(f.feasible, values.iter().all(|v| *v <= 0.0));
                prop_assert_eq!(f.feasible, f.violations.iter().all(|v| *v == 0.0));
            }
        }
    }
}
