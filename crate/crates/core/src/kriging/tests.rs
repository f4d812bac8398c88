use super::*;
use crate::problem::{ContinuousVar, DesignSpace, EnvironmentalVar, ProblemSpec, RandomVarSpec};
use crate::problem::{CategoricalVar, ConstraintSet};
use crate::sampling::CrnContext;
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mixed_space() -> InputSpace {
    InputSpace::new(vec![0.0, -1.0], vec![5.0, 2.0], vec![3]).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, space: &InputSpace) -> MixedPoint {
    let con = space
        .lower
        .iter()
        .zip(&space.upper)
        .map(|(l, u)| l + (u - l) * rng.random::<f64>())
        .collect();
    let cat = space.levels.iter().map(|&b| rng.random_range(0..b)).collect();
    MixedPoint::new(con, cat)
}

fn toy(w: &MixedPoint) -> f64 {
    (w.con[0] * 0.8).sin() + w.con[1] * w.con[1] + 0.5 * w.cat[0] as f64
}

fn toy_model(n: usize, seed: u64) -> KrigingModel {
    let space = mixed_space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<MixedPoint> = (0..n).map(|_| random_point(&mut rng, &space)).collect();
    let y: Vec<f64> = points.iter().map(toy).collect();
    let options = CalibrationOptions {
        restarts: 4,
        seed,
        ..Default::default()
    };
    calibrate_values(&space, &points, &y, &options).unwrap()
}

#[test]
fn gower_terms_follow_definition() {
    let a = MixedPoint::new(vec![1.0], vec![1]);
    let b = MixedPoint::new(vec![3.5], vec![2]);
    assert_eq!(gower_similarity(&a, &b, &[5.0]).unwrap(), vec![0.5, 1.0]);
    assert_eq!(gower_similarity(&a, &a, &[5.0]).unwrap(), vec![0.0, 0.0]);
    assert!(gower_similarity(&a, &b, &[0.0]).is_err());
}

#[test]
fn kernel_reference_values() {
    let a = MixedPoint::new(vec![], vec![0]);
    let b = MixedPoint::new(vec![], vec![2]);
    assert_relative_eq!(kernel_mixed(&a, &b, &[1.0], &[]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
    assert_eq!(kernel_mixed(&a, &a, &[1.0], &[]).unwrap(), 1.0);
    let c = MixedPoint::new(vec![0.2], vec![]);
    let d = MixedPoint::new(vec![0.5], vec![]);
    assert_relative_eq!(kernel_mixed(&c, &d, &[0.3], &[1.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-12);
}

#[test]
fn model_interpolates_training_data() {
    let model = toy_model(25, 1);
    let scale = model.training_values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (w, y) in model.training_points().iter().zip(model.training_values()) {
        let p = model.predict(w);
        assert!((p.mean - y).abs() <= 1e-8 * scale, "{} vs {y}", p.mean);
        assert!(p.variance <= 1e-8 * model.sigma2());
    }
}

#[test]
fn far_point_reverts_to_prior_variance() {
    let model = toy_model(20, 2);
    let far = MixedPoint::new(vec![1e3, 1e3], vec![0]);
    let p = model.predict(&far);
    assert!(p.variance >= model.sigma2() * (1.0 - 1e-12));
}

#[test]
fn batch_prediction_is_bit_identical() {
    let model = toy_model(20, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<MixedPoint> = (0..100).map(|_| random_point(&mut rng, model.space())).collect();
    let batch = model.predict_batch(&pts);
    for (w, b) in pts.iter().zip(batch) {
        let p = model.predict(w);
        assert_eq!(p.mean.to_bits(), b.mean.to_bits());
        assert_eq!(p.variance.to_bits(), b.variance.to_bits());
    }
}

#[test]
fn calibration_is_deterministic() {
    let a = toy_model(20, 4);
    let b = toy_model(20, 4);
    assert_eq!(a.theta(), b.theta());
}

#[test]
fn linear_trend_absorbs_linear_response() {
    let space = InputSpace::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points: Vec<MixedPoint> = (0..15).map(|_| random_point(&mut rng, &space)).collect();
    let y: Vec<f64> = points.iter().map(|w| 1.0 + 2.0 * w.con[0] - 3.0 * w.con[1]).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var_y = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    let options = CalibrationOptions {
        trend: Trend::Linear,
        restarts: 3,
        ..Default::default()
    };
    let model = calibrate_values(&space, &points, &y, &options).unwrap();
    assert!(model.sigma2() <= 1e-8 * var_y, "{}", model.sigma2());
    let w = MixedPoint::new(vec![0.3, 1.7], vec![]);
    assert_relative_eq!(model.predict(&w).mean, 1.0 + 0.6 - 5.1, epsilon = 1e-6);
}

#[test]
fn nll_shifts_by_log_scale() {
    let model = toy_model(20, 6);
    let ed = ExperimentalDesign::new(
        model.training_points().to_vec(),
        model.training_values().iter().map(|v| vec![*v, 10.0 * v]).collect(),
    )
    .unwrap();
    let theta = model.theta();
    let a = negative_log_likelihood(&ed, 0, model.space(), theta, Trend::Constant).unwrap();
    let b = negative_log_likelihood(&ed, 1, model.space(), theta, Trend::Constant).unwrap();
    assert_relative_eq!(b - a, 20.0 * 10f64.ln(), epsilon = 1e-8);
}

#[test]
fn document_round_trip_predicts_identically() {
    let model = toy_model(15, 7);
    let text = serde_json::to_string(&model.to_document()).unwrap();
    let doc: ModelDocument = serde_json::from_str(&text).unwrap();
    let back = KrigingModel::from_document(&doc).unwrap();
    let w = MixedPoint::new(vec![2.2, 0.1], vec![1]);
    assert_eq!(model.predict(&w), back.predict(&w));
    let mut wrong = doc.clone();
    wrong.version = 99;
    assert!(KrigingModel::from_document(&wrong).is_err());
}

#[test]
fn duplicate_rows_are_rejected() {
    let space = mixed_space();
    let mut ed = ExperimentalDesign::default();
    let w = MixedPoint::new(vec![1.0, 0.5], vec![2]);
    assert!(ed.push(&space, w.clone(), vec![1.0]));
    let near = MixedPoint::new(vec![1.0 + 1e-12, 0.5], vec![2]);
    assert!(!ed.push(&space, near, vec![1.0]));
    assert!(ed.push(&space, MixedPoint::new(vec![1.0, 0.5], vec![1]), vec![1.0]));
}

fn small_spec() -> ProblemSpec {
    ProblemSpec {
        name: "set".into(),
        design: DesignSpace {
            continuous: vec![ContinuousVar::new("x", 0.0, 1.0)],
            categorical: vec![CategoricalVar::new("c", ["a", "b"])],
        },
        environmental: vec![EnvironmentalVar::new(
            "z",
            RandomVarSpec::Normal {
                mean: 0.0,
                variance: 1.0,
            },
        )],
        n_objectives: 1,
        constraints: ConstraintSet::None,
        alpha: vec![0.9],
    }
}

#[test]
fn set_predictor_matches_pointwise_prediction() {
    let spec = small_spec();
    let crn = CrnContext::new(&spec, 64, 3).unwrap();
    let space = InputSpace::new(vec![0.0, -4.0], vec![1.0, 4.0], vec![2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut points: Vec<MixedPoint> = (0..20).map(|_| random_point(&mut rng, &space)).collect();
    // One training point coincides with a Monte Carlo sample.
    points.push(MixedPoint::new(vec![0.25, crn.env_realizations[5][0]], vec![1]));
    let y: Vec<f64> = points.iter().map(|w| w.con[0] * w.con[1] + w.cat[0] as f64).collect();
    for trend in [Trend::Constant, Trend::Linear] {
        let options = CalibrationOptions {
            trend,
            restarts: 2,
            ..Default::default()
        };
        let model = calibrate_values(&space, &points, &y, &options).unwrap();
        let set = SetPredictor::new(&model, &spec, &crn).unwrap();
        let designs = [MixedPoint::new(vec![0.25], vec![1]), MixedPoint::new(vec![0.7], vec![0])];
        let many = set.means_many(&designs);
        for (c, d) in designs.iter().enumerate() {
            let (mu, var) = set.moments(d);
            let plain = set.means(d);
            for j in 0..crn.n {
                let p = model.predict(&set.sample_point(d, j));
                let tol = 1e-9 * (1.0 + p.mean.abs());
                assert!((mu[j] - p.mean).abs() <= tol);
                assert!((plain[j] - p.mean).abs() <= tol);
                assert!((many[c][j] - p.mean).abs() <= tol);
                assert!((var[j] - p.variance).abs() <= 1e-9 * model.sigma2());
            }
        }
        assert!(set.moments(&designs[0]).1[5] <= 1e-8 * model.sigma2());
    }
}
