use robust_moo::adaptive::{run, AdaptiveConfig, RunOptions, RunStatus, SurrogateMode};
use robust_moo::bench::{benchmark, builtin_reference, example1_spec, BENCHMARK_NAMES};
use robust_moo::kriging::{calibrate, CalibrationOptions, KrigingModel};
use robust_moo::metrics::{delta_hv, nondominated_indices, Front2D};
use robust_moo::moga::GaConfig;
use robust_moo::problem::{ConstraintSet, ProblemSpec};
use robust_moo::sampling::CrnContext;

#[test]
fn shipped_references_are_valid_fronts() {
    for name in BENCHMARK_NAMES {
        let r = builtin_reference(name).unwrap();
        let p = benchmark(name).unwrap();
        assert_eq!(r.problem, p.spec.name);
        assert_eq!(r.alpha, p.spec.alpha);
        assert_eq!(r.front.len(), r.set.len());
        assert!(r.front.len() > 50);
        assert_eq!(nondominated_indices(&r.front).len(), r.front.len());
        assert!(r.front.windows(2).all(|w| w[0][0] <= w[1][0]));
        assert!(r.set.iter().all(|d| p.spec.design.contains(d)));
    }
}

#[test]
fn reference_front_matches_its_set() {
    let r = builtin_reference("example2").unwrap();
    let p = benchmark("example2").unwrap();
    let crn = CrnContext::new(&p.spec, r.config.n_samples, r.config.seed).unwrap();
    let counter = robust_moo::problem::EvalCounter::new(0);
    for (d, f) in r.set.iter().zip(&r.front).step_by(20) {
        let q = robust_moo::adaptive::true_quantiles(p.model.as_ref(), &p.spec, &crn, d, &counter).unwrap();
        assert_eq!(&q, f);
    }
}

#[test]
fn problem_spec_json_round_trip_and_strictness() {
    let spec = example1_spec(ConstraintSet::Bnh);
    let text = serde_json::to_string(&spec).unwrap();
    let back: ProblemSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, spec);
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["colour"] = "red".into();
    assert!(serde_json::from_value::<ProblemSpec>(value).is_err());
}

#[test]
fn kriging_model_file_round_trip() {
    let p = benchmark("example2").unwrap();
    let config = AdaptiveConfig {
        n_samples: 100,
        max_cycles: 1,
        ..AdaptiveConfig::default()
    };
    let space = robust_moo::adaptive::build_augmented_space(&p.spec, config.alpha_d, config.alpha_d, 1e-5).unwrap();
    let counter = robust_moo::problem::EvalCounter::new(0);
    let ed = robust_moo::adaptive::initial_design(&space, p.model.as_ref(), 12, 3, &counter).unwrap();
    let model = calibrate(&ed, 0, &space.inputs, &CalibrationOptions::default()).unwrap();
    let path = std::env::temp_dir().join(format!("rmoo-model-{}.json", std::process::id()));
    model.save(&path).unwrap();
    let back = KrigingModel::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    for w in &ed.points {
        assert_eq!(model.predict(w), back.predict(w));
    }
}

#[test]
fn true_model_run_on_example2_tracks_the_reference() {
    let p = benchmark("example2").unwrap();
    let config = AdaptiveConfig {
        n_samples: 1000,
        surrogate: SurrogateMode::TrueModel,
        ga: GaConfig {
            population: 60,
            ..GaConfig::default()
        },
        ..AdaptiveConfig::default()
    };
    let r = run(&p.spec, p.model.as_ref(), &config, 2, &RunOptions::default()).unwrap();
    assert_eq!(r.status, RunStatus::Converged);
    let levels: std::collections::BTreeSet<usize> = r.pareto_set.iter().map(|d| d.cat[0]).collect();
    assert_eq!(levels.len(), 2);
    let reference = builtin_reference("example2").unwrap();
    let err = delta_hv(
        &Front2D::from_rows(&r.pareto_front).unwrap(),
        &Front2D::from_rows(&reference.front).unwrap(),
    )
    .unwrap();
    assert!(err < 0.05, "delta HV {err}");
}
