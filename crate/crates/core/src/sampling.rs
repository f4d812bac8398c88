//! Latin hypercube designs, isoprobabilistic transforms, common random numbers
//! and empirical quantiles.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::problem::{MixedPoint, ProblemSpec, RandomVarSpec};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Random stream domains. Each consumer draws from its own domain so adding a
/// consumer never shifts another one's numbers.
pub(crate) mod domain {
    pub const CRN_DESIGN: u64 = 1;
    pub const CRN_ENV: u64 = 2;
    pub const INITIAL_ED: u64 = 3;
    pub const NSGA: u64 = 4;
    pub const CALIBRATION: u64 = 5;
    pub const OUTER_ED: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const LHS_RESTART: u64 = 8;
}

/// Counter-based generator keyed by `(seed, domain, index)`.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer over `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in the open interval (0, 1).
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LhsOptimization {
    #[default]
    None,
    Maximin,
}

/// A Latin hypercube design in the unit hypercube, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Lhs {
    pub n: usize,
    pub dims: usize,
    pub points: Vec<Vec<f64>>,
    pub optimization: LhsOptimization,
}

/// Random restarts of the maximin search.
pub const MAXIMIN_RESTARTS: u64 = 20;

impl Lhs {
    /// Smallest pairwise Euclidean distance between design points.
    pub fn min_distance(&self) -> f64 {
        min_pairwise_distance(&self.points)
    }
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

fn lhs_draw(n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..dims {
        for i in (1..n).rev() {
            let k = rng.random_range(0..=i);
            perm.swap(i, k);
        }
        for (i, p) in points.iter_mut().enumerate() {
            p[j] = (perm[i] as f64 + open_unit(rng)) / n as f64;
        }
    }
    points
}

/// Latin hypercube sample of `n` points in `[0, 1]^dims`.
///
/// The maximin variant keeps the best of [`MAXIMIN_RESTARTS`] draws; the first
/// draw is the plain design for the same seed, so it never does worse.
pub fn lhs_sample(n: usize, dims: usize, seed: u64, optimization: LhsOptimization) -> Result<Lhs> {
    if n < 2 || dims < 1 {
        return Err(Error::Domain(format!(
            "latin hypercube needs n >= 2 and dims >= 1, got n={n}, dims={dims}"
        )));
    }
    let mut points = lhs_draw(n, dims, &mut stream_rng(seed, domain::LHS_RESTART, 0));
    if optimization == LhsOptimization::Maximin {
        let mut best = min_pairwise_distance(&points);
        for r in 1..MAXIMIN_RESTARTS {
            let candidate = lhs_draw(n, dims, &mut stream_rng(seed, domain::LHS_RESTART, r));
            let d = min_pairwise_distance(&candidate);
            if d > best {
                best = d;
                points = candidate;
            }
        }
    }
    Ok(Lhs {
        n,
        dims,
        points,
        optimization,
    })
}

fn standard_normal_quantile(u: f64) -> f64 {
    Normal::standard().inverse_cdf(u)
}

/// `(mu_ln, sigma_ln)` of a lognormal with the given mean and variance.
pub fn lognormal_parameters(mean: f64, variance: f64) -> (f64, f64) {
    let s2 = (1.0 + variance / (mean * mean)).ln();
    (mean.ln() - 0.5 * s2, s2.sqrt())
}

/// `(location, scale)` of a max-Gumbel with the given mean and variance.
pub fn gumbel_parameters(mean: f64, variance: f64) -> (f64, f64) {
    let scale = (6.0 * variance).sqrt() / std::f64::consts::PI;
    (mean - EULER_GAMMA * scale, scale)
}

/// Quantile function of `spec` at probability `u`.
pub fn inverse_cdf(spec: &RandomVarSpec, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("probability {u} outside (0, 1)")));
    }
    Ok(inverse_cdf_unchecked(spec, u))
}

pub(crate) fn inverse_cdf_unchecked(spec: &RandomVarSpec, u: f64) -> f64 {
    match *spec {
        RandomVarSpec::Uniform { lower, upper } => lower + u * (upper - lower),
        RandomVarSpec::Normal { mean, variance } => mean + variance.sqrt() * standard_normal_quantile(u),
        RandomVarSpec::Lognormal { mean, variance } => {
            let (mu, sigma) = lognormal_parameters(mean, variance);
            (mu + sigma * standard_normal_quantile(u)).exp()
        }
        RandomVarSpec::Gumbel { mean, variance } => {
            let (loc, scale) = gumbel_parameters(mean, variance);
            loc - scale * (-u.ln()).ln()
        }
    }
}

/// Frozen random numbers shared by every design during one run, which makes
/// the map from a design to its quantiles deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnContext {
    pub n: usize,
    pub seed: u64,
    /// One column of `n` uniforms per continuous design variable.
    pub base_uniforms: Vec<Vec<f64>>,
    /// Environmental realizations, `n` rows of `M_z` values.
    pub env_realizations: Vec<Vec<f64>>,
}

impl CrnContext {
    pub fn new(spec: &ProblemSpec, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("the Monte Carlo sample size must be positive".into()));
        }
        let column = |domain: u64, index: usize| -> Vec<f64> {
            let mut rng = stream_rng(seed, domain, index as u64);
            (0..n).map(|_| open_unit(&mut rng)).collect()
        };
        let base_uniforms = (0..spec.design.continuous.len())
            .map(|i| column(domain::CRN_DESIGN, i))
            .collect();
        let env_columns: Vec<Vec<f64>> = spec
            .environmental
            .iter()
            .enumerate()
            .map(|(i, z)| {
                column(domain::CRN_ENV, i)
                    .into_iter()
                    .map(|u| inverse_cdf_unchecked(&z.distribution, u))
                    .collect()
            })
            .collect();
        let env_realizations = (0..n)
            .map(|j| env_columns.iter().map(|c| c[j]).collect())
            .collect();
        Ok(Self {
            n,
            seed,
            base_uniforms,
            env_realizations,
        })
    }

    /// Realized continuous design values `x^(j)` for design `d`, one column per
    /// continuous design variable.
    pub fn design_columns(&self, spec: &ProblemSpec, d: &MixedPoint) -> Vec<Vec<f64>> {
        spec.design
            .continuous
            .iter()
            .enumerate()
            .map(|(i, var)| match &var.noise {
                None => vec![d.con[i]; self.n],
                Some(noise) => {
                    let dist = noise.conditional(d.con[i]);
                    self.base_uniforms[i]
                        .iter()
                        .map(|u| inverse_cdf_unchecked(&dist, *u))
                        .collect()
                }
            })
            .collect()
    }
}

/// The Monte Carlo set `C(d)` of `N` augmented points.
pub fn conditional_sample(d: &MixedPoint, spec: &ProblemSpec, crn: &CrnContext) -> Vec<MixedPoint> {
    let columns = crn.design_columns(spec, d);
    (0..crn.n)
        .map(|j| {
            let mut con: Vec<f64> = columns.iter().map(|c| c[j]).collect();
            con.extend_from_slice(&crn.env_realizations[j]);
            MixedPoint::new(con, d.cat.clone())
        })
        .collect()
}

/// One-based rank of the order statistic used as the `alpha`-quantile of `n`
/// values: `ceil(alpha * n)`, with products that are integers up to rounding
/// treated as integers.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let x = alpha * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Empirical `alpha`-quantile: the `ceil(alpha * N)`-th order statistic.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("quantile of an empty sample".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("quantile level {alpha} outside (0, 1)")));
    }
    let mut buf = values.to_vec();
    Ok(quantile_in_place(&mut buf, alpha))
}

/// Same as [`empirical_quantile`] but reorders `values`. Panics when empty.
pub(crate) fn quantile_in_place(values: &mut [f64], alpha: f64) -> f64 {
    let k = quantile_rank(values.len(), alpha);
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ContinuousVar, DesignNoise, DesignSpace, EnvironmentalVar, NoiseFamily};
    use approx::assert_relative_eq;

    #[test]
    fn two_point_lhs_is_stratified() {
        let lhs = lhs_sample(2, 1, 3, LhsOptimization::None).unwrap();
        let mut col: Vec<f64> = lhs.points.iter().map(|p| p[0]).collect();
        col.sort_by(f64::total_cmp);
        assert!(col[0] > 0.0 && col[0] < 0.5);
        assert!(col[1] > 0.5 && col[1] < 1.0);
    }

    #[test]
    fn lhs_is_deterministic() {
        let a = lhs_sample(100, 7, 11, LhsOptimization::None).unwrap();
        let b = lhs_sample(100, 7, 11, LhsOptimization::None).unwrap();
        assert_eq!(a, b);
        let c = lhs_sample(100, 7, 12, LhsOptimization::None).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn maximin_never_worse_than_plain_draw() {
        for seed in 0..20 {
            let plain = lhs_sample(10, 2, seed, LhsOptimization::None).unwrap();
            let opt = lhs_sample(10, 2, seed, LhsOptimization::Maximin).unwrap();
            assert!(opt.min_distance() >= plain.min_distance());
        }
    }

    #[test]
    fn lhs_rejects_degenerate_sizes() {
        assert!(lhs_sample(1, 2, 0, LhsOptimization::None).is_err());
        assert!(lhs_sample(5, 0, 0, LhsOptimization::None).is_err());
    }

    #[test]
    fn lognormal_median() {
        let spec = RandomVarSpec::Lognormal { mean: 5.0, variance: 0.25 };
        let median = inverse_cdf(&spec, 0.5).unwrap();
        assert_relative_eq!(median, 5.0 / 1.01f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(median, 4.975_185_951, epsilon = 1e-9);
    }

    #[test]
    fn gumbel_median() {
        let spec = RandomVarSpec::Gumbel { mean: 1.0, variance: 0.04 };
        let (loc, scale) = gumbel_parameters(1.0, 0.04);
        assert_relative_eq!(scale, 0.155_939_360_2, epsilon = 1e-10);
        assert_relative_eq!(loc, 0.909_989_358_5, epsilon = 1e-10);
        let median = inverse_cdf(&spec, 0.5).unwrap();
        assert_relative_eq!(median, loc - scale * 2f64.ln().ln(), max_relative = 1e-14);
        assert_relative_eq!(median, 0.967_143_148_8, epsilon = 1e-10);
    }

    #[test]
    fn uniform_is_linear() {
        let spec = RandomVarSpec::Uniform { lower: 20.0, upper: 23.0 };
        assert_eq!(inverse_cdf(&spec, 0.5).unwrap(), 21.5);
        assert_relative_eq!(inverse_cdf(&spec, 1e-12).unwrap(), 20.0, epsilon = 1e-10);
        assert_relative_eq!(inverse_cdf(&spec, 1.0 - 1e-12).unwrap(), 23.0, epsilon = 1e-10);
    }

    #[test]
    fn inverse_cdf_rejects_closed_endpoints() {
        let spec = RandomVarSpec::Normal { mean: 0.0, variance: 1.0 };
        for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(inverse_cdf(&spec, u), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn normal_quantiles_match_reference_values() {
        let spec = RandomVarSpec::Normal { mean: 0.0, variance: 1.0 };
        assert_relative_eq!(inverse_cdf(&spec, 0.975).unwrap(), 1.959_963_984_540_054, epsilon = 1e-12);
        assert_relative_eq!(inverse_cdf(&spec, 0.9).unwrap(), 1.281_551_565_544_600_4, epsilon = 1e-12);
    }

    #[test]
    fn quantile_order_statistic_convention() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&values, 0.9).unwrap(), 9.0);
        assert_eq!(empirical_quantile(&values, 0.91).unwrap(), 10.0);
        assert_eq!(empirical_quantile(&values, 0.05).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&[3.5; 7], 0.37).unwrap(), 3.5);
        assert_eq!(quantile_rank(5000, 0.9), 4500);
        assert!(empirical_quantile(&[], 0.5).is_err());
    }

    fn noisy_spec() -> ProblemSpec {
        ProblemSpec {
            name: "noisy".into(),
            design: DesignSpace {
                continuous: vec![
                    ContinuousVar::new("d1", -1.5, 1.5).with_noise(DesignNoise {
                        family: NoiseFamily::Normal,
                        variance: 0.01,
                    }),
                    ContinuousVar::new("d2", 0.0, 1.0),
                ],
                categorical: vec![crate::problem::CategoricalVar::new("c", ["a", "b"])],
            },
            environmental: vec![EnvironmentalVar::new(
                "z",
                RandomVarSpec::Uniform { lower: 20.0, upper: 23.0 },
            )],
            n_objectives: 1,
            constraints: Default::default(),
            alpha: vec![0.9],
        }
    }

    #[test]
    fn conditional_sample_structure() {
        let spec = noisy_spec();
        let crn = CrnContext::new(&spec, 64, 5).unwrap();
        let d = MixedPoint::new(vec![0.0, 0.25], vec![1]);
        let set = conditional_sample(&d, &spec, &crn);
        assert_eq!(set.len(), 64);
        for (j, w) in set.iter().enumerate() {
            assert_eq!(w.cat, vec![1]);
            assert_eq!(w.con[1], 0.25);
            assert_eq!(w.con[2], crn.env_realizations[j][0]);
            let expected = 0.1 * standard_normal_quantile(crn.base_uniforms[0][j]);
            assert_eq!(w.con[0], expected);
        }
        assert_eq!(set, conditional_sample(&d, &spec, &crn));
    }

    #[test]
    fn median_of_symmetric_noise_is_the_design() {
        let spec = noisy_spec();
        let mut crn = CrnContext::new(&spec, 1, 5).unwrap();
        crn.base_uniforms[0][0] = 0.5;
        let d = MixedPoint::new(vec![0.0, 0.5], vec![0]);
        assert_eq!(conditional_sample(&d, &spec, &crn)[0].con[0], 0.0);
    }

    #[test]
    fn adding_a_variable_keeps_existing_columns() {
        let spec = noisy_spec();
        let mut wider = spec.clone();
        wider.environmental.push(EnvironmentalVar::new(
            "z2",
            RandomVarSpec::Normal { mean: 0.0, variance: 1.0 },
        ));
        let a = CrnContext::new(&spec, 50, 9).unwrap();
        let b = CrnContext::new(&wider, 50, 9).unwrap();
        assert_eq!(a.base_uniforms, b.base_uniforms);
        for j in 0..50 {
            assert_eq!(a.env_realizations[j][0], b.env_realizations[j][0]);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_dist() -> impl Strategy<Value = RandomVarSpec> {
            prop_oneof![
                (-100.0..100.0f64, 0.1..50.0f64)
                    .prop_map(|(l, w)| RandomVarSpec::Uniform { lower: l, upper: l + w }),
                (-100.0..100.0f64, 1e-3..100.0f64)
                    .prop_map(|(mean, variance)| RandomVarSpec::Normal { mean, variance }),
                (0.1..100.0f64, 1e-3..100.0f64)
                    .prop_map(|(mean, variance)| RandomVarSpec::Lognormal { mean, variance }),
                (-100.0..100.0f64, 1e-3..100.0f64)
                    .prop_map(|(mean, variance)| RandomVarSpec::Gumbel { mean, variance }),
            ]
        }

        proptest! {
            #[test]
            fn inverse_cdf_is_strictly_increasing(
                dist in any_dist(),
                u in 1e-6..0.999f64,
                gap in 1e-6..1e-3f64,
            ) {
                let a = inverse_cdf(&dist, u).unwrap();
                let b = inverse_cdf(&dist, u + gap).unwrap();
                prop_assert!(a < b, "{dist:?}: q({u}) = {a} >= q({}) = {b}", u + gap);
            }

            #[test]
            fn lhs_columns_are_stratified(n in 2usize..60, dims in 1usize..5, seed in 0u64..1000) {
                let lhs = lhs_sample(n, dims, seed, LhsOptimization::None).unwrap();
                for j in 0..dims {
                    let mut cells: Vec<usize> =
                        lhs.points.iter().map(|p| (p[j] * n as f64).floor() as usize).collect();
                    cells.sort_unstable();
                    prop_assert_eq!(cells, (0..n).collect::<Vec<_>>());
                    // Kolmogorov distance to the uniform CDF.
                    let mut col: Vec<f64> = lhs.points.iter().map(|p| p[j]).collect();
                    col.sort_by(f64::total_cmp);
                    let ks = col
                        .iter()
                        .enumerate()
                        .map(|(i, x)| {
                            let hi = (i + 1) as f64 / n as f64 - x;
                            let lo = x - i as f64 / n as f64;
                            hi.max(lo)
                        })
                        .fold(0.0, f64::max);
                    prop_assert!(ks <= 1.0 / n as f64 + 1e-12);
                }
            }

            #[test]
            fn quantile_commutes_with_increasing_maps(
                values in proptest::collection::vec(-50.0..50.0f64, 1..200),
                alpha in 0.01..0.99f64,
            ) {
                let q = empirical_quantile(&values, alpha).unwrap();
                let mapped: Vec<f64> = values.iter().map(|v| v.exp()).collect();
                prop_assert_eq!(empirical_quantile(&mapped, alpha).unwrap(), q.exp());
                let cubed: Vec<f64> = values.iter().map(|v| v * v * v + 2.0 * v).collect();
                prop_assert_eq!(empirical_quantile(&cubed, alpha).unwrap(), q * q * q + 2.0 * q);
            }
        }
    }
}
