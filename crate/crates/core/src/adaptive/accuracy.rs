//! Quantile estimates over the Monte Carlo set, their accuracy on the Pareto
//! set, outlier filtering and the choice of enrichment points.

use rayon::prelude::*;

use crate::cluster::{kmeans_mixed, representatives};
use crate::error::Result;
use crate::kriging::{ExperimentalDesign, InputSpace, SetPredictor};
use crate::problem::{evaluate, EvalCounter, MixedPoint, ObjectiveModel, ProblemSpec};
use crate::sampling::{conditional_sample, empirical_quantile, quantile_in_place, CrnContext};

/// Half-width of the predictor band, in predictor standard deviations.
pub const CONFIDENCE_FACTOR: f64 = 1.96;

/// Quantiles of the true model over `C(d)`.
pub fn true_quantiles(
    model: &dyn ObjectiveModel,
    spec: &ProblemSpec,
    crn: &CrnContext,
    d: &MixedPoint,
    counter: &EvalCounter,
) -> Result<Vec<f64>> {
    let m = spec.n_objectives;
    let mut columns = vec![Vec::with_capacity(crn.n); m];
    for w in conditional_sample(d, spec, crn) {
        let y = evaluate(model, &w, counter)?;
        for (c, v) in columns.iter_mut().zip(y) {
            c.push(v);
        }
    }
    Ok(columns
        .iter_mut()
        .zip(&spec.alpha)
        .map(|(c, &a)| quantile_in_place(c, a))
        .collect())
}

/// Quantiles of the surrogate means over `C(d)`, one per objective.
pub fn quantile_objectives(d: &MixedPoint, predictors: &[SetPredictor], alpha: &[f64]) -> Vec<f64> {
    predictors
        .iter()
        .zip(alpha)
        .map(|(p, &a)| quantile_in_place(&mut p.means(d), a))
        .collect()
}

/// Quantile of the mean and of the lower and upper predictor bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileBounds {
    pub q: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Each sample's prediction is shifted by `-/+ 1.96 sigma` before the
/// quantile is taken.
pub fn quantile_bounds(mean: &[f64], variance: &[f64], alpha: f64) -> QuantileBounds {
    let shifted = |sign: f64| -> Vec<f64> {
        mean.iter()
            .zip(variance)
            .map(|(m, v)| m + sign * CONFIDENCE_FACTOR * v.sqrt())
            .collect()
    };
    QuantileBounds {
        q: quantile_in_place(&mut mean.to_vec(), alpha),
        lower: quantile_in_place(&mut shifted(-1.0), alpha),
        upper: quantile_in_place(&mut shifted(1.0), alpha),
    }
}

/// `(q+ - q-) / |q|`. When `|q|` is below `1e-6 * scale`, `scale` (the
/// response spread of the initial design) is used as denominator instead.
pub fn relative_error(b: &QuantileBounds, scale: f64) -> f64 {
    let width = (b.upper - b.lower).max(0.0);
    let denom = if b.q.abs() < 1e-6 * scale { scale } else { b.q.abs() };
    if width == 0.0 {
        0.0
    } else if denom > 0.0 {
        width / denom
    } else {
        f64::INFINITY
    }
}

/// Interdecile outlier rule: `eta > eta90 + 1.5 (eta90 - eta10)`.
pub fn filter_outliers(eta: &[f64]) -> Vec<bool> {
    let (Ok(p90), Ok(p10)) = (empirical_quantile(eta, 0.9), empirical_quantile(eta, 0.1)) else {
        return vec![false; eta.len()];
    };
    let limit = p90 + 1.5 * (p90 - p10);
    eta.iter().map(|&e| e > limit).collect()
}

/// Accuracy of the quantiles on the Pareto set.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// `|P| x m` relative errors.
    pub eta: Vec<Vec<f64>>,
    /// `|P| x m` quantiles of the surrogate means.
    pub quantiles: Vec<Vec<f64>>,
    /// `|P| x m` outlier flags, computed per objective.
    pub outliers: Vec<Vec<bool>>,
    /// Worst non-outlier error per objective.
    pub worst: Vec<f64>,
}

impl AccuracyReport {
    pub fn from_eta(eta: Vec<Vec<f64>>, quantiles: Vec<Vec<f64>>) -> Self {
        let m = eta.first().map_or(0, Vec::len);
        let n = eta.len();
        let mut outliers = vec![vec![false; m]; n];
        let mut worst = vec![0.0; m];
        for k in 0..m {
            let column: Vec<f64> = eta.iter().map(|r| r[k]).collect();
            for (i, flag) in filter_outliers(&column).into_iter().enumerate() {
                outliers[i][k] = flag;
                if !flag {
                    worst[k] = f64::max(worst[k], column[i]);
                }
            }
        }
        Self {
            eta,
            quantiles,
            outliers,
            worst,
        }
    }

    /// Whether design `i` is an outlier in any objective.
    pub fn is_outlier(&self, i: usize) -> bool {
        self.outliers[i].iter().any(|&b| b)
    }

    pub fn converged(&self, target: f64) -> bool {
        self.worst.iter().all(|&w| w <= target)
    }
}

/// Relative quantile errors of `designs` under the inner surrogates.
pub fn pareto_accuracy(
    designs: &[MixedPoint],
    predictors: &[SetPredictor],
    alpha: &[f64],
    scale: &[f64],
) -> AccuracyReport {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = designs
        .par_iter()
        .map(|d| {
            predictors
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let (mean, var) = p.moments(d);
                    let b = quantile_bounds(&mean, &var, alpha[k]);
                    (relative_error(&b, scale[k]), b.q)
                })
                .unzip()
        })
        .collect();
    let (eta, quantiles) = rows.into_iter().unzip();
    AccuracyReport::from_eta(eta, quantiles)
}

/// Sample indices of `C(d)` sorted by decreasing predictor variance.
fn by_variance(predictor: &SetPredictor, d: &MixedPoint) -> Vec<usize> {
    let (_, var) = predictor.moments(d);
    let mut order: Vec<usize> = (0..var.len()).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    order
}

/// Inputs that select the enrichment batch.
pub struct EnrichmentRequest<'a> {
    pub designs: &'a [MixedPoint],
    pub report: &'a AccuracyReport,
    pub predictors: &'a [SetPredictor<'a>],
    /// Objectives whose worst error exceeds this value feed the first set.
    pub target: f64,
    /// Designs with an error above this value feed the second set.
    pub threshold: f64,
    pub batch_size: usize,
    pub ed: &'a ExperimentalDesign,
    pub space: &'a InputSpace,
    /// Continuous design ranges for the Gower distance.
    pub design_ranges: &'a [f64],
    pub seed: u64,
}

/// Picks up to `batch_size` augmented points of maximal predictor variance.
///
/// The first set takes, for each failing objective, the variance maximizer
/// over `C(d)` of the design with the largest non-outlier error. The second
/// set clusters the designs above the threshold and does the same for each
/// medoid, using its worst objective. Points already in the design or in the
/// batch are replaced by the next-best variance point.
pub fn select_enrichment(req: &EnrichmentRequest) -> Vec<MixedPoint> {
    let m = req.predictors.len();
    let report = req.report;
    let mut requests: Vec<(usize, usize)> = Vec::new();
    for k in 0..m {
        if report.worst[k] <= req.target || requests.len() == req.batch_size {
            continue;
        }
        let best = (0..req.designs.len())
            .filter(|&i| !report.outliers[i][k])
            .fold(None, |acc: Option<usize>, i| match acc {
                Some(b) if report.eta[b][k] >= report.eta[i][k] => Some(b),
                _ => Some(i),
            });
        if let Some(i) = best {
            requests.push((i, k));
        }
    }

    let k2 = req.batch_size.saturating_sub(requests.len());
    let failing: Vec<usize> = (0..req.designs.len())
        .filter(|&i| report.eta[i].iter().any(|&e| e > req.threshold))
        .collect();
    if k2 > 0 && !failing.is_empty() {
        let points: Vec<MixedPoint> = failing.iter().map(|&i| req.designs[i].clone()).collect();
        let mut distinct = 0;
        for (i, p) in points.iter().enumerate() {
            if !points[..i].iter().any(|q| q.same_bits(p)) {
                distinct += 1;
            }
        }
        let clusters = k2.min(distinct);
        if let Ok(clustering) = kmeans_mixed(&points, clusters, req.design_ranges, req.seed, 100) {
            for r in representatives(&clustering, &points, req.design_ranges) {
                let i = failing[r];
                let k = (0..m)
                    .fold(0, |b, k| if report.eta[i][k] > report.eta[i][b] { k } else { b });
                requests.push((i, k));
            }
        }
    }

    let mut batch: Vec<MixedPoint> = Vec::new();
    for (i, k) in requests {
        let d = &req.designs[i];
        let predictor = &req.predictors[k];
        for j in by_variance(predictor, d) {
            let w = predictor.sample_point(d, j);
            if !req.ed.contains(req.space, &w) && !batch.iter().any(|b| req.space.coincident(b, &w)) {
                batch.push(w);
                break;
            }
        }
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn outlier_examples() {
        assert_eq!(filter_outliers(&[0.2; 6]), vec![false; 6]);
        let mut eta = vec![0.01; 9];
        eta.push(0.5);
        let mask = filter_outliers(&eta);
        assert!(mask[9] && mask[..9].iter().all(|&b| !b));
        assert_eq!(filter_outliers(&[3.0]), vec![false]);
    }

    #[test]
    fn constant_band_gives_closed_form_error() {
        let (c, s) = (4.0, 0.5);
        let b = quantile_bounds(&[c; 50], &[s * s; 50], 0.9);
        assert_relative_eq!(relative_error(&b, 1.0), 2.0 * 1.96 * s / c, epsilon = 1e-12);
        let z = quantile_bounds(&[c; 10], &[0.0; 10], 0.9);
        assert_eq!(relative_error(&z, 1.0), 0.0);
    }

    #[test]
    fn tiny_quantile_uses_scale() {
        let b = QuantileBounds {
            q: 1e-12,
            lower: -0.1,
            upper: 0.1,
        };
        assert_relative_eq!(relative_error(&b, 2.0), 0.1);
    }

    #[test]
    fn report_is_row_permutation_equivariant() {
        let eta = vec![vec![0.01, 0.2], vec![0.03, 0.01], vec![0.02, 0.05], vec![0.9, 0.02]];
        let q = vec![vec![1.0, 1.0]; 4];
        let a = AccuracyReport::from_eta(eta.clone(), q.clone());
        let perm = [2, 0, 3, 1];
        let b = AccuracyReport::from_eta(perm.iter().map(|&i| eta[i].clone()).collect(), q);
        assert_eq!(a.worst, b.worst);
        for (r, &i) in perm.iter().enumerate() {
            assert_eq!(b.outliers[r], a.outliers[i]);
        }
    }
}
