//! Maximum-likelihood calibration of the lengthscales.

use rayon::prelude::*;

use super::{variance_floor, ExperimentalDesign, InputSpace, KrigingModel, Normalized, Trend};
use crate::error::{Error, Result};
use crate::problem::MixedPoint;
use crate::sampling::{lhs_sample, LhsOptimization};

/// Settings of the multistart likelihood search.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub trend: Trend,
    pub nugget: f64,
    /// Box for every lengthscale, in normalized input units.
    pub theta_bounds: (f64, f64),
    /// Number of Nelder-Mead starts, spread by an LHS in log-lengthscale.
    pub restarts: usize,
    /// Likelihood evaluations allowed per start.
    pub max_evaluations: usize,
    pub seed: u64,
    /// Replaces the first start, typically with the previous cycle's optimum.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            trend: Trend::Constant,
            nugget: super::DEFAULT_NUGGET,
            theta_bounds: (1e-3, 1e2),
            restarts: 10,
            max_evaluations: 300,
            seed: 0,
            warm_start: None,
        }
    }
}

/// Concentrated negative log-likelihood of response `objective` of `ed` at
/// lengthscales `theta`. Returns `+inf` when the correlation matrix is not
/// numerically positive definite.
pub fn negative_log_likelihood(
    ed: &ExperimentalDesign,
    objective: usize,
    space: &InputSpace,
    theta: &[f64],
    trend: Trend,
) -> Result<f64> {
    let y = ed.column(objective);
    let data = Normalized::new(space, &ed.points, trend)?;
    if theta.len() != space.dim() {
        return Err(Error::Calibration(format!(
            "expected {} lengthscales, got {}",
            space.dim(),
            theta.len()
        )));
    }
    Ok(data
        .profile(&y, theta, super::DEFAULT_NUGGET, variance_floor(&y))
        .map_or(f64::INFINITY, |p| p.nll))
}

/// Calibrates a model of response `objective` of `ed`.
pub fn calibrate(
    ed: &ExperimentalDesign,
    objective: usize,
    space: &InputSpace,
    options: &CalibrationOptions,
) -> Result<KrigingModel> {
    calibrate_values(space, &ed.points, &ed.column(objective), options)
}

/// Calibrates a model of `values` observed at `points`.
pub fn calibrate_values(
    space: &InputSpace,
    points: &[MixedPoint],
    values: &[f64],
    options: &CalibrationOptions,
) -> Result<KrigingModel> {
    space.validate()?;
    if points.len() != values.len() {
        return Err(Error::Degenerate("points and values differ in length".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("response {i} is not finite")));
    }
    let (lo, hi) = options.theta_bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidConfig(format!("invalid lengthscale bounds ({lo}, {hi})")));
    }
    let data = Normalized::new(space, points, options.trend)?;
    if data.n < data.p + 2 {
        return Err(Error::Degenerate(format!(
            "{} training points are too few for a trend with {} terms",
            data.n, data.p
        )));
    }
    let dim = space.dim();
    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    let floor = variance_floor(values);
    let objective = |z: &[f64]| -> f64 {
        let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        data.profile(values, &theta, options.nugget, floor)
            .map_or(f64::INFINITY, |p| p.nll)
    };

    let starts = start_points(dim, options, log_lo, log_hi)?;
    let results: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|z0| nelder_mead(&objective, z0, log_lo, log_hi, options.max_evaluations))
        .collect();
    let (best_index, (best_nll, best_z)) = results
        .iter()
        .enumerate()
        .filter(|(_, (f, _))| f.is_finite())
        .min_by(|(i, (a, _)), (j, (b, _))| a.total_cmp(b).then(i.cmp(j)))
        .ok_or_else(|| {
            Error::Calibration("the correlation matrix is singular at every start".into())
        })?;
    log::debug!("calibration: best start {best_index} with nll {best_nll:.6}");
    let theta: Vec<f64> = best_z.iter().map(|v| v.exp()).collect();
    KrigingModel::fit(space, points, values, options.trend, &theta, options.nugget)
}

fn start_points(
    dim: usize,
    options: &CalibrationOptions,
    log_lo: f64,
    log_hi: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = options.restarts.max(1);
    let mut starts: Vec<Vec<f64>> = if n >= 2 {
        lhs_sample(n, dim, options.seed, LhsOptimization::None)?
            .points
            .into_iter()
            .map(|p| p.iter().map(|u| log_lo + u * (log_hi - log_lo)).collect())
            .collect()
    } else {
        // A lengthscale of a fifth of the range is a reasonable lone guess.
        vec![vec![0.2_f64.ln().clamp(log_lo, log_hi); dim]]
    };
    if let Some(warm) = &options.warm_start {
        if warm.len() != dim || warm.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidConfig("warm start has the wrong shape".into()));
        }
        starts[0] = warm.iter().map(|t| t.ln().clamp(log_lo, log_hi)).collect();
    }
    Ok(starts)
}

/// Nelder-Mead on the box `[lo, hi]^d`, projecting trial points onto it.
pub(crate) fn nelder_mead(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    lo: f64,
    hi: f64,
    max_evaluations: usize,
) -> (f64, Vec<f64>) {
    let d = x0.len();
    let clamp = |x: &mut Vec<f64>| x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let step = 0.1 * (hi - lo);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    for k in 0..d {
        let mut v = x0.to_vec();
        v[k] = if v[k] + step <= hi { v[k] + step } else { v[k] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = d + 1;

    while evals < max_evaluations {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[d]);
        if best.is_finite() && (worst - best).abs() <= 1e-8 * (1.0 + best.abs()) {
            break;
        }
        let diameter = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < 1e-6 {
            break;
        }

        let mut centroid = vec![0.0; d];
        for x in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let towards = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + t * (w - c))
                .collect();
            clamp(&mut x);
            x
        };

        let reflected = towards(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = towards(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let (contracted, fc) = if fr < values[d] {
                let x = towards(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = towards(0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    let mut x: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    clamp(&mut x);
                    values[i] = f(&x);
                    simplex[i] = x;
                }
                evals += d;
            }
        }
    }
    let best = (0..=d)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    (values[best], simplex[best].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2);
        let (v, x) = nelder_mead(&f, &[0.0, 0.0], -3.0, 3.0, 2000);
        assert!(v < 1e-8, "{v}");
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn nelder_mead_respects_box() {
        let f = |x: &[f64]| x[0];
        let (v, x) = nelder_mead(&f, &[0.5], -1.0, 1.0, 500);
        assert!((v + 1.0).abs() < 1e-9 && (x[0] + 1.0).abs() < 1e-9);
    }
}
