//! Universal Kriging over mixed continuous-categorical inputs.
//!
//! Continuous inputs are normalized to the unit hypercube of the declared
//! [`InputSpace`] before entering the kernel, which makes the continuous
//! distance the Gower similarity `|w - w'| / range`. Categorical dimensions use
//! the Gower mismatch indicator. Both enter one anisotropic Gaussian kernel
//!
//! ```text
//! k(w, w') = exp(-1/2 sum_con (s_k / theta_k)^2 - 1/2 sum_cat (s_k / theta_k)^2)
//! ```
//!
//! with one lengthscale per dimension. A small nugget is added to the diagonal
//! of the correlation matrix; a prediction point that coincides exactly with a
//! training point gets the same nugget on its self-correlation, so the model
//! still interpolates its training data.

mod calibrate;
pub(crate) mod linalg;
mod sample_set;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::MixedPoint;
use linalg::{backward_solve_transposed, cholesky_in_place, dot, forward_solve, spd_inverse};

pub use calibrate::{calibrate, calibrate_values, negative_log_likelihood, CalibrationOptions};
pub use sample_set::SetPredictor;

/// Relative nugget added to the correlation diagonal.
pub const DEFAULT_NUGGET: f64 = 1e-8;

/// Version tag of the serialized model document.
pub const MODEL_DOCUMENT_VERSION: u32 = 1;

/// Bounds of the continuous inputs and level counts of the categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub levels: Vec<usize>,
}

impl InputSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, levels: Vec<usize>) -> Result<Self> {
        let space = Self { lower, upper, levels };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Degenerate("bound vectors differ in length".into()));
        }
        for (k, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(u - l > 0.0) || !(u - l).is_finite() {
                return Err(Error::Degenerate(format!(
                    "continuous dimension {k} has non-positive range [{l}, {u}]"
                )));
            }
        }
        Ok(())
    }

    pub fn n_con(&self) -> usize {
        self.lower.len()
    }

    pub fn n_cat(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.n_con() + self.n_cat()
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    fn normalize_into(&self, con: &[f64], out: &mut [f64]) {
        for (k, v) in out.iter_mut().enumerate() {
            *v = (con[k] - self.lower[k]) / (self.upper[k] - self.lower[k]);
        }
    }

    /// Whether `a` and `b` coincide: normalized continuous coordinates within
    /// `1e-10` and identical levels.
    pub fn coincident(&self, a: &MixedPoint, b: &MixedPoint) -> bool {
        a.cat == b.cat
            && a.con.iter().zip(&b.con).enumerate().all(|(k, (x, y))| {
                ((x - y) / (self.upper[k] - self.lower[k])).abs() <= 1e-10
            })
    }
}

/// Per-dimension Gower similarity terms: `|w_k - w'_k| / range_k` for the
/// continuous dimensions followed by the mismatch indicator of each
/// categorical dimension.
pub fn gower_similarity(w: &MixedPoint, w2: &MixedPoint, ranges: &[f64]) -> Result<Vec<f64>> {
    if w.con.len() != w2.con.len() || w.cat.len() != w2.cat.len() || ranges.len() != w.con.len() {
        return Err(Error::Degenerate("points and ranges have mismatched dimensions".into()));
    }
    if let Some(k) = ranges.iter().position(|r| !(*r > 0.0)) {
        return Err(Error::Degenerate(format!("continuous dimension {k} has zero range")));
    }
    let con = w
        .con
        .iter()
        .zip(&w2.con)
        .zip(ranges)
        .map(|((a, b), r)| (a - b).abs() / r);
    let cat = w
        .cat
        .iter()
        .zip(&w2.cat)
        .map(|(a, b)| if a == b { 0.0 } else { 1.0 });
    Ok(con.chain(cat).collect())
}

/// Mixed Gaussian kernel between two points, with continuous differences
/// scaled by `ranges`. `theta` holds the continuous lengthscales first.
pub fn kernel_mixed(w: &MixedPoint, w2: &MixedPoint, theta: &[f64], ranges: &[f64]) -> Result<f64> {
    let s = gower_similarity(w, w2, ranges)?;
    if theta.len() != s.len() {
        return Err(Error::Degenerate(format!(
            "expected {} lengthscales, got {}",
            s.len(),
            theta.len()
        )));
    }
    let e: f64 = s.iter().zip(theta).map(|(s, t)| (s / t) * (s / t)).sum();
    Ok((-0.5 * e).exp())
}

/// Polynomial trend of the universal Kriging model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    /// Ordinary Kriging.
    #[default]
    Constant,
    /// Intercept plus the normalized continuous inputs.
    Linear,
}

impl Trend {
    pub fn basis_size(&self, n_con: usize) -> usize {
        match self {
            Trend::Constant => 1,
            Trend::Linear => 1 + n_con,
        }
    }

    fn basis_into(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        if *self == Trend::Linear {
            out[1..].copy_from_slice(u);
        }
    }
}

/// Inputs and `m` responses of evaluated points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalDesign {
    pub points: Vec<MixedPoint>,
    /// One row of `m` responses per point.
    pub responses: Vec<Vec<f64>>,
}

impl ExperimentalDesign {
    pub fn new(points: Vec<MixedPoint>, responses: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != responses.len() {
            return Err(Error::Degenerate(format!(
                "{} points but {} response rows",
                points.len(),
                responses.len()
            )));
        }
        Ok(Self { points, responses })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.responses.iter().map(|r| r[k]).collect()
    }

    pub fn contains(&self, space: &InputSpace, w: &MixedPoint) -> bool {
        self.points.iter().any(|p| space.coincident(p, w))
    }

    /// Appends a row unless it duplicates an existing input.
    pub fn push(&mut self, space: &InputSpace, w: MixedPoint, y: Vec<f64>) -> bool {
        if self.contains(space, &w) {
            return false;
        }
        self.points.push(w);
        self.responses.push(y);
        true
    }
}

/// Mean and variance of the Kriging predictor at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Quantities of the profile likelihood for fixed lengthscales.
pub(crate) struct Profile {
    /// Row-major lower Cholesky factor of `R + nugget I`.
    pub chol: Vec<f64>,
    /// `L^-1 F`, row-major `n x p`.
    pub whitened_basis: Vec<f64>,
    /// `(F^T R^-1 F)^-1`, row-major `p x p`.
    pub gls_inverse: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// `R^-1 (Y - F beta)`.
    pub gamma: Vec<f64>,
    pub nll: f64,
}

/// Training inputs normalized once, shared by calibration and prediction.
#[derive(Debug, Clone)]
pub(crate) struct Normalized {
    pub n: usize,
    pub n_con: usize,
    pub n_cat: usize,
    /// `n x n_con`, row-major.
    pub u: Vec<f64>,
    /// `n x n_cat`, row-major.
    pub cat: Vec<usize>,
    /// Trend basis, `n x p` row-major.
    pub basis: Vec<f64>,
    pub p: usize,
}

impl Normalized {
    pub fn new(space: &InputSpace, points: &[MixedPoint], trend: Trend) -> Result<Self> {
        let (n, n_con, n_cat) = (points.len(), space.n_con(), space.n_cat());
        let p = trend.basis_size(n_con);
        let mut u = vec![0.0; n * n_con];
        let mut cat = Vec::with_capacity(n * n_cat);
        let mut basis = vec![0.0; n * p];
        for (i, w) in points.iter().enumerate() {
            if w.con.len() != n_con || w.cat.len() != n_cat {
                return Err(Error::Degenerate(format!(
                    "training point {i} does not match the input space dimensions"
                )));
            }
            space.normalize_into(&w.con, &mut u[i * n_con..(i + 1) * n_con]);
            cat.extend_from_slice(&w.cat);
            trend.basis_into(&u[i * n_con..(i + 1) * n_con], &mut basis[i * p..(i + 1) * p]);
        }
        Ok(Self {
            n,
            n_con,
            n_cat,
            u,
            cat,
            basis,
            p,
        })
    }

    /// Lower-triangular correlation matrix (row-major, full storage) with the
    /// nugget on the diagonal.
    pub fn correlation(&self, theta: &[f64], nugget: f64) -> Vec<f64> {
        let n = self.n;
        let weights: Vec<f64> = theta.iter().map(|t| 0.5 / (t * t)).collect();
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            let ui = &self.u[i * self.n_con..(i + 1) * self.n_con];
            let ci = &self.cat[i * self.n_cat..(i + 1) * self.n_cat];
            for j in 0..i {
                let uj = &self.u[j * self.n_con..(j + 1) * self.n_con];
                let cj = &self.cat[j * self.n_cat..(j + 1) * self.n_cat];
                let mut e = 0.0;
                for k in 0..self.n_con {
                    let d = ui[k] - uj[k];
                    e += weights[k] * d * d;
                }
                for k in 0..self.n_cat {
                    if ci[k] != cj[k] {
                        e += weights[self.n_con + k];
                    }
                }
                r[i * n + j] = (-e).exp();
            }
            r[i * n + i] = 1.0 + nugget;
        }
        r
    }

    pub fn profile(&self, y: &[f64], theta: &[f64], nugget: f64, floor: f64) -> Option<Profile> {
        let (n, p) = (self.n, self.p);
        let mut chol = self.correlation(theta, nugget);
        if !cholesky_in_place(&mut chol, n) {
            return None;
        }
        // Whitened basis B = L^-1 F, column by column.
        let mut whitened_basis = vec![0.0; n * p];
        let mut col = vec![0.0; n];
        for c in 0..p {
            for i in 0..n {
                col[i] = self.basis[i * p + c];
            }
            forward_solve(&chol, n, &mut col);
            for i in 0..n {
                whitened_basis[i * p + c] = col[i];
            }
        }
        let mut a = y.to_vec();
        forward_solve(&chol, n, &mut a);

        let mut btb = vec![0.0; p * p];
        let mut bta = vec![0.0; p];
        for i in 0..n {
            let row = &whitened_basis[i * p..(i + 1) * p];
            for r in 0..p {
                bta[r] += row[r] * a[i];
                for c in 0..p {
                    btb[r * p + c] += row[r] * row[c];
                }
            }
        }
        let gls_inverse = spd_inverse(&btb, p)?;
        let beta: Vec<f64> = (0..p)
            .map(|r| dot(&gls_inverse[r * p..(r + 1) * p], &bta))
            .collect();
        let mut e = a;
        for i in 0..n {
            e[i] -= dot(&whitened_basis[i * p..(i + 1) * p], &beta);
        }
        let sigma2 = dot(&e, &e) / n as f64;
        let log_det: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum::<f64>() * 2.0;
        let nll = 0.5 * n as f64 * (sigma2.max(floor).ln() + 1.0 + (2.0 * std::f64::consts::PI).ln())
            + 0.5 * log_det;
        if !nll.is_finite() {
            return None;
        }
        let mut gamma = e;
        backward_solve_transposed(&chol, n, &mut gamma);
        Some(Profile {
            chol,
            whitened_basis,
            gls_inverse,
            beta,
            sigma2,
            gamma,
            nll,
        })
    }
}

/// Lower bound applied to the process variance inside the likelihood so that
/// responses the trend reproduces exactly keep a finite likelihood.
pub(crate) fn variance_floor(y: &[f64]) -> f64 {
    let mean_sq = y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64;
    1e-20 * mean_sq + f64::MIN_POSITIVE.sqrt()
}

/// A calibrated universal Kriging model for one scalar response.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    space: InputSpace,
    trend: Trend,
    theta: Vec<f64>,
    nugget: f64,
    points: Vec<MixedPoint>,
    values: Vec<f64>,
    data: Normalized,
    chol: Vec<f64>,
    whitened_basis: Vec<f64>,
    gls_inverse: Vec<f64>,
    beta: Vec<f64>,
    sigma2: f64,
    gamma: Vec<f64>,
    nll: f64,
}

impl KrigingModel {
    /// Builds the model for fixed lengthscales; the trend coefficients and
    /// process variance take their closed-form estimates.
    pub fn fit(
        space: &InputSpace,
        points: &[MixedPoint],
        values: &[f64],
        trend: Trend,
        theta: &[f64],
        nugget: f64,
    ) -> Result<Self> {
        space.validate()?;
        if points.len() != values.len() {
            return Err(Error::Degenerate("points and values differ in length".into()));
        }
        if theta.len() != space.dim() || theta.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Calibration(format!(
                "expected {} positive lengthscales, got {theta:?}",
                space.dim()
            )));
        }
        let data = Normalized::new(space, points, trend)?;
        if data.n < data.p + 2 {
            return Err(Error::Degenerate(format!(
                "{} training points are too few for a trend with {} terms",
                data.n, data.p
            )));
        }
        let profile = data
            .profile(values, theta, nugget, variance_floor(values))
            .ok_or_else(|| Error::Calibration("correlation matrix is not positive definite".into()))?;
        Ok(Self {
            space: space.clone(),
            trend,
            theta: theta.to_vec(),
            nugget,
            points: points.to_vec(),
            values: values.to_vec(),
            data,
            chol: profile.chol,
            whitened_basis: profile.whitened_basis,
            gls_inverse: profile.gls_inverse,
            beta: profile.beta,
            sigma2: profile.sigma2,
            gamma: profile.gamma,
            nll: profile.nll,
        })
    }

    pub fn space(&self) -> &InputSpace {
        &self.space
    }

    pub fn trend(&self) -> Trend {
        self.trend
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Negative log-likelihood at the calibrated lengthscales.
    pub fn nll(&self) -> f64 {
        self.nll
    }

    pub fn n_train(&self) -> usize {
        self.data.n
    }

    pub fn training_points(&self) -> &[MixedPoint] {
        &self.points
    }

    pub fn training_values(&self) -> &[f64] {
        &self.values
    }

    /// Correlations with every training point, and whether `w` coincides
    /// exactly with one of them (its correlation then carries the nugget).
    fn cross_correlation(&self, w: &MixedPoint, u: &[f64]) -> (Vec<f64>, bool) {
        let d = &self.data;
        let weights: Vec<f64> = self.theta.iter().map(|t| 0.5 / (t * t)).collect();
        let mut coincident = false;
        let r = (0..d.n)
            .map(|i| {
                let ui = &d.u[i * d.n_con..(i + 1) * d.n_con];
                let ci = &d.cat[i * d.n_cat..(i + 1) * d.n_cat];
                let mut e = 0.0;
                for k in 0..d.n_con {
                    let diff = u[k] - ui[k];
                    e += weights[k] * diff * diff;
                }
                for k in 0..d.n_cat {
                    if w.cat[k] != ci[k] {
                        e += weights[d.n_con + k];
                    }
                }
                if e == 0.0 && w.same_bits(&self.points[i]) {
                    coincident = true;
                    1.0 + self.nugget
                } else {
                    (-e).exp()
                }
            })
            .collect();
        (r, coincident)
    }

    /// Predictor mean and variance at `w`.
    pub fn predict(&self, w: &MixedPoint) -> Prediction {
        let d = &self.data;
        let p = d.p;
        let mut u = vec![0.0; d.n_con];
        self.space.normalize_into(&w.con, &mut u);
        let mut f = vec![0.0; p];
        self.trend.basis_into(&u, &mut f);
        let (mut r, coincident) = self.cross_correlation(w, &u);

        let mean = dot(&f, &self.beta) + dot(&r, &self.gamma);

        forward_solve(&self.chol, d.n, &mut r);
        let explained = dot(&r, &r);
        let mut resid = f;
        for i in 0..d.n {
            let row = &self.whitened_basis[i * p..(i + 1) * p];
            for c in 0..p {
                resid[c] -= row[c] * r[i];
            }
        }
        let mut inflation = 0.0;
        for a in 0..p {
            for b in 0..p {
                inflation += resid[a] * self.gls_inverse[a * p + b] * resid[b];
            }
        }
        let base = if coincident { 1.0 + self.nugget } else { 1.0 };
        let variance = self.sigma2 * (base - explained + inflation).max(0.0);
        Prediction { mean, variance }
    }

    /// Predictor mean only, skipping the variance solve.
    pub fn mean(&self, w: &MixedPoint) -> f64 {
        let d = &self.data;
        let mut u = vec![0.0; d.n_con];
        self.space.normalize_into(&w.con, &mut u);
        let mut f = vec![0.0; d.p];
        self.trend.basis_into(&u, &mut f);
        let (r, _) = self.cross_correlation(w, &u);
        dot(&f, &self.beta) + dot(&r, &self.gamma)
    }

    /// Pointwise predictions for a batch of points.
    pub fn predict_batch(&self, points: &[MixedPoint]) -> Vec<Prediction> {
        points.par_iter().map(|w| self.predict(w)).collect()
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: MODEL_DOCUMENT_VERSION,
            space: self.space.clone(),
            trend: self.trend,
            nugget: self.nugget,
            theta: self.theta.clone(),
            beta: self.beta.clone(),
            sigma2: self.sigma2,
            points: self.points.clone(),
            values: self.values.clone(),
        }
    }

    /// Rebuilds the model from a document. The factorization is recomputed
    /// from the stored lengthscales, so the result predicts identically.
    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.version != MODEL_DOCUMENT_VERSION {
            return Err(Error::Unsupported(format!(
                "model document version {} (expected {MODEL_DOCUMENT_VERSION})",
                doc.version
            )));
        }
        Self::fit(&doc.space, &doc.points, &doc.values, doc.trend, &doc.theta, doc.nugget)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_document(&doc)
    }

    pub(crate) fn data(&self) -> &Normalized {
        &self.data
    }

    pub(crate) fn chol(&self) -> &[f64] {
        &self.chol
    }

    pub(crate) fn whitened_basis(&self) -> &[f64] {
        &self.whitened_basis
    }

    pub(crate) fn gls_inverse(&self) -> &[f64] {
        &self.gls_inverse
    }

    pub(crate) fn gamma(&self) -> &[f64] {
        &self.gamma
    }
}

/// Serialized form of a calibrated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub version: u32,
    pub space: InputSpace,
    pub trend: Trend,
    pub nugget: f64,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub points: Vec<MixedPoint>,
    pub values: Vec<f64>,
}

#[cfg(test)]
mod tests;
