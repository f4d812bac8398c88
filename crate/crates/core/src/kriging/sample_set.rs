//! Kriging predictions over the frozen Monte Carlo set `C(d)` of a design.
//!
//! The environmental part of every sample is the same for all designs, so its
//! contribution to the cross-correlations is computed once. A design then only
//! contributes one factor per training point (plus one per sample for noisy
//! design variables), and the variance reduces to a matrix product with the
//! inverse Cholesky factor.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::linalg::{dot, lower_inverse};
use super::{KrigingModel, Trend};
use crate::error::{Error, Result};
use crate::problem::{MixedPoint, ProblemSpec};
use crate::sampling::CrnContext;

/// Batched predictor of one inner Kriging model over `C(d)`.
pub struct SetPredictor<'a> {
    model: &'a KrigingModel,
    spec: &'a ProblemSpec,
    crn: &'a CrnContext,
    n_x: usize,
    n_z: usize,
    weights: Vec<f64>,
    /// Environmental correlation factors, `N x n` row-major.
    env_factor: Vec<f64>,
    /// Environmental part of the trend, per sample.
    env_trend: Vec<f64>,
    /// Environmental normalized coordinates, `N x n_z`.
    env_u: Vec<f64>,
    /// `L^-T`, so that `K L^-T` holds `L^-1 k_j` in its rows.
    linv_t: DMatrix<f64>,
    whitened_basis: DMatrix<f64>,
}

impl<'a> SetPredictor<'a> {
    pub fn new(model: &'a KrigingModel, spec: &'a ProblemSpec, crn: &'a CrnContext) -> Result<Self> {
        let space = model.space();
        let n_x = spec.design.continuous.len();
        let n_z = spec.environmental.len();
        if space.n_con() != n_x + n_z || space.n_cat() != spec.design.categorical.len() {
            return Err(Error::Degenerate(
                "surrogate input space does not match the augmented problem space".into(),
            ));
        }
        let data = model.data();
        let (n, big_n) = (data.n, crn.n);
        let weights: Vec<f64> = model.theta().iter().map(|t| 0.5 / (t * t)).collect();

        let mut env_u = vec![0.0; big_n * n_z];
        for (j, z) in crn.env_realizations.iter().enumerate() {
            for k in 0..n_z {
                let c = n_x + k;
                env_u[j * n_z + k] = (z[k] - space.lower[c]) / (space.upper[c] - space.lower[c]);
            }
        }
        let mut env_factor = vec![0.0; big_n * n];
        env_factor
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(j, row)| {
                let zu = &env_u[j * n_z..(j + 1) * n_z];
                for (i, out) in row.iter_mut().enumerate() {
                    let ui = &data.u[i * data.n_con + n_x..(i + 1) * data.n_con];
                    let mut e = 0.0;
                    for k in 0..n_z {
                        let diff = zu[k] - ui[k];
                        e += weights[n_x + k] * diff * diff;
                    }
                    *out = (-e).exp();
                }
            });
        let env_trend = match model.trend() {
            Trend::Constant => vec![0.0; big_n],
            Trend::Linear => (0..big_n)
                .map(|j| dot(&model.beta()[1 + n_x..], &env_u[j * n_z..(j + 1) * n_z]))
                .collect(),
        };
        let linv = lower_inverse(model.chol(), n);
        let linv_t = DMatrix::from_fn(n, n, |r, c| linv[c * n + r]);
        let p = data.p;
        let whitened_basis = DMatrix::from_fn(n, p, |r, c| model.whitened_basis()[r * p + c]);
        Ok(Self {
            model,
            spec,
            crn,
            n_x,
            n_z,
            weights,
            env_factor,
            env_trend,
            env_u,
            linv_t,
            whitened_basis,
        })
    }

    pub fn model(&self) -> &KrigingModel {
        self.model
    }

    pub fn n_samples(&self) -> usize {
        self.crn.n
    }

    /// Augmented point of sample `j` of design `d`.
    pub fn sample_point(&self, d: &MixedPoint, j: usize) -> MixedPoint {
        let columns = self.crn.design_columns(self.spec, d);
        self.sample_point_from(d, &columns, j)
    }

    fn sample_point_from(&self, d: &MixedPoint, columns: &[Vec<f64>], j: usize) -> MixedPoint {
        let mut con: Vec<f64> = columns.iter().map(|c| c[j]).collect();
        con.extend_from_slice(&self.crn.env_realizations[j]);
        MixedPoint::new(con, d.cat.clone())
    }

    /// Factor shared by all samples of `d`: the non-noisy design dimensions
    /// and the categorical ones.
    fn design_factor(&self, d: &MixedPoint) -> Vec<f64> {
        let data = self.model.data();
        let space = self.model.space();
        let noisy = self.noisy_mask();
        (0..data.n)
            .map(|i| {
                let ui = &data.u[i * data.n_con..(i + 1) * data.n_con];
                let ci = &data.cat[i * data.n_cat..(i + 1) * data.n_cat];
                let mut e = 0.0;
                for k in 0..self.n_x {
                    if !noisy[k] {
                        let u = (d.con[k] - space.lower[k]) / (space.upper[k] - space.lower[k]);
                        let diff = u - ui[k];
                        e += self.weights[k] * diff * diff;
                    }
                }
                for k in 0..data.n_cat {
                    if d.cat[k] != ci[k] {
                        e += self.weights[data.n_con + k];
                    }
                }
                (-e).exp()
            })
            .collect()
    }

    fn noisy_mask(&self) -> Vec<bool> {
        self.spec
            .design
            .continuous
            .iter()
            .map(|v| v.noise.is_some())
            .collect()
    }

    /// Cross-correlation matrix `K` (`N x n`), trend rows (`N x p`) and the
    /// per-sample coincidence flags.
    fn kernel_rows(&self, d: &MixedPoint) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let data = self.model.data();
        let space = self.model.space();
        let (n, p, big_n) = (data.n, data.p, self.crn.n);
        let columns = self.crn.design_columns(self.spec, d);
        let noisy = self.noisy_mask();
        let a = self.design_factor(d);

        // Normalized design coordinates per sample.
        let xu: Vec<Vec<f64>> = (0..self.n_x)
            .map(|k| {
                let r = space.upper[k] - space.lower[k];
                columns[k].iter().map(|x| (x - space.lower[k]) / r).collect()
            })
            .collect();

        let mut k_mat = vec![0.0; big_n * n];
        let mut coincident = vec![false; big_n];
        let nugget = self.model.nugget();
        k_mat
            .par_chunks_mut(n)
            .zip(coincident.par_iter_mut())
            .enumerate()
            .for_each(|(j, (row, hit))| {
                let env = &self.env_factor[j * n..(j + 1) * n];
                for i in 0..n {
                    let mut v = a[i] * env[i];
                    for k in 0..self.n_x {
                        if noisy[k] {
                            let diff = xu[k][j] - data.u[i * data.n_con + k];
                            v *= (-self.weights[k] * diff * diff).exp();
                        }
                    }
                    if v == 1.0 && self.sample_point_from(d, &columns, j).same_bits(&self.model.training_points()[i]) {
                        v = 1.0 + nugget;
                        *hit = true;
                    }
                    row[i] = v;
                }
            });

        let mut f = vec![0.0; big_n * p];
        for j in 0..big_n {
            f[j * p] = 1.0;
            if self.model.trend() == Trend::Linear {
                for k in 0..self.n_x {
                    f[j * p + 1 + k] = xu[k][j];
                }
                f[j * p + 1 + self.n_x..(j + 1) * p]
                    .copy_from_slice(&self.env_u[j * self.n_z..(j + 1) * self.n_z]);
            }
        }
        (k_mat, f, coincident)
    }

    /// Predictor means over `C(d)`.
    pub fn means(&self, d: &MixedPoint) -> Vec<f64> {
        let n = self.model.data().n;
        let p = self.model.data().p;
        let (k_mat, f, _) = self.kernel_rows(d);
        let beta = self.model.beta();
        let gamma = self.model.gamma();
        (0..self.crn.n)
            .map(|j| dot(&f[j * p..(j + 1) * p], beta) + dot(&k_mat[j * n..(j + 1) * n], gamma))
            .collect()
    }

    /// Predictor means and variances over `C(d)`.
    pub fn moments(&self, d: &MixedPoint) -> (Vec<f64>, Vec<f64>) {
        let data = self.model.data();
        let (n, p, big_n) = (data.n, data.p, self.crn.n);
        let (k_mat, f, coincident) = self.kernel_rows(d);
        let beta = self.model.beta();
        let gamma = self.model.gamma();
        let means: Vec<f64> = (0..big_n)
            .map(|j| dot(&f[j * p..(j + 1) * p], beta) + dot(&k_mat[j * n..(j + 1) * n], gamma))
            .collect();

        let k = DMatrix::from_row_slice(big_n, n, &k_mat);
        let v = &k * &self.linv_t;
        let vb = &v * &self.whitened_basis;
        let gls = self.model.gls_inverse();
        let sigma2 = self.model.sigma2();
        let nugget = self.model.nugget();
        let variances = (0..big_n)
            .map(|j| {
                let explained: f64 = v.row(j).iter().map(|x| x * x).sum();
                let resid: Vec<f64> = (0..p).map(|c| f[j * p + c] - vb[(j, c)]).collect();
                let mut inflation = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        inflation += resid[a] * gls[a * p + b] * resid[b];
                    }
                }
                let base = if coincident[j] { 1.0 + nugget } else { 1.0 };
                sigma2 * (base - explained + inflation).max(0.0)
            })
            .collect();
        (means, variances)
    }

    /// Means over `C(d)` for many designs, column `c` of the result holding
    /// design `c`. Without noisy design variables this is one matrix product.
    pub fn means_many(&self, designs: &[MixedPoint]) -> Vec<Vec<f64>> {
        if self.noisy_mask().iter().any(|&b| b) {
            return designs.par_iter().map(|d| self.means(d)).collect();
        }
        let data = self.model.data();
        let (n, big_n) = (data.n, self.crn.n);
        let gamma = self.model.gamma();
        let beta = self.model.beta();
        let g = DMatrix::from_fn(big_n, n, |j, i| self.env_factor[j * n + i] * gamma[i]);
        let a = DMatrix::from_fn(n, designs.len(), |_, _| 0.0);
        let mut a = a;
        for (c, d) in designs.iter().enumerate() {
            for (i, v) in self.design_factor(d).into_iter().enumerate() {
                a[(i, c)] = v;
            }
        }
        let m = &g * &a;
        let space = self.model.space();
        designs
            .iter()
            .enumerate()
            .map(|(c, d)| {
                // Coincident samples need the nugget on their correlation.
                if self.has_coincident_sample(d) {
                    return self.means(d);
                }
                let mut base = beta[0];
                if self.model.trend() == Trend::Linear {
                    for k in 0..self.n_x {
                        base += beta[1 + k] * (d.con[k] - space.lower[k]) / (space.upper[k] - space.lower[k]);
                    }
                }
                (0..big_n).map(|j| base + self.env_trend[j] + m[(j, c)]).collect()
            })
            .collect()
    }

    fn has_coincident_sample(&self, d: &MixedPoint) -> bool {
        self.model.training_points().iter().any(|w| {
            w.cat == d.cat
                && w.con[..self.n_x] == d.con[..]
                && self
                    .crn
                    .env_realizations
                    .iter()
                    .any(|z| z.iter().zip(&w.con[self.n_x..]).all(|(a, b)| a.to_bits() == b.to_bits()))
        })
    }
}
