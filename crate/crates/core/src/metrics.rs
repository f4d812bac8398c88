//! Two-objective front quality: Nadir point, trapezoidal hypervolume and
//! relative hypervolume errors.
//!
//! The hypervolume integrates the piecewise-linear interpolant of the sorted
//! front. The region is closed vertically at the first point and by a
//! rectangle from the last point to the reference abscissa. Points outside the
//! reference box are clipped onto it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moga::dominates;
use crate::problem::{EvalCounter, MixedPoint, ObjectiveModel, ProblemSpec};
use crate::sampling::CrnContext;

/// A mutually non-dominated set of `(q1, q2)` pairs, ascending in `q1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Front2D {
    points: Vec<[f64; 2]>,
}

impl Front2D {
    /// Keeps the non-dominated subset of `points` (duplicates once) and sorts it.
    pub fn from_points<I: IntoIterator<Item = [f64; 2]>>(points: I) -> Result<Self> {
        let mut pts: Vec<[f64; 2]> = points.into_iter().collect();
        if let Some(p) = pts.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::Domain(format!("front point {p:?} is not finite")));
        }
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let mut kept: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
        for p in pts {
            // Sorted by q1 then q2, so p is dominated iff some kept point has q2 <= p.q2.
            if kept.last().is_none_or(|last| p[1] < last[1]) {
                kept.push(p);
            }
        }
        Ok(Self { points: kept })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != 2) {
            return Err(Error::Unsupported("hypervolume needs exactly two objectives".into()));
        }
        Self::from_points(rows.iter().map(|r| [r[0], r[1]]))
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Componentwise maximum of a front.
pub fn nadir_point(front: &Front2D) -> Result<[f64; 2]> {
    if front.is_empty() {
        return Err(Error::Degenerate("Nadir point of an empty front".into()));
    }
    Ok(front.points.iter().fold([f64::NEG_INFINITY; 2], |acc, p| {
        [acc[0].max(p[0]), acc[1].max(p[1])]
    }))
}

/// Trapezoidal hypervolume of `front` up to `reference`.
pub fn hypervolume_2d(front: &Front2D, reference: [f64; 2]) -> f64 {
    let clipped: Vec<[f64; 2]> = front
        .points
        .iter()
        .map(|p| [p[0].min(reference[0]), p[1].min(reference[1])])
        .collect();
    let Some(last) = clipped.last() else {
        return 0.0;
    };
    let mut area = 0.0;
    for w in clipped.windows(2) {
        let h0 = reference[1] - w[0][1];
        let h1 = reference[1] - w[1][1];
        area += 0.5 * (w[1][0] - w[0][0]) * (h0 + h1);
    }
    area + (reference[0] - last[0]) * (reference[1] - last[1])
}

/// `|A - A_ref| / A_ref`, both areas measured up to the Nadir of `reference`.
pub fn delta_hv(front: &Front2D, reference: &Front2D) -> Result<f64> {
    let r = nadir_point(reference)?;
    let a_ref = hypervolume_2d(reference, r);
    if !(a_ref > 0.0) {
        return Err(Error::Degenerate("reference front has zero hypervolume".into()));
    }
    Ok((hypervolume_2d(front, r) - a_ref).abs() / a_ref)
}

/// Relative hypervolume error of a Pareto set re-evaluated with the true model
/// under the common random numbers `crn`.
pub fn delta_hv_prime(
    designs: &[MixedPoint],
    model: &dyn ObjectiveModel,
    spec: &ProblemSpec,
    crn: &CrnContext,
    reference: &Front2D,
) -> Result<f64> {
    let counter = EvalCounter::new(0);
    let rows = designs
        .iter()
        .map(|d| crate::adaptive::true_quantiles(model, spec, crn, d, &counter))
        .collect::<Result<Vec<_>>>()?;
    delta_hv(&Front2D::from_rows(&rows)?, reference)
}

/// Indices of the rows of `objectives` that no other row dominates.
pub fn nondominated_indices(objectives: &[Vec<f64>]) -> Vec<usize> {
    (0..objectives.len())
        .filter(|&i| !objectives.iter().any(|o| dominates(o, &objectives[i])))
        .collect()
}
