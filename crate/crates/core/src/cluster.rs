//! K-means under the Gower distance, with medoid representatives.

use rand::Rng;

use crate::error::{Error, Result};
use crate::problem::MixedPoint;
use crate::sampling::{domain, stream_rng};

/// Mean of the per-dimension Gower terms.
pub fn gower_distance(a: &MixedPoint, b: &MixedPoint, ranges: &[f64]) -> f64 {
    let m = a.con.len() + a.cat.len();
    if m == 0 {
        return 0.0;
    }
    let con: f64 = a
        .con
        .iter()
        .zip(&b.con)
        .zip(ranges)
        .map(|((x, y), r)| (x - y).abs() / r)
        .sum();
    let cat = a.cat.iter().zip(&b.cat).filter(|(x, y)| x != y).count() as f64;
    (con + cat) / m as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedClustering {
    /// Cluster id of every input point.
    pub assignments: Vec<usize>,
    /// Continuous means and categorical modes.
    pub centers: Vec<MixedPoint>,
    pub iterations: usize,
    /// Total within-cluster distance after each assignment step.
    pub costs: Vec<f64>,
}

fn nearest(p: &MixedPoint, centers: &[MixedPoint], ranges: &[f64]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, z)| (c, gower_distance(p, z, ranges)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn mean_mode(members: &[&MixedPoint]) -> MixedPoint {
    let first = members[0];
    let n = members.len() as f64;
    let con = (0..first.con.len())
        .map(|k| members.iter().map(|p| p.con[k]).sum::<f64>() / n)
        .collect();
    let cat = (0..first.cat.len())
        .map(|k| {
            let top = members.iter().map(|p| p.cat[k]).max().unwrap_or(0);
            let mut counts = vec![0usize; top + 1];
            for p in members {
                counts[p.cat[k]] += 1;
            }
            // Lowest level wins ties.
            let best = counts.iter().copied().max().unwrap_or(0);
            counts.iter().position(|&c| c == best).unwrap_or(0)
        })
        .collect();
    MixedPoint::new(con, cat)
}

/// Lloyd iterations with Gower distance from farthest-point seeding.
///
/// A center update that would raise its cluster's total distance is skipped,
/// so the total distance never increases. Empty clusters are reseeded with
/// the point farthest from its current center.
pub fn kmeans_mixed(
    points: &[MixedPoint],
    k: usize,
    ranges: &[f64],
    seed: u64,
    max_iter: usize,
) -> Result<MixedClustering> {
    let mut distinct: Vec<&MixedPoint> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| q.same_bits(p)) {
            distinct.push(p);
        }
    }
    if k == 0 || k > distinct.len() {
        return Err(Error::Degenerate(format!(
            "cannot form {k} clusters from {} distinct points",
            distinct.len()
        )));
    }

    let mut rng = stream_rng(seed, domain::KMEANS, 0);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let far = points
            .iter()
            .map(|p| nearest(p, &centers, ranges).1)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        centers.push(points[far.0].clone());
    }

    let assign = |centers: &[MixedPoint]| -> (Vec<usize>, Vec<f64>) {
        points.iter().map(|p| nearest(p, centers, ranges)).unzip()
    };
    let (mut assignments, mut dist) = assign(&centers);
    let mut costs = vec![dist.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for c in 0..k {
            let members: Vec<&MixedPoint> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                let far = dist
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                centers[c] = points[far.0].clone();
                continue;
            }
            let candidate = mean_mode(&members);
            let cost = |z: &MixedPoint| members.iter().map(|p| gower_distance(p, z, ranges)).sum::<f64>();
            if cost(&candidate) <= cost(&centers[c]) {
                centers[c] = candidate;
            }
        }
        let (next, next_dist) = assign(&centers);
        costs.push(next_dist.iter().sum());
        let stable = next == assignments;
        assignments = next;
        dist = next_dist;
        if stable {
            break;
        }
    }
    Ok(MixedClustering {
        assignments,
        centers,
        iterations,
        costs,
    })
}

/// Index of the member closest to each center; ties go to the lower index.
/// Clusters without members are skipped.
pub fn representatives(clustering: &MixedClustering, points: &[MixedPoint], ranges: &[f64]) -> Vec<usize> {
    (0..clustering.centers.len())
        .filter_map(|c| {
            points
                .iter()
                .enumerate()
                .filter(|(i, _)| clustering.assignments[*i] == c)
                .map(|(i, p)| (i, gower_distance(p, &clustering.centers[c], ranges)))
                .fold(None, |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 <= cur.1 => Some(b),
                    _ => Some(cur),
                })
                .map(|(i, _)| i)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs() -> (Vec<MixedPoint>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let base = if c == 0 { 1.0 } else { 90.0 };
            pts.push(MixedPoint::new(
                vec![base + rng.random::<f64>(), base + rng.random::<f64>()],
                vec![c],
            ));
            truth.push(c);
        }
        (pts, truth)
    }

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<MixedPoint> = (0..5).map(|i| MixedPoint::new(vec![i as f64], vec![])).collect();
        let res = kmeans_mixed(&pts, 5, &[10.0], 1, 50).unwrap();
        assert_eq!(*res.costs.last().unwrap(), 0.0);
        let mut reps = representatives(&res, &pts, &[10.0]);
        reps.sort_unstable();
        assert_eq!(reps, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (pts, truth) = blobs();
        let res = kmeans_mixed(&pts, 2, &[100.0, 100.0], 7, 50).unwrap();
        let flip = res.assignments[0] != truth[0];
        for (a, t) in res.assignments.iter().zip(&truth) {
            assert_eq!(*a, if flip { 1 - t } else { *t });
        }
        let reps = representatives(&res, &pts, &[100.0, 100.0]);
        let mut blob_of: Vec<usize> = reps.iter().map(|&i| truth[i]).collect();
        blob_of.sort_unstable();
        assert_eq!(blob_of, vec![0, 1]);
    }

    #[test]
    fn identical_points_share_one_center() {
        let pts = vec![MixedPoint::new(vec![2.0], vec![1]); 4];
        let res = kmeans_mixed(&pts, 1, &[1.0], 0, 10).unwrap();
        assert!(res.centers[0].same_bits(&pts[0]));
        assert!(kmeans_mixed(&pts, 2, &[1.0], 0, 10).is_err());
    }

    #[test]
    fn symmetric_pair_picks_lower_index() {
        let pts = vec![MixedPoint::new(vec![0.0], vec![]), MixedPoint::new(vec![2.0], vec![])];
        let clustering = MixedClustering {
            assignments: vec![0, 0],
            centers: vec![MixedPoint::new(vec![1.0], vec![])],
            iterations: 0,
            costs: vec![],
        };
        assert_eq!(representatives(&clustering, &pts, &[4.0]), vec![0]);
    }

    #[test]
    fn cost_never_increases_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..20 {
            let pts: Vec<MixedPoint> = (0..30)
                .map(|_| MixedPoint::new(vec![rng.random::<f64>(), rng.random::<f64>()], vec![rng.random_range(0..3)]))
                .collect();
            let res = kmeans_mixed(&pts, 4, &[1.0, 1.0], seed, 100).unwrap();
            for w in res.costs.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", res.costs);
            }
            assert_eq!(res, kmeans_mixed(&pts, 4, &[1.0, 1.0], seed, 100).unwrap());
            let reps = representatives(&res, &pts, &[1.0, 1.0]);
            assert!(reps.iter().all(|&i| i < pts.len()));
        }
    }
}
