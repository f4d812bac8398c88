//! NSGA-II for mixed continuous-categorical designs.
//!
//! Continuous variables use SBX crossover and polynomial mutation, categorical
//! ones one-point crossover and uniform mutation to a different level.
//! Constraints are handled by constrained dominance. Every offspring pair
//! draws from its own counter-based stream, so results do not depend on
//! scheduling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{hypervolume_2d, Front2D};
use crate::problem::{check_feasible, DesignSpace, MixedPoint, ProblemSpec};
use crate::sampling::{domain, lhs_sample, stream_rng, LhsOptimization};

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strict |= x < y;
    }
    strict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub point: MixedPoint,
    pub objectives: Vec<f64>,
    /// `max(g_j, 0)` per constraint.
    pub violations: Vec<f64>,
    /// One-based front index.
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(point: MixedPoint, objectives: Vec<f64>, violations: Vec<f64>) -> Self {
        Self {
            point,
            objectives,
            violations,
            rank: 0,
            crowding: 0.0,
        }
    }

    pub fn total_violation(&self) -> f64 {
        self.violations.iter().sum()
    }

    pub fn is_feasible(&self) -> bool {
        self.violations.iter().all(|v| *v <= 0.0)
    }
}

/// Feasible beats infeasible, infeasible ones compare by total violation and
/// feasible ones by Pareto dominance.
pub fn constrained_dominates(a: &Individual, b: &Individual) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, true) => dominates(&a.objectives, &b.objectives),
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.total_violation() < b.total_violation(),
    }
}

/// Fast non-dominated sorting. Returns the fronts as index lists, best first,
/// each in ascending index order.
pub fn nondominated_sort(pop: &[Individual]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if constrained_dominates(&pop[i], &pop[j]) {
                dominated_by[i].push(j);
                count[j] += 1;
            } else if constrained_dominates(&pop[j], &pop[i]) {
                dominated_by[j].push(i);
                count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::take(&mut current));
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front.
pub fn crowding_distance(objectives: &[&[f64]]) -> Vec<f64> {
    let n = objectives.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    let m = objectives[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|&a, &b| objectives[a][k].total_cmp(&objectives[b][k]).then(a.cmp(&b)));
        let (lo, hi) = (objectives[order[0]][k], objectives[order[n - 1]][k]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            let i = order[w];
            dist[i] += (objectives[order[w + 1]][k] - objectives[order[w - 1]][k]) / range;
        }
    }
    dist
}

/// SBX on two continuous parts. Identical coordinates are left alone.
pub fn sbx_crossover(
    p1: &[f64],
    p2: &[f64],
    eta: f64,
    lower: &[f64],
    upper: &[f64],
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    for k in 0..p1.len() {
        if (p1[k] - p2[k]).abs() <= 1e-14 {
            continue;
        }
        let beta = sbx_spread(rng.random::<f64>(), eta);
        c1[k] = (0.5 * ((1.0 + beta) * p1[k] + (1.0 - beta) * p2[k])).clamp(lower[k], upper[k]);
        c2[k] = (0.5 * ((1.0 - beta) * p1[k] + (1.0 + beta) * p2[k])).clamp(lower[k], upper[k]);
    }
    (c1, c2)
}

/// Spread factor of SBX for a uniform draw `u`.
pub fn sbx_spread(u: f64, eta: f64) -> f64 {
    if u <= 0.5 {
        (2.0 * u).powf(1.0 / (eta + 1.0))
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
    }
}

/// Polynomial mutation applied to each coordinate with probability `p`.
pub fn polynomial_mutation(
    x: &mut [f64],
    eta: f64,
    lower: &[f64],
    upper: &[f64],
    p: f64,
    rng: &mut ChaCha8Rng,
) {
    for k in 0..x.len() {
        if rng.random::<f64>() >= p {
            continue;
        }
        let u: f64 = rng.random();
        let delta = if u < 0.5 {
            (2.0 * u).powf(1.0 / (eta + 1.0)) - 1.0
        } else {
            1.0 - (2.0 * (1.0 - u)).powf(1.0 / (eta + 1.0))
        };
        x[k] = (x[k] + delta * (upper[k] - lower[k])).clamp(lower[k], upper[k]);
    }
}

/// One-point crossover at cut `p`: the first `p` genes are kept and the rest
/// swapped.
pub fn onepoint_crossover_cat_at(a: &[usize], b: &[usize], p: usize) -> (Vec<usize>, Vec<usize>) {
    let mut c1 = a[..p].to_vec();
    c1.extend_from_slice(&b[p..]);
    let mut c2 = b[..p].to_vec();
    c2.extend_from_slice(&a[p..]);
    (c1, c2)
}

/// One-point crossover at a random cut `1 <= p < M_cat`.
pub fn onepoint_crossover_cat(a: &[usize], b: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    if a.len() < 2 {
        return (a.to_vec(), b.to_vec());
    }
    let p = rng.random_range(1..a.len());
    onepoint_crossover_cat_at(a, b, p)
}

/// Each gene mutates with probability `p` to a uniformly drawn other level.
pub fn random_mutation_cat(c: &mut [usize], levels: &[usize], p: f64, rng: &mut ChaCha8Rng) {
    for k in 0..c.len() {
        if rng.random::<f64>() >= p || levels[k] < 2 {
            continue;
        }
        let mut v = rng.random_range(0..levels[k] - 1);
        if v >= c[k] {
            v += 1;
        }
        c[k] = v;
    }
}

/// NSGA-II settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub max_generations: usize,
    pub crossover_probability: f64,
    pub eta_c: f64,
    pub eta_m: f64,
    /// Per-variable mutation probability; `None` means `1/M`.
    pub mutation_probability: Option<f64>,
    /// Stop once the relative hypervolume change over this many generations
    /// falls below `convergence_tolerance` (two objectives only). Zero disables.
    pub convergence_window: usize,
    pub convergence_tolerance: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            max_generations: 100,
            crossover_probability: 0.9,
            eta_c: 20.0,
            eta_m: 20.0,
            mutation_probability: None,
            convergence_window: 10,
            convergence_tolerance: 1e-4,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.population % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "population size must be even and at least 2, got {}",
                self.population
            )));
        }
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.crossover_probability) || !self.mutation_probability.is_none_or(prob_ok) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if !(self.eta_c >= 0.0 && self.eta_m >= 0.0) {
            return Err(Error::InvalidConfig("distribution indices must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Hypervolume of the feasible first front, when there are two objectives.
    pub hypervolume: Option<f64>,
    pub feasible_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct NsgaResult {
    pub population: Vec<Individual>,
    /// Distinct designs of the first front (feasible ones only, when any).
    pub front: Vec<Individual>,
    pub generations: usize,
    pub converged: bool,
    pub history: Vec<GenerationStats>,
}

/// Objective map over a batch of designs.
pub type BatchObjective<'a> = dyn Fn(&[MixedPoint]) -> Result<Vec<Vec<f64>>> + Sync + 'a;

/// Space-filling initial population: LHS over the continuous variables and
/// balanced shuffled levels for the categorical ones.
pub fn initial_population(design: &DesignSpace, size: usize, seed: u64) -> Result<Vec<MixedPoint>> {
    let n_con = design.continuous.len();
    let con: Vec<Vec<f64>> = if n_con > 0 {
        lhs_sample(size, n_con, seed, LhsOptimization::None)?
            .points
            .into_iter()
            .map(|u| {
                u.iter()
                    .zip(&design.continuous)
                    .map(|(u, v)| v.lower + u * (v.upper - v.lower))
                    .collect()
            })
            .collect()
    } else {
        vec![Vec::new(); size]
    };
    let mut rng = stream_rng(seed, domain::NSGA, u64::MAX);
    let columns: Vec<Vec<usize>> = design
        .categorical
        .iter()
        .map(|v| {
            let mut col: Vec<usize> = (0..size).map(|i| i % v.count()).collect();
            col.shuffle(&mut rng);
            col
        })
        .collect();
    Ok(con
        .into_iter()
        .enumerate()
        .map(|(i, c)| MixedPoint::new(c, columns.iter().map(|col| col[i]).collect()))
        .collect())
}

fn evaluate_population(
    objective: &BatchObjective,
    spec: &ProblemSpec,
    points: Vec<MixedPoint>,
) -> Result<Vec<Individual>> {
    let values = objective(&points)?;
    if values.len() != points.len() {
        return Err(Error::Degenerate("objective map returned the wrong number of rows".into()));
    }
    Ok(points
        .into_iter()
        .zip(values)
        .map(|(p, v)| {
            let violations = check_feasible(spec, &p).violations;
            Individual::new(p, v, violations)
        })
        .collect())
}

/// Sets rank and crowding in place; returns the fronts.
fn rank_population(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let fronts = nondominated_sort(pop);
    for (r, front) in fronts.iter().enumerate() {
        let objs: Vec<&[f64]> = front.iter().map(|&i| pop[i].objectives.as_slice()).collect();
        let dist = crowding_distance(&objs);
        for (&i, d) in front.iter().zip(dist) {
            pop[i].rank = r + 1;
            pop[i].crowding = d;
        }
    }
    fronts
}

fn better(a: &Individual, b: &Individual) -> bool {
    a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding)
}

fn first_front_hypervolume(pop: &[Individual], reference: Option<[f64; 2]>) -> Option<f64> {
    let r = reference?;
    let any_feasible = pop.iter().any(Individual::is_feasible);
    let pts = pop
        .iter()
        .filter(|i| i.rank == 1 && (i.is_feasible() || !any_feasible))
        .map(|i| [i.objectives[0], i.objectives[1]]);
    Front2D::from_points(pts).ok().map(|f| hypervolume_2d(&f, r))
}

/// Runs NSGA-II on `objective` over the design space of `spec`.
pub fn run_nsga2(objective: &BatchObjective, spec: &ProblemSpec, config: &GaConfig) -> Result<NsgaResult> {
    config.validate()?;
    let design = &spec.design;
    let lower: Vec<f64> = design.continuous.iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = design.continuous.iter().map(|v| v.upper).collect();
    let levels = design.level_counts();
    let m_total = design.n_variables().max(1);
    let p_mut = config.mutation_probability.unwrap_or(1.0 / m_total as f64);
    let l = config.population;

    let start = initial_population(design, l, config.seed)?;
    let mut pop = evaluate_population(objective, spec, start)?;
    rank_population(&mut pop);
    if !pop.iter().any(Individual::is_feasible) {
        log::warn!("no feasible design in the initial population; ranking by violation");
    }

    let reference = (spec.n_objectives == 2).then(|| {
        let pool: Vec<&Individual> = if pop.iter().any(Individual::is_feasible) {
            pop.iter().filter(|i| i.is_feasible()).collect()
        } else {
            pop.iter().collect()
        };
        pool.iter().fold([f64::NEG_INFINITY; 2], |acc, i| {
            [acc[0].max(i.objectives[0]), acc[1].max(i.objectives[1])]
        })
    });
    let stats = |pop: &[Individual], g: usize| GenerationStats {
        generation: g,
        hypervolume: first_front_hypervolume(pop, reference),
        feasible_fraction: pop.iter().filter(|i| i.is_feasible()).count() as f64 / pop.len() as f64,
    };
    let mut history = vec![stats(&pop, 0)];
    let mut converged = false;
    let mut generation = 0;

    while generation < config.max_generations {
        generation += 1;
        let offspring: Vec<MixedPoint> = (0..l / 2)
            .into_par_iter()
            .flat_map_iter(|pair| {
                let index = ((generation as u64) << 32) | pair as u64;
                let mut rng = stream_rng(config.seed, domain::NSGA, index);
                let pick = |rng: &mut ChaCha8Rng| {
                    let (i, j) = (rng.random_range(0..l), rng.random_range(0..l));
                    if better(&pop[j], &pop[i]) {
                        j
                    } else {
                        i
                    }
                };
                let a = pick(&mut rng);
                let b = pick(&mut rng);
                let (pa, pb) = (&pop[a].point, &pop[b].point);
                let (mut c1, mut c2, mut k1, mut k2);
                if rng.random::<f64>() < config.crossover_probability {
                    (c1, c2) = sbx_crossover(&pa.con, &pb.con, config.eta_c, &lower, &upper, &mut rng);
                    (k1, k2) = onepoint_crossover_cat(&pa.cat, &pb.cat, &mut rng);
                } else {
                    (c1, c2) = (pa.con.clone(), pb.con.clone());
                    (k1, k2) = (pa.cat.clone(), pb.cat.clone());
                }
                polynomial_mutation(&mut c1, config.eta_m, &lower, &upper, p_mut, &mut rng);
                random_mutation_cat(&mut k1, &levels, p_mut, &mut rng);
                polynomial_mutation(&mut c2, config.eta_m, &lower, &upper, p_mut, &mut rng);
                random_mutation_cat(&mut k2, &levels, p_mut, &mut rng);
                [MixedPoint::new(c1, k1), MixedPoint::new(c2, k2)]
            })
            .collect();
        let children = evaluate_population(objective, spec, offspring)?;

        let mut merged = pop;
        merged.extend(children);
        let fronts = rank_population(&mut merged);
        let mut keep: Vec<usize> = Vec::with_capacity(l);
        for front in fronts {
            if keep.len() + front.len() <= l {
                keep.extend(front);
            } else {
                let mut last = front;
                last.sort_by(|&a, &b| merged[b].crowding.total_cmp(&merged[a].crowding).then(a.cmp(&b)));
                keep.extend(&last[..l - keep.len()]);
            }
            if keep.len() == l {
                break;
            }
        }
        keep.sort_unstable();
        let mut slots: Vec<Option<Individual>> = merged.into_iter().map(Some).collect();
        pop = keep.iter().map(|&i| slots[i].take().expect("index kept once")).collect();
        // Crowding is recomputed on the survivors for the next tournament.
        rank_population(&mut pop);
        history.push(stats(&pop, generation));

        let w = config.convergence_window;
        if w > 0 && history.len() > w {
            let now = history[history.len() - 1].hypervolume;
            let before = history[history.len() - 1 - w].hypervolume;
            if let (Some(now), Some(before)) = (now, before) {
                if before > 0.0 && ((now - before) / before).abs() < config.convergence_tolerance {
                    converged = true;
                    break;
                }
            }
        }
    }

    let any_feasible = pop.iter().any(Individual::is_feasible);
    let mut front: Vec<Individual> = Vec::new();
    for ind in pop.iter().filter(|i| i.rank == 1 && (i.is_feasible() || !any_feasible)) {
        if !front.iter().any(|f| f.point.same_bits(&ind.point)) {
            front.push(ind.clone());
        }
    }
    Ok(NsgaResult {
        population: pop,
        front,
        generations: generation,
        converged,
        history,
    })
}
