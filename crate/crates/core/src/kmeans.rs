//! Lloyd k-means over (speed, throttle) points, run separately per label so
//! every centroid inherits the label of all of its members.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::dataset::{Dataset, Label, Point};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::seed;

/// How many clusters to form for a class of `n` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KRule {
    SqrtNOver3,
    SqrtNOver2,
    Explicit(usize),
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::SqrtNOver3 => f.write_str("sqrt-n-over-3"),
            KRule::SqrtNOver2 => f.write_str("sqrt-n-over-2"),
            KRule::Explicit(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt-n-over-3" => Ok(KRule::SqrtNOver3),
            "sqrt-n-over-2" => Ok(KRule::SqrtNOver2),
            other => other
                .parse::<usize>()
                .map(KRule::Explicit)
                .map_err(|_| Error::invalid(format!("unknown k rule `{other}`"))),
        }
    }
}

/// K for `n` samples: `round(sqrt(n/3))`, `round(sqrt(n/2))` or the explicit
/// value, clamped to `[1, n/2]`.
pub fn choose_k(n: usize, rule: KRule) -> Result<usize> {
    if n < 2 {
        return Err(Error::invalid(format!("choose_k needs n >= 2, got {n}")));
    }
    let raw = match rule {
        KRule::SqrtNOver3 => (n as f64 / 3.0).sqrt().round() as usize,
        KRule::SqrtNOver2 => (n as f64 / 2.0).sqrt().round() as usize,
        KRule::Explicit(k) => k,
    };
    Ok(raw.clamp(1, n / 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    PlusPlus,
    /// K distinct input points chosen uniformly.
    RandomPoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once no centroid moves more than this (raw feature units).
    pub tol: f64,
    pub init: Init,
    pub exec: Execution,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            tol: 1e-6,
            init: Init::PlusPlus,
            exec: Execution::default(),
        }
    }
}

/// Full output of one Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Point>,
    pub member_counts: Vec<usize>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    /// Objective after each iteration; non-increasing.
    pub inertia_history: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn into_cluster_set(self, label: Label) -> ClusterSet {
        ClusterSet {
            centroids: self.centroids,
            label,
            member_counts: self.member_counts,
            inertia: self.inertia,
        }
    }
}

/// Centroids of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub centroids: Vec<Point>,
    pub label: Label,
    pub member_counts: Vec<usize>,
    pub inertia: f64,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Centroids as labelled samples, e.g. for `save_csv`. Centroids are means
    /// of valid samples, so they satisfy the sample invariants.
    pub fn to_dataset(&self) -> Dataset {
        let samples = self
            .centroids
            .iter()
            .map(|c| crate::dataset::Sample {
                speed: c.speed,
                throttle: c.throttle,
                label: self.label,
            })
            .collect();
        Dataset::new(samples)
    }
}

/// Index of the nearest centroid and the squared distance to it. Ties go to
/// the lowest index.
#[inline]
fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = p.dist2(c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn init_plus_plus(points: &[Point], k: usize, rng: &mut seed::Rng) -> Vec<Point> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist2(&centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // guard against landing on a zero-weight tail after rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist2(&c));
        }
    }
    centroids
}

fn init_random(points: &[Point], k: usize, rng: &mut seed::Rng) -> Vec<Point> {
    rand::seq::index::sample(rng, points.len(), k)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// Lloyd's algorithm. Empty clusters are refilled with the point farthest
/// from its own centroid (taken from a cluster with at least two members),
/// so the result always has exactly `k` non-empty clusters.
pub fn lloyd(points: &[Point], k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = points.len();
    if k < 1 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {n} available points"
        )));
    }
    if cfg.max_iter < 1 {
        return Err(Error::invalid("k-means needs max_iter >= 1"));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::invalid("k-means tolerance must be >= 0"));
    }

    let mut rng = seed::rng(seed);
    let mut centroids = match cfg.init {
        Init::PlusPlus => init_plus_plus(points, k, &mut rng),
        Init::RandomPoints => init_random(points, k, &mut rng),
    };

    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut counts = vec![0usize; k];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;

        let nearest_all = cfg.exec.map(points, |p| nearest(p, &centroids));
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, (j, d)) in nearest_all.into_iter().enumerate() {
            assignments[i] = j;
            dists[i] = d;
            counts[j] += 1;
        }

        repair_empty(
            points,
            &mut centroids,
            &mut assignments,
            &mut dists,
            &mut counts,
        );

        let mut sums = vec![(0.0f64, 0.0f64); k];
        for (p, &j) in points.iter().zip(&assignments) {
            sums[j].0 += p.speed;
            sums[j].1 += p.throttle;
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            let m = counts[j] as f64;
            let updated = Point::new(sums[j].0 / m, sums[j].1 / m);
            shift = shift.max(updated.dist2(&centroids[j]).sqrt());
            centroids[j] = updated;
        }

        let inertia = objective(points, &centroids, &assignments);
        history.push(inertia);

        if shift < cfg.tol {
            break;
        }
    }

    let inertia = *history.last().expect("at least one iteration");
    Ok(KMeansFit {
        centroids,
        member_counts: counts,
        assignments,
        inertia_history: history,
        inertia,
        iterations,
    })
}

fn repair_empty(
    points: &[Point],
    centroids: &mut [Point],
    assignments: &mut [usize],
    dists: &mut [f64],
    counts: &mut [usize],
) {
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        // k <= n guarantees some cluster holds two or more points
        let donor = (0..points.len())
            .filter(|&i| counts[assignments[i]] >= 2)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("a cluster with at least two members exists");
        counts[assignments[donor]] -= 1;
        assignments[donor] = empty;
        counts[empty] = 1;
        centroids[empty] = points[donor];
        dists[donor] = 0.0;
    }
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn objective(points: &[Point], centroids: &[Point], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &j)| p.dist2(&centroids[j]))
        .sum()
}

/// Runs [`lloyd`] independently on each class, with K chosen from that
/// class's own size. Returns `(aggressive, moderate)`.
pub fn cluster_per_label(
    ds: &Dataset,
    rule: KRule,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<(ClusterSet, ClusterSet)> {
    ds.require_both_classes()?;
    let run = |label: Label, stream: u64| -> Result<ClusterSet> {
        let pts = ds.class_points(label);
        // a single-sample class cannot be split further
        let k = if pts.len() < 2 {
            1
        } else {
            choose_k(pts.len(), rule)?
        };
        let fit = lloyd(&pts, k, seed::derive(seed, stream), cfg)?;
        Ok(fit.into_cluster_set(label))
    };
    let (agg, moderate) = cfg
        .exec
        .join(|| run(Label::Aggressive, 1), || run(Label::Moderate, 2));
    Ok((agg?, moderate?))
}
