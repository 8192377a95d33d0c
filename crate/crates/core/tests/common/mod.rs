#![allow(dead_code)]

use kmcsvm::dataset::{Label, Point};
use kmcsvm::seed;
use rand::Rng;

/// Random two-class problem with both labels present.
pub fn random_problem(rng: &mut seed::Rng, n: usize, speed_span: f64) -> (Vec<Point>, Vec<Label>) {
    assert!(n >= 2);
    let points: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random::<f64>() * speed_span, rng.random::<f64>()))
        .collect();
    let mut labels: Vec<Label> = (0..n)
        .map(|_| {
            if rng.random::<bool>() {
                Label::Aggressive
            } else {
                Label::Moderate
            }
        })
        .collect();
    labels[0] = Label::Aggressive;
    labels[1] = Label::Moderate;
    (points, labels)
}

/// Two overlapping Gaussian blobs in raw units, labelled by blob.
pub fn overlapping_blobs(rng: &mut seed::Rng, n: usize) -> (Vec<Point>, Vec<Label>) {
    use rand_distr::{Distribution, Normal};
    let speed = Normal::new(0.0, 12.0).unwrap();
    let throttle = Normal::new(0.0, 0.12).unwrap();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (label, cs, ct) = if i % 2 == 0 {
            (Label::Aggressive, 75.0, 0.7)
        } else {
            (Label::Moderate, 50.0, 0.35)
        };
        let s: f64 = cs + speed.sample(rng);
        let t: f64 = ct + throttle.sample(rng);
        points.push(Point::new(s.clamp(0.0, 140.0), t.clamp(0.0, 1.0)));
        labels.push(label);
    }
    (points, labels)
}

fn gram(points: &[Point], gamma: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| {
                    (-gamma * ((a.speed - b.speed).powi(2) + (a.throttle - b.throttle).powi(2)))
                        .exp()
                })
                .collect()
        })
        .collect()
}

/// Dual objective `sum a - 1/2 a' Q a` with `Q_ij = y_i y_j K_ij`.
pub fn oracle_objective(q: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * q[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 <= a <= c, y'a = 0}`. The residual
/// `y'a(mu)` of `a(mu) = clip(v - mu y, 0, c)` is piecewise linear and
/// non-increasing in `mu`; its root lies between two adjacent breakpoints.
pub fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .map(|(&vi, &yi)| (vi - mu * yi).clamp(0.0, c))
            .collect()
    };
    let residual = |mu: f64| -> f64 { at(mu).iter().zip(y).map(|(ai, yi)| ai * yi).sum() };
    let mut knots: Vec<f64> = v
        .iter()
        .zip(y)
        .flat_map(|(&vi, &yi)| [vi / yi, (vi - c) / yi])
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let values: Vec<f64> = knots.iter().map(|&m| residual(m)).collect();
    if values[0] <= 0.0 {
        return at(knots[0]);
    }
    for w in 0..knots.len() - 1 {
        let (r0, r1) = (values[w], values[w + 1]);
        if r1 <= 0.0 {
            let mu = if r0 == r1 {
                knots[w]
            } else {
                knots[w] + (knots[w + 1] - knots[w]) * r0 / (r0 - r1)
            };
            return at(mu);
        }
    }
    at(*knots.last().unwrap())
}

/// Maximizes the soft-margin dual by accelerated projected gradient with
/// adaptive restart. Independent of the SMO code path.
pub fn qp_oracle(points: &[Point], labels: &[Label], c: f64, gamma: f64) -> (Vec<f64>, f64) {
    let n = points.len();
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let k = gram(points, gamma);
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect())
        .collect();
    // Gershgorin bound on the largest eigenvalue
    let lip = q
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lip;

    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| 1.0 - (0..n).map(|j| q[i][j] * a[j]).sum::<f64>())
            .collect()
    };
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut best = oracle_objective(&q, &x);
    let mut best_x = x.clone();
    let mut since_gain = 0usize;
    for _ in 0..200_000 {
        let g = grad(&z);
        let next = project(
            &z.iter()
                .zip(&g)
                .map(|(zi, gi)| zi + step * gi)
                .collect::<Vec<_>>(),
            &y,
            c,
        );
        let f = oracle_objective(&q, &next);
        if f < oracle_objective(&q, &x) {
            // restart momentum when the objective drops
            t = 1.0;
            z = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        let moved = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        t = t_next;
        let gained = f > best * (1.0 + 1e-15);
        if f > best {
            best = f;
            best_x = x.clone();
        }
        if moved <= 1e-15 * c {
            break;
        }
        if gained {
            since_gain = 0;
        } else {
            since_gain += 1;
            if since_gain > 5_000 {
                break;
            }
        }
    }
    (best_x, best)
}
