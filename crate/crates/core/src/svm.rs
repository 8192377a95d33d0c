//! Soft-margin SVM with a Gaussian kernel.
//!
//! The dual
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//! s.t. sum_i a_i y_i = 0,  0 <= a_i <= C
//! ```
//!
//! is solved by SMO: each step picks the maximal violating pair (with the
//! second-order gain used to choose the partner) and solves the two-variable
//! subproblem analytically. The decision function is
//! `g(x) = sum_i a_i y_i K(sv_i, x) + b`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::{Label, Point};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::seed;

pub const MODEL_MAGIC: &str = "kmcsvm-model";
pub const MODEL_VERSION: u32 = 1;

const TAU: f64 = 1e-12;
/// Relative objective decrease that still counts as progress.
const OBJECTIVE_EPS: f64 = 1e-14;
/// Dual coefficients at or below this fraction of C are treated as zero.
const PRUNE_FRACTION: f64 = 1e-8;
/// Use a full Gram matrix up to this many training points.
const FULL_GRAM_LIMIT: usize = 4096;
const DEFAULT_CACHE_BYTES: usize = 256 << 20;

/// Gaussian kernel width parameter, `gamma = 1 / (2 sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
pub struct Gamma(f64);

impl Gamma {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(Gamma(gamma))
        } else {
            Err(Error::invalid(format!(
                "gamma must be a positive finite number, got {gamma}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `exp(-gamma * |a - b|^2)`
#[inline]
pub fn rbf(a: &Point, b: &Point, gamma: Gamma) -> f64 {
    (-gamma.0 * a.dist2(b)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Box constraint.
    pub c: f64,
    pub gamma: Gamma,
    /// Stop once the maximal KKT violation drops below this.
    pub kkt_tol: f64,
    /// Pair updates allowed without a new best violation before giving up.
    /// `None` means `10 * n`.
    pub max_passes: Option<usize>,
    /// Used for computing kernel rows only; the SMO iteration itself is sequential.
    pub exec: Execution,
    /// Kernel row cache budget when the full Gram matrix is not stored.
    pub cache_bytes: usize,
}

impl TrainConfig {
    pub fn new(c: f64, gamma: f64) -> Result<Self> {
        let cfg = TrainConfig {
            c,
            gamma: Gamma::new(gamma)?,
            kkt_tol: 1e-3,
            max_passes: None,
            exec: Execution::default(),
            cache_bytes: DEFAULT_CACHE_BYTES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_kkt_tol(mut self, tol: f64) -> Self {
        self.kkt_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!(
                "C must be positive and finite, got {}",
                self.c
            )));
        }
        Gamma::new(self.gamma.0)?;
        if !(self.kkt_tol > 0.0) {
            return Err(Error::invalid(format!(
                "kkt_tol must be > 0, got {}",
                self.kkt_tol
            )));
        }
        if self.max_passes == Some(0) {
            return Err(Error::invalid("max_passes must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub support_vectors: Vec<Point>,
    pub sv_labels: Vec<Label>,
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub gamma: Gamma,
    pub c: f64,
}

impl SvmModel {
    /// `sum_i a_i y_i K(sv_i, x) + b`
    pub fn decision_value(&self, x: &Point) -> f64 {
        let mut acc = 0.0;
        for ((sv, y), a) in self
            .support_vectors
            .iter()
            .zip(&self.sv_labels)
            .zip(&self.alphas)
        {
            acc += a * y.sign() * rbf(sv, x, self.gamma);
        }
        acc + self.bias
    }

    /// Sign of the decision value; exactly zero maps to aggressive (+1).
    pub fn predict(&self, x: &Point) -> Label {
        label_of(self.decision_value(x))
    }

    pub fn sv_count(&self) -> usize {
        self.support_vectors.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::write_atomic(path.as_ref(), |w| write_model(self, w))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        read_model(std::io::BufReader::new(file))
    }
}

pub fn label_of(decision: f64) -> Label {
    if decision >= 0.0 {
        Label::Aggressive
    } else {
        Label::Moderate
    }
}

/// Solver output beyond the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// One coefficient per training point, pruned values set to zero.
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final maximal KKT violation.
    pub max_violation: f64,
    pub objective: f64,
}

/// Trains on `points`/`labels` and returns the model.
pub fn train_smo(
    points: &[Point],
    labels: &[Label],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SvmModel> {
    solve(points, labels, cfg, seed).map(|(m, _)| m)
}

/// Like [`train_smo`] but also returns the full coefficient vector.
pub fn solve(
    points: &[Point],
    labels: &[Label],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(SvmModel, Solution)> {
    cfg.validate()?;
    if points.len() != labels.len() {
        return Err(Error::invalid("points and labels differ in length"));
    }
    if points.len() < 2 {
        return Err(Error::invalid("SVM training needs at least two points"));
    }
    for label in [Label::Aggressive, Label::Moderate] {
        if !labels.contains(&label) {
            return Err(Error::MissingClass(label));
        }
    }
    Smo::new(points, labels, cfg, seed).run()
}

enum Kernel<'a> {
    Full(Vec<Rc<[f64]>>),
    Cached(RowCache<'a>),
}

struct RowCache<'a> {
    points: &'a [Point],
    gamma: Gamma,
    exec: Execution,
    capacity: usize,
    rows: HashMap<usize, (Rc<[f64]>, u64)>,
    clock: u64,
}

fn kernel_row(points: &[Point], i: usize, gamma: Gamma, exec: Execution) -> Rc<[f64]> {
    let mut row = vec![0.0; points.len()];
    let xi = points[i];
    exec.fill(&mut row, |t| rbf(&xi, &points[t], gamma));
    row.into()
}

impl<'a> Kernel<'a> {
    fn new(points: &'a [Point], cfg: &TrainConfig) -> Self {
        let n = points.len();
        if n <= FULL_GRAM_LIMIT {
            let rows = cfg.exec.map_range(n, |i| {
                let xi = points[i];
                points
                    .iter()
                    .map(|p| rbf(&xi, p, cfg.gamma))
                    .collect::<Vec<_>>()
            });
            Kernel::Full(rows.into_iter().map(Rc::from).collect())
        } else {
            let capacity = (cfg.cache_bytes / (8 * n)).max(2);
            Kernel::Cached(RowCache {
                points,
                gamma: cfg.gamma,
                exec: cfg.exec,
                capacity,
                rows: HashMap::with_capacity(capacity),
                clock: 0,
            })
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        match self {
            Kernel::Full(rows) => Rc::clone(&rows[i]),
            Kernel::Cached(cache) => {
                cache.clock += 1;
                let now = cache.clock;
                if let Some((row, stamp)) = cache.rows.get_mut(&i) {
                    *stamp = now;
                    return Rc::clone(row);
                }
                if cache.rows.len() >= cache.capacity {
                    let oldest = cache
                        .rows
                        .iter()
                        .min_by_key(|(_, (_, stamp))| *stamp)
                        .map(|(&k, _)| k)
                        .expect("cache is non-empty");
                    cache.rows.remove(&oldest);
                }
                let row = kernel_row(cache.points, i, cache.gamma, cache.exec);
                cache.rows.insert(i, (Rc::clone(&row), now));
                row
            }
        }
    }
}

struct Smo<'a> {
    points: &'a [Point],
    y: Vec<f64>,
    c: f64,
    cfg: TrainConfig,
    kernel: Kernel<'a>,
    alpha: Vec<f64>,
    /// Gradient of the minimization form `1/2 a'Qa - e'a`.
    grad: Vec<f64>,
    order: Vec<usize>,
    rng: seed::Rng,
}

/// Outcome of working-set selection.
enum Selection {
    Optimal { gap: f64 },
    Pair { i: usize, j: usize, gap: f64 },
}

impl<'a> Smo<'a> {
    fn new(points: &'a [Point], labels: &[Label], cfg: &TrainConfig, seed: u64) -> Self {
        let n = points.len();
        let mut rng = seed::rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Smo {
            points,
            y: labels.iter().map(|l| l.sign()).collect(),
            c: cfg.c,
            cfg: *cfg,
            kernel: Kernel::new(points, cfg),
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
            order,
            rng,
        }
    }

    #[inline]
    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] < self.c
        } else {
            self.alpha[t] > 0.0
        }
    }

    #[inline]
    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    /// Maximal violating index `i` from the up-set, and the partner `j` from
    /// the low-set maximizing the second-order decrease of the objective.
    fn select(&mut self) -> Selection {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for &t in &self.order {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            return Selection::Optimal { gap: 0.0 };
        }

        let row_i = self.kernel.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j = usize::MAX;
        for &t in &self.order {
            if !self.in_low(t) {
                continue;
            }
            let v = self.y[t] * self.grad[t];
            if v >= gmax2 {
                gmax2 = v;
            }
            let diff = gmax + v;
            if diff > 0.0 {
                // K(t, t) = 1 for the Gaussian kernel
                let quad = 2.0 - 2.0 * row_i[t];
                let quad = if quad > 0.0 { quad } else { TAU };
                let gain = -(diff * diff) / quad;
                if gain <= best {
                    best = gain;
                    j = t;
                }
            }
        }
        let gap = gmax + gmax2;
        if gap < self.cfg.kkt_tol || j == usize::MAX {
            Selection::Optimal { gap: gap.max(0.0) }
        } else {
            Selection::Pair { i, j, gap }
        }
    }

    /// Analytic two-variable step; returns the change of the minimized dual
    /// objective, `None` when neither coefficient moved.
    fn update(&mut self, i: usize, j: usize) -> Option<f64> {
        let c = self.c;
        let row_i = self.kernel.row(i);
        let row_j = self.kernel.row(j);
        let kij = row_i[j];
        let (old_ai, old_aj) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_ai, old_aj);
        let quad = {
            let q = 2.0 - 2.0 * kij;
            if q > 0.0 {
                q
            } else {
                TAU
            }
        };

        if self.y[i] != self.y[j] {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }

        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let dai = ai - old_ai;
        let daj = aj - old_aj;
        if dai == 0.0 && daj == 0.0 {
            return None;
        }
        let (yi, yj) = (self.y[i], self.y[j]);
        let change = self.grad[i] * dai
            + self.grad[j] * daj
            + 0.5 * (dai * dai + daj * daj)
            + yi * yj * kij * dai * daj;
        for t in 0..self.grad.len() {
            self.grad[t] += self.y[t] * (yi * row_i[t] * dai + yj * row_j[t] * daj);
        }
        Some(change)
    }

    /// A violating low-set partner for `i` other than the greedy choice.
    fn random_partner(&mut self, i: usize, skip: usize) -> Option<usize> {
        let gmax = -self.y[i] * self.grad[i];
        let candidates: Vec<usize> = (0..self.alpha.len())
            .filter(|&t| {
                t != skip && t != i && self.in_low(t) && gmax + self.y[t] * self.grad[t] > 0.0
            })
            .collect();
        if candidates.is_empty() {
            None
        } else {
            Some(candidates[self.rng.random_range(0..candidates.len())])
        }
    }

    fn run(mut self) -> Result<(SvmModel, Solution)> {
        let n = self.alpha.len();
        let max_stall = self.cfg.max_passes.unwrap_or(10 * n);
        let mut best_gap = f64::INFINITY;
        let mut objective = 0.0f64;
        let mut stall = 0usize;
        let mut iterations = 0usize;

        // Progress is a new smallest violation or a decrease of the objective
        // beyond round-off; the violation alone is not monotone.
        let converged_gap = loop {
            let (i, j, gap) = match self.select() {
                Selection::Optimal { gap } => break Some(gap),
                Selection::Pair { i, j, gap } => (i, j, gap),
            };
            iterations += 1;
            let mut change = self.update(i, j);
            if change.is_none() {
                if let Some(alt) = self.random_partner(i, j) {
                    change = self.update(i, alt);
                }
            }
            let change = change.unwrap_or(0.0);
            objective += change;
            let decreased = change < -OBJECTIVE_EPS * objective.abs().max(1.0);
            if gap < best_gap || decreased {
                best_gap = best_gap.min(gap);
                stall = 0;
            } else {
                stall += 1;
                if stall > max_stall {
                    break None;
                }
            }
        };

        let gap = converged_gap.unwrap_or_else(|| self.current_gap());
        let (model, solution) = self.finish(iterations, gap);
        match converged_gap {
            Some(_) => Ok((model, solution)),
            None => Err(Error::NotConverged {
                model: Box::new(model),
                max_violation: gap,
                iterations,
            }),
        }
    }

    fn current_gap(&self) -> f64 {
        let n = self.alpha.len();
        let up = (0..n)
            .filter(|&t| self.in_up(t))
            .map(|t| -self.y[t] * self.grad[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let low = (0..n)
            .filter(|&t| self.in_low(t))
            .map(|t| self.y[t] * self.grad[t])
            .fold(f64::NEG_INFINITY, f64::max);
        (up + low).max(0.0)
    }

    fn bias(&self) -> f64 {
        let n = self.alpha.len();
        let mut sum = 0.0;
        let mut free = 0usize;
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::INFINITY;
        for t in 0..n {
            let f = -self.y[t] * self.grad[t];
            let a = self.alpha[t];
            if a > 0.0 && a < self.c {
                sum += f;
                free += 1;
            } else {
                if self.in_up(t) {
                    lower = lower.max(f);
                }
                if self.in_low(t) {
                    upper = upper.min(f);
                }
            }
        }
        if free > 0 {
            sum / free as f64
        } else {
            (lower + upper) / 2.0
        }
    }

    fn finish(&self, iterations: usize, max_violation: f64) -> (SvmModel, Solution) {
        let bias = self.bias();
        let threshold = PRUNE_FRACTION * self.c;
        let alphas: Vec<f64> = self
            .alpha
            .iter()
            .map(|&a| if a <= threshold { 0.0 } else { a })
            .collect();

        let mut objective = 0.0;
        for t in 0..alphas.len() {
            objective += 0.5 * self.alpha[t] * (1.0 - self.grad[t]);
        }

        let mut model = SvmModel {
            support_vectors: Vec::new(),
            sv_labels: Vec::new(),
            alphas: Vec::new(),
            bias,
            gamma: self.cfg.gamma,
            c: self.c,
        };
        for (t, &a) in alphas.iter().enumerate() {
            if a > 0.0 {
                model.support_vectors.push(self.points[t]);
                model.sv_labels.push(if self.y[t] > 0.0 {
                    Label::Aggressive
                } else {
                    Label::Moderate
                });
                model.alphas.push(a);
            }
        }
        (
            model,
            Solution {
                alphas,
                bias,
                iterations,
                max_violation,
                objective,
            },
        )
    }
}

/// Dual objective `sum a - 1/2 a'Qa`, computed directly from the kernel.
pub fn dual_objective(points: &[Point], labels: &[Label], alphas: &[f64], gamma: Gamma) -> f64 {
    let n = points.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alphas[i]
                * alphas[j]
                * labels[i].sign()
                * labels[j].sign()
                * rbf(&points[i], &points[j], gamma);
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// Largest amount by which any training point misses its condition.
    pub max_violation: f64,
    /// Points missing their condition by more than the tolerance.
    pub failures: usize,
}

/// Checks the optimality conditions on every training point using the
/// model's own decision function:
/// `a = 0 => y g >= 1 - tol`, `0 < a < C => |y g - 1| <= tol`,
/// `a = C => y g <= 1 + tol`.
pub fn kkt_check(
    model: &SvmModel,
    points: &[Point],
    labels: &[Label],
    alphas: &[f64],
    tol: f64,
) -> KktReport {
    let mut report = KktReport::default();
    for ((p, y), &a) in points.iter().zip(labels).zip(alphas) {
        let margin = y.sign() * model.decision_value(p);
        let miss = if a <= 0.0 {
            (1.0 - margin).max(0.0)
        } else if a >= model.c {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        report.max_violation = report.max_violation.max(miss);
        if miss > tol {
            report.failures += 1;
        }
    }
    report
}

/// Writes the `kmcsvm-model v1` text format. Numbers carry 17 significant
/// digits, which round-trips every `f64`.
pub fn write_model<W: Write>(model: &SvmModel, mut out: W) -> Result<()> {
    writeln!(out, "{MODEL_MAGIC} v{MODEL_VERSION}")?;
    writeln!(out, "gamma {:.16e}", model.gamma.value())?;
    writeln!(out, "C {:.16e}", model.c)?;
    writeln!(out, "bias {:.16e}", model.bias)?;
    writeln!(out, "support_vectors {}", model.sv_count())?;
    for ((sv, y), a) in model
        .support_vectors
        .iter()
        .zip(&model.sv_labels)
        .zip(&model.alphas)
    {
        writeln!(
            out,
            "{:.16e} {:.16e} {} {:.16e}",
            sv.speed,
            sv.throttle,
            y.as_i8(),
            a
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model<R: BufRead>(reader: R) -> Result<SvmModel> {
    let mut lines = reader.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, line)) => Ok((i + 1, line?.trim_end().to_string())),
            None => Err(Error::Format(format!("model file ends before {what}"))),
        }
    };
    let bad = |line: usize, what: &str| Error::Format(format!("model line {line}: {what}"));

    let (ln, magic) = next("header")?;
    let version = magic
        .strip_prefix(MODEL_MAGIC)
        .and_then(|rest| rest.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| bad(ln, "not a kmcsvm model"))?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version v{version}"
        )));
    }

    let mut field = |key: &str| -> Result<f64> {
        let (ln, line) = next(key)?;
        line.strip_prefix(key)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| bad(ln, &format!("expected `{key} <value>`")))
    };
    let gamma = Gamma::new(field("gamma")?)?;
    let c = field("C")?;
    let bias = field("bias")?;
    let count = field("support_vectors")?;
    if count.fract() != 0.0 || count < 1.0 {
        return Err(Error::Format(
            "support vector count must be a positive integer".into(),
        ));
    }

    let mut model = SvmModel {
        support_vectors: Vec::new(),
        sv_labels: Vec::new(),
        alphas: Vec::new(),
        bias,
        gamma,
        c,
    };
    for _ in 0..count as usize {
        let (ln, line) = next("support vector")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad(ln, "expected `speed throttle label alpha`"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(ln, &format!("bad number `{s}`")))
        };
        let label = fields[2]
            .parse::<i64>()
            .ok()
            .and_then(Label::from_sign)
            .ok_or_else(|| bad(ln, "label must be 1 or -1"))?;
        model
            .support_vectors
            .push(Point::new(num(fields[0])?, num(fields[1])?));
        model.sv_labels.push(label);
        model.alphas.push(num(fields[3])?);
    }
    Ok(model)
}
