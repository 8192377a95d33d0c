//! Exponential (C, gamma) grid and cross-validated grid search.
//!
//! Grid cells are `C = c_base^M` and `gamma = r_base^-(2N+1)`, evaluated by
//! leave-one-subset-out cross-validation over a fixed partition.

use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use crate::dataset::{partition, Dataset, PartitionMode, SubsetPartition};
use crate::error::{Error, Result};
use crate::kmeans::{cluster_per_label, KMeansConfig, KRule};
use crate::par::Execution;
use crate::seed;
use crate::svm::{train_smo, TrainConfig};

pub const GRID_MAGIC: &str = "#kmcsvm-grid v1";

/// Integer arithmetic sequence `start, start + step, ..., <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntRange {
    pub start: i32,
    pub end: i32,
    pub step: i32,
}

impl IntRange {
    pub fn new(start: i32, end: i32, step: i32) -> Result<Self> {
        if step < 1 || end < start {
            return Err(Error::invalid(format!("bad range {start}:{end}:{step}")));
        }
        Ok(IntRange { start, end, step })
    }

    pub fn values(&self) -> Vec<i32> {
        (self.start..=self.end)
            .step_by(self.step as usize)
            .collect()
    }

    /// Parses `start:end[:step]`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.trim()
                .parse::<i32>()
                .map_err(|_| Error::invalid(format!("bad range `{s}`")))
        };
        match parts.as_slice() {
            [a, b] => IntRange::new(num(a)?, num(b)?, 1),
            [a, b, c] => IntRange::new(num(a)?, num(b)?, num(c)?),
            _ => Err(Error::invalid(format!(
                "bad range `{s}`, expected start:end[:step]"
            ))),
        }
    }
}

impl From<RangeInclusive<i32>> for IntRange {
    fn from(r: RangeInclusive<i32>) -> Self {
        IntRange {
            start: *r.start(),
            end: *r.end(),
            step: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub c_base: f64,
    pub r_base: f64,
    pub m_range: IntRange,
    pub n_range: IntRange,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c_base: 2.0,
            r_base: 2.0,
            m_range: (-5..=10).into(),
            n_range: (-5..=10).into(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_base > 1.0) || !(self.r_base > 1.0) {
            return Err(Error::invalid("grid bases must exceed 1"));
        }
        IntRange::new(self.m_range.start, self.m_range.end, self.m_range.step)?;
        IntRange::new(self.n_range.start, self.n_range.end, self.n_range.step)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub m: i32,
    pub n: i32,
    pub c: f64,
    pub gamma: f64,
}

/// All cells, M-major then N.
pub fn make_grid(spec: &GridSpec) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for m in spec.m_range.values() {
        for n in spec.n_range.values() {
            cells.push(GridCell {
                m,
                n,
                c: spec.c_base.powi(m),
                gamma: spec.r_base.powi(-(2 * n + 1)),
            });
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub kkt_tol: f64,
    pub kmeans: KMeansConfig,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            kkt_tol: 1e-3,
            kmeans: KMeansConfig {
                exec: Execution::Sequential,
                ..KMeansConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvScore {
    /// Mean held-out accuracy over the folds that ran.
    pub mean: f64,
    pub folds_run: usize,
    /// Folds whose training remainder lacked a class.
    pub folds_skipped: usize,
    /// Folds whose SMO run stopped early; scored with the best iterate.
    pub folds_unconverged: usize,
}

/// Leave-one-subset-out accuracy for one (C, gamma). Each fold trains on the
/// other `z - 1` subsets (optionally reduced per label by k-means) and scores
/// raw held-out samples. Fold seeds depend on the fold's members, not its
/// index, so relabelling subsets does not change the result.
pub fn cv_score(
    data: &Dataset,
    c: f64,
    gamma: f64,
    part: &SubsetPartition,
    cluster_rule: Option<KRule>,
    seed: u64,
    opts: &CvOptions,
) -> Result<CvScore> {
    if part.assignments.len() != data.len() {
        return Err(Error::invalid("partition does not cover the dataset"));
    }
    let mut cfg = TrainConfig::new(c, gamma)?.with_kkt_tol(opts.kkt_tol);
    cfg.exec = Execution::Sequential;

    let mut accuracies = Vec::with_capacity(part.z);
    let mut skipped = 0;
    let mut unconverged = 0;
    for held_out in part.subsets() {
        let Some(&first) = held_out.first() else {
            continue;
        };
        let fold_seed = seed::derive(seed, first as u64);
        let train = data.subset(&part.training_indices(part.assignments[first]));
        if train.require_both_classes().is_err() {
            skipped += 1;
            continue;
        }

        let (points, labels) = match cluster_rule {
            Some(rule) => {
                let (agg, moderate) = cluster_per_label(&train, rule, fold_seed, &opts.kmeans)?;
                let mut reduced = agg.to_dataset();
                reduced.extend(&moderate.to_dataset());
                (reduced.points(), reduced.labels())
            }
            None => (train.points(), train.labels()),
        };
        let model = match train_smo(&points, &labels, &cfg, seed::derive(fold_seed, 1)) {
            Ok(m) => m,
            Err(Error::NotConverged { model, .. }) => {
                unconverged += 1;
                *model
            }
            Err(e) => return Err(e),
        };
        let correct = held_out
            .iter()
            .filter(|&&i| model.predict(&data.samples[i].point()) == data.samples[i].label)
            .count();
        accuracies.push(correct as f64 / held_out.len() as f64);
    }
    if accuracies.is_empty() {
        return Err(Error::AllFoldsDegenerate);
    }
    // fixed summation order keeps the mean independent of subset numbering
    accuracies.sort_by(f64::total_cmp);
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(CvScore {
        mean,
        folds_run: accuracies.len(),
        folds_skipped: skipped,
        folds_unconverged: unconverged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridOptions {
    pub mode: PartitionMode,
    pub cv: CvOptions,
    pub exec: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridScore {
    pub cell: GridCell,
    /// `None` when every fold of this cell was degenerate.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub scores: Vec<GridScore>,
    pub best: GridCell,
    pub best_c: f64,
    pub best_gamma: f64,
    pub best_score: f64,
}

/// Cross-validated search over every grid cell. Ties on score go to the
/// smallest C, then the largest gamma.
pub fn grid_search(
    data: &Dataset,
    spec: &GridSpec,
    z: usize,
    cluster_rule: Option<KRule>,
    seed: u64,
    opts: &GridOptions,
) -> Result<GridResult> {
    spec.validate()?;
    let part = partition(data, z, seed, opts.mode)?;
    grid_search_with(data, spec, &part, cluster_rule, seed, opts)
}

/// [`grid_search`] over a caller-supplied partition.
pub fn grid_search_with(
    data: &Dataset,
    spec: &GridSpec,
    part: &SubsetPartition,
    cluster_rule: Option<KRule>,
    seed: u64,
    opts: &GridOptions,
) -> Result<GridResult> {
    spec.validate()?;
    let cells = make_grid(spec);
    let indexed: Vec<(usize, GridCell)> = cells.into_iter().enumerate().collect();
    let results = opts.exec.map(&indexed, |&(idx, cell)| {
        let cell_seed = seed::derive(seed, idx as u64);
        cv_score(
            data,
            cell.c,
            cell.gamma,
            part,
            cluster_rule,
            cell_seed,
            &opts.cv,
        )
    });

    let mut scores = Vec::with_capacity(results.len());
    let mut first_error = None;
    for ((_, cell), res) in indexed.iter().zip(results) {
        match res {
            Ok(s) => scores.push(GridScore {
                cell: *cell,
                score: Some(s.mean),
            }),
            Err(e) => {
                first_error.get_or_insert(e);
                scores.push(GridScore {
                    cell: *cell,
                    score: None,
                });
            }
        }
    }

    let best = scores
        .iter()
        .filter_map(|s| s.score.map(|v| (s.cell, v)))
        .reduce(|a, b| if better(b, a) { b } else { a });
    match best {
        Some((cell, score)) => Ok(GridResult {
            scores,
            best: cell,
            best_c: cell.c,
            best_gamma: cell.gamma,
            best_score: score,
        }),
        None => Err(first_error.unwrap_or(Error::AllFoldsDegenerate)),
    }
}

fn better(a: (GridCell, f64), b: (GridCell, f64)) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    if a.0.c != b.0.c {
        return a.0.c < b.0.c;
    }
    a.0.gamma > b.0.gamma
}

/// TSV with columns `M N C gamma score`; failed cells have an empty score.
pub fn write_grid_tsv<W: Write>(result: &GridResult, mut out: W) -> Result<()> {
    writeln!(out, "{GRID_MAGIC}")?;
    writeln!(out, "M\tN\tC\tgamma\tscore")?;
    for s in &result.scores {
        let score = s.score.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            s.cell.m, s.cell.n, s.cell.c, s.cell.gamma, score
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_grid_tsv(result: &GridResult, path: impl AsRef<Path>) -> Result<()> {
    crate::report::write_atomic(path.as_ref(), |w| write_grid_tsv(result, w))
}

/// Reads the score map back (best cell recomputed with the same tie rule).
pub fn read_grid_tsv<R: BufRead>(reader: R) -> Result<GridResult> {
    let mut lines = reader.lines();
    let magic = lines.next().transpose()?.unwrap_or_default();
    if magic.trim_end() != GRID_MAGIC {
        if magic.starts_with("#kmcsvm-grid") {
            return Err(Error::Format(format!(
                "unsupported grid version `{}`",
                magic.trim_end()
            )));
        }
        return Err(Error::Format("not a kmcsvm grid file".into()));
    }
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != "M\tN\tC\tgamma\tscore" {
        return Err(Error::Format("bad grid header".into()));
    }
    let mut scores = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("grid line {}: malformed", i + 3));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let cell = GridCell {
            m: f[0].parse().map_err(|_| bad())?,
            n: f[1].parse().map_err(|_| bad())?,
            c: f[2].parse().map_err(|_| bad())?,
            gamma: f[3].parse().map_err(|_| bad())?,
        };
        let score = if f[4].is_empty() {
            None
        } else {
            Some(f[4].parse().map_err(|_| bad())?)
        };
        scores.push(GridScore { cell, score });
    }
    let (best, best_score) = scores
        .iter()
        .filter_map(|s| s.score.map(|v| (s.cell, v)))
        .reduce(|a, b| if better(b, a) { b } else { a })
        .ok_or_else(|| Error::Format("grid file has no scored cells".into()))?;
    Ok(GridResult {
        scores,
        best,
        best_c: best.c,
        best_gamma: best.gamma,
        best_score,
    })
}
