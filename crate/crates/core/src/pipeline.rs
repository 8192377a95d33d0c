//! kMC-SVM end to end: per-label k-means reduction, SVM training on the
//! centroids, per-class evaluation, and the timing comparison against an SVM
//! trained on raw samples.

use std::hash::{Hash, Hasher};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, Point};
use crate::error::{Error, Result};
use crate::kmeans::{cluster_per_label, ClusterSet, KMeansConfig, KRule};
use crate::seed;
use crate::svm::{train_smo, SvmModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Offline,
    Online,
}

/// Correct/total counts per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub cor_agg: u64,
    pub all_agg: u64,
    pub cor_mod: u64,
    pub all_mod: u64,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        let hit = u64::from(truth == predicted);
        match truth {
            Label::Aggressive => {
                self.all_agg += 1;
                self.cor_agg += hit;
            }
            Label::Moderate => {
                self.all_mod += 1;
                self.cor_mod += hit;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.all_agg + self.all_mod
    }
}

/// Per-class recognition accuracy, `lambda = K_cor / K_all`. A class with no
/// evaluated points has no accuracy (`None`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub lambda_agg: Option<f64>,
    pub lambda_mod: Option<f64>,
    pub counts: Confusion,
}

impl EvalReport {
    pub fn from_counts(mode: EvalMode, counts: Confusion) -> Self {
        let ratio = |cor: u64, all: u64| (all > 0).then(|| cor as f64 / all as f64);
        EvalReport {
            mode,
            lambda_agg: ratio(counts.cor_agg, counts.all_agg),
            lambda_mod: ratio(counts.cor_mod, counts.all_mod),
            counts,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.counts.total();
        (total > 0).then(|| (self.counts.cor_agg + self.counts.cor_mod) as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    /// Window span in seconds.
    pub tau: f64,
    /// Samples per second.
    pub sample_rate: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            tau: 1.4,
            sample_rate: 50.0,
        }
    }
}

impl WindowConfig {
    /// `round(tau * rate)` samples.
    pub fn window_len(&self) -> Result<usize> {
        if !(self.tau > 0.0) || !(self.sample_rate > 0.0) {
            return Err(Error::invalid("tau and sample rate must be > 0"));
        }
        let len = (self.tau * self.sample_rate).round();
        if len < 1.0 || !len.is_finite() {
            return Err(Error::invalid(format!(
                "window of {}s at {} Hz holds no samples",
                self.tau, self.sample_rate
            )));
        }
        Ok(len as usize)
    }
}

/// Number of whole windows in a stream of `n` samples.
pub fn window_count(n: usize, wc: &WindowConfig) -> Result<usize> {
    Ok(n / wc.window_len()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmcSvmFit {
    pub model: SvmModel,
    pub clusters: (ClusterSet, ClusterSet),
    pub cluster_seconds: f64,
    pub train_seconds: f64,
}

fn centroid_training_set(clusters: &(ClusterSet, ClusterSet)) -> (Vec<Point>, Vec<Label>) {
    let mut points = clusters.0.centroids.clone();
    points.extend_from_slice(&clusters.1.centroids);
    let mut labels = vec![clusters.0.label; clusters.0.len()];
    labels.extend(std::iter::repeat_n(clusters.1.label, clusters.1.len()));
    (points, labels)
}

/// Clusters each class of `train` with `rule`, then trains the SVM on the
/// labelled centroids.
pub fn train_kmc_svm(
    train: &Dataset,
    rule: KRule,
    cfg: &TrainConfig,
    seed: u64,
    kmeans: &KMeansConfig,
) -> Result<KmcSvmFit> {
    let start = Instant::now();
    let clusters = cluster_per_label(train, rule, seed::derive(seed, 10), kmeans)?;
    let cluster_seconds = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let (points, labels) = centroid_training_set(&clusters);
    let model = train_smo(&points, &labels, cfg, seed::derive(seed, 11))?;
    let train_seconds = t.elapsed().as_secs_f64();
    Ok(KmcSvmFit {
        model,
        clusters,
        cluster_seconds,
        train_seconds,
    })
}

/// What counts as one evaluated point offline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// k-means centroids of the test set, per label.
    #[default]
    Centroids,
    /// Every raw test sample.
    Raw,
}

/// Offline evaluation. By default the test set is clustered per label with
/// `rule` and every centroid counts once.
pub fn evaluate_offline(
    model: &SvmModel,
    test: &Dataset,
    rule: KRule,
    seed: u64,
    granularity: Granularity,
    kmeans: &KMeansConfig,
) -> Result<EvalReport> {
    test.require_both_classes()?;
    let mut counts = Confusion::default();
    match granularity {
        Granularity::Centroids => {
            let (agg, moderate) = cluster_per_label(test, rule, seed::derive(seed, 20), kmeans)?;
            for set in [&agg, &moderate] {
                for c in &set.centroids {
                    counts.record(set.label, model.predict(c));
                }
            }
        }
        Granularity::Raw => {
            for s in &test.samples {
                counts.record(s.label, model.predict(&s.point()));
            }
        }
    }
    Ok(EvalReport::from_counts(EvalMode::Offline, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub start: usize,
    pub truth: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineResult {
    pub report: EvalReport,
    pub windows: Vec<WindowPrediction>,
}

/// Online evaluation: the stream is cut into consecutive disjoint windows of
/// `round(tau * rate)` samples (a trailing partial window is dropped), each
/// window is reduced to its mean feature point, and that point is classified.
/// A window's truth is the majority label of its samples, which is the
/// stream label for single-driver streams; exact ties count as aggressive.
pub fn online_evaluate(
    model: &SvmModel,
    stream: &Dataset,
    wc: &WindowConfig,
) -> Result<OnlineResult> {
    let len = wc.window_len()?;
    if stream.len() < len {
        return Err(Error::invalid(format!(
            "stream of {} samples is shorter than one {len}-sample window",
            stream.len()
        )));
    }
    let mut counts = Confusion::default();
    let mut windows = Vec::with_capacity(stream.len() / len);
    for (w, chunk) in stream.samples.chunks_exact(len).enumerate() {
        let m = chunk.len() as f64;
        let mean = Point::new(
            chunk.iter().map(|s| s.speed).sum::<f64>() / m,
            chunk.iter().map(|s| s.throttle).sum::<f64>() / m,
        );
        let aggressive = chunk
            .iter()
            .filter(|s| s.label == Label::Aggressive)
            .count();
        let truth = if 2 * aggressive >= chunk.len() {
            Label::Aggressive
        } else {
            Label::Moderate
        };
        let predicted = model.predict(&mean);
        counts.record(truth, predicted);
        windows.push(WindowPrediction {
            start: w * len,
            truth,
            predicted,
        });
    }
    Ok(OnlineResult {
        report: EvalReport::from_counts(EvalMode::Online, counts),
        windows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KmcSvm,
    Svm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::KmcSvm => "kMC-SVM",
            Method::Svm => "SVM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: Method,
    /// Wall-clock training time; for kMC-SVM this includes clustering.
    pub train_seconds: f64,
    /// Clustering share of `train_seconds` (0 for plain SVM).
    pub cluster_seconds: f64,
    pub training_points: usize,
    pub sv_count: usize,
    pub converged: bool,
    /// Final KKT violation when the solver stopped early.
    pub max_violation: Option<f64>,
    pub report: EvalReport,
    pub train_checksum: u64,
    pub test_checksum: u64,
}

/// Hash of every sample's bit pattern, for asserting that two arms saw the
/// same bytes.
pub fn checksum(ds: &Dataset) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    ds.sample_rate.to_bits().hash(&mut h);
    for s in &ds.samples {
        s.speed.to_bits().hash(&mut h);
        s.throttle.to_bits().hash(&mut h);
        s.label.as_i8().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BenchOptions {
    pub granularity: Granularity,
    pub kmeans: KMeansConfig,
}

/// Trains kMC-SVM and plain SVM on the same data, one after the other, and
/// evaluates both offline on the same test set. A solver that stops early
/// is reported with its best iterate instead of aborting the comparison.
pub fn bench_compare(
    train: &Dataset,
    test: &Dataset,
    rule: KRule,
    cfg: &TrainConfig,
    seed: u64,
    opts: &BenchOptions,
) -> Result<(BenchReport, BenchReport)> {
    train.require_both_classes()?;
    test.require_both_classes()?;
    let train_checksum = checksum(train);
    let test_checksum = checksum(test);

    let start = Instant::now();
    let clusters = cluster_per_label(train, rule, seed::derive(seed, 10), &opts.kmeans)?;
    let cluster_seconds = start.elapsed().as_secs_f64();
    let (points, labels) = centroid_training_set(&clusters);
    let (kmc_model, kmc_violation) =
        settle(train_smo(&points, &labels, cfg, seed::derive(seed, 11)))?;
    let kmc_seconds = start.elapsed().as_secs_f64();
    let kmc_points = points.len();

    let start = Instant::now();
    let raw_points = train.points();
    let raw_labels = train.labels();
    let (svm_model, svm_violation) = settle(train_smo(
        &raw_points,
        &raw_labels,
        cfg,
        seed::derive(seed, 11),
    ))?;
    let svm_seconds = start.elapsed().as_secs_f64();

    let eval = |m: &SvmModel| evaluate_offline(m, test, rule, seed, opts.granularity, &opts.kmeans);
    let kmc = BenchReport {
        method: Method::KmcSvm,
        train_seconds: kmc_seconds.max(f64::MIN_POSITIVE),
        cluster_seconds,
        training_points: kmc_points,
        sv_count: kmc_model.sv_count(),
        converged: kmc_violation.is_none(),
        max_violation: kmc_violation,
        report: eval(&kmc_model)?,
        train_checksum,
        test_checksum,
    };
    let svm = BenchReport {
        method: Method::Svm,
        train_seconds: svm_seconds.max(f64::MIN_POSITIVE),
        cluster_seconds: 0.0,
        training_points: train.len(),
        sv_count: svm_model.sv_count(),
        converged: svm_violation.is_none(),
        max_violation: svm_violation,
        report: eval(&svm_model)?,
        train_checksum: checksum(train),
        test_checksum: checksum(test),
    };
    Ok((kmc, svm))
}

fn settle(res: Result<SvmModel>) -> Result<(SvmModel, Option<f64>)> {
    match res {
        Ok(m) => Ok((m, None)),
        Err(Error::NotConverged {
            model,
            max_violation,
            ..
        }) => Ok((*model, Some(max_violation))),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::svm::Gamma;

    fn const_model(bias: f64) -> SvmModel {
        SvmModel {
            support_vectors: vec![Point::new(0.0, 0.0)],
            sv_labels: vec![Label::Aggressive],
            alphas: vec![0.0],
            bias,
            gamma: Gamma::new(1.0).unwrap(),
            c: 1.0,
        }
    }

    fn stream(n: usize, label: Label) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| Sample::new(40.0 + (i % 7) as f64, 0.3, label).unwrap())
                .collect(),
        )
    }

    #[test]
    fn window_lengths() {
        let wc = WindowConfig::default();
        assert_eq!(wc.window_len().unwrap(), 70);
        assert_eq!(window_count(69, &wc).unwrap(), 0);
        assert_eq!(window_count(700, &wc).unwrap(), 10);
        assert!(WindowConfig {
            tau: 0.001,
            sample_rate: 50.0
        }
        .window_len()
        .is_err());
        assert!(WindowConfig {
            tau: -1.0,
            sample_rate: 50.0
        }
        .window_len()
        .is_err());
    }

    #[test]
    fn online_counts_windows() {
        let model = const_model(1.0);
        let r = online_evaluate(
            &model,
            &stream(70, Label::Aggressive),
            &WindowConfig::default(),
        )
        .unwrap();
        assert_eq!(r.windows.len(), 1);
        assert_eq!(
            r.report.counts,
            Confusion {
                cor_agg: 1,
                all_agg: 1,
                cor_mod: 0,
                all_mod: 0
            }
        );
        assert_eq!(r.report.lambda_agg, Some(1.0));
        assert_eq!(r.report.lambda_mod, None);

        let r = online_evaluate(
            &model,
            &stream(700, Label::Moderate),
            &WindowConfig::default(),
        )
        .unwrap();
        assert_eq!(r.windows.len(), 10);
        assert_eq!(r.report.lambda_mod, Some(0.0));
        assert_eq!(r.windows[3].start, 210);

        assert!(online_evaluate(
            &model,
            &stream(69, Label::Moderate),
            &WindowConfig::default()
        )
        .is_err());
    }

    #[test]
    fn report_ratios() {
        let c = Confusion {
            cor_agg: 7,
            all_agg: 9,
            cor_mod: 0,
            all_mod: 4,
        };
        let r = EvalReport::from_counts(EvalMode::Offline, c);
        assert_eq!(r.lambda_agg, Some(7.0 / 9.0));
        assert_eq!(r.lambda_mod, Some(0.0));
        assert_eq!(r.accuracy(), Some(7.0 / 13.0));
    }

    #[test]
    fn offline_all_correct() {
        let mut samples = stream(40, Label::Aggressive).samples;
        for s in &mut samples {
            s.speed += 60.0;
        }
        samples.extend(stream(40, Label::Moderate).samples);
        let ds = Dataset::new(samples);
        let cfg = TrainConfig::new(10.0, 0.01).unwrap();
        let fit = train_kmc_svm(&ds, KRule::SqrtNOver3, &cfg, 1, &KMeansConfig::default()).unwrap();
        assert!(fit.model.sv_count() <= fit.clusters.0.len() + fit.clusters.1.len());
        let r = evaluate_offline(
            &fit.model,
            &ds,
            KRule::SqrtNOver3,
            1,
            Granularity::Centroids,
            &KMeansConfig::default(),
        )
        .unwrap();
        assert_eq!(r.lambda_agg, Some(1.0));
        assert_eq!(r.lambda_mod, Some(1.0));
        let raw = evaluate_offline(
            &fit.model,
            &ds,
            KRule::SqrtNOver3,
            1,
            Granularity::Raw,
            &KMeansConfig::default(),
        )
        .unwrap();
        assert_eq!(raw.counts.total(), 80);
    }
}
