//! Telemetry samples, CSV ingestion/emission, and cross-validation subsets.
//!
//! CSV layout: header `speed_kmh,throttle,label`, one sample per row, label
//! written as `1` (aggressive) or `-1` (moderate). LF and CRLF are accepted.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const CSV_HEADER: [&str; 3] = ["speed_kmh", "throttle", "label"];
pub const DEFAULT_SAMPLE_RATE: f64 = 50.0;

/// Driving style. `+1` is aggressive, `-1` is moderate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Aggressive,
    Moderate,
}

impl Label {
    pub fn from_sign(v: i64) -> Option<Label> {
        match v {
            1 => Some(Label::Aggressive),
            -1 => Some(Label::Moderate),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Aggressive => 1,
            Label::Moderate => -1,
        }
    }

    /// The label as `+1.0` / `-1.0`.
    pub fn sign(self) -> f64 {
        f64::from(self.as_i8())
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Aggressive => Label::Moderate,
            Label::Moderate => Label::Aggressive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Aggressive => "aggressive",
            Label::Moderate => "moderate",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Aggressive => f.write_str("+1"),
            Label::Moderate => f.write_str("-1"),
        }
    }
}

/// A feature vector: longitudinal speed (km/h) and throttle opening.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub speed: f64,
    pub throttle: f64,
}

impl Point {
    pub const fn new(speed: f64, throttle: f64) -> Self {
        Point { speed, throttle }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let ds = self.speed - other.speed;
        let dt = self.throttle - other.throttle;
        ds * ds + dt * dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub speed: f64,
    pub throttle: f64,
    pub label: Label,
}

impl Sample {
    pub fn new(speed: f64, throttle: f64, label: Label) -> Result<Self> {
        if !speed.is_finite() || speed < 0.0 {
            return Err(Error::InvalidSample(format!(
                "speed {speed} must be a finite value >= 0"
            )));
        }
        if !throttle.is_finite() || !(0.0..=1.0).contains(&throttle) {
            return Err(Error::InvalidSample(format!(
                "throttle {throttle} outside [0, 1]"
            )));
        }
        Ok(Sample {
            speed,
            throttle,
            label,
        })
    }

    pub fn point(&self) -> Point {
        Point::new(self.speed, self.throttle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Samples per second.
    pub sample_rate: f64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset {
            samples,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn with_rate(samples: Vec<Sample>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::invalid(format!(
                "sample rate {sample_rate} must be > 0"
            )));
        }
        Ok(Dataset {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.samples.iter().map(Sample::point).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Points of one class, in dataset order.
    pub fn class_points(&self, label: Label) -> Vec<Point> {
        self.samples
            .iter()
            .filter(|s| s.label == label)
            .map(Sample::point)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i]).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Appends `other`; the sample rate of `self` is kept.
    pub fn extend(&mut self, other: &Dataset) {
        self.samples.extend_from_slice(&other.samples);
    }

    /// Errors unless both classes are present.
    pub fn require_both_classes(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for label in [Label::Aggressive, Label::Moderate] {
            if !self.samples.iter().any(|s| s.label == label) {
                return Err(Error::MissingClass(label));
            }
        }
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{}`",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| Error::MalformedRow { line, reason };
        if record.len() != 3 {
            return Err(malformed(format!(
                "expected 3 fields, found {}",
                record.len()
            )));
        }
        let speed: f64 = record[0]
            .parse()
            .map_err(|_| malformed(format!("bad speed `{}`", &record[0])))?;
        let throttle: f64 = record[1]
            .parse()
            .map_err(|_| malformed(format!("bad throttle `{}`", &record[1])))?;
        let label = record[2]
            .parse::<i64>()
            .ok()
            .and_then(Label::from_sign)
            .ok_or_else(|| malformed(format!("label `{}` not in {{1, -1}}", &record[2])))?;
        let sample = Sample::new(speed, throttle, label).map_err(|e| malformed(e.to_string()))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset::new(samples))
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Writes `ds` as CSV. Values use the shortest representation that parses
/// back to the same `f64`, so load/save round-trips exactly.
pub fn write_csv<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for s in &ds.samples {
        writeln!(out, "{},{},{}", s.speed, s.throttle, s.label.as_i8())?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    crate::report::write_atomic(path.as_ref(), |w| write_csv(ds, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartitionMode {
    /// Shuffle indices with the seed, then slice.
    #[default]
    Shuffled,
    /// Consecutive temporal blocks, seed unused.
    Contiguous,
}

/// Assignment of every sample to one of `z` subsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPartition {
    pub z: usize,
    pub assignments: Vec<usize>,
}

impl SubsetPartition {
    /// Validates an explicit assignment vector (subset sizes are not checked).
    pub fn from_assignments(z: usize, assignments: Vec<usize>) -> Result<Self> {
        if z < 2 {
            return Err(Error::invalid(format!("partition needs z > 1, got {z}")));
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= z) {
            return Err(Error::invalid(format!(
                "subset index {bad} out of range for z = {z}"
            )));
        }
        Ok(SubsetPartition { z, assignments })
    }

    /// Sample indices per subset, each in ascending order.
    pub fn subsets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.z];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.z];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Complement of subset `fold`.
    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Splits `ds` into `z` subsets whose sizes differ by at most one.
pub fn partition(
    ds: &Dataset,
    z: usize,
    seed: u64,
    mode: PartitionMode,
) -> Result<SubsetPartition> {
    let n = ds.len();
    if z < 2 || z > n {
        return Err(Error::invalid(format!("z = {z} must satisfy 1 < z <= {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if mode == PartitionMode::Shuffled {
        order.shuffle(&mut seed::rng(seed));
    }
    // the first n % z subsets take one extra sample
    let base = n / z;
    let extra = n % z;
    let mut assignments = vec![0; n];
    let mut pos = 0;
    for subset in 0..z {
        let size = base + usize::from(subset < extra);
        for &idx in &order[pos..pos + size] {
            assignments[idx] = subset;
        }
        pos += size;
    }
    Ok(SubsetPartition { z, assignments })
}

/// Per-feature standardization. Not applied anywhere by default; the
/// pipeline works on raw km/h and throttle units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineScaler {
    pub speed_mean: f64,
    pub speed_scale: f64,
    pub throttle_mean: f64,
    pub throttle_scale: f64,
}

impl AffineScaler {
    pub fn fit(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = points.len() as f64;
        let ms = points.iter().map(|p| p.speed).sum::<f64>() / n;
        let mt = points.iter().map(|p| p.throttle).sum::<f64>() / n;
        let vs = points.iter().map(|p| (p.speed - ms).powi(2)).sum::<f64>() / n;
        let vt = points
            .iter()
            .map(|p| (p.throttle - mt).powi(2))
            .sum::<f64>()
            / n;
        let scale = |v: f64| if v > 0.0 { v.sqrt() } else { 1.0 };
        Ok(AffineScaler {
            speed_mean: ms,
            speed_scale: scale(vs),
            throttle_mean: mt,
            throttle_scale: scale(vt),
        })
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            (p.speed - self.speed_mean) / self.speed_scale,
            (p.throttle - self.throttle_mean) / self.throttle_scale,
        )
    }

    pub fn invert(&self, p: Point) -> Point {
        Point::new(
            p.speed * self.speed_scale + self.speed_mean,
            p.throttle * self.throttle_scale + self.throttle_mean,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(speed: f64, throttle: f64, label: i64) -> Sample {
        Sample::new(speed, throttle, Label::from_sign(label).unwrap()).unwrap()
    }

    #[test]
    fn parses_rows_in_order() {
        let text = "speed_kmh,throttle,label\n30.0,0.2,-1\r\n85.0,0.9,1\n";
        let ds = read_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.samples, vec![s(30.0, 0.2, -1), s(85.0, 0.9, 1)]);
        assert_eq!(ds.sample_rate, 50.0);
    }

    #[test]
    fn header_only_is_empty() {
        let err = read_csv("speed_kmh,throttle,label\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn throttle_out_of_range_cites_line() {
        let text = "speed_kmh,throttle,label\n30,0.2,-1\n40,1.3,1\n";
        match read_csv(text.as_bytes()).unwrap_err() {
            Error::MalformedRow { line, reason } => {
                assert_eq!(line, 3);
                assert!(reason.contains("throttle"), "{reason}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_bad_labels_and_speeds() {
        let bad_label = "speed_kmh,throttle,label\n30,0.2,0\n";
        assert!(matches!(
            read_csv(bad_label.as_bytes()),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        let neg = "speed_kmh,throttle,label\n-1,0.2,1\n";
        assert!(matches!(
            read_csv(neg.as_bytes()),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        let short = "speed_kmh,throttle,label\n10,0.2\n";
        assert!(read_csv(short.as_bytes()).is_err());
        let wrong_header = "speed,throttle,label\n10,0.2,1\n";
        assert!(matches!(
            read_csv(wrong_header.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn save_writes_header_and_rows() {
        let ds = Dataset::new(vec![s(30.0, 0.2, -1), s(85.0, 0.9, 1)]);
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "speed_kmh,throttle,label\n30,0.2,-1\n85,0.9,1\n");
    }

    #[test]
    fn save_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        assert!(matches!(
            save_csv(&Dataset::new(vec![]), &path),
            Err(Error::EmptyDataset)
        ));
        assert!(!path.exists());
    }

    #[test]
    fn partition_sizes() {
        let ds = Dataset::new((0..10).map(|i| s(i as f64, 0.5, 1)).collect());
        let p = partition(&ds, 5, 3, PartitionMode::Shuffled).unwrap();
        assert_eq!(p.sizes(), vec![2; 5]);

        let ds = Dataset::new((0..11).map(|i| s(i as f64, 0.5, 1)).collect());
        let p = partition(&ds, 5, 3, PartitionMode::Shuffled).unwrap();
        let mut sizes = p.sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert_eq!(p, partition(&ds, 5, 3, PartitionMode::Shuffled).unwrap());

        let c = partition(&ds, 5, 3, PartitionMode::Contiguous).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn partition_rejects_bad_z() {
        let ds = Dataset::new((0..4).map(|i| s(i as f64, 0.5, 1)).collect());
        assert!(partition(&ds, 1, 0, PartitionMode::Shuffled).is_err());
        assert!(partition(&ds, 5, 0, PartitionMode::Shuffled).is_err());
        assert!(partition(&ds, 4, 0, PartitionMode::Shuffled).is_ok());
    }

    #[test]
    fn scaler_inverts() {
        let pts = vec![
            Point::new(10.0, 0.1),
            Point::new(50.0, 0.5),
            Point::new(90.0, 0.8),
        ];
        let sc = AffineScaler::fit(&pts).unwrap();
        for p in &pts {
            let back = sc.invert(sc.apply(*p));
            assert!((back.speed - p.speed).abs() < 1e-12);
            assert!((back.throttle - p.throttle).abs() < 1e-12);
        }
    }

    fn arb_sample() -> impl Strategy<Value = Sample> {
        (0.0f64..200.0, 0.0f64..=1.0, any::<bool>()).prop_map(|(v, a, agg)| {
            Sample::new(
                v,
                a,
                if agg {
                    Label::Aggressive
                } else {
                    Label::Moderate
                },
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(samples in prop::collection::vec(arb_sample(), 1..60)) {
            let ds = Dataset::new(samples);
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).unwrap();
            prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), ds);
        }

        #[test]
        fn partition_is_a_partition(n in 2usize..200, z_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let z = 2 + ((n - 2) as f64 * z_frac) as usize;
            let ds = Dataset::new((0..n).map(|i| s(i as f64, 0.5, 1)).collect());
            let p = partition(&ds, z, seed, PartitionMode::Shuffled).unwrap();
            let mut all: Vec<usize> = p.subsets().concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes = p.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
