//! Report files and plot-data exports.
//!
//! Reports are JSON lines, one record per line, tagged by `kind`:
//!
//! ```text
//! {"kind":"eval","version":1,"name":"...","windows":null,"report":{...}}
//! {"kind":"bench","version":1,"report":{...}}
//! ```
//!
//! Exports are plain TSV (scatter, heatmap) or aligned text (table), and are
//! byte-stable for identical inputs.

use std::fmt::Write as _;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model_selection::GridResult;
use crate::pipeline::{BenchReport, EvalMode, EvalReport};
use crate::svm::SvmModel;

pub const REPORT_VERSION: u32 = 1;

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed write never leaves a partial file behind.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut std::fs::File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Eval {
        version: u32,
        name: String,
        /// Window count for online runs.
        windows: Option<usize>,
        report: EvalReport,
    },
    Bench {
        version: u32,
        report: BenchReport,
    },
}

impl Record {
    pub fn eval(name: impl Into<String>, report: EvalReport, windows: Option<usize>) -> Self {
        Record::Eval {
            version: REPORT_VERSION,
            name: name.into(),
            windows,
            report,
        }
    }

    pub fn bench(report: BenchReport) -> Self {
        Record::Bench {
            version: REPORT_VERSION,
            report,
        }
    }

    fn version(&self) -> u32 {
        match self {
            Record::Eval { version, .. } | Record::Bench { version, .. } => *version,
        }
    }
}

pub fn write_records<W: Write>(records: &[Record], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("report line {}: {e}", i + 1)))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(REPORT_VERSION)) {
            return Err(Error::Format(format!(
                "report line {}: unsupported version {version:?}",
                i + 1
            )));
        }
        let record: Record = serde_json::from_value(value)
            .map_err(|e| Error::Format(format!("report line {}: {e}", i + 1)))?;
        debug_assert_eq!(record.version(), REPORT_VERSION);
        out.push(record);
    }
    if out.is_empty() {
        return Err(Error::Format("report file holds no records".into()));
    }
    Ok(out)
}

/// `speed throttle label predicted`; `predicted` is `NA` without a model.
pub fn write_scatter<W: Write>(ds: &Dataset, model: Option<&SvmModel>, mut out: W) -> Result<()> {
    writeln!(out, "speed\tthrottle\tlabel\tpredicted")?;
    for s in &ds.samples {
        let predicted = match model {
            Some(m) => m.predict(&s.point()).as_i8().to_string(),
            None => "NA".to_string(),
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            s.speed,
            s.throttle,
            s.label.as_i8(),
            predicted
        )?;
    }
    out.flush()?;
    Ok(())
}

/// `M N score`, one row per grid cell; failed cells have an empty score.
pub fn write_heatmap<W: Write>(grid: &GridResult, mut out: W) -> Result<()> {
    writeln!(out, "M\tN\tscore")?;
    for s in &grid.scores {
        let score = s.score.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{}", s.cell.m, s.cell.n, score)?;
    }
    out.flush()?;
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    out
}

/// Aligned text table. Bench records use the columns
/// `method T[s] lambda_agg lambda_mod SVs points`; eval records list per-class
/// accuracy and counts.
pub fn render_table(records: &[Record]) -> String {
    let benches: Vec<&BenchReport> = records
        .iter()
        .filter_map(|r| match r {
            Record::Bench { report, .. } => Some(report),
            _ => None,
        })
        .collect();
    let evals: Vec<(&String, &Option<usize>, &EvalReport)> = records
        .iter()
        .filter_map(|r| match r {
            Record::Eval {
                name,
                windows,
                report,
                ..
            } => Some((name, windows, report)),
            _ => None,
        })
        .collect();

    let mut out = String::new();
    if !benches.is_empty() {
        let mut rows = vec![[
            "method",
            "T[s]",
            "lambda_agg",
            "lambda_mod",
            "SVs",
            "points",
            "converged",
        ]
        .map(String::from)
        .to_vec()];
        for b in &benches {
            rows.push(vec![
                b.method.name().to_string(),
                format!("{:.3}", b.train_seconds),
                pct(b.report.lambda_agg),
                pct(b.report.lambda_mod),
                b.sv_count.to_string(),
                b.training_points.to_string(),
                if b.converged { "yes" } else { "no" }.to_string(),
            ]);
        }
        out.push_str(&render(&rows));
    }
    if !evals.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let mut rows = vec![[
            "name",
            "mode",
            "lambda_agg",
            "lambda_mod",
            "K_agg",
            "K_mod",
            "windows",
        ]
        .map(String::from)
        .to_vec()];
        for (name, windows, r) in &evals {
            rows.push(vec![
                (*name).clone(),
                match r.mode {
                    EvalMode::Offline => "off-line",
                    EvalMode::Online => "on-line",
                }
                .to_string(),
                pct(r.lambda_agg),
                pct(r.lambda_mod),
                format!("{}/{}", r.counts.cor_agg, r.counts.all_agg),
                format!("{}/{}", r.counts.cor_mod, r.counts.all_mod),
                windows.map_or_else(|| "-".to_string(), |w| w.to_string()),
            ]);
        }
        out.push_str(&render(&rows));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, Sample};
    use crate::pipeline::{Confusion, Method};

    fn eval_report() -> EvalReport {
        EvalReport::from_counts(
            EvalMode::Offline,
            Confusion {
                cor_agg: 7,
                all_agg: 9,
                cor_mod: 23,
                all_mod: 25,
            },
        )
    }

    #[test]
    fn records_round_trip() {
        let bench = BenchReport {
            method: Method::KmcSvm,
            train_seconds: 1.5,
            cluster_seconds: 0.25,
            training_points: 142,
            sv_count: 60,
            converged: true,
            max_violation: None,
            report: eval_report(),
            train_checksum: 1,
            test_checksum: 2,
        };
        let recs = vec![
            Record::eval("group-1", eval_report(), Some(3)),
            Record::bench(bench),
        ];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"kind\":\"eval\",\"version\":1,"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);

        let future = text.replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            read_records(future.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn scatter_rows() {
        let ds = Dataset::new(vec![
            Sample::new(30.0, 0.2, Label::Moderate).unwrap(),
            Sample::new(85.0, 0.9, Label::Aggressive).unwrap(),
        ]);
        let mut buf = Vec::new();
        write_scatter(&ds, None, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "speed\tthrottle\tlabel\tpredicted\n30\t0.2\t-1\tNA\n85\t0.9\t1\tNA\n"
        );
    }

    #[test]
    fn table_formats_percentages() {
        let table = render_table(&[Record::eval("x", eval_report(), None)]);
        assert!(table.contains("77.78%"), "{table}");
        assert!(table.contains("92.00%"), "{table}");
        assert!(table.contains("7/9"));
    }

    #[test]
    fn atomic_write_leaves_nothing_on_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        let res = write_atomic(&path, |w| {
            writeln!(w, "partial")?;
            Err(Error::invalid("boom"))
        });
        assert!(res.is_err());
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
