//! `kmcsvm` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or convergence error.
//! `KMCSVM_THREADS` caps worker threads (0 or unset = automatic).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datagen::{self, CohortConfig, GenConfig, ProfileSet};
use crate::dataset::{self, Label, PartitionMode};
use crate::error::{Error, Result};
use crate::kmeans::{Init, KMeansConfig, KRule};
use crate::model_selection::{self, CvOptions, GridOptions, GridSpec, IntRange};
use crate::pipeline::{self, BenchOptions, Granularity, WindowConfig};
use crate::report::{self, Record};
use crate::svm::{self, SvmModel, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "kmcsvm",
    version,
    about = "Driving-style recognition with k-means-reduced SVMs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic telemetry as CSV.
    Generate(GenerateArgs),
    /// Train a model (kMC-SVM by default, plain SVM with --k-rule none).
    Train(TrainArgs),
    /// Cross-validated grid search over C = c^M, gamma = r^-(2N+1).
    GridSearch(GridArgs),
    /// Offline evaluation of a model on a labelled test set.
    Evaluate(EvaluateArgs),
    /// Online evaluation over fixed-span windows of a stream.
    Online(OnlineArgs),
    /// Time kMC-SVM against plain SVM on the same data.
    Bench(BenchArgs),
    /// Emit plot-ready TSV or an aligned text table.
    ExportPlot(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Style {
    Aggressive,
    Moderate,
}

impl From<Style> for Label {
    fn from(s: Style) -> Label {
        match s {
            Style::Aggressive => Label::Aggressive,
            Style::Moderate => Label::Moderate,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, required_unless_present = "cohort")]
    pub style: Option<Style>,
    /// Driver group whose profiles to use.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub group: u8,
    /// Seconds of driving (per run with --cohort).
    #[arg(long, value_parser = positive_f64)]
    pub duration: f64,
    #[arg(long, default_value_t = 50.0, value_parser = positive_f64)]
    pub rate: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Profile file overriding the shipped calibration.
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Generate a cohort of drivers of both styles instead of one trace.
    #[arg(long)]
    pub cohort: bool,
    #[arg(long, default_value_t = 4, requires = "cohort")]
    pub drivers: usize,
    #[arg(long, default_value_t = 10, requires = "cohort")]
    pub runs: usize,
    /// Write the per-run subset index of every row (one per line).
    #[arg(long, requires = "cohort")]
    pub partition_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
pub enum InitArg {
    #[default]
    PlusPlus,
    Random,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Box constraint C.
    #[arg(long = "C", value_parser = positive_f64, default_value_t = 128.0)]
    pub c: f64,
    /// Gaussian kernel parameter gamma.
    #[arg(long, value_parser = positive_f64, default_value_t = 0.001953125)]
    pub gamma: f64,
    #[arg(long, value_parser = positive_f64, default_value_t = 1e-3)]
    pub kkt_tol: f64,
    /// Pair updates without progress before giving up (default 10 n).
    #[arg(long)]
    pub max_passes: Option<usize>,
    /// k-means seeding.
    #[arg(long, value_enum, default_value_t = InitArg::PlusPlus)]
    pub init: InitArg,
}

impl SolverArgs {
    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.c, self.gamma)?.with_kkt_tol(self.kkt_tol);
        cfg.max_passes = self.max_passes;
        cfg.validate()?;
        Ok(cfg)
    }

    fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            init: match self.init {
                InitArg::PlusPlus => Init::PlusPlus,
                InitArg::Random => Init::RandomPoints,
            },
            ..KMeansConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// sqrt-n-over-3, sqrt-n-over-2, an explicit K, or `none` for plain SVM.
    #[arg(long, default_value = "sqrt-n-over-3", value_parser = parse_k_rule)]
    pub k_rule: KChoice,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of equal subsets for leave-one-subset-out validation.
    #[arg(long, default_value_t = 5)]
    pub z: usize,
    #[arg(long, default_value = "none", value_parser = parse_k_rule)]
    pub k_rule: KChoice,
    #[arg(long, default_value = "-5:10", value_parser = parse_range, allow_hyphen_values = true)]
    pub m_range: IntRange,
    #[arg(long, default_value = "-5:10", value_parser = parse_range, allow_hyphen_values = true)]
    pub n_range: IntRange,
    #[arg(long, default_value_t = 2.0)]
    pub c_base: f64,
    #[arg(long, default_value_t = 2.0)]
    pub r_base: f64,
    /// Keep subsets as consecutive blocks instead of shuffling.
    #[arg(long)]
    pub contiguous: bool,
    #[arg(long, value_parser = positive_f64, default_value_t = 1e-3)]
    pub kkt_tol: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "sqrt-n-over-3", value_parser = parse_k_rule)]
    pub k_rule: KChoice,
    /// Score raw samples instead of test-set centroids.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stream: PathBuf,
    /// Window span in seconds.
    #[arg(long, default_value_t = 1.4, value_parser = positive_f64)]
    pub tau: f64,
    #[arg(long, default_value_t = 50.0, value_parser = positive_f64)]
    pub rate: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "sqrt-n-over-2", value_parser = parse_k_rule)]
    pub k_rule: KChoice,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlotKind {
    Scatter,
    Heatmap,
    Table,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Dataset CSV (scatter), grid TSV (heatmap) or report JSON lines (table).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Model used to fill the `predicted` column of a scatter export.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

/// A k rule, or `none` to skip clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KChoice(pub Option<KRule>);

fn parse_k_rule(s: &str) -> std::result::Result<KChoice, String> {
    if s == "none" {
        return Ok(KChoice(None));
    }
    match s.parse::<KRule>() {
        Ok(KRule::Explicit(0)) => Err("explicit K must be >= 1".into()),
        Ok(rule) => Ok(KChoice(Some(rule))),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_range(s: &str) -> std::result::Result<IntRange, String> {
    IntRange::parse(s).map_err(|e| e.to_string())
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn usage(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Ok(v) = std::env::var("KMCSVM_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) => crate::par::init_threads(n),
            Err(_) => {
                return usage(format!(
                    "KMCSVM_THREADS must be a non-negative integer, got `{v}`"
                ))
            }
        }
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Error::InvalidArgument(msg)) => usage(msg),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::GridSearch(a) => grid(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Online(a) => online(a),
        Command::Bench(a) => bench(a),
        Command::ExportPlot(a) => export(a),
    }
}

fn stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let profiles = match &a.profiles {
        Some(p) => ProfileSet::load(p)?,
        None => ProfileSet::parse(datagen::DEFAULT_PROFILES)?,
    };
    if a.cohort {
        let cfg = CohortConfig {
            run_duration: a.duration,
            rate: a.rate,
            seed,
            group: a.group,
            profiles,
            exec: Default::default(),
        };
        let (ds, part) = datagen::generate_cohort(a.drivers, a.runs, &cfg)?;
        if let Some(p) = &a.partition_out {
            report::write_atomic(p, |w| {
                for s in &part.assignments {
                    writeln!(w, "{s}")?;
                }
                Ok(())
            })?;
        }
        dataset::save_csv(&ds, &a.out)?;
        stdout(&format!(
            "wrote {} samples in {} runs to {}\n",
            ds.len(),
            part.z,
            a.out.display()
        ))
    } else {
        let label: Label = a
            .style
            .expect("clap enforces --style without --cohort")
            .into();
        let profile = profiles.get(label, a.group)?.clone();
        let ds = datagen::generate(&GenConfig {
            duration: a.duration,
            rate: a.rate,
            seed,
            profile,
            label,
        })?;
        dataset::save_csv(&ds, &a.out)?;
        stdout(&format!(
            "wrote {} samples to {}\n",
            ds.len(),
            a.out.display()
        ))
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let cfg = a.solver.train_config()?;
    let data = dataset::load_csv(&a.data)?;
    let model = match a.k_rule.0 {
        Some(rule) => pipeline::train_kmc_svm(&data, rule, &cfg, seed, &a.solver.kmeans())?.model,
        None => svm::train_smo(&data.points(), &data.labels(), &cfg, seed)?,
    };
    model.save(&a.out)?;
    stdout(&format!(
        "trained on {} samples: {} support vectors, bias {:.6}\n",
        data.len(),
        model.sv_count(),
        model.bias
    ))
}

fn grid(a: GridArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let data = dataset::load_csv(&a.data)?;
    let spec = GridSpec {
        c_base: a.c_base,
        r_base: a.r_base,
        m_range: a.m_range,
        n_range: a.n_range,
    };
    let opts = GridOptions {
        mode: if a.contiguous {
            PartitionMode::Contiguous
        } else {
            PartitionMode::Shuffled
        },
        cv: CvOptions {
            kkt_tol: a.kkt_tol,
            ..CvOptions::default()
        },
        exec: Default::default(),
    };
    let res = model_selection::grid_search(&data, &spec, a.z, a.k_rule.0, seed, &opts)?;
    if let Some(out) = &a.out {
        model_selection::save_grid_tsv(&res, out)?;
    }
    stdout(&format!(
        "best C = {} (M = {}), gamma = {} (N = {}), mean accuracy {:.4}\n",
        res.best_c, res.best.m, res.best_gamma, res.best.n, res.best_score
    ))
}

fn eval_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn emit_records(records: &[Record], out: Option<&Path>) -> Result<()> {
    if let Some(out) = out {
        report::write_atomic(out, |w| report::write_records(records, w))?;
    }
    stdout(&report::render_table(records))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let model = SvmModel::load(&a.model)?;
    let test = dataset::load_csv(&a.test)?;
    let (rule, granularity) = match a.k_rule.0 {
        Some(rule) if !a.raw => (rule, Granularity::Centroids),
        Some(rule) => (rule, Granularity::Raw),
        None => (KRule::SqrtNOver3, Granularity::Raw),
    };
    let rep = pipeline::evaluate_offline(
        &model,
        &test,
        rule,
        seed,
        granularity,
        &KMeansConfig::default(),
    )?;
    emit_records(
        &[Record::eval(eval_name(&a.test), rep, None)],
        a.out.as_deref(),
    )
}

fn online(a: OnlineArgs) -> Result<()> {
    let model = SvmModel::load(&a.model)?;
    let stream = dataset::load_csv(&a.stream)?;
    let wc = WindowConfig {
        tau: a.tau,
        sample_rate: a.rate,
    };
    let res = pipeline::online_evaluate(&model, &stream, &wc)?;
    emit_records(
        &[Record::eval(
            eval_name(&a.stream),
            res.report,
            Some(res.windows.len()),
        )],
        a.out.as_deref(),
    )
}

fn bench(a: BenchArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let cfg = a.solver.train_config()?;
    let train = dataset::load_csv(&a.train)?;
    let test = dataset::load_csv(&a.test)?;
    let rule = a
        .k_rule
        .0
        .ok_or_else(|| Error::invalid("bench needs a k rule"))?;
    let opts = BenchOptions {
        granularity: if a.raw {
            Granularity::Raw
        } else {
            Granularity::Centroids
        },
        kmeans: a.solver.kmeans(),
    };
    let (kmc, plain) = pipeline::bench_compare(&train, &test, rule, &cfg, seed, &opts)?;
    emit_records(
        &[Record::bench(kmc), Record::bench(plain)],
        a.out.as_deref(),
    )
}

fn export(a: ExportArgs) -> Result<()> {
    match a.kind {
        PlotKind::Scatter => {
            let ds = dataset::load_csv(&a.input)?;
            let model = a.model.as_ref().map(SvmModel::load).transpose()?;
            report::write_atomic(&a.out, |w| report::write_scatter(&ds, model.as_ref(), w))
        }
        PlotKind::Heatmap => {
            let file = std::fs::File::open(&a.input)?;
            let grid = model_selection::read_grid_tsv(std::io::BufReader::new(file))?;
            report::write_atomic(&a.out, |w| report::write_heatmap(&grid, w))
        }
        PlotKind::Table => {
            let file = std::fs::File::open(&a.input)?;
            let records = report::read_records(std::io::BufReader::new(file))?;
            let table = report::render_table(&records);
            report::write_atomic(&a.out, |w| {
                w.write_all(table.as_bytes())?;
                Ok(())
            })
        }
    }
}
