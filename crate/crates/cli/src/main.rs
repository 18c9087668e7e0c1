// SPDX-License-Identifier: MIT OR Apache-2.0

//! `rcluster` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 compute error. Failures print one JSON line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use rcluster::adwin::{AdwinConfig, Statistic};
use rcluster::cluster::{AcConfig, BaselineConfig, Linkage, Metric};
use rcluster::eval::{self, Dataset, SweepAxis, SweepParam, SynthSpec};
use rcluster::fusion::{self, GcConfig};
use rcluster::pipeline::{Method, MethodParams, PreparedStream};
use rcluster::preprocess::PreprocessConfig;
use rcluster::stream::{self, CsvLayout, FeatureFormat};
use rcluster::{Error, FeatureStream, GroundTruth};

#[derive(Parser, Debug)]
#[command(
    name = "rcluster",
    version,
    about = "Temporal segmentation of feature streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Segment one feature file.
    Segment(SegmentArgs),
    /// Score predicted segmentations against ground truth.
    Eval(EvalArgs),
    /// Evaluate a method over a parameter grid.
    Sweep(SweepArgs),
    /// Generate a synthetic stream with ground truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Adwin,
    Ac,
    Rcluster,
    Kmeans,
    Meanshift,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Adwin => Method::Adwin,
            MethodArg::Ac => Method::Ac,
            MethodArg::Rcluster => Method::Rcluster,
            MethodArg::Kmeans => Method::Kmeans,
            MethodArg::Meanshift => Method::Meanshift,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum FormatArg {
    /// Packed binary if the file starts with its magic, CSV otherwise.
    #[default]
    Auto,
    Csv,
    Binary,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StatisticArg {
    MeanVector,
    SampleNorm,
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// CSV files start with a header line.
    #[arg(long)]
    csv_header: bool,
    /// First CSV column holds frame ids.
    #[arg(long)]
    csv_ids: bool,
}

impl InputArgs {
    fn load(&self, path: &Path) -> rcluster::Result<FeatureStream> {
        let format = match self.format {
            FormatArg::Auto => FeatureFormat::detect(path)?,
            FormatArg::Csv => FeatureFormat::Csv,
            FormatArg::Binary => FeatureFormat::PackedBinary,
        };
        let layout = CsvLayout {
            header: self.csv_header,
            ids: self.csv_ids,
        };
        stream::load_features(path, format, layout)
    }
}

/// Every method parameter with its default.
#[derive(Args, Debug)]
struct ParamArgs {
    /// Exponent of the signed power normalization.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Fraction of variance kept by PCA.
    #[arg(long, default_value_t = 0.95)]
    variance: f64,
    /// ADWIN confidence.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 2)]
    p_norm: u32,
    #[arg(long, default_value_t = 5)]
    min_subwindow: usize,
    #[arg(long)]
    max_window: Option<usize>,
    #[arg(long, value_enum, default_value_t = StatisticArg::MeanVector)]
    statistic: StatisticArg,
    #[arg(long, default_value_t = Linkage::Average)]
    linkage: Linkage,
    #[arg(long, default_value = "cosine")]
    metric: Metric,
    /// Dendrogram cut height.
    #[arg(long, default_value_t = 0.5)]
    cut: f64,
    /// Weight of the ADWIN unary term.
    #[arg(long, default_value_t = 1.0)]
    omega1: f64,
    /// Weight of the pairwise term.
    #[arg(long, default_value_t = 0.5)]
    omega2: f64,
    /// Temporal neighborhood radius.
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long, default_value_t = 8)]
    kmeans_k: usize,
    #[arg(long, default_value_t = 0.5)]
    bandwidth: f64,
    /// Seed for every randomized step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ParamArgs {
    fn resolve(&self) -> rcluster::Result<MethodParams> {
        let params = MethodParams {
            preprocess: PreprocessConfig {
                alpha: self.alpha,
                variance_fraction: self.variance,
            },
            adwin: AdwinConfig {
                delta: self.delta,
                p_norm: self.p_norm,
                min_subwindow: self.min_subwindow,
                max_window: self.max_window,
                statistic: match self.statistic {
                    StatisticArg::MeanVector => Statistic::MeanVector,
                    StatisticArg::SampleNorm => Statistic::SampleNorm,
                },
            },
            ac: AcConfig {
                linkage: self.linkage,
                metric: self.metric,
                cut: self.cut,
            },
            gc: GcConfig {
                omega1: self.omega1,
                omega2: self.omega2,
                radius: self.radius,
            },
            baseline: BaselineConfig {
                kmeans_k: self.kmeans_k,
                kmeans_seed: self.seed,
                meanshift_bandwidth: self.bandwidth,
            },
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Rcluster)]
    method: MethodArg,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    input_args: InputArgs,
    /// Also write the per-frame and per-edge energy terms (rcluster only).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the fitted PCA model.
    #[arg(long)]
    pca_out: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, default_value_t = eval::DEFAULT_TOLERANCE)]
    tolerance: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prediction and ground-truth files, alternating: PRED GT [PRED GT ...].
    #[arg(required = true, num_args = 2..)]
    files: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthOptions {
    #[arg(long, default_value_t = 5)]
    segments: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 30)]
    min_len: usize,
    #[arg(long, default_value_t = 80)]
    max_len: usize,
    /// Distance between consecutive segment means.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Every coordinate of the first segment mean.
    #[arg(long, default_value_t = 2.0)]
    offset: f64,
}

impl SynthOptions {
    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            num_segments: self.segments,
            min_len: self.min_len,
            max_len: self.max_len,
            dim: self.dim,
            separation: self.separation,
            sigma: self.sigma,
            offset: self.offset,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthOptions,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write packed binary features instead of CSV.
    #[arg(long)]
    binary: bool,
    features: PathBuf,
    ground_truth: PathBuf,
}

/// Sweepable parameters. Each takes a single value (fixed for the whole
/// grid), a comma-separated list or `start:stop:step` (a grid axis).
#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    omega1: Option<String>,
    #[arg(long)]
    omega2: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    #[arg(long)]
    cut: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    p_norm: Option<String>,
    #[arg(long)]
    min_subwindow: Option<String>,
    #[arg(long)]
    kmeans_k: Option<String>,
    #[arg(long)]
    bandwidth: Option<String>,
}

/// Parameters that stay fixed during a sweep.
#[derive(Args, Debug)]
struct FixedArgs {
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    variance: f64,
    #[arg(long)]
    max_window: Option<usize>,
    #[arg(long, value_enum, default_value_t = StatisticArg::MeanVector)]
    statistic: StatisticArg,
    #[arg(long, default_value_t = Linkage::Average)]
    linkage: Linkage,
    #[arg(long, default_value = "cosine")]
    metric: Metric,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn sweep_setup(
    fixed: &FixedArgs,
    grid: &GridArgs,
) -> rcluster::Result<(MethodParams, Vec<SweepAxis>)> {
    let mut base = MethodParams::default();
    base.preprocess.alpha = fixed.alpha;
    base.preprocess.variance_fraction = fixed.variance;
    base.adwin.max_window = fixed.max_window;
    base.adwin.statistic = match fixed.statistic {
        StatisticArg::MeanVector => Statistic::MeanVector,
        StatisticArg::SampleNorm => Statistic::SampleNorm,
    };
    base.ac.linkage = fixed.linkage;
    base.ac.metric = fixed.metric;
    base.baseline.kmeans_seed = fixed.seed;

    let given = [
        (SweepParam::Omega1, &grid.omega1),
        (SweepParam::Omega2, &grid.omega2),
        (SweepParam::Radius, &grid.radius),
        (SweepParam::Cut, &grid.cut),
        (SweepParam::Delta, &grid.delta),
        (SweepParam::PNorm, &grid.p_norm),
        (SweepParam::MinSubwindow, &grid.min_subwindow),
        (SweepParam::KmeansK, &grid.kmeans_k),
        (SweepParam::Bandwidth, &grid.bandwidth),
    ];
    let mut axes = Vec::new();
    for (param, spec) in given {
        let Some(spec) = spec else { continue };
        let values = eval::parse_range(spec)?;
        if spec.contains([':', ',']) {
            axes.push(SweepAxis { param, values });
        } else {
            param.apply(&mut base, values[0])?;
        }
    }
    base.validate()?;
    Ok((base, axes))
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Rcluster)]
    method: MethodArg,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    fixed: FixedArgs,
    #[command(flatten)]
    input_args: InputArgs,
    #[arg(long, default_value_t = eval::DEFAULT_TOLERANCE)]
    tolerance: usize,
    /// Use this many synthetic streams (seeds from --synth-seed on).
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
    #[command(flatten)]
    synth: SynthOptions,
    /// Grid report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Flat table for plotting (TSV).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Feature and ground-truth files, alternating: FEATURES GT [FEATURES GT ...].
    files: Vec<PathBuf>,
}

/// Prints to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn write_json(path: &Path, value: &Value) -> rcluster::Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Compute(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn pairs(files: &[PathBuf], what: &str) -> rcluster::Result<Vec<(PathBuf, PathBuf)>> {
    if !files.len().is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "{what} files must come in pairs, got {} paths",
            files.len()
        )));
    }
    Ok(files
        .chunks_exact(2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect())
}

fn run_segment(args: &SegmentArgs) -> rcluster::Result<()> {
    let params = args.params.resolve()?;
    let method = Method::from(args.method);
    if args.trace.is_some() && method != Method::Rcluster {
        return Err(Error::InvalidConfig(
            "--trace is only available with --method rcluster".into(),
        ));
    }
    let raw = args.input_args.load(&args.input)?;
    let stream = PreparedStream::new(&raw, &params.preprocess)?;

    let config = json!({
        "command": "segment",
        "method": args.method,
        "input": path_str(&args.input),
        "params": to_value(&params),
    });

    let seg = if let Some(trace_path) = &args.trace {
        let ac = stream.ac(&params.ac)?;
        let adw = stream.adwin(&params.adwin)?;
        let out = fusion::rcluster_detailed(
            &stream.prepared.unary,
            &stream.prepared.pairwise,
            &ac,
            &adw,
            &params.gc,
        )?;
        let trace = json!({
            "config": config,
            "candidates": out.candidates.boundaries(),
            "labels": out.labels,
            "trace": to_value(&out.trace),
        });
        write_json(trace_path, &trace)?;
        out.segmentation
    } else {
        stream.segment(method, &params)?
    };

    if let Some(path) = &args.pca_out {
        let model = stream.prepared.pca.as_ref().ok_or_else(|| {
            Error::Validation("no PCA model was fitted (single-frame input)".into())
        })?;
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        model.write_to(std::io::BufWriter::new(file))?;
    }

    stream::write_segmentation(&seg, &args.output, Some(config))?;
    say!("segments: {}", seg.num_segments());
    let list: Vec<String> = seg.boundaries().iter().map(usize::to_string).collect();
    say!("boundaries: {}", list.join(" "));
    Ok(())
}

fn run_eval(args: &EvalArgs) -> rcluster::Result<()> {
    let mut runs = Vec::new();
    for (pred, gt) in pairs(&args.files, "eval")? {
        let p = stream::load_segmentation(&pred)?;
        let g = stream::load_ground_truth(&gt)?;
        runs.push((path_str(&pred), p, g));
    }
    let report = eval::evaluate_many(&runs, args.tolerance)?;
    let files: Vec<String> = args.files.iter().map(|p| path_str(p)).collect();
    let doc = json!({
        "config": { "command": "eval", "tolerance": args.tolerance, "files": files },
        "report": to_value(&report),
    });
    match &args.out {
        Some(path) => {
            write_json(path, &doc)?;
            say!(
                "precision {:.4} recall {:.4} f-measure {:.4}",
                report.scores.precision,
                report.scores.recall,
                report.scores.f_measure
            );
        }
        None => say!(
            "{}",
            serde_json::to_string_pretty(&doc).expect("plain data serializes")
        ),
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> rcluster::Result<()> {
    let (base, axes) = sweep_setup(&args.fixed, &args.grid)?;
    if axes.is_empty() {
        return Err(Error::InvalidConfig(
            "no grid axis: give a parameter as a list (a,b) or range (start:stop:step)".into(),
        ));
    }
    let mut datasets = Vec::new();
    for (features, gt) in pairs(&args.files, "sweep")? {
        let raw = args.input_args.load(&features)?;
        let truth = stream::load_ground_truth(&gt)?;
        datasets.push(Dataset::new(path_str(&features), &raw, truth, &base)?);
    }
    let mut synth_specs = Vec::new();
    for i in 0..args.synthetic.unwrap_or(0) {
        let spec = args.synth.spec(args.synth_seed + i as u64);
        let (raw, truth) = eval::generate_synthetic(&spec)?;
        datasets.push(Dataset::new(
            format!("synthetic-{}", spec.seed),
            &raw,
            truth,
            &base,
        )?);
        synth_specs.push(spec);
    }
    if datasets.is_empty() {
        return Err(Error::InvalidConfig(
            "no datasets: pass FEATURES GT pairs or --synthetic N".into(),
        ));
    }
    let method = Method::from(args.method);
    let grid = eval::sweep(&datasets, method, &base, &axes, args.tolerance)?;
    let doc = json!({
        "config": {
            "command": "sweep",
            "method": args.method,
            "tolerance": args.tolerance,
            "base_params": to_value(&base),
            "synthetic": to_value(&synth_specs),
        },
        "grid": to_value(&grid),
    });
    write_json(&args.out, &doc)?;
    if let Some(path) = &args.table {
        std::fs::write(path, grid.to_table()).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    match grid.best_cell() {
        Some(best) => {
            let at: Vec<String> = axes
                .iter()
                .zip(&best.values)
                .map(|(a, v)| format!("{}={v}", a.param))
                .collect();
            say!(
                "best: {} mean f-measure {:.4} (std {:.4})",
                at.join(" "),
                best.mean_f_measure.unwrap_or(0.0),
                best.std_f_measure.unwrap_or(0.0)
            );
        }
        None => say!("best: none (every cell failed)"),
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> rcluster::Result<()> {
    let spec = args.synth.spec(args.seed);
    let (features, truth): (FeatureStream, GroundTruth) = eval::generate_synthetic(&spec)?;
    let format = if args.binary {
        FeatureFormat::PackedBinary
    } else {
        FeatureFormat::Csv
    };
    stream::save_features(&features, &args.features, format, CsvLayout::default())?;
    let config = json!({
        "command": "synth",
        "spec": to_value(&spec),
        "snr": spec.snr(),
        "features": path_str(&args.features),
    });
    stream::write_segmentation(&truth, &args.ground_truth, Some(config))?;
    say!(
        "frames: {} segments: {}",
        features.len(),
        truth.num_segments()
    );
    Ok(())
}

fn exit_code(e: &Error) -> (u8, &'static str) {
    match e {
        Error::InvalidConfig(_) => (2, "usage"),
        Error::Compute(_) => (4, "compute"),
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Data { .. }
        | Error::Validation(_)
        | Error::DimensionMismatch { .. } => (3, "data"),
    }
}

fn fail(code: u8, kind: &str, message: &str) -> ExitCode {
    let line = json!({ "error": kind, "code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            return fail(2, "usage", first.trim_start_matches("error: "));
        }
    };
    let result = match &cli.command {
        Command::Segment(a) => run_segment(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            fail(code, kind, &e.to_string())
        }
    }
}
