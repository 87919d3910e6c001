//! `psm` command-line entry points.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::dataset::{build_dataset, DatasetMeta, GridSpec, Recording, SafetyDataset};
use crate::error::{PsmError, Result};
use crate::evaluator::SafetyReport;
use crate::io::{load_samples, open_samples, write_jsonl, write_samples};
use crate::pipeline::{evaluate_stream, Monitor, Summary};
use crate::plot::render_svg;
use crate::synthetic::{generate_synthetic, SyntheticScenario};

#[derive(Debug, Parser)]
#[command(name = "psm", version, about = "Predictive safety model for upper-body IMU streams")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthetic generation (overrides the scenario's).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Primary output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the probability grid from safe recordings (CSV).
    BuildDataset(BuildArgs),
    /// Score an IMU stream and write per-window reports (JSONL).
    Evaluate(EvaluateArgs),
    /// Generate a synthetic stream from a scenario, optionally evaluating it.
    Simulate(SimulateArgs),
    /// Dump every intermediate of the first steps (JSONL).
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Recording CSV files.
    #[arg(required = true)]
    pub recordings: Vec<PathBuf>,
    /// Grid spec JSON; overrides the config's `[grid]`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Skip the 3x3 smoothing of counts.
    #[arg(long)]
    pub no_smooth: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Input CSV.
    pub input: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Write the summary as JSON here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Write an SVG plot of the score traces here.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Write the generated stream (with labels) as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Evaluate the stream against this dataset; reports go to `--out`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Input CSV.
    pub input: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Number of steps to dump.
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let body = ErrorBody {
                error: e.kind(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&body).unwrap_or_else(|_| e.to_string()));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let threads = cli.common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PsmError::InvalidParams(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::BuildDataset(a) => cmd_build_dataset(&config, &cli.common, a),
        Command::Evaluate(a) => cmd_evaluate(&config, &cli.common, a),
        Command::Simulate(a) => cmd_simulate(&config, &cli.common, a),
        Command::Trace(a) => cmd_trace(&config, &cli.common, a),
    })
}

fn output_path(common: &CommonArgs, config: &Config) -> Option<PathBuf> {
    common.out.clone().or_else(|| config.io.out.clone())
}

fn dataset_path(flag: &Option<PathBuf>, config: &Config) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.io.dataset.clone())
        .ok_or_else(|| PsmError::Config("no dataset given (use --dataset or io.dataset)".into()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn recording_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Dataset build time only comes from the environment so rebuilds stay
/// byte-identical.
fn build_time() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.parse().ok()
}

pub fn cmd_build_dataset(config: &Config, common: &CommonArgs, args: &BuildArgs) -> Result<()> {
    let out = output_path(common, config).ok_or_else(|| PsmError::Config("build-dataset needs --out".into()))?;
    let recordings: Vec<Recording> = args
        .recordings
        .par_iter()
        .map(|p| {
            Ok(Recording {
                id: recording_id(p),
                samples: load_samples(p)?,
            })
        })
        .collect::<Result<_>>()?;
    let grid = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let g: GridSpec = serde_json::from_str(&text).map_err(|e| PsmError::Config(format!("{}: {e}", p.display())))?;
            g.validate()?;
            g
        }
        None => config.grid,
    };
    let mut options = config.build;
    if args.no_smooth {
        options.smooth = false;
    }
    let mut dataset = build_dataset(&recordings, &grid, config.body.length, options)?;
    dataset.meta = DatasetMeta {
        built_at: build_time(),
        ..dataset.meta
    };
    let mut w = create(&out)?;
    w.write_all(dataset.to_json()?.as_bytes())?;
    w.flush()?;
    Ok(())
}

struct ReportSinks {
    jsonl: Option<BufWriter<File>>,
    keep_for_plot: bool,
    kept: Vec<SafetyReport>,
}

impl ReportSinks {
    fn new(out: Option<PathBuf>, plot: bool) -> Result<Self> {
        Ok(Self {
            jsonl: out.as_deref().map(create).transpose()?,
            keep_for_plot: plot,
            kept: Vec::new(),
        })
    }

    fn push(&mut self, r: &SafetyReport) -> Result<()> {
        if let Some(w) = &mut self.jsonl {
            write_jsonl(w, r)?;
        }
        if self.keep_for_plot {
            self.kept.push(r.clone());
        }
        Ok(())
    }

    fn finish(mut self, config: &Config, summary: &Summary, summary_path: Option<&Path>, plot: Option<&Path>) -> Result<()> {
        if let Some(w) = &mut self.jsonl {
            w.flush()?;
        }
        if let Some(p) = summary_path {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, summary)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if let Some(p) = plot {
            std::fs::write(p, render_svg(&self.kept, &config.eval))?;
        }
        print_summary(summary);
        Ok(())
    }
}

fn print_summary(s: &Summary) {
    let pct = |n: u64| if s.frames == 0 { 0.0 } else { 100.0 * n as f64 / s.frames as f64 };
    println!("level    frames   share");
    println!("High   {:>8}  {:>5.1}%", s.high, pct(s.high));
    println!("Medium {:>8}  {:>5.1}%", s.medium, pct(s.medium));
    println!("Low    {:>8}  {:>5.1}%", s.low, pct(s.low));
    println!("total  {:>8}", s.frames);
    if let Some(success) = s.success() {
        println!(
            "success {:.1}% ({} safe frames, {} unsafe frames)",
            100.0 * success,
            s.labelled_safe,
            s.labelled_unsafe
        );
    }
}

pub fn cmd_evaluate(config: &Config, common: &CommonArgs, args: &EvaluateArgs) -> Result<()> {
    let dataset = Arc::new(SafetyDataset::load(&dataset_path(&args.dataset, config)?)?);
    let mut sinks = ReportSinks::new(output_path(common, config), args.plot.is_some())?;
    let summary = evaluate_stream(config, dataset, open_samples(&args.input)?, |r| sinks.push(r))?;
    sinks.finish(config, &summary, args.summary.as_deref(), args.plot.as_deref())
}

pub fn cmd_simulate(config: &Config, common: &CommonArgs, args: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let mut scenario: SyntheticScenario = toml::from_str(&text).map_err(|e| PsmError::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    let stream = generate_synthetic(&scenario, &config.body, config.sample_rate())?;
    if let Some(p) = &args.csv {
        let samples: Vec<_> = stream.iter().map(|s| s.sample).collect();
        let labels: Vec<_> = stream.iter().map(|s| s.unsafe_label).collect();
        let mut w = create(p)?;
        write_samples(&mut w, &samples, Some(&labels))?;
        w.flush()?;
    }
    let Some(ds) = args.dataset.clone().or_else(|| config.io.dataset.clone()) else {
        if args.csv.is_none() {
            return Err(PsmError::Config("simulate needs --csv or --dataset".into()));
        }
        return Ok(());
    };
    let dataset = Arc::new(SafetyDataset::load(&ds)?);
    let mut sinks = ReportSinks::new(output_path(common, config), args.plot.is_some())?;
    let items = stream.iter().map(|s| Ok((s.sample, Some(s.unsafe_label))));
    let summary = evaluate_stream(config, dataset, items, |r| sinks.push(r))?;
    sinks.finish(config, &summary, args.summary.as_deref(), args.plot.as_deref())
}

pub fn cmd_trace(config: &Config, common: &CommonArgs, args: &TraceArgs) -> Result<()> {
    let dataset = Arc::new(SafetyDataset::load(&dataset_path(&args.dataset, config)?)?);
    let mut monitor = Monitor::new(config, dataset)?;
    let mut out: Box<dyn Write> = match output_path(common, config) {
        Some(p) => Box::new(create(&p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for item in open_samples(&args.input)?.take(args.steps) {
        let (sample, label) = item?;
        let (record, _) = monitor.push(&sample, label)?;
        write_jsonl(&mut out, &record)?;
    }
    out.flush()?;
    Ok(())
}
