use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use driftcast::ingest::{
    generate_synthetic, load_series, parse_load_csv, resample_and_fill, save_series, segment_days, write_load_csv,
    CsvSchema, SyntheticSpec,
};
use driftcast::pipeline::{self, ModeName, PipelineError, RunConfig};
use driftcast::{Error, EvaluationReport};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "driftcast", version, about = "Drift-adaptive LSTM load forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a consumption CSV, fill short gaps and write a canonical series file.
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the segmentation report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        max_gap: u64,
        #[arg(long, default_value = "timestamp")]
        timestamp_column: String,
        #[arg(long, default_value = "consumption_kwh")]
        value_column: String,
    },
    /// Generate a synthetic consumption CSV from a TOML profile.
    Synth {
        /// Profile with `noise_sd`, `[profile]` and `[[events]]`; defaults apply when omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run baseline, passive or active adaptation over one or more series.
    Run {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Series file (.json) or consumption CSV (.csv); repeat for several households.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Report path for a single input, or a directory for several.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel input files; each stream itself is processed sequentially.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare candidate reports against a baseline report.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long = "candidate", required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a report as text or its daily errors as CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Passive,
    Active,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

const INPUT_ERROR: u8 = 2;
const CONFIG_ERROR: u8 = 3;
const RUNTIME_ERROR: u8 = 4;

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: INPUT_ERROR, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self { code: CONFIG_ERROR, message: message.into() }
    }
}

fn pipeline_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) => CONFIG_ERROR,
        PipelineError::Ingest(_) | PipelineError::MismatchedRuns(_) | PipelineError::NoTrainingWindows(_) => {
            INPUT_ERROR
        }
        _ => RUNTIME_ERROR,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Json { .. } | Error::Ingest(_) => INPUT_ERROR,
            Error::Config(_) => CONFIG_ERROR,
            Error::Pipeline(p) => pipeline_code(p),
            _ => RUNTIME_ERROR,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self { code: pipeline_code(&e), message: e.to_string() }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn ingest(csv: &Path, out: &Path, report: Option<&Path>, max_gap: u64, schema: CsvSchema) -> Result<(), Failure> {
    let raw = parse_load_csv(csv, &schema)?;
    let filled = resample_and_fill(&raw, max_gap).map_err(Error::from)?;
    let seg = segment_days(&filled).map_err(Error::from)?;
    save_series(&filled, out)?;
    let text = serde_json::to_string_pretty(&seg.report()).expect("report serializes") + "\n";
    match report {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth(profile: Option<&Path>, seed: u64, days: usize, out: &Path) -> Result<(), Failure> {
    let spec = match profile {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Failure::input(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Failure::config(format!("invalid profile {}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    let series = generate_synthetic(&spec.profile, &spec.events, spec.noise_sd, seed, days)
        .map_err(|e| Failure::config(e.to_string()))?;
    let file =
        std::fs::File::create(out).map_err(|e| Failure::input(format!("cannot write {}: {e}", out.display())))?;
    write_load_csv(&series, file).map_err(|e| Failure::input(format!("cannot write {}: {e}", out.display())))
}

struct RunArgs {
    mode: Option<Mode>,
    tau: Option<f64>,
    config: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    jobs: usize,
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Failure::input(e.to_string()),
            _ => Failure::config(e.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = match m {
            Mode::Baseline => ModeName::Baseline,
            Mode::Passive => ModeName::Passive,
            Mode::Active => ModeName::Active,
        };
        if cfg.mode != ModeName::Active {
            cfg.tau = None;
        }
    }
    if args.tau.is_some() {
        cfg.tau = args.tau;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if !args.inputs.is_empty() {
        cfg.input = args.inputs.first().cloned();
    }
    if args.out.is_some() {
        cfg.output = args.out.clone();
    }
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    if args.jobs == 0 {
        return Err(Failure::config("--jobs must be >= 1"));
    }
    Ok(cfg)
}

fn report_name(input: &Path, cfg: &RunConfig) -> String {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    match cfg.tau {
        Some(t) => format!("{stem}.active-{t}.json"),
        None => format!("{stem}.{}.json", serde_json::to_value(cfg.mode).unwrap().as_str().unwrap()),
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&args)?;
    let inputs = if args.inputs.is_empty() {
        cfg.input.clone().into_iter().collect()
    } else {
        args.inputs.clone()
    };
    if inputs.is_empty() {
        return Err(Failure::config("no input: pass --input or set `input` in the config"));
    }
    let targets: Vec<Option<PathBuf>> = match (&cfg.output, inputs.len()) {
        (None, _) => vec![None; inputs.len()],
        (Some(out), 1) => vec![Some(out.clone())],
        (Some(dir), _) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
            inputs.iter().map(|i| Some(dir.join(report_name(i, &cfg)))).collect()
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Failure { code: RUNTIME_ERROR, message: e.to_string() })?;
    let results: Vec<Result<EvaluationReport, Failure>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let series = load_series(input)?;
                Ok(pipeline::run(&cfg, &series)?)
            })
            .collect()
    });

    for ((input, target), result) in inputs.iter().zip(&targets).zip(results) {
        let report = result.map_err(|f| Failure { message: format!("{}: {}", input.display(), f.message), ..f })?;
        match target {
            Some(path) => {
                report.save(path)?;
                eprintln!(
                    "{}: {} mean MAPE {:.3}, {} adaptations -> {}",
                    input.display(),
                    report.mode,
                    report.mean_mape,
                    report.adaptation_count,
                    path.display()
                );
            }
            None => print!("{}", report.to_json()),
        }
    }
    Ok(())
}

fn compare(baseline: &Path, candidates: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let base = EvaluationReport::load(baseline)?;
    let cands = candidates.iter().map(EvaluationReport::load).collect::<Result<Vec<_>, _>>()?;
    let table = pipeline::compare(&base, &cands)?;
    if let Some(path) = out {
        write_file(path, &(serde_json::to_string_pretty(&table).expect("table serializes") + "\n"))?;
    }
    print!("{}", table.render_text());
    Ok(())
}

fn report(input: &Path, format: Format) -> Result<(), Failure> {
    let r = EvaluationReport::load(input)?;
    match format {
        Format::Text => print!("{}", r.render_text()),
        Format::Csv => print!("{}", r.daily_errors_csv().map_err(|e| Failure::input(e.to_string()))?),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { csv, out, report, max_gap, timestamp_column, value_column } => {
            ingest(&csv, &out, report.as_deref(), max_gap, CsvSchema { timestamp_column, value_column })
        }
        Command::Synth { profile, seed, days, out } => synth(profile.as_deref(), seed, days, &out),
        Command::Run { mode, tau, config, inputs, out, seed, jobs } => {
            run(RunArgs { mode, tau, config, inputs, out, seed, jobs })
        }
        Command::Compare { baseline, candidates, out } => compare(&baseline, &candidates, out.as_deref()),
        Command::Report { input, format } => report(&input, format),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
