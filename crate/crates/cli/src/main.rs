use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cil_core::harness::{run_cil, run_cil_checkpointed, run_offline};
use cil_core::report::{average_gain_over_na, summarize};
use cil_core::synth::{CovarianceShape, SynthSpec};
use cil_core::{
    embeddings, generate_synthetic, min_cosine_distance, Dataset, HeadKind, Method, Preset,
    Reduction, RunConfig, RunRecord, SessionSchedule, Shots,
};

const THREADS_ENV: &str = "CIL_THREADS";

#[derive(Parser)]
#[command(
    name = "cil",
    version,
    about = "Replay-free class-incremental learning on embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a session schedule and print the line-JSON report.
    Run(RunArgs),
    /// Train on every class at once: the single-session ceiling.
    Offline(OfflineArgs),
    /// Minimum-cosine-distance dissimilarity between two embedding files.
    Similarity(SimilarityArgs),
    /// Write a synthetic train/test pair.
    Synth(SynthArgs),
    /// Print a preset session schedule as JSON.
    Split(SplitArgs),
    /// Aggregate run reports into a summary table and a per-session CSV.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Na,
    #[value(name = "fsa_full", alias = "fsa-full")]
    FsaFull,
    #[value(name = "fsa_film", alias = "fsa-film")]
    FsaFilm,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Na => Method::Na,
            MethodArg::FsaFull => Method::FsaFull,
            MethodArg::FsaFilm => Method::FsaFilm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Lda,
    Ncm,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, value_name = "METHOD")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "lda")]
    head: HeadArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ridge added to the shared covariance.
    #[arg(long, default_value_t = 1.0)]
    regularizer: f64,
    /// Adapter learning rate (defaults depend on the method).
    #[arg(long)]
    lr: Option<f64>,
    /// Adapter training epochs (defaults depend on the method).
    #[arg(long)]
    epochs: Option<usize>,
    /// Dataset name recorded in the report footer.
    #[arg(long)]
    dataset: Option<String>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ModelArgs {
    fn config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(self.method.into(), self.seed).with_head(match self.head {
            HeadArg::Lda => HeadKind::Lda,
            HeadArg::Ncm => HeadKind::Ncm,
        });
        cfg.regularizer = self.regularizer;
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        cfg
    }

    fn load(&self) -> Result<(Dataset, Dataset)> {
        Ok((load_dataset(&self.train)?, load_dataset(&self.test)?))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    schedule: PathBuf,
    /// Accept classes that reappear in later sessions.
    #[arg(long)]
    allow_overlap: bool,
    /// Persist the between-session state here and reload it before every
    /// session.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OfflineArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Shots per class: a positive count or "all".
    #[arg(long, default_value = "all", value_parser = parse_shots)]
    shots: Shots,
}

#[derive(Args)]
struct SimilarityArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    reduction: ReductionArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Mean,
    Median,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Isotropic clusters with far-apart means.
    Separated,
    /// Half the axes `--aspect-ratio` times noisier (default 10).
    Anisotropic,
    /// Class signal hidden behind per-feature scaling.
    Rescaled,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "separated")]
    kind: SynthKind,
    #[arg(long)]
    aspect_ratio: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving train.emb and test.emb.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["classes", "dataset", "embeddings"])))]
struct SplitArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: Preset,
    /// Total class count; ids are 0..N.
    #[arg(long)]
    classes: Option<usize>,
    /// Use the published shape for a benchmark dataset.
    #[arg(long)]
    dataset: Option<String>,
    /// Take the class ids from an embedding file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run reports (line JSON) to aggregate.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Write the mean accuracy per session as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_shots(s: &str) -> std::result::Result<Shots, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Shots::All);
    }
    match s.parse::<u32>() {
        Ok(n) if n > 0 => Ok(Shots::Count(n)),
        _ => Err(format!("expected a positive integer or \"all\", got {s:?}")),
    }
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: cil_core::Error| e.to_string())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = embeddings::EmbeddingReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut ds = Dataset::default();
    for record in reader {
        ds.push(record.with_context(|| format!("reading {}", path.display()))?)?;
    }
    if ds.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(ds)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_run(model: &ModelArgs, result: &cil_core::RunResult) -> Result<()> {
    log::info!(
        "{} seed {}: final {:.2}%, ppdr {:.2}, {:.2}s",
        result.method,
        result.seed,
        result.final_accuracy(),
        result.ppdr,
        result.wall_time
    );
    let mut out = output(model.output.as_deref())?;
    RunRecord::from_result(result, model.dataset.as_deref()).write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let schedule = SessionSchedule::load(&args.schedule)
        .with_context(|| format!("loading schedule {}", args.schedule.display()))?;
    let (train, test) = args.model.load()?;
    let mut cfg = args.model.config();
    cfg.allow_overlap = args.allow_overlap;
    let result = match &args.checkpoint_dir {
        Some(dir) => run_cil_checkpointed(&train, &test, &schedule, &cfg, dir)?,
        None => run_cil(&train, &test, &schedule, &cfg)?,
    };
    emit_run(&args.model, &result)
}

fn cmd_offline(args: &OfflineArgs) -> Result<()> {
    let (train, test) = args.model.load()?;
    let result = run_offline(&train, &test, args.shots, &args.model.config())?;
    emit_run(&args.model, &result)
}

#[derive(Serialize)]
struct Quantiles {
    p50: f64,
    p90: f64,
}

#[derive(Serialize)]
struct SimilarityOut {
    summary: f64,
    reduction: Reduction,
    quantiles: Quantiles,
    target_size: usize,
    reference_size: usize,
}

fn cmd_similarity(args: &SimilarityArgs) -> Result<()> {
    let features = |p: &Path| -> Result<Vec<Vec<f64>>> {
        Ok(load_dataset(p)?
            .records()
            .into_iter()
            .map(|r| r.features.into_inner())
            .collect())
    };
    let target = features(&args.target)?;
    let reference = features(&args.reference)?;
    let reduction = match args.reduction {
        ReductionArg::Mean => Reduction::Mean,
        ReductionArg::Median => Reduction::Median,
    };
    let rep = min_cosine_distance(&target, &reference, reduction)?;
    let out = SimilarityOut {
        summary: rep.summary,
        reduction,
        quantiles: Quantiles {
            p50: rep.quantile(0.5),
            p90: rep.quantile(0.9),
        },
        target_size: rep.target_size,
        reference_size: rep.reference_size,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match args.kind {
        SynthKind::Separated => SynthSpec {
            seed: args.seed,
            ..SynthSpec::default()
        },
        SynthKind::Anisotropic => {
            SynthSpec::anisotropic(args.aspect_ratio.unwrap_or(10.0), args.seed)
        }
        SynthKind::Rescaled => SynthSpec::rescaled(args.seed),
    };
    if let Some(c) = args.classes {
        spec.classes = c;
    }
    if let Some(d) = args.dim {
        spec.dim = d;
        if spec.informative_dims.is_some_and(|m| m > d) {
            spec.informative_dims = Some(d);
        }
    }
    if let Some(n) = args.train_per_class {
        spec.train_per_class = n;
    }
    if let Some(n) = args.test_per_class {
        spec.test_per_class = n;
    }
    if let Some(aspect_ratio) = args.aspect_ratio {
        spec.covariance = CovarianceShape::Anisotropic { aspect_ratio };
    }
    let (train, test) = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (name, records) in [("train.emb", &train), ("test.emb", &test)] {
        let path = args.out_dir.join(name);
        embeddings::write_embeddings(&path, records)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!(
        "wrote {} train and {} test records to {}",
        train.len(),
        test.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_split(args: &SplitArgs) -> Result<()> {
    let schedule = if let Some(name) = &args.dataset {
        let Some((total, shape)) = args.preset.dataset_shape(name) else {
            bail!("no published {} shape for dataset {name:?}", args.preset);
        };
        shape.build(&(0..total as u32).collect::<Vec<_>>())?
    } else if let Some(path) = &args.embeddings {
        let ids = load_dataset(path)?.class_ids();
        args.preset.shape(ids.len()).build(&ids)?
    } else {
        let n = args.classes.expect("clap enforces one source");
        cil_core::preset_schedule(args.preset, n)?
    };
    let mut out = output(args.output.as_deref())?;
    writeln!(out, "{}", schedule.to_json())?;
    out.flush()?;
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|p| {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            RunRecord::read_jsonl(BufReader::new(f))
                .with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = summarize(&runs);

    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<16} {:<9} {:>4} {:>10} {:>7}",
        "dataset", "method", "runs", "last top1", "ppdr"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{:<16} {:<9} {:>4} {:>10.1} {:>7.1}",
            r.dataset, r.method, r.runs, r.final_top1, r.ppdr
        )?;
    }
    let gains = average_gain_over_na(&rows);
    if !gains.is_empty() {
        writeln!(out)?;
        for (method, gain) in gains.iter().filter(|(m, _)| **m != Method::Na) {
            writeln!(out, "{method:<9} average gain over na: {gain:+.1}")?;
        }
    }

    if let Some(path) = &args.csv {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["dataset", "method", "session", "top1"])?;
        for r in &rows {
            for (i, acc) in r.per_session.iter().enumerate() {
                w.write_record([
                    r.dataset.clone(),
                    r.method.to_string(),
                    (i + 1).to_string(),
                    format!("{acc:.1}"),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Offline(a) => cmd_offline(a),
        Command::Similarity(a) => cmd_similarity(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
