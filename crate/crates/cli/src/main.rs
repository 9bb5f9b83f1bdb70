use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cadenza_core::audiology::{four_frequency_average, classify_severity, load_listeners, mean_ear_severity, Listener};
use cadenza_core::config::Config;
use cadenza_core::enhancer::{EnhancerConfig, ExternalStemsSeparator, OracleSeparator, System};
use cadenza_core::error::HarnessError;
use cadenza_core::harness::probe::{
    causal_fir_fixture, causal_lowpass_taps, global_normalizer_fixture, lookahead_limiter_fixture, mixture_processor, oracle_pipeline_processor,
};
use cadenza_core::harness::{
    analysis_report, causality_probe, dataset_sample_rate, evaluate_run, produce_submission, read_records, validate_submission, write_records,
    EvaluateOptions, SubmissionManifest,
};
use cadenza_core::scene::{build_scene_dataset, load_hrir_index, load_tracks, Dataset, Mode};
use cadenza_core::synth::{synthetic_hrir_sets, synthetic_listeners, synthetic_tracks};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "cadenza", version, about = "Scene generation, enhancement, evaluation and analysis for hearing-aware music remixing")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Default dataset directory.
    #[arg(long, global = true, env = "CADENZA_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scene manifests and datasets.
    Scenes {
        #[command(subcommand)]
        action: ScenesCmd,
    },
    /// Run an enhancement system over a dataset.
    Enhance {
        #[command(subcommand)]
        action: EnhanceCmd,
    },
    /// Check submission directories.
    Submission {
        #[command(subcommand)]
        action: SubmissionCmd,
    },
    /// Score a submission and write the records CSV.
    Evaluate(EvaluateArgs),
    /// Leaderboards and statistics over records.
    Report {
        #[command(subcommand)]
        action: ReportCmd,
    },
    /// Audit processors for future-sample dependence.
    Probe {
        #[command(subcommand)]
        action: ProbeCmd,
    },
    /// Inspect listener manifests.
    Listeners {
        #[command(subcommand)]
        action: ListenersCmd,
    },
}

#[derive(Subcommand)]
enum ScenesCmd {
    Generate(GenerateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory (defaults to the data root).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Number of scenes; all eligible when omitted.
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    listeners_per_scene: Option<usize>,
    /// Source tracks as `<dir>/<track>/{vocals,drums,bass,other}.wav`.
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Listener manifest JSON.
    #[arg(long)]
    listeners: Option<PathBuf>,
    /// HRIR index JSON.
    #[arg(long)]
    hrirs: Option<PathBuf>,
    /// Use generated tracks, listeners and HRIRs where no files are given.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Subcommand)]
enum EnhanceCmd {
    Run(EnhanceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemKind {
    Oracle,
    Passthrough,
    ExternalStems,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Submission directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    system: SystemKind,
    #[arg(long)]
    system_id: Option<String>,
    /// Pre-separated stems for `external-stems`.
    #[arg(long)]
    stems: Option<PathBuf>,
    /// Declared lookahead of the external separator; omit for non-causal.
    #[arg(long)]
    lookahead_ms: Option<f64>,
}

#[derive(Subcommand)]
enum SubmissionCmd {
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ValidateArgs {
    submission: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    submission: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Records CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Score even if validation fails.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum ReportCmd {
    Stats(StatsArgs),
}

#[derive(Args)]
struct StatsArgs {
    /// One or more records CSV files.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
}

#[derive(Subcommand)]
enum ProbeCmd {
    Causality(ProbeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Fir,
    Limiter,
    Normalizer,
    Passthrough,
    Oracle,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long, value_enum)]
    fixture: Fixture,
    /// Lookahead of the limiter fixture.
    #[arg(long, default_value_t = 4.0)]
    lookahead_ms: f64,
    #[arg(long)]
    bound_ms: Option<f64>,
    #[arg(long, default_value_t = 44_100)]
    sample_rate: u32,
}

#[derive(Subcommand)]
enum ListenersCmd {
    Inspect(InspectArgs),
}

#[derive(Args)]
struct InspectArgs {
    /// Listener manifest; defaults to the data root's.
    file: Option<PathBuf>,
}

/// `Ok(false)` means a check ran and failed.
type Outcome = Result<bool>;

struct Ctx {
    config: Config,
    seed: u64,
    data_root: Option<PathBuf>,
}

impl Ctx {
    fn dataset_dir(&self, given: Option<&PathBuf>) -> Result<PathBuf> {
        given
            .or(self.data_root.as_ref())
            .cloned()
            .context("no dataset directory: pass --dataset or set --data-root / CADENZA_DATA_ROOT")
    }

    fn open_dataset(&self, given: Option<&PathBuf>) -> Result<Dataset> {
        let dir = self.dataset_dir(given)?;
        Dataset::open(&dir).with_context(|| format!("opening dataset {}", dir.display()))
    }
}

fn scenes_generate(ctx: &Ctx, a: &GenerateArgs) -> Outcome {
    let sc = &ctx.config.scenes;
    let out = a.out.clone().map_or_else(|| ctx.dataset_dir(None), Ok)?;
    let mut cfg = sc.dataset_config();
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if a.scenes.is_some() {
        cfg.scenes = a.scenes;
    }
    if a.listeners_per_scene.is_some() {
        cfg.listeners.per_scene = a.listeners_per_scene;
    }
    let need_synthetic = |what: &str| -> Result<()> {
        if a.synthetic {
            Ok(())
        } else {
            bail!("no {what} given; pass --{what} or --synthetic")
        }
    };
    let tracks = match &a.tracks {
        Some(dir) => load_tracks(dir)?,
        None => {
            need_synthetic("tracks")?;
            synthetic_tracks(sc.synthetic_tracks, sc.sample_rate, sc.track_seconds, ctx.seed)
        }
    };
    let listeners: Vec<Listener> = match &a.listeners {
        Some(p) => {
            let loaded = load_listeners(p)?;
            for w in &loaded.warnings {
                log::warn!("{w}");
            }
            loaded.listeners
        }
        None => {
            need_synthetic("listeners")?;
            synthetic_listeners(sc.synthetic_listeners)
        }
    };
    let hrirs = match (&a.hrirs, cfg.mode) {
        (Some(p), _) => load_hrir_index(p)?,
        (None, Mode::Cad1) => Vec::new(),
        (None, Mode::Icassp24) => {
            need_synthetic("hrirs")?;
            let fs = tracks.first().map_or(sc.sample_rate, |t| t.stems.sample_rate());
            synthetic_hrir_sets(sc.synthetic_subjects, fs, ctx.seed)
        }
    };
    let ds = build_scene_dataset(&tracks, &listeners, &hrirs, &cfg, ctx.seed, &out)?;
    println!("{} scenes, {} pairs -> {}", ds.scenes.len(), ds.pair_count(), out.display());
    Ok(true)
}

fn enhance_run(ctx: &Ctx, a: &EnhanceArgs) -> Outcome {
    let dataset = ctx.open_dataset(a.dataset.as_ref())?;
    let cfg: EnhancerConfig = ctx.config.enhancer.resolve();
    let (system, default_id) = match a.system {
        SystemKind::Passthrough => (System::Passthrough, "passthrough"),
        SystemKind::Oracle => (
            System::Pipeline {
                cfg,
                separator: Box::new(OracleSeparator::from_dataset(dataset.clone())),
            },
            "oracle",
        ),
        SystemKind::ExternalStems => {
            let dir = a.stems.clone().context("--stems is required for external-stems")?;
            (
                System::Pipeline {
                    cfg,
                    separator: Box::new(ExternalStemsSeparator::new(dir, a.lookahead_ms.unwrap_or(f64::INFINITY))),
                },
                "external",
            )
        }
    };
    let id = a.system_id.as_deref().unwrap_or(default_id);
    let s = produce_submission(&dataset, &system, id, &a.out)?;
    println!("{id}: {} files, {} clipped samples -> {}", s.files, s.clipped_samples, a.out.display());
    Ok(true)
}

fn submission_validate(ctx: &Ctx, a: &ValidateArgs) -> Outcome {
    let dataset = ctx.open_dataset(a.dataset.as_ref())?;
    let manifest = SubmissionManifest::load(&a.submission)?;
    let fs = dataset_sample_rate(&dataset)?;
    let report = validate_submission(&a.submission, &manifest, &dataset.scenes, fs);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.pass)
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Outcome {
    let dataset = ctx.open_dataset(a.dataset.as_ref())?;
    let backend = ctx.config.metric.backend()?;
    let opts = EvaluateOptions {
        force: a.force,
        nalr_taps: ctx.config.enhancer.resolve().nalr_taps,
    };
    let run = evaluate_run(&a.submission, &dataset, backend.as_ref(), &opts)?;
    write_records(&a.out, &run.records)?;
    println!(
        "{}: {} records ({} failed) -> {}",
        run.system_id,
        run.records.len(),
        run.failures(),
        a.out.display()
    );
    Ok(true)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report_stats(a: &StatsArgs) -> Outcome {
    let mut records = Vec::new();
    for p in &a.records {
        records.extend(read_records(p)?);
    }
    let report = analysis_report(&records, a.alpha);
    let md = report.to_markdown();
    if let Some(p) = &a.json {
        write_text(p, &report.to_json())?;
    }
    if let Some(p) = &a.markdown {
        write_text(p, &md)?;
    }
    print!("{md}");
    Ok(true)
}

fn probe_causality(ctx: &Ctx, a: &ProbeArgs) -> Outcome {
    let mut cfg = ctx.config.probe.resolve(ctx.seed);
    if let Some(b) = a.bound_ms {
        cfg.bound_ms = b;
    }
    let fs = a.sample_rate;
    let (report, declared) = match a.fixture {
        Fixture::Fir => (causality_probe(&mixture_processor(causal_fir_fixture(causal_lowpass_taps(64))), fs, &cfg)?, 0.0),
        Fixture::Limiter => (
            causality_probe(&mixture_processor(lookahead_limiter_fixture(a.lookahead_ms, 0.5)), fs, &cfg)?,
            a.lookahead_ms,
        ),
        Fixture::Normalizer => (causality_probe(&mixture_processor(global_normalizer_fixture()), fs, &cfg)?, 0.0),
        Fixture::Passthrough => (
            causality_probe(&mixture_processor(|x: &cadenza_core::dsp::AudioBuffer| Ok::<_, HarnessError>(x.clone())), fs, &cfg)?,
            0.0,
        ),
        Fixture::Oracle => (causality_probe(&oracle_pipeline_processor(ctx.config.enhancer.resolve(), 0.0), fs, &cfg)?, 0.0),
    };
    let mismatch = report.measured_dependence_ms.is_none_or(|m| m > declared + 1000.0 / fs as f64);
    let out = serde_json::json!({
        "declared_lookahead_ms": declared,
        "measured_dependence_ms": report.measured_dependence_ms,
        "bound_ms": cfg.bound_ms,
        "pass": report.pass,
        "declaration_mismatch": mismatch,
        "violations_s": report.violations,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(report.pass)
}

fn listeners_inspect(ctx: &Ctx, a: &InspectArgs) -> Outcome {
    let path = match &a.file {
        Some(p) => p.clone(),
        None => ctx.dataset_dir(None)?.join("listeners.json"),
    };
    let loaded = load_listeners(&path)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    println!("{:<12} {:>8} {:>8}  {:<18} {:<18} {:<18}", "id", "4FA L", "4FA R", "left", "right", "mean ear");
    for l in &loaded.listeners {
        let (fl, fr) = (four_frequency_average(&l.left), four_frequency_average(&l.right));
        println!(
            "{:<12} {:>8.1} {:>8.1}  {:<18} {:<18} {:<18}",
            l.id,
            fl,
            fr,
            classify_severity(fl).label(),
            classify_severity(fr).label(),
            mean_ear_severity(l).label()
        );
    }
    Ok(true)
}

fn run(cli: Cli) -> Outcome {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let jobs = cli.jobs.or(config.jobs);
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(config.seed).unwrap_or(DEFAULT_SEED),
        data_root: cli.data_root.clone().or_else(|| config.data_root.clone()),
        config,
    };
    match &cli.command {
        Command::Scenes { action: ScenesCmd::Generate(a) } => scenes_generate(&ctx, a),
        Command::Enhance { action: EnhanceCmd::Run(a) } => enhance_run(&ctx, a),
        Command::Submission {
            action: SubmissionCmd::Validate(a),
        } => submission_validate(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Report { action: ReportCmd::Stats(a) } => report_stats(a),
        Command::Probe { action: ProbeCmd::Causality(a) } => probe_causality(&ctx, a),
        Command::Listeners {
            action: ListenersCmd::Inspect(a),
        } => listeners_inspect(&ctx, a),
    }
}

/// Causes are appended unless the message above already includes them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            let not_validated = e.downcast_ref::<HarnessError>().is_some_and(|h| matches!(h, HarnessError::NotValidated(_)));
            ExitCode::from(if not_validated { 1 } else { 2 })
        }
    }
}
