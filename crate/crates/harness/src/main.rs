use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jointinf_core::Fixture;
use jointinf_harness::config::{parse_seeds, ExperimentConfig, Method, TaskSource};
use jointinf_harness::dataset::TaskFile;
use jointinf_harness::error::{HarnessError, Result};
use jointinf_harness::estimators::{compare_estimators, CompareConfig};
use jointinf_harness::experiment::{load_task, read_manifest, run_experiment, write_json, Backend};
use jointinf_harness::render_report;
use jointinf_remote::WireLogFilter;

/// Joint inference experiments over a frozen model.
#[derive(Parser)]
#[command(name = "jointinf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a task file (dataset plus frozen model) for a fixture or a
    /// config's task section.
    GenTask {
        #[arg(long, conflicts_with = "config")]
        fixture: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; the task is written to `task.json` inside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive argmax of the joint objective (tiny tasks only).
    SolveExact(RunArgs),
    /// Unsupervised fine-tuning of a task encoder.
    TrainUft(RunArgs),
    /// Multi-turn unsupervised in-context learning.
    RunUicl(RunArgs),
    /// Independent zero-shot predictions.
    RunZeroShot(RunArgs),
    /// Run the config's method over all its sweep cells.
    Sweep(RunArgs),
    /// Paired naive vs low-variance estimator training runs.
    CompareEstimators {
        /// Optional TOML with the comparison settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Render SVG plots for an output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML), or a `manifest.json` from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`, then `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, overriding the config: `0,1,2` or `0..5`.
    #[arg(long)]
    seeds: Option<String>,
    /// Maximum number of cells run at once.
    #[arg(long)]
    parallel: Option<usize>,
}

fn init_logging() {
    let inner = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).build();
    let level = inner.filter();
    if log::set_boxed_logger(Box::new(WireLogFilter::new(inner))).is_ok() {
        log::set_max_level(level);
    }
}

fn load_config(path: &Path) -> Result<(ExperimentConfig, String)> {
    if path.extension().is_some_and(|e| e == "json") {
        let manifest = read_manifest(path)?;
        let mut cfg = ExperimentConfig::from_toml(&manifest.config)?;
        let base = manifest.config_dir.clone().unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
        cfg.resolve_paths(&base);
        return Ok((cfg, manifest.config));
    }
    ExperimentConfig::load(path)
}

fn run(args: RunArgs, method: Option<Method>) -> Result<ExitCode> {
    let (mut cfg, text) = load_config(&args.config)?;
    if let Some(m) = method {
        if m != cfg.method {
            log::info!("running {} instead of the config's {}", m.name(), cfg.method.name());
            cfg.method = m;
        }
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    cfg.validate()?;
    let out = args
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let parallel = args
        .parallel
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = run_experiment(&cfg, &text, &out, parallel)?;
    let failed = outcome.num_failed();
    println!("{} cells, {} failed; results in {}", outcome.rows.len(), failed, out.display());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn gen_task(fixture: Option<String>, config: Option<PathBuf>, out: &Path) -> Result<ExitCode> {
    let tf = match (fixture, config) {
        (Some(id), _) => {
            let fx = Fixture::from_id(&id)?;
            let (ds, model) = fx.load()?;
            TaskFile::from_synthetic(ds, &model, Some(fx.config()))
        }
        (None, Some(path)) => {
            let (cfg, _) = ExperimentConfig::load(&path)?;
            let generator = match &cfg.task {
                TaskSource::Fixture { fixture } => Some(fixture.config()),
                TaskSource::Synthetic { synthetic } => Some(synthetic.clone()),
                _ => None,
            };
            let task = load_task(&cfg)?;
            match &task.backend {
                Backend::Local(model) => TaskFile::from_synthetic(task.dataset, model, generator),
                Backend::Remote { .. } => TaskFile { dataset: task.dataset, model: None, generator: None },
            }
        }
        (None, None) => return Err(HarnessError::Config("gen-task needs --fixture or --config".into())),
    };
    std::fs::create_dir_all(out).map_err(|source| HarnessError::Io { path: out.to_path_buf(), source })?;
    let path = out.join("task.json");
    tf.write(&path)?;
    println!("wrote {} ({} instances)", path.display(), tf.dataset.len());
    Ok(ExitCode::SUCCESS)
}

fn compare(config: Option<PathBuf>, out: &Path, seeds: Option<String>) -> Result<ExitCode> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io { path, source })?;
            toml::from_str(&text)?
        }
        None => CompareConfig::default(),
    };
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(&s)?;
    }
    let report = compare_estimators(&cfg)?;
    report.write(out)?;
    write_json(&out.join("compare_config.json"), &cfg)?;
    println!(
        "low-variance ends at least as high on {}/{} seeds; results in {}",
        report.low_variance_wins,
        report.finals.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTask { fixture, config, out } => gen_task(fixture, config, &out),
        Command::SolveExact(a) => run(a, Some(Method::BruteForce)),
        Command::TrainUft(a) => run(a, Some(Method::Uft)),
        Command::RunUicl(a) => run(a, Some(Method::Uicl)),
        Command::RunZeroShot(a) => run(a, Some(Method::ZeroShot)),
        Command::Sweep(a) => run(a, None),
        Command::CompareEstimators { config, out, seeds } => compare(config, &out, seeds),
        Command::Report { out } => render_report(&out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
