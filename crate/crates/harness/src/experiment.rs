//! Sweep execution: one cell per (method, N, gamma, seed), each writing its
//! own trace, predictions and checkpoint, plus the shared `metrics.csv`,
//! `timings.csv` and `manifest.json`.
//!
//! `metrics.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `cell` | cell id, also the stem of its trace/prediction files |
//! | `method` | `ZERO_SHOT`, `UICL`, `UFT`, `BRUTE_FORCE` or `SUPERVISED_ICL` |
//! | `context_size` | N |
//! | `gamma` | prior-entropy weight (UFT only) |
//! | `seed` | seed from the config's seed list |
//! | `steps` | UFT iterations or UICL turns completed |
//! | `status` | `OK` or `FAILED` |
//! | `accuracy` | empty without gold labels |
//! | `objective` | `J^N` of the final labeling |
//! | `objective_std_error` | 0 when computed exactly |
//! | `objective_exact` | `true` if enumerated, `false` if Monte Carlo |
//! | `label_entropy` | entropy of the predicted label histogram over `ln K` |
//! | `error` | failure message for `FAILED` rows |
//!
//! Wall-clock times go to `timings.csv` (`cell,wall_clock_secs`) so that
//! `metrics.csv` is byte-identical across reruns.
//!
//! Cell seeds come from [`cell_seed`]: the master seed, a hash of the cell's
//! sweep coordinates and the listed seed feed a counter-based derivation, so
//! adding cells or seeds never changes the seed of an existing cell.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use jointinf_core::math::{entropy, permutations};
use jointinf_core::rng::{derive_seed, stream};
use jointinf_core::synthetic::SyntheticModel;
use jointinf_core::uft::{normalized_prior_entropy, predict_all, train_uft, TaskEncoder};
use jointinf_core::uicl::{
    run_uicl_with, summarize_turn, supervised_icl, zero_shot_predictions, AnswerSampler, ModelSampler, SampledAnswer,
    TurnState, TurnSummary, UiclConfig,
};
use jointinf_core::{
    brute_force_argmax, exact_joint_objective, mc_joint_objective, IndexedScorer, Labeling, ObjectiveEstimate,
    SolverConfig, SupportContext, TaskDataset,
};
use jointinf_remote::{ChatClient, PromptTemplate, RemoteSampler};

use crate::config::{ExperimentConfig, Method, TaskSource};
use crate::dataset::{load_dataset, read_jsonl, TaskFile};
use crate::error::{HarnessError, IoContext, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Where answers come from: a local model with log-probabilities, or a chat
/// backend that can only be sampled.
pub enum Backend {
    Local(SyntheticModel),
    Remote { client: ChatClient, template: PromptTemplate },
}

pub struct LoadedTask {
    pub dataset: TaskDataset,
    pub backend: Backend,
}

pub fn load_task(cfg: &ExperimentConfig) -> Result<LoadedTask> {
    let local = |dataset, model| Ok(LoadedTask { dataset, backend: Backend::Local(model) });
    match &cfg.task {
        TaskSource::Fixture { fixture } => {
            let (ds, model) = fixture.load()?;
            local(ds, model)
        }
        TaskSource::Synthetic { synthetic } => {
            let (ds, model) = jointinf_core::generate_synthetic_task(synthetic)?;
            local(ds, model)
        }
        TaskSource::TaskFile { path } => {
            let tf = TaskFile::read(path)?;
            match tf.synthetic_model()? {
                Some(model) => local(tf.dataset, model),
                None => remote(cfg, tf.dataset, "features"),
            }
        }
        TaskSource::Jsonl { path, model: Some(params), .. } => {
            let ds = read_jsonl(path)?;
            local(ds, SyntheticModel::new(params.clone())?)
        }
        TaskSource::Jsonl { path, template, model: None } => {
            let ds = load_dataset(path, template)?;
            remote(cfg, ds, template)
        }
    }
}

fn remote(cfg: &ExperimentConfig, dataset: TaskDataset, template: &str) -> Result<LoadedTask> {
    let backend = cfg
        .backend
        .clone()
        .ok_or_else(|| HarnessError::Config("a task without a local model needs a [backend] section".into()))?;
    let template = PromptTemplate::builtin(template)?;
    template.check_round_trip(&dataset.answer_set)?;
    Ok(LoadedTask { dataset, backend: Backend::Remote { client: ChatClient::new(backend)?, template } })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub context_size: usize,
    pub gamma: Option<f64>,
    pub seed: u64,
}

impl Cell {
    /// Sweep coordinates without the seed.
    pub fn key(&self) -> String {
        match self.gamma {
            Some(g) => format!("{}/n={}/gamma={}", self.method.name(), self.context_size, g),
            None => format!("{}/n={}", self.method.name(), self.context_size),
        }
    }

    /// File-name-safe id, unique within a sweep.
    pub fn id(&self) -> String {
        let mut id = format!("{}_n{}", self.method.name().to_lowercase(), self.context_size);
        if let Some(g) = self.gamma {
            id.push_str(&format!("_g{g}"));
        }
        id.push_str(&format!("_s{}", self.seed));
        id
    }
}

/// `derive_seed(master, [first 8 bytes of sha256(cell key), seed])`.
pub fn cell_seed(master: u64, cell: &Cell) -> u64 {
    let digest = Sha256::digest(cell.key().as_bytes());
    let mut prefix = [0u8; 8];
    prefix.copy_from_slice(&digest[..8]);
    derive_seed(master, &[u64::from_le_bytes(prefix), cell.seed])
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let gammas: Vec<Option<f64>> =
        if cfg.method == Method::Uft { cfg.gammas().into_iter().map(Some).collect() } else { vec![None] };
    let mut out = Vec::new();
    for &n in &cfg.context_sizes() {
        for &gamma in &gammas {
            for &seed in &cfg.seeds {
                out.push(Cell { method: cfg.method, context_size: n, gamma, seed });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: String,
    pub method: Method,
    pub context_size: usize,
    pub gamma: Option<f64>,
    pub seed: u64,
    pub steps: usize,
    pub status: String,
    pub accuracy: Option<f64>,
    pub objective: Option<f64>,
    pub objective_std_error: Option<f64>,
    pub objective_exact: Option<bool>,
    pub label_entropy: Option<f64>,
    pub error: Option<String>,
}

impl MetricsRow {
    pub fn failed(&self) -> bool {
        self.status == "FAILED"
    }
}

#[derive(Clone, Debug, Default)]
struct CellOutput {
    steps: usize,
    predictions: Vec<Option<usize>>,
    objective: Option<ObjectiveEstimate>,
}

pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    pub out_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn num_failed(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }
}

/// Runs every cell of the sweep with at most `parallel` cells at once and
/// writes all outputs under `out_dir`. Cell failures become `FAILED` rows;
/// only I/O and setup errors abort the run.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, out_dir: &Path, parallel: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    for sub in ["traces", "predictions", "checkpoints"] {
        fs::create_dir_all(out_dir.join(sub)).at(out_dir.join(sub))?;
    }
    let task = load_task(cfg)?;
    let cells = cells(cfg);
    let run = |cell: &Cell| {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run_cell(cfg, &task, cell, out_dir)))
            .unwrap_or_else(|p| Err(HarnessError::Config(format!("cell panicked: {}", panic_message(&p)))));
        (result, t0.elapsed().as_secs_f64())
    };
    let results = run_cells(&cells, parallel, run)?;

    let mut rows = Vec::with_capacity(cells.len());
    let mut timings = csv::Writer::from_path(out_dir.join(TIMINGS_FILE))?;
    timings.write_record(["cell", "wall_clock_secs"])?;
    for (cell, (result, secs)) in cells.iter().zip(results) {
        timings.write_record([cell.id(), format!("{secs:.3}")])?;
        rows.push(metrics_row(cell, &task.dataset, result));
    }
    timings.flush().at(out_dir.join(TIMINGS_FILE))?;
    write_metrics(&out_dir.join(METRICS_FILE), &rows)?;
    write_manifest(cfg, config_text, &cells, out_dir)?;
    for row in rows.iter().filter(|r| r.failed()) {
        log::error!("cell {} failed: {}", row.cell, row.error.as_deref().unwrap_or(""));
    }
    Ok(ExperimentOutcome { rows, out_dir: out_dir.to_path_buf() })
}

#[cfg(feature = "parallel")]
fn run_cells<T, F>(cells: &[Cell], parallel: usize, run: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Cell) -> T + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(&run).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_cells<T, F>(cells: &[Cell], _parallel: usize, run: F) -> Result<Vec<T>>
where
    F: Fn(&Cell) -> T,
{
    Ok(cells.iter().map(run).collect())
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn metrics_row(cell: &Cell, ds: &TaskDataset, result: Result<CellOutput>) -> MetricsRow {
    let mut row = MetricsRow {
        cell: cell.id(),
        method: cell.method,
        context_size: cell.context_size,
        gamma: cell.gamma,
        seed: cell.seed,
        steps: 0,
        status: "OK".into(),
        accuracy: None,
        objective: None,
        objective_std_error: None,
        objective_exact: None,
        label_entropy: None,
        error: None,
    };
    match result {
        Ok(out) => {
            row.steps = out.steps;
            row.accuracy = ds.gold.as_ref().map(|gold| {
                let hits = out.predictions.iter().zip(gold).filter(|(p, g)| **p == Some(**g)).count();
                hits as f64 / gold.len() as f64
            });
            if let Some(o) = out.objective {
                row.objective = Some(o.value);
                row.objective_std_error = Some(o.std_error);
                row.objective_exact = Some(o.is_exact());
            }
            row.label_entropy = Some(label_entropy(&out.predictions, ds.num_answers()));
        }
        Err(e) => {
            row.status = "FAILED".into();
            row.error = Some(e.to_string());
        }
    }
    row
}

fn label_entropy(predictions: &[Option<usize>], k: usize) -> f64 {
    let mut counts = vec![0.0; k];
    let mut total = 0.0;
    for p in predictions.iter().flatten() {
        counts[*p] += 1.0;
        total += 1.0;
    }
    if total == 0.0 || k < 2 {
        return 0.0;
    }
    counts.iter_mut().for_each(|c| *c /= total);
    entropy(&counts) / (k as f64).ln()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().at(path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// `J^N` of a labeling, enumerated when at most `exact_cap` tuples exist and
/// Monte Carlo otherwise.
pub fn evaluate_objective<S: IndexedScorer + ?Sized>(
    scorer: &S,
    labels: &[usize],
    n: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ObjectiveEstimate> {
    let labeling = Labeling(labels.to_vec());
    if permutations(scorer.num_instances(), n) <= cfg.eval.exact_cap {
        Ok(exact_joint_objective(scorer, &labeling, n, cfg.eval.exact_cap)?)
    } else {
        let mut rng = stream(seed, &[2]);
        Ok(mc_joint_objective(scorer, &labeling, n, cfg.eval.objective_sequences, &mut rng)?)
    }
}

fn run_cell(cfg: &ExperimentConfig, task: &LoadedTask, cell: &Cell, out_dir: &Path) -> Result<CellOutput> {
    let seed = cell_seed(cfg.master_seed, cell);
    let ds = &task.dataset;
    let n = cell.context_size;
    log::info!("cell {} (seed {seed:#x}) started", cell.id());
    let mut out = match (&task.backend, cell.method) {
        (Backend::Local(model), method) => {
            let scorer = model.scorer(&ds.instances)?;
            let mut out = match method {
                Method::ZeroShot => CellOutput { predictions: some(zero_shot_predictions(model, ds)?), ..Default::default() },
                Method::Uicl => {
                    let sampler = ModelSampler::new(model, &ds.answer_set);
                    run_uicl_cell(cfg, ds, &sampler, Some(&scorer), cell, seed, out_dir)?
                }
                Method::SupervisedIcl => {
                    let sampler = ModelSampler::new(model, &ds.answer_set).greedy(true);
                    supervised_cell(cfg, ds, &sampler, n, seed)?
                }
                Method::Uft => {
                    let mut tc = cfg.uft.clone();
                    tc.context_size = n;
                    tc.gamma = cell.gamma.unwrap_or(tc.gamma);
                    tc.seed = seed;
                    let encoder = TaskEncoder::new(&scorer, &ds.instances)?;
                    let (params, trace) = train_uft(&scorer, &encoder, ds.gold.as_deref(), &tc)?;
                    let mut buf = Vec::new();
                    trace.write_csv(&mut buf).at(out_dir)?;
                    write_file(&trace_path(out_dir, cell), &buf)?;
                    let checkpoint = serde_json::json!({
                        "iterations": tc.iterations,
                        "prior_entropy": normalized_prior_entropy(&encoder, &params),
                        "params": params,
                    });
                    write_json(&checkpoint_path(out_dir, cell), &checkpoint)?;
                    CellOutput { steps: tc.iterations, predictions: some(predict_all(&encoder, &params, None).0), objective: None }
                }
                Method::BruteForce => {
                    let s = &cfg.brute_force;
                    let sc = SolverConfig { context_size: n, tie_tol: s.tie_tol, labeling_cap: s.labeling_cap, tuple_cap: s.tuple_cap };
                    let res = brute_force_argmax(&scorer, &sc)?;
                    write_json(&checkpoint_path(out_dir, cell), &res)?;
                    let objective = ObjectiveEstimate {
                        value: res.best_value,
                        std_error: 0.0,
                        num_sequences: permutations(ds.len(), n),
                        context_size: n,
                    };
                    CellOutput { steps: 0, predictions: some(res.best_labeling.0), objective: Some(objective) }
                }
            };
            if out.objective.is_none() {
                let labels: Vec<usize> = out.predictions.iter().map(|p| p.expect("local predictions are complete")).collect();
                out.objective = Some(evaluate_objective(&scorer, &labels, n, cfg, seed)?);
            }
            out
        }
        (Backend::Remote { client, template }, method) => {
            let sampler = RemoteSampler::new(client, template, &ds.answer_set)?;
            match method {
                Method::ZeroShot => {
                    let predictions = jointinf_core::par::try_map_indexed(ds.len(), |i| {
                        let draw = derive_seed(seed, &[i as u64]);
                        Ok::<_, jointinf_core::Error>(match sampler.sample(&ds.instances[i], &SupportContext::empty(), draw)? {
                            SampledAnswer::Answer { index, .. } => Some(index),
                            SampledAnswer::Rejected { .. } => None,
                        })
                    })?;
                    CellOutput { predictions, ..Default::default() }
                }
                Method::Uicl => run_uicl_cell(cfg, ds, &sampler, None, cell, seed, out_dir)?,
                Method::SupervisedIcl => supervised_cell(cfg, ds, &sampler, n, seed)?,
                Method::Uft | Method::BruteForce => {
                    return Err(HarnessError::Config(format!(
                        "{} needs answer log-probabilities, which a chat backend does not provide",
                        method.name()
                    )))
                }
            }
        }
    };
    out.predictions.truncate(ds.len());
    write_predictions(&out_dir.join("predictions").join(format!("{}.csv", cell.id())), ds, &out.predictions)?;
    log::info!("cell {} finished", cell.id());
    Ok(out)
}

fn some(v: Vec<usize>) -> Vec<Option<usize>> {
    v.into_iter().map(Some).collect()
}

fn supervised_cell<S: AnswerSampler>(cfg: &ExperimentConfig, ds: &TaskDataset, sampler: &S, n: usize, seed: u64) -> Result<CellOutput> {
    let uc = UiclConfig { context_size: n, seed, ..cfg.uicl.clone() };
    Ok(CellOutput { steps: 1, predictions: some(supervised_icl(sampler, ds, &uc)?), objective: None })
}

/// Saved after every UICL turn; a rerun with the same cell resumes from it.
#[derive(Debug, Serialize, Deserialize)]
struct UiclCheckpoint {
    cell_key: String,
    config: UiclConfig,
    state: TurnState,
    summaries: Vec<TurnSummary>,
}

fn run_uicl_cell<S: AnswerSampler>(
    cfg: &ExperimentConfig,
    ds: &TaskDataset,
    sampler: &S,
    scorer: Option<&dyn IndexedScorer>,
    cell: &Cell,
    seed: u64,
    out_dir: &Path,
) -> Result<CellOutput> {
    let uc = UiclConfig { context_size: cell.context_size, seed, ..cfg.uicl.clone() };
    let ckpt_path = checkpoint_path(out_dir, cell);
    let mut summaries: Vec<TurnSummary> = Vec::new();
    let mut resume = None;
    if let Ok(text) = fs::read_to_string(&ckpt_path) {
        match serde_json::from_str::<UiclCheckpoint>(&text) {
            Ok(c) if c.cell_key == cell.key() && c.config == uc && c.state.turn <= uc.turns => {
                log::info!("cell {} resuming after turn {}", cell.id(), c.state.turn);
                summaries = c.summaries;
                resume = Some(c.state);
            }
            _ => log::warn!("ignoring stale checkpoint {}", ckpt_path.display()),
        }
    }

    let result = run_uicl_with(sampler, ds, &uc, None, resume, |state| {
        if summaries.last().is_some_and(|s| s.turn == state.turn) {
            return Ok(());
        }
        summaries.push(summarize_turn(state, ds, scorer, &uc)?);
        let c = UiclCheckpoint { cell_key: cell.key(), config: uc.clone(), state: state.clone(), summaries: summaries.clone() };
        write_json(&ckpt_path, &c).map_err(|e| jointinf_core::Error::Sampler(format!("checkpoint: {e}")))
    })?;

    let trace = jointinf_core::uicl::UiclResult { summaries, ..result };
    let mut buf = Vec::new();
    trace.write_trace_csv(&mut buf).at(out_dir)?;
    write_file(&trace_path(out_dir, cell), &buf)?;
    let steps = trace.summaries.last().map_or(0, |s| s.turn);
    Ok(CellOutput { steps, predictions: some(trace.final_labels), objective: None })
}

fn trace_path(out_dir: &Path, cell: &Cell) -> PathBuf {
    out_dir.join("traces").join(format!("{}.csv", cell.id()))
}

fn checkpoint_path(out_dir: &Path, cell: &Cell) -> PathBuf {
    out_dir.join("checkpoints").join(format!("{}.json", cell.id()))
}

fn write_predictions(path: &Path, ds: &TaskDataset, predictions: &[Option<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "prediction", "gold"])?;
    for (i, x) in ds.instances.iter().enumerate() {
        let pred = predictions.get(i).copied().flatten().map_or("", |p| ds.answer_set.label(p));
        let gold = ds.gold.as_ref().map_or("", |g| ds.answer_set.label(g[i]));
        w.write_record([x.id.as_str(), pred, gold])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    write_file(path, &bytes)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config_sha256: String,
    /// The config file as given, so the run can be repeated from the manifest alone.
    pub config: String,
    /// Directory that relative task paths in `config` resolve against.
    pub config_dir: Option<PathBuf>,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    /// Cell id to derived seed.
    pub cells: BTreeMap<String, u64>,
    pub files: Vec<ManifestFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_manifest(cfg: &ExperimentConfig, config_text: &str, cells: &[Cell], out_dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out_dir, out_dir, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: config_text.into(),
        config_dir: cfg.config_dir.clone(),
        master_seed: cfg.master_seed,
        seeds: cfg.seeds.clone(),
        cells: cells.iter().map(|c| (c.id(), cell_seed(cfg.master_seed, c))).collect(),
        files,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<ManifestFile>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir).at(dir)?.collect::<std::io::Result<_>>().at(dir)?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        if rel == MANIFEST_FILE || rel.ends_with(".tmp") {
            continue;
        }
        let bytes = fs::read(&path).at(&path)?;
        out.push(ManifestFile { path: rel, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}
