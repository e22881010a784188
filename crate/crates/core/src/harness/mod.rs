//! Experiment orchestration.
//!
//! An [`ExperimentConfig`] expands into independent cells (task × embedder ×
//! seed, plus a training-set size or string format for some studies). Each
//! cell samples and splits data, embeds it, trains the MLP head, scores the
//! test split and measures NLFD. Finished cells are appended to
//! `records.jsonl` in a directory keyed by the config hash, so an interrupted
//! run picks up where it stopped. Summary CSVs are rebuilt from the records
//! after every run and contain no timestamps.

mod config;
mod records;
mod summary;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    format_label, EmbedderSpec, ExperimentConfig, NamedEmbedder, NlfdPool, ResolvedTask,
    TaskSetSpec, DEFAULT_DOFS, DEFAULT_REPEATS, DEFAULT_SAMPLES, DEFAULT_TRAIN_SIZES,
    SYNTHETIC_FAMILY,
};
pub use records::{CellOutcome, CellRecord, NlfdSummary, RecordStore};
pub use summary::{
    AblationRow, Correlations, DofSweepRow, FamilyMeanRow, OutperformanceRow, ScalingRow,
    ScatterRow, Summary, TaskMeanRow,
};

use crate::embedders::{EmbedError, Embedder, Provenance};
use crate::featurizer::StringFormat;
use crate::nlfd::{self, NlfdError};
use crate::regressor::{fit_and_evaluate, TrainError};
use crate::task::{sample_uniform, split_dataset, Dataset, TaskError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("records: {0}")]
    Records(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nlfd(#[from] NlfdError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SweepDof,
    Compare,
    NlfdCorr,
    ScaleData,
    Ablate,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::SweepDof => "sweep-dof",
            ExperimentKind::Compare => "compare",
            ExperimentKind::NlfdCorr => "nlfd-corr",
            ExperimentKind::ScaleData => "scale-data",
            ExperimentKind::Ablate => "ablate",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Discard existing records and rerun every cell.
    pub force: bool,
    /// Overrides the config's output directory.
    pub out_dir: Option<PathBuf>,
    /// Clamp Kendall-Tau at 0 in summary tables. Records keep raw values.
    pub clamp_kendall: bool,
    /// Print one line per finished cell to stderr.
    pub progress: bool,
}

/// Stored next to the records so `report` can rebuild summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub code_version: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub dir: PathBuf,
    /// One entry per cell in enumeration order; `None` when the cell never ran.
    pub cells: Vec<(CellSpec, Option<CellRecord>)>,
    pub summary: Summary,
    /// Summary files written, relative to `dir`.
    pub outputs: Vec<String>,
}

impl RunRecord {
    pub fn incomplete(&self) -> usize {
        self.cells
            .iter()
            .filter(|(_, r)| !r.as_ref().is_some_and(|r| r.is_ok()))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub task: usize,
    pub embedder: usize,
    pub seed: u64,
    pub train_size: Option<usize>,
    pub format: Option<StringFormat>,
}

/// Hash of everything that determines a run's outputs: the study kind, the
/// config (minus its output directory), each embedder's provenance and the
/// code version.
pub fn config_hash(kind: ExperimentKind, cfg: &ExperimentConfig) -> String {
    let mut pinned = cfg.clone();
    pinned.out_dir = PathBuf::new();
    let provenances: Vec<Provenance> = cfg
        .embedders
        .iter()
        .map(|e| e.spec.provenance(cfg.string_format))
        .collect();
    Provenance::of(
        kind.as_str(),
        &(kind.as_str(), &pinned, provenances, env!("CARGO_PKG_VERSION")),
    )
    .config_hash
}

pub fn run_dir(kind: ExperimentKind, cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.unwrap_or(&cfg.out_dir)
        .join(format!("{}-{}", kind.as_str(), config_hash(kind, cfg)))
}

fn validate_for(kind: ExperimentKind, cfg: &ExperimentConfig, tasks: &[ResolvedTask]) -> Result<(), HarnessError> {
    let bad = |m: &str| Err(HarnessError::Config(format!("{}: {m}", kind.as_str())));
    let synthetic_only = tasks.iter().all(|t| t.function().is_some());
    match kind {
        ExperimentKind::SweepDof if !synthetic_only => bad("needs synthetic tasks only"),
        ExperimentKind::Compare | ExperimentKind::ScaleData if cfg.embedders.len() < 2 => {
            bad("needs at least 2 embedders")
        }
        ExperimentKind::NlfdCorr if cfg.embedders.len() != 2 => bad("needs exactly 2 embedders"),
        ExperimentKind::NlfdCorr if !synthetic_only => bad("needs synthetic tasks only"),
        ExperimentKind::NlfdCorr if tasks.len() < 3 => {
            bad("correlations need at least 3 tasks")
        }
        ExperimentKind::ScaleData if cfg.train_sizes.is_empty() => bad("no train_sizes configured"),
        ExperimentKind::Ablate if cfg.ablation_formats.is_empty() => {
            bad("no ablation_formats configured")
        }
        _ => Ok(()),
    }
}

/// Cells in a fixed order: task, then embedder, then format or size, then seed.
pub fn enumerate_cells(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    n_tasks: usize,
) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for task in 0..n_tasks {
        for (embedder, e) in cfg.embedders.iter().enumerate() {
            let variants: Vec<(Option<usize>, Option<StringFormat>)> = match kind {
                ExperimentKind::ScaleData => cfg.train_sizes.iter().map(|&n| (Some(n), None)).collect(),
                ExperimentKind::Ablate if e.spec.is_text() => {
                    cfg.ablation_formats.iter().map(|&f| (None, Some(f))).collect()
                }
                _ => vec![(None, None)],
            };
            for (train_size, format) in variants {
                for &seed in &cfg.seeds {
                    cells.push(CellSpec {
                        task,
                        embedder,
                        seed,
                        train_size,
                        format,
                    });
                }
            }
        }
    }
    cells
}

fn cell_key(tasks: &[ResolvedTask], cfg: &ExperimentConfig, c: &CellSpec) -> String {
    format!(
        "{}/{}/{}/{}/seed{}",
        tasks[c.task].task.id(),
        cfg.embedders[c.embedder].label(),
        c.format.as_ref().map(format_label).unwrap_or_else(|| "-".into()),
        c.train_size.map(|n| format!("n{n}")).unwrap_or_else(|| "-".into()),
        c.seed
    )
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    tasks: &'a [ResolvedTask],
    hash: &'a str,
    embedders: HashMap<(usize, StringFormat), Box<dyn Embedder>>,
}

impl Context<'_> {
    fn format_of(&self, c: &CellSpec) -> StringFormat {
        c.format.unwrap_or(self.cfg.string_format)
    }

    fn run_cell(&self, c: &CellSpec) -> CellRecord {
        let started = now_ms();
        let embedder = &self.embedders[&(c.embedder, self.format_of(c))];
        let outcome = match self.evaluate(c, embedder.as_ref()) {
            Ok(o) => o,
            Err(e) => CellOutcome::Failed { error: e.to_string() },
        };
        CellRecord {
            key: cell_key(self.tasks, self.cfg, c),
            config_hash: self.hash.to_string(),
            task: self.tasks[c.task].task.id().to_string(),
            family: self.tasks[c.task].family.clone(),
            embedder: self.cfg.embedders[c.embedder].label().to_string(),
            provenance: embedder.provenance(),
            seed: c.seed,
            train_size: c.train_size,
            format: c.format.as_ref().map(format_label),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            outcome,
        }
    }

    fn evaluate(&self, c: &CellSpec, embedder: &dyn Embedder) -> Result<CellOutcome, HarnessError> {
        let cfg = self.cfg;
        let rt = &self.tasks[c.task];
        let ds = match &rt.data {
            Some(d) => d.clone(),
            None => sample_uniform(&rt.task, cfg.samples, c.seed)?,
        };
        let (train, val, test) = split_dataset(&ds, cfg.split, c.seed)?;
        let train = match c.train_size {
            Some(n) if n > train.len() => {
                return Err(HarnessError::Config(format!(
                    "train size {n} exceeds the {} available training rows",
                    train.len()
                )))
            }
            Some(n) => train.truncated(n),
            None => train,
        };
        let pool = Dataset::pooled([&train, &val, &test]);
        let m = embedder.embed(&rt.task, &pool.xs())?;
        let y = pool.ys();
        let (a, b) = (train.len(), train.len() + val.len());
        let x = m.values();

        let mut tcfg = cfg.train.clone();
        tcfg.seed = c.seed;
        let (_, _, report) = fit_and_evaluate(
            (x.slice(s![..a, ..]), &y[..a]),
            (x.slice(s![a..b, ..]), &y[a..b]),
            (x.slice(s![b.., ..]), &y[b..]),
            &tcfg,
        )?;
        let metrics = report.test.expect("fit_and_evaluate scores the test split");

        let rows: Vec<usize> = match cfg.nlfd_pool {
            NlfdPool::All => (0..y.len()).collect(),
            NlfdPool::Train => (0..a).collect(),
            NlfdPool::Validation => (a..b).collect(),
            NlfdPool::Test => (b..y.len()).collect(),
        };
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let nlfd = nlfd::nlfd(&m.select_rows(&rows), &ys).ok().map(|s| NlfdSummary {
            mu: s.mu,
            sigma: s.sigma,
            n: s.factors.len(),
            excluded_pairs: s.excluded_pairs,
            d: s.d,
        });
        Ok(CellOutcome::Ok {
            metrics,
            nlfd,
            report,
        })
    }
}

/// Runs every pending cell of a study and rebuilds its summaries.
pub fn run_experiment(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let tasks = cfg.resolve_tasks()?;
    validate_for(kind, cfg, &tasks)?;
    let hash = config_hash(kind, cfg);
    let dir = run_dir(kind, cfg, opts.out_dir.as_deref());
    fs::create_dir_all(&dir)?;
    let manifest = RunManifest {
        kind,
        config_hash: hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;

    let store = RecordStore::open(&dir.join("records.jsonl"), opts.force)?;
    let cells = enumerate_cells(kind, cfg, tasks.len());

    let mut embedders = HashMap::new();
    for c in &cells {
        let format = c.format.unwrap_or(cfg.string_format);
        if let std::collections::hash_map::Entry::Vacant(slot) = embedders.entry((c.embedder, format)) {
            slot.insert(cfg.embedders[c.embedder].spec.build(format, &dir)?);
        }
    }
    let ctx = Context {
        cfg,
        tasks: &tasks,
        hash: &hash,
        embedders,
    };

    let pending: Vec<&CellSpec> = cells
        .iter()
        .filter(|c| !store.is_complete(&cell_key(&tasks, cfg, c)))
        .collect();
    let total = pending.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    pending.into_par_iter().try_for_each(|c| -> Result<(), HarnessError> {
        let rec = ctx.run_cell(c);
        if opts.progress {
            let k = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            let status = match &rec.outcome {
                CellOutcome::Ok { metrics, .. } => format!("kendall {:.4}", metrics.kendall_tau),
                CellOutcome::Failed { error } => format!("FAILED: {error}"),
            };
            eprintln!("[{k}/{total}] {} {status}", rec.key);
        }
        store.append(rec)
    })?;

    finish(kind, cfg, &tasks, &hash, dir, &store, cells, opts)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    tasks: &[ResolvedTask],
    hash: &str,
    dir: PathBuf,
    store: &RecordStore,
    cells: Vec<CellSpec>,
    opts: &RunOptions,
) -> Result<RunRecord, HarnessError> {
    let cells: Vec<(CellSpec, Option<CellRecord>)> = cells
        .into_iter()
        .map(|c| {
            let rec = store.get(&cell_key(tasks, cfg, &c));
            (c, rec)
        })
        .collect();
    let (summary, outputs) = summary::summarize(kind, cfg, tasks, &cells, opts.clamp_kendall, &dir)?;
    Ok(RunRecord {
        kind,
        config_hash: hash.to_string(),
        dir,
        cells,
        summary,
        outputs,
    })
}

/// Rebuilds summaries of an existing run directory without training.
pub fn report(dir: &Path, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)?;
    let cfg = &manifest.config;
    let tasks = cfg.resolve_tasks()?;
    let store = RecordStore::open(&dir.join("records.jsonl"), false)?;
    let cells = enumerate_cells(manifest.kind, cfg, tasks.len());
    finish(
        manifest.kind,
        cfg,
        &tasks,
        &manifest.config_hash,
        dir.to_path_buf(),
        &store,
        cells,
        opts,
    )
}

pub fn run_dof_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    run_experiment(ExperimentKind::SweepDof, cfg, opts)
}

pub fn run_comparison(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    run_experiment(ExperimentKind::Compare, cfg, opts)
}

pub fn run_nlfd_correlation(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    run_experiment(ExperimentKind::NlfdCorr, cfg, opts)
}

pub fn run_data_scaling(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    run_experiment(ExperimentKind::ScaleData, cfg, opts)
}

pub fn run_ablation(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord, HarnessError> {
    run_experiment(ExperimentKind::Ablate, cfg, opts)
}
