use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use embedreg::embedders::Embedder;
use embedreg::harness::{
    self, EmbedderSpec, ExperimentConfig, ExperimentKind, NamedEmbedder, RunOptions, RunRecord,
    TaskSetSpec,
};
use embedreg::nlfd;
use embedreg::regressor::{fit_and_evaluate, ModelFile};
use embedreg::task::{ingest_offline, sample_uniform, split_dataset, write_offline, TaskSource};
use embedreg::{Dataset, FunctionId, RegressionTask, StringFormat, StringVariant};

#[derive(Parser)]
#[command(name = "embedreg", version, about = "Regression on embedded inputs: sampling, training, NLFD and batch studies")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON). Defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for single runs; offsets the seed list of a study.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for studies and model files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rerun cells that already have results.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, value_enum)]
    string_format: Option<FormatArg>,
    #[arg(long, global = true)]
    float_sig_digits: Option<usize>,
    #[arg(long, global = true)]
    space_after_comma: bool,
    /// Clamp Kendall-Tau at 0 in summary tables.
    #[arg(long, global = true)]
    clamp_kendall: bool,
    /// Embedder kind (traditional, scrambled, vocab_pool, synthetic_transformer)
    /// or a JSON file with a full embedder spec. Repeat for several.
    #[arg(long, global = true)]
    embedder: Vec<String>,
    /// Suppress per-cell progress lines.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Full,
    Values,
}

#[derive(Args, Clone)]
struct TaskArgs {
    /// Built-in or registered function id, e.g. `sphere`.
    #[arg(long, conflicts_with = "task")]
    function: Option<String>,
    #[arg(long, default_value_t = 2)]
    dof: usize,
    /// Task file (JSON).
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Offline data file; otherwise synthetic tasks are sampled.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = harness::DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Args)]
struct StudyArgs {
    /// Comma-separated function ids (synthetic studies).
    #[arg(long, value_delimiter = ',')]
    functions: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    dofs: Vec<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Number of seeds, starting at `--seed` (default 0).
    #[arg(long)]
    repeats: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic task and write it in the offline data format.
    Sample {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value_t = harness::DEFAULT_SAMPLES)]
        samples: usize,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Embed a dataset and write one row of coordinates per example.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Split, embed, train the MLP head and score the test split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Where to save the fitted model.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// NLFD of one embedder, or the z-score between two.
    Nlfd {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Histogram CSV of the first embedder's factors.
        #[arg(long)]
        histogram: Option<PathBuf>,
        /// Pairwise distance CSV of the first embedder (normalized space).
        #[arg(long)]
        distances: Option<PathBuf>,
    },
    /// Kendall-Tau against DOF per function.
    SweepDof(StudyArgs),
    /// Per-task comparison of two or more embedders.
    Compare(StudyArgs),
    /// NLFD z-score against Kendall gap for two embedders.
    NlfdCorr(StudyArgs),
    /// Kendall gap against training-set size.
    ScaleData(StudyArgs),
    /// Text backends crossed with string formats.
    Ablate(StudyArgs),
    /// Rebuild summaries of an existing run directory.
    Report { dir: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let broken_pipe = e
            .downcast_ref::<io::Error>()
            .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe);
        if broken_pipe {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Sample {
            task,
            samples,
            output,
        } => {
            let t = resolve_task(task)?;
            let ds = sample_uniform(&t, *samples, g.seed.unwrap_or(0))?;
            write_offline(sink(output.as_deref())?, &t, &ds)?;
        }
        Command::Embed { data, output } => {
            let (t, ds) = load_data(data, g)?;
            let embedder = single_embedder(g)?;
            let m = embedder.embed(&t, &ds.xs())?;
            eprintln!("{} rows x {} dims, {}", m.rows(), m.dim(), m.provenance());
            let mut w = sink(output.as_deref())?;
            let header: Vec<String> = (0..m.dim()).map(|j| format!("e{j}")).collect();
            writeln!(w, "{}", header.join(","))?;
            for row in m.values().rows() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            w.flush()?;
        }
        Command::Train { data, model_out } => {
            let cfg = base_config(g)?;
            let (t, ds) = load_data(data, g)?;
            let seed = g.seed.unwrap_or(0);
            let (train, val, test) = split_dataset(&ds, cfg.split, seed)?;
            let embedder = single_embedder(g)?;
            let embed = |d: &Dataset| embedder.embed(&t, &d.xs());
            let (mt, mv, ms) = (embed(&train)?, embed(&val)?, embed(&test)?);
            let mut tcfg = cfg.train.clone();
            tcfg.seed = seed;
            let (model, normalizer, report) = fit_and_evaluate(
                (mt.values().view(), &train.ys()),
                (mv.values().view(), &val.ys()),
                (ms.values().view(), &test.ys()),
                &tcfg,
            )?;
            if let Some(path) = model_out {
                ModelFile::new(model, normalizer, Some(embedder.provenance())).save(path)?;
                eprintln!("model written to {}", path.display());
            }
            emit(&serde_json::to_string_pretty(&report)?)?;
        }
        Command::Nlfd {
            data,
            bins,
            histogram,
            distances,
        } => {
            let (t, ds) = load_data(data, g)?;
            let cfg = base_config(g)?;
            let specs = embedder_specs(g, &cfg)?;
            if specs.len() > 2 {
                bail!("nlfd takes one or two embedders");
            }
            let ys = ds.ys();
            let mut samples = Vec::new();
            let mut out = serde_json::Map::new();
            for e in &specs {
                let m = build(&e.spec, &cfg, g)?.embed(&t, &ds.xs())?;
                let s = nlfd::nlfd(&m, &ys)?;
                out.insert(
                    e.label().to_string(),
                    json!({
                        "mu": s.mu,
                        "sigma": s.sigma,
                        "n": s.len(),
                        "excluded_pairs": s.excluded_pairs,
                        "d": s.d,
                    }),
                );
                if samples.is_empty() {
                    if let Some(path) = histogram {
                        nlfd::write_histogram_csv(File::create(path)?, &nlfd::histogram(&s, *bins)?)?;
                    }
                    if let Some(path) = distances {
                        let pairs = nlfd::pairwise_distance_export(&nlfd::normalize_embeddings(&m)?, &ys)?;
                        nlfd::write_distances_csv(File::create(path)?, &pairs)?;
                    }
                }
                samples.push(s);
            }
            if let [a, b] = samples.as_slice() {
                out.insert("z".into(), json!(nlfd::nlfd_zscore(a, b)?.z));
            }
            emit(&serde_json::to_string_pretty(&out)?)?;
        }
        Command::SweepDof(s) => study(ExperimentKind::SweepDof, s, g)?,
        Command::Compare(s) => study(ExperimentKind::Compare, s, g)?,
        Command::NlfdCorr(s) => study(ExperimentKind::NlfdCorr, s, g)?,
        Command::ScaleData(s) => study(ExperimentKind::ScaleData, s, g)?,
        Command::Ablate(s) => study(ExperimentKind::Ablate, s, g)?,
        Command::Report { dir } => {
            let rec = harness::report(dir, &run_options(g))?;
            print_run(&rec)?;
        }
    }
    Ok(())
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_options(g: &Global) -> RunOptions {
    RunOptions {
        force: g.force,
        out_dir: g.out.clone(),
        clamp_kendall: g.clamp_kendall,
        progress: !g.quiet,
    }
}

/// The config file (or defaults) with command-line format flags applied.
fn base_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    let apply = |f: &mut StringFormat| {
        if let Some(digits) = g.float_sig_digits {
            f.float_precision = digits;
        }
        if g.space_after_comma {
            f.space_after_comma = true;
        }
    };
    if let Some(v) = g.string_format {
        cfg.string_format.variant = match v {
            FormatArg::Full => StringVariant::FullDict,
            FormatArg::Values => StringVariant::ValuesOnly,
        };
    }
    apply(&mut cfg.string_format);
    cfg.ablation_formats.iter_mut().for_each(apply);
    Ok(cfg)
}

fn parse_embedder(arg: &str) -> Result<NamedEmbedder> {
    let path = Path::new(arg);
    if path.extension().is_some_and(|e| e == "json") || path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing embedder spec {arg}"));
    }
    Ok(NamedEmbedder::new(EmbedderSpec::from_kind(arg)?))
}

fn embedder_specs(g: &Global, cfg: &ExperimentConfig) -> Result<Vec<NamedEmbedder>> {
    if g.embedder.is_empty() {
        Ok(cfg.embedders.clone())
    } else {
        g.embedder.iter().map(|a| parse_embedder(a)).collect()
    }
}

fn build(spec: &EmbedderSpec, cfg: &ExperimentConfig, g: &Global) -> Result<Box<dyn Embedder>> {
    let cache_dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok(spec.build(cfg.string_format, &cache_dir)?)
}

fn single_embedder(g: &Global) -> Result<Box<dyn Embedder>> {
    let cfg = base_config(g)?;
    let specs = embedder_specs(g, &cfg)?;
    let [e] = specs.as_slice() else {
        bail!("expected exactly one embedder, got {}", specs.len());
    };
    build(&e.spec, &cfg, g)
}

fn resolve_task(args: &TaskArgs) -> Result<RegressionTask> {
    match (&args.function, &args.task) {
        (Some(f), None) => Ok(RegressionTask::synthetic(FunctionId::new(f.as_str()), args.dof)?),
        (None, Some(p)) => Ok(RegressionTask::from_json_file(p)?),
        _ => bail!("give either --function or --task"),
    }
}

fn load_data(args: &DataArgs, g: &Global) -> Result<(RegressionTask, Dataset)> {
    let t = resolve_task(&args.task)?;
    let ds = if let Some(path) = &args.data {
        ingest_offline(path, &t)?
    } else {
        match t.source() {
            TaskSource::Synthetic(_) => sample_uniform(&t, args.samples, g.seed.unwrap_or(0))?,
            TaskSource::Offline(data) => {
                let dir = args.task.task.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
                ingest_offline(&dir.join(data), &t)?
            }
        }
    };
    Ok((t, ds))
}

fn study(kind: ExperimentKind, args: &StudyArgs, g: &Global) -> Result<()> {
    let mut cfg = base_config(g)?;
    if !args.functions.is_empty() || !args.dofs.is_empty() {
        let (functions, dofs) = match cfg.tasks.first() {
            Some(TaskSetSpec::Synthetic { functions, dofs, .. }) => (functions.clone(), dofs.clone()),
            _ => (Vec::new(), harness::DEFAULT_DOFS.to_vec()),
        };
        cfg.tasks = vec![TaskSetSpec::Synthetic {
            functions: if args.functions.is_empty() {
                functions
            } else {
                args.functions.iter().map(|f| FunctionId::new(f.as_str())).collect()
            },
            dofs: if args.dofs.is_empty() { dofs } else { args.dofs.clone() },
            family: None,
        }];
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if let Some(r) = args.repeats {
        cfg.seeds = (0..r).collect();
    }
    if let Some(offset) = g.seed {
        cfg.seeds.iter_mut().for_each(|s| *s += offset);
    }
    if !g.embedder.is_empty() {
        cfg.embedders = embedder_specs(g, &cfg)?;
    }
    let rec = harness::run_experiment(kind, &cfg, &run_options(g))?;
    print_run(&rec)
}

fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn print_run(rec: &RunRecord) -> Result<()> {
    let missing = rec.incomplete();
    if missing > 0 {
        eprintln!("warning: {missing} of {} cells incomplete", rec.cells.len());
    }
    let mut lines = vec![format!("{} {}", rec.kind.as_str(), rec.dir.display())];
    lines.extend(rec.outputs.iter().map(|f| format!("  {}", rec.dir.join(f).display())));
    emit(&lines.join("\n"))
}
