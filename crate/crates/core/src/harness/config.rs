use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::bbob::{Builtin, FunctionId};
use crate::embedders::{
    Embedder, EmbeddingCache, Provenance, RemoteConfig, RemoteEmbedder, ScrambledEmbedder,
    SyntheticTransformer, SyntheticTransformerConfig, TextBackend, TextEmbedder,
    TraditionalEmbedder, VocabTable,
};
use crate::featurizer::{StringFormat, StringVariant};
use crate::regressor::TrainConfig;
use crate::task::{ingest_offline, Dataset, RegressionTask, TaskSource};

pub const DEFAULT_SAMPLES: usize = 500;
pub const DEFAULT_REPEATS: u64 = 12;
pub const DEFAULT_DOFS: [usize; 5] = [5, 10, 25, 50, 100];
pub const DEFAULT_TRAIN_SIZES: [usize; 4] = [50, 100, 200, 400];
pub const SYNTHETIC_FAMILY: &str = "bbob";

/// A group of tasks: BBOB functions crossed with DOFs, or one offline task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSetSpec {
    Synthetic {
        functions: Vec<FunctionId>,
        dofs: Vec<usize>,
        #[serde(default)]
        family: Option<String>,
    },
    /// A task file whose source names a CSV, resolved relative to the task file.
    Offline { task: PathBuf, family: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Traditional,
    Scrambled {
        #[serde(default)]
        key: u64,
    },
    VocabPool {
        #[serde(default = "default_vocab_width")]
        width: usize,
        #[serde(default)]
        seed: u64,
    },
    SyntheticTransformer {
        #[serde(default)]
        model: SyntheticTransformerConfig,
        #[serde(default)]
        vocab_seed: u64,
    },
    Remote {
        #[serde(flatten)]
        client: RemoteConfig,
        /// Defaults to `embed_cache.jsonl` in the output directory.
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

fn default_vocab_width() -> usize {
    64
}

impl EmbedderSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EmbedderSpec::Traditional => "traditional",
            EmbedderSpec::Scrambled { .. } => "scrambled",
            EmbedderSpec::VocabPool { .. } => "vocab_pool",
            EmbedderSpec::SyntheticTransformer { .. } => "synthetic_transformer",
            EmbedderSpec::Remote { .. } => "remote",
        }
    }

    /// Whether inputs are serialized to strings first.
    pub fn is_text(&self) -> bool {
        !matches!(self, EmbedderSpec::Traditional | EmbedderSpec::Scrambled { .. })
    }

    /// Parses a bare kind name with default settings.
    pub fn from_kind(kind: &str) -> Result<Self, HarnessError> {
        Ok(match kind {
            "traditional" => EmbedderSpec::Traditional,
            "scrambled" => EmbedderSpec::Scrambled { key: 0 },
            "vocab_pool" => EmbedderSpec::VocabPool {
                width: default_vocab_width(),
                seed: 0,
            },
            "synthetic_transformer" => EmbedderSpec::SyntheticTransformer {
                model: SyntheticTransformerConfig::default(),
                vocab_seed: 0,
            },
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown embedder `{other}` (remote embedders need a config file)"
                )))
            }
        })
    }

    pub fn build(
        &self,
        format: StringFormat,
        cache_dir: &Path,
    ) -> Result<Box<dyn Embedder>, HarnessError> {
        let text = |backend| -> Result<Box<dyn Embedder>, HarnessError> {
            Ok(Box::new(TextEmbedder::new(backend, format)?))
        };
        match self {
            EmbedderSpec::Traditional => Ok(Box::new(TraditionalEmbedder)),
            EmbedderSpec::Scrambled { key } => Ok(Box::new(ScrambledEmbedder { key: *key })),
            EmbedderSpec::VocabPool { width, seed } => {
                if *width == 0 {
                    return Err(HarnessError::Config("vocab_pool width must be positive".into()));
                }
                text(TextBackend::VocabPool(VocabTable::bytes(*width, *seed)))
            }
            EmbedderSpec::SyntheticTransformer { model, vocab_seed } => text(TextBackend::Transformer {
                model: SyntheticTransformer::new(*model)?,
                table: VocabTable::bytes(model.model_dim, *vocab_seed),
            }),
            EmbedderSpec::Remote { client, cache } => {
                let path = cache.clone().unwrap_or_else(|| cache_dir.join("embed_cache.jsonl"));
                let cache = Arc::new(EmbeddingCache::open(&path)?);
                text(TextBackend::Remote(RemoteEmbedder::new(client.clone(), cache)?))
            }
        }
    }

    /// Provenance without building the backend (no files opened, no weights drawn).
    pub fn provenance(&self, format: StringFormat) -> Provenance {
        if self.is_text() {
            Provenance::of(self.kind(), &(self, format))
        } else {
            Provenance::of(self.kind(), self)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEmbedder {
    /// Label used in records and tables; defaults to the kind name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: EmbedderSpec,
}

impl NamedEmbedder {
    pub fn new(spec: EmbedderSpec) -> Self {
        NamedEmbedder { name: None, spec }
    }

    pub fn named(name: impl Into<String>, spec: EmbedderSpec) -> Self {
        NamedEmbedder {
            name: Some(name.into()),
            spec,
        }
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.spec.kind())
    }
}

/// Which rows enter the smoothness diagnostic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlfdPool {
    #[default]
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskSetSpec>,
    pub embedders: Vec<NamedEmbedder>,
    pub samples: usize,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub string_format: StringFormat,
    /// Train, validation and test fractions.
    pub split: (f64, f64, f64),
    /// Training-set sizes for the data-scaling study.
    pub train_sizes: Vec<usize>,
    /// Serialization formats compared by the ablation study.
    pub ablation_formats: Vec<StringFormat>,
    pub nlfd_pool: NlfdPool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tasks: vec![TaskSetSpec::Synthetic {
                functions: Builtin::ALL.iter().map(|b| b.function_id()).collect(),
                dofs: DEFAULT_DOFS.to_vec(),
                family: None,
            }],
            embedders: vec![NamedEmbedder::new(EmbedderSpec::Traditional)],
            samples: DEFAULT_SAMPLES,
            seeds: (0..DEFAULT_REPEATS).collect(),
            train: TrainConfig::default(),
            string_format: StringFormat::full(),
            split: (0.8, 0.1, 0.1),
            train_sizes: DEFAULT_TRAIN_SIZES.to_vec(),
            ablation_formats: vec![StringFormat::full(), StringFormat::values_only()],
            nlfd_pool: NlfdPool::All,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// A task ready to produce data.
#[derive(Debug, Clone)]
pub struct ResolvedTask {
    pub task: RegressionTask,
    pub family: String,
    /// Present for offline tasks; synthetic tasks are sampled per seed.
    pub data: Option<Dataset>,
}

impl ResolvedTask {
    pub fn function(&self) -> Option<&FunctionId> {
        match self.task.source() {
            TaskSource::Synthetic(f) => Some(f),
            TaskSource::Offline(_) => None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.tasks.is_empty() {
            return bad("no tasks configured".into());
        }
        if self.embedders.is_empty() {
            return bad("no embedders configured".into());
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.samples < 10 {
            return bad(format!("need at least 10 samples, got {}", self.samples));
        }
        let mut labels: Vec<&str> = self.embedders.iter().map(|e| e.label()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("embedder labels must be unique; set `name` to disambiguate".into());
        }
        self.train.validate()?;
        Ok(())
    }

    /// Expands the task sets in configuration order.
    pub fn resolve_tasks(&self) -> Result<Vec<ResolvedTask>, HarnessError> {
        let mut out = Vec::new();
        for spec in &self.tasks {
            match spec {
                TaskSetSpec::Synthetic {
                    functions,
                    dofs,
                    family,
                } => {
                    for f in functions {
                        for &dof in dofs {
                            out.push(ResolvedTask {
                                task: RegressionTask::synthetic(f.clone(), dof)?,
                                family: family.clone().unwrap_or_else(|| SYNTHETIC_FAMILY.into()),
                                data: None,
                            });
                        }
                    }
                }
                TaskSetSpec::Offline { task, family } => {
                    let t = RegressionTask::from_json_file(task)?;
                    let TaskSource::Offline(data) = t.source() else {
                        return Err(HarnessError::Config(format!(
                            "{} is not an offline task",
                            task.display()
                        )));
                    };
                    let data = match task.parent() {
                        Some(dir) if data.is_relative() => dir.join(data),
                        _ => data.clone(),
                    };
                    let ds = ingest_offline(&data, &t)?;
                    out.push(ResolvedTask {
                        task: t,
                        family: family.clone(),
                        data: Some(ds),
                    });
                }
            }
        }
        let mut ids: Vec<&str> = out.iter().map(|t| t.task.id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config("task ids must be unique".into()));
        }
        Ok(out)
    }
}

/// Short stable label for a string format, e.g. `full-4` or `values-4-sp`.
pub fn format_label(f: &StringFormat) -> String {
    let v = match f.variant {
        StringVariant::FullDict => "full",
        StringVariant::ValuesOnly => "values",
    };
    let sp = if f.space_after_comma { "-sp" } else { "" };
    format!("{v}-{}{sp}", f.float_precision)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_expands() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.resolve_tasks().unwrap().len(), 8 * 5);
        assert_eq!(cfg.seeds.len(), 12);
        assert_eq!(cfg.samples, 500);
    }

    #[test]
    fn embedder_specs_parse_from_json() {
        let e: Vec<NamedEmbedder> = serde_json::from_str(
            r#"[{"kind":"traditional"},
                {"kind":"scrambled","key":7,"name":"scr"},
                {"kind":"synthetic_transformer","model":{"layers":1,"model_dim":16,"heads":2,"ff_dim":32,"seed":3}},
                {"kind":"remote","endpoint":"http://localhost:1/v1/embed","model":"m"}]"#,
        )
        .unwrap();
        assert_eq!(e[1].label(), "scr");
        assert_eq!(e[2].label(), "synthetic_transformer");
        match &e[3].spec {
            EmbedderSpec::Remote { client, cache } => {
                assert_eq!((client.batch_size, cache.is_none()), (32, true));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_catches_duplicates() {
        let mut cfg = ExperimentConfig::default();
        cfg.embedders.push(NamedEmbedder::new(EmbedderSpec::Traditional));
        assert!(cfg.validate().is_err());
        cfg.embedders[1].name = Some("trad2".into());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn offline_tasks_resolve_relative_data() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("task.json"),
            r#"{"id":"toy","params":[{"name":"lr","kind":"continuous","lo":0,"hi":1},
                {"name":"opt","kind":"categorical","choices":["adam","sgd"]}],
                "source":{"offline":"data.csv"}}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("data.csv"), "lr,opt,y\n0.1,adam,1.5\n0.7,sgd,0.2\n").unwrap();
        let cfg = ExperimentConfig {
            tasks: vec![TaskSetSpec::Offline {
                task: dir.path().join("task.json"),
                family: "toy".into(),
            }],
            ..ExperimentConfig::default()
        };
        let t = cfg.resolve_tasks().unwrap();
        assert_eq!(t[0].data.as_ref().unwrap().len(), 2);
        assert_eq!(t[0].family, "toy");
    }

    #[test]
    fn format_labels() {
        assert_eq!(format_label(&StringFormat::full()), "full-4");
        assert_eq!(format_label(&StringFormat::values_only()), "values-4");
    }
}
