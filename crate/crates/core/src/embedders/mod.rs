//! Embedders: maps from task inputs to fixed-width real vectors.
//!
//! Four backends share the [`Embedder`] trait:
//! - [`TraditionalEmbedder`]: min-max scaling plus one-hot blocks.
//! - [`TextEmbedder`] over a [`VocabTable`]: byte tokens looked up and mean-pooled,
//!   no forward pass.
//! - [`TextEmbedder`] over a [`SyntheticTransformer`]: randomly initialized
//!   pre-LN encoder, mean-pooled.
//! - [`TextEmbedder`] over a [`RemoteEmbedder`]: an HTTP embedding service with
//!   an on-disk cache.
//!
//! [`ScrambledEmbedder`] is a deliberately non-smooth control used by the
//! smoothness experiments.

mod cache;
pub mod mock;
mod remote;
mod tokenizer;
mod traditional;
mod transformer;
mod vocab;

use std::fmt;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::featurizer::{serialize, FeaturizeError, StringFormat};
use crate::task::{Assignment, RegressionTask};

pub use cache::{CacheRecord, EmbeddingCache};
pub use remote::{embed_remote, RemoteConfig, RemoteEmbedder, API_KEY_ENV};
pub use tokenizer::{tokenize, TokenSequence, BYTE_VOCAB_SIZE};
pub use traditional::{embed_traditional, ScrambledEmbedder, TraditionalEmbedder};
pub use transformer::{
    embed_synthetic_transformer, ForwardTrace, SyntheticTransformer, SyntheticTransformerConfig,
};
pub use vocab::{embed_vocab_pool, VocabTable};

/// Reference embedding widths of the hosted model families.
pub mod reference_dims {
    pub const T5_SMALL: usize = 512;
    pub const T5_LARGE: usize = 1024;
    pub const T5_XL: usize = 2048;
    pub const T5_XXL: usize = 4096;
    pub const GEMINI_NANO: usize = 1536;
    pub const GEMINI_PRO: usize = 6144;
    pub const GEMINI_ULTRA: usize = 14336;
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed an empty string")]
    EmptyInput,
    #[error("no texts to embed")]
    NoTexts,
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("embedding contains non-finite entries (row {row})")]
    NonFinite { row: usize },
    #[error("embedding has no provenance")]
    MissingProvenance,
    #[error("embedding service failed after {attempts} attempts: {last}")]
    Transport { attempts: usize, last: String },
    #[error("malformed service response: {0}")]
    Response(String),
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error("invalid embedder config: {0}")]
    Config(String),
}

/// Which backend and configuration produced a matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub config_hash: String,
}

impl Provenance {
    /// Hashes the JSON form of `config`.
    pub fn of<C: Serialize>(backend: &str, config: &C) -> Self {
        let json = serde_json::to_vec(config).expect("config serializes");
        Provenance {
            backend: backend.to_string(),
            config_hash: short_hash(&json),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.backend, self.config_hash)
    }
}

/// First 16 hex chars of SHA-256.
pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// An `n x d` matrix of embeddings, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
    provenance: Provenance,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>, provenance: Provenance) -> Result<Self, EmbedError> {
        if provenance.backend.is_empty() {
            return Err(EmbedError::MissingProvenance);
        }
        if let Some((row, _)) = values
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(EmbedError::NonFinite { row });
        }
        Ok(EmbeddingMatrix { values, provenance })
    }

    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        dim: usize,
        provenance: Provenance,
    ) -> Result<Self, EmbedError> {
        let n = rows.len();
        let mut flat = Vec::with_capacity(n * dim);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != dim {
                return Err(EmbedError::DimensionMismatch(format!(
                    "row {i} has width {}, expected {dim}",
                    r.len()
                )));
            }
            flat.extend(r);
        }
        let values = Array2::from_shape_vec((n, dim), flat).expect("shape checked");
        EmbeddingMatrix::new(values, provenance)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Same values under a different provenance.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self, EmbedError> {
        EmbeddingMatrix::new(values, self.provenance.clone())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            values: self.values.select(ndarray::Axis(0), idx),
            provenance: self.provenance.clone(),
        }
    }
}

pub trait Embedder: Send + Sync {
    fn provenance(&self) -> Provenance;

    fn embed(&self, task: &RegressionTask, xs: &[Assignment])
        -> Result<EmbeddingMatrix, EmbedError>;
}

/// Backends that work on strings.
pub enum TextBackend {
    VocabPool(VocabTable),
    Transformer {
        model: SyntheticTransformer,
        table: VocabTable,
    },
    Remote(RemoteEmbedder),
}

/// Serializes each input with `format` and embeds the strings.
pub struct TextEmbedder {
    backend: TextBackend,
    format: StringFormat,
}

impl TextEmbedder {
    pub fn new(backend: TextBackend, format: StringFormat) -> Result<Self, EmbedError> {
        if let TextBackend::Transformer { model, table } = &backend {
            model.check_table(table)?;
        }
        Ok(TextEmbedder { backend, format })
    }

    pub fn format(&self) -> &StringFormat {
        &self.format
    }

    pub fn backend(&self) -> &TextBackend {
        &self.backend
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix, EmbedError> {
        let m = match &self.backend {
            TextBackend::VocabPool(table) => embed_vocab_pool(texts, table)?,
            TextBackend::Transformer { model, table } => model.embed(texts, table)?,
            TextBackend::Remote(client) => client.embed_texts(texts)?,
        };
        EmbeddingMatrix::new(m.values, self.provenance())
    }
}

impl Embedder for TextEmbedder {
    fn provenance(&self) -> Provenance {
        let (name, inner) = match &self.backend {
            TextBackend::VocabPool(t) => ("vocab_pool", t.provenance()),
            TextBackend::Transformer { model, table } => (
                "synthetic_transformer",
                Provenance::of("", &(model.config(), table.provenance())),
            ),
            TextBackend::Remote(r) => ("remote", r.provenance()),
        };
        Provenance::of(name, &(inner.config_hash, self.format))
    }

    fn embed(
        &self,
        task: &RegressionTask,
        xs: &[Assignment],
    ) -> Result<EmbeddingMatrix, EmbedError> {
        let texts = xs
            .iter()
            .map(|x| serialize(task, x, &self.format))
            .collect::<Result<Vec<_>, _>>()?;
        self.embed_texts(&texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn prov() -> Provenance {
        Provenance::of("test", &1)
    }

    #[test]
    fn matrix_invariants() {
        assert!(matches!(
            EmbeddingMatrix::new(array![[1.0, f64::NAN]], prov()),
            Err(EmbedError::NonFinite { row: 0 })
        ));
        let empty = Provenance {
            backend: String::new(),
            config_hash: "x".into(),
        };
        assert!(EmbeddingMatrix::new(array![[1.0]], empty).is_err());
        assert!(EmbeddingMatrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]], 1, prov()).is_err());
        let m = EmbeddingMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 2, prov()).unwrap();
        assert_eq!((m.rows(), m.dim()), (2, 2));
        assert_eq!(m.select_rows(&[1]).row(0).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn provenance_tracks_config() {
        assert_eq!(Provenance::of("a", &(1, 2)), Provenance::of("a", &(1, 2)));
        assert_ne!(Provenance::of("a", &(1, 2)), Provenance::of("a", &(1, 3)));
    }

    #[test]
    fn reference_dims_table() {
        use reference_dims::*;
        assert_eq!(
            [T5_SMALL, T5_LARGE, T5_XL, T5_XXL, GEMINI_NANO, GEMINI_PRO, GEMINI_ULTRA],
            [512, 1024, 2048, 4096, 1536, 6144, 14336]
        );
    }
}
