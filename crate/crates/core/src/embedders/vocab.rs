use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{tokenize, EmbedError, EmbeddingMatrix, Provenance, BYTE_VOCAB_SIZE};

/// Token embedding table with i.i.d. N(0, 1/width) entries.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabTable {
    seed: u64,
    entries: Array2<f64>,
}

#[derive(Serialize)]
struct TableKey {
    v: usize,
    width: usize,
    seed: u64,
}

impl VocabTable {
    pub fn new(v: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (width as f64).sqrt();
        let entries = Array2::from_shape_simple_fn((v, width), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        VocabTable { seed, entries }
    }

    /// A table over the byte vocabulary.
    pub fn bytes(width: usize, seed: u64) -> Self {
        VocabTable::new(BYTE_VOCAB_SIZE, width, seed)
    }

    pub fn vocab_size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn width(&self) -> usize {
        self.entries.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, id: u32) -> ArrayView1<'_, f64> {
        self.entries.row(id as usize)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::of(
            "vocab_pool",
            &TableKey {
                v: self.vocab_size(),
                width: self.width(),
                seed: self.seed,
            },
        )
    }

    /// The `L x width` soft prompt of a text.
    pub fn lookup(&self, text: &str) -> Result<Array2<f64>, EmbedError> {
        let tokens = tokenize(text)?;
        let mut out = Array2::zeros((tokens.len(), self.width()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(&tokens.ids) {
            if id as usize >= self.vocab_size() {
                return Err(EmbedError::DimensionMismatch(format!(
                    "token {id} outside vocabulary of {}",
                    self.vocab_size()
                )));
            }
            row.assign(&self.entry(id));
        }
        Ok(out)
    }
}

/// Mean of the token vectors of each text, without any forward pass.
pub fn embed_vocab_pool(texts: &[String], table: &VocabTable) -> Result<EmbeddingMatrix, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::NoTexts);
    }
    let mut out = Array2::zeros((texts.len(), table.width()));
    for (mut row, text) in out.rows_mut().into_iter().zip(texts) {
        let prompt = table.lookup(text)?;
        let mean: Array1<f64> = prompt.mean_axis(ndarray::Axis(0)).expect("non-empty prompt");
        row.assign(&mean);
    }
    EmbeddingMatrix::new(out, table.provenance())
}
