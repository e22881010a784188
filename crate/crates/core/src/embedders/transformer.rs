//! A randomly initialized pre-LN transformer encoder.
//!
//! Weights are drawn once from the config seed and never trained. The model
//! exists to give the pipeline a real forward pass (soft prompt in, `L x f`
//! activations out, mean pool to `f`) without pretrained weights.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingMatrix, Provenance, VocabTable};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticTransformerConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticTransformerConfig {
    fn default() -> Self {
        SyntheticTransformerConfig {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ff_dim: 256,
            seed: 0,
        }
    }
}

impl SyntheticTransformerConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(EmbedError::Config("transformer sizes must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(EmbedError::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let scale = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

impl Block {
    fn random(rng: &mut ChaCha8Rng, d: usize, ff: usize) -> Self {
        Block {
            wq: gaussian(rng, d, d),
            wk: gaussian(rng, d, d),
            wv: gaussian(rng, d, d),
            wo: gaussian(rng, d, d),
            w1: gaussian(rng, d, ff),
            b1: Array1::zeros(ff),
            w2: gaussian(rng, ff, d),
            b2: Array1::zeros(d),
        }
    }
}

/// Attention probabilities recorded during a forward pass: `[layer][head]`,
/// each `L x L`.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub attention: Vec<Vec<Array2<f64>>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticTransformer {
    cfg: SyntheticTransformerConfig,
    blocks: Vec<Block>,
}

fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.mean().unwrap_or(0.0);
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Standard sinusoidal position encodings, `len x dim`.
pub fn position_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, j)| {
        let pair = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl SyntheticTransformer {
    pub fn new(cfg: SyntheticTransformerConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let blocks = (0..cfg.layers)
            .map(|_| Block::random(&mut rng, cfg.model_dim, cfg.ff_dim))
            .collect();
        Ok(SyntheticTransformer { cfg, blocks })
    }

    pub fn config(&self) -> &SyntheticTransformerConfig {
        &self.cfg
    }

    pub fn check_table(&self, table: &VocabTable) -> Result<(), EmbedError> {
        if table.width() != self.cfg.model_dim {
            return Err(EmbedError::DimensionMismatch(format!(
                "vocabulary width {} != model_dim {}",
                table.width(),
                self.cfg.model_dim
            )));
        }
        Ok(())
    }

    /// Full `L x model_dim` output for one text.
    pub fn forward(
        &self,
        text: &str,
        table: &VocabTable,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<Array2<f64>, EmbedError> {
        self.check_table(table)?;
        let mut h = table.lookup(text)?;
        h += &position_encoding(h.nrows(), h.ncols());

        let d = self.cfg.model_dim;
        let dh = d / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for block in &self.blocks {
            let x = layer_norm(&h);
            let q = x.dot(&block.wq);
            let k = x.dot(&block.wk);
            let v = x.dot(&block.wv);
            let mut heads_out = Array2::zeros(h.raw_dim());
            let mut layer_attn = Vec::with_capacity(self.cfg.heads);
            for head in 0..self.cfg.heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut scores);
                heads_out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                if trace.is_some() {
                    layer_attn.push(scores);
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.attention.push(layer_attn);
            }
            h += &heads_out.dot(&block.wo);

            let x = layer_norm(&h);
            let mut hidden = x.dot(&block.w1) + &block.b1;
            hidden.mapv_inplace(|v| v.max(0.0));
            h += &(hidden.dot(&block.w2) + &block.b2);
        }
        Ok(h)
    }

    /// Mean-pooled embedding of one text.
    pub fn embed_one(&self, text: &str, table: &VocabTable) -> Result<Array1<f64>, EmbedError> {
        let out = self.forward(text, table, None)?;
        Ok(out.mean_axis(Axis(0)).expect("non-empty sequence"))
    }

    pub fn embed(&self, texts: &[String], table: &VocabTable) -> Result<EmbeddingMatrix, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::NoTexts);
        }
        self.check_table(table)?;
        let mut out = Array2::zeros((texts.len(), self.cfg.model_dim));
        for (mut row, text) in out.rows_mut().into_iter().zip(texts) {
            row.assign(&self.embed_one(text, table)?);
        }
        EmbeddingMatrix::new(
            out,
            Provenance::of("synthetic_transformer", &(self.cfg, table.provenance())),
        )
    }
}

pub fn embed_synthetic_transformer(
    texts: &[String],
    cfg: &SyntheticTransformerConfig,
    table: &VocabTable,
) -> Result<EmbeddingMatrix, EmbedError> {
    SyntheticTransformer::new(*cfg)?.embed(texts, table)
}
