use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpModel, TrainError, YNormalizer};
use crate::embedders::Provenance;

pub const MODEL_FILE_VERSION: u32 = 1;
const FORMAT: &str = "embedreg-mlp";

/// On-disk form of a trained head: weights, target normalizer and the
/// provenance of the embedding it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub normalizer: YNormalizer,
    pub embedder: Option<Provenance>,
    pub model: MlpModel,
}

impl ModelFile {
    pub fn new(model: MlpModel, normalizer: YNormalizer, embedder: Option<Provenance>) -> Self {
        ModelFile {
            format: FORMAT.into(),
            version: MODEL_FILE_VERSION,
            input_dim: model.input_dim(),
            hidden_width: model.hidden_width(),
            normalizer,
            embedder,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<(), TrainError> {
        if self.format != FORMAT {
            return Err(TrainError::ModelFile(format!("unknown format {:?}", self.format)));
        }
        if self.version != MODEL_FILE_VERSION {
            return Err(TrainError::ModelFile(format!(
                "version {} is not supported (expected {MODEL_FILE_VERSION})",
                self.version
            )));
        }
        let m = &self.model;
        let h = self.hidden_width;
        let shapes_ok = m.w1.dim() == (self.input_dim, h)
            && m.b1.len() == h
            && m.w2.dim() == (h, h)
            && m.b2.len() == h
            && m.w3.dim() == (h, 1)
            && m.b3.len() == 1;
        if !shapes_ok {
            return Err(TrainError::ModelFile("weight shapes disagree with header".into()));
        }
        if !m.is_finite() || self.normalizer.sigma.is_nan() || self.normalizer.sigma <= 0.0 || !self.normalizer.mu.is_finite() {
            return Err(TrainError::ModelFile("non-finite or invalid parameters".into()));
        }
        Ok(())
    }
}
