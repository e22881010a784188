use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{EmbedError, Embedder, EmbeddingMatrix, Provenance};
use crate::featurizer::{featurize_into, TraditionalFeatureLayout};
use crate::task::{Assignment, RegressionTask};

fn traditional_matrix(task: &RegressionTask, xs: &[Assignment]) -> Result<Array2<f64>, EmbedError> {
    let layout = TraditionalFeatureLayout::for_task(task);
    let mut out = Array2::zeros((xs.len(), layout.width()));
    for (mut row, x) in out.rows_mut().into_iter().zip(xs) {
        let slice = row.as_slice_mut().expect("standard layout");
        featurize_into(task, &layout, x, slice)?;
    }
    Ok(out)
}

/// Row-wise traditional features; an empty input gives a `0 x d_trad` matrix.
pub fn embed_traditional(
    task: &RegressionTask,
    xs: &[Assignment],
) -> Result<EmbeddingMatrix, EmbedError> {
    EmbeddingMatrix::new(traditional_matrix(task, xs)?, TraditionalEmbedder.provenance())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TraditionalEmbedder;

impl Embedder for TraditionalEmbedder {
    fn provenance(&self) -> Provenance {
        Provenance {
            backend: "traditional".into(),
            config_hash: "minmax-onehot-v1".into(),
        }
    }

    fn embed(
        &self,
        task: &RegressionTask,
        xs: &[Assignment],
    ) -> Result<EmbeddingMatrix, EmbedError> {
        embed_traditional(task, xs)
    }
}

/// Traditional features scrambled per point by a SHA-256 of the point itself.
///
/// Each row gets its coordinates permuted and then cyclically shifted in
/// [0, 1) by offsets derived from that hash. Nearby inputs land far apart, so
/// the objective looks rough through this embedding. The shift matters for
/// permutation-symmetric objectives like Sphere, where a permutation alone
/// would leave the landscape exactly as smooth as before.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScrambledEmbedder {
    pub key: u64,
}

impl ScrambledEmbedder {
    fn scramble_row(&self, row: &mut [f64]) {
        let mut hasher = Sha256::new();
        hasher.update(self.key.to_le_bytes());
        for v in row.iter() {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        row.shuffle(&mut rng);
        for v in row.iter_mut() {
            let shift: f64 = rng.random();
            *v = (*v + shift).fract();
        }
    }
}

impl Embedder for ScrambledEmbedder {
    fn provenance(&self) -> Provenance {
        Provenance::of("scrambled", &self.key)
    }

    fn embed(
        &self,
        task: &RegressionTask,
        xs: &[Assignment],
    ) -> Result<EmbeddingMatrix, EmbedError> {
        let mut m = traditional_matrix(task, xs)?;
        for mut row in m.rows_mut() {
            self.scramble_row(row.as_slice_mut().expect("standard layout"));
        }
        EmbeddingMatrix::new(m, self.provenance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::featurize_traditional;
    use crate::task::{ParamSpec, ParamValue, TaskSource};
    use crate::FunctionId;

    fn task() -> RegressionTask {
        RegressionTask::new(
            "t",
            vec![
                ParamSpec::continuous("a", 0.0, 2.0).unwrap(),
                ParamSpec::continuous("b", -1.0, 1.0).unwrap(),
                ParamSpec::categorical("c", ["x", "y", "z"]).unwrap(),
            ],
            TaskSource::Offline("f".into()),
        )
        .unwrap()
    }

    fn xs() -> Vec<Assignment> {
        (0..3)
            .map(|i| {
                Assignment(vec![
                    ParamValue::Real(i as f64 * 0.5),
                    ParamValue::Real(-0.5 + i as f64 * 0.25),
                    ParamValue::Choice(["x", "y", "z"][i].into()),
                ])
            })
            .collect()
    }

    #[test]
    fn shape_and_rows_match_featurizer() {
        let (t, xs) = (task(), xs());
        let m = embed_traditional(&t, &xs).unwrap();
        assert_eq!((m.rows(), m.dim()), (3, 5));
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(m.row(i).to_vec(), featurize_traditional(&t, x).unwrap());
        }
        assert_eq!(m.provenance().backend, "traditional");
    }

    #[test]
    fn empty_input_is_zero_rows() {
        let m = embed_traditional(&task(), &[]).unwrap();
        assert_eq!((m.rows(), m.dim()), (0, 5));
    }

    #[test]
    fn scramble_is_a_deterministic_function_of_the_point() {
        let t = RegressionTask::synthetic(FunctionId::SPHERE, 6).unwrap();
        let x = Assignment::from_reals([0.1, -2.0, 3.0, 4.4, -4.9, 0.0]);
        let e = ScrambledEmbedder { key: 1 };
        let a = e.embed(&t, &[x.clone(), x.clone()]).unwrap();
        assert_eq!(a.row(0), a.row(1));
        assert!(a.values().iter().all(|v| (0.0..1.0).contains(v)));
        let other = ScrambledEmbedder { key: 2 }.embed(&t, &[x]).unwrap();
        assert_ne!(a.row(0), other.row(0));
    }
}
