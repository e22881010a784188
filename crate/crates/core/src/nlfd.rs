//! Normalized Lipschitz factor distributions.
//!
//! For each point the Lipschitz factor `|y_i - y_j| / ||phi_i - phi_j||` is taken
//! against its nearest neighbour in a standardized embedding. Embeddings are
//! standardized per coordinate over the full batch and then measured at unit
//! average norm, so factors from embeddings of different widths are
//! comparable. A distribution that piles up near zero means the objective
//! looks smooth through that embedding.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedders::{EmbedError, EmbeddingMatrix};
use crate::task::{Assignment, ParamValue, RegressionTask, TaskError};

/// Embedding distances below this are treated as coincident points.
pub const DEGENERATE_DISTANCE: f64 = 1e-10;
const DEGENERATE_VARIANCE: f64 = 1e-12;
/// Rejected draws allowed per probe point before a radius is declared infeasible.
pub const PROBE_REJECTION_BUDGET: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum NlfdError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("{rows} embedding rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("every nearest-neighbour pair is degenerate ({excluded} excluded)")]
    EmptySample { excluded: usize },
    #[error("both samples have zero spread; z-score is undefined")]
    ZeroSpread,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("radius {radius} is infeasible from the reference after {attempts} rejected draws")]
    RadiusInfeasible { radius: f64, attempts: usize },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlfdSample {
    pub factors: Vec<f64>,
    pub d: usize,
    pub excluded_pairs: usize,
    pub mu: f64,
    pub sigma: f64,
}

impl NlfdSample {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn summary(&self) -> SampleSummary {
        SampleSummary {
            mu: self.mu,
            sigma: self.sigma,
            n: self.factors.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlfdComparison {
    pub z: f64,
    pub a: SampleSummary,
    pub b: SampleSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub label_i: f64,
    pub label_j: f64,
}

/// Per-coordinate standardization over all rows (population variance).
/// Near-constant columns are only centered.
pub fn normalize_embeddings(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, NlfdError> {
    let n = m.rows();
    if n < 2 {
        return Err(NlfdError::TooFewRows(n));
    }
    let values = m.values();
    let mut out = values.clone();
    for (mut col, src) in out.axis_iter_mut(Axis(1)).zip(values.axis_iter(Axis(1))) {
        let mean = src.iter().sum::<f64>() / n as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let scale = if var < DEGENERATE_VARIANCE { 1.0 } else { var.sqrt() };
        col.mapv_inplace(|v| (v - mean) / scale);
    }
    Ok(m.with_values(out)?)
}

/// Squared l2 distance with pairwise summation split at the midpoint, so a
/// vector concatenated with itself sums to exactly twice the original.
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    match a.len() {
        0 => 0.0,
        1 => (a[0] - b[0]) * (a[0] - b[0]),
        n => {
            let h = n / 2;
            squared_distance(&a[..h], &b[..h]) + squared_distance(&a[h..], &b[h..])
        }
    }
}

fn mean_and_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Nearest-neighbour Lipschitz factors of an already standardized embedding.
///
/// Each row is paired with its nearest other row in l2 (lowest index wins a
/// tie). Distances are measured after scaling the embedding to unit average
/// norm, which multiplies every raw factor by `sqrt(d)`; the factor is taken
/// as `|dy| / sqrt(dist^2 / d)`. Rows whose nearest
/// neighbour is closer than [`DEGENERATE_DISTANCE`] are skipped and counted
/// in `excluded_pairs`.
pub fn lipschitz_factors(m_norm: &EmbeddingMatrix, y: &[f64]) -> Result<NlfdSample, NlfdError> {
    let n = m_norm.rows();
    if n < 2 {
        return Err(NlfdError::TooFewRows(n));
    }
    if y.len() != n {
        return Err(NlfdError::LengthMismatch {
            rows: n,
            labels: y.len(),
        });
    }
    let values = m_norm.values().as_standard_layout().into_owned();
    let d = m_norm.dim();
    let rows: Vec<&[f64]> = values
        .outer_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let dims = d as f64;

    let per_row: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, row) in rows.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dist2 = squared_distance(rows[i], row);
                if dist2 < best.1 {
                    best = (j, dist2);
                }
            }
            (best.1.sqrt() >= DEGENERATE_DISTANCE).then(|| (y[i] - y[best.0]).abs() / (best.1 / dims).sqrt())
        })
        .collect();

    let excluded_pairs = per_row.iter().filter(|f| f.is_none()).count();
    let factors: Vec<f64> = per_row.into_iter().flatten().collect();
    if factors.is_empty() {
        return Err(NlfdError::EmptySample {
            excluded: excluded_pairs,
        });
    }
    let (mu, sigma) = mean_and_std(&factors);
    Ok(NlfdSample {
        factors,
        d,
        excluded_pairs,
        mu,
        sigma,
    })
}

/// [`normalize_embeddings`] followed by [`lipschitz_factors`].
pub fn nlfd(m: &EmbeddingMatrix, y: &[f64]) -> Result<NlfdSample, NlfdError> {
    lipschitz_factors(&normalize_embeddings(m)?, y)
}

/// `(mu_a - mu_b) / sqrt(sigma_a^2 + sigma_b^2)`; positive when `b` is the
/// smoother embedding.
pub fn zscore(a: &SampleSummary, b: &SampleSummary) -> Result<f64, NlfdError> {
    if a.n == 0 || b.n == 0 {
        return Err(NlfdError::EmptySample { excluded: 0 });
    }
    let spread = (a.sigma * a.sigma + b.sigma * b.sigma).sqrt();
    if spread == 0.0 {
        return Err(NlfdError::ZeroSpread);
    }
    Ok((a.mu - b.mu) / spread)
}

/// [`zscore`] of two samples, keeping both summaries.
pub fn nlfd_zscore(a: &NlfdSample, b: &NlfdSample) -> Result<NlfdComparison, NlfdError> {
    let (a, b) = (a.summary(), b.summary());
    Ok(NlfdComparison {
        z: zscore(&a, &b)?,
        a,
        b,
    })
}

/// Equal-width bins over `[0, max factor]`; the last bin is closed.
pub fn histogram(sample: &NlfdSample, bins: usize) -> Result<Vec<HistogramBin>, NlfdError> {
    if bins == 0 {
        return Err(NlfdError::InvalidArgument("bins must be positive".into()));
    }
    if sample.is_empty() {
        return Err(NlfdError::EmptySample {
            excluded: sample.excluded_pairs,
        });
    }
    let max = sample.factors.iter().cloned().fold(0.0, f64::max);
    let width = max / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: width * b as f64,
            hi: if b + 1 == bins { max } else { width * (b + 1) as f64 },
            count: 0,
        })
        .collect();
    for &f in &sample.factors {
        let idx = if width > 0.0 {
            ((f / width) as usize).min(bins - 1)
        } else {
            0
        };
        out[idx].count += 1;
    }
    Ok(out)
}

/// Points on l2 spheres of each radius around `reference`, with uniformly
/// random directions. Draws leaving the task's box are rejected and redrawn.
pub fn ball_probe_sample(
    task: &RegressionTask,
    reference: &Assignment,
    radii: &[f64],
    per_radius: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<Assignment>)>, NlfdError> {
    if !task.is_continuous_only() {
        return Err(NlfdError::InvalidArgument(
            "ball probes need a continuous-only task".into(),
        ));
    }
    task.validate(reference)?;
    if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(NlfdError::InvalidArgument("radii must be positive and finite".into()));
    }
    if radii.windows(2).any(|w| w[0] > w[1]) {
        return Err(NlfdError::InvalidArgument("radii must be ascending".into()));
    }
    let center: Vec<f64> = reference
        .values()
        .iter()
        .map(|v| match v {
            ParamValue::Real(r) => *r,
            ParamValue::Choice(_) => unreachable!("validated as continuous"),
        })
        .collect();
    let bounds: Vec<(f64, f64)> = task
        .params()
        .iter()
        .map(|p| p.bounds().expect("continuous"))
        .collect();
    let dof = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut out = Vec::with_capacity(radii.len());
    for &radius in radii {
        let mut points = Vec::with_capacity(per_radius);
        for _ in 0..per_radius {
            let mut rejected = 0;
            let point = loop {
                let dir: Vec<f64> = (0..dof).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let p: Vec<f64> = center
                        .iter()
                        .zip(&dir)
                        .map(|(c, u)| c + u / norm * radius)
                        .collect();
                    if p.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi) {
                        break p;
                    }
                }
                rejected += 1;
                if rejected >= PROBE_REJECTION_BUDGET {
                    return Err(NlfdError::RadiusInfeasible {
                        radius,
                        attempts: rejected,
                    });
                }
            };
            points.push(Assignment::from_reals(point));
        }
        out.push((radius, points));
    }
    Ok(out)
}

/// Every unordered pair of rows `i < j` with its l2 distance and the labels
/// of both rows.
pub fn pairwise_distance_export(
    m: &EmbeddingMatrix,
    labels: &[f64],
) -> Result<Vec<DistanceRecord>, NlfdError> {
    let n = m.rows();
    if labels.len() != n {
        return Err(NlfdError::LengthMismatch {
            rows: n,
            labels: labels.len(),
        });
    }
    let values: Array2<f64> = m.values().as_standard_layout().into_owned();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = values.row(i);
        for j in i + 1..n {
            let b = values.row(j);
            out.push(DistanceRecord {
                i,
                j,
                distance: squared_distance(a.as_slice().unwrap(), b.as_slice().unwrap()).sqrt(),
                label_i: labels[i],
                label_j: labels[j],
            });
        }
    }
    Ok(out)
}

pub fn write_histogram_csv<W: Write>(w: W, bins: &[HistogramBin]) -> Result<(), NlfdError> {
    let mut wtr = csv::Writer::from_writer(w);
    for b in bins {
        wtr.serialize(b)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_distances_csv<W: Write>(w: W, records: &[DistanceRecord]) -> Result<(), NlfdError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedders::{Embedder, Provenance, ScrambledEmbedder, TraditionalEmbedder};
    use crate::task::sample_uniform;
    use crate::FunctionId;
    use proptest::prelude::*;
    use rand::Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let d = rows[0].len();
        EmbeddingMatrix::from_rows(rows, d, Provenance::of("test", &())).unwrap()
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }

    #[test]
    fn normalization_centers_and_scales() {
        let mut rows = random_rows(30, 3, 1);
        for r in rows.iter_mut() {
            r[2] = 7.5;
        }
        let m = normalize_embeddings(&matrix(rows)).unwrap();
        for c in 0..3 {
            let col = m.values().column(c);
            let mean = col.sum() / 30.0;
            let var = col.iter().map(|v| v * v).sum::<f64>() / 30.0 - mean * mean;
            assert!(mean.abs() < 1e-9);
            if c < 2 {
                assert!((var - 1.0).abs() < 1e-9);
            } else {
                assert!(col.iter().all(|&v| v == 0.0));
            }
        }
        assert!(normalize_embeddings(&matrix(vec![vec![1.0]])).is_err());
    }

    #[test]
    fn two_point_factor() {
        // Distance 2 between the rows; |dy| = 4; unit-norm rescaling at d = 4
        // multiplies the raw factor 2 by sqrt(4).
        let m = matrix(vec![vec![0.0, 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0]]);
        let s = lipschitz_factors(&m, &[1.0, 5.0]).unwrap();
        assert_eq!(s.factors, vec![4.0, 4.0]);
        assert_eq!((s.d, s.excluded_pairs, s.mu, s.sigma), (4, 0, 4.0, 0.0));
    }

    #[test]
    fn nearest_neighbour_matches_exhaustive_search() {
        let rows = random_rows(40, 3, 9);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = lipschitz_factors(&matrix(rows.clone()), &y).unwrap();
        for i in 0..40 {
            let (mut bj, mut bd) = (0, f64::INFINITY);
            for j in 0..40 {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if j != i && d < bd {
                    (bj, bd) = (j, d);
                }
            }
            let want = (y[i] - y[bj]).abs() / bd * 3f64.sqrt();
            assert!((s.factors[i] - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn duplicate_rows_are_excluded() {
        let m = matrix(vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![3.0, -1.0]]);
        let s = lipschitz_factors(&m, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.excluded_pairs, 2);
        assert_eq!(s.factors.len(), 1);
        let all_same = matrix(vec![vec![1.0], vec![1.0]]);
        assert!(matches!(
            lipschitz_factors(&all_same, &[0.0, 1.0]),
            Err(NlfdError::EmptySample { excluded: 2 })
        ));
    }

    #[test]
    fn constant_targets_give_zero_factors() {
        let s = nlfd(&matrix(random_rows(20, 4, 2)), &[3.0; 20]).unwrap();
        assert!(s.factors.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn zscore_examples() {
        let s = nlfd(&matrix(random_rows(20, 2, 3)), &(0..20).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!(nlfd_zscore(&s, &s).unwrap().z, 0.0);
        let mk = |mu, sigma| NlfdSample {
            factors: vec![mu],
            d: 1,
            excluded_pairs: 0,
            mu,
            sigma,
        };
        let z = nlfd_zscore(&mk(2.0, 1.0), &mk(1.0, 1.0)).unwrap().z;
        assert!((z - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(nlfd_zscore(&mk(2.0, 0.0), &mk(1.0, 0.0)), Err(NlfdError::ZeroSpread)));
    }

    #[test]
    fn histogram_partitions_the_sample() {
        let s = NlfdSample {
            factors: vec![0.0, 0.5, 1.0, 2.0, 2.0],
            d: 1,
            excluded_pairs: 3,
            mu: 1.1,
            sigma: 0.8,
        };
        let h = histogram(&s, 4).unwrap();
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 1, 1, 2]);
        assert_eq!((h[0].lo, h[3].hi), (0.0, 2.0));
        assert_eq!(histogram(&s, 1).unwrap()[0].count, 5);
        assert!(histogram(&s, 0).is_err());

        let flat = NlfdSample {
            factors: vec![1.5; 6],
            ..s.clone()
        };
        let counts: Vec<usize> = histogram(&flat, 5).unwrap().iter().map(|b| b.count).collect();
        assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
        let zeros = NlfdSample {
            factors: vec![0.0; 4],
            ..s
        };
        assert_eq!(histogram(&zeros, 3).unwrap()[0].count, 4);
    }

    #[test]
    fn ball_probes_lie_on_their_spheres() {
        let task = RegressionTask::synthetic(FunctionId::SPHERE, 100).unwrap();
        let origin = Assignment::from_reals(vec![0.0; 100]);
        let probes = ball_probe_sample(&task, &origin, &[0.5, 1.0, 3.0], 10, 4).unwrap();
        for (r, pts) in &probes {
            assert_eq!(pts.len(), 10);
            for p in pts {
                let d = p.reals().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((d - r).abs() < 1e-9);
                task.validate(p).unwrap();
            }
        }
        assert_eq!(probes, ball_probe_sample(&task, &origin, &[0.5, 1.0, 3.0], 10, 4).unwrap());
        assert!(ball_probe_sample(&task, &origin, &[2.0, 1.0], 1, 0).is_err());
    }

    #[test]
    fn infeasible_radius_is_reported() {
        let task = RegressionTask::synthetic(FunctionId::SPHERE, 2).unwrap();
        let corner = Assignment::from_reals([5.0, 5.0]);
        assert!(matches!(
            ball_probe_sample(&task, &corner, &[20.0], 1, 0),
            Err(NlfdError::RadiusInfeasible { .. })
        ));
    }

    #[test]
    fn pairwise_export_matches_recomputation() {
        let rows = random_rows(10, 3, 5);
        let labels: Vec<f64> = (0..10).map(|i| i as f64 * 2.0).collect();
        let recs = pairwise_distance_export(&matrix(rows.clone()), &labels).unwrap();
        assert_eq!(recs.len(), 45);
        for r in &recs {
            assert!(r.i < r.j);
            let want: f64 = (0..3).map(|k| (rows[r.i][k] - rows[r.j][k]).powi(2)).sum::<f64>().sqrt();
            assert!((r.distance - want).abs() < 1e-12);
            assert_eq!((r.label_i, r.label_j), (labels[r.i], labels[r.j]));
        }
        let mut buf = Vec::new();
        write_distances_csv(&mut buf, &recs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 46);
    }

    #[test]
    fn traditional_embedding_is_smoother_than_scrambled_on_sphere() {
        let task = RegressionTask::synthetic(FunctionId::SPHERE, 10).unwrap();
        let ds = sample_uniform(&task, 500, 11).unwrap();
        let xs = ds.xs();
        let y = ds.ys();
        let trad = nlfd(&TraditionalEmbedder.embed(&task, &xs).unwrap(), &y).unwrap();
        let scrambled = nlfd(&ScrambledEmbedder { key: 3 }.embed(&task, &xs).unwrap(), &y).unwrap();
        assert!(trad.mu < scrambled.mu, "{} vs {}", trad.mu, scrambled.mu);
        assert!(nlfd_zscore(&scrambled, &trad).unwrap().z > 0.0);
    }

    proptest! {
        #[test]
        fn zscore_is_antisymmetric(seed in 0u64..1000) {
            let y: Vec<f64> = (0..15).map(|i| ((i as f64) * 1.3 + seed as f64).cos()).collect();
            let a = nlfd(&matrix(random_rows(15, 3, seed)), &y).unwrap();
            let b = nlfd(&matrix(random_rows(15, 5, seed + 1)), &y).unwrap();
            prop_assert_eq!(nlfd_zscore(&a, &b).unwrap().z, -nlfd_zscore(&b, &a).unwrap().z);
        }

        #[test]
        fn positive_scaling_is_absorbed(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let rows = random_rows(25, 4, seed);
            let y: Vec<f64> = rows.iter().map(|r| r[0] * r[1] - r[2]).collect();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            let a = nlfd(&matrix(rows), &y).unwrap();
            let b = nlfd(&matrix(scaled), &y).unwrap();
            prop_assert_eq!(a.factors.len(), b.factors.len());
            for (x, z) in a.factors.iter().zip(&b.factors) {
                prop_assert!((x - z).abs() <= 1e-9);
            }
        }

        #[test]
        fn coordinate_duplication_is_width_neutral(seed in 0u64..1000, copies in 2usize..5) {
            let rows = random_rows(25, 3, seed);
            let y: Vec<f64> = rows.iter().map(|r| r[0].exp() + r[2]).collect();
            let wide: Vec<Vec<f64>> = rows.iter().map(|r| r.repeat(copies)).collect();
            let a = nlfd(&matrix(rows), &y).unwrap();
            let b = nlfd(&matrix(wide), &y).unwrap();
            prop_assert_eq!(b.d, a.d * copies);
            prop_assert_eq!(a.excluded_pairs, b.excluded_pairs);
            for (x, z) in a.factors.iter().zip(&b.factors) {
                prop_assert!((x - z).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn power_of_two_duplication_is_bit_exact(seed in 0u64..1000, dim in 1usize..40, log2 in 1u32..4) {
            let rows = random_rows(30, dim, seed);
            let y: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v.sin()).sum()).collect();
            let wide: Vec<Vec<f64>> = rows.iter().map(|r| r.repeat(1 << log2)).collect();
            let a = nlfd(&matrix(rows), &y).unwrap();
            let b = nlfd(&matrix(wide), &y).unwrap();
            prop_assert_eq!(a.factors, b.factors);
        }
    }
}
