use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adamw_step, fit_normalizer, AdamState, MlpModel, TrainError, YNormalizer};
use crate::metrics::{self, MetricBundle};

pub const DEFAULT_LEARNING_RATES: [f64; 5] = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2];
pub const DEFAULT_WEIGHT_DECAYS: [f64; 3] = [0.0, 0.1, 1.0];

/// Largest training set that is still trained full-batch when no batch size
/// is configured.
const FULL_BATCH_LIMIT: usize = 1024;
const AUTO_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    /// `None` trains full-batch up to 1024 rows and in batches of 256 above.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            weight_decays: DEFAULT_WEIGHT_DECAYS.to_vec(),
            max_epochs: 300,
            patience: 20,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.learning_rates.is_empty() || self.weight_decays.is_empty() {
            return bad("learning-rate and weight-decay grids must be non-empty");
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return bad("learning rates must be positive and finite");
        }
        if self.weight_decays.iter().any(|&wd| !(wd >= 0.0 && wd.is_finite())) {
            return bad("weight decays must be non-negative and finite");
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub fn batch_size_for(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(n),
            None if n <= FULL_BATCH_LIMIT => n,
            None => AUTO_BATCH,
        }
    }

    /// Grid cells in sweep order: learning rate outer, weight decay inner.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.weight_decays.iter().map(move |&wd| (lr, wd)))
            .collect()
    }
}

/// One row of the sweep table. `val_mse` is in normalized target units and
/// is `None` for a diverged cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub val_mse: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub val_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub sweep: Vec<SweepEntry>,
    pub test: Option<MetricBundle>,
}

fn check_split(name: &str, x: &ArrayView2<'_, f64>, y: &[f64]) -> Result<(), TrainError> {
    if x.nrows() != y.len() {
        return Err(TrainError::DimensionMismatch(format!(
            "{name}: {} feature rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(TrainError::EmptyData(format!("{name} split is empty")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite(format!("{name} split")));
    }
    Ok(())
}

fn val_mse(model: &MlpModel, x: &ArrayView2<'_, f64>, y: &[f64]) -> Result<f64, TrainError> {
    let pred = model.forward(x.view())?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64)
}

struct CellOutcome {
    entry: SweepEntry,
    model: Option<MlpModel>,
}

struct Cell<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    vx: ArrayView2<'a, f64>,
    vy: &'a [f64],
    cfg: &'a TrainConfig,
}

impl Cell<'_> {
    fn run(&self, lr: f64, wd: f64) -> CellOutcome {
        let mut entry = SweepEntry {
            learning_rate: lr,
            weight_decay: wd,
            val_mse: None,
            best_epoch: 0,
            epochs_run: 0,
            diverged: false,
        };
        match self.fit(lr, wd, &mut entry) {
            Ok(best) => {
                entry.val_mse = Some(best.0);
                CellOutcome {
                    entry,
                    model: Some(best.1),
                }
            }
            Err(_) => {
                entry.diverged = true;
                CellOutcome { entry, model: None }
            }
        }
    }

    fn fit(&self, lr: f64, wd: f64, entry: &mut SweepEntry) -> Result<(f64, MlpModel), TrainError> {
        let n = self.y.len();
        let cfg = self.cfg;
        let mut model = MlpModel::init(self.x.ncols(), cfg.seed);
        let mut state = AdamState::new(&model);
        let batch = cfg.batch_size_for(n);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..n).collect();
        let mut best: Option<(f64, MlpModel)> = None;
        let mut stale = 0;

        for epoch in 1..=cfg.max_epochs {
            entry.epochs_run = epoch;
            if batch >= n {
                let (loss, g) = model.loss_and_grad(self.x.view(), self.y)?;
                if !loss.is_finite() {
                    return Err(TrainError::Diverged(format!("loss at epoch {epoch}")));
                }
                adamw_step(&mut model, &g, lr, wd, &mut state)?;
            } else {
                order.shuffle(&mut rng);
                for chunk in order.chunks(batch) {
                    let xb = self.x.select(Axis(0), chunk);
                    let yb: Vec<f64> = chunk.iter().map(|&i| self.y[i]).collect();
                    let (loss, g) = model.loss_and_grad(xb.view(), &yb)?;
                    if !loss.is_finite() {
                        return Err(TrainError::Diverged(format!("loss at epoch {epoch}")));
                    }
                    adamw_step(&mut model, &g, lr, wd, &mut state)?;
                }
            }
            let v = val_mse(&model, &self.vx, self.vy)?;
            if !v.is_finite() {
                return Err(TrainError::Diverged(format!("validation loss at epoch {epoch}")));
            }
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.clone()));
                entry.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        best.ok_or_else(|| TrainError::Diverged("no epoch completed".into()))
    }
}

/// Sweeps the learning-rate × weight-decay grid and returns the head with the
/// lowest validation MSE, restored to its best epoch.
pub fn train(
    train: (ArrayView2<'_, f64>, &[f64]),
    val: (ArrayView2<'_, f64>, &[f64]),
    cfg: &TrainConfig,
) -> Result<(MlpModel, YNormalizer, RegressionReport), TrainError> {
    cfg.validate()?;
    let (x, y) = train;
    let (vx, vy) = val;
    check_split("train", &x, y)?;
    check_split("validation", &vx, vy)?;
    if vx.ncols() != x.ncols() {
        return Err(TrainError::DimensionMismatch(format!(
            "train width {} but validation width {}",
            x.ncols(),
            vx.ncols()
        )));
    }
    let normalizer = fit_normalizer(y)?;
    let yn = normalizer.normalize_all(y);
    let vyn = normalizer.normalize_all(vy);
    let cell = Cell {
        x,
        y: &yn,
        vx,
        vy: &vyn,
        cfg,
    };

    let outcomes: Vec<CellOutcome> = cfg
        .grid()
        .into_par_iter()
        .map(|(lr, wd)| cell.run(lr, wd))
        .collect();

    let mut chosen: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if let Some(v) = o.entry.val_mse {
            if chosen.is_none_or(|c| v < outcomes[c].entry.val_mse.unwrap()) {
                chosen = Some(i);
            }
        }
    }
    let sweep: Vec<SweepEntry> = outcomes.iter().map(|o| o.entry.clone()).collect();
    let Some(c) = chosen else {
        return Err(TrainError::AllDiverged { sweep });
    };
    let entry = sweep[c].clone();
    let model = outcomes.into_iter().nth(c).and_then(|o| o.model).expect("chosen cell has a model");
    let report = RegressionReport {
        learning_rate: entry.learning_rate,
        weight_decay: entry.weight_decay,
        val_mse: entry.val_mse.expect("chosen cell converged"),
        best_epoch: entry.best_epoch,
        epochs_run: entry.epochs_run,
        sweep,
        test: None,
    };
    Ok((model, normalizer, report))
}

/// Predictions in original target units.
pub fn predict(
    model: &MlpModel,
    normalizer: &YNormalizer,
    features: ArrayView2<'_, f64>,
) -> Result<Vec<f64>, TrainError> {
    let z = model.forward(features)?;
    Ok(z.iter().map(|&v| normalizer.denormalize(v)).collect())
}

pub fn evaluate(
    model: &MlpModel,
    normalizer: &YNormalizer,
    features: ArrayView2<'_, f64>,
    y: &[f64],
) -> Result<MetricBundle, TrainError> {
    check_split("test", &features, y)?;
    let yhat = predict(model, normalizer, features)?;
    Ok(metrics::MetricBundle::evaluate(y, &yhat)?)
}

/// [`train`] followed by scoring on the test split.
pub fn fit_and_evaluate(
    train_split: (ArrayView2<'_, f64>, &[f64]),
    val: (ArrayView2<'_, f64>, &[f64]),
    test: (ArrayView2<'_, f64>, &[f64]),
    cfg: &TrainConfig,
) -> Result<(MlpModel, YNormalizer, RegressionReport), TrainError> {
    let (model, normalizer, mut report) = train(train_split, val, cfg)?;
    report.test = Some(evaluate(&model, &normalizer, test.0, test.1)?);
    Ok((model, normalizer, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            learning_rates: vec![1e-3, 1e-2],
            weight_decays: vec![0.0],
            max_epochs: 40,
            patience: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_grid_has_fifteen_cells() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.grid().len(), 15);
        assert_eq!((cfg.max_epochs, cfg.patience), (300, 20));
        assert_eq!(cfg.batch_size_for(1024), 1024);
        assert_eq!(cfg.batch_size_for(1025), 256);
    }

    #[test]
    fn linear_target_ranks_well() {
        let x = uniform(500, 4, 1);
        let y: Vec<f64> = x.column(0).to_vec();
        let cfg = TrainConfig {
            learning_rates: vec![1e-3, 5e-3],
            weight_decays: vec![0.0, 0.1],
            max_epochs: 200,
            ..TrainConfig::default()
        };
        let s = |a: usize, b: usize| x.slice(ndarray::s![a..b, ..]);
        let (_, _, report) = fit_and_evaluate(
            (s(0, 400), &y[..400]),
            (s(400, 450), &y[400..450]),
            (s(450, 500), &y[450..]),
            &cfg,
        )
        .unwrap();
        let k = report.test.unwrap().kendall_tau;
        assert!(k >= 0.95, "kendall {k}");
        assert_eq!(report.sweep.len(), 4);
    }

    #[test]
    fn chosen_cell_has_minimal_validation_loss_and_is_deterministic() {
        let x = uniform(80, 3, 2);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * r[1] + r[2]).collect();
        let cfg = quick();
        let run = || train((x.slice(ndarray::s![..60, ..]), &y[..60]), (x.slice(ndarray::s![60.., ..]), &y[60..]), &cfg).unwrap();
        let (m1, n1, r1) = run();
        let (m2, n2, r2) = run();
        assert_eq!((m1, n1, &r1), (m2, n2, &r2));
        let min = r1.sweep.iter().filter_map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(r1.val_mse, min);
    }

    #[test]
    fn restored_weights_match_best_epoch() {
        let x = uniform(60, 2, 3);
        let y: Vec<f64> = x.column(1).iter().map(|v| v.sin()).collect();
        let (tx, vx) = (x.slice(ndarray::s![..40, ..]), x.slice(ndarray::s![40.., ..]));
        let (model, norm, report) = train((tx, &y[..40]), (vx, &y[40..]), &quick()).unwrap();
        let v = val_mse(&model, &vx, &norm.normalize_all(&y[40..])).unwrap();
        assert_eq!(v, report.val_mse);
    }

    #[test]
    fn minibatches_are_deterministic() {
        let x = uniform(50, 2, 4);
        let y: Vec<f64> = x.column(0).to_vec();
        let cfg = TrainConfig {
            batch_size: Some(16),
            ..quick()
        };
        let go = || train((x.view(), &y), (x.view(), &y), &cfg).unwrap().2;
        assert_eq!(go(), go());
    }

    #[test]
    fn all_diverged_carries_the_sweep() {
        let x = uniform(20, 2, 5);
        let y: Vec<f64> = x.column(0).to_vec();
        let cfg = TrainConfig {
            learning_rates: vec![1e300],
            weight_decays: vec![0.0],
            max_epochs: 10,
            ..TrainConfig::default()
        };
        match train((x.view(), &y), (x.view(), &y), &cfg) {
            Err(TrainError::AllDiverged { sweep }) => assert!(sweep[0].diverged),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = uniform(10, 2, 0);
        let y = vec![0.0; 10];
        assert!(train((x.view(), &y[..9]), (x.view(), &y), &quick()).is_err());
        let v = uniform(10, 3, 0);
        assert!(train((x.view(), &y), (v.view(), &y), &quick()).is_err());
        let bad = TrainConfig {
            learning_rates: vec![],
            ..quick()
        };
        assert!(train((x.view(), &y), (x.view(), &y), &bad).is_err());
    }

    #[test]
    fn normalizer_absorbs_affine_targets() {
        let x = uniform(70, 3, 6);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] - 0.5 * r[2] * r[2]).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * 1000.0 + 7.0).collect();
        let cfg = quick();
        let s = |a: usize, b: usize| x.slice(ndarray::s![a..b, ..]);
        let (m1, n1, _) = train((s(0, 50), &y[..50]), (s(50, 70), &y[50..]), &cfg).unwrap();
        let (m2, n2, _) = train((s(0, 50), &y2[..50]), (s(50, 70), &y2[50..]), &cfg).unwrap();
        let p1 = predict(&m1, &n1, x.view()).unwrap();
        let p2 = predict(&m2, &n2, x.view()).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            let a = a * 1000.0 + 7.0;
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0), "{a} vs {b}");
        }
    }
}
