//! Regression tasks, parameter spaces, labeled datasets and splitting.
//!
//! A task declares an ordered list of parameters. That declaration order is
//! the canonical key order used everywhere downstream: feature layouts,
//! serialized strings and offline data columns are all aligned to it.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbob::{BbobError, FunctionId};

/// Bounds shared by every synthetic task coordinate.
pub const SYNTHETIC_BOUNDS: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid parameter spec `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },
    #[error("invalid task `{id}`: {reason}")]
    InvalidTask { id: String, reason: String },
    #[error("task `{0}` has an offline source; sampling needs a synthetic objective")]
    UnsupportedSource(String),
    #[error("assignment has {got} values, task declares {expected} parameters")]
    ArityMismatch { expected: usize, got: usize },
    #[error("parameter `{name}`: {reason}")]
    InvalidValue { name: String, reason: String },
    #[error("split needs at least 10 examples, got {0}")]
    TooFewExamples(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("split of {n} examples with ratios {ratios:?} leaves the {part} partition empty")]
    EmptyPartition {
        n: usize,
        ratios: (f64, f64, f64),
        part: &'static str,
    },
    #[error("offline data schema mismatch: {0}")]
    Schema(String),
    #[error("offline data row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error(transparent)]
    Objective(#[from] BbobError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed task spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParamKind {
    Continuous { lo: f64, hi: f64 },
    Categorical { choices: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self, TaskError> {
        let spec = ParamSpec {
            name: name.into(),
            kind: ParamKind::Continuous { lo, hi },
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        choices: impl IntoIterator<Item = S>,
    ) -> Result<Self, TaskError> {
        let spec = ParamSpec {
            name: name.into(),
            kind: ParamKind::Categorical {
                choices: choices.into_iter().map(Into::into).collect(),
            },
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), TaskError> {
        let bad = |reason: &str| TaskError::InvalidParam {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(bad("name must be non-empty"));
        }
        match &self.kind {
            ParamKind::Continuous { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(bad("continuous bounds need finite lo < hi"));
                }
            }
            ParamKind::Categorical { choices } => {
                if choices.is_empty() {
                    return Err(bad("categorical choices must be non-empty"));
                }
                let mut seen = HashSet::new();
                if !choices.iter().all(|c| seen.insert(c.as_str())) {
                    return Err(bad("categorical choices must be duplicate-free"));
                }
            }
        }
        Ok(())
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, ParamKind::Continuous { .. })
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.kind {
            ParamKind::Continuous { lo, hi } => Some((lo, hi)),
            ParamKind::Categorical { .. } => None,
        }
    }

    /// Checks one value against this parameter.
    pub fn validate(&self, value: &ParamValue) -> Result<(), TaskError> {
        let bad = |reason: String| TaskError::InvalidValue {
            name: self.name.clone(),
            reason,
        };
        match (&self.kind, value) {
            (ParamKind::Continuous { lo, hi }, ParamValue::Real(v)) => {
                if !v.is_finite() {
                    Err(bad(format!("non-finite value {v}")))
                } else if v < lo || v > hi {
                    Err(bad(format!("value {v} outside [{lo}, {hi}]")))
                } else {
                    Ok(())
                }
            }
            (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => {
                if choices.contains(c) {
                    Ok(())
                } else {
                    Err(bad(format!("unknown choice '{c}'")))
                }
            }
            (ParamKind::Continuous { .. }, ParamValue::Choice(c)) => {
                Err(bad(format!("expected a real value, got choice '{c}'")))
            }
            (ParamKind::Categorical { .. }, ParamValue::Real(v)) => {
                Err(bad(format!("expected a choice, got real {v}")))
            }
        }
    }
}

/// The value one parameter takes in an input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Real(f64),
    Choice(String),
}

impl ParamValue {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            ParamValue::Real(v) => Some(*v),
            ParamValue::Choice(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Choice(c) => f.write_str(c),
        }
    }
}

/// One input `x`: one value per task parameter, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub Vec<ParamValue>);

impl Assignment {
    pub fn from_reals(values: impl IntoIterator<Item = f64>) -> Self {
        Assignment(values.into_iter().map(ParamValue::Real).collect())
    }

    pub fn values(&self) -> &[ParamValue] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Real coordinates, or `None` if any value is categorical.
    pub fn reals(&self) -> Option<Vec<f64>> {
        self.0.iter().map(ParamValue::as_real).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSource {
    Synthetic(FunctionId),
    Offline(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTask", into = "RawTask")]
pub struct RegressionTask {
    id: String,
    params: Vec<ParamSpec>,
    source: TaskSource,
}

#[derive(Serialize, Deserialize)]
struct RawTask {
    id: String,
    params: Vec<ParamSpec>,
    source: TaskSource,
}

impl TryFrom<RawTask> for RegressionTask {
    type Error = TaskError;
    fn try_from(raw: RawTask) -> Result<Self, TaskError> {
        RegressionTask::new(raw.id, raw.params, raw.source)
    }
}

impl From<RegressionTask> for RawTask {
    fn from(t: RegressionTask) -> Self {
        RawTask {
            id: t.id,
            params: t.params,
            source: t.source,
        }
    }
}

impl RegressionTask {
    pub fn new(
        id: impl Into<String>,
        params: Vec<ParamSpec>,
        source: TaskSource,
    ) -> Result<Self, TaskError> {
        let id = id.into();
        let invalid = |reason: String| TaskError::InvalidTask {
            id: id.clone(),
            reason,
        };
        if params.is_empty() {
            return Err(invalid("a task needs at least one parameter".into()));
        }
        let mut names = HashSet::new();
        for p in &params {
            p.check()?;
            if !names.insert(p.name.as_str()) {
                return Err(invalid(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        if let TaskSource::Synthetic(_) = source {
            if params.iter().any(|p| p.bounds() != Some(SYNTHETIC_BOUNDS)) {
                return Err(invalid(
                    "synthetic tasks need continuous parameters bounded by [-5, 5]".into(),
                ));
            }
        }
        Ok(RegressionTask { id, params, source })
    }

    /// A BBOB task with parameters `x0..x{dof-1}` over [-5, 5].
    pub fn synthetic(function: FunctionId, dof: usize) -> Result<Self, TaskError> {
        let (lo, hi) = SYNTHETIC_BOUNDS;
        let params = (0..dof)
            .map(|i| ParamSpec::continuous(format!("x{i}"), lo, hi))
            .collect::<Result<Vec<_>, _>>()?;
        RegressionTask::new(
            format!("{}_dof{dof}", function.as_str()),
            params,
            TaskSource::Synthetic(function),
        )
    }

    pub fn from_json_file(path: &Path) -> Result<Self, TaskError> {
        let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn source(&self) -> &TaskSource {
        &self.source
    }

    pub fn dof(&self) -> usize {
        self.params.len()
    }

    pub fn is_continuous_only(&self) -> bool {
        self.params.iter().all(ParamSpec::is_continuous)
    }

    pub fn validate(&self, x: &Assignment) -> Result<(), TaskError> {
        if x.len() != self.params.len() {
            return Err(TaskError::ArityMismatch {
                expected: self.params.len(),
                got: x.len(),
            });
        }
        self.params
            .iter()
            .zip(x.values())
            .try_for_each(|(p, v)| p.validate(v))
    }

    /// Evaluates the synthetic objective at `x`.
    pub fn evaluate(&self, x: &Assignment) -> Result<f64, TaskError> {
        let TaskSource::Synthetic(function) = &self.source else {
            return Err(TaskError::UnsupportedSource(self.id.clone()));
        };
        self.validate(x)?;
        let coords = x.reals().expect("validated synthetic assignment is real");
        Ok(function.evaluate(&coords)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Assignment,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    task_id: String,
    examples: Vec<LabeledExample>,
    split: Option<Split>,
}

impl Dataset {
    /// Builds an untagged dataset, validating every example against `task`.
    pub fn new(task: &RegressionTask, examples: Vec<LabeledExample>) -> Result<Self, TaskError> {
        for (i, ex) in examples.iter().enumerate() {
            task.validate(&ex.x).map_err(|e| TaskError::Row {
                row: i + 1,
                reason: e.to_string(),
            })?;
            if !ex.y.is_finite() {
                return Err(TaskError::Row {
                    row: i + 1,
                    reason: format!("non-finite y {}", ex.y),
                });
            }
        }
        Ok(Dataset {
            task_id: task.id().to_string(),
            examples,
            split: None,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn split(&self) -> Option<Split> {
        self.split
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn xs(&self) -> Vec<Assignment> {
        self.examples.iter().map(|e| e.x.clone()).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.y).collect()
    }

    /// First `n` examples, keeping the split tag.
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            task_id: self.task_id.clone(),
            examples: self.examples[..n.min(self.examples.len())].to_vec(),
            split: self.split,
        }
    }

    /// Concatenation of several datasets of the same task, untagged.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Dataset {
        let mut parts = parts.into_iter().peekable();
        let task_id = parts.peek().map(|d| d.task_id.clone()).unwrap_or_default();
        Dataset {
            task_id,
            examples: parts.flat_map(|d| d.examples.iter().cloned()).collect(),
            split: None,
        }
    }
}

/// Draws `n` inputs uniformly over the task's box and labels them with its objective.
pub fn sample_uniform(task: &RegressionTask, n: usize, seed: u64) -> Result<Dataset, TaskError> {
    let TaskSource::Synthetic(function) = task.source() else {
        return Err(TaskError::UnsupportedSource(task.id().to_string()));
    };
    if n == 0 {
        return Err(TaskError::InvalidTask {
            id: task.id().to_string(),
            reason: "sample count must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds: Vec<(f64, f64)> = task
        .params()
        .iter()
        .map(|p| p.bounds().expect("synthetic params are continuous"))
        .collect();
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let coords: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        let y = function.evaluate(&coords)?;
        examples.push(LabeledExample {
            x: Assignment::from_reals(coords),
            y,
        });
    }
    Ok(Dataset {
        task_id: task.id().to_string(),
        examples,
        split: None,
    })
}

/// Train/validation/test sizes for `n` examples: the validation and test
/// parts get `floor(n * r)`, train takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize), TaskError> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r < 0.0) || (tr + va + te - 1.0).abs() > 1e-9
    {
        return Err(TaskError::BadRatios(ratios));
    }
    if n < 10 {
        return Err(TaskError::TooFewExamples(n));
    }
    // Small slack so that e.g. 10 * 0.1 does not floor to 0 after rounding.
    let part = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let (n_val, n_test) = (part(va), part(te));
    let n_train = n.saturating_sub(n_val + n_test);
    for (size, name) in [(n_train, "train"), (n_val, "validation"), (n_test, "test")] {
        if size == 0 {
            return Err(TaskError::EmptyPartition {
                n,
                ratios,
                part: name,
            });
        }
    }
    Ok((n_train, n_val, n_test))
}

/// Seeded shuffle followed by a contiguous train/validation/test partition.
pub fn split_dataset(
    ds: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), TaskError> {
    let (n_train, n_val, _) = split_sizes(ds.len(), ratios)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize], split: Split| Dataset {
        task_id: ds.task_id.clone(),
        examples: idx.iter().map(|&i| ds.examples[i].clone()).collect(),
        split: Some(split),
    };
    Ok((
        take(&order[..n_train], Split::Train),
        take(&order[n_train..n_train + n_val], Split::Validation),
        take(&order[n_train + n_val..], Split::Test),
    ))
}

/// Reads an offline data file: a header naming every task parameter plus a
/// final `y` column, then one row per evaluation. Rows keep file order.
pub fn ingest_offline(path: &Path, task: &RegressionTask) -> Result<Dataset, TaskError> {
    let file = fs::File::open(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_offline_reader(file, task)
}

pub fn ingest_offline_reader<R: std::io::Read>(
    reader: R,
    task: &RegressionTask,
) -> Result<Dataset, TaskError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    if header.last().map(String::as_str) != Some("y") {
        return Err(TaskError::Schema("last column must be `y`".into()));
    }
    let columns = &header[..header.len() - 1];
    let unknown: Vec<&str> = columns
        .iter()
        .filter(|c| !task.params().iter().any(|p| &p.name == *c))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(TaskError::Schema(format!(
            "unknown columns: {}",
            unknown.join(", ")
        )));
    }
    let missing: Vec<&str> = task
        .params()
        .iter()
        .filter(|p| !columns.contains(&p.name))
        .map(|p| p.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(TaskError::Schema(format!(
            "missing columns: {}",
            missing.join(", ")
        )));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = columns.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(TaskError::Schema(format!("duplicate column: {dup}")));
    }
    // Column index of each declared parameter.
    let positions: Vec<usize> = task
        .params()
        .iter()
        .map(|p| columns.iter().position(|c| c == &p.name).unwrap())
        .collect();

    let mut examples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| TaskError::Row {
            row,
            reason: e.to_string(),
        })?;
        let row_err = |reason: String| TaskError::Row { row, reason };
        if record.len() != header.len() {
            return Err(row_err(format!(
                "expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(positions.len());
        for (spec, &col) in task.params().iter().zip(&positions) {
            let raw = record[col].trim();
            let value = if spec.is_continuous() {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| row_err(format!("`{}`: cannot parse '{raw}' as a number", spec.name)))?;
                ParamValue::Real(v)
            } else {
                ParamValue::Choice(raw.to_string())
            };
            spec.validate(&value).map_err(|e| row_err(e.to_string()))?;
            values.push(value);
        }
        let raw_y = record[header.len() - 1].trim();
        let y: f64 = raw_y
            .parse()
            .map_err(|_| row_err(format!("cannot parse y '{raw_y}'")))?;
        if !y.is_finite() {
            return Err(row_err(format!("non-finite y '{raw_y}'")));
        }
        examples.push(LabeledExample {
            x: Assignment(values),
            y,
        });
    }
    Ok(Dataset {
        task_id: task.id().to_string(),
        examples,
        split: None,
    })
}

/// Writes a dataset in the offline data format (header, one row per example).
pub fn write_offline<W: std::io::Write>(
    writer: W,
    task: &RegressionTask,
    ds: &Dataset,
) -> Result<(), TaskError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = task.params().iter().map(|p| p.name.as_str()).collect();
    header.push("y");
    w.write_record(&header)?;
    for ex in ds.examples() {
        let mut row: Vec<String> = ex.x.values().iter().map(|v| v.to_string()).collect();
        row.push(ex.y.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| TaskError::Io {
        path: PathBuf::from("<writer>"),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbob::FunctionId;

    fn sphere(dof: usize) -> RegressionTask {
        RegressionTask::synthetic(FunctionId::SPHERE, dof).unwrap()
    }

    fn mixed_task() -> RegressionTask {
        RegressionTask::new(
            "mixed",
            vec![
                ParamSpec::continuous("lr", 0.0, 1.0).unwrap(),
                ParamSpec::categorical("act", ["relu", "selu"]).unwrap(),
            ],
            TaskSource::Offline("data.csv".into()),
        )
        .unwrap()
    }

    #[test]
    fn sample_sphere_small() {
        let ds = sample_uniform(&sphere(2), 3, 7).unwrap();
        assert_eq!(ds.len(), 3);
        for ex in ds.examples() {
            let xs = ex.x.reals().unwrap();
            assert!(xs.iter().all(|v| (-5.0..=5.0).contains(v)));
            assert_eq!(ex.y, xs.iter().map(|v| v * v).sum::<f64>());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let t = sphere(5);
        assert_eq!(sample_uniform(&t, 500, 0).unwrap(), sample_uniform(&t, 500, 0).unwrap());
        assert_ne!(sample_uniform(&t, 500, 0).unwrap(), sample_uniform(&t, 500, 1).unwrap());
    }

    #[test]
    fn sampling_mean_near_zero() {
        // Uniform(-5, 5) has sd 2.89, so the mean of 500 draws has sd 0.13.
        let t = RegressionTask::synthetic(FunctionId::RASTRIGIN, 10).unwrap();
        let ds = sample_uniform(&t, 500, 1).unwrap();
        for j in 0..10 {
            let mean: f64 =
                ds.examples().iter().map(|e| e.x.reals().unwrap()[j]).sum::<f64>() / 500.0;
            assert!(mean.abs() < 0.5, "coordinate {j} mean {mean}");
        }
    }

    #[test]
    fn sampling_covers_domain() {
        let ds = sample_uniform(&sphere(3), 10_000, 11).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = ds.examples().iter().map(|e| e.x.reals().unwrap()[j]).collect();
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(min < -4.9 && max > 4.9);
        }
    }

    #[test]
    fn offline_task_cannot_be_sampled() {
        assert!(matches!(
            sample_uniform(&mixed_task(), 3, 0),
            Err(TaskError::UnsupportedSource(_))
        ));
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        assert_eq!(split_sizes(500, (0.8, 0.1, 0.1)).unwrap(), (400, 50, 50));
        assert_eq!(split_sizes(10, (0.8, 0.1, 0.1)).unwrap(), (8, 1, 1));
        assert_eq!(split_sizes(57, (0.8, 0.1, 0.1)).unwrap(), (47, 5, 5));
        assert!(matches!(split_sizes(9, (0.8, 0.1, 0.1)), Err(TaskError::TooFewExamples(9))));
        assert!(matches!(
            split_sizes(20, (1.0, 0.0, 0.0)),
            Err(TaskError::EmptyPartition { .. })
        ));
        assert!(matches!(split_sizes(20, (0.5, 0.1, 0.1)), Err(TaskError::BadRatios(_))));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let ds = sample_uniform(&sphere(2), 500, 3).unwrap();
        let (a, b, c) = split_dataset(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (400, 50, 50));
        assert_eq!(a.split(), Some(Split::Train));
        assert_eq!(c.split(), Some(Split::Test));
        let again = split_dataset(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((a.clone(), b.clone(), c.clone()), again);

        let mut got: Vec<u64> = [&a, &b, &c]
            .iter()
            .flat_map(|d| d.examples().iter().map(|e| e.y.to_bits()))
            .collect();
        let mut want: Vec<u64> = ds.examples().iter().map(|e| e.y.to_bits()).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn param_spec_invariants() {
        assert!(ParamSpec::continuous("a", 1.0, 1.0).is_err());
        assert!(ParamSpec::continuous("", 0.0, 1.0).is_err());
        assert!(ParamSpec::categorical("c", Vec::<String>::new()).is_err());
        assert!(ParamSpec::categorical("c", ["a", "a"]).is_err());
        let dup = RegressionTask::new(
            "t",
            vec![
                ParamSpec::continuous("a", 0.0, 1.0).unwrap(),
                ParamSpec::continuous("a", 0.0, 1.0).unwrap(),
            ],
            TaskSource::Offline("f".into()),
        );
        assert!(dup.is_err());
        let bad_synth = RegressionTask::new(
            "t",
            vec![ParamSpec::continuous("a", 0.0, 1.0).unwrap()],
            TaskSource::Synthetic(FunctionId::SPHERE),
        );
        assert!(bad_synth.is_err());
    }

    #[test]
    fn task_spec_json_round_trip() {
        let json = r#"{
            "id": "mixed",
            "params": [
                {"name": "lr", "kind": "continuous", "lo": 0.0, "hi": 1.0},
                {"name": "act", "kind": "categorical", "choices": ["relu", "selu"]}
            ],
            "source": {"offline": "data.csv"}
        }"#;
        let task: RegressionTask = serde_json::from_str(json).unwrap();
        assert_eq!(task, mixed_task());
        let back: RegressionTask =
            serde_json::from_str(&serde_json::to_string(&task).unwrap()).unwrap();
        assert_eq!(back, task);

        let synth: RegressionTask = serde_json::from_str(
            r#"{"id":"s","params":[{"name":"x0","kind":"continuous","lo":-5,"hi":5}],"source":{"synthetic":"sphere"}}"#,
        )
        .unwrap();
        assert_eq!(synth.dof(), 1);
        assert!(serde_json::from_str::<RegressionTask>(
            r#"{"id":"s","params":[],"source":{"synthetic":"sphere"}}"#
        )
        .is_err());
    }

    #[test]
    fn ingest_well_formed_file() {
        let task = mixed_task();
        let mut text = String::from("lr,act,y\n");
        for i in 0..100 {
            let act = if i % 2 == 0 { "relu" } else { "selu" };
            text.push_str(&format!("{},{act},{}\n", i as f64 / 100.0, i));
        }
        let ds = ingest_offline_reader(text.as_bytes(), &task).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.examples()[3].y, 3.0);
        assert_eq!(ds.examples()[3].x.values()[1], ParamValue::Choice("selu".into()));
    }

    #[test]
    fn ingest_reorders_columns_to_declaration_order() {
        let text = "act,lr,y\nselu,0.5,1\n";
        let ds = ingest_offline_reader(text.as_bytes(), &mixed_task()).unwrap();
        assert_eq!(
            ds.examples()[0].x,
            Assignment(vec![ParamValue::Real(0.5), ParamValue::Choice("selu".into())])
        );
    }

    #[test]
    fn ingest_rejects_nan_y_with_row_index() {
        let mut text = String::from("lr,act,y\n");
        for i in 1..=10 {
            let y = if i == 7 { "NaN".to_string() } else { i.to_string() };
            text.push_str(&format!("0.5,relu,{y}\n"));
        }
        let err = ingest_offline_reader(text.as_bytes(), &mixed_task()).unwrap_err();
        assert!(matches!(err, TaskError::Row { row: 7, .. }), "{err}");
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn ingest_rejects_unknown_column() {
        let text = "lr,act,extra,y\n0.5,relu,1,2\n";
        let err = ingest_offline_reader(text.as_bytes(), &mixed_task()).unwrap_err();
        assert!(matches!(&err, TaskError::Schema(msg) if msg.contains("extra")), "{err}");
    }

    #[test]
    fn ingest_rejects_out_of_range_and_unknown_choice() {
        let err = ingest_offline_reader("lr,act,y\n1.5,relu,1\n".as_bytes(), &mixed_task())
            .unwrap_err();
        assert!(matches!(err, TaskError::Row { row: 1, .. }));
        let err = ingest_offline_reader("lr,act,y\n0.5,tanh,1\n".as_bytes(), &mixed_task())
            .unwrap_err();
        assert!(matches!(err, TaskError::Row { row: 1, .. }));
    }

    #[test]
    fn write_then_ingest_preserves_rows() {
        let task = sphere(3);
        let ds = sample_uniform(&task, 20, 5).unwrap();
        let mut buf = Vec::new();
        write_offline(&mut buf, &task, &ds).unwrap();
        let back = ingest_offline_reader(buf.as_slice(), &task).unwrap();
        assert_eq!(back, ds);
    }
}
