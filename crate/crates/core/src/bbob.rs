//! Closed-form BBOB objectives over [-5, 5]^DOF.
//!
//! Functions are the unshifted, unrotated canonical forms. They live in a
//! process-wide registry keyed by a stable lowercase id so that task files can
//! refer to them by name and further objectives can be plugged in with
//! [`register`].

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DOMAIN: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Error, PartialEq)]
pub enum BbobError {
    #[error("unknown objective `{0}`")]
    UnknownFunction(String),
    #[error("objective `{id}` expects {expected} coordinates, got {got}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("coordinate {index} = {value} lies outside [-5, 5]")]
    OutOfDomain { index: usize, value: f64 },
    #[error("objective needs at least one coordinate")]
    Empty,
}

/// A synthetic objective. Implementations must be deterministic and finite on
/// all of [-5, 5]^dof.
pub trait Objective: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn evaluate(&self, x: &[f64]) -> f64;
}

/// Stable identifier of a registered objective.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionId(Cow<'static, str>);

impl FunctionId {
    pub const SPHERE: FunctionId = FunctionId(Cow::Borrowed("sphere"));
    pub const ELLIPSOIDAL: FunctionId = FunctionId(Cow::Borrowed("ellipsoidal"));
    pub const RASTRIGIN: FunctionId = FunctionId(Cow::Borrowed("rastrigin"));
    pub const ROSENBROCK: FunctionId = FunctionId(Cow::Borrowed("rosenbrock"));
    pub const DISCUS: FunctionId = FunctionId(Cow::Borrowed("discus"));
    pub const BENT_CIGAR: FunctionId = FunctionId(Cow::Borrowed("bent_cigar"));
    pub const DIFFERENT_POWERS: FunctionId = FunctionId(Cow::Borrowed("different_powers"));
    pub const SHARP_RIDGE: FunctionId = FunctionId(Cow::Borrowed("sharp_ridge"));

    pub fn new(id: impl Into<String>) -> Self {
        FunctionId(Cow::Owned(id.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Evaluates the registered objective at `x`, with `dof = x.len()`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, BbobError> {
        BbobFunction::new(self.clone(), x.len())?.evaluate(x)
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for FunctionId {
    type Err = BbobError;
    fn from_str(s: &str) -> Result<Self, BbobError> {
        let id = FunctionId::new(s);
        lookup(&id)?;
        Ok(id)
    }
}

/// The mandatory catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Sphere,
    Ellipsoidal,
    Rastrigin,
    Rosenbrock,
    Discus,
    BentCigar,
    DifferentPowers,
    SharpRidge,
}

impl Builtin {
    pub const ALL: [Builtin; 8] = [
        Builtin::Sphere,
        Builtin::Ellipsoidal,
        Builtin::Rastrigin,
        Builtin::Rosenbrock,
        Builtin::Discus,
        Builtin::BentCigar,
        Builtin::DifferentPowers,
        Builtin::SharpRidge,
    ];

    pub fn function_id(self) -> FunctionId {
        match self {
            Builtin::Sphere => FunctionId::SPHERE,
            Builtin::Ellipsoidal => FunctionId::ELLIPSOIDAL,
            Builtin::Rastrigin => FunctionId::RASTRIGIN,
            Builtin::Rosenbrock => FunctionId::ROSENBROCK,
            Builtin::Discus => FunctionId::DISCUS,
            Builtin::BentCigar => FunctionId::BENT_CIGAR,
            Builtin::DifferentPowers => FunctionId::DIFFERENT_POWERS,
            Builtin::SharpRidge => FunctionId::SHARP_RIDGE,
        }
    }
}

/// `(i - 1) / (d - 1)` for zero-based `i`, defined as 0 when `d == 1`.
fn ramp(i: usize, d: usize) -> f64 {
    if d <= 1 {
        0.0
    } else {
        i as f64 / (d - 1) as f64
    }
}

fn sum_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

impl Objective for Builtin {
    fn id(&self) -> &str {
        match self {
            Builtin::Sphere => "sphere",
            Builtin::Ellipsoidal => "ellipsoidal",
            Builtin::Rastrigin => "rastrigin",
            Builtin::Rosenbrock => "rosenbrock",
            Builtin::Discus => "discus",
            Builtin::BentCigar => "bent_cigar",
            Builtin::DifferentPowers => "different_powers",
            Builtin::SharpRidge => "sharp_ridge",
        }
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        let d = x.len();
        match self {
            Builtin::Sphere => sum_sq(x),
            Builtin::Ellipsoidal => x
                .iter()
                .enumerate()
                .map(|(i, v)| 10f64.powf(6.0 * ramp(i, d)) * v * v)
                .sum(),
            Builtin::Rastrigin => {
                let cos_sum: f64 = x.iter().map(|v| (2.0 * PI * v).cos()).sum();
                10.0 * (d as f64 - cos_sum) + sum_sq(x)
            }
            Builtin::Rosenbrock => x
                .windows(2)
                .map(|w| 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2))
                .sum(),
            Builtin::Discus => 1e6 * x[0] * x[0] + sum_sq(&x[1..]),
            Builtin::BentCigar => x[0] * x[0] + 1e6 * sum_sq(&x[1..]),
            Builtin::DifferentPowers => x
                .iter()
                .enumerate()
                .map(|(i, v)| v.abs().powf(2.0 + 4.0 * ramp(i, d)))
                .sum(),
            Builtin::SharpRidge => x[0] * x[0] + 100.0 * sum_sq(&x[1..]).sqrt(),
        }
    }
}

type Registry = BTreeMap<String, Arc<dyn Objective>>;

fn registry() -> &'static RwLock<Registry> {
    static REGISTRY: OnceLock<RwLock<Registry>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let map = Builtin::ALL
            .iter()
            .map(|b| (b.id().to_string(), Arc::new(*b) as Arc<dyn Objective>))
            .collect();
        RwLock::new(map)
    })
}

/// Adds (or replaces) an objective under its id.
pub fn register(objective: Arc<dyn Objective>) -> FunctionId {
    let id = objective.id().to_string();
    registry()
        .write()
        .expect("objective registry poisoned")
        .insert(id.clone(), objective);
    FunctionId::new(id)
}

pub fn lookup(id: &FunctionId) -> Result<Arc<dyn Objective>, BbobError> {
    registry()
        .read()
        .expect("objective registry poisoned")
        .get(id.as_str())
        .cloned()
        .ok_or_else(|| BbobError::UnknownFunction(id.to_string()))
}

/// Ids of every registered objective, sorted.
pub fn registered() -> Vec<FunctionId> {
    registry()
        .read()
        .expect("objective registry poisoned")
        .keys()
        .map(|k| FunctionId::new(k.clone()))
        .collect()
}

/// The default sweep subset: the eight catalog functions.
pub fn catalog() -> Vec<FunctionId> {
    Builtin::ALL.iter().map(|b| b.function_id()).collect()
}

/// An objective bound to a fixed DOF.
#[derive(Debug, Clone)]
pub struct BbobFunction {
    id: FunctionId,
    dof: usize,
    objective: Arc<dyn Objective>,
}

impl BbobFunction {
    pub fn new(id: FunctionId, dof: usize) -> Result<Self, BbobError> {
        if dof == 0 {
            return Err(BbobError::Empty);
        }
        let objective = lookup(&id)?;
        Ok(BbobFunction { id, dof, objective })
    }

    pub fn id(&self) -> &FunctionId {
        &self.id
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, BbobError> {
        if x.len() != self.dof {
            return Err(BbobError::DimensionMismatch {
                id: self.id.to_string(),
                expected: self.dof,
                got: x.len(),
            });
        }
        let (lo, hi) = DOMAIN;
        if let Some((index, &value)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(lo..=hi).contains(*v))
        {
            return Err(BbobError::OutOfDomain { index, value });
        }
        Ok(self.objective.evaluate(x))
    }
}
