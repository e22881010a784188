//! Regression metrics and cross-task aggregation.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const METRIC_NAMES: [&str; 5] = ["kendall_tau", "spearman", "pearson", "mse", "mae"];

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("{0} is undefined for a constant series")]
    Undefined(&'static str),
    #[error("series contains a non-finite value")]
    NonFinite,
    #[error("nothing to aggregate")]
    Empty,
}

fn check_pair(y: &[f64], yhat: &[f64], need: usize) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < need {
        return Err(MetricError::TooShort {
            need,
            got: y.len(),
        });
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// Pair counts behind tau-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    /// n(n-1)/2
    pub total: u64,
    /// Pairs tied in the first series (including joint ties).
    pub tied_first: u64,
    /// Pairs tied in the second series (including joint ties).
    pub tied_second: u64,
    /// Pairs tied in both.
    pub tied_both: u64,
    /// Discordant pairs.
    pub discordant: u64,
}

impl PairCounts {
    pub fn concordant(&self) -> u64 {
        self.total + self.tied_both - self.tied_first - self.tied_second - self.discordant
    }

    /// `(C - D) / sqrt((C + D + T_second_only) * (C + D + T_first_only))`.
    pub fn tau_b(&self) -> Result<f64, MetricError> {
        let not_tied_first = self.total - self.tied_first;
        let not_tied_second = self.total - self.tied_second;
        if not_tied_first == 0 || not_tied_second == 0 {
            return Err(MetricError::Undefined("kendall_tau"));
        }
        let num = self.concordant() as f64 - self.discordant as f64;
        Ok(num / ((not_tied_first as f64) * (not_tied_second as f64)).sqrt())
    }
}

fn tie_pairs<T, F: Fn(&T, &T) -> bool>(sorted: &[T], same: F) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if same(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]);
    swaps += merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Pair counts in O(n log n) (Knight's algorithm).
pub fn pair_counts(x: &[f64], y: &[f64]) -> PairCounts {
    let n = x.len() as u64;
    // `+ 0.0` maps -0.0 to 0.0 so equal values sort adjacently.
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a + 0.0, b + 0.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let tied_first = tie_pairs(&pairs, |a, b| a.0 == b.0);
    let tied_both = tie_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = merge_count(&mut ys, &mut buf);
    let tied_second = tie_pairs(&ys, |a, b| a == b);
    PairCounts {
        total: n * n.saturating_sub(1) / 2,
        tied_first,
        tied_second,
        tied_both,
        discordant,
    }
}

/// Kendall tau-b with tie correction.
pub fn kendall_tau(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, yhat, 2)?;
    pair_counts(y, yhat).tau_b()
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, yhat, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mh);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined("pearson"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, yhat, 2)?;
    pearson(&average_ranks(y), &average_ranks(yhat)).map_err(|e| match e {
        MetricError::Undefined(_) => MetricError::Undefined("spearman"),
        other => other,
    })
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check_pair(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub kendall_tau: f64,
    pub spearman: f64,
    pub pearson: f64,
    pub mse: f64,
    pub mae: f64,
}

impl MetricBundle {
    pub fn evaluate(y: &[f64], yhat: &[f64]) -> Result<Self, MetricError> {
        Ok(MetricBundle {
            kendall_tau: kendall_tau(y, yhat)?,
            spearman: spearman(y, yhat)?,
            pearson: pearson(y, yhat)?,
            mse: mse(y, yhat)?,
            mae: mae(y, yhat)?,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "kendall_tau" => Some(self.kendall_tau),
            "spearman" => Some(self.spearman),
            "pearson" => Some(self.pearson),
            "mse" => Some(self.mse),
            "mae" => Some(self.mae),
            _ => None,
        }
    }
}

/// Linear interpolation between order statistics at position `p/100 * (n-1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub p40: f64,
    pub p60: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Result<Self, MetricError> {
        if values.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(SummaryStats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: percentile(values, 50.0)?,
            p40: percentile(values, 40.0)?,
            p60: percentile(values, 60.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub tasks: usize,
    pub metrics: BTreeMap<String, SummaryStats>,
}

pub fn aggregate(tasks: &[(String, MetricBundle)]) -> Result<AggregateSummary, MetricError> {
    if tasks.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut metrics = BTreeMap::new();
    for name in METRIC_NAMES {
        let vals: Vec<f64> = tasks.iter().map(|(_, b)| b.get(name).unwrap()).collect();
        metrics.insert(name.to_string(), SummaryStats::of(&vals)?);
    }
    Ok(AggregateSummary {
        tasks: tasks.len(),
        metrics,
    })
}

/// Percentage of tasks (matched by id) where `a`'s Kendall-Tau strictly exceeds `b`'s.
pub fn outperformance_pct(
    a: &[(String, MetricBundle)],
    b: &[(String, MetricBundle)],
) -> Result<f64, MetricError> {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .filter_map(|(id, ma)| {
            b.iter()
                .find(|(idb, _)| idb == id)
                .map(|(_, mb)| (ma.kendall_tau, mb.kendall_tau))
        })
        .collect();
    percent_greater(&pairs)
}

pub fn percent_greater(pairs: &[(f64, f64)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let wins = pairs
        .iter()
        .filter(|(a, b)| a.partial_cmp(b) == Some(Ordering::Greater))
        .count();
    Ok(100.0 * wins as f64 / pairs.len() as f64)
}
