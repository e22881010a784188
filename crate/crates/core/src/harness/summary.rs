//! Summary tables rebuilt from cell records.
//!
//! Rows follow cell enumeration order and never include timestamps, so the
//! same records always produce byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellOutcome, CellRecord, CellSpec, ExperimentConfig, ExperimentKind, HarnessError, ResolvedTask};
use crate::harness::config::format_label;
use crate::metrics::{self, percent_greater, percentile};
use crate::nlfd::{self, SampleSummary};

type Cell = (CellSpec, Option<CellRecord>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub key: String,
    pub task: String,
    pub embedder: String,
    pub format: Option<String>,
    pub train_size: Option<usize>,
    pub seed: u64,
    pub status: String,
    pub kendall_tau: Option<f64>,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub nlfd_mu: Option<f64>,
    pub nlfd_sigma: Option<f64>,
    pub nlfd_excluded: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofSweepRow {
    pub function: String,
    pub dof: usize,
    pub embedder: String,
    pub runs: usize,
    pub failed: usize,
    pub complete: bool,
    pub kendall_mean: Option<f64>,
    pub kendall_median: Option<f64>,
    pub kendall_std: Option<f64>,
    pub spearman_mean: Option<f64>,
    pub pearson_mean: Option<f64>,
    pub kendall_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeanRow {
    pub task: String,
    pub family: String,
    pub embedder: String,
    pub runs: usize,
    pub failed: usize,
    pub kendall_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutperformanceRow {
    pub family: String,
    pub baseline: String,
    pub challenger: String,
    pub tasks: usize,
    /// Share of tasks where the challenger's mean Kendall-Tau is strictly higher.
    pub challenger_wins_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMeanRow {
    pub family: String,
    pub embedder: String,
    pub tasks: usize,
    pub kendall_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub task: String,
    pub dof: usize,
    pub seeds: usize,
    /// Mean z of the first embedder's NLFD against the second's.
    pub z: Option<f64>,
    /// Mean of second minus first Kendall-Tau.
    pub kendall_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub tasks: usize,
    pub kendall: Option<f64>,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub train_size: usize,
    pub baseline: String,
    pub challenger: String,
    pub records: usize,
    pub gap_mean: Option<f64>,
    pub gap_std: Option<f64>,
    pub band_0_5_lo: Option<f64>,
    pub band_0_5_hi: Option<f64>,
    pub band_1_lo: Option<f64>,
    pub band_1_hi: Option<f64>,
    pub band_2_lo: Option<f64>,
    pub band_2_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub task: String,
    pub embedder: String,
    pub format: String,
    pub runs: usize,
    pub kendall_mean: Option<f64>,
    /// Difference from the first embedder/format pair on the same task.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    DofSweep(Vec<DofSweepRow>),
    Compare {
        tasks: Vec<TaskMeanRow>,
        outperformance: Vec<OutperformanceRow>,
        families: Vec<FamilyMeanRow>,
    },
    NlfdCorr {
        scatter: Vec<ScatterRow>,
        correlations: Correlations,
    },
    ScaleData(Vec<ScalingRow>),
    Ablate {
        tasks: Vec<AblationRow>,
        means: Vec<AblationRow>,
    },
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn std(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt())
}

/// Groups cells by `key`, keeping first-seen order.
fn groups<K: PartialEq + Clone>(cells: &[Cell], key: impl Fn(&CellSpec) -> K) -> Vec<(K, Vec<&Cell>)> {
    let mut out: Vec<(K, Vec<&Cell>)> = Vec::new();
    for c in cells {
        let k = key(&c.0);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(c),
            None => out.push((k, vec![c])),
        }
    }
    out
}

struct Kendalls {
    values: Vec<f64>,
    failed: usize,
}

fn kendalls(cells: &[&Cell], clamp: bool) -> Kendalls {
    let mut values = Vec::new();
    let mut failed = 0;
    for (_, r) in cells {
        match r.as_ref().and_then(|r| r.kendall()) {
            Some(k) => values.push(if clamp { k.max(0.0) } else { k }),
            None => failed += 1,
        }
    }
    Kendalls { values, failed }
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T], outputs: &mut Vec<String>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    outputs.push(name.to_string());
    Ok(())
}

fn cell_rows(cells: &[Cell], cfg: &ExperimentConfig, tasks: &[ResolvedTask]) -> Vec<CellRow> {
    cells
        .iter()
        .map(|(c, r)| {
            let mut row = CellRow {
                key: super::cell_key(tasks, cfg, c),
                task: tasks[c.task].task.id().to_string(),
                embedder: cfg.embedders[c.embedder].label().to_string(),
                format: c.format.as_ref().map(format_label),
                train_size: c.train_size,
                seed: c.seed,
                status: "missing".into(),
                kendall_tau: None,
                spearman: None,
                pearson: None,
                mse: None,
                mae: None,
                nlfd_mu: None,
                nlfd_sigma: None,
                nlfd_excluded: None,
                learning_rate: None,
                weight_decay: None,
                best_epoch: None,
            };
            if let Some(r) = r {
                match &r.outcome {
                    CellOutcome::Ok { metrics, nlfd, report } => {
                        row.status = "ok".into();
                        row.kendall_tau = Some(metrics.kendall_tau);
                        row.spearman = Some(metrics.spearman);
                        row.pearson = Some(metrics.pearson);
                        row.mse = Some(metrics.mse);
                        row.mae = Some(metrics.mae);
                        row.nlfd_mu = nlfd.as_ref().map(|n| n.mu);
                        row.nlfd_sigma = nlfd.as_ref().map(|n| n.sigma);
                        row.nlfd_excluded = nlfd.as_ref().map(|n| n.excluded_pairs);
                        row.learning_rate = Some(report.learning_rate);
                        row.weight_decay = Some(report.weight_decay);
                        row.best_epoch = Some(report.best_epoch);
                    }
                    CellOutcome::Failed { .. } => row.status = "failed".into(),
                }
            }
            row
        })
        .collect()
}

pub(super) fn summarize(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    tasks: &[ResolvedTask],
    cells: &[Cell],
    clamp: bool,
    dir: &Path,
) -> Result<(Summary, Vec<String>), HarnessError> {
    let mut outputs = Vec::new();
    write_csv(dir, "cells.csv", &cell_rows(cells, cfg, tasks), &mut outputs)?;
    let label = |e: usize| cfg.embedders[e].label().to_string();

    let summary = match kind {
        ExperimentKind::SweepDof => {
            let rows: Vec<DofSweepRow> = groups(cells, |c| (c.task, c.embedder))
                .into_iter()
                .map(|((t, e), group)| {
                    let k = kendalls(&group, clamp);
                    let other = |f: fn(&metrics::MetricBundle) -> f64| {
                        let v: Vec<f64> = group
                            .iter()
                            .filter_map(|(_, r)| r.as_ref().and_then(|r| r.metrics()).map(f))
                            .collect();
                        mean(&v)
                    };
                    let rt = &tasks[t];
                    DofSweepRow {
                        function: rt.function().map(|f| f.to_string()).unwrap_or_else(|| rt.task.id().into()),
                        dof: rt.task.dof(),
                        embedder: label(e),
                        runs: k.values.len(),
                        failed: k.failed,
                        complete: k.failed == 0,
                        kendall_mean: mean(&k.values),
                        kendall_median: percentile(&k.values, 50.0).ok(),
                        kendall_std: std(&k.values),
                        spearman_mean: other(|m| m.spearman),
                        pearson_mean: other(|m| m.pearson),
                        kendall_clamped: clamp,
                    }
                })
                .collect();
            write_csv(dir, "summary.csv", &rows, &mut outputs)?;
            Summary::DofSweep(rows)
        }

        ExperimentKind::Compare => {
            let per_task: Vec<(usize, usize, Kendalls)> = groups(cells, |c| (c.task, c.embedder))
                .into_iter()
                .map(|((t, e), g)| (t, e, kendalls(&g, clamp)))
                .collect();
            let task_rows: Vec<TaskMeanRow> = per_task
                .iter()
                .map(|(t, e, k)| TaskMeanRow {
                    task: tasks[*t].task.id().into(),
                    family: tasks[*t].family.clone(),
                    embedder: label(*e),
                    runs: k.values.len(),
                    failed: k.failed,
                    kendall_mean: mean(&k.values),
                })
                .collect();
            let mut families: Vec<&str> = Vec::new();
            for t in tasks {
                if !families.contains(&t.family.as_str()) {
                    families.push(&t.family);
                }
            }
            let task_mean = |t: usize, e: usize| {
                per_task
                    .iter()
                    .find(|(tt, ee, _)| *tt == t && *ee == e)
                    .and_then(|(_, _, k)| mean(&k.values))
            };
            let in_family = |f: &str| -> Vec<usize> { (0..tasks.len()).filter(|&t| tasks[t].family == f).collect() };
            let mut outperformance = Vec::new();
            let mut family_rows = Vec::new();
            for f in &families {
                for e in 1..cfg.embedders.len() {
                    let pairs: Vec<(f64, f64)> = in_family(f)
                        .into_iter()
                        .filter_map(|t| Some((task_mean(t, e)?, task_mean(t, 0)?)))
                        .collect();
                    outperformance.push(OutperformanceRow {
                        family: f.to_string(),
                        baseline: label(0),
                        challenger: label(e),
                        tasks: pairs.len(),
                        challenger_wins_pct: percent_greater(&pairs).ok(),
                    });
                }
                for e in 0..cfg.embedders.len() {
                    let v: Vec<f64> = in_family(f).into_iter().filter_map(|t| task_mean(t, e)).collect();
                    family_rows.push(FamilyMeanRow {
                        family: f.to_string(),
                        embedder: label(e),
                        tasks: v.len(),
                        kendall_mean: mean(&v),
                    });
                }
            }
            write_csv(dir, "tasks.csv", &task_rows, &mut outputs)?;
            write_csv(dir, "outperformance.csv", &outperformance, &mut outputs)?;
            write_csv(dir, "summary.csv", &family_rows, &mut outputs)?;
            Summary::Compare {
                tasks: task_rows,
                outperformance,
                families: family_rows,
            }
        }

        ExperimentKind::NlfdCorr => {
            let lookup = |t: usize, e: usize, seed: u64| {
                cells
                    .iter()
                    .find(|(c, _)| c.task == t && c.embedder == e && c.seed == seed)
                    .and_then(|(_, r)| r.as_ref())
            };
            let summary_of = |r: &CellRecord| {
                r.nlfd().map(|n| SampleSummary {
                    mu: n.mu,
                    sigma: n.sigma,
                    n: n.n,
                })
            };
            let mut scatter = Vec::new();
            for (t, rt) in tasks.iter().enumerate() {
                let mut zs = Vec::new();
                let mut gaps = Vec::new();
                for &seed in &cfg.seeds {
                    let (Some(a), Some(b)) = (lookup(t, 0, seed), lookup(t, 1, seed)) else { continue };
                    let (Some(ka), Some(kb)) = (a.kendall(), b.kendall()) else { continue };
                    let (Some(sa), Some(sb)) = (summary_of(a), summary_of(b)) else { continue };
                    let Ok(z) = nlfd::zscore(&sa, &sb) else { continue };
                    let (ka, kb) = if clamp { (ka.max(0.0), kb.max(0.0)) } else { (ka, kb) };
                    zs.push(z);
                    gaps.push(kb - ka);
                }
                scatter.push(ScatterRow {
                    task: rt.task.id().into(),
                    dof: rt.task.dof(),
                    seeds: zs.len(),
                    z: mean(&zs),
                    kendall_gap: mean(&gaps),
                });
            }
            let (z, gap): (Vec<f64>, Vec<f64>) = scatter
                .iter()
                .filter_map(|r| Some((r.z?, r.kendall_gap?)))
                .unzip();
            let enough = z.len() >= 3;
            let correlations = Correlations {
                tasks: z.len(),
                kendall: enough.then(|| metrics::kendall_tau(&z, &gap).ok()).flatten(),
                spearman: enough.then(|| metrics::spearman(&z, &gap).ok()).flatten(),
                pearson: enough.then(|| metrics::pearson(&z, &gap).ok()).flatten(),
            };
            write_csv(dir, "scatter.csv", &scatter, &mut outputs)?;
            write_csv(dir, "correlations.csv", std::slice::from_ref(&correlations), &mut outputs)?;
            Summary::NlfdCorr {
                scatter,
                correlations,
            }
        }

        ExperimentKind::ScaleData => {
            let mut rows = Vec::new();
            for &n in &cfg.train_sizes {
                for e in 1..cfg.embedders.len() {
                    let mut gaps = Vec::new();
                    for t in 0..tasks.len() {
                        for &seed in &cfg.seeds {
                            let k = |emb: usize| {
                                cells
                                    .iter()
                                    .find(|(c, _)| {
                                        c.task == t && c.embedder == emb && c.seed == seed && c.train_size == Some(n)
                                    })
                                    .and_then(|(_, r)| r.as_ref()?.kendall())
                                    .map(|k| if clamp { k.max(0.0) } else { k })
                            };
                            if let (Some(b), Some(c)) = (k(0), k(e)) {
                                gaps.push(c - b);
                            }
                        }
                    }
                    let (m, sd) = (mean(&gaps), std(&gaps));
                    let band = |w: f64, sign: f64| Some(m? + sign * w * sd?);
                    rows.push(ScalingRow {
                        train_size: n,
                        baseline: label(0),
                        challenger: label(e),
                        records: gaps.len(),
                        gap_mean: m,
                        gap_std: sd,
                        band_0_5_lo: band(0.5, -1.0),
                        band_0_5_hi: band(0.5, 1.0),
                        band_1_lo: band(1.0, -1.0),
                        band_1_hi: band(1.0, 1.0),
                        band_2_lo: band(2.0, -1.0),
                        band_2_hi: band(2.0, 1.0),
                    });
                }
            }
            write_csv(dir, "summary.csv", &rows, &mut outputs)?;
            Summary::ScaleData(rows)
        }

        ExperimentKind::Ablate => {
            let fmt = |c: &CellSpec| c.format.as_ref().map(format_label).unwrap_or_else(|| "-".into());
            let per: Vec<AblationRow> = groups(cells, |c| (c.task, c.embedder, fmt(c)))
                .into_iter()
                .map(|((t, e, f), g)| {
                    let k = kendalls(&g, clamp);
                    AblationRow {
                        task: tasks[t].task.id().into(),
                        embedder: label(e),
                        format: f,
                        runs: k.values.len(),
                        kendall_mean: mean(&k.values),
                        delta: None,
                    }
                })
                .collect();
            let reference = per.first().map(|r| (r.embedder.clone(), r.format.clone()));
            let per: Vec<AblationRow> = per
                .iter()
                .map(|r| {
                    let base = per
                        .iter()
                        .find(|b| b.task == r.task && Some((b.embedder.clone(), b.format.clone())) == reference)
                        .and_then(|b| b.kendall_mean);
                    AblationRow {
                        delta: r.kendall_mean.zip(base).map(|(k, b)| k - b),
                        ..r.clone()
                    }
                })
                .collect();
            let mut means: Vec<AblationRow> = Vec::new();
            for r in &per {
                if means.iter().any(|m| m.embedder == r.embedder && m.format == r.format) {
                    continue;
                }
                let same: Vec<&AblationRow> = per
                    .iter()
                    .filter(|o| o.embedder == r.embedder && o.format == r.format)
                    .collect();
                let ks: Vec<f64> = same.iter().filter_map(|o| o.kendall_mean).collect();
                let ds: Vec<f64> = same.iter().filter_map(|o| o.delta).collect();
                means.push(AblationRow {
                    task: "*".into(),
                    embedder: r.embedder.clone(),
                    format: r.format.clone(),
                    runs: ks.len(),
                    kendall_mean: mean(&ks),
                    delta: mean(&ds),
                });
            }
            write_csv(dir, "ablation.csv", &per, &mut outputs)?;
            write_csv(dir, "summary.csv", &means, &mut outputs)?;
            Summary::Ablate { tasks: per, means }
        }
    };
    Ok((summary, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_is_population() {
        assert_eq!(std(&[1.0, 3.0]), Some(1.0));
        assert_eq!(mean(&[]), None);
    }
}
