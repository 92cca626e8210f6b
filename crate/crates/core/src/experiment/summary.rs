use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, Phase, TimingRecord};
use crate::error::{Error, Result};
use crate::store::BackendKind;

const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub wall_mean: f64,
    pub wall_std: f64,
    pub simulated_mean: f64,
    pub simulated_std: f64,
}

/// Runtime of the first `epochs` epochs including allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalStat {
    pub epochs: usize,
    pub wall_mean: f64,
    pub wall_std: f64,
    pub simulated_mean: f64,
    pub simulated_std: f64,
    /// Relative to the baseline at the same epoch count.
    pub wall_ratio: f64,
    pub simulated_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSummary {
    pub backend: String,
    pub kind: BackendKind,
    pub repetitions: usize,
    pub per_epoch: Vec<EpochStat>,
    pub totals: Vec<TotalStat>,
    /// Sample variance of per-epoch simulated posterior-update time over
    /// all repetitions and epochs.
    pub update_simulated_variance: f64,
    pub posterior_bytes: u64,
    pub posterior_gib: f64,
    pub rank: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline: String,
    pub backends: Vec<BackendSummary>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per repetition: allocation time and per-epoch times (wall, simulated).
struct Timeline {
    alloc: (f64, f64),
    epochs: BTreeMap<usize, (f64, f64)>,
}

fn timelines(records: &[TimingRecord]) -> BTreeMap<usize, Timeline> {
    let mut out: BTreeMap<usize, Timeline> = BTreeMap::new();
    for r in records {
        let t = out.entry(r.repetition).or_insert_with(|| Timeline {
            alloc: (0.0, 0.0),
            epochs: BTreeMap::new(),
        });
        if r.phase == Phase::Alloc {
            t.alloc.0 += r.wall_seconds;
            t.alloc.1 += r.simulated_seconds;
        } else {
            let e = t.epochs.entry(r.epoch).or_insert((0.0, 0.0));
            e.0 += r.wall_seconds;
            e.1 += r.simulated_seconds;
        }
    }
    out
}

fn backend_stats(result: &ExperimentResult) -> (Vec<EpochStat>, Vec<(usize, Vec<(f64, f64)>)>) {
    let lines = timelines(&result.records);
    let max_epoch = lines
        .values()
        .flat_map(|t| t.epochs.keys().copied())
        .max()
        .unwrap_or(0);
    let mut per_epoch = Vec::new();
    let mut totals = Vec::new();
    for epoch in 1..=max_epoch {
        let times: Vec<(f64, f64)> = lines.values().filter_map(|t| t.epochs.get(&epoch).copied()).collect();
        let (wall_mean, wall_std) = mean_std(&times.iter().map(|t| t.0).collect::<Vec<_>>());
        let (simulated_mean, simulated_std) = mean_std(&times.iter().map(|t| t.1).collect::<Vec<_>>());
        per_epoch.push(EpochStat {
            epoch,
            wall_mean,
            wall_std,
            simulated_mean,
            simulated_std,
        });
        // Only repetitions that completed this many epochs contribute.
        let cumulative: Vec<(f64, f64)> = lines
            .values()
            .filter(|t| (1..=epoch).all(|e| t.epochs.contains_key(&e)))
            .map(|t| {
                (1..=epoch).fold(t.alloc, |acc, e| {
                    let x = t.epochs[&e];
                    (acc.0 + x.0, acc.1 + x.1)
                })
            })
            .collect();
        totals.push((epoch, cumulative));
    }
    (per_epoch, totals)
}

fn ratio(value: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if value == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        value / baseline
    }
}

/// Aggregates experiments into per-backend tables with ratios against the
/// first in-memory experiment.
pub fn summarize(results: &[ExperimentResult]) -> Result<Summary> {
    let baseline = results
        .iter()
        .find(|r| r.kind == BackendKind::InMemory)
        .ok_or_else(|| Error::MissingBaseline(BackendKind::InMemory.to_string()))?;
    let (_, base_totals) = backend_stats(baseline);
    let base: BTreeMap<usize, (f64, f64)> = base_totals
        .iter()
        .map(|(e, v)| {
            let w = mean_std(&v.iter().map(|t| t.0).collect::<Vec<_>>()).0;
            let s = mean_std(&v.iter().map(|t| t.1).collect::<Vec<_>>()).0;
            (*e, (w, s))
        })
        .collect();

    let mut backends = Vec::new();
    for result in results {
        let (per_epoch, raw_totals) = backend_stats(result);
        let mut totals = Vec::new();
        for (epochs, values) in raw_totals {
            if values.is_empty() {
                continue;
            }
            let (wall_mean, wall_std) = mean_std(&values.iter().map(|t| t.0).collect::<Vec<_>>());
            let (simulated_mean, simulated_std) =
                mean_std(&values.iter().map(|t| t.1).collect::<Vec<_>>());
            let (bw, bs) = base.get(&epochs).copied().ok_or_else(|| {
                Error::MissingBaseline(format!("{} {epochs}-epoch", baseline.backend))
            })?;
            totals.push(TotalStat {
                epochs,
                wall_mean,
                wall_std,
                simulated_mean,
                simulated_std,
                wall_ratio: ratio(wall_mean, bw),
                simulated_ratio: ratio(simulated_mean, bs),
            });
        }
        let updates: Vec<f64> = result
            .records
            .iter()
            .filter(|r| r.phase == Phase::PosteriorUpdate)
            .map(|r| r.simulated_seconds)
            .collect();
        let (_, update_sd) = mean_std(&updates);
        backends.push(BackendSummary {
            backend: result.backend.clone(),
            kind: result.kind,
            repetitions: result.checkpoint_digests.len(),
            per_epoch,
            totals,
            update_simulated_variance: update_sd * update_sd,
            posterior_bytes: result.posterior_bytes,
            posterior_gib: (result.posterior_bytes as f64 / GIB * 1000.0).round() / 1000.0,
            rank: result.rank,
        });
    }
    Ok(Summary {
        baseline: baseline.backend.clone(),
        backends,
    })
}
