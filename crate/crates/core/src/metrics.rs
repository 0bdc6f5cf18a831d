//! Evaluation quantities: accuracy, label-correction rates, convergence
//! epoch, run-to-run increments, and annotation efficiency.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Class, Dataset};
use crate::error::{Error, Result};
use crate::math;

/// Percentage of `predicted` matching `truth`.
pub fn accuracy(predicted: &[Class], truth: &[Class]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predicted.len() != truth.len() {
        return Err(Error::shape("accuracy", &[truth.len()], &[predicted.len()]));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Share (%) of flipped samples whose current training label is back on the
/// truth. `None` when the relevant population is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRates {
    pub overall: Option<f64>,
    /// False stable labels (truly unstable) corrected.
    pub sf_ut: Option<f64>,
    /// False unstable labels (truly stable) corrected.
    pub uf_st: Option<f64>,
}

pub fn correction_rate(ds: &Dataset) -> CorrectionRates {
    let mut hit = [0usize; 2];
    let mut total = [0usize; 2];
    for i in 0..ds.len() {
        if !ds.flipped_mask()[i] {
            continue;
        }
        let truth = ds.labels_true()[i];
        total[truth.index()] += 1;
        if ds.labels_train()[i].argmax() == truth {
            hit[truth.index()] += 1;
        }
    }
    let rate = |h: usize, t: usize| (t > 0).then(|| 100.0 * h as f64 / t as f64);
    CorrectionRates {
        overall: rate(hit[0] + hit[1], total[0] + total[1]),
        sf_ut: rate(hit[Class::Unstable.index()], total[Class::Unstable.index()]),
        uf_st: rate(hit[Class::Stable.index()], total[Class::Stable.index()]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub epoch: usize,
    /// Fewer than `patience` epochs followed the reported epoch.
    pub truncated: bool,
}

/// First epoch from which accuracy stays within `band` points of the trace
/// maximum for the next `patience` epochs.
pub fn convergence_epoch(trace: &[f64], band: f64, patience: usize) -> Option<Convergence> {
    let max = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if trace.is_empty() || !max.is_finite() {
        return None;
    }
    let floor = max - band;
    let last = trace.len() - 1;
    (0..trace.len())
        .find(|&e| trace[e..=(e + patience).min(last)].iter().all(|&a| a >= floor))
        .map(|epoch| Convergence {
            epoch,
            truncated: epoch + patience > last,
        })
}

/// Accuracy and convergence increments of run `a` over run `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub delta: f64,
    pub k: i64,
}

pub fn increment(acc_a: f64, conv_a: usize, acc_b: f64, conv_b: usize) -> Increment {
    Increment {
        delta: acc_a - acc_b,
        k: conv_a as i64 - conv_b as i64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeEfficiency {
    pub xi: f64,
    /// The duplicate ratio was below one duplicate per issued query.
    pub floored: bool,
}

/// `Δ·|k| / max(dup_ratio, 1/max(total_queries, 1))`.
pub fn relative_efficiency(delta: f64, k_abs: f64, dup_ratio: f64, total_queries: usize) -> Result<RelativeEfficiency> {
    if !(dup_ratio >= 0.0) {
        return Err(Error::Config(format!("duplicate ratio {dup_ratio} is negative")));
    }
    let floor = 1.0 / total_queries.max(1) as f64;
    Ok(RelativeEfficiency {
        xi: delta * k_abs / dup_ratio.max(floor),
        floored: dup_ratio < floor,
    })
}

/// `ξ / N_q^r`; `None` without any queries.
pub fn absolute_efficiency(xi: f64, n_q: f64, r: f64) -> Option<f64> {
    (n_q > 0.0).then(|| xi / math::powf(n_q, r))
}

/// Query bookkeeping over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    /// Distinct samples queried / training-set size.
    pub n_q: f64,
    /// Queries that hit an already-annotated sample.
    pub n_dq: usize,
    pub total: usize,
}

impl QueryStats {
    /// Duplicates per issued query.
    pub fn dup_ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.n_dq as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub epoch: usize,
    pub accuracy: f64,
    pub correction: CorrectionRates,
    pub queries: QueryStats,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub label: String,
    pub delta: f64,
    pub k_abs: f64,
    pub dup_ratio: f64,
    pub xi: f64,
    pub floored: bool,
    pub r: f64,
    pub n_q: f64,
    pub xi_star: Option<f64>,
}

impl EfficiencyReport {
    pub fn new(label: String, inc: Increment, stats: &QueryStats, r: f64) -> Result<Self> {
        let k_abs = inc.k.unsigned_abs() as f64;
        let rel = relative_efficiency(inc.delta, k_abs, stats.dup_ratio(), stats.total)?;
        Ok(Self {
            label,
            delta: inc.delta,
            k_abs,
            dup_ratio: stats.dup_ratio(),
            xi: rel.xi,
            floored: rel.floored,
            r,
            n_q: stats.n_q,
            xi_star: absolute_efficiency(rel.xi, stats.n_q, r),
        })
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.2}"),
        None => String::from("n/a"),
    }
}

/// Tab-separated table with one column per report and rows `ξ` and `ξ*`.
pub fn render_efficiency_table(rows: &[EfficiencyReport]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push('\t');
        out.push_str(&r.label);
    }
    out.push_str("\nξ");
    for r in rows {
        out.push('\t');
        out.push_str(&cell(Some(r.xi)));
    }
    out.push_str("\nξ*");
    for r in rows {
        out.push('\t');
        out.push_str(&cell(r.xi_star));
    }
    out.push('\n');
    out
}

/// Accuracy trace helper for runs recorded as snapshots.
pub fn accuracy_trace(snapshots: &[MetricsSnapshot]) -> Vec<f64> {
    snapshots.iter().map(|s| s.accuracy).collect()
}
