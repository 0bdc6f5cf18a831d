//! Cross-run reports: one row per run, plus increment rows (Δ, k and the
//! efficiency figures) for pairs of runs on the same data and seed.

use std::path::Path;

use mmr_core::metrics::{increment, render_efficiency_table, EfficiencyReport, Increment};
use mmr_core::trainer::Method;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::runio::{RunRecord, CONVERGENCE_DEFINITION};
use crate::store::{self, csv_bytes};

pub const REPORT_HEADER: [&str; 14] = [
    "run_id",
    "method",
    "attack_kind",
    "ratio",
    "accuracy",
    "conv_epoch",
    "corr_overall",
    "corr_SF_UT",
    "corr_UF_ST",
    "N_q",
    "N_dq_over_Nq",
    "xi",
    "xi_star",
    "r",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub method: Method,
    pub attack_kind: Option<String>,
    pub ratio: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub conv_epoch: Option<usize>,
    pub conv_truncated: bool,
    pub corr_overall: Option<f64>,
    pub corr_sf_ut: Option<f64>,
    pub corr_uf_st: Option<f64>,
    pub n_q: f64,
    pub n_dq_over_nq: f64,
    pub total_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementRow {
    /// `"<a>/<b>"` in run ids.
    pub label: String,
    pub a: String,
    pub b: String,
    pub increment: Increment,
    /// Present when run `a` issued queries.
    pub efficiency: Option<EfficiencyReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub convergence_definition: String,
    pub r: f64,
    pub runs: Vec<RunRow>,
    pub increments: Vec<IncrementRow>,
    /// Tab-separated ξ / ξ* table over the increment rows with efficiency.
    pub efficiency_table: String,
}

fn row(run_id: &str, rec: &RunRecord) -> RunRow {
    let last = rec.snapshots.last();
    let corr = last.map(|s| s.correction).unwrap_or_default();
    let q = rec.summary.queries;
    RunRow {
        run_id: run_id.to_string(),
        method: rec.config.run.method,
        attack_kind: rec.data.injection.as_ref().map(|a| a.kind.name().to_string()),
        ratio: rec.data.injection.as_ref().map_or(0.0, |a| a.ratio),
        seed: rec.config.run.seed,
        accuracy: rec.summary.final_accuracy,
        conv_epoch: rec.summary.convergence.map(|c| c.epoch),
        conv_truncated: rec.summary.convergence.is_some_and(|c| c.truncated),
        corr_overall: corr.overall,
        corr_sf_ut: corr.sf_ut,
        corr_uf_st: corr.uf_st,
        n_q: q.n_q,
        n_dq_over_nq: q.dup_ratio(),
        total_queries: q.total,
    }
}

/// Runs are comparable when they saw the same data under the same seed and
/// epoch budget.
fn check_pair(a: (&str, &RunRecord), b: (&str, &RunRecord)) -> Result<()> {
    let mismatch = |what: &str| {
        Err(LabError::Core(mmr_core::Error::PairMismatch(format!(
            "{} and {} differ in {what}",
            a.0, b.0
        ))))
    };
    if a.0 == b.0 {
        return mismatch("nothing: a run cannot be paired with itself");
    }
    if a.1.config.run.seed != b.1.config.run.seed {
        return mismatch("seed");
    }
    if a.1.data != b.1.data {
        return mismatch("data");
    }
    if a.1.config.run.epochs != b.1.config.run.epochs {
        return mismatch("epochs");
    }
    Ok(())
}

/// Same-data, same-seed pairs `(mmr, baseline-ce)` and `(mmr-hil, mmr)`.
pub fn auto_pairs(runs: &[(String, RunRecord)]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (hi, lo) in [(Method::Mmr, Method::BaselineCe), (Method::MmrHil, Method::Mmr)] {
        for (ia, a) in runs.iter().filter(|r| r.1.config.run.method == hi) {
            if let Some((ib, _)) = runs
                .iter()
                .filter(|r| r.1.config.run.method == lo)
                .find(|b| check_pair((ia, a), (&b.0, &b.1)).is_ok())
            {
                out.push((ia.clone(), ib.clone()));
            }
        }
    }
    out
}

pub fn build(runs: &[(String, RunRecord)], pairs: &[(String, String)], r: f64) -> Result<Report> {
    let find = |id: &str| {
        runs.iter()
            .find(|x| x.0 == id)
            .ok_or_else(|| LabError::Usage(format!("pair names unknown run {id:?}")))
    };
    let mut increments = Vec::new();
    for (ia, ib) in pairs {
        let a = find(ia)?;
        let b = find(ib)?;
        check_pair((&a.0, &a.1), (&b.0, &b.1))?;
        let (sa, sb) = (&a.1.summary, &b.1.summary);
        let (Some(ca), Some(cb)) = (sa.convergence, sb.convergence) else {
            return Err(LabError::Core(mmr_core::Error::PairMismatch(format!(
                "{ia}/{ib}: convergence epoch undefined"
            ))));
        };
        let inc = increment(sa.final_accuracy, ca.epoch, sb.final_accuracy, cb.epoch);
        let label = format!("{ia}/{ib}");
        let efficiency = if sa.queries.total > 0 {
            Some(EfficiencyReport::new(label.clone(), inc, &sa.queries, r)?)
        } else {
            None
        };
        increments.push(IncrementRow {
            label,
            a: ia.clone(),
            b: ib.clone(),
            increment: inc,
            efficiency,
        });
    }
    let eff: Vec<EfficiencyReport> = increments.iter().filter_map(|i| i.efficiency.clone()).collect();
    Ok(Report {
        convergence_definition: CONVERGENCE_DEFINITION.to_string(),
        r,
        runs: runs.iter().map(|(id, rec)| row(id, rec)).collect(),
        increments,
        efficiency_table: render_efficiency_table(&eff),
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn report_csv(report: &Report, runs: &[(String, RunRecord)]) -> Vec<u8> {
    let mut rows: Vec<[String; 14]> = report
        .runs
        .iter()
        .map(|r| {
            [
                r.run_id.clone(),
                r.method.name().to_string(),
                r.attack_kind.clone().unwrap_or_default(),
                r.ratio.to_string(),
                r.accuracy.to_string(),
                opt(r.conv_epoch),
                opt(r.corr_overall),
                opt(r.corr_sf_ut),
                opt(r.corr_uf_st),
                r.n_q.to_string(),
                r.n_dq_over_nq.to_string(),
                String::new(),
                String::new(),
                String::new(),
            ]
        })
        .collect();
    for inc in &report.increments {
        let a = report.runs.iter().find(|r| r.run_id == inc.a).expect("pair member is a run");
        let b_method = runs
            .iter()
            .find(|r| r.0 == inc.b)
            .map_or("", |r| r.1.config.run.method.name());
        let e = inc.efficiency.as_ref();
        rows.push([
            inc.label.clone(),
            format!("increment:{}/{}", a.method.name(), b_method),
            a.attack_kind.clone().unwrap_or_default(),
            a.ratio.to_string(),
            inc.increment.delta.to_string(),
            inc.increment.k.to_string(),
            String::new(),
            String::new(),
            String::new(),
            opt(e.map(|e| e.n_q)),
            opt(e.map(|e| e.dup_ratio)),
            opt(e.map(|e| e.xi)),
            opt(e.and_then(|e| e.xi_star)),
            opt(e.map(|e| e.r)),
        ]);
    }
    csv_bytes(&REPORT_HEADER, rows)
}

/// Writes `report.csv` and `report.json` into `dir`.
pub fn emit(runs: &[(String, RunRecord)], pairs: &[(String, String)], r: f64, dir: &Path) -> Result<Report> {
    let report = build(runs, pairs, r)?;
    store::create_dir(dir)?;
    store::write_file(&dir.join("report.csv"), &report_csv(&report, runs))?;
    store::write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}
