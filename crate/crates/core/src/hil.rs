//! Human-in-the-loop relabeling: loss-based false-label detection, the
//! bi-directional query rule, and annotator backends.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Class, Dataset};
use crate::error::{Error, Result};
use crate::gmm::Gmm1d;
use crate::math;
use crate::nn::loss::clamped_ln;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutPolicy {
    #[default]
    Skip,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HilConfig {
    /// Detection threshold on `p_false`.
    pub tau: f64,
    /// Per-direction query fraction of the training-set size.
    pub rho: f64,
    /// Annotation period in epochs.
    pub period: usize,
    /// Loss weight for annotated samples.
    pub penalty: f64,
    /// Skip samples that were annotated in an earlier round.
    pub dedupe: bool,
    /// Interactive backend only; `None` waits forever.
    pub timeout_secs: Option<f64>,
    pub timeout_policy: TimeoutPolicy,
}

impl Default for HilConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            rho: 0.0055,
            period: 3,
            penalty: 3.0,
            dedupe: false,
            timeout_secs: None,
            timeout_policy: TimeoutPolicy::Skip,
        }
    }
}

impl HilConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.tau) {
            return Err(Error::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !open_unit(self.rho) {
            return Err(Error::Config(format!("rho {} outside (0, 1)", self.rho)));
        }
        if self.period == 0 {
            return Err(Error::Config("annotation period must be at least 1".into()));
        }
        if !(self.penalty > 0.0) {
            return Err(Error::Config("penalty must be positive".into()));
        }
        if matches!(self.timeout_secs, Some(t) if !(t >= 0.0)) {
            return Err(Error::Config("timeout must be nonnegative".into()));
        }
        Ok(())
    }

    /// Queries taken from each end of the detected set.
    pub fn per_direction(&self, n_total: usize) -> usize {
        math::ceil(self.rho * n_total as f64 - 1e-9) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Most likely false.
    Descending,
    /// Barely above the threshold.
    Ascending,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Descending => "descending",
            Direction::Ascending => "ascending",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "descending" => Some(Direction::Descending),
            "ascending" => Some(Direction::Ascending),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Pending,
    Labeled,
    Expired,
}

impl QueryStatus {
    pub fn name(self) -> &'static str {
        match self {
            QueryStatus::Pending => "pending",
            QueryStatus::Labeled => "labeled",
            QueryStatus::Expired => "expired",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(QueryStatus::Pending),
            "labeled" => Some(QueryStatus::Labeled),
            "expired" => Some(QueryStatus::Expired),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    Oracle,
    Human,
    Scripted,
    TimeoutFallback,
}

impl LabelSource {
    pub fn name(self) -> &'static str {
        match self {
            LabelSource::Oracle => "oracle",
            LabelSource::Human => "human",
            LabelSource::Scripted => "scripted",
            LabelSource::TimeoutFallback => "timeout-fallback",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oracle" => Some(LabelSource::Oracle),
            "human" => Some(LabelSource::Human),
            "scripted" => Some(LabelSource::Scripted),
            "timeout-fallback" => Some(LabelSource::TimeoutFallback),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub sample_id: usize,
    pub p_false: f64,
    pub direction: Direction,
    /// 1-based.
    pub round: usize,
    pub issued_epoch: usize,
    pub status: QueryStatus,
    pub label: Option<Class>,
    pub source: Option<LabelSource>,
    /// The sample had already been annotated in an earlier round.
    pub duplicate: bool,
}

/// `−½ Σ_j ỹ_ij ln p_ij` per row.
pub fn per_sample_losses(probs: &Tensor, targets: &Tensor) -> Result<Vec<f64>> {
    if probs.shape() != targets.shape() || probs.shape().len() != 2 {
        return Err(Error::shape("per_sample_losses", targets.shape(), probs.shape()));
    }
    Ok((0..probs.batch())
        .map(|i| {
            let s: f64 = probs
                .row(i)
                .iter()
                .zip(targets.row(i))
                .map(|(&p, &y)| y * clamped_ln(p))
                .sum();
            -0.5 * s
        })
        .collect())
}

/// Indices with `p_false > tau`, most likely false first (ties by index).
pub fn detect(p_false: &[f64], tau: f64) -> Vec<usize> {
    let mut out: Vec<usize> = (0..p_false.len()).filter(|&i| p_false[i] > tau).collect();
    out.sort_by(|&a, &b| p_false[b].total_cmp(&p_false[a]).then(a.cmp(&b)));
    out
}

/// Convenience wrapper: posterior under `gmm`, then [`detect`].
pub fn detect_with(gmm: &Gmm1d, losses: &[f64], tau: f64) -> (Vec<f64>, Vec<usize>) {
    let p = gmm.p_false_all(losses);
    let d = detect(&p, tau);
    (p, d)
}

/// Position of a query round within a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundInfo {
    pub round: usize,
    pub epoch: usize,
}

/// Takes `per_direction` items from each end of the `detected` ordering
/// (descending `p_false`), dropping within-round repeats. With `dedupe`, samples
/// annotated earlier are removed first; otherwise they are kept and marked
/// as duplicates.
pub fn select_queries(
    detected: &[usize],
    p_false: &[f64],
    per_direction: usize,
    annotated: &[bool],
    dedupe: bool,
    at: RoundInfo,
) -> Vec<QueryItem> {
    let pool: Vec<usize> = detected
        .iter()
        .copied()
        .filter(|&i| !(dedupe && annotated[i]))
        .collect();
    let k = per_direction.min(pool.len());
    let item = |i: usize, direction| QueryItem {
        sample_id: i,
        p_false: p_false[i],
        direction,
        round: at.round,
        issued_epoch: at.epoch,
        status: QueryStatus::Pending,
        label: None,
        source: None,
        duplicate: annotated[i],
    };
    let mut out: Vec<QueryItem> = pool[..k].iter().map(|&i| item(i, Direction::Descending)).collect();
    for &i in pool.iter().rev().take(k) {
        if !out.iter().any(|q| q.sample_id == i) {
            out.push(item(i, Direction::Ascending));
        }
    }
    out
}

/// One resolved query: `label: None` means the query expired unanswered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Answer {
    pub label: Option<Class>,
    pub source: LabelSource,
}

/// Something that can relabel a round of queries. Implementations may block.
pub trait Annotator {
    fn annotate(&mut self, items: &[QueryItem], train: &Dataset) -> Result<Vec<Answer>>;
}

/// Answers with the ground-truth label.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleAnnotator;

impl Annotator for OracleAnnotator {
    fn annotate(&mut self, items: &[QueryItem], train: &Dataset) -> Result<Vec<Answer>> {
        items
            .iter()
            .map(|q| {
                let label = *train
                    .labels_true()
                    .get(q.sample_id)
                    .ok_or_else(|| Error::Annotator(format!("sample {} out of range", q.sample_id)))?;
                Ok(Answer {
                    label: Some(label),
                    source: LabelSource::Oracle,
                })
            })
            .collect()
    }
}

/// Replays a recorded transcript keyed by `(round, sample_id)`. Expired
/// entries replay as expired.
#[derive(Clone, Debug, Default)]
pub struct ScriptedAnnotator {
    answers: BTreeMap<(usize, usize), Option<Class>>,
}

impl ScriptedAnnotator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, round: usize, sample_id: usize, label: Option<Class>) {
        self.answers.insert((round, sample_id), label);
    }

    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a QueryItem>) -> Self {
        let mut s = Self::new();
        for q in items {
            s.insert(q.round, q.sample_id, q.label);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl Annotator for ScriptedAnnotator {
    fn annotate(&mut self, items: &[QueryItem], _train: &Dataset) -> Result<Vec<Answer>> {
        items
            .iter()
            .map(|q| {
                let label = self.answers.get(&(q.round, q.sample_id)).ok_or(Error::TranscriptMissing {
                    round: q.round,
                    sample_id: q.sample_id,
                })?;
                Ok(Answer {
                    label: *label,
                    source: LabelSource::Scripted,
                })
            })
            .collect()
    }
}

/// Writes answers back into the queries and pins the labels in `train`.
/// Returns the number of samples newly labeled.
pub fn apply_answers(items: &mut [QueryItem], answers: &[Answer], train: &mut Dataset) -> Result<usize> {
    if items.len() != answers.len() {
        return Err(Error::Annotator(format!(
            "{} answers for {} queries",
            answers.len(),
            items.len()
        )));
    }
    let mut labeled = 0;
    for (q, a) in items.iter_mut().zip(answers) {
        q.source = Some(a.source);
        match a.label {
            Some(c) => {
                q.status = QueryStatus::Labeled;
                q.label = Some(c);
                train.annotate(q.sample_id, c);
                labeled += 1;
            }
            None => {
                q.status = QueryStatus::Expired;
                q.label = None;
            }
        }
    }
    Ok(labeled)
}

/// Per-sample loss weights: `penalty` for annotated samples, one otherwise.
pub fn penalty_weights(annotated: &[bool], penalty: f64) -> Vec<f64> {
    annotated.iter().map(|&a| if a { penalty } else { 1.0 }).collect()
}
