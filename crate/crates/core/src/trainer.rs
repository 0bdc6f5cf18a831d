//! The unified training loop.
//!
//! Per epoch `t` (MMR and MMR-HIL):
//!
//! 1. classification pass;
//! 2. at `t = 0`, initialize the clustering layer from the current embeddings;
//! 3. MMR-HIL with `t mod T = 0`: detect likely false labels, query the
//!    annotator, and run an extra penalized classification pass;
//! 4. refresh the global embedding mean and the target distribution;
//! 5. clustering pass;
//! 6. correct the non-annotated training labels with weight `ω = min(κt, 1)`.
//!
//! The baseline runs encoder and classifier on plain cross-entropy only.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Class, Dataset, SoftLabel};
use crate::error::{Error, Result};
use crate::fuzzy::{self, ClusterAlignment};
use crate::gmm;
use crate::hil::{self, Annotator, HilConfig, QueryItem, RoundInfo};
use crate::metrics::{self, Convergence, MetricsSnapshot, QueryStats};
use crate::model::{classes_of, Group, LossParts, MmrModel, ModelConfig, ModelGrads};
use crate::nn::AdamState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BaselineCe,
    Mmr,
    MmrHil,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BaselineCe => "baseline-ce",
            Method::Mmr => "mmr",
            Method::MmrHil => "mmr-hil",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline-ce" => Some(Method::BaselineCe),
            "mmr" => Some(Method::Mmr),
            "mmr-hil" => Some(Method::MmrHil),
            _ => None,
        }
    }
}

/// What happens to the cluster centers when the global embedding mean is
/// refreshed at the start of an epoch's clustering step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterRefresh {
    /// Centers move only through their gradient.
    Gradient,
    /// Centers shift with the mean.
    Translate,
    /// Centers are re-solved by the closed-form alternation, warm-started
    /// from their current position.
    #[default]
    Refit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub epochs: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub hil: HilConfig,
    /// Correction coefficient κ.
    pub kappa: f64,
    /// Convergence patience P, in epochs.
    pub patience: usize,
    /// Convergence band δ, in accuracy points.
    pub band: f64,
    pub init_max_iter: usize,
    pub init_tol: f64,
    pub center_refresh: CenterRefresh,
    /// On annotation epochs, run the penalized pass in addition to the
    /// regular classification pass (`true`) or instead of it.
    pub separate_penalized_pass: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Mmr,
            epochs: 50,
            seed: 0,
            model: ModelConfig::default(),
            hil: HilConfig::default(),
            kappa: 0.03,
            patience: 10,
            band: 0.25,
            init_max_iter: 100,
            init_tol: 1e-6,
            center_refresh: CenterRefresh::default(),
            separate_penalized_pass: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa {} must be positive", self.kappa)));
        }
        if !(self.band >= 0.0) {
            return Err(Error::Config("convergence band must be nonnegative".into()));
        }
        self.model.validate()?;
        if self.method == Method::MmrHil {
            self.hil.validate()?;
        }
        Ok(())
    }
}

/// `min(κt, 1)`.
pub fn omega(kappa: f64, t: usize) -> f64 {
    (kappa * t as f64).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorState {
    pub kappa: f64,
    pub epoch: usize,
    pub omega: f64,
}

impl CorrectorState {
    pub fn at(kappa: f64, epoch: usize) -> Self {
        Self {
            kappa,
            epoch,
            omega: omega(kappa, epoch),
        }
    }
}

/// `y ← (1−ω)·y + ω·(y_C + y_Clu)/2` for every sample not marked `frozen`.
pub fn correct_labels(labels: &mut [SoftLabel], y_c: &[Class], y_clu: &[Class], omega: f64, frozen: &[bool]) -> Result<()> {
    let n = labels.len();
    if y_c.len() != n || y_clu.len() != n || frozen.len() != n {
        return Err(Error::shape("correct_labels", &[n], &[y_c.len(), y_clu.len(), frozen.len()]));
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Config(format!("omega {omega} outside [0, 1]")));
    }
    for i in 0..n {
        if frozen[i] {
            continue;
        }
        let y = labels[i].probs();
        let c = SoftLabel::one_hot(y_c[i]).probs();
        let k = SoftLabel::one_hot(y_clu[i]).probs();
        let p0 = (1.0 - omega) * y[0] + omega * 0.5 * (c[0] + k[0]);
        labels[i] = SoftLabel::from_probs_unchecked([p0, 1.0 - p0]);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Classification,
    Annotation,
    Clustering,
    Correction,
    Evaluation,
    Done,
}

/// Receives progress from [`Trainer`]. All methods default to no-ops.
pub trait Observer {
    fn phase(&mut self, _epoch: usize, _phase: Phase) {}
    fn epoch(&mut self, _snapshot: &MetricsSnapshot) {}
}

impl Observer for () {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSummary {
    pub iterations: usize,
    pub converged: bool,
    pub reseeded: bool,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub detected: usize,
    pub issued: usize,
    pub labeled: usize,
    pub duplicates: usize,
    pub gmm_degenerate: bool,
    pub gmm_means: [f64; 2],
}

/// Mean training losses of one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub classification: f64,
    pub penalized: Option<f64>,
    pub clustering: Option<f64>,
    pub kl_clamped: bool,
    pub target_clamped: bool,
    pub init: Option<InitSummary>,
    pub round: Option<RoundSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_accuracy: f64,
    pub convergence: Option<Convergence>,
    pub queries: QueryStats,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: RunConfig,
    pub snapshots: Vec<MetricsSnapshot>,
    pub logs: Vec<EpochLog>,
    pub queries: Vec<QueryItem>,
    pub summary: RunSummary,
    pub model: MmrModel,
    /// Training set with the final (corrected and annotated) labels.
    pub train: Dataset,
}

fn epoch_seed(seed: u64, epoch: usize, pass: u64) -> u64 {
    // splitmix64 over the combined key.
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ pass.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PASS_CLASSIFY: u64 = 1;
const PASS_PENALIZED: u64 = 2;
const PASS_CLUSTER: u64 = 3;

/// Epoch-by-epoch driver; [`run`] is the usual entry point.
pub struct Trainer {
    config: RunConfig,
    model: MmrModel,
    train: Dataset,
    test: Dataset,
    adam_cls: AdamState,
    adam_clu: Option<AdamState>,
    epoch: usize,
    round: usize,
    weights: Vec<f64>,
    queried: BTreeSet<usize>,
    stats: QueryStats,
    queries: Vec<QueryItem>,
    snapshots: Vec<MetricsSnapshot>,
    logs: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(config: RunConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        if train.height() != test.height() || train.width() != test.width() {
            return Err(Error::shape(
                "test set",
                &[train.height(), train.width()],
                &[test.height(), test.width()],
            ));
        }
        let model = MmrModel::new(config.model.clone(), train.height(), train.width(), config.seed)?;
        let group = if config.method == Method::BaselineCe {
            Group::Baseline
        } else {
            Group::Classification
        };
        let adam_cls = AdamState::new(config.model.adam, &model.group_params(group));
        let weights = hil::penalty_weights(train.annotated_mask(), config.hil.penalty);
        Ok(Self {
            config,
            model,
            train,
            test,
            adam_cls,
            adam_clu: None,
            epoch: 0,
            round: 0,
            weights,
            queried: BTreeSet::new(),
            stats: QueryStats::default(),
            queries: Vec::new(),
            snapshots: Vec::new(),
            logs: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &MmrModel {
        &self.model
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn snapshots(&self) -> &[MetricsSnapshot] {
        &self.snapshots
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn batches(&self, pass: u64) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, self.epoch, pass));
        idx.shuffle(&mut rng);
        idx.chunks(self.config.model.batch_size).map(|c| c.to_vec()).collect()
    }

    fn check_loss(&self, parts: &LossParts, what: &str, batch: usize) -> Result<()> {
        if parts.total.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: format!("{what} loss at epoch {} batch {batch}", self.epoch),
            })
        }
    }

    fn apply(&mut self, group: Group, grads: ModelGrads) -> Result<()> {
        let g = grads.group(group);
        let adam = match group {
            Group::Clustering => self.adam_clu.as_mut().expect("clustering optimizer exists"),
            _ => &mut self.adam_cls,
        };
        let mut params = self.model.group_params_mut(group);
        adam.step(&mut params, &g)
    }

    /// One shuffled pass of the classification objective; mean batch loss.
    pub fn train_epoch_classification(&mut self, weighted: bool, pass: u64) -> Result<f64> {
        let baseline = self.config.method == Method::BaselineCe;
        let mut total = 0.0;
        let batches = self.batches(pass);
        for (b, idx) in batches.iter().enumerate() {
            let x = self.train.batch_features(idx);
            let y = self.train.batch_labels(idx);
            let (parts, grads) = if baseline {
                self.model.baseline_grads(&x, &y)?
            } else {
                let w: Option<Vec<f64>> = weighted.then(|| idx.iter().map(|&i| self.weights[i]).collect());
                self.model.classification_grads(&x, &y, w.as_deref())?
            };
            self.check_loss(&parts, "classification", b)?;
            total += parts.total;
            let group = if baseline { Group::Baseline } else { Group::Classification };
            self.apply(group, grads)?;
        }
        Ok(total / batches.len() as f64)
    }

    /// One shuffled pass of the clustering objective against a fixed target.
    pub fn train_epoch_clustering(&mut self, target: &Tensor) -> Result<(f64, bool)> {
        let mut total = 0.0;
        let mut clamped = false;
        let batches = self.batches(PASS_CLUSTER);
        for (b, idx) in batches.iter().enumerate() {
            let x = self.train.batch_features(idx);
            let p = target.select_rows(idx);
            let (parts, grads) = self.model.clustering_grads(&x, &p)?;
            self.check_loss(&parts, "clustering", b)?;
            total += parts.total;
            clamped |= parts.kl_clamped;
            self.apply(Group::Clustering, grads)?;
        }
        Ok((total / batches.len() as f64, clamped))
    }

    fn init_cluster_layer(&mut self) -> Result<InitSummary> {
        let z = self.model.embed_dataset(&self.train)?;
        let out = fuzzy::init_centers(&z, self.config.model.fuzzifier, self.config.init_max_iter, self.config.init_tol)?;
        let summary = InitSummary {
            iterations: out.iterations,
            converged: out.converged,
            reseeded: out.reseeded,
            objective: out.objective_trace.last().copied().unwrap_or(0.0),
        };
        self.model.cluster = Some(out.state);
        self.adam_clu = Some(AdamState::new(self.config.model.adam, &self.model.group_params(Group::Clustering)));
        Ok(summary)
    }

    fn refresh_centers(&mut self, z: &Tensor) -> Result<()> {
        let state = self.model.cluster.as_mut().expect("initialized at t = 0");
        let mean = fuzzy::mean_embedding(z);
        match self.config.center_refresh {
            CenterRefresh::Gradient => state.mean = mean,
            CenterRefresh::Translate => {
                let d = state.mean.len();
                for j in 0..2 {
                    for (k, c) in state.centers.row_mut(j).iter_mut().enumerate().take(d) {
                        *c += mean[k] - state.mean[k];
                    }
                }
                state.mean = mean;
            }
            CenterRefresh::Refit => {
                state.mean = mean;
                let out = fuzzy::refine_centers(z, state.clone(), self.config.init_max_iter, self.config.init_tol)?;
                *state = out.state;
            }
        }
        Ok(())
    }

    fn annotation_round(&mut self, annotator: &mut dyn Annotator) -> Result<RoundSummary> {
        self.round += 1;
        let probs = self.model.predict_proba_dataset(&self.train)?;
        let all: Vec<usize> = (0..self.train.len()).collect();
        let losses = hil::per_sample_losses(&probs, &self.train.batch_labels(&all))?;
        let g = gmm::fit_gmm(&losses)?;
        let (p_false, detected) = hil::detect_with(&g, &losses, self.config.hil.tau);
        let hc = &self.config.hil;
        let mut items = hil::select_queries(
            &detected,
            &p_false,
            hc.per_direction(self.train.len()),
            self.train.annotated_mask(),
            hc.dedupe,
            RoundInfo {
                round: self.round,
                epoch: self.epoch,
            },
        );
        let answers = annotator.annotate(&items, &self.train)?;
        let labeled = hil::apply_answers(&mut items, &answers, &mut self.train)?;
        let duplicates = items.iter().filter(|q| q.duplicate).count();
        self.stats.total += items.len();
        self.stats.n_dq += duplicates;
        self.queried.extend(items.iter().map(|q| q.sample_id));
        self.stats.n_q = self.queried.len() as f64 / self.train.len() as f64;
        self.weights = hil::penalty_weights(self.train.annotated_mask(), self.config.hil.penalty);
        let summary = RoundSummary {
            round: self.round,
            detected: detected.len(),
            issued: items.len(),
            labeled,
            duplicates,
            gmm_degenerate: g.degenerate,
            gmm_means: [g.components[0].mean, g.components[1].mean],
        };
        self.queries.extend(items);
        Ok(summary)
    }

    fn evaluate(&self, omega: f64) -> Result<MetricsSnapshot> {
        let pred = self.model.predict_dataset(&self.test)?;
        Ok(MetricsSnapshot {
            epoch: self.epoch,
            accuracy: metrics::accuracy(&pred, self.test.labels_true())?,
            correction: metrics::correction_rate(&self.train),
            queries: self.stats,
            omega,
        })
    }

    /// Runs one full epoch and returns its snapshot.
    pub fn step(&mut self, annotator: &mut dyn Annotator, obs: &mut dyn Observer) -> Result<MetricsSnapshot> {
        if self.is_done() {
            return Err(Error::Config("run already finished".into()));
        }
        let t = self.epoch;
        let method = self.config.method;
        let hil_epoch = method == Method::MmrHil && t.is_multiple_of(self.config.hil.period);
        let mut log = EpochLog {
            epoch: t,
            ..EpochLog::default()
        };
        let mut omega_t = 0.0;
        obs.phase(t, Phase::Classification);
        let collapse = hil_epoch && !self.config.separate_penalized_pass;
        if !collapse {
            log.classification = self.train_epoch_classification(true, PASS_CLASSIFY)?;
        }
        if method != Method::BaselineCe {
            if t == 0 && self.model.cluster.is_none() {
                log.init = Some(self.init_cluster_layer()?);
            }
            if hil_epoch {
                obs.phase(t, Phase::Annotation);
                log.round = Some(self.annotation_round(annotator)?);
                let pen = self.train_epoch_classification(true, PASS_PENALIZED)?;
                log.penalized = Some(pen);
                if collapse {
                    log.classification = pen;
                }
            }
            obs.phase(t, Phase::Clustering);
            let z = self.model.embed_dataset(&self.train)?;
            self.refresh_centers(&z)?;
            let q = fuzzy::update_assignments(&z, self.model.cluster.as_ref().expect("initialized at t = 0"))?;
            let (target, t_clamped) = fuzzy::target_distribution(&q)?;
            let (clu, kl_clamped) = self.train_epoch_clustering(&target)?;
            log.clustering = Some(clu);
            log.kl_clamped = kl_clamped;
            log.target_clamped = t_clamped;

            obs.phase(t, Phase::Correction);
            omega_t = omega(self.config.kappa, t);
            let z = self.model.embed_dataset(&self.train)?;
            let y_c = classes_of(&self.model.classifier.forward(&z)?);
            let q = fuzzy::update_assignments(&z, self.model.cluster.as_ref().expect("initialized"))?;
            let clusters = fuzzy::hard_assignments(&q);
            let reference: Vec<usize> = y_c.iter().map(|c| c.index()).collect();
            self.model.alignment = self.model.alignment.choose(&clusters, &reference);
            let align: ClusterAlignment = self.model.alignment;
            let y_clu: Vec<Class> = clusters
                .iter()
                .map(|&k| Class::from_index(align.class_of(k)).expect("two clusters"))
                .collect();
            let frozen = self.train.annotated_mask().to_vec();
            correct_labels(self.train.labels_train_mut(), &y_c, &y_clu, omega_t, &frozen)?;
        }
        obs.phase(t, Phase::Evaluation);
        let snap = self.evaluate(omega_t)?;
        obs.epoch(&snap);
        self.snapshots.push(snap.clone());
        self.logs.push(log);
        self.epoch += 1;
        if self.is_done() {
            obs.phase(t, Phase::Done);
        }
        Ok(snap)
    }

    pub fn finish(self) -> RunResult {
        let trace = metrics::accuracy_trace(&self.snapshots);
        let summary = RunSummary {
            final_accuracy: trace.last().copied().unwrap_or(0.0),
            convergence: metrics::convergence_epoch(&trace, self.config.band, self.config.patience),
            queries: self.stats,
        };
        RunResult {
            config: self.config,
            snapshots: self.snapshots,
            logs: self.logs,
            queries: self.queries,
            summary,
            model: self.model,
            train: self.train,
        }
    }
}

/// Trains for `config.epochs` epochs.
pub fn run(
    config: RunConfig,
    train: Dataset,
    test: Dataset,
    annotator: &mut dyn Annotator,
    obs: &mut dyn Observer,
) -> Result<RunResult> {
    let mut trainer = Trainer::new(config, train, test)?;
    while !trainer.is_done() {
        trainer.step(annotator, obs)?;
    }
    Ok(trainer.finish())
}

/// Human-readable one-liner for logs.
pub fn describe(result: &RunResult) -> String {
    let conv = result
        .summary
        .convergence
        .map_or(String::from("-"), |c| format!("{}", c.epoch));
    format!(
        "{} acc={:.2} conv={} corr={}",
        result.config.method.name(),
        result.summary.final_accuracy,
        conv,
        result
            .snapshots
            .last()
            .and_then(|s| s.correction.overall)
            .map_or(String::from("n/a"), |v| format!("{v:.2}"))
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, split, GeneratorSpec};
    use crate::hil::OracleAnnotator;
    use crate::model::Architecture;
    use alloc::vec;

    #[test]
    fn omega_schedule() {
        assert_eq!(omega(0.03, 0), 0.0);
        assert!((omega(0.03, 10) - 0.3).abs() < 1e-15);
        assert_eq!(omega(0.03, 40), 1.0);
    }

    #[test]
    fn correction_hand_cases() {
        use Class::*;
        let mut y = vec![SoftLabel::one_hot(Unstable)];
        correct_labels(&mut y, &[Stable], &[Unstable], 0.0, &[false]).unwrap();
        assert_eq!(y[0], SoftLabel::one_hot(Unstable));
        correct_labels(&mut y, &[Stable], &[Stable], 1.0, &[false]).unwrap();
        assert_eq!(y[0], SoftLabel::one_hot(Stable));
        let mut y = vec![SoftLabel::one_hot(Unstable)];
        correct_labels(&mut y, &[Stable], &[Unstable], 0.5, &[false]).unwrap();
        assert!((y[0].p_stable() - 0.25).abs() < 1e-15);
        assert!((y[0].p_unstable() - 0.75).abs() < 1e-15);
        let mut y = vec![SoftLabel::one_hot(Unstable)];
        correct_labels(&mut y, &[Stable], &[Stable], 1.0, &[true]).unwrap();
        assert_eq!(y[0], SoftLabel::one_hot(Unstable));
    }

    fn tiny_config(method: Method) -> RunConfig {
        RunConfig {
            method,
            epochs: 3,
            seed: 5,
            model: ModelConfig {
                embed_dim: 4,
                classifier_hidden: 4,
                batch_size: 16,
                ..ModelConfig::dense(8)
            },
            hil: HilConfig {
                period: 1,
                rho: 0.05,
                ..HilConfig::default()
            },
            ..RunConfig::default()
        }
    }

    fn tiny_data() -> (Dataset, Dataset) {
        let ds = generate(&GeneratorSpec {
            n: 80,
            h: 2,
            w: 8,
            seed: 2,
            ..GeneratorSpec::default()
        })
        .unwrap();
        split(&ds, 0.75, 1).unwrap()
    }

    #[test]
    fn runs_are_deterministic() {
        for method in [Method::BaselineCe, Method::Mmr, Method::MmrHil] {
            let (tr, te) = tiny_data();
            let a = run(tiny_config(method), tr.clone(), te.clone(), &mut OracleAnnotator, &mut ()).unwrap();
            let b = run(tiny_config(method), tr, te, &mut OracleAnnotator, &mut ()).unwrap();
            assert_eq!(a.snapshots, b.snapshots);
            assert_eq!(a.logs, b.logs);
            assert_eq!(a.snapshots.len(), 3);
            for l in a.train.labels_train() {
                assert!((l.p_stable() + l.p_unstable() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn annotated_labels_stay_pinned() {
        let (tr, te) = tiny_data();
        let mut t = Trainer::new(tiny_config(Method::MmrHil), tr, te).unwrap();
        t.step(&mut OracleAnnotator, &mut ()).unwrap();
        let pinned: Vec<(usize, SoftLabel)> = (0..t.train_set().len())
            .filter(|&i| t.train_set().annotated_mask()[i])
            .map(|i| (i, t.train_set().labels_train()[i]))
            .collect();
        while !t.is_done() {
            t.step(&mut OracleAnnotator, &mut ()).unwrap();
        }
        for (i, l) in pinned {
            assert_eq!(t.train_set().labels_train()[i], l);
        }
    }

    #[test]
    fn alpha2_zero_keeps_centers() {
        let (tr, te) = tiny_data();
        let mut cfg = tiny_config(Method::Mmr);
        cfg.model.alpha2 = 0.0;
        cfg.center_refresh = CenterRefresh::Gradient;
        let mut t = Trainer::new(cfg, tr, te).unwrap();
        t.step(&mut OracleAnnotator, &mut ()).unwrap();
        let before = t.model().cluster.clone().unwrap().centers;
        t.step(&mut OracleAnnotator, &mut ()).unwrap();
        assert_eq!(t.model().cluster.as_ref().unwrap().centers, before);
    }

    #[test]
    fn center_refresh_modes() {
        let (tr, te) = tiny_data();
        let mut t = Trainer::new(tiny_config(Method::Mmr), tr, te).unwrap();
        t.step(&mut OracleAnnotator, &mut ()).unwrap();
        let base = t.model().cluster.clone().unwrap();
        let mut z = t.model().embed_dataset(t.train_set()).unwrap();
        for v in z.data_mut() {
            *v += 0.5;
        }
        let shift: Vec<f64> = fuzzy::mean_embedding(&z).iter().zip(&base.mean).map(|(a, b)| a - b).collect();

        let mut refreshed = |mode| {
            t.model.cluster = Some(base.clone());
            t.config.center_refresh = mode;
            t.refresh_centers(&z).unwrap();
            t.model().cluster.clone().unwrap()
        };
        let g = refreshed(CenterRefresh::Gradient);
        assert_eq!(g.centers, base.centers);
        assert_eq!(g.mean, fuzzy::mean_embedding(&z));

        let tr = refreshed(CenterRefresh::Translate);
        for j in 0..2 {
            for k in 0..shift.len() {
                assert!((tr.centers.row(j)[k] - base.centers.row(j)[k] - shift[k]).abs() < 1e-12);
            }
        }

        let r = refreshed(CenterRefresh::Refit);
        let q = fuzzy::update_assignments(&z, &r).unwrap();
        let (again, _) = fuzzy::update_centers(&z, &q, r.fuzzifier).unwrap();
        let drift = again.data().iter().zip(r.centers.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-3, "refit centers are not a fixed point: {drift}");
    }

    #[test]
    fn config_checks() {
        assert!(RunConfig { epochs: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { kappa: 0.0, ..RunConfig::default() }.validate().is_err());
        let mut c = tiny_config(Method::Mmr);
        c.model.architecture = Architecture::Conv;
        let (tr, te) = tiny_data();
        // 2×8 inputs cannot feed the conv stack.
        assert!(Trainer::new(c, tr, te).is_err());
    }
}
