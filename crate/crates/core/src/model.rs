//! The MMR network: encoder, decoder, classifier head, and the clustering
//! layer, plus the three training objectives and their gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{argmax2, Class, Dataset};
use crate::error::{Error, Result};
use crate::fuzzy::{self, ClusterAlignment, ClusterState};
use crate::nn::loss::{self, LossHead};
use crate::nn::{ActivationKind, AdamConfig, Layer, Sequential};
use crate::tensor::Tensor;

/// Rows per forward chunk when evaluating whole datasets.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    /// Three stride-2 convolutions (8/16/32 channels, kernels 5/5/4) and a
    /// mirrored transposed-convolution decoder. Needs `H` and `W` divisible
    /// by 8.
    Conv,
    /// `H·W → hidden → Z_e` and back.
    Dense { hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub embed_dim: usize,
    pub classifier_hidden: usize,
    pub activation: ActivationKind,
    pub alpha1: f64,
    pub alpha2: f64,
    pub fuzzifier: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Conv,
            embed_dim: 64,
            classifier_hidden: 16,
            activation: ActivationKind::LeakyRelu,
            alpha1: 1.0,
            alpha2: 1.0,
            fuzzifier: 2.0,
            batch_size: 64,
            adam: AdamConfig::default(),
        }
    }
}

impl ModelConfig {
    /// The small dense variant used where speed matters more than fidelity.
    pub fn dense(hidden: usize) -> Self {
        Self {
            architecture: Architecture::Dense { hidden },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.embed_dim == 0 || self.classifier_hidden == 0 || self.batch_size == 0 {
            return bad("embedding, hidden and batch sizes must be positive");
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return bad("balance coefficients must be nonnegative");
        }
        if !(self.fuzzifier > 1.0) {
            return bad("fuzzifier must exceed 1");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if let Architecture::Dense { hidden: 0 } = self.architecture {
            return bad("dense hidden width must be positive");
        }
        Ok(())
    }
}

/// Parameter groups that share an optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    /// Encoder, decoder, classifier.
    Classification,
    /// Encoder, decoder, cluster centers.
    Clustering,
    /// Encoder, classifier.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmrModel {
    pub config: ModelConfig,
    pub height: usize,
    pub width: usize,
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub classifier: Sequential,
    pub cluster: Option<ClusterState>,
    pub alignment: ClusterAlignment,
}

/// Loss value broken into its terms. Unused terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub classification: f64,
    pub clustering: f64,
    /// A target entry was clamped inside the KL term.
    pub kl_clamped: bool,
}

/// Gradients for every parameter tensor; groups that a loss does not touch
/// are zero.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub encoder: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
    pub classifier: Vec<Tensor>,
    pub centers: Option<Tensor>,
}

impl ModelGrads {
    /// Same order as [`MmrModel::all_params_mut`].
    pub fn flat(&self) -> Vec<&Tensor> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain(&self.classifier)
            .chain(self.centers.as_ref())
            .collect()
    }

    /// The subset matching [`MmrModel::group_params_mut`].
    pub fn group(self, group: Group) -> Vec<Tensor> {
        let mut out = self.encoder;
        match group {
            Group::Classification => {
                out.extend(self.decoder);
                out.extend(self.classifier);
            }
            Group::Clustering => {
                out.extend(self.decoder);
                out.extend(self.centers);
            }
            Group::Baseline => out.extend(self.classifier),
        }
        out
    }
}

fn build_conv(cfg: &ModelConfig, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<(Sequential, Sequential)> {
    if !h.is_multiple_of(8) || !w.is_multiple_of(8) {
        return Err(Error::Config(format!("conv architecture needs H, W divisible by 8, got {h}×{w}")));
    }
    let act = || Layer::Activation(cfg.activation);
    let flat = 32 * (h / 8) * (w / 8);
    let encoder = Sequential::new(vec![
        Layer::conv2d(1, 8, 5, 2, 2, rng),
        act(),
        Layer::conv2d(8, 16, 5, 2, 2, rng),
        act(),
        Layer::conv2d(16, 32, 4, 2, 1, rng),
        act(),
        Layer::Flatten,
        Layer::dense(flat, cfg.embed_dim, rng),
    ]);
    let decoder = Sequential::new(vec![
        Layer::dense(cfg.embed_dim, flat, rng),
        act(),
        Layer::Reshape(vec![32, h / 8, w / 8]),
        Layer::conv_transpose2d(32, 16, 4, 2, 1, 0, rng),
        act(),
        Layer::conv_transpose2d(16, 8, 5, 2, 2, 1, rng),
        act(),
        Layer::conv_transpose2d(8, 1, 5, 2, 2, 1, rng),
    ]);
    Ok((encoder, decoder))
}

fn build_dense(cfg: &ModelConfig, hidden: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> (Sequential, Sequential) {
    let act = || Layer::Activation(cfg.activation);
    let encoder = Sequential::new(vec![
        Layer::Flatten,
        Layer::dense(h * w, hidden, rng),
        act(),
        Layer::dense(hidden, cfg.embed_dim, rng),
    ]);
    let decoder = Sequential::new(vec![
        Layer::dense(cfg.embed_dim, hidden, rng),
        act(),
        Layer::dense(hidden, h * w, rng),
        Layer::Reshape(vec![1, h, w]),
    ]);
    (encoder, decoder)
}

struct Forward {
    enc: crate::nn::Trace,
    z: Tensor,
}

impl MmrModel {
    pub fn new(config: ModelConfig, height: usize, width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (encoder, decoder) = match config.architecture {
            Architecture::Conv => build_conv(&config, height, width, &mut rng)?,
            Architecture::Dense { hidden } => build_dense(&config, hidden, height, width, &mut rng),
        };
        let classifier = Sequential::new(vec![
            Layer::dense(config.embed_dim, config.classifier_hidden, &mut rng),
            Layer::Activation(config.activation),
            Layer::dense(config.classifier_hidden, 2, &mut rng),
            Layer::Softmax,
        ]);
        Ok(Self {
            config,
            height,
            width,
            encoder,
            decoder,
            classifier,
            cluster: None,
            alignment: ClusterAlignment::default(),
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [x.batch(), 1, self.height, self.width];
        if x.shape() != want {
            return Err(Error::shape("model input", &want, x.shape()));
        }
        Ok(())
    }

    fn encode(&self, x: &Tensor) -> Result<Forward> {
        self.check_input(x)?;
        let enc = self.encoder.forward_trace(x)?;
        let z = enc.output().clone();
        Ok(Forward { enc, z })
    }

    /// `[B, Z_e]` embeddings.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.encoder.forward(x)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decoder.forward(&self.embed(x)?)
    }

    /// `[B, 2]` class probabilities.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        self.classifier.forward(&self.embed(x)?)
    }

    pub fn predict_classes(&self, x: &Tensor) -> Result<Vec<Class>> {
        Ok(classes_of(&self.predict_proba(x)?))
    }

    fn chunked<F: FnMut(&Tensor) -> Result<Tensor>>(&self, ds: &Dataset, mut f: F) -> Result<Tensor> {
        let idx: Vec<usize> = (0..ds.len()).collect();
        let parts = idx
            .chunks(EVAL_CHUNK)
            .map(|c| f(&ds.batch_features(c)))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat_rows(&parts)
    }

    pub fn embed_dataset(&self, ds: &Dataset) -> Result<Tensor> {
        self.chunked(ds, |x| self.embed(x))
    }

    pub fn predict_proba_dataset(&self, ds: &Dataset) -> Result<Tensor> {
        self.chunked(ds, |x| self.predict_proba(x))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<Class>> {
        Ok(classes_of(&self.predict_proba_dataset(ds)?))
    }

    fn cluster_state(&self) -> Result<&ClusterState> {
        self.cluster
            .as_ref()
            .ok_or_else(|| Error::Config("clustering layer is not initialized".into()))
    }

    /// Soft cluster assignments of a batch.
    pub fn assign(&self, x: &Tensor) -> Result<Tensor> {
        fuzzy::update_assignments(&self.embed(x)?, self.cluster_state()?)
    }

    pub fn reconstruction_loss(&self, x: &Tensor) -> Result<f64> {
        Ok(loss::reconstruction(&self.reconstruct(x)?, x)?.loss())
    }

    pub fn classification_loss(&self, x: &Tensor, labels: &Tensor) -> Result<f64> {
        Ok(loss::cross_entropy(&self.predict_proba(x)?, labels, None)?.loss())
    }

    /// `L_Rec + α1·L_C`, or with per-sample weights `L_Rec + (α1/N) Σ ε_i CE_i`.
    pub fn classification_module_loss(&self, x: &Tensor, labels: &Tensor, weights: Option<&[f64]>) -> Result<LossParts> {
        let z = self.embed(x)?;
        let rec = loss::reconstruction(&self.decoder.forward(&z)?, x)?.loss();
        let ce = loss::cross_entropy(&self.classifier.forward(&z)?, labels, weights)?.loss();
        Ok(LossParts {
            total: rec + self.config.alpha1 * ce,
            reconstruction: rec,
            classification: ce,
            ..LossParts::default()
        })
    }

    pub fn penalized_classification_loss(&self, x: &Tensor, labels: &Tensor, weights: &[f64]) -> Result<LossParts> {
        self.classification_module_loss(x, labels, Some(weights))
    }

    /// `L_Rec + α2·KL(q ‖ target)` with `q` from the clustering layer.
    pub fn clustering_module_loss(&self, x: &Tensor, target: &Tensor) -> Result<LossParts> {
        let z = self.embed(x)?;
        let rec = loss::reconstruction(&self.decoder.forward(&z)?, x)?.loss();
        let q = fuzzy::update_assignments(&z, self.cluster_state()?)?;
        let (kl, clamped) = loss::kl_divergence(&q, target)?;
        Ok(LossParts {
            total: rec + self.config.alpha2 * kl.loss(),
            reconstruction: rec,
            clustering: kl.loss(),
            kl_clamped: clamped,
            ..LossParts::default()
        })
    }

    pub fn baseline_loss(&self, x: &Tensor, labels: &Tensor) -> Result<LossParts> {
        let ce = self.classification_loss(x, labels)?;
        Ok(LossParts {
            total: ce,
            classification: ce,
            ..LossParts::default()
        })
    }

    fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
            classifier: self.classifier.zero_grads(),
            centers: self.cluster.as_ref().map(|c| Tensor::zeros(c.centers.shape())),
        }
    }

    fn reconstruction_branch(&self, f: &Forward, x: &Tensor, grads: &mut ModelGrads) -> Result<(f64, Tensor)> {
        let trace = self.decoder.forward_trace(&f.z)?;
        let head = loss::reconstruction(trace.output(), x)?;
        let gz = self.decoder.backward_into(&trace, &head.grad, &mut grads.decoder)?;
        Ok((head.loss(), gz))
    }

    fn classifier_branch(
        &self,
        f: &Forward,
        labels: &Tensor,
        weights: Option<&[f64]>,
        scale: f64,
        grads: &mut ModelGrads,
    ) -> Result<(f64, Option<Tensor>)> {
        let trace = self.classifier.forward_trace(&f.z)?;
        let mut head: LossHead = loss::cross_entropy(trace.output(), labels, weights)?;
        if scale == 0.0 {
            return Ok((head.loss(), None));
        }
        head.grad.scale(scale);
        let gz = self.classifier.backward_into(&trace, &head.grad, &mut grads.classifier)?;
        Ok((head.loss(), Some(gz)))
    }

    fn finish(&self, f: &Forward, gz: Tensor, grads: &mut ModelGrads) -> Result<()> {
        self.encoder.backward_into(&f.enc, &gz, &mut grads.encoder)?;
        Ok(())
    }

    /// Loss and gradients of the classification module objective.
    pub fn classification_grads(&self, x: &Tensor, labels: &Tensor, weights: Option<&[f64]>) -> Result<(LossParts, ModelGrads)> {
        let f = self.encode(x)?;
        let mut grads = self.zero_grads();
        let (rec, mut gz) = self.reconstruction_branch(&f, x, &mut grads)?;
        let a1 = self.config.alpha1;
        let (ce, gc) = self.classifier_branch(&f, labels, weights, a1, &mut grads)?;
        if let Some(gc) = gc {
            gz.add_assign(&gc)?;
        }
        self.finish(&f, gz, &mut grads)?;
        let parts = LossParts {
            total: rec + a1 * ce,
            reconstruction: rec,
            classification: ce,
            ..LossParts::default()
        };
        Ok((parts, grads))
    }

    /// Loss and gradients of the clustering module objective; `target` is
    /// held constant.
    pub fn clustering_grads(&self, x: &Tensor, target: &Tensor) -> Result<(LossParts, ModelGrads)> {
        let state = self.cluster_state()?;
        let f = self.encode(x)?;
        let mut grads = self.zero_grads();
        let (rec, mut gz) = self.reconstruction_branch(&f, x, &mut grads)?;
        let q = fuzzy::update_assignments(&f.z, state)?;
        let (mut kl, clamped) = loss::kl_divergence(&q, target)?;
        let a2 = self.config.alpha2;
        if a2 != 0.0 {
            kl.grad.scale(a2);
            let (gzc, gcenters) = fuzzy::assignment_backward(&f.z, state, &kl.grad)?;
            gz.add_assign(&gzc)?;
            grads.centers = Some(gcenters);
        }
        self.finish(&f, gz, &mut grads)?;
        let parts = LossParts {
            total: rec + a2 * kl.loss(),
            reconstruction: rec,
            clustering: kl.loss(),
            kl_clamped: clamped,
            ..LossParts::default()
        };
        Ok((parts, grads))
    }

    /// Plain cross-entropy through encoder and classifier.
    pub fn baseline_grads(&self, x: &Tensor, labels: &Tensor) -> Result<(LossParts, ModelGrads)> {
        let f = self.encode(x)?;
        let mut grads = self.zero_grads();
        let (ce, gz) = self.classifier_branch(&f, labels, None, 1.0, &mut grads)?;
        self.finish(&f, gz.expect("unit scale"), &mut grads)?;
        let parts = LossParts {
            total: ce,
            classification: ce,
            ..LossParts::default()
        };
        Ok((parts, grads))
    }

    /// Every parameter tensor: encoder, decoder, classifier, then centers.
    pub fn all_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out.extend(self.classifier.params_mut());
        if let Some(c) = self.cluster.as_mut() {
            out.push(&mut c.centers);
        }
        out
    }

    pub fn group_params(&self, group: Group) -> Vec<&Tensor> {
        let mut out = self.encoder.params();
        match group {
            Group::Classification => {
                out.extend(self.decoder.params());
                out.extend(self.classifier.params());
            }
            Group::Clustering => {
                out.extend(self.decoder.params());
                out.extend(self.cluster.as_ref().map(|c| &c.centers));
            }
            Group::Baseline => out.extend(self.classifier.params()),
        }
        out
    }

    pub fn group_params_mut(&mut self, group: Group) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        match group {
            Group::Classification => {
                out.extend(self.decoder.params_mut());
                out.extend(self.classifier.params_mut());
            }
            Group::Clustering => {
                out.extend(self.decoder.params_mut());
                out.extend(self.cluster.as_mut().map(|c| &mut c.centers));
            }
            Group::Baseline => out.extend(self.classifier.params_mut()),
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.decoder.param_count()
            + self.classifier.param_count()
            + self.cluster.as_ref().map_or(0, |c| c.centers.len())
    }
}

/// Row-wise argmax with ties to unstable.
pub fn classes_of(probs: &Tensor) -> Vec<Class> {
    (0..probs.batch())
        .map(|i| {
            let r = probs.row(i);
            argmax2([r[0], r[1]])
        })
        .collect()
}
