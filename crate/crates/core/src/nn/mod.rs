//! Similarity models with explicit forward and backward passes.
//!
//! - [`LinearModel`] over indicator features ([`PairIndicator`] for the
//!   synthetic experiments, [`ContentIndicator`] as the content baseline).
//! - [`DcfModel`], the two-tower content network, with mean pooling
//!   ([`Encoder::Mean`]) or an RNN title encoder ([`Encoder::Rnn`]).

mod dcf;
mod gradcheck;
mod io;
mod layers;
mod linear;

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dcf::{DcfConfig, DcfGrad, DcfModel, EmbedCache, EmbedderGrad, Encoder, ItemEmbedder, PairCache};
pub use gradcheck::{dcf_gradient_check, relative_error, GradCheck};
pub use io::{load_model, read_model, save_model, write_model, ModelBundle, FORMAT_VERSION, MAGIC};
pub use layers::{Activation, DenseGrad, DenseLayer, EmbeddingTable, RnnEncoder, RnnGrad, SparseRows};
pub use linear::{ContentIndicator, LinearModel, PairIndicator};

use crate::corpus::{FeatureSchema, ItemFeatures};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("token {token} out of range for feature set {set} (vocabulary size {vocab})")]
    TokenOutOfRange { set: usize, token: u32, vocab: usize },
    #[error("index {index} out of range (size {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("model file version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Linear,
    DcfMean,
    DcfRnn,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::DcfMean => "dcf-mean",
            Architecture::DcfRnn => "dcf-rnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Architecture::Linear),
            "dcf-mean" => Ok(Architecture::DcfMean),
            "dcf-rnn" => Ok(Architecture::DcfRnn),
            other => Err(NnError::Config(format!(
                "unknown architecture {other:?} (expected linear, dcf-mean or dcf-rnn)"
            ))),
        }
    }
}

/// Everything needed to build a fresh content model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub d_emb: usize,
    pub d_item: usize,
    pub d_head: usize,
    pub d_rnn: usize,
    pub tied: bool,
    pub activation: Activation,
    /// Hashed cross-feature buckets of the linear baseline.
    pub cross_buckets: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            arch: Architecture::DcfMean,
            d_emb: 32,
            d_item: 64,
            d_head: 64,
            d_rnn: 32,
            tied: false,
            activation: Activation::Tanh,
            cross_buckets: 1 << 18,
        }
    }
}

impl ModelSpec {
    pub fn dcf_config(&self) -> Option<DcfConfig> {
        let encoder = match self.arch {
            Architecture::Linear => return None,
            Architecture::DcfMean => Encoder::Mean,
            Architecture::DcfRnn => Encoder::Rnn,
        };
        Some(DcfConfig {
            encoder,
            d_emb: self.d_emb,
            d_item: self.d_item,
            d_head: self.d_head,
            d_rnn: self.d_rnn,
            tied: self.tied,
            activation: self.activation,
        })
    }
}

/// A content-based scorer `h(s, r)` over item features.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ContentModel {
    Linear {
        model: LinearModel,
        features: ContentIndicator,
    },
    Dcf(DcfModel),
}

impl ContentModel {
    pub fn arch(&self) -> Architecture {
        match self {
            ContentModel::Linear { .. } => Architecture::Linear,
            ContentModel::Dcf(m) => match m.config.encoder {
                Encoder::Mean => Architecture::DcfMean,
                Encoder::Rnn => Architecture::DcfRnn,
            },
        }
    }

    pub fn score(&self, s: &ItemFeatures, r: &ItemFeatures) -> Result<f64, NnError> {
        match self {
            ContentModel::Linear { model, features } => Ok(model.score(&features.active(s, r)?)),
            ContentModel::Dcf(m) => m.predict_pair(s, r),
        }
    }

    /// `θ += coef(h) · ∂h(s, r)/∂θ` from a single forward pass; returns `h(s, r)`
    /// before the update.
    pub fn step<F: FnOnce(f64) -> f64>(&mut self, s: &ItemFeatures, r: &ItemFeatures, coef: F) -> Result<f64, NnError> {
        match self {
            ContentModel::Linear { model, features } => {
                let active = features.active(s, r)?;
                let h = model.score(&active);
                model.add_scaled(&active, coef(h));
                Ok(h)
            }
            ContentModel::Dcf(m) => {
                let cache = m.forward_pair(s, r)?;
                let grad = m.backward_pair(s, r, &cache, coef(cache.score));
                m.add_scaled(&grad, 1.0);
                Ok(cache.score)
            }
        }
    }

    pub fn zero_grad(&self) -> ContentGrad {
        match self {
            ContentModel::Linear { .. } => ContentGrad::Linear(Vec::new()),
            ContentModel::Dcf(m) => ContentGrad::Dcf(Box::new(DcfGrad::zeros(m))),
        }
    }

    /// `grad += upstream · ∂h(s, r)/∂θ`; returns `h(s, r)`.
    pub fn accumulate(
        &self,
        s: &ItemFeatures,
        r: &ItemFeatures,
        upstream: f64,
        grad: &mut ContentGrad,
    ) -> Result<f64, NnError> {
        match (self, grad) {
            (ContentModel::Linear { model, features }, ContentGrad::Linear(g)) => {
                let active = features.active(s, r)?;
                g.extend(active.iter().map(|&k| (k, upstream)));
                Ok(model.score(&active))
            }
            (ContentModel::Dcf(m), ContentGrad::Dcf(g)) => {
                let cache = m.forward_pair(s, r)?;
                g.accumulate(&m.backward_pair(s, r, &cache, upstream));
                Ok(cache.score)
            }
            _ => Err(NnError::Config("gradient does not match the model".into())),
        }
    }

    pub fn apply(&mut self, grad: &ContentGrad, alpha: f64) {
        match (self, grad) {
            (ContentModel::Linear { model, .. }, ContentGrad::Linear(g)) => {
                for &(k, v) in g {
                    model.theta[k as usize] += alpha * v;
                }
            }
            (ContentModel::Dcf(m), ContentGrad::Dcf(g)) => m.add_scaled(g, alpha),
            _ => panic!("gradient does not match the model"),
        }
    }

    /// Seed-side item embedding; `None` for the linear model.
    pub fn embed(&self, f: &ItemFeatures) -> Result<Option<Array1<f64>>, NnError> {
        match self {
            ContentModel::Linear { .. } => Ok(None),
            ContentModel::Dcf(m) => m.seed_embedder.embed(f).map(Some),
        }
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(&self) -> ContentModel {
        let mut out = self.clone();
        match &mut out {
            ContentModel::Linear { model, .. } => model.theta.fill(0.0),
            ContentModel::Dcf(m) => {
                for t in m.tensors_mut() {
                    t.fill(0.0);
                }
            }
        }
        out
    }

    pub fn param_norm(&self) -> f64 {
        match self {
            ContentModel::Linear { model, .. } => model.param_norm(),
            ContentModel::Dcf(m) => m.param_norm(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ContentGrad {
    /// `(feature id, value)`; ids may repeat.
    Linear(Vec<(u32, f64)>),
    Dcf(Box<DcfGrad>),
}

/// Fresh model: `θ = 0` for the linear model; for networks, fan-based
/// uniform weights, small uniform embeddings and zero biases.
pub fn init_model(
    spec: &ModelSpec,
    schema: &FeatureSchema,
    vocab_sizes: &[usize],
    seed: u64,
) -> Result<ContentModel, NnError> {
    match spec.dcf_config() {
        None => {
            let features = ContentIndicator::new(vocab_sizes.to_vec(), spec.cross_buckets)?;
            Ok(ContentModel::Linear {
                model: LinearModel::zeros(features.dim()),
                features,
            })
        }
        Some(config) => Ok(ContentModel::Dcf(DcfModel::init(
            config,
            schema.clone(),
            vocab_sizes,
            seed,
        )?)),
    }
}

#[cfg(test)]
mod tests;
