//! Item embedders and the end-to-end pair scorer.
//!
//! An item embedder pools the token embeddings of each feature set (mean
//! pooling, or the last hidden state of an RNN for sequential sets in the
//! recurrent variant), concatenates the pooled vectors, applies tanh, then a
//! dense tanh layer. The scorer concatenates the seed and candidate
//! embeddings, applies a dense tanh layer and a linear scalar output.

use ndarray::{s, Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, DenseGrad, DenseLayer, EmbeddingTable, RnnEncoder, RnnGrad, SparseRows};
use super::NnError;
use crate::corpus::{FeatureSchema, FeatureSetKind, ItemFeatures};

/// How the recurrent variant differs from mean pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoder {
    /// Mean pooling for every feature set.
    Mean,
    /// RNN over sequential sets, mean pooling for bags.
    Rnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcfConfig {
    pub encoder: Encoder,
    /// Token embedding width.
    pub d_emb: usize,
    /// Width of the item embedding (the embedder's dense layer).
    pub d_item: usize,
    /// Width of the scorer's hidden layer.
    pub d_head: usize,
    /// RNN hidden state width.
    pub d_rnn: usize,
    /// Share embedder parameters between seed and candidate, and tie the two
    /// halves of the scorer's hidden layer.
    pub tied: bool,
    pub activation: Activation,
}

impl DcfConfig {
    /// Dimensions used for the marketplace experiments: 200-d tokens,
    /// 400-d item embeddings, 1200-d scorer hidden layer, 200-d RNN state.
    pub fn full_size(encoder: Encoder) -> Self {
        DcfConfig {
            encoder,
            d_emb: 200,
            d_item: 400,
            d_head: 1200,
            d_rnn: 200,
            tied: false,
            activation: Activation::Tanh,
        }
    }

    pub fn small(encoder: Encoder) -> Self {
        DcfConfig {
            encoder,
            d_emb: 16,
            d_item: 32,
            d_head: 32,
            d_rnn: 16,
            tied: false,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        for (name, v) in [
            ("d_emb", self.d_emb),
            ("d_item", self.d_item),
            ("d_head", self.d_head),
            ("d_rnn", self.d_rnn),
        ] {
            if v == 0 {
                return Err(NnError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemEmbedder {
    pub tables: Vec<EmbeddingTable>,
    /// One encoder per feature set; `Some` where the set is read by an RNN.
    pub encoders: Vec<Option<RnnEncoder>>,
    pub dense: DenseLayer,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct EmbedCache {
    rnn_states: Vec<Vec<Array1<f64>>>,
    /// tanh of the concatenated pooled vectors: the dense layer's input.
    hidden_in: Array1<f64>,
    pub output: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderGrad {
    pub tables: Vec<SparseRows>,
    pub encoders: Vec<Option<RnnGrad>>,
    pub dense: DenseGrad,
}

impl ItemEmbedder {
    pub fn init<R: Rng>(
        config: &DcfConfig,
        schema: &FeatureSchema,
        vocab_sizes: &[usize],
        rng: &mut R,
    ) -> Result<Self, NnError> {
        config.validate()?;
        if vocab_sizes.len() != schema.len() {
            return Err(NnError::Config(format!(
                "{} vocabularies for {} feature sets",
                vocab_sizes.len(),
                schema.len()
            )));
        }
        if let Some(i) = vocab_sizes.iter().position(|&v| v == 0) {
            return Err(NnError::Config(format!("vocabulary {i} is empty")));
        }
        let tables: Vec<_> = vocab_sizes
            .iter()
            .map(|&v| EmbeddingTable::init(v, config.d_emb, rng))
            .collect();
        let encoders: Vec<_> = schema
            .sets
            .iter()
            .map(|spec| {
                (config.encoder == Encoder::Rnn && spec.kind == FeatureSetKind::Sequential)
                    .then(|| RnnEncoder::init(config.d_emb, config.d_rnn, rng))
            })
            .collect();
        let d_concat = concat_width(config, schema);
        let dense = DenseLayer::init(d_concat, config.d_item, config.activation, rng);
        Ok(ItemEmbedder {
            tables,
            encoders,
            dense,
        })
    }

    pub fn d_out(&self) -> usize {
        self.dense.d_out()
    }

    fn set_width(&self, set: usize) -> usize {
        match &self.encoders[set] {
            Some(rnn) => rnn.d_hidden(),
            None => self.tables[set].dim(),
        }
    }

    pub fn check(&self, features: &ItemFeatures) -> Result<(), NnError> {
        if features.sets.len() != self.tables.len() {
            return Err(NnError::Config(format!(
                "item has {} feature sets, model expects {}",
                features.sets.len(),
                self.tables.len()
            )));
        }
        for (set, (ids, table)) in features.sets.iter().zip(&self.tables).enumerate() {
            if let Some(&bad) = ids.iter().find(|&&id| id as usize >= table.vocab_size()) {
                return Err(NnError::TokenOutOfRange {
                    set,
                    token: bad,
                    vocab: table.vocab_size(),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, features: &ItemFeatures) -> Result<EmbedCache, NnError> {
        self.check(features)?;
        let widths: Vec<usize> = (0..self.tables.len()).map(|i| self.set_width(i)).collect();
        let mut concat = Array1::zeros(widths.iter().sum::<usize>());
        let mut rnn_states = Vec::with_capacity(self.tables.len());
        let mut offset = 0;
        for (set, ids) in features.sets.iter().enumerate() {
            let width = widths[set];
            let mut slot = concat.slice_mut(s![offset..offset + width]);
            let mut states = Vec::new();
            match &self.encoders[set] {
                Some(rnn) if !ids.is_empty() => {
                    let inputs: Vec<_> = ids.iter().map(|&id| self.tables[set].row(id)).collect();
                    states = rnn.forward(&inputs);
                    slot.assign(states.last().expect("nonempty sequence"));
                }
                Some(_) => {}
                None => slot.assign(&self.tables[set].mean(ids)),
            }
            rnn_states.push(states);
            offset += width;
        }
        let act = self.dense.activation;
        let hidden_in = concat.mapv(|v| act.apply(v));
        let output = self.dense.forward(hidden_in.view());
        Ok(EmbedCache {
            rnn_states,
            hidden_in,
            output,
        })
    }

    pub fn embed(&self, features: &ItemFeatures) -> Result<Array1<f64>, NnError> {
        Ok(self.forward(features)?.output)
    }

    /// Gradient of `d_out · embedding` with respect to every parameter.
    pub fn backward(&self, features: &ItemFeatures, cache: &EmbedCache, d_out: ArrayView1<'_, f64>) -> EmbedderGrad {
        let (dense, d_hidden_in) = self.dense.backward(cache.hidden_in.view(), cache.output.view(), d_out);
        let act = self.dense.activation;
        let d_concat = ndarray::Zip::from(&d_hidden_in)
            .and(&cache.hidden_in)
            .map_collect(|&g, &y| g * act.derivative_at_output(y));

        let mut tables = vec![SparseRows::default(); self.tables.len()];
        let mut encoders: Vec<Option<RnnGrad>> = vec![None; self.tables.len()];
        let mut offset = 0;
        for (set, ids) in features.sets.iter().enumerate() {
            let width = self.set_width(set);
            let d_slot = d_concat.slice(s![offset..offset + width]);
            offset += width;
            match &self.encoders[set] {
                Some(rnn) => {
                    if ids.is_empty() {
                        encoders[set] = Some(RnnGrad::zeros_like(rnn));
                        continue;
                    }
                    let inputs: Vec<_> = ids.iter().map(|&id| self.tables[set].row(id)).collect();
                    let (g, dx) = rnn.backward(&inputs, &cache.rnn_states[set], d_slot);
                    encoders[set] = Some(g);
                    for (&id, d) in ids.iter().zip(dx) {
                        tables[set].push(id, d);
                    }
                }
                None => {
                    if ids.is_empty() {
                        continue;
                    }
                    let share = d_slot.to_owned() / ids.len() as f64;
                    for &id in ids {
                        tables[set].push(id, share.clone());
                    }
                }
            }
        }
        EmbedderGrad {
            tables,
            encoders,
            dense,
        }
    }

    pub fn add_scaled(&mut self, grad: &EmbedderGrad, alpha: f64) {
        for (t, g) in self.tables.iter_mut().zip(&grad.tables) {
            t.add_scaled(g, alpha);
        }
        for (e, g) in self.encoders.iter_mut().zip(&grad.encoders) {
            if let (Some(e), Some(g)) = (e, g) {
                e.add_scaled(g, alpha);
            }
        }
        self.dense.add_scaled(&grad.dense, alpha);
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
        for (i, t) in self.tables.iter().enumerate() {
            out.push((
                format!("{prefix}.embedding.{i}"),
                t.vectors.shape().to_vec(),
                t.vectors.as_slice().expect("standard layout"),
            ));
        }
        for (i, e) in self.encoders.iter().enumerate() {
            if let Some(e) = e {
                out.push((
                    format!("{prefix}.rnn.{i}.input_weights"),
                    e.input_weights.shape().to_vec(),
                    e.input_weights.as_slice().expect("standard layout"),
                ));
                out.push((
                    format!("{prefix}.rnn.{i}.recurrent_weights"),
                    e.recurrent_weights.shape().to_vec(),
                    e.recurrent_weights.as_slice().expect("standard layout"),
                ));
                out.push((
                    format!("{prefix}.rnn.{i}.bias"),
                    e.bias.shape().to_vec(),
                    e.bias.as_slice().expect("standard layout"),
                ));
            }
        }
        visit_dense(&self.dense, &format!("{prefix}.dense"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for t in &mut self.tables {
            out.push(t.vectors.as_slice_mut().expect("standard layout"));
        }
        for e in self.encoders.iter_mut().flatten() {
            out.push(e.input_weights.as_slice_mut().expect("standard layout"));
            out.push(e.recurrent_weights.as_slice_mut().expect("standard layout"));
            out.push(e.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.dense.weights.as_slice_mut().expect("standard layout"));
        out.push(self.dense.bias.as_slice_mut().expect("standard layout"));
    }
}

fn visit_dense<'a>(layer: &'a DenseLayer, name: &str, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
    out.push((
        format!("{name}.weights"),
        layer.weights.shape().to_vec(),
        layer.weights.as_slice().expect("standard layout"),
    ));
    out.push((
        format!("{name}.bias"),
        layer.bias.shape().to_vec(),
        layer.bias.as_slice().expect("standard layout"),
    ));
}

/// Row-major copy regardless of memory layout.
fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn concat_width(config: &DcfConfig, schema: &FeatureSchema) -> usize {
    schema
        .sets
        .iter()
        .map(|spec| match (config.encoder, spec.kind) {
            (Encoder::Rnn, FeatureSetKind::Sequential) => config.d_rnn,
            _ => config.d_emb,
        })
        .sum()
}

impl EmbedderGrad {
    pub fn zeros(embedder: &ItemEmbedder) -> Self {
        EmbedderGrad {
            tables: vec![SparseRows::default(); embedder.tables.len()],
            encoders: embedder
                .encoders
                .iter()
                .map(|e| e.as_ref().map(RnnGrad::zeros_like))
                .collect(),
            dense: DenseGrad::zeros_like(&embedder.dense),
        }
    }

    pub fn accumulate(&mut self, other: &EmbedderGrad) {
        for (a, b) in self.tables.iter_mut().zip(&other.tables) {
            a.extend(b);
        }
        for (a, b) in self.encoders.iter_mut().zip(&other.encoders) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.accumulate(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
        self.dense.accumulate(&other.dense);
    }

    fn dense_tensors(&self, embedder: &ItemEmbedder, out: &mut Vec<Vec<f64>>) {
        for (g, t) in self.tables.iter().zip(&embedder.tables) {
            out.push(flat(&g.to_dense(t.vocab_size(), t.dim())));
        }
        for (g, e) in self.encoders.iter().zip(&embedder.encoders) {
            if let Some(e) = e {
                let g = g.clone().unwrap_or_else(|| RnnGrad::zeros_like(e));
                out.push(flat(&g.input_weights));
                out.push(flat(&g.recurrent_weights));
                out.push(flat(&g.bias));
            }
        }
        out.push(flat(&self.dense.weights));
        out.push(flat(&self.dense.bias));
    }
}

/// The end-to-end pair scorer `h(s, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DcfModel {
    pub config: DcfConfig,
    pub schema: FeatureSchema,
    pub seed_embedder: ItemEmbedder,
    /// `None` when tied: the seed embedder embeds both items.
    pub candidate_embedder: Option<ItemEmbedder>,
    /// Input is `[φ(s), φ(r)]` when untied, `φ(s) + φ(r)` when tied.
    pub head_hidden: DenseLayer,
    pub head_out: DenseLayer,
}

#[derive(Clone, Debug)]
pub struct PairCache {
    seed: EmbedCache,
    candidate: EmbedCache,
    head_in: Array1<f64>,
    hidden: Array1<f64>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcfGrad {
    pub seed_embedder: EmbedderGrad,
    pub candidate_embedder: Option<EmbedderGrad>,
    pub head_hidden: DenseGrad,
    pub head_out: DenseGrad,
}

impl DcfModel {
    /// Fan-based uniform weights, small uniform embeddings, zero biases.
    pub fn init(config: DcfConfig, schema: FeatureSchema, vocab_sizes: &[usize], seed: u64) -> Result<Self, NnError> {
        let mut rng = crate::seed::rng(seed, crate::seed::Stream::Init);
        let seed_embedder = ItemEmbedder::init(&config, &schema, vocab_sizes, &mut rng)?;
        let candidate_embedder = if config.tied {
            None
        } else {
            Some(ItemEmbedder::init(&config, &schema, vocab_sizes, &mut rng)?)
        };
        let head_in = if config.tied { config.d_item } else { 2 * config.d_item };
        let head_hidden = DenseLayer::init(head_in, config.d_head, config.activation, &mut rng);
        let head_out = DenseLayer::init(config.d_head, 1, Activation::Identity, &mut rng);
        Ok(DcfModel {
            config,
            schema,
            seed_embedder,
            candidate_embedder,
            head_hidden,
            head_out,
        })
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.seed_embedder
            .tables
            .iter()
            .map(EmbeddingTable::vocab_size)
            .collect()
    }

    pub fn candidate(&self) -> &ItemEmbedder {
        self.candidate_embedder.as_ref().unwrap_or(&self.seed_embedder)
    }

    pub fn forward_pair(&self, s: &ItemFeatures, r: &ItemFeatures) -> Result<PairCache, NnError> {
        let seed = self.seed_embedder.forward(s)?;
        let candidate = self.candidate().forward(r)?;
        let head_in = if self.config.tied {
            &seed.output + &candidate.output
        } else {
            ndarray::concatenate(ndarray::Axis(0), &[seed.output.view(), candidate.output.view()]).expect("1-d")
        };
        let hidden = self.head_hidden.forward(head_in.view());
        let score = self.head_out.forward(hidden.view())[0];
        Ok(PairCache {
            seed,
            candidate,
            head_in,
            hidden,
            score,
        })
    }

    /// Score from precomputed seed and candidate embeddings.
    pub fn head_score(&self, seed: &Array1<f64>, candidate: &Array1<f64>) -> f64 {
        let head_in = if self.config.tied {
            seed + candidate
        } else {
            ndarray::concatenate(ndarray::Axis(0), &[seed.view(), candidate.view()]).expect("1-d")
        };
        let hidden = self.head_hidden.forward(head_in.view());
        self.head_out.forward(hidden.view())[0]
    }

    /// Unbounded scalar score `h(s, r)`.
    pub fn predict_pair(&self, s: &ItemFeatures, r: &ItemFeatures) -> Result<f64, NnError> {
        Ok(self.forward_pair(s, r)?.score)
    }

    /// Gradient of `upstream · h(s, r)` with respect to every parameter.
    pub fn backward_pair(&self, s: &ItemFeatures, r: &ItemFeatures, cache: &PairCache, upstream: f64) -> DcfGrad {
        let out_val = ndarray::arr1(&[cache.score]);
        let (head_out, d_hidden) =
            self.head_out
                .backward(cache.hidden.view(), out_val.view(), ndarray::arr1(&[upstream]).view());
        let (head_hidden, d_head_in) =
            self.head_hidden
                .backward(cache.head_in.view(), cache.hidden.view(), d_hidden.view());
        let d_item = self.config.d_item;
        let (d_seed, d_cand) = if self.config.tied {
            (d_head_in.view(), d_head_in.view())
        } else {
            (d_head_in.slice(s![..d_item]), d_head_in.slice(s![d_item..]))
        };
        let mut seed_grad = self.seed_embedder.backward(s, &cache.seed, d_seed);
        let cand_grad = self.candidate().backward(r, &cache.candidate, d_cand);
        let candidate_embedder = if self.config.tied {
            seed_grad.accumulate(&cand_grad);
            None
        } else {
            Some(cand_grad)
        };
        DcfGrad {
            seed_embedder: seed_grad,
            candidate_embedder,
            head_hidden,
            head_out,
        }
    }

    pub fn add_scaled(&mut self, grad: &DcfGrad, alpha: f64) {
        self.seed_embedder.add_scaled(&grad.seed_embedder, alpha);
        if let (Some(e), Some(g)) = (self.candidate_embedder.as_mut(), grad.candidate_embedder.as_ref()) {
            e.add_scaled(g, alpha);
        }
        self.head_hidden.add_scaled(&grad.head_hidden, alpha);
        self.head_out.add_scaled(&grad.head_out, alpha);
    }

    /// Every parameter tensor as `(name, shape, data)`, in serialization order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        self.seed_embedder.visit("seed", &mut out);
        if let Some(c) = &self.candidate_embedder {
            c.visit("candidate", &mut out);
        }
        visit_dense(&self.head_hidden, "head.hidden", &mut out);
        visit_dense(&self.head_out, "head.out", &mut out);
        out
    }

    /// Mutable views in the order of [`DcfModel::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.seed_embedder.visit_mut(&mut out);
        if let Some(c) = &mut self.candidate_embedder {
            c.visit_mut(&mut out);
        }
        for layer in [&mut self.head_hidden, &mut self.head_out] {
            out.push(layer.weights.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn param_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.2.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl DcfGrad {
    pub fn zeros(model: &DcfModel) -> Self {
        DcfGrad {
            seed_embedder: EmbedderGrad::zeros(&model.seed_embedder),
            candidate_embedder: model.candidate_embedder.as_ref().map(EmbedderGrad::zeros),
            head_hidden: DenseGrad::zeros_like(&model.head_hidden),
            head_out: DenseGrad::zeros_like(&model.head_out),
        }
    }

    /// Dense copies in the order of [`DcfModel::tensors`].
    pub fn dense_tensors(&self, model: &DcfModel) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.seed_embedder.dense_tensors(&model.seed_embedder, &mut out);
        if let (Some(g), Some(e)) = (&self.candidate_embedder, &model.candidate_embedder) {
            g.dense_tensors(e, &mut out);
        }
        for g in [&self.head_hidden, &self.head_out] {
            out.push(flat(&g.weights));
            out.push(flat(&g.bias));
        }
        out
    }

    pub fn flatten(&self, model: &DcfModel) -> Vec<f64> {
        self.dense_tensors(model).into_iter().flatten().collect()
    }

    pub fn accumulate(&mut self, other: &DcfGrad) {
        self.seed_embedder.accumulate(&other.seed_embedder);
        if let (Some(a), Some(b)) = (self.candidate_embedder.as_mut(), other.candidate_embedder.as_ref()) {
            a.accumulate(b);
        }
        self.head_hidden.accumulate(&other.head_hidden);
        self.head_out.accumulate(&other.head_out);
    }
}
