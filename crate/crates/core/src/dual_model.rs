//! Input-response scoring model and the multitask NLI head.
//!
//! Inputs are encoded to `u`, responses to `v` by the same encoder, and `v`
//! is mapped through a response-only feed-forward network to `v'`. Scores
//! are `u · v'` over every input/response combination in a batch, so each
//! response is the positive for its own input and a negative for the rest.
//! The NLI head classifies `(u1, u2, |u1 - u2|, u1 * u2)` into three labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compute::{Activation, Graph, Init, NodeId, ParameterStore, Tensor};
use crate::corpus::NliLabel;
use crate::encoders::{EncoderConfig, SentenceEmbedding, ENCODER_PREFIX};
use crate::text::{featurize_text, FeatureSequence, Vocabulary};
use crate::{Error, Result};

pub const RESPONSE_PREFIX: &str = "response_dnn/";
pub const NLI_PREFIX: &str = "nli_head/";
pub const RESPONSE_OUTPUT_WEIGHT: &str = "response_dnn/output/weight";
pub const RESPONSE_OUTPUT_BIAS: &str = "response_dnn/output/bias";
pub const NLI_OUTPUT_WEIGHT: &str = "nli_head/output/weight";
pub const NLI_OUTPUT_BIAS: &str = "nli_head/output/bias";
pub const NLI_CLASSES: usize = 3;

/// Hidden tanh layers followed by a linear layer back to the embedding size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseDnnConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for ResponseDnnConfig {
    fn default() -> Self {
        Self { hidden_layers: vec![500, 500], activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NliHeadConfig {
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for NliHeadConfig {
    fn default() -> Self {
        Self { hidden: 512, activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DualModelConfig {
    pub encoder: EncoderConfig,
    pub response_dnn: ResponseDnnConfig,
    pub nli_head: NliHeadConfig,
}

fn response_layer(i: usize, part: &str) -> String {
    format!("response_dnn/layer{i}/{part}")
}

impl DualModelConfig {
    pub fn embedding_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.response_dnn.hidden_layers.contains(&0) || self.nli_head.hidden == 0 {
            return Err(Error::Config("layer widths must be nonzero".into()));
        }
        Ok(())
    }

    /// Creates and initialises every parameter of the model.
    pub fn init_store(&self, word_vocab: usize, bigram_vocab: usize, seed: u64) -> Result<ParameterStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new(seed);
        self.encoder.init_params(&mut store, word_vocab, bigram_vocab, &mut rng)?;

        let d = self.embedding_dim();
        let mut fan_in = d;
        for (i, &w) in self.response_dnn.hidden_layers.iter().enumerate() {
            store.add(&response_layer(i, "weight"), &[fan_in, w], Init::GlorotUniform, &mut rng)?;
            store.add(&response_layer(i, "bias"), &[w], Init::Zeros, &mut rng)?;
            fan_in = w;
        }
        store.add(RESPONSE_OUTPUT_WEIGHT, &[fan_in, d], Init::GlorotUniform, &mut rng)?;
        store.add(RESPONSE_OUTPUT_BIAS, &[d], Init::Zeros, &mut rng)?;

        let h = self.nli_head.hidden;
        store.add("nli_head/hidden/weight", &[4 * d, h], Init::GlorotUniform, &mut rng)?;
        store.add("nli_head/hidden/bias", &[h], Init::Zeros, &mut rng)?;
        store.add(NLI_OUTPUT_WEIGHT, &[h, NLI_CLASSES], Init::GlorotUniform, &mut rng)?;
        store.add(NLI_OUTPUT_BIAS, &[NLI_CLASSES], Init::Zeros, &mut rng)?;
        Ok(store)
    }

    /// `K x d` unit rows for a batch of sentences.
    pub fn encode(&self, g: &mut Graph, batch: &[&FeatureSequence]) -> Result<NodeId> {
        self.encoder.encode_batch(g, batch)
    }

    /// Maps response embeddings (`K x d`) to `v'`. Not re-normalized.
    pub fn embed_response(&self, g: &mut Graph, v: NodeId) -> Result<NodeId> {
        let mut h = v;
        for i in 0..self.response_dnn.hidden_layers.len() {
            let z = g.affine(h, &response_layer(i, "weight"), &response_layer(i, "bias"))?;
            h = g.activation(z, self.response_dnn.activation);
        }
        g.affine(h, RESPONSE_OUTPUT_WEIGHT, RESPONSE_OUTPUT_BIAS)
    }

    /// `S[i][j] = u_i · v'_j`; the diagonal holds the positive pairs.
    pub fn score_batch(
        &self,
        g: &mut Graph,
        inputs: &[&FeatureSequence],
        responses: &[&FeatureSequence],
    ) -> Result<NodeId> {
        if inputs.len() != responses.len() {
            return Err(Error::ShapeMismatch(format!("{} inputs but {} responses", inputs.len(), responses.len())));
        }
        let u = self.encode(g, inputs)?;
        let v = self.encode(g, responses)?;
        let v_prime = self.embed_response(g, v)?;
        let vt = g.transpose(v_prime)?;
        g.matmul(u, vt)
    }

    /// Mean over rows of `-log softmax(S[i])[i]`.
    pub fn response_loss(&self, g: &mut Graph, scores: NodeId) -> Result<NodeId> {
        let k = g.value(scores).rows();
        if k < 2 || g.value(scores).cols() != k {
            return Err(Error::ShapeMismatch(format!(
                "response loss needs a square score matrix with K >= 2, got {:?}",
                g.value(scores).shape()
            )));
        }
        let targets: Vec<usize> = (0..k).collect();
        g.softmax_xent(scores, &targets)
    }

    /// `(u1, u2, |u1 - u2|, u1 * u2)` row-wise.
    pub fn nli_features(&self, g: &mut Graph, u1: NodeId, u2: NodeId) -> Result<NodeId> {
        let diff = g.sub(u1, u2)?;
        let abs = g.abs(diff);
        let prod = g.mul(u1, u2)?;
        g.concat_cols(&[u1, u2, abs, prod])
    }

    pub fn nli_logits(
        &self,
        g: &mut Graph,
        premises: &[&FeatureSequence],
        hypotheses: &[&FeatureSequence],
    ) -> Result<NodeId> {
        if premises.len() != hypotheses.len() {
            return Err(Error::ShapeMismatch("premise/hypothesis count mismatch".into()));
        }
        let u1 = self.encode(g, premises)?;
        let u2 = self.encode(g, hypotheses)?;
        let features = self.nli_features(g, u1, u2)?;
        let hidden = g.affine(features, "nli_head/hidden/weight", "nli_head/hidden/bias")?;
        let hidden = g.activation(hidden, self.nli_head.activation);
        g.affine(hidden, NLI_OUTPUT_WEIGHT, NLI_OUTPUT_BIAS)
    }

    /// Cross-entropy of the NLI classifier and its accuracy on the batch.
    pub fn nli_loss(
        &self,
        g: &mut Graph,
        premises: &[&FeatureSequence],
        hypotheses: &[&FeatureSequence],
        labels: &[NliLabel],
    ) -> Result<(NodeId, f64)> {
        let logits = self.nli_logits(g, premises, hypotheses)?;
        let targets: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let loss = g.softmax_xent(logits, &targets)?;
        let accuracy = accuracy(g.value(logits), &targets);
        Ok((loss, accuracy))
    }

    /// Zeroes the last response layer, making every `v'` zero.
    pub fn zero_response_output(&self, store: &mut ParameterStore) -> Result<()> {
        zero(store, RESPONSE_OUTPUT_WEIGHT)?;
        zero(store, RESPONSE_OUTPUT_BIAS)
    }

    /// Zeroes the NLI output layer, making the classifier uniform.
    pub fn zero_nli_output(&self, store: &mut ParameterStore) -> Result<()> {
        zero(store, NLI_OUTPUT_WEIGHT)?;
        zero(store, NLI_OUTPUT_BIAS)
    }
}

fn zero(store: &mut ParameterStore, name: &str) -> Result<()> {
    let shape = store.value(name)?.shape().to_vec();
    store.set_value(name, Tensor::zeros(&shape))
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn accuracy(logits: &Tensor, targets: &[usize]) -> f64 {
    let hits = targets.iter().enumerate().filter(|(r, &t)| argmax(logits.row_slice(*r)) == t).count();
    hits as f64 / targets.len() as f64
}

/// Which parameter group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    ResponseDnn,
    NliHead,
    Other,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with(ENCODER_PREFIX) {
        ParamGroup::Encoder
    } else if name.starts_with(RESPONSE_PREFIX) {
        ParamGroup::ResponseDnn
    } else if name.starts_with(NLI_PREFIX) {
        ParamGroup::NliHead
    } else {
        ParamGroup::Other
    }
}

/// A frozen model ready for inference.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: DualModelConfig,
    pub store: ParameterStore,
    pub vocab: Vocabulary,
}

impl Model {
    pub fn features(&self, text: &str) -> FeatureSequence {
        featurize_text(text, &self.vocab, self.config.encoder.uses_bigrams())
    }

    pub fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        self.config.encoder.embed(&self.store, &self.features(text))
    }

    /// Embeds many sentences; runs on the current rayon pool, output order
    /// follows input order.
    pub fn embed_all<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<SentenceEmbedding>> {
        texts
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                self.embed(t.as_ref()).map_err(|e| match e {
                    Error::EmptyInput => Error::EmptyInputAt(i),
                    other => other,
                })
            })
            .collect()
    }

    /// `v'` for one response embedding.
    pub fn response_vector(&self, v: &SentenceEmbedding) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let node = g.constant(Tensor::row(v.0.clone()));
        let out = self.config.embed_response(&mut g, node)?;
        g.ensure_finite()?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn response_vectors(&self, vs: &[SentenceEmbedding]) -> Result<Vec<Vec<f64>>> {
        vs.par_iter().map(|v| self.response_vector(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::DanConfig;

    fn tiny() -> DualModelConfig {
        DualModelConfig {
            encoder: EncoderConfig::Dan(DanConfig {
                embed_dim: 6,
                hidden_layers: vec![8, 8, 8],
                activation: Activation::Tanh,
            }),
            response_dnn: ResponseDnnConfig { hidden_layers: vec![8], activation: Activation::Tanh },
            nli_head: NliHeadConfig { hidden: 5, activation: Activation::Tanh },
        }
    }

    fn seqs(k: usize) -> Vec<FeatureSequence> {
        (0..k)
            .map(|i| FeatureSequence { word_ids: vec![2 + i % 5, 3 + (i * 3) % 6], bigram_ids: vec![2 + i % 4] })
            .collect()
    }

    #[test]
    fn zero_output_layer_gives_zero_scores_and_ln_k() {
        let cfg = tiny();
        let mut store = cfg.init_store(10, 8, 1).unwrap();
        cfg.zero_response_output(&mut store).unwrap();
        let xs = seqs(4);
        let refs: Vec<&FeatureSequence> = xs.iter().collect();
        let mut g = Graph::new(&store);
        let s = cfg.score_batch(&mut g, &refs, &refs).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
        let loss = cfg.response_loss(&mut g, s).unwrap();
        assert!((g.scalar(loss) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn response_loss_needs_two_rows() {
        let cfg = tiny();
        let store = cfg.init_store(10, 8, 1).unwrap();
        let xs = seqs(1);
        let refs: Vec<&FeatureSequence> = xs.iter().collect();
        let mut g = Graph::new(&store);
        let s = cfg.score_batch(&mut g, &refs, &refs).unwrap();
        assert_eq!(g.value(s).shape(), &[1, 1]);
        assert!(cfg.response_loss(&mut g, s).is_err());
    }

    #[test]
    fn nli_features_identity_case() {
        let cfg = tiny();
        let store = ParameterStore::new(0);
        let mut g = Graph::new(&store);
        let u = g.constant(Tensor::row(vec![0.6, -0.8]));
        let f = cfg.nli_features(&mut g, u, u).unwrap();
        let expected = [0.6, -0.8, 0.6, -0.8, 0.0, 0.0, 0.6 * 0.6, 0.8 * 0.8];
        assert_eq!(g.value(f).shape(), &[1, 8]);
        for (a, b) in g.value(f).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_nli_head_is_uniform() {
        let cfg = tiny();
        let mut store = cfg.init_store(10, 8, 2).unwrap();
        cfg.zero_nli_output(&mut store).unwrap();
        let xs = seqs(3);
        let refs: Vec<&FeatureSequence> = xs.iter().collect();
        let mut g = Graph::new(&store);
        let labels = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];
        let (loss, acc) = cfg.nli_loss(&mut g, &refs, &refs, &labels).unwrap();
        assert!((g.scalar(loss) - 3f64.ln()).abs() < 1e-12);
        // all logits tie, so argmax picks class 0 and only the entailment row is right
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_pick_smallest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn groups() {
        assert_eq!(param_group("encoder/word_embedding"), ParamGroup::Encoder);
        assert_eq!(param_group(RESPONSE_OUTPUT_BIAS), ParamGroup::ResponseDnn);
        assert_eq!(param_group(NLI_OUTPUT_WEIGHT), ParamGroup::NliHead);
    }
}
