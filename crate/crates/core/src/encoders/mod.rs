//! Sentence encoders mapping a [`FeatureSequence`] to a unit-norm embedding.
//!
//! Both encoders register their parameters under the `encoder/` prefix so
//! that every sentence in a model, whether input, response or NLI premise
//! and hypothesis, is encoded by the same tensors.

mod dan;
mod transformer;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dan::{dan_combine, DanConfig};
pub use transformer::{self_attention_block, timing_signal, TransformerConfig};

use crate::compute::{Graph, NodeId, ParameterStore};
use crate::text::FeatureSequence;
use crate::{Error, Result};

pub const ENCODER_PREFIX: &str = "encoder/";
pub const WORD_EMBEDDING: &str = "encoder/word_embedding";
pub const BIGRAM_EMBEDDING: &str = "encoder/bigram_embedding";
pub const EMBEDDING_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderConfig {
    Dan(DanConfig),
    Transformer(TransformerConfig),
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Dan(DanConfig::default())
    }
}

impl EncoderConfig {
    /// Embedding dimension `d`.
    pub fn output_dim(&self) -> usize {
        match self {
            EncoderConfig::Dan(c) => c.output_dim(),
            EncoderConfig::Transformer(c) => c.output_dim,
        }
    }

    /// Only the DAN consumes bigram features.
    pub fn uses_bigrams(&self) -> bool {
        matches!(self, EncoderConfig::Dan(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderConfig::Dan(_) => "dan",
            EncoderConfig::Transformer(_) => "transformer",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::Dan(c) => c.validate(),
            EncoderConfig::Transformer(c) => c.validate(),
        }
    }

    pub fn init_params<R: Rng>(
        &self,
        store: &mut ParameterStore,
        word_vocab: usize,
        bigram_vocab: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.validate()?;
        match self {
            EncoderConfig::Dan(c) => c.init_params(store, word_vocab, bigram_vocab, rng),
            EncoderConfig::Transformer(c) => c.init_params(store, word_vocab, rng),
        }
    }

    /// Encodes a batch into a `K x d` node of unit rows.
    pub fn encode_batch(&self, g: &mut Graph, batch: &[&FeatureSequence]) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        if let Some(i) = batch.iter().position(|f| f.is_empty()) {
            return Err(Error::EmptyInputAt(i));
        }
        match self {
            EncoderConfig::Dan(c) => c.encode_batch(g, batch),
            EncoderConfig::Transformer(c) => c.encode_batch(g, batch),
        }
    }

    /// Encodes one sentence with a throwaway tape.
    pub fn embed(&self, store: &ParameterStore, features: &FeatureSequence) -> Result<SentenceEmbedding> {
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut g = Graph::new(store);
        let node = self.encode_batch(&mut g, &[features])?;
        g.ensure_finite()?;
        Ok(SentenceEmbedding(g.value(node).data().to_vec()))
    }
}

/// A unit-L2-norm sentence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbedding(pub Vec<f64>);

impl SentenceEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &SentenceEmbedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
