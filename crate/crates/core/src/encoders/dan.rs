use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BIGRAM_EMBEDDING, EMBEDDING_INIT_STD, WORD_EMBEDDING};
use crate::compute::{Activation, Graph, Init, NodeId, ParameterStore};
use crate::text::FeatureSequence;
use crate::{Error, Result};

/// Deep averaging network over word and bigram embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DanConfig {
    pub embed_dim: usize,
    /// Layer widths; the last one is the sentence embedding size.
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for DanConfig {
    fn default() -> Self {
        Self { embed_dim: 300, hidden_layers: vec![300, 300, 500], activation: Activation::Tanh }
    }
}

fn layer_name(i: usize, part: &str) -> String {
    format!("encoder/dan/layer{i}/{part}")
}

impl DanConfig {
    pub fn output_dim(&self) -> usize {
        self.hidden_layers.last().copied().unwrap_or(self.embed_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("DAN needs a nonzero embedding size and at least one nonzero layer".into()));
        }
        Ok(())
    }

    pub(super) fn init_params<R: Rng>(
        &self,
        store: &mut ParameterStore,
        word_vocab: usize,
        bigram_vocab: usize,
        rng: &mut R,
    ) -> Result<()> {
        let std = Init::Normal { std: EMBEDDING_INIT_STD };
        store.add(WORD_EMBEDDING, &[word_vocab, self.embed_dim], std, rng)?;
        store.add(BIGRAM_EMBEDDING, &[bigram_vocab, self.embed_dim], std, rng)?;
        let mut fan_in = self.embed_dim;
        for (i, &width) in self.hidden_layers.iter().enumerate() {
            store.add(&layer_name(i, "weight"), &[fan_in, width], Init::GlorotUniform, rng)?;
            store.add(&layer_name(i, "bias"), &[width], Init::Zeros, rng)?;
            fan_in = width;
        }
        Ok(())
    }

    pub(super) fn encode_batch(&self, g: &mut Graph, batch: &[&FeatureSequence]) -> Result<NodeId> {
        let rows = batch.iter().map(|f| dan_combine(g, f)).collect::<Result<Vec<_>>>()?;
        let mut h = g.concat_rows(&rows)?;
        for i in 0..self.hidden_layers.len() {
            let z = g.affine(h, &layer_name(i, "weight"), &layer_name(i, "bias"))?;
            h = g.activation(z, self.activation);
        }
        g.l2_normalize_rows(h)
    }
}

/// Sum of the word and bigram embeddings of one sentence divided by
/// `sqrt(n)`, `n` being the number of word tokens. Returns a `1 x e` node.
pub fn dan_combine(g: &mut Graph, features: &FeatureSequence) -> Result<NodeId> {
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    let words = g.param(WORD_EMBEDDING)?;
    let rows = g.gather(words, &features.word_ids)?;
    let mut sum = g.sum_rows(rows);
    if !features.bigram_ids.is_empty() {
        let bigrams = g.param(BIGRAM_EMBEDDING)?;
        let rows = g.gather(bigrams, &features.bigram_ids)?;
        let bsum = g.sum_rows(rows);
        sum = g.add(sum, bsum)?;
    }
    Ok(g.scale(sum, 1.0 / (features.n_tokens() as f64).sqrt()))
}
