use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EMBEDDING_INIT_STD, WORD_EMBEDDING};
use crate::compute::{Activation, Graph, Init, NodeId, ParameterStore, Tensor};
use crate::text::FeatureSequence;
use crate::{Error, Result};

/// Post-norm Transformer encoder with mean pooling and a final projection
/// from the model width to the embedding size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub filter: usize,
    pub output_dim: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { layers: 6, heads: 8, hidden: 512, filter: 2048, output_dim: 500 }
    }
}

const PREFIX: &str = "encoder/transformer";

fn pname(layer: usize, part: &str) -> String {
    format!("{PREFIX}/layer{layer}/{part}")
}

/// Sinusoidal position signal: column `2i` holds `sin(pos / 10000^(2i/dim))`
/// and column `2i+1` the matching cosine.
pub fn timing_signal(length: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[length, dim]);
    for pos in 0..length {
        let row = t.row_slice_mut(pos);
        for i in 0..dim.div_ceil(2) {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / dim as f64);
            row[2 * i] = angle.sin();
            if 2 * i + 1 < dim {
                row[2 * i + 1] = angle.cos();
            }
        }
    }
    t
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.filter == 0 || self.output_dim == 0 {
            return Err(Error::Config("transformer sizes must be nonzero".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("hidden size {} is not divisible by {} heads", self.hidden, self.heads)));
        }
        Ok(())
    }

    pub(super) fn init_params<R: Rng>(&self, store: &mut ParameterStore, word_vocab: usize, rng: &mut R) -> Result<()> {
        let h = self.hidden;
        store.add(WORD_EMBEDDING, &[word_vocab, h], Init::Normal { std: EMBEDDING_INIT_STD }, rng)?;
        for l in 0..self.layers {
            for proj in ["query", "key", "value", "output"] {
                store.add(&pname(l, &format!("attention/{proj}/weight")), &[h, h], Init::GlorotUniform, rng)?;
                store.add(&pname(l, &format!("attention/{proj}/bias")), &[h], Init::Zeros, rng)?;
            }
            store.add(&pname(l, "attention_norm/gain"), &[h], Init::Ones, rng)?;
            store.add(&pname(l, "attention_norm/bias"), &[h], Init::Zeros, rng)?;
            store.add(&pname(l, "ffn/inner/weight"), &[h, self.filter], Init::GlorotUniform, rng)?;
            store.add(&pname(l, "ffn/inner/bias"), &[self.filter], Init::Zeros, rng)?;
            store.add(&pname(l, "ffn/outer/weight"), &[self.filter, h], Init::GlorotUniform, rng)?;
            store.add(&pname(l, "ffn/outer/bias"), &[h], Init::Zeros, rng)?;
            store.add(&pname(l, "ffn_norm/gain"), &[h], Init::Ones, rng)?;
            store.add(&pname(l, "ffn_norm/bias"), &[h], Init::Zeros, rng)?;
        }
        store.add(&format!("{PREFIX}/projection/weight"), &[h, self.output_dim], Init::GlorotUniform, rng)?;
        store.add(&format!("{PREFIX}/projection/bias"), &[self.output_dim], Init::Zeros, rng)?;
        Ok(())
    }

    /// Token embeddings plus timing signal, run through every block and
    /// mean-pooled over positions. Returns a `1 x hidden` node. Attention
    /// weight matrices are appended to `trace` (layer-major, then head).
    pub fn encode_pooled(
        &self,
        g: &mut Graph,
        features: &FeatureSequence,
        mut trace: Option<&mut Vec<NodeId>>,
    ) -> Result<NodeId> {
        if features.is_empty() {
            return Err(Error::EmptyInput);
        }
        let table = g.param(WORD_EMBEDDING)?;
        let tokens = g.gather(table, &features.word_ids)?;
        let timing = g.constant(timing_signal(features.n_tokens(), self.hidden));
        let mut x = g.add(tokens, timing)?;
        for l in 0..self.layers {
            x = self_attention_block(g, self, l, x, trace.as_deref_mut())?;
        }
        Ok(g.mean_rows(x))
    }

    pub(super) fn encode_batch(&self, g: &mut Graph, batch: &[&FeatureSequence]) -> Result<NodeId> {
        let pooled = batch.iter().map(|f| self.encode_pooled(g, f, None)).collect::<Result<Vec<_>>>()?;
        let stacked = g.concat_rows(&pooled)?;
        let projected =
            g.affine(stacked, &format!("{PREFIX}/projection/weight"), &format!("{PREFIX}/projection/bias"))?;
        g.l2_normalize_rows(projected)
    }
}

/// One encoder layer over `x` (`len x hidden`): multi-head scaled
/// dot-product self-attention and a relu feed-forward network, each
/// wrapped in a residual connection followed by layer normalization.
pub fn self_attention_block(
    g: &mut Graph,
    config: &TransformerConfig,
    layer: usize,
    x: NodeId,
    trace: Option<&mut Vec<NodeId>>,
) -> Result<NodeId> {
    let hidden = g.value(x).cols();
    if hidden != config.hidden || g.value(x).rows() == 0 {
        return Err(Error::ShapeMismatch(format!("attention block expects width {}, got {hidden}", config.hidden)));
    }
    let head_dim = config.hidden / config.heads;
    let q = g.affine(x, &pname(layer, "attention/query/weight"), &pname(layer, "attention/query/bias"))?;
    let k = g.affine(x, &pname(layer, "attention/key/weight"), &pname(layer, "attention/key/bias"))?;
    let v = g.affine(x, &pname(layer, "attention/value/weight"), &pname(layer, "attention/value/bias"))?;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut heads = Vec::with_capacity(config.heads);
    let mut weights = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let logits = g.scale(logits, scale);
        let attn = g.softmax_rows(logits);
        weights.push(attn);
        heads.push(g.matmul(attn, vh)?);
    }
    if let Some(t) = trace {
        t.extend(weights);
    }
    let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    let attended =
        g.affine(merged, &pname(layer, "attention/output/weight"), &pname(layer, "attention/output/bias"))?;
    let residual = g.add(x, attended)?;
    let gain = g.param(&pname(layer, "attention_norm/gain"))?;
    let bias = g.param(&pname(layer, "attention_norm/bias"))?;
    let x = g.layer_norm(residual, gain, bias)?;

    let inner = g.affine(x, &pname(layer, "ffn/inner/weight"), &pname(layer, "ffn/inner/bias"))?;
    let inner = g.activation(inner, Activation::Relu);
    let outer = g.affine(inner, &pname(layer, "ffn/outer/weight"), &pname(layer, "ffn/outer/bias"))?;
    let residual = g.add(x, outer)?;
    let gain = g.param(&pname(layer, "ffn_norm/gain"))?;
    let bias = g.param(&pname(layer, "ffn_norm/bias"))?;
    g.layer_norm(residual, gain, bias)
}
