use rand::Rng;

use super::attention::MultiHeadAttention;
use super::config::ModelConfig;
use super::layers::{Embedding, FeedForward, LayerNorm};
use crate::backbone::{AttentionLayout, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Hidden states of one encoded sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `[T_src x d_model]`.
    pub states: Tensor,
    pub token_ids: Vec<usize>,
}

/// A flattened batch of encoded sentences living on a graph.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// `[sum(lengths) x d_model]`.
    pub states: Var,
    pub lengths: Vec<usize>,
}

impl EncodedBatch {
    /// Row offset of each sentence.
    pub fn offsets(&self) -> Vec<usize> {
        lengths_to_offsets(&self.lengths)
    }
}

pub(crate) fn lengths_to_offsets(lengths: &[usize]) -> Vec<usize> {
    lengths
        .iter()
        .scan(0, |acc, &l| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect()
}

/// Validate lengths and ids of a batch and flatten it.
pub(crate) fn flatten_batch<S: AsRef<[usize]>>(
    batch: &[S],
    vocab: usize,
    max_len: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut ids = Vec::new();
    let mut lengths = Vec::with_capacity(batch.len());
    for s in batch {
        let s = s.as_ref();
        if s.is_empty() {
            return Err(Error::Data("empty token sequence".into()));
        }
        if s.len() > max_len {
            return Err(Error::Length {
                len: s.len(),
                max_len,
            });
        }
        if let Some(&id) = s.iter().find(|&&id| id >= vocab) {
            return Err(Error::Vocabulary { id, size: vocab });
        }
        ids.extend_from_slice(s);
        lengths.push(s.len());
    }
    Ok((ids, lengths))
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let id = cfg.identity_mode;
        EncoderLayer {
            self_attn: MultiHeadAttention::new(
                store,
                &format!("{name}.self_attn"),
                cfg.d_model,
                cfg.n_heads,
                rng,
            ),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model, cfg.ln_eps, id),
            ffn: FeedForward::new(
                store,
                &format!("{name}.ffn"),
                cfg.d_model,
                cfg.d_ff,
                id,
                rng,
            ),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model, cfg.ln_eps, id),
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        x: Var,
        layout: &AttentionLayout,
        p: f32,
    ) -> Result<Var> {
        let a = self.self_attn.forward(g, ps, x, x, layout)?;
        let a = g.dropout(a, p);
        let x = g.add(x, a)?;
        let x = self.ln1.forward(g, ps, x)?;
        let f = self.ffn.forward(g, ps, x, p)?;
        let f = g.dropout(f, p);
        let x = g.add(x, f)?;
        self.ln2.forward(g, ps, x)
    }
}

/// Post-norm transformer encoder with its own embedding table.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub prefix: String,
    pub embed: Embedding,
    pub layers: Vec<EncoderLayer>,
    pub vocab: usize,
    pub max_len: usize,
    pub dropout: f32,
}

impl Encoder {
    /// Registers parameters under `prefix` (for example `"enc."`).
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let embed = Embedding::new(
            store,
            &format!("{prefix}embed"),
            cfg.src_vocab,
            cfg.d_model,
            cfg.max_len,
            rng,
        );
        let layers = (0..cfg.n_enc_layers)
            .map(|l| EncoderLayer::new(store, &format!("{prefix}layer{l}"), cfg, rng))
            .collect();
        Encoder {
            prefix: prefix.to_string(),
            embed,
            layers,
            vocab: cfg.src_vocab,
            max_len: cfg.max_len,
            dropout: cfg.effective_dropout(),
        }
    }

    /// Encode a batch of token sequences. Dropout applies only when the
    /// graph is in training mode and `train` is set.
    pub fn forward<S: AsRef<[usize]>>(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        batch: &[S],
        train: bool,
    ) -> Result<EncodedBatch> {
        let (ids, lengths) = flatten_batch(batch, self.vocab, self.max_len)?;
        let p = if train { self.dropout } else { 0.0 };
        let layout = AttentionLayout::from_lengths(&lengths, &lengths, false);
        let x = self.embed.forward(g, ps, &ids, &lengths)?;
        let mut x = g.dropout(x, p);
        for layer in &self.layers {
            x = layer.forward(g, ps, x, &layout, p)?;
        }
        Ok(EncodedBatch { states: x, lengths })
    }

    /// Encode one sentence without recording gradients.
    pub fn encode(&self, ps: &ParamStore, tokens: &[usize]) -> Result<EncoderOutput> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, ps, &[tokens], false)?;
        Ok(EncoderOutput {
            states: g.value(out.states).clone(),
            token_ids: tokens.to_vec(),
        })
    }

    /// Encode several sentences in one pass; one output per sentence.
    pub fn encode_many<S: AsRef<[usize]>>(
        &self,
        ps: &ParamStore,
        batch: &[S],
    ) -> Result<Vec<EncoderOutput>> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, ps, batch, false)?;
        let states = g.value(out.states);
        let d = states.cols();
        Ok(batch
            .iter()
            .zip(out.offsets())
            .map(|(s, off)| {
                let s = s.as_ref();
                let rows = states.data()[off * d..(off + s.len()) * d].to_vec();
                EncoderOutput {
                    states: Tensor::new(&[s.len(), d], rows).expect("consistent"),
                    token_ids: s.to_vec(),
                }
            })
            .collect())
    }
}
