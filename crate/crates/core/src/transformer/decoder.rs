use rand::Rng;

use super::attention::MultiHeadAttention;
use super::config::ModelConfig;
use super::encoder::{flatten_batch, EncodedBatch};
use super::layers::{Embedding, LayerNorm, Linear};
use crate::backbone::{AttentionLayout, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::fusion::FusionLayer;

/// Causal self-attention followed by the configured cross-attention block.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln_self: LayerNorm,
    pub cross: FusionLayer,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub embed: Embedding,
    pub layers: Vec<DecoderLayer>,
    pub out: Linear,
    pub vocab: usize,
    pub max_len: usize,
    pub dropout: f32,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let embed = Embedding::new(
            store,
            &format!("{prefix}embed"),
            cfg.tgt_vocab,
            cfg.d_model,
            cfg.max_len + 1,
            rng,
        );
        let layers = (0..cfg.n_dec_layers)
            .map(|l| {
                let name = format!("{prefix}layer{l}");
                DecoderLayer {
                    self_attn: MultiHeadAttention::new(
                        store,
                        &format!("{name}.self_attn"),
                        cfg.d_model,
                        cfg.n_heads,
                        rng,
                    ),
                    ln_self: LayerNorm::new(
                        store,
                        &format!("{name}.ln_self"),
                        cfg.d_model,
                        cfg.ln_eps,
                        cfg.identity_mode,
                    ),
                    cross: FusionLayer::new(store, &name, cfg, rng),
                }
            })
            .collect();
        let out = Linear::new(
            store,
            &format!("{prefix}out"),
            cfg.d_model,
            cfg.tgt_vocab,
            rng,
        );
        Decoder {
            embed,
            layers,
            out,
            vocab: cfg.tgt_vocab,
            max_len: cfg.max_len + 1,
            dropout: cfg.effective_dropout(),
        }
    }

    /// Hidden states `[sum(len) x d_model]` for teacher-forced target inputs.
    pub fn hidden<S: AsRef<[usize]>>(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        tgt_in: &[S],
        hdr: Option<&EncodedBatch>,
        nmt: &EncodedBatch,
        train: bool,
    ) -> Result<Var> {
        let (ids, lengths) = flatten_batch(tgt_in, self.vocab, self.max_len)?;
        if lengths.len() != nmt.lengths.len() {
            return Err(Error::dim("decoder batch", &lengths, &nmt.lengths));
        }
        if let Some(h) = hdr {
            if h.lengths != nmt.lengths {
                return Err(Error::dim(
                    "second encoder lengths",
                    &h.lengths,
                    &nmt.lengths,
                ));
            }
        }
        let p = if train { self.dropout } else { 0.0 };
        let self_layout = AttentionLayout::from_lengths(&lengths, &lengths, true);
        let cross_layout = AttentionLayout::from_lengths(&lengths, &nmt.lengths, false);
        let x = self.embed.forward(g, ps, &ids, &lengths)?;
        let mut x = g.dropout(x, p);
        for layer in &self.layers {
            let a = layer.self_attn.forward(g, ps, x, x, &self_layout)?;
            let a = g.dropout(a, p);
            let y = g.add(x, a)?;
            let s = layer.ln_self.forward(g, ps, y)?;
            x = layer.cross.forward(
                g,
                ps,
                s,
                hdr.map(|h| h.states),
                nmt.states,
                &cross_layout,
                p,
            )?;
        }
        Ok(x)
    }

    /// Next-token logits `[sum(len) x tgt_vocab]`.
    pub fn logits<S: AsRef<[usize]>>(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        tgt_in: &[S],
        hdr: Option<&EncodedBatch>,
        nmt: &EncodedBatch,
        train: bool,
    ) -> Result<Var> {
        let h = self.hidden(g, ps, tgt_in, hdr, nmt, train)?;
        self.out.forward(g, ps, h)
    }
}
