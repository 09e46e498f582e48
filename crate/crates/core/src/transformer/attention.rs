use rand::Rng;

use super::layers::Linear;
use crate::backbone::{AttentionLayout, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Projected multi-head attention: `Wo . concat_h softmax(Q_h K_h^T / sqrt(d_k)) V_h`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            wk: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            wv: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            wo: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            heads,
            d_model,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        query: Var,
        memory: Var,
        layout: &AttentionLayout,
    ) -> Result<Var> {
        self.forward_with_weights(g, ps, query, memory, layout)
            .map(|(o, _)| o)
    }

    /// Also returns the raw attention node, whose weights can be read back
    /// with [`Graph::attention_weights`].
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        query: Var,
        memory: Var,
        layout: &AttentionLayout,
    ) -> Result<(Var, Var)> {
        for v in [query, memory] {
            let s = g.shape(v);
            if s.len() != 2 || s[1] != self.d_model {
                return Err(Error::dim("multi_head_attention", s, &[self.d_model]));
            }
        }
        let q = self.wq.forward(g, ps, query)?;
        let k = self.wk.forward(g, ps, memory)?;
        let v = self.wv.forward(g, ps, memory)?;
        let att = g.attention(q, k, v, self.heads, layout)?;
        let out = self.wo.forward(g, ps, att)?;
        Ok((out, att))
    }
}
