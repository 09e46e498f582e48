//! Decoder cross-attention blocks that combine an NMT encoder with a second
//! (typically frozen, disambiguation-pretrained) encoder.
//!
//! Every variant receives `s`, the output of the decoder self-attention
//! sub-layer, and returns a tensor of the same shape:
//!
//! * `Baseline`: `s1 = LN(s + Att_N(s))`, `out = LN(s1 + FFN(s1))`
//! * `Add`: `s_H = LN(s + Att_H(s))`, `s_N = LN(s + Att_N(s))`,
//!   `out = LN(FFN_H(s_H) + FFN_N(s_N) + s_H + s_N)`
//! * `Gate`: `s_H`, `s_N` as above, `s' = g s_H + (1 - g) s_N`,
//!   `out = LN(FFN(s') + s_N + s_H)`
//! * `Cascade`: `s1 = LN(s + Att_H(s))`, `s_N = LN(s1 + Att_N(s1))`,
//!   `out = LN(FFN(s_N) + s_N)`
//! * `Selection`: one attention whose per-head keys are `[K_H ; K_N]` and
//!   whose values come from the NMT encoder only, then the baseline
//!   residual/FFN wrap.

use rand::Rng;

use crate::backbone::{AttentionLayout, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::transformer::attention::MultiHeadAttention;
use crate::transformer::config::{FusionScheme, GateMode, ModelConfig};
use crate::transformer::layers::{FeedForward, LayerNorm, Linear};

/// Standalone inputs of one fusion block.
#[derive(Debug, Clone)]
pub struct FusionInputs {
    /// `[T_tgt x d_model]` self-attention output of the decoder.
    pub s: Tensor,
    /// `[T_src x d_model]`, absent for the baseline scheme.
    pub hdr_states: Option<Tensor>,
    /// `[T_src x d_model]`.
    pub nmt_states: Tensor,
}

#[derive(Debug, Clone)]
pub enum Gate {
    Fixed(f32),
    /// Per-position scalar `sigmoid(W [s_H ; s_N] + b)`.
    Sigmoid(Linear),
}

/// Intermediate values of one fusion forward pass.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    pub out: Var,
    pub s_h: Option<Var>,
    pub s_n: Option<Var>,
    /// The tensor fed to the (first) feed-forward block.
    pub ffn_input: Var,
    /// Per-position gate values `[T_tgt x 1]` for a sigmoid gate.
    pub gate: Option<Var>,
    /// Raw attention nodes (weights readable via `Graph::attention_weights`).
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub enum FusionLayer {
    Baseline {
        nmt_att: MultiHeadAttention,
        ln_n: LayerNorm,
        ffn: FeedForward,
        ln_out: LayerNorm,
    },
    Add {
        hdr_att: MultiHeadAttention,
        nmt_att: MultiHeadAttention,
        ln_h: LayerNorm,
        ln_n: LayerNorm,
        ffn_h: FeedForward,
        ffn: FeedForward,
        ln_out: LayerNorm,
    },
    Gate {
        hdr_att: MultiHeadAttention,
        nmt_att: MultiHeadAttention,
        ln_h: LayerNorm,
        ln_n: LayerNorm,
        gate: Gate,
        ffn: FeedForward,
        ln_out: LayerNorm,
    },
    Cascade {
        hdr_att: MultiHeadAttention,
        ln_h: LayerNorm,
        nmt_att: MultiHeadAttention,
        ln_n: LayerNorm,
        ffn: FeedForward,
        ln_out: LayerNorm,
    },
    Selection {
        q: Linear,
        k_h: Linear,
        k_n: Linear,
        v_n: Linear,
        o: Linear,
        heads: usize,
        ln_n: LayerNorm,
        ffn: FeedForward,
        ln_out: LayerNorm,
    },
}

impl FusionLayer {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, h, id) = (cfg.d_model, cfg.n_heads, cfg.identity_mode);
        let eps = cfg.ln_eps;
        let n = |s: &str| format!("{name}.{s}");
        let ln = |store: &mut ParamStore, s: &str| LayerNorm::new(store, &n(s), d, eps, id);
        match cfg.fusion_scheme {
            FusionScheme::Baseline => FusionLayer::Baseline {
                nmt_att: MultiHeadAttention::new(store, &n("cross_n"), d, h, rng),
                ln_n: ln(store, "ln_n"),
                ffn: FeedForward::new(store, &n("ffn"), d, cfg.d_ff, id, rng),
                ln_out: ln(store, "ln_out"),
            },
            FusionScheme::Add => FusionLayer::Add {
                hdr_att: MultiHeadAttention::new(store, &n("cross_h"), d, h, rng),
                nmt_att: MultiHeadAttention::new(store, &n("cross_n"), d, h, rng),
                ln_h: ln(store, "ln_h"),
                ln_n: ln(store, "ln_n"),
                ffn_h: FeedForward::new(store, &n("ffn_h"), d, cfg.d_ff, id, rng),
                ffn: FeedForward::new(store, &n("ffn"), d, cfg.d_ff, id, rng),
                ln_out: ln(store, "ln_out"),
            },
            FusionScheme::Gate => FusionLayer::Gate {
                hdr_att: MultiHeadAttention::new(store, &n("cross_h"), d, h, rng),
                nmt_att: MultiHeadAttention::new(store, &n("cross_n"), d, h, rng),
                ln_h: ln(store, "ln_h"),
                ln_n: ln(store, "ln_n"),
                gate: match cfg.gate_mode {
                    GateMode::Fixed(g) => Gate::Fixed(g),
                    GateMode::Sigmoid => {
                        Gate::Sigmoid(Linear::new(store, &n("gate"), 2 * d, 1, rng))
                    }
                },
                ffn: FeedForward::new(store, &n("ffn"), d, cfg.d_ff, id, rng),
                ln_out: ln(store, "ln_out"),
            },
            FusionScheme::Cascade => FusionLayer::Cascade {
                hdr_att: MultiHeadAttention::new(store, &n("cross_h"), d, h, rng),
                ln_h: ln(store, "ln_h"),
                nmt_att: MultiHeadAttention::new(store, &n("cross_n"), d, h, rng),
                ln_n: ln(store, "ln_n"),
                ffn: FeedForward::new(store, &n("ffn"), d, cfg.d_ff, id, rng),
                ln_out: ln(store, "ln_out"),
            },
            FusionScheme::Selection => FusionLayer::Selection {
                q: Linear::new(store, &n("sel.q"), d, 2 * d, rng),
                k_h: Linear::new(store, &n("sel.k_h"), d, d, rng),
                k_n: Linear::new(store, &n("sel.k_n"), d, d, rng),
                v_n: Linear::new(store, &n("sel.v_n"), d, d, rng),
                o: Linear::new(store, &n("sel.o"), d, d, rng),
                heads: h,
                ln_n: ln(store, "ln_n"),
                ffn: FeedForward::new(store, &n("ffn"), d, cfg.d_ff, id, rng),
                ln_out: ln(store, "ln_out"),
            },
        }
    }

    pub fn scheme(&self) -> FusionScheme {
        match self {
            FusionLayer::Baseline { .. } => FusionScheme::Baseline,
            FusionLayer::Add { .. } => FusionScheme::Add,
            FusionLayer::Gate { .. } => FusionScheme::Gate,
            FusionLayer::Cascade { .. } => FusionScheme::Cascade,
            FusionLayer::Selection { .. } => FusionScheme::Selection,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        s: Var,
        hdr: Option<Var>,
        nmt: Var,
        layout: &AttentionLayout,
        dropout: f32,
    ) -> Result<Var> {
        self.forward_traced(g, ps, s, hdr, nmt, layout, dropout)
            .map(|t| t.out)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward_traced(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        s: Var,
        hdr: Option<Var>,
        nmt: Var,
        layout: &AttentionLayout,
        p: f32,
    ) -> Result<FusionTrace> {
        let need_hdr = || -> Result<Var> {
            hdr.ok_or_else(|| {
                Error::Config(format!("{} fusion needs a second encoder", self.scheme()))
            })
        };
        if let Some(h) = hdr {
            if g.shape(h) != g.shape(nmt) {
                return Err(Error::dim(
                    "fusion encoder states",
                    g.shape(h),
                    g.shape(nmt),
                ));
            }
        }
        // LN(x + dropout(att(x, mem)))
        let residual_att = |g: &mut Graph,
                            att: &MultiHeadAttention,
                            ln: &LayerNorm,
                            x: Var,
                            mem: Var|
         -> Result<(Var, Var)> {
            let (a, raw) = att.forward_with_weights(g, ps, x, mem, layout)?;
            let a = g.dropout(a, p);
            let y = g.add(x, a)?;
            Ok((ln.forward(g, ps, y)?, raw))
        };
        let ffn_drop = |g: &mut Graph, ffn: &FeedForward, x: Var| -> Result<Var> {
            let f = ffn.forward(g, ps, x, p)?;
            Ok(g.dropout(f, p))
        };

        match self {
            FusionLayer::Baseline {
                nmt_att,
                ln_n,
                ffn,
                ln_out,
            } => {
                let (s1, raw) = residual_att(g, nmt_att, ln_n, s, nmt)?;
                let f = ffn_drop(g, ffn, s1)?;
                let y = g.add(s1, f)?;
                let out = ln_out.forward(g, ps, y)?;
                Ok(FusionTrace {
                    out,
                    s_h: None,
                    s_n: Some(s1),
                    ffn_input: s1,
                    gate: None,
                    attention: vec![raw],
                })
            }
            FusionLayer::Add {
                hdr_att,
                nmt_att,
                ln_h,
                ln_n,
                ffn_h,
                ffn,
                ln_out,
            } => {
                let hdr = need_hdr()?;
                let (s_h, rh) = residual_att(g, hdr_att, ln_h, s, hdr)?;
                let (s_n, rn) = residual_att(g, nmt_att, ln_n, s, nmt)?;
                let fh = ffn_drop(g, ffn_h, s_h)?;
                let fn_ = ffn_drop(g, ffn, s_n)?;
                let y = g.add(fh, fn_)?;
                let y = g.add(y, s_h)?;
                let y = g.add(y, s_n)?;
                let out = ln_out.forward(g, ps, y)?;
                Ok(FusionTrace {
                    out,
                    s_h: Some(s_h),
                    s_n: Some(s_n),
                    ffn_input: s_h,
                    gate: None,
                    attention: vec![rh, rn],
                })
            }
            FusionLayer::Gate {
                hdr_att,
                nmt_att,
                ln_h,
                ln_n,
                gate,
                ffn,
                ln_out,
            } => {
                let hdr = need_hdr()?;
                let (s_h, rh) = residual_att(g, hdr_att, ln_h, s, hdr)?;
                let (s_n, rn) = residual_att(g, nmt_att, ln_n, s, nmt)?;
                let (mixed, gate_var) = match gate {
                    Gate::Fixed(w) => {
                        let a = g.scale(s_h, *w);
                        let b = g.scale(s_n, 1.0 - *w);
                        (g.add(a, b)?, None)
                    }
                    Gate::Sigmoid(lin) => {
                        let cat = g.concat_cols(s_h, s_n)?;
                        let z = lin.forward(g, ps, cat)?;
                        let w = g.sigmoid(z);
                        let one_minus = g.affine(w, -1.0, 1.0);
                        let a = g.mul_col(s_h, w)?;
                        let b = g.mul_col(s_n, one_minus)?;
                        (g.add(a, b)?, Some(w))
                    }
                };
                let f = ffn_drop(g, ffn, mixed)?;
                let y = g.add(f, s_n)?;
                let y = g.add(y, s_h)?;
                let out = ln_out.forward(g, ps, y)?;
                Ok(FusionTrace {
                    out,
                    s_h: Some(s_h),
                    s_n: Some(s_n),
                    ffn_input: mixed,
                    gate: gate_var,
                    attention: vec![rh, rn],
                })
            }
            FusionLayer::Cascade {
                hdr_att,
                ln_h,
                nmt_att,
                ln_n,
                ffn,
                ln_out,
            } => {
                let hdr = need_hdr()?;
                let (s1, rh) = residual_att(g, hdr_att, ln_h, s, hdr)?;
                let (s_n, rn) = residual_att(g, nmt_att, ln_n, s1, nmt)?;
                let f = ffn_drop(g, ffn, s_n)?;
                let y = g.add(f, s_n)?;
                let out = ln_out.forward(g, ps, y)?;
                Ok(FusionTrace {
                    out,
                    s_h: Some(s1),
                    s_n: Some(s_n),
                    ffn_input: s_n,
                    gate: None,
                    attention: vec![rh, rn],
                })
            }
            FusionLayer::Selection {
                q,
                k_h,
                k_n,
                v_n,
                o,
                heads,
                ln_n,
                ffn,
                ln_out,
            } => {
                let hdr = need_hdr()?;
                let qv = q.forward(g, ps, s)?;
                let kh = k_h.forward(g, ps, hdr)?;
                let kn = k_n.forward(g, ps, nmt)?;
                let k = g.interleave_heads(kh, kn, *heads)?;
                let v = v_n.forward(g, ps, nmt)?;
                let raw = g.attention(qv, k, v, *heads, layout)?;
                let a = o.forward(g, ps, raw)?;
                let a = g.dropout(a, p);
                let y = g.add(s, a)?;
                let s1 = ln_n.forward(g, ps, y)?;
                let f = ffn_drop(g, ffn, s1)?;
                let y = g.add(s1, f)?;
                let out = ln_out.forward(g, ps, y)?;
                Ok(FusionTrace {
                    out,
                    s_h: None,
                    s_n: Some(s1),
                    ffn_input: s1,
                    gate: None,
                    attention: vec![raw],
                })
            }
        }
    }
}

fn run_standalone(layer: &FusionLayer, ps: &ParamStore, inputs: &FusionInputs) -> Result<Tensor> {
    let mut g = Graph::inference();
    let s = g.constant(inputs.s.clone());
    let hdr = inputs.hdr_states.clone().map(|t| g.constant(t));
    let nmt = g.constant(inputs.nmt_states.clone());
    if let Some(h) = &inputs.hdr_states {
        if h.rows() != inputs.nmt_states.rows() {
            return Err(Error::dim(
                "fusion encoder lengths",
                h.shape(),
                inputs.nmt_states.shape(),
            ));
        }
    }
    let layout = AttentionLayout::single(inputs.s.rows(), inputs.nmt_states.rows(), false);
    let out = layer.forward(&mut g, ps, s, hdr, nmt, &layout, 0.0)?;
    Ok(g.value(out).clone())
}

fn expect_scheme(layer: &FusionLayer, scheme: FusionScheme) -> Result<()> {
    if layer.scheme() != scheme {
        return Err(Error::Config(format!(
            "expected a {scheme} layer, got {}",
            layer.scheme()
        )));
    }
    Ok(())
}

/// One add-fusion block on constant inputs.
pub fn fuse_add(inputs: &FusionInputs, layer: &FusionLayer, ps: &ParamStore) -> Result<Tensor> {
    expect_scheme(layer, FusionScheme::Add)?;
    run_standalone(layer, ps, inputs)
}

pub fn fuse_gate(inputs: &FusionInputs, layer: &FusionLayer, ps: &ParamStore) -> Result<Tensor> {
    expect_scheme(layer, FusionScheme::Gate)?;
    run_standalone(layer, ps, inputs)
}

pub fn fuse_cascade(inputs: &FusionInputs, layer: &FusionLayer, ps: &ParamStore) -> Result<Tensor> {
    expect_scheme(layer, FusionScheme::Cascade)?;
    run_standalone(layer, ps, inputs)
}

pub fn fuse_selection(
    inputs: &FusionInputs,
    layer: &FusionLayer,
    ps: &ParamStore,
) -> Result<Tensor> {
    expect_scheme(layer, FusionScheme::Selection)?;
    run_standalone(layer, ps, inputs)
}
