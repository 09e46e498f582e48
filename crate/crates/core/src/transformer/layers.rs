use rand::Rng;

use crate::backbone::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Sine on even dimensions, cosine on odd ones, wavelength base 10000.
pub fn sinusoidal_positions(max_len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0f32; max_len * d_model];
    for pos in 0..max_len {
        for i in (0..d_model).step_by(2) {
            let rate = 10000f64.powf(-(i as f64) / d_model as f64);
            let angle = pos as f64 * rate;
            data[pos * d_model + i] = angle.sin() as f32;
            if i + 1 < d_model {
                data[pos * d_model + i + 1] = angle.cos() as f32;
            }
        }
    }
    Tensor::new(&[max_len, d_model], data).expect("positive sizes")
}

/// `x W + b` with `W` stored as `[in x out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / (d_in + d_out) as f32).sqrt();
        Linear {
            w: store.add(
                format!("{name}.w"),
                Tensor::uniform(&[d_in, d_out], bound, rng),
            ),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[d_out])),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f32,
    pub identity: bool,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, eps: f32, identity: bool) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
            eps,
            identity,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        if self.identity {
            return Ok(x);
        }
        let gm = g.param(ps, self.gamma);
        let bt = g.param(ps, self.beta);
        g.layer_norm(x, gm, bt, self.eps)
    }
}

/// Position-wise `W2 relu(W1 x)`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
    pub identity: bool,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        d_ff: usize,
        identity: bool,
        rng: &mut impl Rng,
    ) -> Self {
        FeedForward {
            l1: Linear::new(store, &format!("{name}.l1"), d_model, d_ff, rng),
            l2: Linear::new(store, &format!("{name}.l2"), d_ff, d_model, rng),
            identity,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, dropout: f32) -> Result<Var> {
        if self.identity {
            return Ok(x);
        }
        let h = self.l1.forward(g, ps, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, dropout);
        self.l2.forward(g, ps, h)
    }
}

/// Token embedding scaled by `sqrt(d_model)` plus fixed sinusoidal positions.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub d_model: usize,
    pub max_len: usize,
    positions: Tensor,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        d_model: usize,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (3.0 / d_model as f32).sqrt();
        Embedding {
            table: store.add(
                format!("{name}.table"),
                Tensor::uniform(&[vocab, d_model], bound, rng),
            ),
            d_model,
            max_len,
            positions: sinusoidal_positions(max_len, d_model),
        }
    }

    /// Embeds a flattened batch; `lengths` gives each sequence's length so
    /// positions restart at 0 for every sequence.
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        ids: &[usize],
        lengths: &[usize],
    ) -> Result<Var> {
        let table = g.param(ps, self.table);
        let e = g.gather_rows(table, ids)?;
        let e = g.scale(e, (self.d_model as f32).sqrt());
        let mut pos = Vec::with_capacity(ids.len() * self.d_model);
        for &len in lengths {
            for p in 0..len {
                pos.extend_from_slice(self.positions.row(p));
            }
        }
        let pos = g.constant(Tensor::new(&[ids.len(), self.d_model], pos)?);
        g.add(e, pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_table() {
        let t = sinusoidal_positions(8, 6);
        for i in 0..6 {
            let expected = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(t.row(0)[i], expected);
        }
        assert!((t.row(1)[0] - 1f32.sin()).abs() < 1e-6);
        assert!((t.row(1)[0] - 0.8415).abs() < 1e-4);
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(t.bit_eq(&sinusoidal_positions(8, 6)));
    }
}
