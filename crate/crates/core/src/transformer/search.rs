//! Greedy and beam-search decoding over a next-token scoring function.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::vocab::{BOS, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Strategy {
    #[default]
    Greedy,
    Beam(usize),
}

impl FromStr for Strategy {
    type Err = Error;

    /// `greedy`, `beam` (width 4) or `beam:<width>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "beam" => Ok(Strategy::Beam(4)),
            _ => s
                .strip_prefix("beam:")
                .and_then(|w| w.parse().ok())
                .filter(|&w: &usize| w > 0)
                .map(Strategy::Beam)
                .ok_or_else(|| Error::Config(format!("bad decoding strategy {s:?}"))),
        }
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Decode up to `max_len` tokens. `next` maps a prefix (starting with BOS)
/// to logits for the following token. Output excludes BOS and EOS.
pub fn decode<F>(mut next: F, max_len: usize, strategy: Strategy) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<Vec<f32>>,
{
    match strategy {
        Strategy::Greedy => {
            let mut prefix = vec![BOS];
            while prefix.len() <= max_len {
                let tok = argmax(&next(&prefix)?);
                if tok == EOS {
                    break;
                }
                prefix.push(tok);
            }
            Ok(prefix[1..].to_vec())
        }
        Strategy::Beam(width) => beam(next, max_len, width.max(1)),
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    logp: f32,
}

impl Hyp {
    /// Length-normalized score; the length counts generated tokens plus EOS.
    fn score(&self, finished: bool) -> f32 {
        let len = self.tokens.len() - 1 + usize::from(finished);
        self.logp / len.max(1) as f32
    }
}

fn beam<F>(mut next: F, max_len: usize, width: usize) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<Vec<f32>>,
{
    let mut alive = vec![Hyp {
        tokens: vec![BOS],
        logp: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    while !alive.is_empty() {
        let mut cands: Vec<(Hyp, bool)> = Vec::new();
        for h in &alive {
            let logits = next(&h.tokens)?;
            let lp = log_softmax(&logits);
            let mut order: Vec<usize> = (0..lp.len()).collect();
            // Stable sort on raw logits keeps lower ids first among ties, as argmax does.
            order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
            for &tok in order.iter().take(width) {
                let mut tokens = h.tokens.clone();
                let done = tok == EOS;
                if !done {
                    tokens.push(tok);
                }
                cands.push((
                    Hyp {
                        tokens,
                        logp: h.logp + lp[tok],
                    },
                    done,
                ));
            }
        }
        cands.sort_by(|a, b| b.0.logp.total_cmp(&a.0.logp));
        alive.clear();
        for (h, done) in cands.into_iter().take(width) {
            if done || h.tokens.len() > max_len {
                finished.push(h);
            } else {
                alive.push(h);
            }
        }
        if finished.len() >= width {
            break;
        }
    }
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| {
            a.score(true)
                .total_cmp(&b.score(true))
                .then_with(|| j.cmp(i))
        })
        .map(|(_, h)| h.tokens[1..].to_vec())
        .unwrap_or_default();
    Ok(best)
}
