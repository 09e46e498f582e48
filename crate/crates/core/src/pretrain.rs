//! Two-stage pre-training of the disambiguation encoder: sentence-level
//! inference classification over sum-pooled states, then word-level cosine
//! alignment of homograph states that share a synset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{
    cosine_similarity, Graph, OptimizerState, ParamStore, Tensor, Var, WarmupSchedule,
};
use crate::data::{NliExample, SynsetPair, Vocab};
use crate::error::{Error, Result};
use crate::transformer::{Encoder, Linear, ModelConfig};

pub const ENCODER_PREFIX: &str = "enc.";
pub const HEAD_PREFIX: &str = "sr.";

/// Three-way classifier over the pair feature.
#[derive(Debug, Clone)]
pub struct SrHead {
    pub linear: Linear,
    /// Append `[h_A ; h_B]` to `|h_A - h_B|`.
    pub concat: bool,
}

/// An encoder with its sentence-pair head and source vocabulary.
#[derive(Debug, Clone)]
pub struct HdrModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub head: SrHead,
}

impl HdrModel {
    pub fn new(mut config: ModelConfig, vocab: Vocab, concat: bool, seed: u64) -> Result<Self> {
        config.src_vocab = vocab.len();
        if config.tgt_vocab == 0 {
            config.tgt_vocab = 1;
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, ENCODER_PREFIX, &config, &mut rng);
        let width = if concat {
            3 * config.d_model
        } else {
            config.d_model
        };
        let linear = Linear::new(
            &mut store,
            &format!("{HEAD_PREFIX}head"),
            width,
            3,
            &mut rng,
        );
        Ok(HdrModel {
            config,
            store,
            vocab,
            encoder,
            head: SrHead { linear, concat },
        })
    }

    pub fn encode_ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }
}

/// Sum of the rows of a `[T x d]` state matrix.
pub fn sum_pool(states: &Tensor) -> Result<Vec<f32>> {
    if states.rank() != 2 {
        return Err(Error::dim("sum_pool", states.shape(), &[0, 0]));
    }
    let d = states.cols();
    let mut out = vec![0.0; d];
    for r in 0..states.rows() {
        for (o, v) in out.iter_mut().zip(states.row(r)) {
            *o += v;
        }
    }
    Ok(out)
}

/// Logits `[n x 3]` for premise/hypothesis batches.
pub fn sr_logits<S: AsRef<[usize]>>(
    g: &mut Graph,
    model: &HdrModel,
    premises: &[S],
    hypotheses: &[S],
    train: bool,
) -> Result<Var> {
    let n = premises.len();
    if n != hypotheses.len() {
        return Err(Error::Alignment {
            left: n,
            right: hypotheses.len(),
        });
    }
    let batch: Vec<&[usize]> = premises
        .iter()
        .chain(hypotheses)
        .map(|s| s.as_ref())
        .collect();
    let enc = model.encoder.forward(g, &model.store, &batch, train)?;
    let segments: Vec<(usize, usize)> = enc
        .offsets()
        .into_iter()
        .zip(enc.lengths.iter().copied())
        .collect();
    let pooled = g.segment_sum(enc.states, &segments)?;
    let ha = g.gather_rows(pooled, &(0..n).collect::<Vec<_>>())?;
    let hb = g.gather_rows(pooled, &(n..2 * n).collect::<Vec<_>>())?;
    let diff = g.sub(ha, hb)?;
    let mut feature = g.abs(diff);
    if model.head.concat {
        let both = g.concat_cols(ha, hb)?;
        feature = g.concat_cols(feature, both)?;
    }
    model.head.linear.forward(g, &model.store, feature)
}

/// Logits and cross-entropy of one example.
pub fn sr_forward(ex: &NliExample, model: &HdrModel) -> Result<([f32; 3], f32)> {
    let a = model.encode_ids(&ex.premise);
    let b = model.encode_ids(&ex.hypothesis);
    let mut g = Graph::inference();
    let logits = sr_logits(&mut g, model, &[a], &[b], false)?;
    let loss = g.cross_entropy(logits, &[ex.label.index()], 0.0)?;
    let l = g.value(logits).data();
    Ok(([l[0], l[1], l[2]], g.value(loss).data()[0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub patience: usize,
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for SrOptions {
    fn default() -> Self {
        SrOptions {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            patience: 3,
            heldout_fraction: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub heldout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrReport {
    pub history: Vec<SrEpoch>,
    pub best_epoch: usize,
    pub best_heldout_accuracy: f64,
    pub train_size: usize,
    pub heldout_size: usize,
}

type Encoded = (Vec<usize>, Vec<usize>, usize);

fn sr_eval(model: &HdrModel, data: &[Encoded], batch_size: usize) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for chunk in data.chunks(batch_size.max(1)) {
        let a: Vec<&[usize]> = chunk.iter().map(|e| e.0.as_slice()).collect();
        let b: Vec<&[usize]> = chunk.iter().map(|e| e.1.as_slice()).collect();
        let y: Vec<usize> = chunk.iter().map(|e| e.2).collect();
        let mut g = Graph::inference();
        let logits = sr_logits(&mut g, model, &a, &b, false)?;
        let l = g.cross_entropy(logits, &y, 0.0)?;
        loss += g.value(l).data()[0] as f64 * chunk.len() as f64;
        let t = g.value(logits);
        correct += (0..chunk.len())
            .filter(|&r| crate::transformer::search::argmax(t.row(r)) == y[r])
            .count();
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Split `n` indices into (train, held-out) with a seeded shuffle.
pub fn split_indices(n: usize, heldout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let h = ((n as f64 * heldout_fraction).round() as usize).min(n.saturating_sub(1));
    let held = idx[..h].to_vec();
    (idx[h..].to_vec(), held)
}

/// Train encoder and head on inference pairs with a seeded 90/10 split and
/// early stopping on held-out loss; the best weights are kept.
pub fn sr_train(
    model: &mut HdrModel,
    corpus: &[NliExample],
    opts: &SrOptions,
    mut on_epoch: impl FnMut(&SrEpoch),
) -> Result<SrReport> {
    if corpus.is_empty() {
        return Err(Error::Data("empty NLI corpus".into()));
    }
    let max = model.config.max_len;
    let encoded: Vec<Encoded> = corpus
        .iter()
        .map(|e| {
            let (a, b) = (
                model.encode_ids(&e.premise),
                model.encode_ids(&e.hypothesis),
            );
            if a.len() > max || b.len() > max {
                return Err(Error::Length {
                    len: a.len().max(b.len()),
                    max_len: max,
                });
            }
            Ok((a, b, e.label.index()))
        })
        .collect::<Result<_>>()?;
    let (train_idx, held_idx) = split_indices(encoded.len(), opts.heldout_fraction, opts.seed);
    let held: Vec<Encoded> = held_idx.iter().map(|&i| encoded[i].clone()).collect();
    let mut train: Vec<Encoded> = train_idx.iter().map(|&i| encoded[i].clone()).collect();
    let monitor = if held.is_empty() {
        train.clone()
    } else {
        held.clone()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut opt = OptimizerState::new(&model.store, WarmupSchedule::constant(opts.lr));
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, f64, Vec<Tensor>)> = None;
    let mut bad = 0;
    let mut step = 0u64;
    for epoch in 1..=opts.epochs {
        train.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0f64, 0usize);
        for chunk in train.chunks(opts.batch_size.max(1)) {
            let a: Vec<&[usize]> = chunk.iter().map(|e| e.0.as_slice()).collect();
            let b: Vec<&[usize]> = chunk.iter().map(|e| e.1.as_slice()).collect();
            let y: Vec<usize> = chunk.iter().map(|e| e.2).collect();
            let mut g = Graph::training(
                opts.seed
                    .wrapping_mul(0x2545_F491_4F6C_DD1D)
                    .wrapping_add(step),
            );
            let logits = sr_logits(&mut g, model, &a, &b, true)?;
            let loss = g.cross_entropy(logits, &y, 0.0)?;
            loss_sum += g.value(loss).data()[0] as f64;
            batches += 1;
            let grads = g.backward(loss);
            g.accumulate_into(&grads, &mut model.store);
            opt.step(&mut model.store)?;
            step += 1;
        }
        let (heldout_loss, heldout_accuracy) = sr_eval(model, &monitor, opts.batch_size)?;
        let rec = SrEpoch {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            heldout_loss,
            heldout_accuracy,
        };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|b| heldout_loss < b.1) {
            best = Some((
                epoch,
                heldout_loss,
                heldout_accuracy,
                snapshot(&model.store),
            ));
            bad = 0;
        } else {
            bad += 1;
            if bad >= opts.patience {
                break;
            }
        }
    }
    let (best_epoch, best_heldout_accuracy) = match best {
        Some((e, _, acc, values)) => {
            restore(&mut model.store, values);
            (e, acc)
        }
        None => (0, sr_eval(model, &monitor, opts.batch_size)?.1),
    };
    Ok(SrReport {
        history,
        best_epoch,
        best_heldout_accuracy,
        train_size: train.len(),
        heldout_size: held.len(),
    })
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    for (p, v) in store.iter_mut().zip(values) {
        p.value = v;
    }
}

/// Homograph states `(h_i^o, h_j^e)` of a pair batch, each `[n x d]`.
pub fn pair_states(
    g: &mut Graph,
    encoder: &Encoder,
    ps: &ParamStore,
    vocab: &Vocab,
    pairs: &[&SynsetPair],
    train: bool,
) -> Result<(Var, Var)> {
    let n = pairs.len();
    if n == 0 {
        return Err(Error::Data("empty pair batch".into()));
    }
    let mut batch: Vec<Vec<usize>> = Vec::with_capacity(2 * n);
    for p in pairs {
        if p.i >= p.original.len() || p.j >= p.example.len() {
            return Err(Error::Data(format!(
                "pair positions ({}, {}) out of range for lengths ({}, {})",
                p.i,
                p.j,
                p.original.len(),
                p.example.len()
            )));
        }
        batch.push(vocab.encode(&p.original));
    }
    for p in pairs {
        batch.push(vocab.encode(&p.example));
    }
    let enc = encoder.forward(g, ps, &batch, train)?;
    let off = enc.offsets();
    let rows_o: Vec<usize> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| off[k] + p.i)
        .collect();
    let rows_e: Vec<usize> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| off[n + k] + p.j)
        .collect();
    let ho = g.gather_rows(enc.states, &rows_o)?;
    let he = g.gather_rows(enc.states, &rows_e)?;
    Ok((ho, he))
}

/// Mean cosine distance between paired homograph states. Gradients flow
/// through both sentences.
pub fn wdr_loss(
    g: &mut Graph,
    model: &HdrModel,
    pairs: &[&SynsetPair],
    train: bool,
) -> Result<Var> {
    let (ho, he) = pair_states(g, &model.encoder, &model.store, &model.vocab, pairs, train)?;
    let d = g.cosine_distance(ho, he)?;
    Ok(g.mean(d))
}

/// Mean paired cosine distance over `pairs`, evaluated without dropout.
pub fn mean_pair_distance(model: &HdrModel, pairs: &[SynsetPair]) -> Result<f64> {
    let mut total = 0.0f64;
    for chunk in pairs.chunks(64) {
        let refs: Vec<&SynsetPair> = chunk.iter().collect();
        let mut g = Graph::inference();
        let l = wdr_loss(&mut g, model, &refs, false)?;
        total += g.value(l).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / pairs.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WdrOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Apply dropout while training.
    pub dropout: bool,
}

impl Default for WdrOptions {
    fn default() -> Self {
        WdrOptions {
            steps: 200,
            batch_size: 16,
            lr: 1e-3,
            seed: 1,
            dropout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WdrReport {
    pub losses: Vec<f32>,
    pub initial_distance: f64,
    pub final_distance: f64,
}

/// Minimize the paired cosine distance for `opts.steps` steps, cycling over
/// seeded shuffles of `pairs`.
pub fn wdr_train(
    model: &mut HdrModel,
    pairs: &[SynsetPair],
    opts: &WdrOptions,
) -> Result<WdrReport> {
    if pairs.is_empty() {
        return Err(Error::Data("empty disambiguation set".into()));
    }
    let initial_distance = mean_pair_distance(model, pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // The sentence head takes no part in this stage.
    let head_frozen: Vec<bool> = model.store.iter().map(|(_, p)| p.frozen).collect();
    model.store.set_frozen_prefix(HEAD_PREFIX, true);
    let mut opt = OptimizerState::new(&model.store, WarmupSchedule::constant(opts.lr));
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(opts.steps);
    let bs = opts.batch_size.max(1);
    for step in 0..opts.steps {
        if order.len() < bs.min(pairs.len()) {
            let mut fresh: Vec<usize> = (0..pairs.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let take: Vec<usize> = order.drain(..bs.min(pairs.len())).collect();
        let batch: Vec<&SynsetPair> = take.iter().map(|&i| &pairs[i]).collect();
        let mut g = if opts.dropout {
            Graph::training(
                opts.seed
                    .wrapping_mul(0x5851_F42D_4C95_7F2D)
                    .wrapping_add(step as u64),
            )
        } else {
            Graph::new()
        };
        let loss = wdr_loss(&mut g, model, &batch, opts.dropout)?;
        losses.push(g.value(loss).data()[0]);
        let grads = g.backward(loss);
        g.accumulate_into(&grads, &mut model.store);
        opt.step(&mut model.store)?;
    }
    for (p, f) in model.store.iter_mut().zip(head_frozen) {
        p.frozen = f;
    }
    Ok(WdrReport {
        losses,
        initial_distance,
        final_distance: mean_pair_distance(model, pairs)?,
    })
}

/// Mean cosine similarity of homograph states within and across synsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SenseSeparation {
    pub within: f64,
    pub cross: f64,
}

/// `occurrences` are `(sentence, index, synset_id)`; cross-sense pairs are
/// restricted to occurrences of the same surface word.
pub fn sense_separation(
    encoder: &Encoder,
    ps: &ParamStore,
    vocab: &Vocab,
    occurrences: &[(Vec<String>, usize, String)],
) -> Result<SenseSeparation> {
    let ids: Vec<Vec<usize>> = occurrences.iter().map(|o| vocab.encode(&o.0)).collect();
    if ids.is_empty() {
        return Err(Error::Data("no occurrences".into()));
    }
    let outs = encoder.encode_many(ps, &ids)?;
    let states: Vec<&[f32]> = outs
        .iter()
        .zip(occurrences)
        .map(|(o, occ)| o.states.row(occ.1))
        .collect();
    let (mut w, mut nw, mut c, mut nc) = (0.0f64, 0usize, 0.0f64, 0usize);
    for a in 0..occurrences.len() {
        for b in a + 1..occurrences.len() {
            let (oa, ob) = (&occurrences[a], &occurrences[b]);
            if oa.0[oa.1].to_lowercase() != ob.0[ob.1].to_lowercase() {
                continue;
            }
            let s = cosine_similarity(states[a], states[b])? as f64;
            if oa.2 == ob.2 {
                w += s;
                nw += 1;
            } else {
                c += s;
                nc += 1;
            }
        }
    }
    Ok(SenseSeparation {
        within: w / nw.max(1) as f64,
        cross: c / nc.max(1) as f64,
    })
}

/// Mean cosine similarity between states of different tokens across the
/// given sentences. Values near 1 indicate representation collapse.
pub fn collapse_diagnostic(
    encoder: &Encoder,
    ps: &ParamStore,
    vocab: &Vocab,
    sentences: &[Vec<String>],
) -> Result<f64> {
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s)).collect();
    if ids.is_empty() {
        return Err(Error::Data("no sentences".into()));
    }
    let outs = encoder.encode_many(ps, &ids)?;
    let mut rows: Vec<(usize, usize, &[f32])> = Vec::new();
    for (k, o) in outs.iter().enumerate() {
        for (t, &id) in o.token_ids.iter().enumerate() {
            rows.push((k, id, o.states.row(t)));
        }
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            if rows[a].0 != rows[b].0 && rows[a].1 != rows[b].1 {
                sum += cosine_similarity(rows[a].2, rows[b].2)? as f64;
                n += 1;
            }
        }
    }
    Ok(sum / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tokenize, NliLabel};

    fn model(concat: bool) -> HdrModel {
        let corpus = vec![tokenize("a b c d e f")];
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            d_ff: 16,
            max_len: 10,
            ..Default::default()
        };
        HdrModel::new(cfg, Vocab::build(&corpus, 1, None), concat, 5).unwrap()
    }

    #[test]
    fn pooling() {
        let t = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(sum_pool(&t).unwrap(), vec![4.0, 6.0]);
        let t = Tensor::from_rows(&[&[3.0, 4.0], &[1.0, 2.0]]);
        assert_eq!(sum_pool(&t).unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn symmetric_logits() {
        let m = model(false);
        let ab = NliExample {
            premise: tokenize("a b c"),
            hypothesis: tokenize("d e"),
            label: NliLabel::Neutral,
        };
        let ba = NliExample {
            premise: ab.hypothesis.clone(),
            hypothesis: ab.premise.clone(),
            label: NliLabel::Neutral,
        };
        let (l1, _) = sr_forward(&ab, &m).unwrap();
        let (l2, _) = sr_forward(&ba, &m).unwrap();
        assert_eq!(l1.map(f32::to_bits), l2.map(f32::to_bits));
    }

    #[test]
    fn identical_sentences_give_bias_logits() {
        let m = model(false);
        let ex = NliExample {
            premise: tokenize("a b"),
            hypothesis: tokenize("a b"),
            label: NliLabel::Entailment,
        };
        let (l, _) = sr_forward(&ex, &m).unwrap();
        let b = m.store.value(m.head.linear.b).data();
        assert_eq!(&l[..], b);
    }

    #[test]
    fn self_pair_has_zero_loss() {
        let m = model(false);
        let p = SynsetPair {
            original: tokenize("a b c"),
            example: tokenize("a b c"),
            i: 1,
            j: 1,
            synset_id: "b.n.01".into(),
            sentence_id: 0,
            example_id: 0,
        };
        let mut g = Graph::inference();
        let l = wdr_loss(&mut g, &m, &[&p], false).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-6);
    }

    #[test]
    fn zero_steps_leave_encoder_unchanged() {
        let mut m = model(false);
        let before = m.store.clone();
        let p = SynsetPair {
            original: tokenize("a b"),
            example: tokenize("c b"),
            i: 1,
            j: 1,
            synset_id: "b".into(),
            sentence_id: 0,
            example_id: 0,
        };
        let r = wdr_train(
            &mut m,
            &[p],
            &WdrOptions {
                steps: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.losses.is_empty());
        assert!(m.store.bit_eq(&before));
    }

    #[test]
    fn split_is_deterministic() {
        let (a, b) = split_indices(300, 0.1, 4);
        assert_eq!((a.len(), b.len()), (270, 30));
        assert_eq!(split_indices(300, 0.1, 4), (a, b));
    }
}
