//! Encoder-decoder translation model with an optional second encoder, its
//! training loop, and decoding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Graph, OptimizerState, ParamStore, Tensor, Var, WarmupSchedule};
use crate::data::{batch_by_tokens, tokenize, SentencePair, Vocab, BOS, EOS};
use crate::error::{Error, Result};
use crate::eval::bleu;
use crate::transformer::search::{self, Strategy};
use crate::transformer::{
    Decoder, EncodedBatch, Encoder, EncoderOutput, ModelConfig, SecondEncoderSource,
};

pub const NMT_PREFIX: &str = "enc.";
pub const HDR_PREFIX: &str = "hdr.";
pub const COPY_PREFIX: &str = "enc2.";
pub const DEC_PREFIX: &str = "dec.";

#[derive(Debug, Clone)]
pub struct NmtModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub encoder: Encoder,
    /// Second encoder read by the fusion blocks; absent for the baseline.
    pub second: Option<Encoder>,
    pub decoder: Decoder,
}

impl NmtModel {
    /// Build a freshly initialized model. Vocabulary sizes in `config` are
    /// overwritten by the given vocabularies. A frozen second encoder lives
    /// under `hdr.`; the `nmt_copy` source adds a trainable `enc2.` encoder
    /// initialized from the primary one.
    pub fn new(
        mut config: ModelConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        seed: u64,
    ) -> Result<Self> {
        config.src_vocab = src_vocab.len();
        config.tgt_vocab = tgt_vocab.len();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, NMT_PREFIX, &config, &mut rng);
        let second = if config.fusion_scheme.uses_second_encoder() {
            let prefix = match config.second_encoder_source {
                SecondEncoderSource::NmtCopy => COPY_PREFIX,
                _ => HDR_PREFIX,
            };
            Some(Encoder::new(&mut store, prefix, &config, &mut rng))
        } else {
            None
        };
        let decoder = Decoder::new(&mut store, DEC_PREFIX, &config, &mut rng);
        if second.is_some() {
            match config.second_encoder_source {
                SecondEncoderSource::NmtCopy => {
                    let src = store.clone();
                    store.load_matching(&src, NMT_PREFIX, COPY_PREFIX)?;
                }
                _ => {
                    store.set_frozen_prefix(HDR_PREFIX, true);
                }
            }
        }
        Ok(NmtModel {
            config,
            store,
            src_vocab,
            tgt_vocab,
            encoder,
            second,
            decoder,
        })
    }

    /// Copy a pre-trained encoder stored under `src_prefix` of `hdr` into the
    /// frozen second encoder. Every second-encoder parameter must be found.
    pub fn attach_hdr(&mut self, hdr: &ParamStore, src_prefix: &str) -> Result<usize> {
        let Some(second) = &self.second else {
            return Err(Error::Config(
                "the baseline scheme has no second encoder".into(),
            ));
        };
        if second.prefix != HDR_PREFIX {
            return Err(Error::Config(format!(
                "second encoder source {} does not take a pre-trained encoder",
                self.config.second_encoder_source
            )));
        }
        let expected = self
            .store
            .iter()
            .filter(|(_, p)| p.name.starts_with(HDR_PREFIX))
            .count();
        let copied = self.store.load_matching(hdr, src_prefix, HDR_PREFIX)?;
        if copied != expected {
            return Err(Error::Checkpoint(format!(
                "pre-trained encoder provides {copied} of {expected} parameters"
            )));
        }
        Ok(copied)
    }

    /// True when every `hdr.` parameter equals `src_prefix`-named values of
    /// `other` bit for bit.
    pub fn hdr_matches(&self, other: &ParamStore, src_prefix: &str) -> bool {
        self.store
            .iter()
            .filter_map(|(_, p)| p.name.strip_prefix(HDR_PREFIX).map(|rest| (p, rest)))
            .all(|(p, rest)| {
                other
                    .by_name(&format!("{src_prefix}{rest}"))
                    .is_some_and(|q| q.value.bit_eq(&p.value))
            })
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.store.trainable_scalars()
    }

    fn encode_batch<S: AsRef<[usize]>>(
        &self,
        g: &mut Graph,
        src: &[S],
        train: bool,
    ) -> Result<(Option<EncodedBatch>, EncodedBatch)> {
        let nmt = self.encoder.forward(g, &self.store, src, train)?;
        let second = match &self.second {
            Some(e) => {
                let trainable = e.prefix != HDR_PREFIX;
                Some(e.forward(g, &self.store, src, train && trainable)?)
            }
            None => None,
        };
        Ok((second, nmt))
    }

    /// Mean token cross-entropy of `tgt` given `src` under teacher forcing.
    pub fn loss<S: AsRef<[usize]>, T: AsRef<[usize]>>(
        &self,
        g: &mut Graph,
        src: &[S],
        tgt: &[T],
        smoothing: f32,
        train: bool,
    ) -> Result<Var> {
        if src.len() != tgt.len() {
            return Err(Error::Alignment {
                left: src.len(),
                right: tgt.len(),
            });
        }
        let (second, nmt) = self.encode_batch(g, src, train)?;
        let mut tgt_in = Vec::with_capacity(tgt.len());
        let mut tgt_out = Vec::new();
        for t in tgt {
            let t = t.as_ref();
            tgt_in.push(
                std::iter::once(BOS)
                    .chain(t.iter().copied())
                    .collect::<Vec<_>>(),
            );
            tgt_out.extend(t.iter().copied().chain(std::iter::once(EOS)));
        }
        let logits = self
            .decoder
            .logits(g, &self.store, &tgt_in, second.as_ref(), &nmt, train)?;
        g.cross_entropy(logits, &tgt_out, smoothing)
    }

    /// Encoder outputs for one source sentence: `(nmt, second)`.
    pub fn encode(&self, src: &[usize]) -> Result<(EncoderOutput, Option<EncoderOutput>)> {
        let nmt = self.encoder.encode(&self.store, src)?;
        let second = match &self.second {
            Some(e) => Some(e.encode(&self.store, src)?),
            None => None,
        };
        Ok((nmt, second))
    }

    /// Logits over the target vocabulary for the token following `prefix`.
    /// `enc_b` must be present exactly when the scheme uses two encoders.
    pub fn decode_step(
        &self,
        prefix: &[usize],
        enc_a: &EncoderOutput,
        enc_b: Option<&EncoderOutput>,
    ) -> Result<Vec<f32>> {
        if enc_b.is_some() != self.second.is_some() {
            return Err(Error::Config(format!(
                "scheme {} expects {} encoder output(s)",
                self.config.fusion_scheme,
                1 + usize::from(self.second.is_some())
            )));
        }
        let mut g = Graph::inference();
        let batch = |g: &mut Graph, e: &EncoderOutput| EncodedBatch {
            states: g.constant(e.states.clone()),
            lengths: vec![e.states.rows()],
        };
        let nmt = batch(&mut g, enc_a);
        let second = enc_b.map(|e| batch(&mut g, e));
        let logits =
            self.decoder
                .logits(&mut g, &self.store, &[prefix], second.as_ref(), &nmt, false)?;
        let t = g.value(logits);
        Ok(t.row(t.rows() - 1).to_vec())
    }

    /// Decode a source id sequence; the result excludes BOS and EOS.
    pub fn decode_sequence(&self, src: &[usize], strategy: Strategy) -> Result<Vec<usize>> {
        let (nmt, second) = self.encode(src)?;
        search::decode(
            |prefix| self.decode_step(prefix, &nmt, second.as_ref()),
            self.config.max_len,
            strategy,
        )
    }

    /// Tokenize, decode, and join target tokens with spaces.
    pub fn translate<S: AsRef<str>>(
        &self,
        sentences: &[S],
        strategy: Strategy,
    ) -> Result<Vec<String>> {
        sentences
            .iter()
            .map(|s| {
                let ids = self.src_vocab.encode(&tokenize(s.as_ref()));
                let out = self.decode_sequence(&ids, strategy)?;
                Ok(self.tgt_vocab.decode(&out).join(" "))
            })
            .collect()
    }

    /// Source and target ids of a tokenized pair.
    pub fn encode_pair(&self, pair: &SentencePair) -> (Vec<usize>, Vec<usize>) {
        (
            self.src_vocab.encode(&pair.source),
            self.tgt_vocab.encode(&pair.target),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub max_epochs: usize,
    pub max_tokens: usize,
    pub peak_lr: f32,
    pub warmup_steps: usize,
    pub label_smoothing: f32,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Held-out sentences decoded for BLEU each epoch (0 disables).
    pub bleu_sentences: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_steps: None,
            max_epochs: 50,
            max_tokens: 1024,
            peak_lr: 1e-3,
            warmup_steps: 400,
            label_smoothing: 0.1,
            patience: 3,
            bleu_sentences: 200,
            seed: 1,
        }
    }
}

/// One record per epoch; epoch 0 describes the model before training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: Option<f64>,
    pub heldout_loss: f64,
    pub heldout_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_heldout_loss: f64,
    pub early_stopped: bool,
    /// Pairs dropped for exceeding `max_len`.
    pub filtered: usize,
}

type IdPair = (Vec<usize>, Vec<usize>);

fn encode_corpus(model: &NmtModel, pairs: &[SentencePair]) -> (Vec<IdPair>, usize) {
    let max = model.config.max_len;
    let mut kept = Vec::with_capacity(pairs.len());
    let mut filtered = 0;
    for p in pairs {
        if p.source.len() > max || p.target.len() > max || p.source.is_empty() {
            filtered += 1;
        } else {
            kept.push(model.encode_pair(p));
        }
    }
    (kept, filtered)
}

fn batches(data: &[IdPair], max_tokens: usize) -> Result<Vec<Vec<usize>>> {
    let sizes: Vec<usize> = data.iter().map(|(s, t)| s.len() + t.len() + 1).collect();
    batch_by_tokens(&sizes, max_tokens)
}

/// Token-weighted held-out cross-entropy without smoothing or dropout.
pub fn heldout_loss(model: &NmtModel, data: &[IdPair], max_tokens: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("empty held-out set".into()));
    }
    let mut total = 0.0f64;
    let mut tokens = 0usize;
    for b in batches(data, max_tokens)? {
        let src: Vec<&[usize]> = b.iter().map(|&i| data[i].0.as_slice()).collect();
        let tgt: Vec<&[usize]> = b.iter().map(|&i| data[i].1.as_slice()).collect();
        let n: usize = tgt.iter().map(|t| t.len() + 1).sum();
        let mut g = Graph::inference();
        let l = model.loss(&mut g, &src, &tgt, 0.0, false)?;
        total += g.value(l).data()[0] as f64 * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Greedy-decoding BLEU over the first `limit` pairs.
pub fn heldout_bleu(model: &NmtModel, pairs: &[SentencePair], limit: usize) -> Result<f64> {
    let pairs = &pairs[..limit.min(pairs.len())];
    let mut hyps = Vec::with_capacity(pairs.len());
    for p in pairs {
        let ids = model.src_vocab.encode(&p.source);
        hyps.push(
            model
                .tgt_vocab
                .decode(&model.decode_sequence(&ids, Strategy::Greedy)?)
                .join(" "),
        );
    }
    let refs: Vec<String> = pairs.iter().map(|p| p.target.join(" ")).collect();
    Ok(bleu(&hyps, &refs)?.score)
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    for (p, v) in store.iter_mut().zip(values) {
        p.value = v;
    }
}

/// Train with label-smoothed cross-entropy, token-count batches and early
/// stopping on held-out loss; the best weights are restored at the end.
/// `on_epoch` sees every metrics record as it is produced.
pub fn train_nmt(
    model: &mut NmtModel,
    train: &[SentencePair],
    heldout: &[SentencePair],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    let (train_ids, f1) = encode_corpus(model, train);
    let (held_ids, f2) = encode_corpus(model, heldout);
    if train_ids.is_empty() {
        return Err(Error::Data("empty training corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = OptimizerState::new(
        &model.store,
        WarmupSchedule::new(opts.peak_lr, opts.warmup_steps),
    );
    let batch_list = batches(&train_ids, opts.max_tokens)?;
    let bleu_of = |m: &NmtModel| -> Result<Option<f64>> {
        if opts.bleu_sentences == 0 || heldout.is_empty() {
            Ok(None)
        } else {
            heldout_bleu(m, heldout, opts.bleu_sentences).map(Some)
        }
    };

    let initial = EpochMetrics {
        epoch: 0,
        step: 0,
        train_loss: None,
        heldout_loss: heldout_loss(model, &held_ids, opts.max_tokens)?,
        heldout_bleu: None,
    };
    on_epoch(&initial);
    let mut best = (0, initial.heldout_loss, snapshot(&model.store));
    let mut epochs = vec![initial];
    let mut step = 0;
    let mut bad = 0;
    let mut early_stopped = false;
    let budget = opts.max_steps.unwrap_or(usize::MAX);

    for epoch in 1..=opts.max_epochs {
        if step >= budget {
            break;
        }
        let mut order = batch_list.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n) = (0.0f64, 0usize);
        for b in order {
            if step >= budget {
                break;
            }
            let src: Vec<&[usize]> = b.iter().map(|&i| train_ids[i].0.as_slice()).collect();
            let tgt: Vec<&[usize]> = b.iter().map(|&i| train_ids[i].1.as_slice()).collect();
            let mut g = Graph::training(
                opts.seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(step as u64),
            );
            let loss = model.loss(&mut g, &src, &tgt, opts.label_smoothing, true)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss {value} at step {step}"
                )));
            }
            let grads = g.backward(loss);
            g.accumulate_into(&grads, &mut model.store);
            opt.step(&mut model.store)?;
            loss_sum += value as f64;
            n += 1;
            step += 1;
        }
        let m = EpochMetrics {
            epoch,
            step,
            train_loss: Some(loss_sum / n.max(1) as f64),
            heldout_loss: heldout_loss(model, &held_ids, opts.max_tokens)?,
            heldout_bleu: bleu_of(model)?,
        };
        on_epoch(&m);
        if m.heldout_loss < best.1 {
            best = (epoch, m.heldout_loss, snapshot(&model.store));
            bad = 0;
        } else {
            bad += 1;
        }
        epochs.push(m);
        if bad >= opts.patience {
            early_stopped = true;
            break;
        }
    }
    let (best_epoch, best_heldout_loss, values) = best;
    restore(&mut model.store, values);
    Ok(TrainReport {
        epochs,
        steps: step,
        best_epoch,
        best_heldout_loss,
        early_stopped,
        filtered: f1 + f2,
    })
}
