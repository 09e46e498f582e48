//! End-to-end helpers shared by the command-line tool, examples and tests.

use std::time::Instant;

use serde::Serialize;

use crate::data::{
    generate_synthetic_homograph_corpus, prepare_disambiguation_set, synthetic_nli,
    EvalHomographList, HomographAnnotation, MiniWordNet, NliExample, SentencePair, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{bleu, homograph_prf, BleuReport, DisambiguationReport};
use crate::nmt::{train_nmt, EpochMetrics, NmtModel, TrainOptions, TrainReport};
use crate::pretrain::{
    split_indices, sr_train, wdr_train, HdrModel, SrOptions, SrReport, WdrOptions, WdrReport,
    ENCODER_PREFIX,
};
use crate::transformer::{FusionScheme, ModelConfig, SecondEncoderSource, Strategy};

/// Source vocabulary covering parallel sources, lexicon examples and NLI text.
pub fn source_vocab(
    pairs: &[SentencePair],
    wordnet: Option<&MiniWordNet>,
    nli: &[NliExample],
) -> Vocab {
    let mut sents: Vec<&Vec<String>> = pairs.iter().map(|p| &p.source).collect();
    if let Some(wn) = wordnet {
        sents.extend(wn.iter().flat_map(|(_, s)| s.examples.iter()));
    }
    sents.extend(nli.iter().flat_map(|e| [&e.premise, &e.hypothesis]));
    Vocab::build(sents, 1, None)
}

pub fn target_vocab(pairs: &[SentencePair]) -> Vocab {
    Vocab::build(pairs.iter().map(|p| &p.target), 1, None)
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub sr: Option<SrReport>,
    pub wdr: Option<WdrReport>,
    pub pairs: usize,
    pub skipped_pairs: usize,
}

/// Sentence-level then word-level pre-training of a fresh encoder.
/// Either stage is skipped when its data is empty.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_hdr(
    config: &ModelConfig,
    vocab: Vocab,
    nli: &[NliExample],
    annotations: &[HomographAnnotation],
    wordnet: &MiniWordNet,
    sr: &SrOptions,
    wdr: &WdrOptions,
    seed: u64,
) -> Result<(HdrModel, PretrainReport)> {
    let mut model = HdrModel::new(config.clone(), vocab, false, seed)?;
    let sr_report = if nli.is_empty() {
        None
    } else {
        Some(sr_train(&mut model, nli, sr, |_| {})?)
    };
    let set = prepare_disambiguation_set(annotations, wordnet)?;
    let wdr_report = if set.pairs.is_empty() || wdr.steps == 0 {
        None
    } else {
        Some(wdr_train(&mut model, &set.pairs, wdr)?)
    };
    Ok((
        model,
        PretrainReport {
            sr: sr_report,
            wdr: wdr_report,
            pairs: set.pairs.len(),
            skipped_pairs: set.skipped,
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct TranslationScores {
    pub bleu: BleuReport,
    pub homographs: Option<DisambiguationReport>,
    pub sentences: usize,
}

/// Translate the sources of `pairs` and score them against their targets;
/// homograph accuracy is added when annotations aligned with `pairs` and
/// an evaluation list are given.
pub fn score_translations(
    model: &NmtModel,
    pairs: &[SentencePair],
    annotations: Option<&[HomographAnnotation]>,
    eval_list: Option<&EvalHomographList>,
    strategy: Strategy,
) -> Result<TranslationScores> {
    let sources: Vec<String> = pairs.iter().map(|p| p.source.join(" ")).collect();
    let hyps = model.translate(&sources, strategy)?;
    let refs: Vec<String> = pairs.iter().map(|p| p.target.join(" ")).collect();
    let homographs = match (annotations, eval_list) {
        (Some(a), Some(l)) => {
            if a.len() != pairs.len() {
                return Err(Error::Alignment {
                    left: pairs.len(),
                    right: a.len(),
                });
            }
            Some(homograph_prf(&hyps, a, l)?)
        }
        _ => None,
    };
    Ok(TranslationScores {
        bleu: bleu(&hyps, &refs)?,
        homographs,
        sentences: pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    pub pairs: usize,
    pub homographs: usize,
    pub steps: usize,
    pub nli_examples: usize,
    pub wdr_steps: usize,
    pub config: ModelConfig,
    pub schemes: Vec<FusionScheme>,
    pub seed: u64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            pairs: 5000,
            homographs: 4,
            steps: 2000,
            nli_examples: 300,
            wdr_steps: 300,
            config: ModelConfig::default(),
            schemes: vec![FusionScheme::Baseline, FusionScheme::Gate],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeResult {
    pub scheme: FusionScheme,
    pub train: TrainReport,
    pub scores: TranslationScores,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub pretrain: PretrainReport,
    pub results: Vec<SchemeResult>,
}

/// Generate the synthetic corpus, pre-train one encoder, then train and
/// score every scheme with identical seeds. 10% of the corpus is the test
/// set and a further 10% of the rest drives early stopping.
pub fn run_benchmark(
    opts: &BenchmarkOptions,
    mut on_epoch: impl FnMut(FusionScheme, &EpochMetrics),
) -> Result<BenchmarkReport> {
    let seed = opts.seed;
    let corpus = generate_synthetic_homograph_corpus(opts.pairs, opts.homographs, seed)?;
    let (rest, test_idx) = split_indices(corpus.pairs.len(), 0.1, seed);
    let (fit, held) = split_indices(rest.len(), 0.1, seed.wrapping_add(1));
    let pick = |idx: &[usize]| -> Vec<SentencePair> {
        idx.iter().map(|&i| corpus.pairs[i].clone()).collect()
    };
    let train = pick(&fit.iter().map(|&k| rest[k]).collect::<Vec<_>>());
    let heldout = pick(&held.iter().map(|&k| rest[k]).collect::<Vec<_>>());
    let test = pick(&test_idx);
    let train_ann: Vec<HomographAnnotation> = rest
        .iter()
        .map(|&i| corpus.annotations[i].clone())
        .collect();
    let test_ann: Vec<HomographAnnotation> = test_idx
        .iter()
        .map(|&i| corpus.annotations[i].clone())
        .collect();
    let nli = synthetic_nli(opts.nli_examples, opts.homographs, seed)?;

    let src = source_vocab(&train, Some(&corpus.wordnet), &nli);
    let tgt = target_vocab(&train);
    let (hdr, pretrain) = pretrain_hdr(
        &opts.config,
        src.clone(),
        &nli,
        &train_ann,
        &corpus.wordnet,
        &SrOptions {
            seed,
            ..Default::default()
        },
        &WdrOptions {
            seed,
            steps: opts.wdr_steps,
            ..Default::default()
        },
        seed,
    )?;

    let train_opts = TrainOptions {
        max_steps: Some(opts.steps),
        seed,
        bleu_sentences: 0,
        ..Default::default()
    };
    let mut results = Vec::new();
    for &scheme in &opts.schemes {
        let t = Instant::now();
        let cfg = ModelConfig {
            fusion_scheme: scheme,
            second_encoder_source: SecondEncoderSource::HdrPretrained,
            ..opts.config.clone()
        };
        let mut model = NmtModel::new(cfg, src.clone(), tgt.clone(), seed)?;
        if scheme.uses_second_encoder() {
            model.attach_hdr(&hdr.store, ENCODER_PREFIX)?;
        }
        let report = train_nmt(&mut model, &train, &heldout, &train_opts, |m| {
            on_epoch(scheme, m)
        })?;
        let scores = score_translations(
            &model,
            &test,
            Some(&test_ann),
            Some(&corpus.eval_list),
            Strategy::Greedy,
        )?;
        results.push(SchemeResult {
            scheme,
            train: report,
            scores,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    Ok(BenchmarkReport { pretrain, results })
}
