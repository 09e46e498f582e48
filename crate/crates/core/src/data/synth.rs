//! Synthetic homograph corpus: every source sentence opens with a cue word
//! that selects the sense of a later homograph, and the target renders the
//! homograph as the lexeme of that sense.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{NliExample, NliLabel, SentencePair};
use super::lexicon::{EvalHomographList, HomographAnnotation, Mark, MiniWordNet, Sense};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub n_pairs: usize,
    pub n_homographs: usize,
    pub n_fillers: usize,
    pub examples_per_synset: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(n_pairs: usize, n_homographs: usize, seed: u64) -> Self {
        SyntheticConfig {
            n_pairs,
            n_homographs,
            n_fillers: 40,
            examples_per_synset: 3,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub pairs: Vec<SentencePair>,
    pub annotations: Vec<HomographAnnotation>,
    pub eval_list: EvalHomographList,
    pub wordnet: MiniWordNet,
}

pub fn homograph_word(k: usize) -> String {
    format!("hom{k}")
}

pub fn cue_word(k: usize, sense: usize) -> String {
    format!("cue{k}{}", sense_letter(sense))
}

pub fn sense_lexeme(k: usize, sense: usize) -> String {
    format!("sense{k}{}", sense_letter(sense))
}

pub fn synset_id(k: usize, sense: usize) -> String {
    format!("hom{k}.n.0{}", sense + 1)
}

fn sense_letter(sense: usize) -> char {
    (b'a' + sense as u8) as char
}

struct Sentence {
    source: Vec<String>,
    target: Vec<String>,
    hom_index: usize,
}

fn sentence(
    rng: &mut ChaCha8Rng,
    k: usize,
    sense: usize,
    n_fillers: usize,
    min_tail: usize,
) -> Sentence {
    let mut source = vec![cue_word(k, sense)];
    let mut target = Vec::new();
    let filler = |rng: &mut ChaCha8Rng, source: &mut Vec<String>, target: &mut Vec<String>| {
        let f = rng.random_range(0..n_fillers);
        source.push(format!("w{f}"));
        target.push(format!("v{f}"));
    };
    for _ in 0..rng.random_range(1..=4) {
        filler(rng, &mut source, &mut target);
    }
    let hom_index = source.len();
    source.push(homograph_word(k));
    target.push(sense_lexeme(k, sense));
    for _ in 0..rng.random_range(min_tail..=3) {
        filler(rng, &mut source, &mut target);
    }
    Sentence {
        source,
        target,
        hom_index,
    }
}

/// Generate with 40 filler words and 3 lexicon examples per synset.
pub fn generate_synthetic_homograph_corpus(
    n_pairs: usize,
    n_homographs: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    generate_with(&SyntheticConfig::new(n_pairs, n_homographs, seed))
}

pub fn generate_with(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.n_homographs == 0 || cfg.n_homographs > 26 {
        return Err(Error::Config(format!(
            "n_homographs must be in 1..=26, got {}",
            cfg.n_homographs
        )));
    }
    if cfg.n_fillers == 0 {
        return Err(Error::Config("n_fillers must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut wordnet = MiniWordNet::new();
    let mut eval_list = EvalHomographList::new();
    for k in 0..cfg.n_homographs {
        let mut senses = Vec::new();
        for sense in 0..2 {
            let examples = (0..cfg.examples_per_synset)
                .map(|_| sentence(&mut rng, k, sense, cfg.n_fillers, 0).source)
                .collect();
            wordnet.insert(synset_id(k, sense), vec![homograph_word(k)], examples)?;
            senses.push(Sense {
                synset_id: synset_id(k, sense),
                targets: vec![sense_lexeme(k, sense)],
            });
        }
        eval_list.insert(homograph_word(k), senses)?;
    }

    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    let mut annotations = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let k = rng.random_range(0..cfg.n_homographs);
        let sense = rng.random_range(0..2);
        let s = sentence(&mut rng, k, sense, cfg.n_fillers, 0);
        annotations.push(HomographAnnotation::new(
            s.source.clone(),
            vec![Mark {
                index: s.hom_index,
                synset_id: synset_id(k, sense),
            }],
        )?);
        pairs.push(SentencePair {
            source: s.source,
            target: s.target,
        });
    }
    Ok(SyntheticCorpus {
        pairs,
        annotations,
        eval_list,
        wordnet,
    })
}

/// Balanced three-way inference set over the synthetic vocabulary.
/// Entailment drops the final filler of the premise, contradiction flips
/// the cue to the other sense, and neutral pairs the premise with an
/// unrelated sentence about a different homograph when one exists.
pub fn synthetic_nli(n: usize, n_homographs: usize, seed: u64) -> Result<Vec<NliExample>> {
    if n_homographs == 0 {
        return Err(Error::Config("n_homographs must be positive".into()));
    }
    let n_fillers = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let label = NliLabel::ALL[idx % 3];
        let k = rng.random_range(0..n_homographs);
        let sense = rng.random_range(0..2);
        let premise = sentence(&mut rng, k, sense, n_fillers, 1).source;
        let hypothesis = match label {
            NliLabel::Entailment => premise[..premise.len() - 1].to_vec(),
            NliLabel::Contradiction => {
                let mut h = premise.clone();
                h[0] = cue_word(k, 1 - sense);
                h
            }
            NliLabel::Neutral => {
                let other = if n_homographs > 1 {
                    (k + rng.random_range(1..n_homographs)) % n_homographs
                } else {
                    k
                };
                let other_sense = rng.random_range(0..2);
                sentence(&mut rng, other, other_sense, n_fillers, 0).source
            }
        };
        out.push(NliExample {
            premise,
            hypothesis,
            label,
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}
