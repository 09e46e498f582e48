//! Corpus ingestion, vocabularies, lexicon pairing, and synthetic data.

pub mod batch;
pub mod corpus;
pub mod lexicon;
pub mod synth;
pub mod vocab;

pub use batch::batch_by_tokens;
pub use corpus::{
    load_nli, load_parallel, load_parallel_tsv, tokenize, write_nli, write_parallel_tsv,
    NliExample, NliLabel, SentencePair,
};
pub use lexicon::{
    load_annotations, locate_homograph_index, prepare_disambiguation_set, save_annotations,
    DisambiguationSet, EvalHomographList, HomographAnnotation, Mark, MiniWordNet, Sense, Synset,
    SynsetPair,
};
pub use synth::{
    cue_word, generate_synthetic_homograph_corpus, generate_with, homograph_word, sense_lexeme,
    synthetic_nli, SyntheticConfig, SyntheticCorpus,
};
pub use vocab::{Vocab, BOS, EOS, PAD, UNK};

/// Frequency-ranked vocabulary over tokenized sentences.
pub fn build_vocab<'a, I>(sentences: I, min_count: usize, max_size: Option<usize>) -> Vocab
where
    I: IntoIterator<Item = &'a Vec<String>>,
{
    Vocab::build(sentences, min_count, max_size)
}
