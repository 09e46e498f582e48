//! Similarity heatmap and 2-D projection of one homograph's encoder
//! states, before and after word-level pre-training.
//!
//! cargo run --release --example homograph_heatmap -- [steps] [seed]

use hdr_nmt::data::{
    generate_synthetic_homograph_corpus, homograph_word, prepare_disambiguation_set,
};
use hdr_nmt::eval::{export_token_vectors, similarity_heatmap};
use hdr_nmt::pipeline::source_vocab;
use hdr_nmt::pretrain::{wdr_train, HdrModel, WdrOptions};
use hdr_nmt::transformer::ModelConfig;

fn show(
    model: &HdrModel,
    sentences: &[Vec<String>],
    senses: &[Option<String>],
    lemma: &str,
) -> hdr_nmt::Result<()> {
    let heat = similarity_heatmap(&model.encoder, &model.store, &model.vocab, sentences, lemma)?;
    for (row, label) in heat.matrix.iter().zip(senses) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.3}")).collect();
        println!(
            "  {:<6} {}",
            label.as_deref().unwrap_or("?"),
            cells.join(" ")
        );
    }
    let vectors = export_token_vectors(
        &model.encoder,
        &model.store,
        &model.vocab,
        sentences,
        Some(senses),
        lemma,
        true,
    )?;
    for (r, p) in vectors
        .records
        .iter()
        .zip(vectors.projection.unwrap_or_default())
    {
        println!(
            "  {:<6} ({:7.3}, {:7.3})",
            r.synset_id.as_deref().unwrap_or("?"),
            p[0],
            p[1]
        );
    }
    Ok(())
}

fn main() -> hdr_nmt::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let steps = args.first().copied().unwrap_or(200) as usize;
    let seed = args.get(1).copied().unwrap_or(3);

    let corpus = generate_synthetic_homograph_corpus(200, 2, seed)?;
    let lemma = homograph_word(0);
    let (sentences, senses): (Vec<_>, Vec<_>) = corpus
        .annotations
        .iter()
        .filter_map(|a| {
            a.marks
                .iter()
                .find(|m| a.sentence[m.index] == lemma)
                .map(|m| (a.sentence.clone(), Some(m.synset_id.clone())))
        })
        .take(6)
        .unzip();

    let vocab = source_vocab(&corpus.pairs, Some(&corpus.wordnet), &[]);
    let cfg = ModelConfig {
        d_model: 32,
        d_ff: 64,
        ..Default::default()
    };
    let mut model = HdrModel::new(cfg, vocab, false, seed)?;
    println!("random encoder:");
    show(&model, &sentences, &senses, &lemma)?;

    let set = prepare_disambiguation_set(&corpus.annotations, &corpus.wordnet)?;
    let r = wdr_train(
        &mut model,
        &set.pairs,
        &WdrOptions {
            steps,
            seed,
            ..Default::default()
        },
    )?;
    println!(
        "after {steps} steps (paired distance {:.4} -> {:.4}):",
        r.initial_distance, r.final_distance
    );
    show(&model, &sentences, &senses, &lemma)?;
    Ok(())
}
