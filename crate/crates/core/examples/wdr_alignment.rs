//! Word-level pre-training on synset-paired homographs: paired distance
//! before and after, and how the homograph states cluster by sense.
//!
//! cargo run --release --example wdr_alignment [pairs] [steps] [seed] [lr]

use hdr_nmt::data::{generate_synthetic_homograph_corpus, prepare_disambiguation_set};
use hdr_nmt::pipeline::source_vocab;
use hdr_nmt::pretrain::{collapse_diagnostic, sense_separation, wdr_train, HdrModel, WdrOptions};
use hdr_nmt::transformer::ModelConfig;

fn main() -> hdr_nmt::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let n_pairs = args.first().copied().unwrap_or(50);
    let steps = args.get(1).copied().unwrap_or(200);
    let seed = args.get(2).copied().unwrap_or(5) as u64;
    let lr: f32 = std::env::args()
        .nth(4)
        .and_then(|a| a.parse().ok())
        .unwrap_or(1e-3);

    let corpus = generate_synthetic_homograph_corpus(200, 4, seed)?;
    let set = prepare_disambiguation_set(&corpus.annotations, &corpus.wordnet)?;
    let pairs: Vec<_> = set.pairs.into_iter().step_by(3).take(n_pairs).collect();
    let vocab = source_vocab(&corpus.pairs, Some(&corpus.wordnet), &[]);
    let cfg = ModelConfig {
        d_model: 32,
        d_ff: 64,
        ..Default::default()
    };
    let mut model = HdrModel::new(cfg, vocab, false, seed)?;

    let occurrences: Vec<(Vec<String>, usize, String)> = corpus.annotations[..40]
        .iter()
        .map(|a| {
            (
                a.sentence.clone(),
                a.marks[0].index,
                a.marks[0].synset_id.clone(),
            )
        })
        .collect();
    let sentences: Vec<Vec<String>> = occurrences.iter().map(|o| o.0.clone()).collect();
    let before = sense_separation(&model.encoder, &model.store, &model.vocab, &occurrences)?;

    let report = wdr_train(
        &mut model,
        &pairs,
        &WdrOptions {
            steps,
            seed,
            lr,
            ..Default::default()
        },
    )?;
    let after = sense_separation(&model.encoder, &model.store, &model.vocab, &occurrences)?;
    let collapse = collapse_diagnostic(&model.encoder, &model.store, &model.vocab, &sentences)?;

    println!("pairs {}  steps {}", pairs.len(), report.losses.len());
    println!(
        "paired distance {:.4} -> {:.4} ({:.1}% drop)",
        report.initial_distance,
        report.final_distance,
        100.0 * (1.0 - report.final_distance / report.initial_distance)
    );
    println!(
        "within-sense similarity {:.4} -> {:.4}",
        before.within, after.within
    );
    println!(
        "cross-sense similarity  {:.4} -> {:.4}",
        before.cross, after.cross
    );
    println!("mean similarity of unrelated tokens {collapse:.4}");
    Ok(())
}
