//! Train a small gate-fusion model, save it, reload it and translate
//! sentences whose homograph sense depends on a cue word.
//!
//! cargo run --release --example translate_checkpoint -- [pairs] [steps] [seed]

use hdr_nmt::checkpoint::{load_nmt, save_nmt};
use hdr_nmt::data::generate_synthetic_homograph_corpus;
use hdr_nmt::nmt::{train_nmt, NmtModel, TrainOptions};
use hdr_nmt::pipeline::{source_vocab, target_vocab};
use hdr_nmt::transformer::{FusionScheme, ModelConfig, SecondEncoderSource, Strategy};

fn main() -> hdr_nmt::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let n = args.first().copied().unwrap_or(1500) as usize;
    let steps = args.get(1).copied().unwrap_or(1500) as usize;
    let seed = args.get(2).copied().unwrap_or(2);

    let corpus = generate_synthetic_homograph_corpus(n, 2, seed)?;
    let split = n * 9 / 10;
    let (train, held) = corpus.pairs.split_at(split);
    let cfg = ModelConfig {
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        fusion_scheme: FusionScheme::Gate,
        second_encoder_source: SecondEncoderSource::NmtCopy,
        ..Default::default()
    };
    let mut model = NmtModel::new(
        cfg,
        source_vocab(&corpus.pairs, None, &[]),
        target_vocab(&corpus.pairs),
        seed,
    )?;
    let report = train_nmt(
        &mut model,
        train,
        held,
        &TrainOptions {
            max_steps: Some(steps),
            warmup_steps: 100,
            max_tokens: 400,
            bleu_sentences: 50,
            seed,
            ..Default::default()
        },
        |m| {
            println!(
                "epoch {:>2} step {:>4} held-out loss {:.4} BLEU {:.2}",
                m.epoch,
                m.step,
                m.heldout_loss,
                m.heldout_bleu.unwrap_or(0.0)
            )
        },
    )?;
    println!("{} steps, {} parameters", report.steps, model.param_count());

    let path = std::env::temp_dir().join(format!("hdr_nmt_example_{seed}.ckpt"));
    save_nmt(&model, seed, &path)?;
    let loaded = load_nmt(&path)?;
    std::fs::remove_file(&path).ok();

    let sources: Vec<String> = held.iter().take(4).map(|p| p.source.join(" ")).collect();
    let greedy = loaded.translate(&sources, Strategy::Greedy)?;
    let beam = loaded.translate(&sources, Strategy::Beam(4))?;
    for ((s, g), b) in sources.iter().zip(&greedy).zip(&beam) {
        println!("{s}\n  greedy: {g}\n  beam 4: {b}");
    }
    Ok(())
}
