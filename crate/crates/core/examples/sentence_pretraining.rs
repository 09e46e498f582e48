//! Sentence-level pre-training on the synthetic inference set.
//!
//! cargo run --release --example sentence_pretraining -- [examples] [epochs] [seed]

use hdr_nmt::data::synthetic_nli;
use hdr_nmt::pipeline::source_vocab;
use hdr_nmt::pretrain::{sr_train, HdrModel, SrOptions};
use hdr_nmt::transformer::ModelConfig;

fn main() -> hdr_nmt::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let n = args.first().copied().unwrap_or(300) as usize;
    let epochs = args.get(1).copied().unwrap_or(20) as usize;
    let seed = args.get(2).copied().unwrap_or(11);

    let nli = synthetic_nli(n, 4, seed)?;
    for ex in nli.iter().take(3) {
        println!(
            "{:<13} {} | {}",
            ex.label.as_str(),
            ex.premise.join(" "),
            ex.hypothesis.join(" ")
        );
    }
    let vocab = source_vocab(&[], None, &nli);
    let cfg = ModelConfig {
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        ..Default::default()
    };
    let mut model = HdrModel::new(cfg, vocab, false, seed)?;
    let report = sr_train(
        &mut model,
        &nli,
        &SrOptions {
            epochs,
            seed,
            ..Default::default()
        },
        |e| {
            println!(
                "epoch {:>2}  train {:.4}  held-out {:.4}  accuracy {:.3}",
                e.epoch, e.train_loss, e.heldout_loss, e.heldout_accuracy
            )
        },
    )?;
    println!(
        "best epoch {} with accuracy {:.3} on {} held-out examples",
        report.best_epoch, report.best_heldout_accuracy, report.heldout_size
    );
    Ok(())
}
