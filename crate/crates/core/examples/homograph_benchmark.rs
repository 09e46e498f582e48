//! Baseline against gate fusion on the synthetic homograph corpus.
//!
//! cargo run --release --example homograph_benchmark -- [pairs] [steps] [seed]

use hdr_nmt::pipeline::{run_benchmark, BenchmarkOptions};

fn main() -> hdr_nmt::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let opts = BenchmarkOptions {
        pairs: args.first().copied().unwrap_or(5000) as usize,
        steps: args.get(1).copied().unwrap_or(2000) as usize,
        seed: args.get(2).copied().unwrap_or(7),
        ..Default::default()
    };
    let report = run_benchmark(&opts, |scheme, m| {
        eprintln!(
            "  {scheme} epoch {} step {} held-out loss {:.4}",
            m.epoch, m.step, m.heldout_loss
        )
    })?;
    let p = &report.pretrain;
    println!(
        "pre-training: sentence accuracy {:?}, paired distance {:?} over {} pairs",
        p.sr.as_ref().map(|r| r.best_heldout_accuracy),
        p.wdr
            .as_ref()
            .map(|r| (r.initial_distance, r.final_distance)),
        p.pairs
    );
    for r in &report.results {
        let h = r.scores.homographs.as_ref().expect("annotations given");
        println!(
            "{:<9} steps {:>5}  BLEU {:6.2}  sense recall {:.4}  precision {:.4}  ({:.0}s)",
            r.scheme.to_string(),
            r.train.steps,
            r.scores.bleu.score,
            h.recall,
            h.precision,
            r.seconds
        );
    }
    Ok(())
}
