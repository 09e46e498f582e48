//! Corpus BLEU and homograph precision / recall / F1 on a few
//! hand-written translations.
//!
//! cargo run --example bleu_and_sense_accuracy

use hdr_nmt::data::{EvalHomographList, HomographAnnotation, Mark, Sense};
use hdr_nmt::eval::{bleu, homograph_prf};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> hdr_nmt::Result<()> {
    let refs = [
        "the boat drifted toward the shore of the river .",
        "she opened an account at the lender on main street .",
        "the river shore was muddy after the storm .",
    ];
    let hyps = [
        "the boat drifted to the shore of the river .",
        "she opened an account at the shore on main street .",
        "after the storm the shore was muddy .",
    ];
    let r = bleu(&hyps, &refs)?;
    println!(
        "BLEU {:.2}  precisions {:.1}/{:.1}/{:.1}/{:.1}  BP {:.3}  ({} / {} tokens)",
        r.score,
        r.precisions[0],
        r.precisions[1],
        r.precisions[2],
        r.precisions[3],
        r.brevity_penalty,
        r.sys_len,
        r.ref_len
    );
    println!("identical corpus: {:.2}", bleu(&refs, &refs)?.score);

    let mut list = EvalHomographList::new();
    list.insert(
        "bank",
        vec![
            Sense {
                synset_id: "bank.n.01".into(),
                targets: vec!["shore".into()],
            },
            Sense {
                synset_id: "bank.n.02".into(),
                targets: vec!["lender".into()],
            },
        ],
    )?;
    let sources = [
        (
            "the boat drifted toward the bank of the river .",
            5,
            "bank.n.01",
        ),
        (
            "she opened an account at the bank on main street .",
            6,
            "bank.n.02",
        ),
        ("the river bank was muddy after the storm .", 2, "bank.n.01"),
    ];
    let annotations = sources
        .iter()
        .map(|(s, i, id)| {
            HomographAnnotation::new(
                words(s),
                vec![Mark {
                    index: *i,
                    synset_id: id.to_string(),
                }],
            )
        })
        .collect::<hdr_nmt::Result<Vec<_>>>()?;
    let report = homograph_prf(&hyps, &annotations, &list)?;
    println!(
        "sense precision {:.3}  recall {:.3}  F1 {:.3}",
        report.precision, report.recall, report.f1
    );
    for (lemma, c) in &report.per_homograph {
        println!(
            "  {lemma}: {} correct, {} wrong sense, {} missed",
            c.correct, c.wrong_sense, c.missed
        );
    }
    Ok(())
}
