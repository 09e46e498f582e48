//! Build word-level training pairs from annotated sentences and a small
//! lexicon: every marked occurrence meets every example of its synset.
//!
//! cargo run --example synset_pairs

use hdr_nmt::data::{prepare_disambiguation_set, HomographAnnotation, Mark, MiniWordNet};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> hdr_nmt::Result<()> {
    let mut wn = MiniWordNet::new();
    wn.insert(
        "bank.n.01",
        vec!["bank".into()],
        vec![
            words("they pulled the canoe up on the bank"),
            words("he sat on the bank of the river"),
        ],
    )?;
    wn.insert(
        "depository_financial_institution.n.01",
        vec!["bank".into(), "depository_financial_institution".into()],
        vec![
            words("he cashed a check at the bank"),
            words("that bank holds the mortgage"),
        ],
    )?;
    wn.insert("bank.v.07", vec!["bank".into()], Vec::new())?;

    let annotations = vec![
        HomographAnnotation::new(
            words("fishing from the Bank of the stream"),
            vec![Mark {
                index: 3,
                synset_id: "bank.n.01".into(),
            }],
        )?,
        HomographAnnotation::new(
            words("the bank raised its rates and we bank elsewhere"),
            vec![
                Mark {
                    index: 1,
                    synset_id: "depository_financial_institution.n.01".into(),
                },
                Mark {
                    index: 6,
                    synset_id: "bank.v.07".into(),
                },
            ],
        )?,
    ];

    let set = prepare_disambiguation_set(&annotations, &wn)?;
    for p in &set.pairs {
        println!(
            "{:<40} [{}] {:<12}<->  [{}] {}",
            p.synset_id,
            p.i,
            p.original[p.i],
            p.j,
            p.example.join(" ")
        );
    }
    println!(
        "{} pairs, {} examples without the lemma, {} marks with no examples",
        set.pairs.len(),
        set.skipped,
        set.empty_synsets
    );
    Ok(())
}
