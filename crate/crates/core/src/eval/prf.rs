//! Homograph translation accuracy: for every annotated occurrence, does the
//! hypothesis contain a target lexeme of the gold sense, of another sense of
//! the same homograph, or neither?

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{EvalHomographList, HomographAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SenseCounts {
    pub correct: usize,
    pub wrong_sense: usize,
    pub missed: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl SenseCounts {
    pub fn scored(&self) -> usize {
        self.correct + self.wrong_sense + self.missed
    }

    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.correct + self.wrong_sense)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.scored())
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, o: &SenseCounts) {
        self.correct += o.correct;
        self.wrong_sense += o.wrong_sense;
        self.missed += o.missed;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DisambiguationReport {
    pub per_homograph: BTreeMap<String, SenseCounts>,
    pub total: SenseCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences whose homograph or gold sense is not in the list.
    pub skipped: usize,
}

impl DisambiguationReport {
    fn from_counts(per_homograph: BTreeMap<String, SenseCounts>, skipped: usize) -> Self {
        let mut total = SenseCounts::default();
        for c in per_homograph.values() {
            total.add(c);
        }
        DisambiguationReport {
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            per_homograph,
            total,
            skipped,
        }
    }
}

fn unsegmented(c: char) -> bool {
    matches!(c as u32,
        0x0E00..=0x0E7F | 0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF)
}

/// Token-sequence match for space-delimited lexemes, raw substring match
/// for scripts written without spaces.
pub fn contains_lexeme(hypothesis: &str, lexeme: &str) -> bool {
    let lexeme = lexeme.trim();
    if lexeme.is_empty() {
        return false;
    }
    if lexeme.chars().any(unsegmented) {
        return hypothesis.contains(lexeme);
    }
    let hyp = format!(
        " {} ",
        hypothesis.split_whitespace().collect::<Vec<_>>().join(" ")
    );
    let lex = format!(
        " {} ",
        lexeme.split_whitespace().collect::<Vec<_>>().join(" ")
    );
    hyp.contains(&lex)
}

/// Score every annotated occurrence. `annotations[k]` is the source of
/// `hypotheses[k]`.
pub fn homograph_prf<S: AsRef<str>>(
    hypotheses: &[S],
    annotations: &[HomographAnnotation],
    eval_list: &EvalHomographList,
) -> Result<DisambiguationReport> {
    if hypotheses.len() != annotations.len() {
        return Err(Error::Alignment {
            left: annotations.len(),
            right: hypotheses.len(),
        });
    }
    let mut per: BTreeMap<String, SenseCounts> = BTreeMap::new();
    let mut skipped = 0;
    for (hyp, ann) in hypotheses.iter().zip(annotations) {
        ann.validate()?;
        let hyp = hyp.as_ref();
        for mark in &ann.marks {
            let lemma = ann.sentence[mark.index].to_lowercase();
            let Some(senses) = eval_list.senses(&lemma) else {
                skipped += 1;
                continue;
            };
            let Some(gold) = senses.iter().find(|s| s.synset_id == mark.synset_id) else {
                skipped += 1;
                continue;
            };
            let c = per.entry(lemma).or_default();
            if gold.targets.iter().any(|t| contains_lexeme(hyp, t)) {
                c.correct += 1;
            } else if senses
                .iter()
                .filter(|s| s.synset_id != gold.synset_id)
                .any(|s| s.targets.iter().any(|t| contains_lexeme(hyp, t)))
            {
                c.wrong_sense += 1;
            } else {
                c.missed += 1;
            }
        }
    }
    Ok(DisambiguationReport::from_counts(per, skipped))
}
