//! Synset lexicon, homograph annotations, evaluation lists, and the
//! original/example pairing used for word-level pre-training.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::corpus::{read_to_string, tokenize};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synset {
    pub lemmas: Vec<String>,
    pub examples: Vec<Vec<String>>,
}

/// Synset id to lemmas and example sentences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MiniWordNet {
    synsets: BTreeMap<String, Synset>,
}

#[derive(Serialize, Deserialize)]
struct SynsetRecord {
    synset_id: String,
    lemmas: Vec<String>,
    examples: Vec<String>,
}

impl MiniWordNet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a synset. Lemmas are lowercased; a repeated id is an error.
    pub fn insert(
        &mut self,
        id: impl Into<String>,
        lemmas: Vec<String>,
        examples: Vec<Vec<String>>,
    ) -> Result<()> {
        let id = id.into();
        if self.synsets.contains_key(&id) {
            return Err(Error::Data(format!("duplicate synset id {id:?}")));
        }
        let lemmas = lemmas.into_iter().map(|l| l.to_lowercase()).collect();
        self.synsets.insert(id, Synset { lemmas, examples });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Synset> {
        self.synsets.get(id)
    }

    pub fn len(&self) -> usize {
        self.synsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Synset)> {
        self.synsets.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records: Vec<SynsetRecord> = read_jsonl(path)?;
        let mut wn = MiniWordNet::new();
        for (line, r) in records.into_iter().enumerate() {
            let examples = r.examples.iter().map(|s| tokenize(s)).collect();
            wn.insert(r.synset_id, r.lemmas, examples)
                .map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: line + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(wn)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<SynsetRecord> = self
            .synsets
            .iter()
            .map(|(id, s)| SynsetRecord {
                synset_id: id.clone(),
                lemmas: s.lemmas.clone(),
                examples: s.examples.iter().map(|e| e.join(" ")).collect(),
            })
            .collect();
        write_jsonl(path, &records)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mark {
    pub index: usize,
    pub synset_id: String,
}

/// A sentence with its homograph occurrences labelled by synset id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomographAnnotation {
    pub sentence: Vec<String>,
    pub marks: Vec<Mark>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    sentence: String,
    marks: Vec<Mark>,
}

impl HomographAnnotation {
    pub fn new(sentence: Vec<String>, marks: Vec<Mark>) -> Result<Self> {
        let a = HomographAnnotation { sentence, marks };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.marks {
            if m.index >= self.sentence.len() {
                return Err(Error::Data(format!(
                    "mark index {} out of range for sentence of {} tokens",
                    m.index,
                    self.sentence.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<HomographAnnotation>> {
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(line, r)| {
            HomographAnnotation::new(tokenize(&r.sentence), r.marks).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: line + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn save_annotations(path: &Path, annotations: &[HomographAnnotation]) -> Result<()> {
    let records: Vec<AnnotationRecord> = annotations
        .iter()
        .map(|a| AnnotationRecord {
            sentence: a.sentence.join(" "),
            marks: a.marks.clone(),
        })
        .collect();
    write_jsonl(path, &records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sense {
    pub synset_id: String,
    pub targets: Vec<String>,
}

/// Homograph lemma to its senses and their acceptable target lexemes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalHomographList {
    entries: BTreeMap<String, Vec<Sense>>,
}

#[derive(Serialize, Deserialize)]
struct EvalRecord {
    homograph: String,
    senses: Vec<Sense>,
}

impl EvalHomographList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, homograph: impl Into<String>, senses: Vec<Sense>) -> Result<()> {
        let homograph = homograph.into().to_lowercase();
        if senses.len() < 2 {
            return Err(Error::Data(format!(
                "homograph {homograph:?} needs at least 2 senses"
            )));
        }
        if let Some(s) = senses.iter().find(|s| s.targets.is_empty()) {
            return Err(Error::Data(format!(
                "sense {:?} has no target lexemes",
                s.synset_id
            )));
        }
        if self.entries.insert(homograph.clone(), senses).is_some() {
            return Err(Error::Data(format!("duplicate homograph {homograph:?}")));
        }
        Ok(())
    }

    pub fn senses(&self, homograph: &str) -> Option<&[Sense]> {
        self.entries
            .get(&homograph.to_lowercase())
            .map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Sense])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records: Vec<EvalRecord> = read_jsonl(path)?;
        let mut list = EvalHomographList::new();
        for (line, r) in records.into_iter().enumerate() {
            list.insert(r.homograph, r.senses)
                .map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: line + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(list)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<EvalRecord> = self
            .entries
            .iter()
            .map(|(h, s)| EvalRecord {
                homograph: h.clone(),
                senses: s.clone(),
            })
            .collect();
        write_jsonl(path, &records)
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// First position whose lowercase token equals one of `lemmas`.
pub fn locate_homograph_index<S: AsRef<str>>(example: &[String], lemmas: &[S]) -> Option<usize> {
    example.iter().position(|t| {
        let t = t.to_lowercase();
        lemmas.iter().any(|l| l.as_ref().to_lowercase() == t)
    })
}

/// One original/example pair sharing a synset, with homograph positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynsetPair {
    pub original: Vec<String>,
    pub example: Vec<String>,
    pub i: usize,
    pub j: usize,
    pub synset_id: String,
    pub sentence_id: usize,
    pub example_id: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DisambiguationSet {
    pub pairs: Vec<SynsetPair>,
    /// Examples in which no lemma of the synset could be found.
    pub skipped: usize,
    /// Marks whose synset has no examples.
    pub empty_synsets: usize,
}

/// Pair every annotated occurrence with every example of its synset.
pub fn prepare_disambiguation_set(
    annotations: &[HomographAnnotation],
    wn: &MiniWordNet,
) -> Result<DisambiguationSet> {
    let mut out = DisambiguationSet::default();
    for (u, ann) in annotations.iter().enumerate() {
        ann.validate()?;
        for mark in &ann.marks {
            let synset = wn
                .get(&mark.synset_id)
                .ok_or_else(|| Error::Lexicon(mark.synset_id.clone()))?;
            if synset.examples.is_empty() {
                out.empty_synsets += 1;
            }
            for (v, example) in synset.examples.iter().enumerate() {
                match locate_homograph_index(example, &synset.lemmas) {
                    Some(j) => out.pairs.push(SynsetPair {
                        original: ann.sentence.clone(),
                        example: example.clone(),
                        i: mark.index,
                        j,
                        synset_id: mark.synset_id.clone(),
                        sentence_id: u,
                        example_id: v,
                    }),
                    None => out.skipped += 1,
                }
            }
        }
    }
    Ok(out)
}
