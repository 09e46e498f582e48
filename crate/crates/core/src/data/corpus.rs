//! Plain-text corpus loaders: parallel text and NLI triples.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, split on whitespace, and detach ASCII punctuation.
pub fn tokenize(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in line.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn nonempty_lines(path: &Path, text: &str) -> Result<Vec<Vec<String>>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let toks = tokenize(l);
            if toks.is_empty() {
                Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "empty line".into(),
                })
            } else {
                Ok(toks)
            }
        })
        .collect()
}

/// Two one-sentence-per-line files with matching line counts.
pub fn load_parallel(src_path: &Path, tgt_path: &Path) -> Result<Vec<SentencePair>> {
    let src_text = read_to_string(src_path)?;
    let tgt_text = read_to_string(tgt_path)?;
    let (ls, lt) = (src_text.lines().count(), tgt_text.lines().count());
    if ls != lt {
        return Err(Error::Alignment {
            left: ls,
            right: lt,
        });
    }
    let src = nonempty_lines(src_path, &src_text)?;
    let tgt = nonempty_lines(tgt_path, &tgt_text)?;
    Ok(src
        .into_iter()
        .zip(tgt)
        .map(|(source, target)| SentencePair { source, target })
        .collect())
}

/// One `source<TAB>target` pair per line.
pub fn load_parallel_tsv(path: &Path) -> Result<Vec<SentencePair>> {
    let text = read_to_string(path)?;
    parse_parallel_tsv(&path.display().to_string(), &text)
}

pub(crate) fn parse_parallel_tsv(name: &str, text: &str) -> Result<Vec<SentencePair>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let err = |msg: &str| Error::Parse {
                path: name.to_string(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let (s, t) = line
                .split_once('\t')
                .ok_or_else(|| err("expected source<TAB>target"))?;
            let (source, target) = (tokenize(s), tokenize(t));
            if source.is_empty() || target.is_empty() {
                return Err(err("empty side"));
            }
            Ok(SentencePair { source, target })
        })
        .collect()
}

pub fn write_parallel_tsv(path: &Path, pairs: &[SentencePair]) -> Result<()> {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&p.source.join(" "));
        s.push('\t');
        s.push_str(&p.target.join(" "));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [
        NliLabel::Entailment,
        NliLabel::Neutral,
        NliLabel::Contradiction,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

impl FromStr for NliLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "entailment" => Ok(NliLabel::Entailment),
            "neutral" => Ok(NliLabel::Neutral),
            "contradiction" => Ok(NliLabel::Contradiction),
            other => Err(format!("unknown NLI label {other:?}")),
        }
    }
}

/// A premise/hypothesis pair with its inference label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliExample {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: NliLabel,
}

/// `premise<TAB>hypothesis<TAB>label` lines.
pub fn load_nli(path: &Path) -> Result<Vec<NliExample>> {
    let text = read_to_string(path)?;
    parse_nli(&path.display().to_string(), &text)
}

pub(crate) fn parse_nli(name: &str, text: &str) -> Result<Vec<NliExample>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let err = |msg: String| Error::Parse {
                path: name.to_string(),
                line: i + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let label = fields[2].trim().parse::<NliLabel>().map_err(err)?;
            let (premise, hypothesis) = (tokenize(fields[0]), tokenize(fields[1]));
            if premise.is_empty() || hypothesis.is_empty() {
                return Err(err("empty sentence".into()));
            }
            Ok(NliExample {
                premise,
                hypothesis,
                label,
            })
        })
        .collect()
}

pub fn write_nli(path: &Path, examples: &[NliExample]) -> Result<()> {
    let mut s = String::new();
    for e in examples {
        s.push_str(&format!(
            "{}\t{}\t{}\n",
            e.premise.join(" "),
            e.hypothesis.join(" "),
            e.label.as_str()
        ));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
