use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id mapping with four reserved ids (pad, unk, bos, eos).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, ids }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Count tokens, keep those seen at least `min_count` times, rank by
    /// frequency (ties lexicographic) and truncate to `max_size` entries
    /// beyond the reserved ones.
    pub fn build<'a, I, S>(sentences: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s.as_ref() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && !RESERVED.contains(&t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(m) = max_size {
            ranked.truncate(m);
        }
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect::<Vec<_>>();
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], |s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Map ids back to tokens, dropping pad/bos/eos.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD && i != BOS && i != EOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::tokenize;

    #[test]
    fn counts_and_min_count() {
        let corpus = vec![tokenize("a a b")];
        let v = Vocab::build(&corpus, 1, None);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);

        let v2 = Vocab::build(&corpus, 2, None);
        assert_eq!(v2.len(), 5);
        assert!(!v2.contains("b"));
        assert_eq!(v2.id("b"), UNK);
    }

    #[test]
    fn ties_are_lexicographic() {
        let corpus = vec![tokenize("z y x x")];
        let v = Vocab::build(&corpus, 1, None);
        assert_eq!(&v.tokens()[4..], &["x", "y", "z"]);
        let v = Vocab::build(&corpus, 1, Some(2));
        assert_eq!(&v.tokens()[4..], &["x", "y"]);
    }

    #[test]
    fn roundtrip() {
        let corpus = vec![tokenize("the cat sat on the mat")];
        let v = Vocab::build(&corpus, 1, None);
        let ids = v.encode(&corpus[0]);
        assert_eq!(v.decode(&ids), corpus[0]);
        for i in 0..v.len() {
            assert_eq!(v.id(v.token(i)), i);
        }
    }
}
