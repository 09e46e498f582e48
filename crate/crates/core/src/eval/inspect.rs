//! Homograph token states: pairwise similarity matrices and exported vectors
//! with an optional principal-component projection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::backbone::{cosine_similarity, ParamStore};
use crate::data::{locate_homograph_index, Vocab};
use crate::error::{Error, Result};
use crate::transformer::Encoder;

/// State of the first occurrence of `lemma` in each sentence.
pub fn homograph_states(
    encoder: &Encoder,
    ps: &ParamStore,
    vocab: &Vocab,
    sentences: &[Vec<String>],
    lemma: &str,
) -> Result<Vec<Vec<f32>>> {
    let mut positions = Vec::with_capacity(sentences.len());
    for (k, s) in sentences.iter().enumerate() {
        let j = locate_homograph_index(s, &[lemma]).ok_or_else(|| Error::AbsentLemma {
            lemma: lemma.to_string(),
            sentence: k,
        })?;
        positions.push(j);
    }
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s)).collect();
    let outs = encoder.encode_many(ps, &ids)?;
    Ok(outs
        .iter()
        .zip(positions)
        .map(|(o, j)| o.states.row(j).to_vec())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f32>>,
}

impl Heatmap {
    pub fn from_vectors(labels: Vec<String>, vectors: &[Vec<f32>]) -> Result<Self> {
        let n = vectors.len();
        let mut matrix = vec![vec![0.0; n]; n];
        for a in 0..n {
            matrix[a][a] = 1.0;
            for b in a + 1..n {
                let s = cosine_similarity(&vectors[a], &vectors[b])?;
                matrix[a][b] = s;
                matrix[b][a] = s;
            }
        }
        Ok(Heatmap { labels, matrix })
    }

    /// Header row of labels, then one row per sentence.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            s.push('\t');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.matrix) {
            s.push_str(l);
            for v in row {
                let _ = write!(s, "\t{v:.6}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Cosine similarity between the homograph states of every sentence pair.
pub fn similarity_heatmap(
    encoder: &Encoder,
    ps: &ParamStore,
    vocab: &Vocab,
    sentences: &[Vec<String>],
    lemma: &str,
) -> Result<Heatmap> {
    let vectors = homograph_states(encoder, ps, vocab, sentences, lemma)?;
    let labels = sentences
        .iter()
        .enumerate()
        .map(|(k, s)| format!("{k}:{}", s.join(" ")))
        .collect();
    Heatmap::from_vectors(labels, &vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenVector {
    pub sentence_id: usize,
    pub synset_id: Option<String>,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenVectors {
    pub records: Vec<TokenVector>,
    /// Top-2 principal-component coordinates, one per record.
    pub projection: Option<Vec<[f32; 2]>>,
}

/// Export homograph states; `synsets[k]`, when given, labels sentence `k`.
pub fn export_token_vectors(
    encoder: &Encoder,
    ps: &ParamStore,
    vocab: &Vocab,
    sentences: &[Vec<String>],
    synsets: Option<&[Option<String>]>,
    lemma: &str,
    project: bool,
) -> Result<TokenVectors> {
    if let Some(s) = synsets {
        if s.len() != sentences.len() {
            return Err(Error::Alignment {
                left: sentences.len(),
                right: s.len(),
            });
        }
    }
    let vectors = homograph_states(encoder, ps, vocab, sentences, lemma)?;
    let projection = if project {
        Some(pca_2d(&vectors))
    } else {
        None
    };
    let records = vectors
        .into_iter()
        .enumerate()
        .map(|(k, vector)| TokenVector {
            sentence_id: k,
            synset_id: synsets.and_then(|s| s[k].clone()),
            vector,
        })
        .collect();
    Ok(TokenVectors {
        records,
        projection,
    })
}

/// Coordinates of the centered vectors on the two leading principal axes.
/// Each axis is signed so its largest-magnitude component is positive.
pub fn pca_2d(vectors: &[Vec<f32>]) -> Vec<[f32; 2]> {
    let n = vectors.len();
    if n == 0 {
        return Vec::new();
    }
    let d = vectors[0].len();
    let mut x = DMatrix::<f64>::from_fn(n, d, |i, j| vectors[i][j] as f64);
    for j in 0..d {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|c| c * sign).collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut p = [0.0f32; 2];
            for (slot, axis) in p.iter_mut().zip(&axes) {
                *slot = x.row(i).iter().zip(axis).map(|(a, b)| a * b).sum::<f64>() as f32;
            }
            p
        })
        .collect()
}
